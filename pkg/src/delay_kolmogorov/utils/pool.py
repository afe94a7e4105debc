"""
レプリケート番号のリストを分割してスレッドで実行する
"""

from __future__ import annotations

import concurrent.futures
import logging
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

MAX_CHUNK = 64


def split_ids(ids: Sequence[int], parts: int, max_chunk: int = MAX_CHUNK) -> List[List[int]]:
    """ids を連続した塊に分ける（各塊は max_chunk 以下，塊の数は parts 以上）"""
    ids = list(ids)
    if not ids:
        return []
    parts = max(1, parts, -(-len(ids) // max_chunk))
    size = -(-len(ids) // parts)
    return [ids[i : i + size] for i in range(0, len(ids), size)]


def run_chunked(fn: Callable[[List[int]], List[T]], ids: Sequence[int], threads: int = 1) -> List[T]:
    """fn を塊ごとに実行し，結果を ids の順に連結して返す

    Args:
        fn: レプリケート番号のリストを受け取り，同じ長さの結果リストを返す関数
        ids: レプリケート番号
        threads: 最大スレッド数（1なら逐次実行）
    """
    chunks = split_ids(ids, threads)
    if threads <= 1 or len(chunks) <= 1:
        results: List[T] = []
        for chunk in chunks:
            results.extend(fn(chunk))
        return results

    logger.debug(f"{len(ids)} レプリケートを {len(chunks)} 個の塊に分けて {threads} スレッドで実行します")
    by_index = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(fn, chunk): idx for idx, chunk in enumerate(chunks)}
        for future in concurrent.futures.as_completed(futures):
            by_index[futures[future]] = future.result()
    results = []
    for idx in sorted(by_index):
        results.extend(by_index[idx])
    return results

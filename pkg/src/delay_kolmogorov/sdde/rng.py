"""
レプリケートごとのBrown運動増分ストリーム

(seed, replicate) から SeedSequence で Philox の鍵を作り，
ステップをブロック（BLOCK_STEPS ステップ）単位で区切ってカウンタに割り当てる．
同じ (seed, replicate, step) は常に同じ増分を与え，任意のステップへ直接アクセスできる．
"""

from __future__ import annotations

import math
from typing import Dict

import numpy as np

BLOCK_STEPS = 1024


class ReplicateStream:
    """1つのレプリケートが所有する乱数ストリーム"""

    def __init__(self, seed: int, replicate: int):
        self.seed = int(seed)
        self.replicate = int(replicate)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.replicate,))
        self._key = sequence.generate_state(2, dtype=np.uint64)
        self._cache: Dict[tuple, np.ndarray] = {}

    def normals(self, block: int, m: int) -> np.ndarray:
        """ブロック block の標準正規乱数 (BLOCK_STEPS, m)"""
        cache_key = (block, m)
        if cache_key not in self._cache:
            counter = np.array([0, 0, block, 0], dtype=np.uint64)
            generator = np.random.Generator(np.random.Philox(counter=counter, key=self._key))
            # 直近のブロックだけ保持する
            self._cache = {cache_key: generator.standard_normal((BLOCK_STEPS, m))}
        return self._cache[cache_key]

    def normal_at(self, step: int, m: int) -> np.ndarray:
        block, offset = divmod(int(step), BLOCK_STEPS)
        return self.normals(block, m)[offset]


def brownian_increments(stream: ReplicateStream, m: int, dt: float, step: int = 0) -> np.ndarray:
    """ステップ step のBrown運動増分 ΔB（平均0，分散 dt の m 個の独立正規乱数）"""
    if dt <= 0:
        raise ValueError(f"dt は正: {dt}")
    return math.sqrt(dt) * stream.normal_at(step, m)


def increment_block(streams: list[ReplicateStream], m: int, dt: float, block: int) -> np.ndarray:
    """複数レプリケートのブロック分の増分 (B, BLOCK_STEPS, m)"""
    scale = math.sqrt(dt)
    return np.stack([scale * stream.normals(block, m) for stream in streams], axis=0)

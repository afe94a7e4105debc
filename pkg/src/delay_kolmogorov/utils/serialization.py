"""
レポートのJSON/CSV出力

浮動小数点数は17有効桁で書き出し，読み戻して同じ値になるようにする．
NaN/±∞ は JSON では null になる．
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def to_jsonable(obj: Any) -> Any:
    """numpy配列・集合・pydanticモデルなどをJSONで表せる値に変換する"""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (frozenset, set)):
        return sorted(to_jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "model_dump"):
        return to_jsonable(obj.model_dump(mode="json"))
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    raise TypeError(f"JSONに変換できない型です: {type(obj).__name__}")


def _encode(obj: Any, indent: Union[int, None], level: int) -> Iterable[str]:
    if isinstance(obj, float):
        yield format_float(obj)
    elif isinstance(obj, dict):
        if not obj:
            yield "{}"
            return
        pad = "\n" + " " * (indent * (level + 1)) if indent else ""
        end = "\n" + " " * (indent * level) if indent else ""
        yield "{"
        for i, (key, value) in enumerate(obj.items()):
            yield ("," if i else "") + pad + json.dumps(key, ensure_ascii=False) + ": "
            yield from _encode(value, indent, level + 1)
        yield end + "}"
    elif isinstance(obj, list):
        if not obj:
            yield "[]"
            return
        pad = "\n" + " " * (indent * (level + 1)) if indent else ""
        end = "\n" + " " * (indent * level) if indent else ""
        yield "["
        for i, value in enumerate(obj):
            yield ("," if i else "") + pad
            yield from _encode(value, indent, level + 1)
        yield end + "]"
    else:
        yield json.dumps(obj, ensure_ascii=False)


def dumps(obj: Any, indent: int = 2) -> str:
    """17有効桁のJSON文字列"""
    return "".join(_encode(to_jsonable(obj), indent, 0)) + "\n"


def write_json(path: Union[str, Path], obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(obj))
    return path


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
    """数値行を17有効桁で書き出す（'.' 小数点，改行は \\n）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])
    return path

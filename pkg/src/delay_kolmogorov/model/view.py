"""
係数汎関数がセグメント φ を読むためのビュー

係数は φ(0) と遅延核のアトム位置 φ(-lag) だけを読む．
配列の先頭軸はレプリケートのバッチ（任意）で，最終軸が種．
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Optional

import numpy as np

from .kernel import DelayKernel

Lookup = Callable[[float], np.ndarray]


def grid_position(lag: float, dt: float) -> tuple[int, float]:
    """lag/dt を整数部 q と小数部 frac に分ける（格子上なら frac = 0）"""
    if dt <= 0 or lag == 0:
        return 0, 0.0
    ratio = lag / dt
    q = int(math.floor(ratio + 1e-9))
    frac = ratio - q
    if frac < 1e-9:
        frac = 0.0
    return q, frac


class SegmentView:
    """セグメントの φ(0) と遅延値 φ(-lag) への読み取り専用アクセス"""

    def __init__(self, now: np.ndarray, lookup: Lookup, mask: Optional[np.ndarray] = None):
        """
        Args:
            now: φ(0)．形状 (..., n)
            lookup: lag -> φ(-lag) を返す関数
            mask: 面に含まれる種を True とする (n,) の真偽配列．None なら全種
        """
        self._mask = mask
        self.now = now if mask is None else now * mask
        self._lookup = lookup
        self._cache: Dict[float, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.now.shape[-1]

    def lag(self, lag: float) -> np.ndarray:
        """φ(-lag)．格子外の lag は線形補間"""
        if lag == 0:
            return self.now
        if lag not in self._cache:
            value = self._lookup(lag)
            if self._mask is not None:
                value = value * self._mask
            self._cache[lag] = value
        return self._cache[lag]

    def delayed(self, kernel: DelayKernel) -> np.ndarray:
        """∫ φ(s) μ(ds) = Σ_k w_k φ(-lag_k)"""
        out = None
        for lag, weight in kernel.atoms:
            term = weight * self.lag(lag)
            out = term if out is None else out + term
        return out

    def masked(self, mask: np.ndarray) -> "SegmentView":
        """面の外の種を0に固定したビュー"""
        combined = mask if self._mask is None else (mask & self._mask)
        return SegmentView(self.now, self._lookup, combined)

    @classmethod
    def from_grid(cls, values: np.ndarray, dt: float) -> "SegmentView":
        """格子値 values (..., L, n)（最後の行が φ(0)）からビューを作る"""
        values = np.asarray(values, dtype=float)
        last = values.shape[-2] - 1

        def lookup(lag: float) -> np.ndarray:
            q, frac = grid_position(lag, dt)
            idx = last - q
            if idx < 0 or (frac > 0 and idx - 1 < 0):
                raise ValueError(f"lag={lag} がセグメントの範囲外です")
            if frac == 0.0:
                return values[..., idx, :]
            return (1.0 - frac) * values[..., idx, :] + frac * values[..., idx - 1, :]

        return cls(values[..., last, :], lookup)

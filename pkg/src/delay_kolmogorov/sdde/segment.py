"""
[-r, 0] 上の履歴セグメント φ の格子表現
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ModelValidationError


def history_steps(r: float, dt: float) -> int:
    """遅延 r を覆う格子数 N_r（N_r·dt ≥ r）"""
    if r <= 0:
        return 0
    return int(math.ceil(r / dt - 1e-9))


@dataclass(frozen=True, eq=False)
class Segment:
    """values は (n, N_r + 1)．列は古い順で，最後の列が φ(0)"""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ModelValidationError(f"セグメントは (n, N_r+1) の2次元配列です: shape={values.shape}")
        if not np.all(np.isfinite(values)):
            raise ModelValidationError("セグメントに非有限な値があります")
        if np.any(values < 0):
            raise ModelValidationError("セグメントは非負（C_+）でなければなりません")
        if self.dt <= 0:
            raise ModelValidationError(f"dt は正: {self.dt}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        """N_r"""
        return self.values.shape[1] - 1

    @property
    def r(self) -> float:
        return self.steps * self.dt

    @property
    def now(self) -> np.ndarray:
        return self.values[:, -1]

    @classmethod
    def constant(cls, x: Sequence[float], r: float, dt: float) -> "Segment":
        x = np.asarray(x, dtype=float)
        steps = history_steps(r, dt)
        return cls(values=np.repeat(x[:, None], steps + 1, axis=1), dt=dt)

    @classmethod
    def from_function(cls, fn: Callable[[float], Sequence[float]], r: float, dt: float) -> "Segment":
        """fn(s) (s ∈ [-r, 0]) を格子点で評価"""
        steps = history_steps(r, dt)
        columns = [np.asarray(fn(-(steps - j) * dt), dtype=float) for j in range(steps + 1)]
        return cls(values=np.stack(columns, axis=1), dt=dt)

    def at(self, s: float) -> np.ndarray:
        """φ(s)．格子外は線形補間，-r より前は最古の値で延長"""
        if s > 1e-12:
            raise ValueError(f"s は0以下: {s}")
        pos = self.steps + s / self.dt
        if pos <= 0:
            return self.values[:, 0].copy()
        lo = int(math.floor(pos + 1e-9))
        frac = pos - lo
        if lo >= self.steps or frac < 1e-9:
            return self.values[:, min(lo, self.steps)].copy()
        return (1.0 - frac) * self.values[:, lo] + frac * self.values[:, lo + 1]

    def resample(self, dt: float, steps: int) -> "Segment":
        """格子幅 dt，N_r = steps の格子へ補間し直す"""
        if math.isclose(dt, self.dt, rel_tol=1e-12) and steps == self.steps:
            return self
        columns = [self.at(-(steps - j) * dt) for j in range(steps + 1)]
        return Segment(values=np.stack(columns, axis=1), dt=dt)

    def sup_norm(self) -> float:
        """sup_s |φ(s)|（ユークリッドノルム）"""
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))

    def restrict(self, face: Optional[Iterable[int]]) -> "Segment":
        """面の外の種を履歴ごと0にする"""
        if face is None:
            return self
        mask = np.zeros(self.n, dtype=bool)
        mask[list(face)] = True
        return Segment(values=np.where(mask[:, None], self.values, 0.0), dt=self.dt)

    def with_species(self, index: int, value: float) -> "Segment":
        """種 index の履歴全体を value に置き換えたセグメント"""
        values = np.array(self.values)
        values[index, :] = value
        return Segment(values=values, dt=self.dt)

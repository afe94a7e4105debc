"""
監査用のセグメント標本（傾きを抑えた区分線形のランダムなセグメント）
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..model.spec import ModelSpec
from ..model.view import SegmentView
from ..sdde.segment import Segment

logger = logging.getLogger(__name__)


@dataclass
class SampledSegments:
    """values は (N, L+1, n)．第2軸は古い順で，最後が φ(0)"""

    values: np.ndarray
    dt: float

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def now(self) -> np.ndarray:
        return self.values[:, -1, :]

    def view(self) -> SegmentView:
        return SegmentView.from_grid(self.values, self.dt)

    def sup_norms(self) -> np.ndarray:
        return np.max(np.sqrt(np.sum(self.values**2, axis=-1)), axis=-1)

    def segment(self, index: int) -> Segment:
        return Segment(values=self.values[index].T, dt=self.dt)

    def echo(self, index: int) -> dict:
        """レポートに載せる標本の要約"""
        return {
            "index": int(index),
            "now": self.now[index],
            "sup_norm": float(self.sup_norms()[index]),
            "oldest": self.values[index, 0, :],
        }


class SegmentSampler(BaseModel):
    """C_+ のセグメントを決定的に生成する

    φ(0) のノルムは [0, radius] 上で一様，向きは正の象限で一様．
    履歴は φ(0) から傾き max_slope 以下の乱歩で遡り，各時刻のノルムを radius 以下に縮める．
    レプリケータでは単体上の2点を結ぶ線分を使う．
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    samples: int = Field(1000, ge=1, description="標本数")
    radius: float = Field(50.0, gt=0, description="sup ノルムの上限 R")
    max_slope: float = Field(1.0, ge=0, description="区分線形セグメントの傾きの上限")
    grid_points: int = Field(16, ge=1, description="[-r, 0] の分割数")
    seed: int = Field(0, ge=0, description="乱数シード")
    include_zero: bool = Field(True, description="ゼロセグメントを最初の標本に含める")
    face: Optional[List[int]] = Field(None, description="標本を面に制限する（0始まりの添字）")

    def draw(self, model: ModelSpec, floor: float = 0.0, radius: Optional[float] = None) -> SampledSegments:
        """標本を生成する

        Args:
            model: 次元 n・遅延 r・単体の総量を読む
            floor: 面の種の下限 ε（D_{ε,R} の標本に使う）
            radius: radius の上書き
        """
        base = model if model.base is None else model.base
        n = base.n
        radius = self.radius if radius is None else radius
        steps = self.grid_points if base.r > 0 else 0
        dt = base.r / steps if steps > 0 else 1.0
        rng = np.random.Generator(np.random.Philox(self.seed))
        mask = base.face_mask(self.face)

        if base.simplex_total is not None:
            total = base.simplex_total
            start = total * rng.dirichlet(np.ones(n), size=self.samples)
            end = total * rng.dirichlet(np.ones(n), size=self.samples)
            ages = np.arange(steps, -1, -1) * dt  # 古い順に -s
            t = np.minimum(1.0, self.max_slope * ages)[None, :, None]
            values = start[:, None, :] + t * (end - start)[:, None, :]
        else:
            norms = radius * rng.uniform(size=self.samples)
            direction = np.abs(rng.standard_normal(size=(self.samples, n)))
            direction = direction / np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
            now = norms[:, None] * direction
            steps_back = rng.uniform(-self.max_slope * dt, self.max_slope * dt, size=(self.samples, steps, n))
            walk = np.concatenate([np.zeros((self.samples, 1, n)), np.cumsum(steps_back, axis=1)], axis=1)
            values = np.maximum(now[:, None, :] + walk, 0.0)[:, ::-1, :]
            column_norms = np.sqrt(np.sum(values**2, axis=-1, keepdims=True))
            values = values * np.minimum(1.0, radius / np.maximum(column_norms, 1e-300))

        if floor > 0:
            values = np.where(mask, np.maximum(values, floor), values)
        values = np.where(mask, values, 0.0)
        if self.include_zero and floor <= 0 and base.simplex_total is None:
            values[0] = 0.0
        logger.debug(f"{base.name}: セグメント標本 {self.samples} 個を生成しました（R={radius}, ε={floor}）")
        return SampledSegments(values=np.ascontiguousarray(values), dt=dt)

"""
シミュレーション設定
"""

from __future__ import annotations

import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from ..errors import ConfigError

DEFAULT_DT_NO_DELAY = 1.0 / 128
DEFAULT_DT_DIVISOR = 64


def default_dt(r: float) -> float:
    """r > 0 なら r/64，遅延なしなら 1/128"""
    return r / DEFAULT_DT_DIVISOR if r > 0 else DEFAULT_DT_NO_DELAY


class SimConfig(BaseModel):
    """積分・統計の設定．seed は必須"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    horizon: float = Field(gt=0, description="総シミュレーション時間 T")
    seed: int = Field(ge=0, lt=2**64, description="乱数シード（64bit）")
    dt: Optional[float] = Field(None, gt=0, description="時間刻み．省略時は r/64（r=0 なら 1/128）")
    burn_in: float = Field(0.2, ge=0, lt=1, description="定常統計から除く先頭の割合")
    replicates: int = Field(1, ge=1, description="レプリケート数")
    extinction_floor: float = Field(-20.0, lt=0, description="数値的な吸収とみなす ln X_i の閾値 ε_log")
    record_stride: int = Field(16, ge=1, description="記録間隔（ステップ数）")
    divergence_ceiling: float = Field(50.0, gt=0, description="発散とみなす ln X_i の上限")
    batches: int = Field(32, ge=2, description="バッチ平均法のバッチ数")

    def resolve_dt(self, r: float) -> float:
        dt = self.dt if self.dt is not None else default_dt(r)
        if r > 0 and dt > r + 1e-12:
            raise ConfigError(f"dt={dt} が遅延 r={r} を超えています")
        return dt

    def resolved(self, r: float) -> "SimConfig":
        """dt を具体化した設定（レポートへのエコー用）"""
        return self.model_copy(update={"dt": self.resolve_dt(r)})

    def total_steps(self, dt: float) -> int:
        """記録間隔の倍数に切り捨てたステップ数"""
        steps = int(round(self.horizon / dt))
        return (steps // self.record_stride) * self.record_stride

    def record_count(self, dt: float) -> int:
        """初期値を除く記録数"""
        return self.total_steps(dt) // self.record_stride

    def burn_in_record(self, dt: float) -> int:
        """バーンイン後の最初の区間を終える直前の記録番号 b（統計は記録 b+1.. を使う）"""
        return int(math.ceil(self.burn_in * self.record_count(dt) - 1e-9))

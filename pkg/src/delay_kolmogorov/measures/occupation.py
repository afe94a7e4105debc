"""
ランダムな正規化占有測度 Π̃_t の有限個の汎関数への作用を時間平均として求める

測度そのものは保持せず，φ(0)，φ(-r)，侵入率の被積分関数，モデルの観測量の平均，
面の占有率，裾の質量だけを記録する．標準誤差はバッチ平均法．
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DivergenceError
from ..sdde.config import SimConfig
from ..sdde.integrator import Trajectory

logger = logging.getLogger(__name__)

MIN_BATCHES = 20
DEFAULT_EPSILONS: Tuple[float, ...] = (1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_RADII: Tuple[float, ...] = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1000.0)
STATIONARITY_Z = 4.0


@dataclass
class OccupationStats:
    """占有測度の時間平均（和の形で保持し，merge で結合できる）

    sums のキー: "now"（φ(0)），"lagged"（φ(-r)），"integrand"，"difference"（φ(0)-φ(-r)），
    "obs:<名前>"（モデルの観測量）．
    """

    labels: Tuple[str, ...]
    face: FrozenSet[int]
    count: int
    window_length: float
    sums: Dict[str, np.ndarray]
    batch_counts: List[int]
    batch_sums: List[Dict[str, np.ndarray]]
    epsilons: Tuple[float, ...]
    occupancy_counts: np.ndarray
    radii: Tuple[float, ...]
    tail_counts: np.ndarray
    replicates: int = 1
    simplex_defect_max: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def batches(self) -> int:
        return len(self.batch_counts)

    @property
    def se_available(self) -> bool:
        return self.batches >= MIN_BATCHES

    def mean(self, key: str) -> np.ndarray:
        if self.count == 0:
            return np.full_like(self.sums[key], np.nan)
        return self.sums[key] / self.count

    def se(self, key: str) -> Optional[np.ndarray]:
        """バッチ平均法による標準誤差．バッチ数が足りなければ None"""
        if not self.se_available:
            return None
        counts = np.asarray(self.batch_counts, dtype=float)
        total = counts.sum()
        overall = self.mean(key)
        acc = np.zeros_like(overall)
        for c, sums in zip(counts, self.batch_sums):
            weight = c / total
            acc = acc + (weight * (sums[key] / c - overall)) ** 2
        b = len(counts)
        return np.sqrt(acc * b / (b - 1))

    @property
    def mean_now(self) -> np.ndarray:
        return self.mean("now")

    @property
    def mean_lagged(self) -> np.ndarray:
        return self.mean("lagged")

    @property
    def mean_integrand(self) -> np.ndarray:
        return self.mean("integrand")

    @property
    def occupancy(self) -> np.ndarray:
        """ε ごとの「面の種の最小値が ε 未満」の時間割合"""
        return self.occupancy_counts / max(self.count, 1)

    def observable_means(self) -> Dict[str, np.ndarray]:
        return {key[4:]: self.mean(key) for key in self.sums if key.startswith("obs:")}

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "face": sorted(self.face),
            "samples": self.count,
            "window_length": self.window_length,
            "replicates": self.replicates,
            "batches": self.batches,
            "se_available": self.se_available,
            "mean_now": self.mean_now,
            "se_now": self.se("now"),
            "mean_lagged": self.mean_lagged,
            "se_lagged": self.se("lagged"),
            "mean_integrand": self.mean_integrand,
            "se_integrand": self.se("integrand"),
            "observables": {
                name: {"mean": self.mean(f"obs:{name}"), "se": self.se(f"obs:{name}")}
                for name in self.observable_means()
            },
            "occupancy": {format(eps, "g"): frac for eps, frac in zip(self.epsilons, self.occupancy)},
            "tail_mass": {
                format(radius, "g"): frac
                for radius, frac in zip(self.radii, self.tail_counts / max(self.count, 1))
            },
            "simplex_defect_max": self.simplex_defect_max,
            "notes": list(self.notes),
        }


def _sample_arrays(trajectory: Trajectory, window: slice) -> Dict[str, np.ndarray]:
    arrays = {
        "now": trajectory.states[window],
        "lagged": trajectory.lagged_states[window],
        "integrand": trajectory.integrand[window],
        "difference": trajectory.states[window] - trajectory.lagged_states[window],
    }
    for name, values in trajectory.observables.items():
        arrays[f"obs:{name}"] = values[window]
    return arrays


def accumulate(
    trajectory: Trajectory,
    config: SimConfig,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    radii: Sequence[float] = DEFAULT_RADII,
    window: Optional[slice] = None,
) -> OccupationStats:
    """バーンイン後の記録点を等しい重みで時間平均する

    Args:
        trajectory: 積分結果
        config: バッチ数 config.batches を使う
        window: 記録の範囲（省略時はバーンイン後すべて）
    """
    window = trajectory.window() if window is None else window
    start, stop, _ = window.indices(len(trajectory.times))
    count = max(stop - start, 0)
    if count == 0:
        raise ValueError(
            f"バーンイン後の記録がありません（horizon={trajectory.horizon:.6g}，レプリケート {trajectory.replicate}）"
        )
    arrays = _sample_arrays(trajectory, slice(start, stop))
    sums = {key: np.sum(values, axis=0) for key, values in arrays.items()}

    notes: List[str] = []
    n_batches = min(config.batches, count)
    if n_batches < MIN_BATCHES:
        notes.append(f"記録点が {count} 個しかなく，バッチ平均の標準誤差は利用できません")
        logger.warning(notes[-1])
    edges = np.linspace(0, count, n_batches + 1).round().astype(int)
    batch_counts: List[int] = []
    batch_sums: List[Dict[str, np.ndarray]] = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        batch_counts.append(int(hi - lo))
        batch_sums.append({key: np.sum(values[lo:hi], axis=0) for key, values in arrays.items()})

    face = sorted(trajectory.face)
    log_states = trajectory.log_states[start:stop]
    if face:
        min_log = np.min(log_states[:, face], axis=1)
    else:
        min_log = np.full(count, -np.inf)
    occupancy_counts = np.array([int(np.sum(min_log < np.log(eps))) for eps in epsilons])
    norms = np.sqrt(np.sum(arrays["now"] ** 2, axis=1))
    tail_counts = np.array([int(np.sum(norms > radius)) for radius in radii])

    defect = None
    if trajectory.simplex_defect is not None:
        defect = float(np.max(trajectory.simplex_defect[start:stop]))

    return OccupationStats(
        labels=trajectory.labels,
        face=trajectory.face,
        count=count,
        window_length=count * trajectory.record_stride * trajectory.dt,
        sums=sums,
        batch_counts=batch_counts,
        batch_sums=batch_sums,
        epsilons=tuple(float(e) for e in epsilons),
        occupancy_counts=occupancy_counts,
        radii=tuple(float(r) for r in radii),
        tail_counts=tail_counts,
        simplex_defect_max=defect,
        notes=notes,
    )


def merge(a: OccupationStats, b: OccupationStats) -> OccupationStats:
    """互いに素な窓（またはレプリケート）の統計を結合する"""
    if a.labels != b.labels:
        raise ValueError(f"種ラベルが一致しません: {a.labels} / {b.labels}")
    if a.epsilons != b.epsilons or a.radii != b.radii:
        raise ValueError("占有率・裾の格子が一致しません")
    if set(a.sums) != set(b.sums):
        raise ValueError("統計量の種類が一致しません")
    defects = [d for d in (a.simplex_defect_max, b.simplex_defect_max) if d is not None]
    return OccupationStats(
        labels=a.labels,
        face=a.face | b.face,
        count=a.count + b.count,
        window_length=a.window_length + b.window_length,
        sums={key: a.sums[key] + b.sums[key] for key in a.sums},
        batch_counts=a.batch_counts + b.batch_counts,
        batch_sums=a.batch_sums + b.batch_sums,
        epsilons=a.epsilons,
        occupancy_counts=a.occupancy_counts + b.occupancy_counts,
        radii=a.radii,
        tail_counts=a.tail_counts + b.tail_counts,
        replicates=a.replicates + b.replicates,
        simplex_defect_max=max(defects) if defects else None,
        notes=a.notes + [note for note in b.notes if note not in a.notes],
    )


def accumulate_all(trajectories: Iterable[Trajectory], config: SimConfig, **kwargs) -> OccupationStats:
    """複数レプリケートの統計を結合（発散したレプリケートは除外）"""
    stats: Optional[OccupationStats] = None
    skipped = 0
    for trajectory in trajectories:
        if trajectory.diverged:
            skipped += 1
            continue
        current = accumulate(trajectory, config, **kwargs)
        stats = current if stats is None else merge(stats, current)
    if stats is None:
        raise DivergenceError("統計に使えるレプリケートがありません（すべて発散しました）")
    if skipped:
        stats.notes.append(f"発散したレプリケート {skipped} 個を除外しました")
    return stats


@dataclass
class StationarityReport:
    """種ごとの mean φ_i(0) - mean φ_i(-r) の z 値"""

    label: str
    difference: float
    se: float
    z: float
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "difference": self.difference,
            "se": self.se,
            "z": self.z,
            "flagged": self.flagged,
        }


def stationarity_diagnostic(stats: OccupationStats, threshold: float = STATIONARITY_Z) -> Dict[str, StationarityReport]:
    """定常なら mean φ_i(0) と mean φ_i(-r) は一致する．|z| > threshold で非定常と判定"""
    se = stats.se("difference")
    if se is None:
        raise ValueError("標準誤差が利用できないため定常性を診断できません")
    diff = stats.mean("difference")
    reports = {}
    for i, label in enumerate(stats.labels):
        d, s = float(diff[i]), float(se[i])
        if s > 0:
            z = d / s
        else:
            z = 0.0 if d == 0 else float(np.copysign(np.inf, d))
        flagged = abs(z) > threshold
        if flagged:
            logger.warning(f"{label}: 非定常の疑いがあります（z={z:.3g}）")
        reports[label] = StationarityReport(label=label, difference=d, se=s, z=z, flagged=flagged)
    return reports


@dataclass
class TailMass:
    radius: float
    radius_used: float
    fraction: float
    note: Optional[str] = None


def tail_mass(stats: OccupationStats, radius: float) -> TailMass:
    """|X(t)| > R となる時間割合．R が格子に無ければ最も近い格子点を使う"""
    radii = np.asarray(stats.radii)
    idx = int(np.argmin(np.abs(radii - radius)))
    used = float(radii[idx])
    note = None
    if used != radius:
        note = f"R={radius} は格子にないため R={used} を使いました"
        logger.info(note)
    fraction = float(stats.tail_counts[idx]) / max(stats.count, 1)
    return TailMass(radius=float(radius), radius_used=used, fraction=fraction, note=note)

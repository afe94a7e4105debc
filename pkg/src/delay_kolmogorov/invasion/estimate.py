"""
境界の面上のエルゴード測度に対する侵入率 λ_i(π) の推定
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Union

import numpy as np

from ..measures.occupation import OccupationStats, accumulate, merge
from ..model.spec import ModelSpec
from ..sdde.config import SimConfig
from ..sdde.integrator import Trajectory, default_initial, integrate_replicates, resolve_face
from ..sdde.segment import Segment
from .closed_form import closed_form_lambda

logger = logging.getLogger(__name__)

WRONG_MEASURE_EPS = 1e-6
WRONG_MEASURE_OCCUPANCY = 0.05
DISPERSION_LIMIT = 4.0
LYAPUNOV_PHASE_OFFSET = 2**31


class InvasionMethod(Enum):
    """推定方法"""

    TIME_AVERAGE = "time-average"
    CLOSED_FORM = "closed-form"
    LYAPUNOV_EXPONENT = "lyapunov-exponent"


@dataclass
class InvasionEstimate:
    """面 I 上の測度に対する種 i の侵入率の推定"""

    face: FrozenSet[int]
    species: int
    face_label: str
    species_label: str
    lambda_hat: float
    se: Optional[float]
    method: InvasionMethod
    replicates: int = 0
    horizon: float = 0.0
    aborted: int = 0
    flags: List[str] = field(default_factory=list)
    per_replicate: List[float] = field(default_factory=list)
    closed_form: Optional[float] = None

    def __post_init__(self):
        if self.method is InvasionMethod.CLOSED_FORM:
            self.se = 0.0

    @property
    def valid(self) -> bool:
        return not self.flags

    def interval_contains_zero(self, width: float = 4.0) -> bool:
        """λ̂ ± width·SE が0を含むか（SEが無ければ True）"""
        if self.method is InvasionMethod.CLOSED_FORM:
            return self.lambda_hat == 0.0
        if self.se is None or math.isnan(self.lambda_hat):
            return True
        return abs(self.lambda_hat) <= width * self.se

    def to_dict(self) -> dict:
        return {
            "face": sorted(self.face),
            "face_label": self.face_label,
            "species": self.species,
            "species_label": self.species_label,
            "lambda": self.lambda_hat,
            "se": self.se,
            "method": self.method.value,
            "replicates": self.replicates,
            "horizon": self.horizon,
            "aborted": self.aborted,
            "flags": list(self.flags),
            "per_replicate": list(self.per_replicate),
            "closed_form": self.closed_form,
        }


@dataclass
class FaceRun:
    """面に制限した積分の結果とその統計"""

    face: FrozenSet[int]
    trajectories: List[Trajectory]
    stats: Optional[OccupationStats]
    per_replicate: List[OccupationStats]
    aborted: int
    flags: List[str]


def run_face(
    model: ModelSpec,
    face: Iterable[Union[int, str]],
    config: SimConfig,
    initial: Optional[Segment] = None,
    threads: int = 1,
) -> FaceRun:
    """面 I に制限したレプリケートを積分し，占有測度の統計をまとめる"""
    face_set = resolve_face(model, face)
    base = model if model.base is None else model.base
    initial = default_initial(base, config, face_set) if initial is None else initial
    trajectories = integrate_replicates(base, initial, config, face=face_set, threads=threads)
    per_replicate = []
    aborted = 0
    for trajectory in trajectories:
        if trajectory.diverged:
            aborted += 1
            continue
        per_replicate.append(accumulate(trajectory, config))
    flags: List[str] = []
    stats = None
    for item in per_replicate:
        stats = item if stats is None else merge(stats, item)
    if aborted:
        logger.warning(f"{base.name}: 面 {base.face_label(face_set)} の実行で {aborted} 個のレプリケートが発散しました")
    if stats is None:
        flags.append("all replicates diverged")
    elif face_set:
        eps_index = int(np.argmin(np.abs(np.log(stats.epsilons) - math.log(WRONG_MEASURE_EPS))))
        occupancy = float(stats.occupancy[eps_index])
        if occupancy > WRONG_MEASURE_OCCUPANCY:
            flags.append(
                f"wrong ergodic measure: face run spent {occupancy:.3g} of the window near a sub-face"
            )
            logger.warning(
                f"{base.name}: 面 {base.face_label(face_set)} の実行が部分面へ吸収されつつあります（占有率 {occupancy:.3g}）"
            )
    return FaceRun(
        face=face_set,
        trajectories=trajectories,
        stats=stats,
        per_replicate=per_replicate,
        aborted=aborted,
        flags=flags,
    )


def _estimate_from_run(model: ModelSpec, run: FaceRun, species: int) -> InvasionEstimate:
    base = model if model.base is None else model.base
    flags = list(run.flags)
    per_replicate = [float(item.mean_integrand[species]) for item in run.per_replicate]
    if run.stats is None:
        lambda_hat, se = float("nan"), None
    else:
        lambda_hat = float(run.stats.mean_integrand[species])
        se_vec = run.stats.se("integrand")
        se = None if se_vec is None else float(se_vec[species])
        if se is None and len(per_replicate) >= 2:
            se = float(np.std(per_replicate, ddof=1) / math.sqrt(len(per_replicate)))
        if se is None:
            flags.append("standard error unavailable")
            logger.warning(f"{base.name}: 標準誤差が計算できません（窓が短すぎます）")
        # 複数のエルゴード測度の疑い: レプリケート間のばらつきがレプリケート内の誤差より大きい
        if len(per_replicate) >= 4 and all(item.se_available for item in run.per_replicate):
            within = np.mean([float(item.se("integrand")[species]) ** 2 for item in run.per_replicate])
            between = float(np.var(per_replicate, ddof=1))
            if within > 0 and between / within > DISPERSION_LIMIT:
                flags.append(
                    f"multiple ergodic measures suspected: between/within variance ratio {between / within:.3g}"
                )
    horizon = max((t.horizon for t in run.trajectories), default=0.0)
    return InvasionEstimate(
        face=run.face,
        species=species,
        face_label=base.face_label(run.face),
        species_label=base.labels[species],
        lambda_hat=lambda_hat,
        se=se,
        method=InvasionMethod.TIME_AVERAGE,
        replicates=len(run.per_replicate),
        horizon=horizon,
        aborted=run.aborted,
        flags=flags,
        per_replicate=per_replicate,
        closed_form=closed_form_lambda(base, run.face, species),
    )


def estimate_lambda(
    model: ModelSpec,
    face: Iterable[Union[int, str]],
    species: Union[int, str],
    config: SimConfig,
    initial: Optional[Segment] = None,
    threads: int = 1,
) -> InvasionEstimate:
    """面の軌道に沿った被積分関数 F_i - ½Σ_j G_ij² の時間平均で λ_i(π_I) を推定する

    面の種を指定すると λ_i(π) = 0 の恒等式の検査になる．
    """
    base = model if model.base is None else model.base
    i = base.index_of(species)
    face_set = resolve_face(base, face)
    logger.info(f"{base.name}: λ_{base.labels[i]}(π_{base.face_label(face_set)}) を時間平均で推定します")
    run = run_face(base, face_set, config, initial=initial, threads=threads)
    return _estimate_from_run(base, run, i)


def closed_form_estimate(
    model: ModelSpec, face: Iterable[Union[int, str]], species: Union[int, str]
) -> Optional[InvasionEstimate]:
    """閉じた式を InvasionEstimate として返す（式が無ければ None）"""
    base = model if model.base is None else model.base
    face_set = base.face_of(face)
    i = base.index_of(species)
    value = closed_form_lambda(base, face_set, i)
    if value is None:
        return None
    return InvasionEstimate(
        face=face_set,
        species=i,
        face_label=base.face_label(face_set),
        species_label=base.labels[i],
        lambda_hat=value,
        se=0.0,
        method=InvasionMethod.CLOSED_FORM,
        closed_form=value,
    )


def lyapunov_exponent(
    model: ModelSpec,
    face: Iterable[Union[int, str]],
    species: Union[int, str],
    config: SimConfig,
    invader_scale: float = 1e-6,
    cap: float = 1e-2,
    initial: Optional[Segment] = None,
    threads: int = 1,
) -> InvasionEstimate:
    """λ̂ = (ln X_i(T) - ln ε₀)/T による交差検証用の推定

    面の種をバーンイン時間だけ面上で温めた後，種 i を ε₀ で加えて全系を積分する．
    侵入種が cap を超えた場合は推定が偏るので flag を立てる．
    """
    base = model if model.base is None else model.base
    i = base.index_of(species)
    face_set = resolve_face(base, face)
    if i in face_set:
        raise ValueError(f"種 {base.labels[i]} は面 {base.face_label(face_set)} に含まれています")
    if not 0 < invader_scale < cap:
        raise ValueError(f"invader_scale は (0, cap) の範囲: {invader_scale}")
    logger.info(
        f"{base.name}: λ_{base.labels[i]}(π_{base.face_label(face_set)}) をLyapunov指数で推定します（ε₀={invader_scale:g}）"
    )

    dt = config.resolve_dt(base.r)
    warm_horizon = max(config.burn_in * config.horizon, config.record_stride * dt)
    warm_config = config.model_copy(update={"horizon": warm_horizon})
    initial = default_initial(base, config, face_set) if initial is None else initial
    ids = list(range(config.replicates))
    warm = integrate_replicates(base, initial, warm_config, face=face_set, replicates=ids, threads=threads)
    starts = [t.final_segment().restrict(face_set).with_species(i, invader_scale) for t in warm]

    invaded_face = face_set | {i}
    runs = integrate_replicates(
        base,
        starts,
        config,
        face=invaded_face,
        replicates=[LYAPUNOV_PHASE_OFFSET + k for k in ids],
        threads=threads,
    )
    values: List[float] = []
    aborted = sum(1 for t in warm if t.diverged)
    exceeded = 0
    log_cap = math.log(cap)
    for warm_run, run in zip(warm, runs):
        if warm_run.diverged or run.diverged:
            aborted += int(run.diverged and not warm_run.diverged)
            continue
        if float(np.max(run.log_states[:, i])) > log_cap:
            exceeded += 1
        values.append((float(run.log_states[-1, i]) - math.log(invader_scale)) / run.horizon)

    flags: List[str] = []
    if exceeded:
        flags.append(f"invader exceeded cap {cap:g} in {exceeded} replicates; rely on the time-average estimate")
        logger.warning(f"{base.name}: 侵入種が上限 {cap:g} を超えました（{exceeded} レプリケート）")
    if not values:
        flags.append("all replicates diverged")
        lambda_hat, se = float("nan"), None
    else:
        lambda_hat = float(np.mean(values))
        se = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) >= 2 else None
        if se is None:
            flags.append("standard error unavailable")
    return InvasionEstimate(
        face=face_set,
        species=i,
        face_label=base.face_label(face_set),
        species_label=base.labels[i],
        lambda_hat=lambda_hat,
        se=se,
        method=InvasionMethod.LYAPUNOV_EXPONENT,
        replicates=len(values),
        horizon=config.horizon,
        aborted=aborted,
        flags=flags,
        per_replicate=values,
        closed_form=closed_form_lambda(base, face_set, i),
    )


def lambda_table(
    model: ModelSpec,
    faces: Iterable[Iterable[Union[int, str]]],
    config: SimConfig,
    species: Optional[Sequence[Union[int, str]]] = None,
    use_closed_form: bool = True,
    threads: int = 1,
) -> List[InvasionEstimate]:
    """(面, 面の外の種) の組ごとの λ の表

    閉じた式があればそれを使い，無い組み合わせだけ面ごとに1回積分して推定する．
    """
    base = model if model.base is None else model.base
    wanted = None if species is None else {base.index_of(s) for s in species}
    table: List[InvasionEstimate] = []
    for face in faces:
        face_set = base.face_of(face)
        targets = [i for i in range(base.n) if i not in face_set and (wanted is None or i in wanted)]
        pending = []
        for i in targets:
            closed = closed_form_estimate(base, face_set, i) if use_closed_form else None
            if closed is not None:
                table.append(closed)
            else:
                pending.append(i)
        if pending:
            run = run_face(base, face_set, config, threads=threads)
            for i in pending:
                table.append(_estimate_from_run(base, run, i))
    return table


def estimates_by_key(table: Iterable[InvasionEstimate]) -> Dict[tuple, InvasionEstimate]:
    """(face, species) をキーとする辞書"""
    return {(est.face, est.species): est for est in table}

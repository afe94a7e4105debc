"""
対数座標のEuler-Maruyama法による確率遅延Kolmogorov系の積分

ln X_i(t+dt) = ln X_i(t) + (F_i - ½Σ_j G_ij²)dt + Σ_j G_ij ΔB_j を面の種にだけ適用する．
面の外の種は ln X_i = -∞（状態は厳密に0）のまま動かない．
複数のレプリケートは (B, n) 配列でまとめて進めるが，各行の計算は他の行に依存しない．
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigError, DivergenceError, ModelValidationError, NonFiniteCoefficientError
from ..model.spec import ModelSpec
from ..model.view import SegmentView, grid_position
from ..utils.numerics import rows_times_vector, rowsum, rowsum_squares
from ..utils.pool import run_chunked
from ..utils.serialization import write_csv
from .config import SimConfig
from .rng import BLOCK_STEPS, ReplicateStream, increment_block
from .segment import Segment, history_steps

logger = logging.getLogger(__name__)


@dataclass
class DivergenceReport:
    """ln X_i が上限を超えて打ち切られたレプリケートの記録"""

    replicate: int
    step: int
    time: float
    species: str
    log_state: float

    def to_dict(self) -> dict:
        return {
            "replicate": self.replicate,
            "step": self.step,
            "time": self.time,
            "species": self.species,
            "log_state": self.log_state,
        }


@dataclass
class Trajectory:
    """1レプリケートの記録（記録間隔ごと，先頭は初期値）

    integrand[k] は直前の記録間隔 [t_{k-1}, t_k) の被積分関数 F_i - ½Σ_j G_ij² の平均
    （k = 0 は初期セグメントでの値）．面の外の種では侵入率の被積分関数になる．
    growth[k] は ∫_0^{t_k} (F_i - ½Σ_j G_ij²) ds．
    """

    model_name: str
    labels: Tuple[str, ...]
    face: FrozenSet[int]
    replicate: int
    seed: int
    dt: float
    r: float
    record_stride: int
    burn_in_record: int
    times: np.ndarray
    log_states: np.ndarray
    lagged_states: np.ndarray
    integrand: np.ndarray
    growth: np.ndarray
    final_window: np.ndarray
    observables: Dict[str, np.ndarray] = field(default_factory=dict)
    simplex_defect: Optional[np.ndarray] = None
    divergence: Optional[DivergenceReport] = None
    states: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.states = np.exp(self.log_states)

    @property
    def n(self) -> int:
        return self.log_states.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def diverged(self) -> bool:
        return self.divergence is not None

    def window(self) -> slice:
        """バーンイン後の記録（統計に使う範囲）"""
        start = min(self.burn_in_record + 1, len(self.times))
        return slice(start, len(self.times))

    def final_segment(self) -> Segment:
        """最後の履歴窓 [T - r, T]"""
        return Segment(values=self.final_window, dt=self.dt)

    def raise_if_diverged(self) -> None:
        if self.divergence is not None:
            d = self.divergence
            raise DivergenceError(
                f"レプリケート {d.replicate} が t={d.time:.6g} で発散しました（{d.species}: ln X = {d.log_state:.6g}）",
                report=d,
            )

    def to_csv(self, path: Union[str, Path]) -> None:
        """t,x1,...,xn 形式で記録点ごとに1行"""
        header = ["t"] + [f"x{i + 1}" for i in range(self.n)]
        rows = (
            [t] + list(state) for t, state in zip(self.times.tolist(), self.states.tolist())
        )
        write_csv(path, header, rows)


def resolve_face(model: ModelSpec, face: Optional[Iterable[Union[int, str]]]) -> FrozenSet[int]:
    """face 引数とモデル自身の面の共通部分（どちらも無ければ全種）"""
    resolved = frozenset(range(model.n)) if face is None else model.face_of(face)
    if model.face is not None:
        resolved = resolved & model.face
    return resolved


def default_initial(model: ModelSpec, config: SimConfig, face: Optional[Iterable[Union[int, str]]] = None) -> Segment:
    """面の種を一定値（レプリケータは X/|I|，それ以外は1）とする定数セグメント"""
    full = model if model.base is None else model.base
    face_set = resolve_face(model, face)
    level = 1.0
    if full.simplex_total is not None and face_set:
        level = full.simplex_total / len(face_set)
    values = np.where(full.face_mask(face_set), level, 0.0)
    return Segment.constant(values, full.r, config.resolve_dt(full.r))


def integrate(
    model: ModelSpec,
    initial: Segment,
    config: SimConfig,
    face: Optional[Iterable[Union[int, str]]] = None,
    replicate: int = 0,
    increments: Optional[np.ndarray] = None,
) -> Trajectory:
    """1レプリケートを積分する

    Args:
        model: 係数汎関数
        initial: 初期セグメント（面の種は φ(0) > 0．面の外は0に固定される）
        config: シミュレーション設定
        face: 生き残る種の集合．None なら全種
        replicate: 乱数ストリームを選ぶレプリケート番号
        increments: 明示的なBrown運動増分 (steps, m)．与えると乱数ストリームは使わない

    Returns:
        Trajectory
    """
    if increments is not None:
        increments = np.asarray(increments, dtype=float)[None, ...]
    return _integrate_batch(model, [initial], config, face, [replicate], increments)[0]


def integrate_replicates(
    model: ModelSpec,
    initial: Union[Segment, Sequence[Segment]],
    config: SimConfig,
    face: Optional[Iterable[Union[int, str]]] = None,
    replicates: Optional[Sequence[int]] = None,
    threads: int = 1,
) -> List[Trajectory]:
    """複数レプリケートを積分する（結果はレプリケート番号順）

    各レプリケートの経路はバッチの分け方やスレッド数に依らず同一になる．
    initial にセグメントのリストを渡すとレプリケートごとに初期値を変えられる．
    """
    ids = list(range(config.replicates)) if replicates is None else [int(i) for i in replicates]
    if isinstance(initial, Segment):
        initials = {rid: initial for rid in ids}
    else:
        if len(initial) != len(ids):
            raise ValueError(f"初期セグメントの数 {len(initial)} がレプリケート数 {len(ids)} と一致しません")
        initials = dict(zip(ids, initial))
    if face is not None:
        face = model.face_of(face)
    return run_chunked(
        lambda chunk: _integrate_batch(model, [initials[rid] for rid in chunk], config, face, chunk, None),
        ids,
        threads=threads,
    )


def _integrate_batch(
    model: ModelSpec,
    initials: List[Segment],
    config: SimConfig,
    face: Optional[Iterable[Union[int, str]]],
    replicate_ids: List[int],
    increments: Optional[np.ndarray],
) -> List[Trajectory]:
    full = model if model.base is None else model.base
    face_set = resolve_face(model, face)
    mask = full.face_mask(face_set)
    n, m = full.n, full.m
    dt = config.resolve_dt(full.r)
    steps_r = history_steps(full.r, dt)
    length = steps_r + 1
    stride = config.record_stride
    total_steps = config.total_steps(dt)
    records = total_steps // stride
    if records < 1:
        raise ConfigError(f"horizon={config.horizon} が記録間隔 {stride}×dt={stride * dt} より短すぎます")

    segments = []
    for initial in initials:
        if initial.n != n:
            raise ModelValidationError(f"初期セグメントの次元 {initial.n} がモデルの次元 {n} と一致しません")
        segment = initial.resample(dt, steps_r).restrict(face_set)
        if np.any(segment.now[mask] <= 0):
            raise ModelValidationError(
                f"面 {full.face_label(face_set)} の種の初期値 φ(0) は正でなければなりません: {segment.now}"
            )
        segments.append(segment)

    batch = len(replicate_ids)
    if increments is not None:
        if increments.shape[0] != batch or increments.shape[2] != m or increments.shape[1] < total_steps:
            raise ValueError(
                f"increments の形状 {increments.shape} が (B={batch}, steps≥{total_steps}, m={m}) と合いません"
            )
        streams: List[ReplicateStream] = []
    else:
        streams = [ReplicateStream(config.seed, rid) for rid in replicate_ids]

    logger.info(
        f"{full.name}: 面 {full.face_label(face_set)} を積分します"
        f"（レプリケート {replicate_ids[0]}..{replicate_ids[-1]}，{total_steps} ステップ，dt={dt:.6g}）"
    )

    # 履歴のリングバッファ．pos が φ(0) の位置
    ring = np.stack([segment.values.T for segment in segments], axis=0)
    pos = length - 1
    with np.errstate(divide="ignore"):
        logx = np.log(ring[:, pos, :])
    logx[:, ~mask] = -np.inf
    x = np.exp(logx)
    ring[:, pos, :] = x

    lag_index: Dict[float, Tuple[int, float]] = {}

    def make_view(values: np.ndarray, p: int) -> SegmentView:
        def lookup(lag: float) -> np.ndarray:
            if lag not in lag_index:
                lag_index[lag] = grid_position(lag, dt)
            q, frac = lag_index[lag]
            if q > steps_r or (frac > 0 and q + 1 > steps_r):
                raise ValueError(f"lag={lag} が履歴 r={full.r} の範囲外です")
            idx = (p - q) % length
            if frac == 0.0:
                return ring[:, idx, :]
            return (1.0 - frac) * ring[:, idx, :] + frac * ring[:, (idx - 1) % length, :]

        return SegmentView(values, lookup)

    def window_of(b: int, p: int) -> np.ndarray:
        return np.roll(ring[b], -(p + 1), axis=0).T.copy()

    times = np.arange(records + 1) * (stride * dt)
    log_rec = np.empty((records + 1, batch, n))
    lag_rec = np.empty((records + 1, batch, n))
    integ_rec = np.empty((records + 1, batch, n))
    growth_rec = np.empty((records + 1, batch, n))
    obs_rec: Dict[str, np.ndarray] = {}
    simplex_total = full.simplex_total
    defect_rec = np.zeros((records + 1, batch)) if simplex_total is not None else None

    log_rec[0] = logx
    lag_rec[0] = make_view(x, pos).lag(full.r)
    growth_rec[0] = 0.0

    active = np.ones(batch, dtype=bool)
    end_record = np.full(batch, records)
    final_windows: Dict[int, np.ndarray] = {}
    divergences: Dict[int, DivergenceReport] = {}
    growth = np.zeros((batch, n))
    integ_sum = np.zeros((batch, n))
    obs_sum: Dict[str, np.ndarray] = {}
    defect_max = np.zeros(batch)
    noise_block = None

    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for step in range(total_steps):
            offset = step % BLOCK_STEPS
            if increments is not None:
                dB = increments[:, step, :]
            else:
                if offset == 0:
                    noise_block = increment_block(streams, m, dt, step // BLOCK_STEPS)
                dB = noise_block[:, offset, :]

            view = make_view(x, pos)
            drift = full.drift(view)
            diffusion = full.diffusion(view)
            integ = drift - 0.5 * rowsum_squares(diffusion)

            face_rows = np.isfinite(drift[:, mask]) & np.all(np.isfinite(diffusion[:, mask, :]), axis=-1)
            bad = active & ~np.all(face_rows, axis=-1)
            if np.any(bad):
                b = int(np.flatnonzero(bad)[0])
                logger.error(f"{full.name}: 係数が非有限になりました（レプリケート {replicate_ids[b]}，ステップ {step}）")
                raise NonFiniteCoefficientError(
                    f"面 {full.face_label(face_set)} の種の係数が非有限です"
                    f"（レプリケート {replicate_ids[b]}，t={step * dt:.6g}）",
                    segment=Segment(values=window_of(b, pos), dt=dt),
                    replicate=replicate_ids[b],
                )

            for key, fn in full.observables.items():
                value = np.asarray(fn(view), dtype=float)
                if step == 0:
                    obs_rec[key] = np.empty((records + 1,) + value.shape)
                    obs_rec[key][0] = value
                    obs_sum[key] = np.zeros_like(value)
                obs_sum[key] = obs_sum[key] + value
            if step == 0:
                integ_rec[0] = integ

            integ_sum = integ_sum + integ
            growth = growth + integ * dt
            stepped = logx + integ * dt + rows_times_vector(diffusion, dB)
            update = active[:, None] & mask
            logx = np.where(update, stepped, logx)

            if simplex_total is not None:
                total = rowsum(np.exp(logx))
                defect_max = np.maximum(defect_max, np.abs(total - simplex_total) / simplex_total)
                logx = np.where(update, logx + np.log(simplex_total / total)[:, None], logx)

            x = np.exp(logx)
            pos = (pos + 1) % length
            ring[:, pos, :] = x

            over = active & np.any(np.where(mask, logx, -np.inf) > config.divergence_ceiling, axis=-1)
            if np.any(over):
                for b in np.flatnonzero(over):
                    i = int(np.argmax(np.where(mask, logx[b], -np.inf)))
                    report = DivergenceReport(
                        replicate=replicate_ids[b],
                        step=step + 1,
                        time=(step + 1) * dt,
                        species=full.labels[i],
                        log_state=float(logx[b, i]),
                    )
                    divergences[int(b)] = report
                    end_record[b] = (step + 1) // stride
                    final_windows[int(b)] = window_of(int(b), pos)
                    logger.error(
                        f"{full.name}: レプリケート {report.replicate} が発散しました"
                        f"（t={report.time:.6g}，{report.species}，ln X={report.log_state:.6g}）"
                    )
                active = active & ~over

            if (step + 1) % stride == 0:
                k = (step + 1) // stride
                log_rec[k] = logx
                lag_rec[k] = make_view(x, pos).lag(full.r)
                integ_rec[k] = integ_sum / stride
                growth_rec[k] = growth
                for key in obs_sum:
                    obs_rec[key][k] = obs_sum[key] / stride
                    obs_sum[key] = np.zeros_like(obs_sum[key])
                if defect_rec is not None:
                    defect_rec[k] = defect_max
                    defect_max = np.zeros(batch)
                integ_sum = np.zeros((batch, n))

            if not np.any(active):
                break

    burn_in_record = config.burn_in_record(dt)
    trajectories = []
    for b, rid in enumerate(replicate_ids):
        end = int(end_record[b]) + 1
        trajectories.append(
            Trajectory(
                model_name=full.name,
                labels=full.labels,
                face=face_set,
                replicate=rid,
                seed=config.seed,
                dt=dt,
                r=full.r,
                record_stride=stride,
                burn_in_record=burn_in_record,
                times=times[:end].copy(),
                log_states=log_rec[:end, b, :].copy(),
                lagged_states=lag_rec[:end, b, :].copy(),
                integrand=integ_rec[:end, b, :].copy(),
                growth=growth_rec[:end, b, :].copy(),
                final_window=final_windows.get(b, window_of(b, pos)),
                observables={key: arr[:end, b].copy() for key, arr in obs_rec.items()},
                simplex_defect=None if defect_rec is None else defect_rec[:end, b].copy(),
                divergence=divergences.get(b),
            )
        )
    logger.info(f"{full.name}: 積分が完了しました（発散 {len(divergences)}/{batch}）")
    return trajectories

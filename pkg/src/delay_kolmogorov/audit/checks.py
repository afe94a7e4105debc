"""
散逸性・増大条件・非退化性・Lyapunov関数の不等式の標本による監査

標本での監査は仮定を証明しない．レポートは「N 個の標本で違反なし」とだけ述べる．
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from ..errors import CertificateError
from ..model.kernel import DelayKernel
from ..model.spec import ModelSpec
from ..model.view import SegmentView, grid_position
from ..sdde.config import SimConfig, default_dt
from ..sdde.integrator import integrate_replicates
from ..sdde.segment import Segment, history_steps
from ..utils.numerics import rowsum, rowsum_squares
from .certificate import AssumptionCertificate, HFunction, LyapunovData
from .sampler import SampledSegments, SegmentSampler

logger = logging.getLogger(__name__)

MAX_ECHO = 5
SE_WIDTH = 4.0


@dataclass
class ViolationReport:
    """不等式 LHS ≤ RHS の標本ごとの余裕 LHS - RHS の要約"""

    assumption: str
    samples: int
    radius: float
    violations: int
    worst_margin: float
    worst_sample: Optional[Dict[str, Any]]
    nonfinite: int = 0
    nonfinite_samples: List[Dict[str, Any]] = field(default_factory=list)
    violating_samples: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    @property
    def statement(self) -> str:
        if self.passed:
            return f"no violation found over {self.samples} samples in radius {self.radius:g}"
        return f"{self.violations} violations over {self.samples} samples in radius {self.radius:g}"

    def to_dict(self) -> dict:
        return {
            "assumption": self.assumption,
            "samples": self.samples,
            "radius": self.radius,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "worst_sample": self.worst_sample,
            "nonfinite": self.nonfinite,
            "nonfinite_samples": self.nonfinite_samples,
            "violating_samples": self.violating_samples,
            "statement": self.statement,
        }


def _summarize(assumption: str, margins: np.ndarray, samples: SampledSegments, radius: float) -> ViolationReport:
    finite = np.isfinite(margins)
    violating = finite & (margins > 0)
    worst_margin = float(np.max(margins[finite])) if np.any(finite) else float("nan")
    worst = None
    if np.any(finite):
        idx = int(np.flatnonzero(finite)[np.argmax(margins[finite])])
        worst = samples.echo(idx)
    report = ViolationReport(
        assumption=assumption,
        samples=samples.count,
        radius=radius,
        violations=int(np.sum(violating)),
        worst_margin=worst_margin,
        worst_sample=worst,
        nonfinite=int(np.sum(~finite)),
        nonfinite_samples=[samples.echo(i) for i in np.flatnonzero(~finite)[:MAX_ECHO]],
        violating_samples=[
            dict(samples.echo(i), margin=float(margins[i])) for i in np.flatnonzero(violating)[:MAX_ECHO]
        ],
    )
    if report.nonfinite:
        logger.warning(f"{assumption}: 非有限な値の標本が {report.nonfinite} 個あります（監査は続行）")
    if report.passed:
        logger.info(f"{assumption}: {report.statement}")
    else:
        logger.warning(f"{assumption}: {report.statement}（最大余裕 {worst_margin:.6g}）")
    return report


def _coefficients(model: ModelSpec, view: SegmentView) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f, G, g²)．一般形なら g_i²，それ以外は Σ_j G_ij²"""
    f = model.drift(view)
    G = model.diffusion(view)
    if model.noise_scale is not None:
        g2 = model.noise_scale(view) ** 2
    else:
        g2 = rowsum_squares(G)
    return f, G, g2


def _lyapunov_core(c: np.ndarray, x: np.ndarray, f: np.ndarray, G: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(1 + cᵀx, Σc_i x_i f_i/(1+cᵀx) - ½ Σσ_ij c_i c_j x_i x_j g_i g_j/(1+cᵀx)²)"""
    cx = 1.0 + rowsum(c * x)
    present = x > 0
    weighted_f = np.where(present, c * x * f, 0.0)
    weighted_g = np.where(present[..., None], (c * x)[..., None] * G, 0.0)
    quadratic = rowsum(rowsum(np.swapaxes(weighted_g, -1, -2)) ** 2)
    return cx, rowsum(weighted_f) / cx - 0.5 * quadratic / cx**2


def _kernel_mean(view: SegmentView, kernel: DelayKernel, fn) -> np.ndarray:
    """∫ fn(φ(s)) μ(ds)"""
    out = None
    for lag, weight in kernel.atoms:
        term = weight * fn(view.lag(lag))
        out = term if out is None else out + term
    return out


def drift_margin(model: ModelSpec, cert: AssumptionCertificate, view: SegmentView) -> np.ndarray:
    """散逸性の不等式の LHS - RHS（正なら違反）"""
    x = view.now
    f, G, g2 = _coefficients(model, view)
    _, core = _lyapunov_core(cert.c_vector, x, f, G)
    with np.errstate(invalid="ignore"):
        lhs = core + cert.gamma_b * rowsum(np.abs(f) + g2)
    norm = np.sqrt(rowsum(x**2))
    rhs = (
        cert.a0 * (norm < cert.m)
        - cert.gamma_0
        - cert.a1 * cert.h(x)
        + cert.a2 * _kernel_mean(view, cert.kernel(model), cert.h)
    )
    return lhs - rhs


def check_drift_condition(
    model: ModelSpec, cert: AssumptionCertificate, sampler: SegmentSampler
) -> ViolationReport:
    """散逸性の不等式を標本セグメントで評価する"""
    cert.require_model(model)
    samples = sampler.draw(model)
    with np.errstate(all="ignore"):
        margins = drift_margin(model, cert, samples.view())
    return _summarize("drift-condition", margins, samples, sampler.radius)


def check_growth_condition(
    model: ModelSpec, cert: AssumptionCertificate, sampler: SegmentSampler
) -> ViolationReport:
    """係数の増大条件 (a) Σ|f|+Σg² ≤ K̃[h+∫h dμ] または (b) の両側の評価を標本で確かめる"""
    if cert.growth is None:
        raise CertificateError("証明書に増大条件 (growth) のデータがありません")
    cert.require_model(model)
    samples = sampler.draw(model)
    view = samples.view()
    growth = cert.growth
    with np.errstate(all="ignore"):
        f, _, g2 = _coefficients(model, view)
        total = rowsum(np.abs(f) + g2)
        if growth.kind == "a":
            upper = growth.k_tilde * (cert.h(view.now) + _kernel_mean(view, cert.kernel(model), cert.h))
            margins = total - upper
        else:
            kernel = cert.growth_kernel(model)
            upper = growth.b2 * (growth.h1(view.now) + _kernel_mean(view, kernel, growth.h1))
            lower = growth.b1 * growth.h1(view.now)
            margins = np.maximum(total - upper, lower - total)
    return _summarize(f"growth-condition-{growth.kind}", margins, samples, sampler.radius)


@dataclass
class SpectrumReport:
    """(g_i g_j σ_ij) の最小固有値と，D_{ε,R} での (x_i x_j σ_ij g_i g_j)^{-1} のノルム

    単体上のモデルでは雑音が接空間に沿うので，両方の行列を接空間に制限して調べる（space="simplex-tangent"）．
    """

    samples: int
    radius: float
    epsilon: float
    min_eigenvalue: float
    pd_violations: int
    worst_sample: Optional[Dict[str, Any]]
    max_inverse_norm: float
    singular: int
    inverse_worst_sample: Optional[Dict[str, Any]]
    violating_samples: List[Dict[str, Any]] = field(default_factory=list)
    space: str = "full"

    @property
    def passed(self) -> bool:
        return self.pd_violations == 0 and self.singular == 0

    def to_dict(self) -> dict:
        return {
            "assumption": "nondegeneracy",
            "space": self.space,
            "samples": self.samples,
            "radius": self.radius,
            "epsilon": self.epsilon,
            "min_eigenvalue": self.min_eigenvalue,
            "pd_violations": self.pd_violations,
            "worst_sample": self.worst_sample,
            "max_inverse_norm": self.max_inverse_norm,
            "singular": self.singular,
            "inverse_worst_sample": self.inverse_worst_sample,
            "violating_samples": self.violating_samples,
            "statement": (
                f"no violation found over {self.samples} samples in radius {self.radius:g}"
                if self.passed
                else f"{self.pd_violations + self.singular} violations over {self.samples} samples"
            ),
        }


def _smallest_eigenvalues(matrices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """最小固有値と，特異とみなす閾値（行列の大きさに対する相対値）"""
    finite = np.all(np.isfinite(matrices), axis=(-1, -2))
    safe = np.where(finite[..., None, None], matrices, 0.0)
    eig = np.linalg.eigvalsh(safe)
    scale = np.max(np.abs(eig), axis=-1)
    return np.where(finite, eig[..., 0], np.nan), 1e-12 * np.maximum(scale, 1e-300)


def _restrict_to_complement(matrices: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """各行列を normal の直交補空間に制限する（Householder 反射の2列目以降を基底に使う）"""
    n = normals.shape[-1]
    u = normals / np.maximum(np.linalg.norm(normals, axis=-1, keepdims=True), 1e-300)
    sign = np.where(u[..., :1] >= 0, 1.0, -1.0)
    v = u + sign * np.eye(n)[0]
    reflector = np.eye(n) - 2.0 * v[..., :, None] * v[..., None, :] / np.sum(v * v, axis=-1)[..., None, None]
    basis = reflector[..., :, 1:]
    return np.einsum("...ia,...ij,...jb->...ab", basis, matrices, basis)


def check_nondegeneracy(
    model: ModelSpec, sampler: SegmentSampler, epsilon: float = 0.1, radius: float = 10.0
) -> SpectrumReport:
    """拡散行列の正定値性と，内部の有界集合での逆行列の一様有界性を標本で調べる

    単体上のモデル（レプリケータ）では G G^T は x 方向に，x_i x_j (G G^T)_ij は (1,…,1) 方向に
    必ず退化するので，それぞれの直交補空間で調べる．
    """
    if epsilon <= 0 or radius <= 0:
        raise ValueError(f"ε と R は正: ε={epsilon}, R={radius}")
    base = model if model.base is None else model.base
    on_simplex = base.simplex_total is not None
    samples = sampler.draw(model)
    with np.errstate(all="ignore"):
        G = model.diffusion(samples.view())
        covariance = np.einsum("...im,...jm->...ij", G, G)
        if on_simplex:
            covariance = _restrict_to_complement(covariance, samples.now)
        eig, tol = _smallest_eigenvalues(covariance)
    finite = np.isfinite(eig)
    bad = finite & (eig <= tol)
    worst = None
    min_eig = float("nan")
    if np.any(finite):
        idx = int(np.flatnonzero(finite)[np.argmin(eig[finite])])
        min_eig = float(eig[idx])
        worst = samples.echo(idx)

    interior = sampler.draw(model, floor=epsilon, radius=radius)
    with np.errstate(all="ignore"):
        G_in = model.diffusion(interior.view())
        scaled = interior.now[..., :, None] * G_in
        matrices = np.einsum("...im,...jm->...ij", scaled, scaled)
        if on_simplex:
            matrices = _restrict_to_complement(matrices, np.ones_like(interior.now))
        eig_in, tol_in = _smallest_eigenvalues(matrices)
    ok = np.isfinite(eig_in) & (eig_in > tol_in)
    singular = int(np.sum(~ok))
    inverse_norms = np.where(ok, 1.0 / np.where(ok, eig_in, 1.0), np.inf)
    inv_idx = int(np.argmax(inverse_norms))
    report = SpectrumReport(
        samples=samples.count,
        radius=radius,
        epsilon=epsilon,
        min_eigenvalue=min_eig,
        pd_violations=int(np.sum(bad)),
        worst_sample=worst,
        max_inverse_norm=float(inverse_norms[inv_idx]),
        singular=singular,
        inverse_worst_sample=interior.echo(inv_idx),
        violating_samples=[samples.echo(i) for i in np.flatnonzero(bad)[:MAX_ECHO]]
        + [interior.echo(i) for i in np.flatnonzero(~ok)[:MAX_ECHO]],
        space="simplex-tangent" if on_simplex else "full",
    )
    if report.passed:
        logger.info(f"nondegeneracy: 最小固有値 {min_eig:.6g}，逆行列ノルムの最大 {report.max_inverse_norm:.6g}")
    else:
        logger.warning(f"nondegeneracy: 正定値性の違反 {report.pd_violations}，特異 {singular}")
    return report


def _v_parts(
    cert: AssumptionCertificate,
    values: np.ndarray,
    dt: float,
    kernel: DelayKernel,
    gamma: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """ln[(1+cᵀx)Πx_i^{ρ_i}] と ∫μ(ds)∫_s^0 e^{γ(u-s)}h(φ(u))du（台形則）を (N,) で返す

    values は (N, L+1, n)．
    """
    x = values[:, -1, :]
    rho = cert.rho_vector
    with np.errstate(divide="ignore"):
        log_prefactor = np.log1p(rowsum(cert.c_vector * x))
        for i in np.flatnonzero(rho != 0):
            log_prefactor = log_prefactor + rho[i] * np.log(x[:, i])
    steps = values.shape[1] - 1
    h_values = cert.h(values)
    grid = -(steps - np.arange(steps + 1)) * dt
    inner = np.zeros(values.shape[0])
    for lag, weight in kernel.atoms:
        if lag == 0:
            continue
        q, frac = grid_position(lag, dt)
        start = steps - q
        if start < 0 or (frac > 0 and start - 1 < 0):
            raise ValueError(f"μ のアトム lag={lag} がセグメントの範囲 r={steps * dt:g} を超えています")
        u = grid[start:]
        hv = h_values[:, start:]
        if frac > 0:
            edge = (1.0 - frac) * values[:, start, :] + frac * values[:, start - 1, :]
            u = np.concatenate([[-lag], u])
            hv = np.concatenate([cert.h(edge)[:, None], hv], axis=1)
        inner = inner + weight * trapezoid(np.exp(gamma * (u + lag)) * hv, x=u, axis=-1)
    return log_prefactor, inner


def _log_v(cert: AssumptionCertificate, values: np.ndarray, dt: float, kernel: DelayKernel, gamma: float) -> np.ndarray:
    log_prefactor, inner = _v_parts(cert, values, dt, kernel, gamma)
    return log_prefactor + cert.a2 * inner


def evaluate_V(cert: AssumptionCertificate, segment: Segment, kernel: Optional[DelayKernel] = None) -> float:
    """V_ρ(φ) = (1+cᵀx)Πx_i^{ρ_i} exp{A_2 ∫μ(ds)∫_s^0 e^{γ(u-s)}h(φ(u))du}

    Args:
        cert: lyapunov (γ, ρ) を含む証明書
        segment: 評価するセグメント（格子上の台形則）
        kernel: μ．省略時は証明書の mu，それも無ければ segment.r の単一アトム
    """
    if cert.lyapunov is None:
        raise CertificateError("証明書に lyapunov (γ, ρ, p_0) がありません")
    rho = cert.rho_vector
    if len(rho) != segment.n:
        raise CertificateError(f"c の長さ {len(rho)} がセグメントの次元 {segment.n} と一致しません")
    zero = segment.now == 0
    if np.any(zero & (rho < 0)):
        raise ValueError(
            f"ρ_i < 0 の種 {np.flatnonzero(zero & (rho < 0)).tolist()} が φ_i(0) = 0 のため V_ρ が無限大です"
        )
    if kernel is None:
        kernel = DelayKernel.from_atoms(cert.mu) if cert.mu is not None else DelayKernel.single(segment.r)
    log_v = _log_v(cert, segment.values.T[None, ...], segment.dt, kernel, cert.lyapunov.gamma)
    return float(np.exp(log_v[0]))


@dataclass
class GeneratorReport:
    """(E V^{p0}(X_Δ) - V^{p0}(φ))/Δ と上界の比較"""

    delta: float
    samples: int
    v0: float
    generator: float
    se: float
    bound: float
    margin: float
    tolerance: float

    @property
    def holds(self) -> bool:
        return self.margin <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "assumption": "generator-bound",
            "delta": self.delta,
            "samples": self.samples,
            "v0": self.v0,
            "generator": self.generator,
            "se": self.se,
            "bound": self.bound,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "holds": self.holds,
        }


def check_generator_bound(
    model: ModelSpec,
    cert: AssumptionCertificate,
    segment: Segment,
    delta: Optional[float] = None,
    samples: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> GeneratorReport:
    """LV_ρ^{p0}(φ) の上界を1ステップのモンテカルロで確かめる

    Δ = dt の1ステップ推定は O(Δ) の偏りを持つので，許容幅は 4SE + Δ(|生成作用素| + |上界|)．
    """
    data = cert.require_lyapunov(model)
    a_eff = cert.generator_constant(model)
    kernel = cert.kernel(model)
    dt = default_dt(model.r) if delta is None else float(delta)
    segment = segment.resample(dt, history_steps(model.r, dt))
    face = [i for i in range(model.n) if segment.now[i] > 0]
    if np.any((segment.now == 0) & (cert.rho_vector < 0)):
        raise ValueError("ρ_i < 0 の種が φ_i(0) = 0 のため V_ρ が無限大です")

    config = SimConfig(
        horizon=dt, seed=seed, dt=dt, burn_in=0.0, replicates=samples, record_stride=1, batches=2
    )
    trajectories = integrate_replicates(model, segment, config, face=face, threads=threads)
    after = np.stack([t.final_segment().values.T for t in trajectories if not t.diverged])
    v_next = np.exp(data.p0 * _log_v(cert, after, dt, kernel, data.gamma))
    values = segment.values.T[None, ...]
    log_prefactor, inner = _v_parts(cert, values, dt, kernel, data.gamma)
    v0 = float(np.exp(data.p0 * (log_prefactor[0] + cert.a2 * inner[0])))

    mean = float(np.mean(v_next))
    se = float(np.std(v_next, ddof=1) / np.sqrt(len(v_next))) if len(v_next) > 1 else 0.0
    generator = (mean - v0) / dt
    se_generator = se / dt

    view = SegmentView.from_grid(values, dt)
    f, _, g2 = _coefficients(model, view)
    x = view.now
    norm = float(np.sqrt(np.sum(x**2)))
    bracket = (
        cert.a0 * (norm < cert.m)
        - cert.gamma_0
        - a_eff * float(cert.h(x)[0])
        - cert.a2 * data.gamma * float(inner[0])
        - 0.5 * cert.gamma_b * float(rowsum(np.abs(f) + g2)[0])
    )
    bound = data.p0 * v0 * bracket
    margin = generator - bound
    tolerance = SE_WIDTH * se_generator + dt * (abs(generator) + abs(bound))
    report = GeneratorReport(
        delta=dt,
        samples=len(v_next),
        v0=v0,
        generator=generator,
        se=se_generator,
        bound=bound,
        margin=margin,
        tolerance=tolerance,
    )
    if not report.holds:
        logger.warning(f"generator-bound: 余裕 {margin:.6g} が許容幅 {tolerance:.6g} を超えています")
    return report


@dataclass
class MomentReport:
    """E V^{p0}(X_t) ≤ V^{p0}(φ)e^{-γ_0 p_0 t} + M̄ の軌道に沿った確認"""

    replicates: int
    times: int
    v0: float
    m_bar: float
    worst_excess: float
    worst_time: float
    violations: int
    notes: List[str] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "assumption": "moment-bound",
            "replicates": self.replicates,
            "times": self.times,
            "v0": self.v0,
            "m_bar": self.m_bar,
            "worst_excess": self.worst_excess,
            "worst_time": self.worst_time,
            "violations": self.violations,
            "holds": self.holds,
            "notes": list(self.notes),
        }


def check_moment_bound(
    model: ModelSpec,
    cert: AssumptionCertificate,
    initial: Segment,
    config: SimConfig,
    threads: int = 1,
) -> MomentReport:
    """ρ ≥ 0 のとき E V^{p0}(X_t) の上界を config.replicates 本の軌道で確かめる

    M̄ = (A_0/γ_0) sup V^{p0} の sup は，観測したセグメントのうち C_{V,M} に入るものでとる．
    評価は config.record_stride ステップごと．
    """
    data = cert.require_lyapunov(model)
    if np.any(cert.rho_vector < 0):
        raise CertificateError(f"モーメントの上界には ρ ≥ 0 が必要です: {cert.rho_vector.tolist()}")
    kernel = cert.kernel(model)
    fine = config.model_copy(update={"record_stride": 1, "burn_in": 0.0})
    dt = fine.resolve_dt(model.r)
    steps_r = history_steps(model.r, dt)
    start = initial.resample(dt, steps_r).values.T
    trajectories = integrate_replicates(model, initial, fine, threads=threads)
    notes: List[str] = []
    kept = [t for t in trajectories if not t.diverged]
    if len(kept) < len(trajectories):
        notes.append(f"発散したレプリケート {len(trajectories) - len(kept)} 個を除外しました")
    if not kept:
        raise ValueError("モーメントの確認に使えるレプリケートがありません（すべて発散しました）")

    every = config.record_stride
    v_paths = []
    log_prefactors = []
    inners = []
    for trajectory in kept:
        path = np.concatenate([start[:-1], trajectory.states], axis=0)
        windows = np.lib.stride_tricks.sliding_window_view(path, steps_r + 1, axis=0)[::every]
        windows = np.ascontiguousarray(np.swapaxes(windows, -1, -2))
        log_prefactor, inner = _v_parts(cert, windows, dt, kernel, data.gamma)
        log_prefactors.append(log_prefactor)
        inners.append(inner)
        v_paths.append(np.exp(data.p0 * (log_prefactor + cert.a2 * inner)))
    v = np.stack(v_paths)
    times = kept[0].times[::every]
    mean = np.mean(v, axis=0)
    se = np.std(v, axis=0, ddof=1) / np.sqrt(len(kept)) if len(kept) > 1 else np.zeros_like(mean)

    in_set = []
    for trajectory, inner, v_path in zip(kept, inners, v_paths):
        norms = np.sqrt(np.sum(trajectory.states[::every] ** 2, axis=1))
        member = (cert.a2 * data.gamma * inner <= cert.a0) & (norms <= cert.m)
        in_set.extend(v_path[member].tolist())
    if in_set:
        m_bar = cert.a0 / cert.gamma_0 * float(np.max(in_set))
    else:
        m_bar = 0.0
        notes.append("C_{V,M} に入る観測セグメントが無いため M̄ = 0 としました")

    v0 = float(v[0, 0])
    bound = v0 * np.exp(-cert.gamma_0 * data.p0 * times) + m_bar
    excess = mean - bound - SE_WIDTH * se
    worst = int(np.argmax(excess))
    report = MomentReport(
        replicates=len(kept),
        times=len(times),
        v0=v0,
        m_bar=m_bar,
        worst_excess=float(excess[worst]),
        worst_time=float(times[worst]),
        violations=int(np.sum(excess > 0)),
        notes=notes,
    )
    logger.info(f"moment-bound: 違反 {report.violations}/{report.times}（M̄={m_bar:.6g}）")
    return report


def check_extinction_bounds(
    model: ModelSpec, cert: AssumptionCertificate, sampler: SegmentSampler
) -> List[ViolationReport]:
    """境界近くの制御に使う2つの不等式（ドリフト側と2次変動側）を標本で評価する

    増大条件 (b) のデータがあれば h, μ の代わりに h_1, μ_1 を使う．
    """
    ext = cert.extinction
    if ext is None:
        raise CertificateError("証明書に extinction (p_2, B_0, B_1, B_2, B_3) がありません")
    cert.require_model(model)
    if cert.growth is not None and cert.growth.kind == "b":
        h: HFunction = cert.growth.h1
        kernel = cert.growth_kernel(model)
    else:
        h, kernel = cert.h, cert.kernel(model)
    c = cert.c_vector
    samples = sampler.draw(model)
    view = samples.view()
    with np.errstate(all="ignore"):
        f, G, g2 = _coefficients(model, view)
        cx, core = _lyapunov_core(c, view.now, f, G)
        weight = cx**ext.p2
        delayed = _kernel_mean(view, kernel, lambda y: (1.0 + rowsum(c * y)) ** ext.p2 * h(y))
        drift_side = weight * core - (ext.b0 - ext.b1 * weight * h(view.now) + ext.b2 * delayed)
        volatility_side = weight**2 * rowsum(g2) - ext.b3 * (weight * h(view.now) + delayed)
    return [
        _summarize("extinction-drift", drift_side, samples, sampler.radius),
        _summarize("extinction-volatility", volatility_side, samples, sampler.radius),
    ]


@dataclass
class LipschitzReport:
    """有界集合上の差分商 |f(φ)-f(ψ)|/‖φ-ψ‖ の最大値"""

    samples: int
    radius: float
    perturbation: float
    drift_constant: float
    diffusion_constant: float
    worst_drift_sample: Optional[Dict[str, Any]]
    worst_diffusion_sample: Optional[Dict[str, Any]]
    nonfinite: int

    def to_dict(self) -> dict:
        return {
            "assumption": "local-lipschitz",
            "samples": self.samples,
            "radius": self.radius,
            "perturbation": self.perturbation,
            "drift_constant": self.drift_constant,
            "diffusion_constant": self.diffusion_constant,
            "worst_drift_sample": self.worst_drift_sample,
            "worst_diffusion_sample": self.worst_diffusion_sample,
            "nonfinite": self.nonfinite,
        }


def check_lipschitz(model: ModelSpec, sampler: SegmentSampler, perturbation: float = 1e-3) -> LipschitzReport:
    """各標本を少しずらした組で f と G の差分商を求める（局所Lipschitz定数の標本推定）"""
    if perturbation <= 0:
        raise ValueError(f"perturbation は正: {perturbation}")
    samples = sampler.draw(model)
    rng = np.random.Generator(np.random.Philox(sampler.seed + 1))
    mask = (model if model.base is None else model.base).face_mask(sampler.face)
    shifted = np.maximum(samples.values + perturbation * rng.uniform(-1.0, 1.0, size=samples.values.shape), 0.0)
    shifted = np.where(mask, shifted, 0.0)
    other = SampledSegments(values=shifted, dt=samples.dt)
    distance = np.max(np.sqrt(np.sum((shifted - samples.values) ** 2, axis=-1)), axis=-1)
    with np.errstate(all="ignore"):
        f1, G1 = model.drift(samples.view()), model.diffusion(samples.view())
        f2, G2 = model.drift(other.view()), model.diffusion(other.view())
        ratio_f = np.sqrt(rowsum((f1 - f2) ** 2)) / distance
        ratio_g = np.sqrt(np.sum((G1 - G2) ** 2, axis=(-1, -2))) / distance
    finite = np.isfinite(ratio_f) & np.isfinite(ratio_g) & (distance > 0)
    if not np.any(finite):
        raise ValueError("有限な差分商が得られませんでした")
    idx_f = int(np.flatnonzero(finite)[np.argmax(ratio_f[finite])])
    idx_g = int(np.flatnonzero(finite)[np.argmax(ratio_g[finite])])
    report = LipschitzReport(
        samples=samples.count,
        radius=sampler.radius,
        perturbation=perturbation,
        drift_constant=float(ratio_f[idx_f]),
        diffusion_constant=float(ratio_g[idx_g]),
        worst_drift_sample=samples.echo(idx_f),
        worst_diffusion_sample=samples.echo(idx_g),
        nonfinite=int(np.sum(~finite)),
    )
    logger.info(
        f"local-lipschitz: f の差分商の最大 {report.drift_constant:.6g}，G の差分商の最大 {report.diffusion_constant:.6g}"
    )
    return report


@dataclass
class CertificateSearch:
    """格子探索の結果．certificate は標本上で違反の無かった候補のうち最良のもの"""

    certificate: Optional[AssumptionCertificate]
    candidates: int
    feasible: int
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "certificate": None if self.certificate is None else self.certificate.model_dump(mode="json"),
            "candidates": self.candidates,
            "feasible": self.feasible,
            "notes": list(self.notes),
        }


def grid_search_certificate(
    model: ModelSpec,
    sampler: SegmentSampler,
    c: Optional[Sequence[float]] = None,
    kappa1s: Iterable[float] = (0.0, 0.1, 0.5),
    kappa2s: Iterable[float] = (0.0, 1e-3, 1e-2, 1e-1),
    gamma_bs: Iterable[float] = (1e-3, 1e-2, 5e-2),
    a1s: Iterable[float] = (0.1, 0.5, 1.0, 2.0),
    a2_ratio: float = 0.5,
    gamma_0: float = 0.01,
) -> CertificateSearch:
    """(h の係数, γ_b, A_1) の格子と M の候補から散逸性の証明書を探す

    A_2 = a2_ratio·A_1．各候補について |x| ≥ M の標本で違反が無いものを残し，
    A_0 は |x| < M の標本での最大の不足分に余裕をもたせて決める．M の小さいもの，次に A_0 の小さいものを選ぶ．
    見つかった証明書は標本に対する最善の推定であり，仮定の検証ではない．
    """
    if not 0 < a2_ratio < 1:
        raise ValueError(f"a2_ratio は (0, 1): {a2_ratio}")
    base = model if model.base is None else model.base
    c_vec = np.ones(base.n) if c is None else np.asarray(c, dtype=float)
    kernel = DelayKernel.single(base.r)
    samples = sampler.draw(base)
    view = samples.view()
    with np.errstate(all="ignore"):
        f, G, g2 = _coefficients(base, view)
        _, core = _lyapunov_core(c_vec, view.now, f, G)
        spread = rowsum(np.abs(f) + g2)
    norm_now = np.sqrt(rowsum(view.now**2))
    lag_norms = [(w, np.sqrt(rowsum(view.lag(lag) ** 2))) for lag, w in kernel.atoms]
    finite = np.isfinite(core) & np.isfinite(spread)
    radius = sampler.radius
    ms = sorted({radius * k for k in (0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0)} | {1.01 * float(np.max(norm_now))})

    best: Optional[Tuple[float, float, Dict[str, float]]] = None
    candidates = 0
    feasible = 0
    for kappa1 in kappa1s:
        for kappa2 in kappa2s:
            h_now = 1.0 + kappa1 * norm_now + kappa2 * norm_now**2
            h_mu = sum(w * (1.0 + kappa1 * nl + kappa2 * nl**2) for w, nl in lag_norms)
            for gamma_b in gamma_bs:
                for a1 in a1s:
                    a2 = a2_ratio * a1
                    shortfall = core + gamma_b * spread + gamma_0 + a1 * h_now - a2 * h_mu
                    for m in ms:
                        candidates += 1
                        outside = finite & (norm_now >= m)
                        if np.any(shortfall[outside] > 0):
                            continue
                        feasible += 1
                        inside = finite & (norm_now < m)
                        worst = float(np.max(shortfall[inside])) if np.any(inside) else 0.0
                        a0 = 1.1 * max(worst, 0.0) + 1e-3
                        key = (m, a0)
                        if best is None or key < best[:2]:
                            best = (m, a0, dict(kappa1=kappa1, kappa2=kappa2, gamma_b=gamma_b, a1=a1, a2=a2))
                        break

    notes = ["best-effort certificate from a coarse grid search over sampled segments"]
    if best is None:
        logger.warning(f"{base.name}: 格子探索で証明書が見つかりませんでした（候補 {candidates}）")
        return CertificateSearch(None, candidates, feasible, notes)
    m, a0, chosen = best
    if m > radius:
        notes.append(f"M={m:.6g} が標本の半径 {radius:g} を超えています（指示関数の外側は未確認）")
    cert = AssumptionCertificate(
        c=c_vec.tolist(),
        gamma_b=chosen["gamma_b"],
        gamma_0=gamma_0,
        a0=a0,
        a1=chosen["a1"],
        a2=chosen["a2"],
        m=m,
        h=HFunction(kappa1=chosen["kappa1"], kappa2=chosen["kappa2"]),
    )
    bounds = cert.lyapunov_bounds(base)
    # A_1 - A_2 e^{γr} > 0 を保つ γ
    gamma_cap = np.log(chosen["a1"] / chosen["a2"]) / base.r if base.r > 0 else np.inf
    gamma = float(min(chosen["gamma_b"], gamma_cap) / 2)
    cert = cert.model_copy(
        update={"lyapunov": LyapunovData(gamma=gamma, rho=[0.0] * base.n, p0=0.5 * bounds["p0_bound"])}
    )
    logger.info(
        f"{base.name}: 証明書候補を選びました（M={m:.6g}，A_0={a0:.6g}，A_1={chosen['a1']}，γ_b={chosen['gamma_b']}）"
    )
    return CertificateSearch(cert, candidates, feasible, notes)

"""
応用例の5つの組み込みモデル（競争LV，捕食者-被食者，レプリケータ，SIR，ケモスタット）

パラメータはpydanticモデルで受け取り，build_zoo_model で ModelSpec を組み立てる．
遅延項は既定で単一遅延 X(t-r)．kernel を与えると Σ_k w_k X(t-lag_k) に置き換わる．
"""

from __future__ import annotations

import logging
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ModelValidationError
from ..utils.numerics import matvec, rowsum
from .kernel import DelayKernel, NoiseSpec
from .spec import ModelSpec
from .view import SegmentView

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]


class ZooParams(BaseModel):
    """組み込みモデルのパラメータの共通部分"""

    model_config = ConfigDict(extra="forbid", frozen=True, arbitrary_types_allowed=True)

    r: float = Field(1.0, ge=0, description="遅延時間 r")
    kernel: Optional[List[Tuple[float, float]]] = Field(
        None, description="遅延測度 μ のアトム [(lag, weight), ...]．省略時は [(r, 1)]"
    )
    gamma: Optional[List[List[float]]] = Field(None, description="雑音行列 Γ（E = Γ^T B）")
    sigma: Optional[List[List[float]]] = Field(None, description="共分散 Σ = Γ^T Γ（Γの代わりに指定可）")

    @model_validator(mode="after")
    def _check_noise_and_kernel(self):
        if self.gamma is not None and self.sigma is not None:
            raise ValueError("gamma と sigma はどちらか一方だけを指定してください")
        if self.kernel is not None:
            for lag, _ in self.kernel:
                if lag < 0:
                    raise ValueError(f"遅延(lag)は非負でなければなりません: {lag}")
                if lag > self.r + 1e-12:
                    raise ValueError(f"遅延 {lag} が r={self.r} を超えています")
        return self

    def delay_kernel(self) -> DelayKernel:
        if self.kernel is None:
            return DelayKernel.single(self.r)
        return DelayKernel.from_atoms(self.kernel)

    def noise_spec(self, dim: int) -> NoiseSpec:
        if self.gamma is not None:
            noise = NoiseSpec(gamma=np.asarray(self.gamma, dtype=float))
        elif self.sigma is not None:
            noise = NoiseSpec.from_sigma(self.sigma)
        else:
            noise = NoiseSpec(gamma=np.eye(dim))
        if noise.dim != dim:
            raise ModelValidationError(f"雑音行列の次元 {noise.dim} が状態次元 {dim} と一致しません")
        return noise


def _square(name: str, matrix: List[List[float]], n: int) -> np.ndarray:
    arr = np.asarray(matrix, dtype=float)
    if arr.shape != (n, n):
        raise ValueError(f"{name} の形状が ({n}, {n}) ではありません: {arr.shape}")
    return arr


def _check_interactions(b: np.ndarray, b_hat: np.ndarray) -> None:
    """b_ii > 0 と b̂_ij > -b_ii（b̂は負でもよい）"""
    n = b.shape[0]
    for i in range(n):
        if b[i, i] <= 0:
            raise ValueError(f"種内競争 b_{i + 1}{i + 1} は正でなければなりません: {b[i, i]}")
        for j in range(n):
            if b_hat[i, j] <= -b[i, i]:
                raise ValueError(
                    f"b̂_{i + 1}{j + 1}={b_hat[i, j]} は -b_{i + 1}{i + 1}={-b[i, i]} より大きくなければなりません"
                )


class CompetitiveLVParams(ZooParams):
    """確率遅延Lotka-Volterra競争系"""

    a: List[float] = Field(description="内的増殖率 a_i")
    b: List[List[float]] = Field(description="瞬時の競争係数 b_ij")
    b_hat: List[List[float]] = Field(description="遅延競争係数 b̂_ij（負も可）")

    @model_validator(mode="after")
    def _check(self):
        n = len(self.a)
        b = _square("b", self.b, n)
        b_hat = _square("b_hat", self.b_hat, n)
        if self.a[0] <= 0:
            raise ValueError(f"a_1 は正でなければなりません: {self.a[0]}")
        _check_interactions(b, b_hat)
        return self


class PredatorPreyParams(ZooParams):
    """被食者1種（添字0）と捕食者1〜2種の確率遅延LV系"""

    a: List[float] = Field(description="a_1: 被食者の増殖率，a_i (i≥2): 捕食者の死亡率（正の値で指定）")
    b: List[List[float]] = Field(description="相互作用係数 b_ij（符号は方程式側で付与）")
    b_hat: List[List[float]] = Field(description="遅延相互作用係数 b̂_ij")

    @model_validator(mode="after")
    def _check(self):
        n = len(self.a)
        if n not in (2, 3):
            raise ValueError(f"捕食者-被食者モデルは2種または3種です: {n}")
        b = _square("b", self.b, n)
        b_hat = _square("b_hat", self.b_hat, n)
        if self.a[0] <= 0:
            raise ValueError(f"被食者の増殖率 a_1 は正でなければなりません: {self.a[0]}")
        if any(ai <= 0 for ai in self.a[1:]):
            raise ValueError(f"捕食者の死亡率は正でなければなりません: {self.a[1:]}")
        _check_interactions(b, b_hat)
        return self


class ReplicatorParams(ZooParams):
    """社会的遅延をもつ確率レプリケータ方程式（独立なB_i，スカラーσ_i）"""

    total: float = Field(1.0, gt=0, description="個体群サイズ X（単体 Δ_X の和）")
    sigmas: List[float] = Field(description="各戦略の雑音強度 σ_i ≥ 0")
    payoff_matrix: Optional[List[List[float]]] = Field(
        None, description="線形利得 f(x) = A x の行列 A"
    )
    payoffs: Optional[Callable[[np.ndarray], np.ndarray]] = Field(
        None, exclude=True, description="利得関数 f: (..., n) -> (..., n)（Pythonからのみ）"
    )

    @model_validator(mode="after")
    def _check(self):
        n = len(self.sigmas)
        if n < 2:
            raise ValueError(f"戦略数は2以上: {n}")
        if any(s < 0 for s in self.sigmas):
            raise ValueError(f"σ_i は非負でなければなりません: {self.sigmas}")
        if self.gamma is not None or self.sigma is not None:
            raise ValueError("レプリケータの雑音は sigmas で指定します（相関雑音は非対応）")
        if self.payoff_matrix is None and self.payoffs is None:
            raise ValueError("payoff_matrix または payoffs のどちらかが必要です")
        if self.payoff_matrix is not None:
            _square("payoff_matrix", self.payoff_matrix, n)
        return self

    def payoff_function(self) -> ArrayFn:
        if self.payoffs is not None:
            return self.payoffs
        matrix = np.asarray(self.payoff_matrix, dtype=float)
        return lambda x: matvec(matrix, x)


Incidence = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class SIRParams(ZooParams):
    """確率遅延SIRモデル（線形または一般の発生率）"""

    a: float = Field(gt=0, description="加入率 a")
    b1: float = Field(gt=0, description="感受性者の死亡率 b_1")
    b2: float = Field(gt=0, description="感染者の死亡率 b_2")
    c1: float = Field(gt=0, description="瞬時の発生率係数 c_1")
    c2: float = Field(gt=0, description="遅延の発生率係数 c_2")
    incidence: Literal["linear", "holling2", "beddington_deangelis"] = Field(
        "linear", description="発生率の族"
    )
    handling: float = Field(0.0, ge=0, description="Holling II の飽和係数 h")
    m1: float = Field(0.0, ge=0, description="Beddington-DeAngelis の S 係数")
    m2: float = Field(0.0, ge=0, description="Beddington-DeAngelis の I 係数")
    f1: Optional[Incidence] = Field(None, exclude=True, description="S式の一般発生率 f_1（Pythonのみ）")
    f2: Optional[Incidence] = Field(None, exclude=True, description="I式の一般発生率 f_2（Pythonのみ）")

    @model_validator(mode="after")
    def _check(self):
        if (self.f1 is None) != (self.f2 is None):
            raise ValueError("一般発生率は f1 と f2 を両方指定してください")
        return self

    @property
    def is_linear(self) -> bool:
        return self.f1 is None and self.incidence == "linear"

    def incidence_functions(self) -> Tuple[Incidence, Incidence]:
        """(f_1, f_2)．引数は (S(0), S(-r), I(0), I(-r))"""
        if self.f1 is not None and self.f2 is not None:
            return self.f1, self.f2
        c1, c2 = self.c1, self.c2
        if self.incidence == "linear":

            def f(s, s_r, i, i_r):
                return c1 * s + c2 * s_r

        elif self.incidence == "holling2":
            h = self.handling

            def f(s, s_r, i, i_r):
                return c1 * s / (1.0 + h * s) + c2 * s_r / (1.0 + h * s_r)

        else:
            m1, m2 = self.m1, self.m2

            def f(s, s_r, i, i_r):
                return c1 * s / (1.0 + m1 * s + m2 * i) + c2 * s_r / (1.0 + m1 * s_r + m2 * i_r)

        return f, f


class MonodUptake(BaseModel):
    """Monod型の取り込み p(S) = m S / (k + S)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    m: float = Field(gt=0, description="最大取り込み率")
    k: float = Field(gt=0, description="半飽和定数")


class ChemostatParams(ZooParams):
    """単一栄養をめぐる n 種の微生物の確率遅延ケモスタット（状態は (S, x_1, ..., x_n)）"""

    a: float = Field(ge=0, lt=1, description="栄養の遅延再循環係数 0 ≤ a < 1")
    uptake: Optional[List[MonodUptake]] = Field(None, description="各種の取り込み関数（Monod）")
    uptake_functions: Optional[List[Callable[[np.ndarray], np.ndarray]]] = Field(
        None, exclude=True, description="取り込み関数 p_i(S)（Pythonのみ）"
    )

    @model_validator(mode="after")
    def _check(self):
        if (self.uptake is None) == (self.uptake_functions is None):
            raise ValueError("uptake と uptake_functions のどちらか一方を指定してください")
        return self

    @property
    def consumers(self) -> int:
        return len(self.uptake) if self.uptake is not None else len(self.uptake_functions)

    def uptake_list(self) -> List[ArrayFn]:
        if self.uptake_functions is not None:
            return list(self.uptake_functions)
        return [(lambda u: (lambda s: u.m * s / (u.k + s)))(u) for u in self.uptake]


ZOO_PARAMS: Dict[str, Type[ZooParams]] = {
    "competitive_lv": CompetitiveLVParams,
    "predator_prey": PredatorPreyParams,
    "replicator": ReplicatorParams,
    "sir": SIRParams,
    "chemostat": ChemostatParams,
}


def _ones_like_now(view: SegmentView) -> np.ndarray:
    return np.ones_like(view.now)


def _build_competitive_lv(p: CompetitiveLVParams) -> ModelSpec:
    n = len(p.a)
    a = np.asarray(p.a, dtype=float)
    b = np.asarray(p.b, dtype=float)
    b_hat = np.asarray(p.b_hat, dtype=float)
    kernel = p.delay_kernel()

    def drift(view: SegmentView) -> np.ndarray:
        return a - matvec(b, view.now) - matvec(b_hat, view.delayed(kernel))

    return ModelSpec.from_kolmogorov(
        name="competitive_lv",
        n=n,
        r=p.r,
        drift=drift,
        g=_ones_like_now,
        noise=p.noise_spec(n),
        kernels=(kernel,),
        params=p,
    )


def _build_predator_prey(p: PredatorPreyParams) -> ModelSpec:
    n = len(p.a)
    # 被食者は +a_1 - Σ b_1j x_j，捕食者は -a_i + b_i1 x_1 - b̂_i1 x_1(t-r) - Σ_{j≥2} b_ij x_j
    growth = np.array([p.a[0]] + [-ai for ai in p.a[1:]], dtype=float)
    sign = -np.ones((n, n))
    sign[1:, 0] = 1.0
    b_signed = sign * np.asarray(p.b, dtype=float)
    b_hat_signed = -np.asarray(p.b_hat, dtype=float)
    kernel = p.delay_kernel()

    def drift(view: SegmentView) -> np.ndarray:
        return growth + matvec(b_signed, view.now) + matvec(b_hat_signed, view.delayed(kernel))

    return ModelSpec.from_kolmogorov(
        name="predator_prey",
        n=n,
        r=p.r,
        drift=drift,
        g=_ones_like_now,
        noise=p.noise_spec(n),
        kernels=(kernel,),
        params=p,
    )


def _build_replicator(p: ReplicatorParams) -> ModelSpec:
    n = len(p.sigmas)
    total = p.total
    sig = np.asarray(p.sigmas, dtype=float)
    payoff = p.payoff_function()
    kernel = p.delay_kernel()
    eye = np.eye(n)

    def drift(view: SegmentView) -> np.ndarray:
        f = payoff(view.delayed(kernel))
        mean_payoff = rowsum(view.now * f) / total
        return f - mean_payoff[..., None]

    def diffusion(view: SegmentView) -> np.ndarray:
        # G_ij = σ_i δ_ij - σ_j x_j / X
        shared = (sig * view.now) / total
        return eye * sig - shared[..., None, :]

    def payoff_observable(view: SegmentView) -> np.ndarray:
        return payoff(view.delayed(kernel))

    return ModelSpec(
        name="replicator",
        n=n,
        r=p.r,
        per_capita_drift=drift,
        per_capita_diffusion=diffusion,
        noise=NoiseSpec(gamma=np.diag(sig)),
        kernels=(kernel,),
        params=p,
        simplex_total=total,
        observables={"payoff": payoff_observable},
    )


def _positive_part_ratio(numerator: np.ndarray, s: np.ndarray) -> np.ndarray:
    """numerator / S．S = 0 では +∞（加入項のため面 {S=0} は不変でない）"""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, numerator / np.where(s > 0, s, 1.0), np.inf)


def _build_sir(p: SIRParams) -> ModelSpec:
    f1, f2 = p.incidence_functions()
    kernel = p.delay_kernel()
    a, b1, b2 = p.a, p.b1, p.b2

    def _args(view: SegmentView):
        delayed = view.delayed(kernel)
        return view.now[..., 0], delayed[..., 0], view.now[..., 1], delayed[..., 1]

    def drift(view: SegmentView) -> np.ndarray:
        s, s_r, i, i_r = _args(view)
        f_s = _positive_part_ratio(a - b1 * s - i * f1(s, s_r, i, i_r), s)
        f_i = -b2 + f2(s, s_r, i, i_r)
        return np.stack([f_s, f_i], axis=-1)

    def incidence(view: SegmentView) -> np.ndarray:
        return f2(*_args(view))

    return ModelSpec.from_kolmogorov(
        name="sir",
        n=2,
        r=p.r,
        drift=drift,
        g=_ones_like_now,
        noise=p.noise_spec(2),
        kernels=(kernel,),
        labels=("S", "I"),
        params=p,
        observables={"incidence": incidence},
    )


def _build_chemostat(p: ChemostatParams) -> ModelSpec:
    uptakes = p.uptake_list()
    n = len(uptakes)
    kernel = p.delay_kernel()
    a = p.a

    def _delayed_uptake(view: SegmentView) -> np.ndarray:
        # Σ_k w_k p_i(S(-lag_k))
        out = None
        for lag, weight in kernel.atoms:
            s_lag = view.lag(lag)[..., 0]
            term = np.stack([weight * fn(s_lag) for fn in uptakes], axis=-1)
            out = term if out is None else out + term
        return out

    def drift(view: SegmentView) -> np.ndarray:
        s = view.now[..., 0]
        x = view.now[..., 1:]
        consumed = rowsum(x * np.stack([fn(s) for fn in uptakes], axis=-1))
        s_delayed = view.delayed(kernel)[..., 0]
        f_s = _positive_part_ratio(1.0 - s + a * s_delayed - consumed, s)
        f_x = _delayed_uptake(view) - 1.0
        return np.concatenate([f_s[..., None], f_x], axis=-1)

    return ModelSpec.from_kolmogorov(
        name="chemostat",
        n=n + 1,
        r=p.r,
        drift=drift,
        g=_ones_like_now,
        noise=p.noise_spec(n + 1),
        kernels=(kernel,),
        labels=("S",) + tuple(f"x{i + 1}" for i in range(n)),
        params=p,
        observables={"uptake": _delayed_uptake},
    )


_BUILDERS: Dict[str, Callable[[Any], ModelSpec]] = {
    "competitive_lv": _build_competitive_lv,
    "predator_prey": _build_predator_prey,
    "replicator": _build_replicator,
    "sir": _build_sir,
    "chemostat": _build_chemostat,
}


def parse_zoo_params(name: str, params: Union[ZooParams, Mapping[str, Any]]) -> ZooParams:
    """辞書からパラメータモデルを作る（不正値は ModelValidationError）"""
    if name not in ZOO_PARAMS:
        raise ModelValidationError(f"未知のモデル名: {name!r}（候補: {sorted(ZOO_PARAMS)}）")
    cls = ZOO_PARAMS[name]
    if isinstance(params, cls):
        return params
    if isinstance(params, ZooParams):
        raise ModelValidationError(f"{name} には {cls.__name__} が必要です: {type(params).__name__}")
    try:
        return cls.model_validate(dict(params))
    except ValidationError as e:
        raise ModelValidationError(f"{name} のパラメータが不正です: {e}") from e


def build_zoo_model(name: str, params: Union[ZooParams, Mapping[str, Any]]) -> ModelSpec:
    """組み込みモデルの ModelSpec を組み立てる

    Args:
        name: competitive_lv / predator_prey / replicator / sir / chemostat
        params: パラメータ（pydanticモデルまたは辞書）

    Returns:
        係数汎関数を持つ ModelSpec（ケモスタットは n+1 成分）
    """
    p = parse_zoo_params(name, params)
    if name == "chemostat":
        _check_uptakes(p)  # type: ignore[arg-type]
    model = _BUILDERS[name](p)
    if name != "replicator":
        model.noise.require_positive_definite()
    logger.debug(f"モデル {name} を構築しました: n={model.n}, r={model.r}, lags={model.lags}")
    return model


def _check_uptakes(p: ChemostatParams, samples: int = 64) -> None:
    grid = np.linspace(0.0, 10.0, samples)
    for i, fn in enumerate(p.uptake_list()):
        values = np.asarray(fn(grid), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ModelValidationError(f"取り込み関数 p_{i + 1} が有限・非負ではありません")
        if abs(float(fn(np.zeros(1))[0])) > 1e-12:
            raise ModelValidationError(f"取り込み関数 p_{i + 1}(0) が0ではありません")


def audit_incidence(p: SIRParams, samples: int = 2000, seed: int = 0, kappa: Optional[float] = None) -> Dict[str, Any]:
    """一般発生率の条件を標本点で監査する（強制はしない）

    - f_i(0, 0, i_1, i_2) = 0
    - f_2 ≤ κ f_1 ≤ κ² (1 + |φ(0)| + |φ(-r)|)
    - f_2 は s_1, s_2 に非減少，i_1, i_2 に非増加
    """
    f1, f2 = p.incidence_functions()
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 20.0, size=(samples, 4))
    s, s_r, i, i_r = pts.T
    v1 = np.asarray(f1(s, s_r, i, i_r), dtype=float)
    v2 = np.asarray(f2(s, s_r, i, i_r), dtype=float)
    finite = bool(np.all(np.isfinite(v1)) and np.all(np.isfinite(v2)))
    nonnegative = bool(np.all(v1 >= 0) and np.all(v2 >= 0))
    zero = np.zeros(samples)
    vanish = float(
        max(np.max(np.abs(f1(zero, zero, i, i_r))), np.max(np.abs(f2(zero, zero, i, i_r))))
    )
    if kappa is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(v1 > 0, v2 / np.where(v1 > 0, v1, 1.0), 0.0)
        kappa = max(1.0, float(np.max(ratio)))
    norm_now = np.hypot(s, i)
    norm_lag = np.hypot(s_r, i_r)
    growth_ok = bool(
        np.all(v2 <= kappa * v1 + 1e-12)
        and np.all(kappa * v1 <= kappa**2 * (1.0 + norm_now + norm_lag) + 1e-12)
    )
    h = 1e-4
    monotone = True
    for k, direction in ((0, 1.0), (1, 1.0), (2, -1.0), (3, -1.0)):
        bumped = pts.copy()
        bumped[:, k] += h
        diff = np.asarray(f2(*bumped.T), dtype=float) - v2
        if np.any(direction * diff < -1e-10):
            monotone = False
    report = {
        "samples": samples,
        "finite": finite,
        "nonnegative": nonnegative,
        "max_abs_at_zero_susceptible": vanish,
        "kappa": kappa,
        "growth_bound_holds": growth_ok,
        "monotone": monotone,
    }
    if not (finite and nonnegative):
        logger.warning(f"発生率関数が非有限または負の値をとります: {report}")
    return report

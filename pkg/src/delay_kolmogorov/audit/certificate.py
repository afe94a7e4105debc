"""
監査に使う証明書定数と関数 h

定数は利用者が与える入力で，監査は標本上で不等式を確かめるだけ．
"""

from __future__ import annotations

from typing import Annotated, Any, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import CertificateError
from ..model.kernel import DelayKernel
from ..model.spec import ModelSpec


class HFunction(BaseModel):
    """h(x) = 1 + κ_1|x| + κ_2|x|²（h ≥ 1 は係数の非負性から従う）"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kappa1: float = Field(0.0, ge=0, description="|x| の係数")
    kappa2: float = Field(1.0, ge=0, description="|x|² の係数")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        norm = np.sqrt(np.sum(np.asarray(x, dtype=float) ** 2, axis=-1))
        return 1.0 + self.kappa1 * norm + self.kappa2 * norm**2


class GrowthBoundA(BaseModel):
    """Σ|f_i| + Σg_i² ≤ K̃ [h(x) + ∫h(φ(s))μ(ds)]"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["a"] = "a"
    k_tilde: float = Field(ge=0, description="定数 K̃")


class GrowthBoundB(BaseModel):
    """b_1 h_1(x) ≤ Σ|f_i| + Σg_i² ≤ b_2 [h_1(x) + ∫h_1(φ(s))μ_1(ds)]"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["b"] = "b"
    b1: float = Field(gt=0, description="下界の係数 b_1")
    b2: float = Field(gt=0, description="上界の係数 b_2")
    h1: HFunction = Field(default_factory=HFunction, description="関数 h_1")
    mu1: Optional[List[Tuple[float, float]]] = Field(None, description="遅延測度 μ_1 のアトム．省略時は μ")


class ExtinctionBounds(BaseModel):
    """境界近くの変動を抑える定数 (p_2, B_0, B_1, B_2, B_3)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    p2: float = Field(gt=0, description="べき p_2")
    b0: float = Field(gt=0, description="B_0")
    b1: float = Field(gt=0, description="B_1")
    b2: float = Field(gt=0, description="B_2（B_1 > B_2）")
    b3: float = Field(gt=0, description="B_3")

    @model_validator(mode="after")
    def _check(self):
        if self.b1 <= self.b2:
            raise ValueError(f"B_1 > B_2 が必要です: B_1={self.b1}, B_2={self.b2}")
        return self


class LyapunovData(BaseModel):
    """V_ρ のパラメータ γ, ρ, p_0"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    gamma: float = Field(gt=0, description="重み e^{γ(u-s)} の γ（γ < γ_b）")
    rho: Optional[List[float]] = Field(None, description="べき ρ_i．省略時は0")
    p0: float = Field(gt=0, description="モーメントのべき p_0")


class AssumptionCertificate(BaseModel):
    """散逸性の不等式の定数 c, γ_b, γ_0, A_0, A_1 > A_2, M, h, μ と任意の追加データ"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    c: List[float] = Field(description="正の重み c_i")
    gamma_b: float = Field(gt=0, description="γ_b")
    gamma_0: float = Field(gt=0, description="γ_0")
    a0: float = Field(gt=0, description="A_0")
    a1: float = Field(gt=0, description="A_1（A_1 > A_2）")
    a2: float = Field(gt=0, description="A_2")
    m: float = Field(gt=0, description="指示関数の半径 M")
    h: HFunction = Field(default_factory=HFunction, description="関数 h")
    mu: Optional[List[Tuple[float, float]]] = Field(None, description="遅延測度 μ のアトム．省略時はモデルの r の単一アトム")
    growth: Optional[Annotated[Union[GrowthBoundA, GrowthBoundB], Field(discriminator="kind")]] = Field(
        None, description="増大条件 (a) または (b) のデータ"
    )
    extinction: Optional[ExtinctionBounds] = Field(None, description="絶滅の制御に使う定数")
    lyapunov: Optional[LyapunovData] = Field(None, description="V_ρ のパラメータ")

    @model_validator(mode="after")
    def _check(self):
        if not self.c or any(ci <= 0 for ci in self.c):
            raise ValueError(f"c_i はすべて正でなければなりません: {self.c}")
        if self.a1 <= self.a2:
            raise ValueError(f"A_1 > A_2 が必要です: A_1={self.a1}, A_2={self.a2}")
        for atoms in (self.mu, getattr(self.growth, "mu1", None)):
            if atoms is not None:
                DelayKernel.from_atoms(atoms)
        if self.lyapunov is not None and self.lyapunov.rho is not None and len(self.lyapunov.rho) != len(self.c):
            raise ValueError(f"ρ の長さ {len(self.lyapunov.rho)} が c の長さ {len(self.c)} と一致しません")
        return self

    @property
    def c_vector(self) -> np.ndarray:
        return np.asarray(self.c, dtype=float)

    @property
    def rho_vector(self) -> np.ndarray:
        if self.lyapunov is None or self.lyapunov.rho is None:
            return np.zeros(len(self.c))
        return np.asarray(self.lyapunov.rho, dtype=float)

    def kernel(self, model: ModelSpec) -> DelayKernel:
        return _kernel_for(self.mu, model)

    def growth_kernel(self, model: ModelSpec) -> DelayKernel:
        mu1 = getattr(self.growth, "mu1", None)
        return _kernel_for(mu1 if mu1 is not None else self.mu, model)

    def require_model(self, model: ModelSpec) -> None:
        """c の次元と μ の台をモデルと照合する"""
        if len(self.c) != model.n:
            raise CertificateError(f"c の長さ {len(self.c)} がモデルの次元 {model.n} と一致しません")
        self.kernel(model)

    def lyapunov_bounds(self, model: ModelSpec) -> dict:
        """|ρ| と p_0 の上限（σ* = max σ_ij）"""
        n = model.n
        sigma_star = float(np.max(model.noise.sigma))
        over = (lambda x: x / sigma_star) if sigma_star > 0 else (lambda x: np.inf)
        return {
            "sigma_star": sigma_star,
            "rho_bound": float(min(self.gamma_b / 2, 1.0 / n, over(self.gamma_b / 4))),
            "p0_bound": float(min(1.0, over(self.gamma_b / (8 * n)))),
        }

    def require_lyapunov(self, model: ModelSpec) -> LyapunovData:
        """V_ρ を使う監査の前提（γ < γ_b と |ρ|, p_0 の上限）を確かめる"""
        if self.lyapunov is None:
            raise CertificateError("証明書に lyapunov (γ, ρ, p_0) がありません")
        self.require_model(model)
        bounds = self.lyapunov_bounds(model)
        data = self.lyapunov
        if data.gamma >= self.gamma_b:
            raise CertificateError(f"γ={data.gamma} は γ_b={self.gamma_b} より小さくなければなりません")
        rho_norm = float(np.linalg.norm(self.rho_vector))
        if rho_norm >= bounds["rho_bound"]:
            raise CertificateError(f"|ρ|={rho_norm:.6g} が上限 {bounds['rho_bound']:.6g} 以上です")
        if data.p0 >= bounds["p0_bound"]:
            raise CertificateError(f"p_0={data.p0:.6g} が上限 {bounds['p0_bound']:.6g} 以上です")
        return data

    def generator_constant(self, model: ModelSpec) -> float:
        """A < A_1 - A_2 ∫e^{-γs}μ(ds) の上限値（正でなければ CertificateError）"""
        data = self.require_lyapunov(model)
        kernel = self.kernel(model)
        value = self.a1 - self.a2 * kernel.expectation(lambda lag: float(np.exp(data.gamma * lag)))
        if value <= 0:
            raise CertificateError(f"A_1 - A_2∫e^{{-γs}}μ(ds) = {value:.6g} が正ではありません（γ を小さくしてください）")
        return float(value)


def _kernel_for(atoms: Optional[List[Tuple[float, float]]], model: ModelSpec) -> DelayKernel:
    if atoms is None:
        return DelayKernel.single(model.r)
    kernel = DelayKernel.from_atoms(atoms)
    if kernel.max_lag > model.r + 1e-12:
        raise CertificateError(f"μ のアトム {kernel.max_lag} がモデルの r={model.r} を超えています")
    return kernel


def parse_certificate(data: Union[AssumptionCertificate, Mapping[str, Any]]) -> AssumptionCertificate:
    """辞書から証明書を作る（不変条件の破れは CertificateError）"""
    if isinstance(data, AssumptionCertificate):
        return data
    try:
        return AssumptionCertificate.model_validate(dict(data))
    except ValidationError as e:
        raise CertificateError(f"証明書の定数が不正です: {e}") from e

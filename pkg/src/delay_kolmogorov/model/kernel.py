"""
遅延測度 μ（有限個のアトム）と雑音構造 Γ, Σ の定義
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from ..errors import ModelValidationError

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class DelayKernel:
    """[-r, 0] 上の確率測度 μ を有限個のアトム (lag, weight) で表現

    lag は「何時間前か」を表す非負の値で，s = -lag に対応する．
    連続な μ は呼び出し側で中点則により離散化しておくこと（midpoint/from_density）．
    """

    atoms: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise ModelValidationError("DelayKernelには少なくとも1つのアトムが必要です")
        total = 0.0
        for lag, weight in self.atoms:
            if not np.isfinite(lag) or lag < 0:
                raise ModelValidationError(f"遅延(lag)は非負でなければなりません: {lag}")
            if not np.isfinite(weight) or weight < 0:
                raise ModelValidationError(f"重みは非負でなければなりません: {weight}")
            total += weight
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ModelValidationError(f"重みの和が1になりません: {total}")

    @classmethod
    def single(cls, lag: float) -> "DelayKernel":
        """単一遅延 X(t - lag)"""
        return cls(atoms=((float(lag), 1.0),))

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence[float]]) -> "DelayKernel":
        return cls(atoms=tuple((float(lag), float(w)) for lag, w in atoms))

    @classmethod
    def midpoint(cls, r: float, n_atoms: int) -> "DelayKernel":
        """[-r, 0] 上の一様分布遅延を中点則で n_atoms 個のアトムに離散化"""
        return cls.from_density(lambda s: 1.0, r, n_atoms)

    @classmethod
    def from_density(
        cls, density: Callable[[float], float], r: float, n_atoms: int
    ) -> "DelayKernel":
        """遅延密度 density(lag) を中点則で離散化（正規化は自動）"""
        if n_atoms < 1:
            raise ModelValidationError(f"アトム数は1以上: {n_atoms}")
        if r <= 0:
            raise ModelValidationError(f"分布遅延には r > 0 が必要です: {r}")
        h = r / n_atoms
        lags = [(k + 0.5) * h for k in range(n_atoms)]
        weights = [float(density(lag)) for lag in lags]
        if any(w < 0 or not np.isfinite(w) for w in weights):
            raise ModelValidationError("遅延密度は有限かつ非負でなければなりません")
        total = sum(weights)
        if total <= 0:
            raise ModelValidationError("遅延密度の積分が0です")
        return cls(atoms=tuple((lag, w / total) for lag, w in zip(lags, weights)))

    @property
    def lags(self) -> Tuple[float, ...]:
        return tuple(lag for lag, _ in self.atoms)

    @property
    def weights(self) -> Tuple[float, ...]:
        return tuple(w for _, w in self.atoms)

    @property
    def max_lag(self) -> float:
        return max(self.lags)

    def expectation(self, fn: Callable[[float], float]) -> float:
        """∫ fn(lag) μ(ds) をアトム和で評価"""
        return sum(w * fn(lag) for lag, w in self.atoms)

    def to_dict(self) -> dict:
        return {"atoms": [[lag, w] for lag, w in self.atoms]}


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """E = Γ^T B の雑音構造

    Σ を省略すると Γ^T Γ を構築時に計算する．与えた Σ はそのまま保持する（Γ^T Γ と一致すること）．
    """

    gamma: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float)
        if gamma.ndim != 2:
            raise ModelValidationError(f"Γは2次元配列でなければなりません: shape={gamma.shape}")
        if not np.all(np.isfinite(gamma)):
            raise ModelValidationError("Γに非有限な要素があります")
        gamma.setflags(write=False)
        product = gamma.T @ gamma
        if self.sigma is None:
            sigma = product
        else:
            sigma = np.array(self.sigma, dtype=float)
            if sigma.shape != product.shape or not np.allclose(sigma, product, rtol=1e-12, atol=1e-14):
                raise ModelValidationError("Σ が Γ^T Γ と一致しません")
        sigma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_sigma(cls, sigma: Sequence[Sequence[float]]) -> "NoiseSpec":
        """Σ から Γ = L^T（Σ = L L^T のCholesky分解）を作る"""
        sigma = np.array(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ModelValidationError(f"Σは正方行列でなければなりません: shape={sigma.shape}")
        if not np.allclose(sigma, sigma.T):
            raise ModelValidationError("Σが対称ではありません")
        sigma = 0.5 * (sigma + sigma.T)
        try:
            lower = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as e:
            raise ModelValidationError(f"Σが正定値ではありません: {e}") from e
        return cls(gamma=lower.T, sigma=sigma)

    @classmethod
    def diagonal(cls, variances: Sequence[float]) -> "NoiseSpec":
        """Σ = diag(variances) の独立雑音"""
        variances = np.asarray(variances, dtype=float)
        if np.any(variances < 0):
            raise ModelValidationError(f"分散は非負でなければなりません: {variances}")
        return cls(gamma=np.diag(np.sqrt(variances)))

    @property
    def dim(self) -> int:
        return self.gamma.shape[1]

    @property
    def drivers(self) -> int:
        return self.gamma.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma)[0])

    def is_positive_definite(self) -> bool:
        return self.min_eigenvalue > 0

    def require_positive_definite(self) -> None:
        if not self.is_positive_definite():
            raise ModelValidationError(
                f"Σ = Γ^TΓ が正定値ではありません（最小固有値 {self.min_eigenvalue:.3e}）"
            )

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "sigma": self.sigma.tolist()}

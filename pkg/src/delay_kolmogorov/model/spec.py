"""
Kolmogorov系 dX_i = X_i F_i(φ)dt + X_i Σ_j G_ij(φ) dB_j の抽象的な係数定義

一般形 g_i(φ) dE_i（E = Γ^T B）は G_ij = g_i(φ) Γ_ji に正規化して保持する．
レプリケータ方程式のように因数分解できない雑音も同じ形で扱える．
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, Mapping, Optional, Tuple, Union

import numpy as np

from ..errors import ModelValidationError
from ..utils.numerics import rowsum_squares
from .kernel import DelayKernel, NoiseSpec
from .view import SegmentView

Functional = Callable[[SegmentView], np.ndarray]
Face = FrozenSet[int]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """式 (Kol-Eq) の係数汎関数．構築後は不変で，レプリケート間で共有してよい"""

    name: str
    n: int
    r: float
    per_capita_drift: Functional  # (..., n)
    per_capita_diffusion: Functional  # (..., n, m)
    noise: NoiseSpec
    kernels: Tuple[DelayKernel, ...] = ()
    labels: Tuple[str, ...] = ()
    params: Any = None
    noise_scale: Optional[Functional] = None  # g_i(φ)．一般形の場合のみ
    simplex_total: Optional[float] = None  # レプリケータの X
    observables: Mapping[str, Functional] = field(default_factory=dict)
    face: Optional[Face] = None  # restrict_to_face で設定される
    base: Optional["ModelSpec"] = field(default=None, repr=False)  # 制限前のモデル

    def __post_init__(self):
        if self.n < 1:
            raise ModelValidationError(f"種の数は1以上: {self.n}")
        if self.r < 0:
            raise ModelValidationError(f"最大遅延 r は非負: {self.r}")
        for kernel in self.kernels:
            if kernel.max_lag > self.r + 1e-12:
                raise ModelValidationError(
                    f"遅延核のlag {kernel.max_lag} が最大遅延 r={self.r} を超えています"
                )
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"x{i + 1}" for i in range(self.n)))
        if len(self.labels) != self.n:
            raise ModelValidationError("labelsの長さが種の数と一致しません")

    @classmethod
    def from_kolmogorov(
        cls,
        name: str,
        n: int,
        r: float,
        drift: Functional,
        g: Functional,
        noise: NoiseSpec,
        **kwargs: Any,
    ) -> "ModelSpec":
        """一般形 X_i f_i dt + X_i g_i dE_i から G_ij = g_i Γ_ji を組み立てる"""
        if noise.dim != n:
            raise ModelValidationError(f"Γの列数 {noise.dim} と種の数 {n} が一致しません")
        gamma_t = noise.gamma.T  # (n, m)

        def diffusion(view: SegmentView) -> np.ndarray:
            return g(view)[..., :, None] * gamma_t

        return cls(
            name=name,
            n=n,
            r=r,
            per_capita_drift=drift,
            per_capita_diffusion=diffusion,
            noise=noise,
            noise_scale=g,
            **kwargs,
        )

    @property
    def m(self) -> int:
        """独立なBrown運動の本数"""
        return self.noise.drivers

    @property
    def lags(self) -> Tuple[float, ...]:
        """係数が読む遅延（0を含む，昇順）"""
        lags = {0.0}
        for kernel in self.kernels:
            lags.update(kernel.lags)
        if self.r > 0:
            lags.add(self.r)
        return tuple(sorted(lags))

    def index_of(self, key: Union[int, str]) -> int:
        """ラベルまたは0始まりの添字から種の添字を得る"""
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
            if not 0 <= int(key) < self.n:
                raise ModelValidationError(f"種の添字が範囲外です: {key}")
            return int(key)
        if key in self.labels:
            return self.labels.index(key)
        raise ModelValidationError(f"未知の種ラベル: {key!r}（候補: {list(self.labels)}）")

    def face_of(self, keys: Iterable[Union[int, str]]) -> Face:
        return frozenset(self.index_of(k) for k in keys)

    def face_label(self, face: Iterable[int]) -> str:
        """面 I の表示名．空集合は '{}'"""
        return "{" + ",".join(self.labels[i] for i in sorted(face)) + "}"

    def face_mask(self, face: Optional[Iterable[int]]) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        if face is None:
            mask[:] = True
        else:
            for i in face:
                mask[i] = True
        return mask

    def drift(self, view: SegmentView) -> np.ndarray:
        return self.per_capita_drift(view)

    def diffusion(self, view: SegmentView) -> np.ndarray:
        return self.per_capita_diffusion(view)

    def integrand(self, view: SegmentView) -> np.ndarray:
        """侵入率の被積分関数 F_i - ½ Σ_j G_ij²"""
        return self.drift(view) - 0.5 * rowsum_squares(self.diffusion(view))

    def describe(self) -> Dict[str, Any]:
        params = self.params
        if params is not None and hasattr(params, "model_dump"):
            params = params.model_dump(mode="json")
        return {
            "name": self.name,
            "n": self.n,
            "r": self.r,
            "labels": list(self.labels),
            "params": params,
            "noise": self.noise.to_dict(),
            "face": None if self.face is None else sorted(self.face),
        }


def restrict_to_face(model: ModelSpec, face: Iterable[int]) -> ModelSpec:
    """面 C_+^I への制限．I^c の種は状態・履歴とも0に固定し，その行は0にする

    次元は保存される．I = ∅ なら全ゼロの吸収モデル（δ* の台）になる．
    """
    face = frozenset(int(i) for i in face)
    for i in face:
        if not 0 <= i < model.n:
            raise ModelValidationError(f"面の添字が範囲外です: {i}")
    if model.face is not None:
        face = face & model.face
    mask = model.face_mask(face)
    base = model if model.base is None else model.base

    def drift(view: SegmentView) -> np.ndarray:
        return np.where(mask, base.per_capita_drift(view.masked(mask)), 0.0)

    def diffusion(view: SegmentView) -> np.ndarray:
        return np.where(mask[:, None], base.per_capita_diffusion(view.masked(mask)), 0.0)

    noise_scale = None
    if base.noise_scale is not None:
        g = base.noise_scale

        def noise_scale(view: SegmentView) -> np.ndarray:
            return np.where(mask, g(view.masked(mask)), 0.0)

    observables = {
        key: (lambda fn: (lambda view: fn(view.masked(mask))))(fn)
        for key, fn in base.observables.items()
    }
    restricted = dataclasses.replace(
        base,
        per_capita_drift=drift,
        per_capita_diffusion=diffusion,
        noise_scale=noise_scale,
        observables=observables,
        face=face,
        base=base,
    )
    return restricted

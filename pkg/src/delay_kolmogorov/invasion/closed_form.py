"""
組み込みモデルの境界上の侵入率 λ_i(π) の閉じた式

LV型（競争・捕食）のモデルでは係数が状態と遅延状態について線形なので，
面 I 上のエルゴード測度の平均 m_I は「面の種の λ_j = 0」の連立一次方程式で決まる．
遅延項の平均は定常性により現在値の平均と一致する．
"""

from __future__ import annotations

import logging
from typing import FrozenSet, Iterable, Optional, Tuple, Union

import numpy as np

from ..model.spec import ModelSpec
from ..model.zoo import CompetitiveLVParams, PredatorPreyParams, ReplicatorParams, SIRParams

logger = logging.getLogger(__name__)


def _affine_coefficients(model: ModelSpec) -> Optional[Tuple[np.ndarray, np.ndarray, Optional[int]]]:
    """per-capita drift = c + K m（定常平均で評価したとき）の (c, K) と，測度のある面が必ず含む種

    捕食者-被食者では被食者のいない面に測度は無い（捕食者だけでは絶滅する）．
    """
    p = model.params
    if isinstance(p, CompetitiveLVParams):
        c = np.asarray(p.a, dtype=float)
        k = -(np.asarray(p.b, dtype=float) + np.asarray(p.b_hat, dtype=float))
        return c, k, None
    if isinstance(p, PredatorPreyParams):
        n = len(p.a)
        c = np.array([p.a[0]] + [-ai for ai in p.a[1:]], dtype=float)
        sign = -np.ones((n, n))
        sign[1:, 0] = 1.0
        k = sign * np.asarray(p.b, dtype=float) - np.asarray(p.b_hat, dtype=float)
        return c, k, 0
    return None


def _face_means(
    c: np.ndarray,
    k: np.ndarray,
    half_var: np.ndarray,
    face: FrozenSet[int],
    anchor: Optional[int] = None,
) -> Optional[np.ndarray]:
    """面 face の内部にエルゴード測度があるときの平均（無ければ None）

    |I| = 1 では λ_j(δ*) > 0，|I| ≥ 2 では各 j ∈ I について λ_j(π_{I∖j}) > 0 を要求する．
    anchor を与えると anchor を含まない空でない面には測度が無いものとし，
    I∖anchor からの侵入条件は調べない．
    """
    n = len(c)
    members = sorted(face)
    if not members:
        return np.zeros(n)
    if anchor is not None and anchor not in face:
        return None
    for j in members:
        rest = face - {j}
        if j == anchor and rest:
            continue
        sub = _face_means(c, k, half_var, rest, anchor)
        if sub is None:
            return None
        if c[j] - half_var[j] + float(k[j] @ sub) <= 0:
            return None
    idx = np.asarray(members)
    rhs = -(c[idx] - half_var[idx])
    try:
        solved = np.linalg.solve(k[np.ix_(idx, idx)], rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(solved <= 0):
        return None
    means = np.zeros(n)
    means[idx] = solved
    return means


def face_means(model: ModelSpec, face: Iterable[Union[int, str]]) -> Optional[np.ndarray]:
    """LV型モデルの面 I 上の定常平均 E_π[φ(0)]（閉じた形が無ければ None）"""
    base = model if model.base is None else model.base
    coefficients = _affine_coefficients(base)
    if coefficients is None:
        return None
    c, k, anchor = coefficients
    half_var = 0.5 * np.diag(base.noise.sigma)
    return _face_means(c, k, half_var, base.face_of(face), anchor)


def closed_form_lambda(
    model: ModelSpec, face: Iterable[Union[int, str]], species: Union[int, str]
) -> Optional[float]:
    """λ_i(π_I) の閉じた式の値．式が無い組み合わせでは None

    - 競争LV・捕食者-被食者: 線形な平均の方程式から（δ* と単一種の面を含む）
    - SIR: λ_I(δ*) = -b_2 - σ_22/2，線形発生率なら λ_I(π) = -b_2 - σ_22/2 + a(c_1+c_2)/b_1
    - レプリケータ: 頂点 δ_l で λ_i = f_i(X e_l) - f_l(X e_l) - (σ_i² + σ_l²)/2
    - ケモスタット: なし
    """
    base = model if model.base is None else model.base
    face_set = base.face_of(face)
    i = base.index_of(species)
    p = base.params
    sigma = base.noise.sigma

    coefficients = _affine_coefficients(base)
    if coefficients is not None:
        c, k, anchor = coefficients
        half_var = 0.5 * np.diag(sigma)
        means = _face_means(c, k, half_var, face_set, anchor)
        if means is None:
            return None
        return float(c[i] - half_var[i] + k[i] @ means)

    if isinstance(p, SIRParams):
        if i != 1:
            return None
        if not face_set:
            return float(-p.b2 - sigma[1, 1] / 2)
        if face_set == frozenset({0}) and p.is_linear:
            return float(-p.b2 - sigma[1, 1] / 2 + p.a * (p.c1 + p.c2) / p.b1)
        return None

    if isinstance(p, ReplicatorParams):
        if len(face_set) != 1 or i in face_set:
            return None
        (l,) = tuple(face_set)
        vertex = np.zeros(base.n)
        vertex[l] = p.total
        payoff = np.asarray(p.payoff_function()(vertex[None, :])[0], dtype=float)
        sig = np.asarray(p.sigmas, dtype=float)
        return float(payoff[i] - payoff[l] - (sig[i] ** 2 + sig[l] ** 2) / 2)

    logger.debug(f"{base.name}: 面 {base.face_label(face_set)}，種 {base.labels[i]} には閉じた式がありません")
    return None

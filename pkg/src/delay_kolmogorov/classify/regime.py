"""
組み込みモデルの絶滅・存続の分類（決定木）

各分岐は λ の符号で決まる．閉じた式があればそれを，無ければモンテカルロ推定を使う．
推定値の 4SE 区間が0を含む分岐に来たら "inconclusive" とする．
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from ..invasion.estimate import (
    FaceRun,
    InvasionEstimate,
    _estimate_from_run,
    closed_form_estimate,
    run_face,
)
from ..model.spec import ModelSpec
from ..sdde.config import SimConfig
from ..sdde.segment import Segment
from .basins import BasinEstimate, estimate_basin_probabilities

logger = logging.getLogger(__name__)

INCONCLUSIVE = "inconclusive"
SE_WIDTH = 4.0
MIXED_GRID_STEPS = 20


class InconclusiveBranch(Exception):
    """符号が決まらない λ に分岐が依存した"""


@dataclass
class BranchDecision:
    """決定木の1つの分岐で使った λ とその符号"""

    face_label: str
    species_label: str
    lambda_hat: float
    se: Optional[float]
    method: str
    sign: int

    def to_dict(self) -> dict:
        return {
            "lambda": f"λ_{self.species_label}(π_{self.face_label})",
            "value": self.lambda_hat,
            "se": self.se,
            "method": self.method,
            "sign": self.sign,
        }


@dataclass
class RegimeReport:
    """分類結果．label は各モデルの安定した文字列"""

    model: Dict[str, Any]
    label: Optional[str]
    lambda_table: List[InvasionEstimate]
    branches: List[BranchDecision]
    basins: Optional[BasinEstimate] = None
    mixed_measure_check: Optional[Dict[str, Any]] = None
    predicted_faces: List[FrozenSet[int]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def inconclusive(self) -> bool:
        return self.label == INCONCLUSIVE

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "regime": self.label,
            "lambda_table": [est.to_dict() for est in self.lambda_table],
            "branches": [b.to_dict() for b in self.branches],
            "predicted_faces": [sorted(f) for f in self.predicted_faces],
            "basins": None if self.basins is None else self.basins.to_dict(),
            "mixed_measure_check": self.mixed_measure_check,
            "notes": list(self.notes),
        }


class LambdaLookup:
    """(面, 種) ごとの λ を必要になった時点で求めてキャッシュする"""

    def __init__(self, model: ModelSpec, config: SimConfig, use_closed_form: bool = True, threads: int = 1):
        self.model = model
        self.config = config
        self.use_closed_form = use_closed_form
        self.threads = threads
        self.estimates: Dict[Tuple[FrozenSet[int], int], InvasionEstimate] = {}
        self.branches: List[BranchDecision] = []
        self._runs: Dict[FrozenSet[int], FaceRun] = {}

    def estimate(self, face, species: int) -> InvasionEstimate:
        face = frozenset(face)
        key = (face, species)
        if key not in self.estimates:
            est = closed_form_estimate(self.model, face, species) if self.use_closed_form else None
            if est is None:
                if face not in self._runs:
                    self._runs[face] = run_face(self.model, face, self.config, threads=self.threads)
                est = _estimate_from_run(self.model, self._runs[face], species)
            self.estimates[key] = est
        return self.estimates[key]

    def value(self, face, species: int) -> float:
        return self.estimate(face, species).lambda_hat

    def sign(self, face, species: int) -> int:
        """λ の符号（+1/-1）．決まらなければ InconclusiveBranch"""
        est = self.estimate(face, species)
        sign = 0 if est.interval_contains_zero(SE_WIDTH) else (1 if est.lambda_hat > 0 else -1)
        self.branches.append(
            BranchDecision(est.face_label, est.species_label, est.lambda_hat, est.se, est.method.value, sign)
        )
        if sign == 0:
            raise InconclusiveBranch(f"λ_{est.species_label}(π_{est.face_label}) の符号が決まりません")
        return sign


Tree = Callable[[LambdaLookup], Tuple[str, List[FrozenSet[int]]]]


def _competitive_lv_tree(look: LambdaLookup) -> Tuple[str, List[FrozenSet[int]]]:
    e = frozenset()
    s0, s1 = look.sign(e, 0), look.sign(e, 1)
    if s0 < 0 and s1 < 0:
        return "both-extinct", [e]
    if s0 > 0 and s1 < 0:
        look.sign({0}, 1)
        return "1-wins", [frozenset({0})]
    if s1 > 0 and s0 < 0:
        look.sign({1}, 0)
        return "2-wins", [frozenset({1})]
    l10 = look.sign({0}, 1)
    l01 = look.sign({1}, 0)
    if l10 < 0 and l01 < 0:
        return "bistable", [frozenset({0}), frozenset({1})]
    if l10 < 0 < l01:
        return "1-wins", [frozenset({0})]
    if l01 < 0 < l10:
        return "2-wins", [frozenset({1})]
    return "coexistence", [frozenset({0, 1})]


def _predator_prey_tree(look: LambdaLookup) -> Tuple[str, List[FrozenSet[int]]]:
    n = look.model.n
    prey = frozenset({0})
    if look.sign(frozenset(), 0) < 0:
        return "all-extinct", [frozenset()]
    if n == 2:
        if look.sign(prey, 1) < 0:
            return "prey-only", [prey]
        return "coexistence", [frozenset({0, 1})]
    s1, s2 = look.sign(prey, 1), look.sign(prey, 2)
    if s1 < 0 and s2 < 0:
        return "prey-only", [prey]
    if s1 > 0 and s2 < 0:
        if look.sign({0, 1}, 2) < 0:
            return "predator-2-wins", [frozenset({0, 1})]
        return "coexistence", [frozenset({0, 1, 2})]
    if s2 > 0 and s1 < 0:
        if look.sign({0, 2}, 1) < 0:
            return "predator-3-wins", [frozenset({0, 2})]
        return "coexistence", [frozenset({0, 1, 2})]
    l2_vs_13 = look.sign({0, 1}, 2)
    l1_vs_23 = look.sign({0, 2}, 1)
    if l2_vs_13 < 0 and l1_vs_23 < 0:
        return "predator-bistable", [frozenset({0, 1}), frozenset({0, 2})]
    if l2_vs_13 < 0 < l1_vs_23:
        return "predator-2-wins", [frozenset({0, 1})]
    if l1_vs_23 < 0 < l2_vs_13:
        return "predator-3-wins", [frozenset({0, 2})]
    return "coexistence", [frozenset({0, 1, 2})]


def _sir_tree(look: LambdaLookup) -> Tuple[str, List[FrozenSet[int]]]:
    s_face = frozenset({0})
    if look.sign(s_face, 1) < 0:
        return "disease-extinct", [s_face]
    return "endemic", [frozenset({0, 1})]


def _chemostat_tree(look: LambdaLookup) -> Tuple[str, List[FrozenSet[int]]]:
    n = look.model.n - 1
    s_face = frozenset({0})
    if n == 1:
        if look.sign(s_face, 1) < 0:
            return "washout", [s_face]
        return "coexistence", [frozenset({0, 1})]
    s1, s2 = look.sign(s_face, 1), look.sign(s_face, 2)
    if s1 < 0 and s2 < 0:
        return "washout", [s_face]
    if s1 > 0 and s2 < 0:
        if look.sign({0, 1}, 2) < 0:
            return "1-wins", [frozenset({0, 1})]
        return "coexistence", [frozenset({0, 1, 2})]
    if s2 > 0 and s1 < 0:
        if look.sign({0, 2}, 1) < 0:
            return "2-wins", [frozenset({0, 2})]
        return "coexistence", [frozenset({0, 1, 2})]
    l2_vs_01 = look.sign({0, 1}, 2)
    l1_vs_02 = look.sign({0, 2}, 1)
    if l2_vs_01 < 0 and l1_vs_02 < 0:
        return "bistable", [frozenset({0, 1}), frozenset({0, 2})]
    if l2_vs_01 < 0 < l1_vs_02:
        return "1-wins", [frozenset({0, 1})]
    if l1_vs_02 < 0 < l2_vs_01:
        return "2-wins", [frozenset({0, 2})]
    return "coexistence", [frozenset({0, 1, 2})]


def _replicator_tree(look: LambdaLookup) -> Tuple[str, List[FrozenSet[int]]]:
    n = look.model.n
    if n == 2:
        l1 = look.sign({1}, 0)  # λ_1(δ_2)
        l2 = look.sign({0}, 1)  # λ_2(δ_1)
        if l1 < 0 and l2 < 0:
            return "bistable", [frozenset({0}), frozenset({1})]
        if l1 < 0 < l2:
            return "2-wins", [frozenset({1})]
        if l2 < 0 < l1:
            return "1-wins", [frozenset({0})]
        return "coexistence", [frozenset({0, 1})]
    # 頂点: 他の2戦略がどちらも侵入できなければ吸引的
    vertex_signs = {l: {i: look.sign({l}, i) for i in range(3) if i != l} for l in range(3)}
    attracting = [frozenset({l}) for l, signs in vertex_signs.items() if all(s < 0 for s in signs.values())]
    if attracting:
        return "vertex-attracting", attracting
    edges = []
    for l, k in ((0, 1), (0, 2), (1, 2)):
        # 辺の内部に測度があるのは両端の頂点がどちらも相手に侵入される場合
        if vertex_signs[l][k] > 0 and vertex_signs[k][l] > 0:
            j = 3 - l - k
            if look.sign({l, k}, j) < 0:
                edges.append(frozenset({l, k}))
    if edges:
        return "edge-attracting", edges
    return "coexistence", [frozenset({0, 1, 2})]


TREES: Dict[str, Tree] = {
    "competitive_lv": _competitive_lv_tree,
    "predator_prey": _predator_prey_tree,
    "sir": _sir_tree,
    "chemostat": _chemostat_tree,
    "replicator": _replicator_tree,
}

# 決定木が扱える成分数 n（ケモスタットは栄養 S を含む）
TREE_SIZES: Dict[str, Tuple[int, ...]] = {
    "competitive_lv": (2,),
    "predator_prey": (2, 3),
    "sir": (2,),
    "chemostat": (2, 3),
    "replicator": (2, 3),
}


def mixed_measure_check(look: LambdaLookup, steps: int = MIXED_GRID_STEPS) -> Dict[str, Any]:
    """競争LVの共存分岐: π = q0 δ* + q1 π1 + q2 π2 に対して max_i λ_i(π) > 0 を格子上で確かめる

    λ は π について線形で，λ_i(π_i) = 0．
    """
    e = frozenset()
    rates = np.array(
        [
            [look.value(e, 0), look.value(e, 1)],
            [0.0, look.value({0}, 1)],
            [look.value({1}, 0), 0.0],
        ]
    )
    worst = np.inf
    worst_weights = None
    points = 0
    for a, b in product(range(steps + 1), repeat=2):
        if a + b > steps:
            continue
        q = np.array([a, b, steps - a - b], dtype=float) / steps
        value = float(np.max(q @ rates))
        points += 1
        if value < worst:
            worst, worst_weights = value, q
    return {
        "grid_points": points,
        "min_max_lambda": worst,
        "worst_weights": worst_weights,
        "holds": bool(worst > 0),
    }


def classify_regime(
    model: ModelSpec,
    config: SimConfig,
    initial: Optional[Segment] = None,
    use_closed_form: bool = True,
    basins: bool = True,
    basin_config: Optional[SimConfig] = None,
    threads: int = 1,
) -> RegimeReport:
    """組み込みモデルの決定木を評価し，必要なら吸収面の確率も推定する

    Args:
        model: 組み込みモデル
        config: 面上の λ 推定に使う設定
        initial: 吸収面の確率推定の初期セグメント（省略時は全種1の定数セグメント）
        use_closed_form: 閉じた式を使うか（False なら全てモンテカルロ）
        basins: 吸収面の確率を推定するか
        basin_config: 確率推定の設定（省略時は config）
    """
    base = model if model.base is None else model.base
    look = LambdaLookup(base, config, use_closed_form=use_closed_form, threads=threads)
    notes: List[str] = []
    predicted: List[FrozenSet[int]] = []
    mixed = None
    tree = TREES.get(base.name)
    if tree is None or base.n not in TREE_SIZES[base.name]:
        label = None
        notes.append(f"{base.name} (n={base.n}) には決定木がありません．分類は行いません")
    else:
        try:
            label, predicted = tree(look)
            if label == "coexistence" and base.name == "competitive_lv":
                mixed = mixed_measure_check(look)
        except InconclusiveBranch as e:
            label = INCONCLUSIVE
            notes.append(str(e))
            logger.warning(f"{base.name}: 分類は inconclusive です（{e}）")
    logger.info(f"{base.name}: 分類結果 {label}")

    basin_estimate = None
    if basins:
        basin_estimate = estimate_basin_probabilities(
            base,
            initial,
            basin_config or config,
            expected_faces=predicted,
            threads=threads,
        )
    return RegimeReport(
        model=base.describe(),
        label=label,
        lambda_table=list(look.estimates.values()),
        branches=look.branches,
        basins=basin_estimate,
        mixed_measure_check=mixed,
        predicted_faces=predicted,
        notes=notes,
    )

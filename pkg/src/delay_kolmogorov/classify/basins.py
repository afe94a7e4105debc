"""
吸収面の判定と，全系のモンテカルロによる吸収面ごとの確率 P^I の推定
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from ..invasion.closed_form import closed_form_lambda
from ..model.spec import ModelSpec
from ..sdde.config import SimConfig
from ..sdde.integrator import Trajectory, default_initial, integrate_replicates
from ..sdde.segment import Segment

logger = logging.getLogger(__name__)

DEFAULT_OCCUPANCY_THRESHOLD = 0.95
UNASSIGNED_LIMIT = 0.2
CONFIDENCE = 0.95


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE) -> Tuple[float, float]:
    """二項比率のWilson区間"""
    if trials <= 0:
        return 0.0, 1.0
    z = float(norm.ppf(0.5 + confidence / 2))
    p = successes / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def detect_absorbed_face(
    trajectory: Trajectory,
    extinction_floor: float,
    occupancy_threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> Optional[FrozenSet[int]]:
    """生き残った種の集合 I を返す．判定が割れる種があれば None

    種 i は ln X_i(T) < ε_log かつ後半の窓で {ln X_i < ε_log/2} の占有率が閾値を超えるとき絶滅とみなす．
    片方だけ満たす種は曖昧とする．
    """
    logs = trajectory.log_states
    half = logs[len(logs) // 2 :]
    survivors = set()
    for i in range(trajectory.n):
        terminal_low = bool(logs[-1, i] < extinction_floor)
        occupancy = float(np.mean(half[:, i] < extinction_floor / 2))
        mostly_low = occupancy > occupancy_threshold
        if terminal_low != mostly_low:
            return None
        if not terminal_low:
            survivors.add(i)
    return frozenset(survivors)


@dataclass
class FaceOutcome:
    """1レプリケートの吸収面の判定"""

    replicate: int
    face: Optional[FrozenSet[int]]
    terminal_log: np.ndarray
    rates: Dict[int, float] = field(default_factory=dict)
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "replicate": self.replicate,
            "face": None if self.face is None else sorted(self.face),
            "terminal_log": self.terminal_log,
            "rates": {str(i): v for i, v in self.rates.items()},
            "diverged": self.diverged,
        }


@dataclass
class FaceProbability:
    face: FrozenSet[int]
    label: str
    count: int
    probability: float
    lower: float
    upper: float
    upper_bound_text: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "face": sorted(self.face),
            "label": self.label,
            "count": self.count,
            "probability": self.probability,
            "wilson95": [self.lower, self.upper],
            "upper_bound": self.upper_bound_text,
        }


@dataclass
class RateCheck:
    """面 I に吸収されたランの絶滅種の経験的減衰率と λ_i(π_I) の比較"""

    face: FrozenSet[int]
    species: int
    runs: int
    mean_rate: float
    se: Optional[float]
    closed_form: Optional[float]
    consistent: Optional[bool]

    def to_dict(self) -> dict:
        return {
            "face": sorted(self.face),
            "species": self.species,
            "runs": self.runs,
            "mean_rate": self.mean_rate,
            "se": self.se,
            "closed_form": self.closed_form,
            "consistent": self.consistent,
        }


@dataclass
class BasinEstimate:
    replicates: int
    outcomes: List[FaceOutcome]
    faces: List[FaceProbability]
    unassigned: int
    aborted: int
    rate_checks: List[RateCheck]
    flags: List[str] = field(default_factory=list)

    @property
    def unassigned_fraction(self) -> float:
        return self.unassigned / max(self.replicates, 1)

    def probability(self, face: Iterable[int]) -> float:
        face = frozenset(face)
        for item in self.faces:
            if item.face == face:
                return item.probability
        return 0.0

    def to_dict(self) -> dict:
        return {
            "replicates": self.replicates,
            "faces": [item.to_dict() for item in self.faces],
            "unassigned": self.unassigned,
            "unassigned_fraction": self.unassigned_fraction,
            "aborted": self.aborted,
            "rate_checks": [item.to_dict() for item in self.rate_checks],
            "flags": list(self.flags),
            "outcomes": [item.to_dict() for item in self.outcomes],
        }


def estimate_basin_probabilities(
    model: ModelSpec,
    initial: Optional[Segment],
    config: SimConfig,
    expected_faces: Sequence[Iterable[int]] = (),
    occupancy_threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
    threads: int = 1,
) -> BasinEstimate:
    """内部の初期値から全系を config.replicates 回積分し，吸収面の頻度を数える

    expected_faces のうち一度も観測されなかった面は「< 3/n (95%)」と報告する．
    """
    base = model if model.base is None else model.base
    initial = default_initial(base, config) if initial is None else initial
    if np.any(initial.now <= 0):
        raise ValueError(f"初期セグメントは内部（全種が正）でなければなりません: {initial.now}")
    logger.info(f"{base.name}: 吸収面の確率を {config.replicates} レプリケートで推定します")
    trajectories = integrate_replicates(base, initial, config, threads=threads)

    outcomes: List[FaceOutcome] = []
    for trajectory in trajectories:
        terminal = trajectory.log_states[-1].copy()
        if trajectory.diverged:
            outcomes.append(FaceOutcome(trajectory.replicate, None, terminal, diverged=True))
            continue
        face = detect_absorbed_face(trajectory, config.extinction_floor, occupancy_threshold)
        rates = {}
        if face is not None:
            for i in range(trajectory.n):
                if i not in face and math.isfinite(terminal[i]):
                    rates[i] = float(terminal[i] / trajectory.horizon)
        outcomes.append(FaceOutcome(trajectory.replicate, face, terminal, rates))

    total = len(outcomes)
    counts: Dict[FrozenSet[int], int] = {}
    for outcome in outcomes:
        if outcome.face is not None:
            counts[outcome.face] = counts.get(outcome.face, 0) + 1
    unassigned = sum(1 for o in outcomes if o.face is None)
    aborted = sum(1 for o in outcomes if o.diverged)

    faces: List[FaceProbability] = []
    for face in sorted(counts, key=lambda f: (len(f), sorted(f))):
        lower, upper = wilson_interval(counts[face], total)
        faces.append(
            FaceProbability(face, base.face_label(face), counts[face], counts[face] / total, lower, upper)
        )
    for face in expected_faces:
        face = frozenset(face)
        if face not in counts:
            lower, upper = wilson_interval(0, total)
            faces.append(
                FaceProbability(
                    face,
                    base.face_label(face),
                    0,
                    0.0,
                    lower,
                    upper,
                    upper_bound_text=f"< {100 * 3 / total:.2g}% (95%)",
                )
            )

    rate_checks: List[RateCheck] = []
    for face in counts:
        for i in range(base.n):
            if i in face:
                continue
            rates = [o.rates[i] for o in outcomes if o.face == face and i in o.rates]
            if not rates:
                continue
            mean_rate = float(np.mean(rates))
            se = float(np.std(rates, ddof=1) / math.sqrt(len(rates))) if len(rates) >= 2 else None
            closed = closed_form_lambda(base, face, i)
            consistent = None
            if closed is not None:
                tolerance = max(4 * se if se is not None else 0.0, 0.1 * abs(closed))
                consistent = abs(mean_rate - closed) <= tolerance
            rate_checks.append(RateCheck(face, i, len(rates), mean_rate, se, closed, consistent))

    flags: List[str] = []
    if unassigned / max(total, 1) > UNASSIGNED_LIMIT:
        flags.append(
            f"horizon too short: {unassigned}/{total} runs met no face criterion by T={config.horizon:g}"
        )
        logger.warning(f"{base.name}: 吸収面が決まらないランが {unassigned}/{total} あります．horizon を延ばしてください")
    return BasinEstimate(
        replicates=total,
        outcomes=outcomes,
        faces=faces,
        unassigned=unassigned,
        aborted=aborted,
        rate_checks=rate_checks,
        flags=flags,
    )

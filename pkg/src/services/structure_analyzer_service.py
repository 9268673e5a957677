# src/services/structure_analyzer_service.py

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..utils.errors import NonMonotonePolicyError
from ..utils.policies import DeterministicPolicy
from ..utils.state_space import Action, StateSpace

logger = logging.getLogger(__name__)

SliceKey = Tuple[int, int]


@dataclass
class StructureReport:
    check: str
    violations: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {"check": self.check, "passed": self.passed, "violations": self.violations}


@dataclass
class ThresholdBoundary:
    """
    Compressed form of a threshold policy.

    `thresholds[(l, b)]` is the smallest AoI at which the slice switches from
    idling to its transmitting action (fresh update for b=1, retransmission for
    b=0), or None if the slice never transmits.
    """

    delta_max: int
    l_max: int
    thresholds: Dict[SliceKey, Optional[int]]

    def to_rows(self) -> List[Dict[str, Any]]:
        return [
            {"l": l, "b": b, "delta_star": "never" if star is None else star}
            for (l, b), star in sorted(self.thresholds.items(), key=lambda item: (item[0][1], item[0][0]))
        ]


def _slice(space: StateSpace, l: int, b: int) -> Tuple[np.ndarray, np.ndarray]:
    """AoI values and state indices of the (l, b) slice in ascending AoI."""
    deltas = np.arange(max(l, 1), space.params.delta_max + 1)
    return deltas, space.lookup[deltas, l, b]


def _switching_slices(space: StateSpace) -> Iterator[SliceKey]:
    """Slices whose action set is not just {idle}: every b=1 slice and b=0 with 0 < l < l_max."""
    for l in range(0, space.params.l_max + 1):
        yield l, 1
    for l in range(1, space.params.l_max):
        yield l, 0


def check_monotone_delta(policy: DeterministicPolicy) -> StructureReport:
    """Flags every (l, b) slice where the action decreases as AoI grows."""
    space = policy.space
    report = StructureReport("monotone_in_delta")
    for b in (0, 1):
        for l in range(0, space.params.l_max + 1):
            deltas, idx = _slice(space, l, b)
            actions = policy.actions[idx]
            for pos in np.flatnonzero(np.diff(actions) < 0):
                report.violations.append({
                    "l": l, "b": b, "delta": int(deltas[pos + 1]),
                    "from_action": int(actions[pos]), "to_action": int(actions[pos + 1]),
                })
    if not report.passed:
        logger.warning(f"Policy is not monotone in delta: {len(report.violations)} violation(s).")
    return report


def check_monotone_l(policy: DeterministicPolicy) -> StructureReport:
    """Flags every AoI row (b=0) where the action increases with the transmission count l."""
    space = policy.space
    report = StructureReport("monotone_in_l")
    for delta in range(1, space.params.delta_max + 1):
        ls = np.arange(1, min(delta, space.params.l_max - 1) + 1)
        if len(ls) < 2:
            continue
        actions = policy.actions[space.lookup[delta, ls, 0]]
        for pos in np.flatnonzero(np.diff(actions) > 0):
            report.violations.append({
                "delta": delta, "b": 0, "l": int(ls[pos + 1]),
                "from_action": int(actions[pos]), "to_action": int(actions[pos + 1]),
            })
    if not report.passed:
        logger.warning(f"Policy is not monotone in l: {len(report.violations)} violation(s).")
    return report


def check_fresh_depends_only_on_delta(policy: DeterministicPolicy) -> StructureReport:
    """With a fresh update waiting, the action at (delta, l, 1) must not depend on l."""
    space = policy.space
    report = StructureReport("fresh_action_independent_of_l")
    for delta in range(1, space.params.delta_max + 1):
        ls = np.arange(0, min(delta, space.params.l_max) + 1)
        actions = policy.actions[space.lookup[delta, ls, 1]]
        if np.any(actions != actions[0]):
            report.violations.append({"delta": delta, "b": 1, "actions": actions.tolist()})
    return report


def extract_boundary(policy: DeterministicPolicy) -> ThresholdBoundary:
    """
    Compresses a monotone policy into per-slice switching thresholds.

    Raises:
        NonMonotonePolicyError: If a slice is not monotone in delta, or an AoI
            row violates monotonicity in l.
    """
    delta_report = check_monotone_delta(policy)
    if not delta_report.passed:
        first = delta_report.violations[0]
        raise NonMonotonePolicyError("Policy is not monotone in delta", (first["l"], first["b"]))
    l_report = check_monotone_l(policy)
    if not l_report.passed:
        first = l_report.violations[0]
        raise NonMonotonePolicyError("Policy is not monotone in l", (first["delta"], first["b"]))

    space = policy.space
    thresholds: Dict[SliceKey, Optional[int]] = {}
    for l, b in _switching_slices(space):
        deltas, idx = _slice(space, l, b)
        transmitting = np.flatnonzero(policy.actions[idx] != Action.IDLE)
        thresholds[(l, b)] = int(deltas[transmitting[0]]) if len(transmitting) else None
    return ThresholdBoundary(space.params.delta_max, space.params.l_max, thresholds)


def reconstruct(boundary: ThresholdBoundary, space: StateSpace) -> DeterministicPolicy:
    """Expands thresholds back into a per-state policy; states outside S1 and S2 idle."""
    actions = np.ones(len(space), dtype=np.int8)
    for (l, b), star in boundary.thresholds.items():
        if star is None:
            continue
        deltas, idx = _slice(space, l, b)
        switch = idx[deltas >= star]
        actions[switch] = space.transmit_action[switch]
    return DeterministicPolicy(space, actions)


def boundary_dominance(lower: ThresholdBoundary, upper: ThresholdBoundary) -> List[Dict[str, Any]]:
    """
    Lists slices where `upper` switches at a smaller AoI than `lower`.

    "never" counts as an infinite threshold, so an empty result means upper
    transmits no earlier than lower in every slice.
    """
    def as_number(star: Optional[int]) -> float:
        return np.inf if star is None else float(star)

    shortfalls = []
    for key in sorted(set(lower.thresholds) & set(upper.thresholds)):
        lo, hi = lower.thresholds[key], upper.thresholds[key]
        if as_number(hi) < as_number(lo):
            shortfalls.append({"l": key[0], "b": key[1], "lower": lo, "upper": hi})
    return shortfalls


class StructureAnalyzerService:
    """Runs every structural check on a solved policy and compresses it into thresholds when possible."""

    def __init__(self):
        logger.info("StructureAnalyzerService initialized.")

    def run(self, policy: DeterministicPolicy) -> Dict[str, Any]:
        reports = [check_monotone_delta(policy), check_monotone_l(policy), check_fresh_depends_only_on_delta(policy)]
        result: Dict[str, Any] = {report.check: report.to_dict() for report in reports}

        boundary = None
        round_trip = False
        if reports[0].passed and reports[1].passed:
            boundary = extract_boundary(policy)
            rebuilt = reconstruct(boundary, policy.space)
            switching = policy.space.transmit_action != Action.IDLE
            round_trip = bool(np.array_equal(rebuilt.actions[switching], policy.actions[switching]))
            if not round_trip:
                logger.warning("Threshold boundary does not reproduce the policy on S1 and S2.")
        result["round_trip"] = round_trip
        result["boundary"] = boundary
        return result

# src/services/simulator_service.py

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.random import SeedSequence, default_rng
from pydantic import BaseModel, ConfigDict, Field

from ..utils.errors import DisallowedActionError
from ..utils.policies import DeterministicPolicy, MixturePolicy, RandomBaseline
from ..utils.state_space import Action, ModelParams
from .kernel_builder_service import Kernel, build_kernel
from .policy_evaluator_service import PolicyEvaluatorService

logger = logging.getLogger(__name__)

OUTCOMES = ("idle", "success", "failure")


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: ModelParams
    horizon: int = Field(default=10_000, ge=1)
    trials: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    chunk_size: int = Field(default=250, ge=1)


@dataclass
class TrialResult:
    aoi_avg: float
    tx_freq: float
    trace: Optional[List[Dict[str, Any]]] = None


@dataclass
class SimReport:
    """Aggregate of independent trials; standard errors are across trials (0 for a single trial)."""

    mean_aoi: float
    se_aoi: float
    mean_tx: float
    se_tx: float
    fresh_tx_given_b1: float
    per_trial: List[Tuple[float, float]] = field(default_factory=list)
    seed_ledger: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_trials: bool = False) -> Dict[str, Any]:
        data = {
            "mean_aoi": self.mean_aoi,
            "se_aoi": self.se_aoi,
            "mean_tx": self.mean_tx,
            "se_tx": self.se_tx,
            "fresh_tx_given_b1": self.fresh_tx_given_b1,
            "seed_ledger": self.seed_ledger,
        }
        if include_trials:
            data["per_trial"] = [list(pair) for pair in self.per_trial]
        return data


@dataclass
class _ChunkResult:
    aoi: np.ndarray
    tx: np.ndarray
    fresh_slots: int
    b1_slots: int
    trace: Optional[Dict[str, np.ndarray]] = None


def _standard_error(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0


def _check_clamping(policy) -> bool:
    """Warns if a policy still changes its action at delta_max, where the untruncated AoI is clamped."""
    if isinstance(policy, MixturePolicy):
        members = [policy.pi1, policy.pi2]
    elif isinstance(policy, DeterministicPolicy):
        members = [policy]
    else:
        return True
    exact = True
    for member in members:
        actions, space = member.actions, member.space
        top, below = space.params.delta_max, space.params.delta_max - 1
        ls = np.arange(0, min(below, space.params.l_max) + 1)
        for b in (0, 1):
            if np.any(actions[space.lookup[top, ls, b]] != actions[space.lookup[below, ls, b]]):
                exact = False
    if not exact:
        logger.warning("Policy switches action at delta_max; clamping larger AoI values to that row is approximate.")
    return exact


class SimulatorService:
    """
    Slot-level Monte Carlo simulator of the status-update link.

    The simulated AoI is not truncated; policies defined on the truncated
    space are queried at min(delta, delta_max). Every trial owns three random
    streams spawned from SeedSequence(seed, spawn_key=(trial,)): status
    generation, channel outcomes and the policy's own coin flips. Running two
    policies with the same seed therefore exposes them to identical arrivals
    and channel realizations.
    """

    def __init__(self, horizon: int = 10_000, trials: int = 1000, seed: int = 0, chunk_size: int = 250):
        self.horizon = horizon
        self.trials = trials
        self.seed = seed
        self.chunk_size = chunk_size
        logger.info(f"SimulatorService initialized (T={horizon}, trials={trials}, seed={seed}).")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "SimulatorService":
        return cls(horizon=cfg.horizon, trials=cfg.trials, seed=cfg.seed, chunk_size=cfg.chunk_size)

    def _streams(self, trial: int):
        generation, channel, policy = SeedSequence(self.seed, spawn_key=(trial,)).spawn(3)
        return default_rng(generation), default_rng(channel), default_rng(policy)

    def _simulate_chunk(self, policy, params: ModelParams, trials: Sequence[int], record: bool = False) -> _ChunkResult:
        """Runs a block of trials in lock-step, one vectorized update per slot."""
        n, horizon = len(trials), self.horizon
        fresh = np.empty((n, horizon + 1), dtype=np.int64)
        failure = np.empty((n, horizon), dtype=bool)
        trial_u = np.empty(n)
        slot_u = np.empty((n, horizon))
        for row, trial in enumerate(trials):
            generation, channel, coins = self._streams(trial)
            fresh[row] = generation.random(horizon + 1) < params.p
            failure[row] = channel.random(horizon) < params.gamma
            trial_u[row] = coins.random()
            slot_u[row] = coins.random(horizon)

        space = policy.space
        lookup, allowed = space.lookup, space.allowed
        delta = np.ones(n, dtype=np.int64)
        l = np.ones(n, dtype=np.int64)
        b = fresh[:, 0]
        aoi_sum = np.zeros(n)
        tx_count = np.zeros(n)
        fresh_slots = b1_slots = 0
        trace = {key: np.empty((horizon, n), dtype=np.int64) for key in ("delta", "l", "b", "action", "outcome")} if record else None

        for t in range(horizon):
            aoi_sum += delta
            idx = lookup[np.minimum(delta, params.delta_max), l, b]
            action = policy.act(idx, trial_u, slot_u[:, t]).astype(np.int64)
            if not allowed[idx, action - 1].all():
                bad = int(np.flatnonzero(~allowed[idx, action - 1])[0])
                raise DisallowedActionError(f"Policy chose action {action[bad]} in state "
                                            f"({delta[bad]}, {l[bad]}, {b[bad]}) at slot {t}")
            transmit = action != Action.IDLE
            success = transmit & ~failure[:, t]
            tx_count += transmit
            b1_slots += int(b.sum())
            fresh_slots += int(np.count_nonzero(action == Action.TRANSMIT_FRESH))

            if record:
                trace["delta"][t], trace["l"][t], trace["b"][t], trace["action"][t] = delta, l, b, action
                trace["outcome"][t] = np.where(transmit, np.where(success, 1, 2), 0)

            next_l = np.where(action == Action.IDLE, 0, np.where(action == Action.RETRANSMIT, l + 1, 1))
            delta = np.where(success, next_l, delta + 1)
            l = next_l
            b = fresh[:, t + 1]

        return _ChunkResult(aoi=aoi_sum / horizon, tx=tx_count / horizon,
                            fresh_slots=fresh_slots, b1_slots=b1_slots, trace=trace)

    def run(self, policy, params: ModelParams) -> SimReport:
        """
        Simulates all trials of a policy.

        Args:
            policy: Any object exposing `space` and `act(state_idx, trial_u, slot_u)`.
            params: The link parameters to simulate.

        Returns:
            The aggregate report, with trials reduced in index order.
        """
        _check_clamping(policy)
        aoi, tx = [], []
        fresh_slots = b1_slots = 0
        for start in range(0, self.trials, self.chunk_size):
            chunk = self._simulate_chunk(policy, params, range(start, min(start + self.chunk_size, self.trials)))
            aoi.append(chunk.aoi)
            tx.append(chunk.tx)
            fresh_slots += chunk.fresh_slots
            b1_slots += chunk.b1_slots
        aoi_all, tx_all = np.concatenate(aoi), np.concatenate(tx)

        report = SimReport(
            mean_aoi=float(aoi_all.mean()),
            se_aoi=_standard_error(aoi_all),
            mean_tx=float(tx_all.mean()),
            se_tx=_standard_error(tx_all),
            fresh_tx_given_b1=fresh_slots / b1_slots if b1_slots else 0.0,
            per_trial=[(float(a), float(d)) for a, d in zip(aoi_all, tx_all)],
            seed_ledger={"seed": self.seed, "spawn_keys": [0, self.trials - 1], "streams": ["generation", "channel", "policy"]},
        )
        logger.info(f"Simulated {self.trials} trials x {self.horizon} slots: AoI={report.mean_aoi:.4f} "
                    f"(se {report.se_aoi:.4f}), tx={report.mean_tx:.4f} (se {report.se_tx:.4f}).")
        return report

    def run_trial(self, policy, params: ModelParams, trial: int, trace: bool = False) -> TrialResult:
        chunk = self._simulate_chunk(policy, params, [trial], record=trace)
        rows = None
        if trace:
            rows = [
                {
                    "t": t,
                    "delta": int(chunk.trace["delta"][t, 0]),
                    "l": int(chunk.trace["l"][t, 0]),
                    "b": int(chunk.trace["b"][t, 0]),
                    "action": int(chunk.trace["action"][t, 0]),
                    "outcome": OUTCOMES[chunk.trace["outcome"][t, 0]],
                }
                for t in range(self.horizon)
            ]
        return TrialResult(aoi_avg=float(chunk.aoi[0]), tx_freq=float(chunk.tx[0]), trace=rows)

    def trace_block(self, policy, params: ModelParams, trials: Sequence[int]) -> Dict[str, np.ndarray]:
        """Per-slot trajectories (arrays of shape (horizon, len(trials))) for dynamics checks."""
        return self._simulate_chunk(policy, params, trials, record=True).trace


def run_trial(policy, cfg: SimConfig, trial: int, trace: bool = False) -> TrialResult:
    return SimulatorService.from_config(cfg).run_trial(policy, cfg.params, trial, trace)


def compare_policies(cfg: SimConfig, policies: Dict[str, Any]) -> Dict[str, SimReport]:
    """Simulates every named policy on common random numbers."""
    simulator = SimulatorService.from_config(cfg)
    return {name: simulator.run(policy, cfg.params) for name, policy in policies.items()}


def calibrate_random_baseline(params: ModelParams, kernel: Optional[Kernel] = None,
                              evaluator: Optional[PolicyEvaluatorService] = None,
                              tol: float = 1e-6, max_bisections: int = 100) -> RandomBaseline:
    """
    Finds the transmission probability q that spends the budget on the truncated chain.

    The q-policy is evaluated exactly as a randomized stationary policy. If even
    q = 1 stays within the budget, q = 1 is returned.
    """
    kernel = kernel or build_kernel(params)
    evaluator = evaluator or PolicyEvaluatorService()
    space = kernel.space

    full = evaluator.evaluate_action_weights(RandomBaseline(space, 1.0).action_weights(), kernel)
    max_tx = full.avg_tx
    if max_tx <= params.gamma_max:
        logger.info(f"Random baseline never binds (max frequency {max_tx:.6f} <= {params.gamma_max}); q = 1.")
        return RandomBaseline(space, 1.0, achieved_tx=max_tx, max_tx=max_tx)

    lo, hi = 0.0, 1.0
    initial = full.stationary
    best = RandomBaseline(space, 0.0, achieved_tx=0.0, max_tx=max_tx)
    for _ in range(max_bisections):
        q = 0.5 * (lo + hi)
        evaluation = evaluator.evaluate_action_weights(RandomBaseline(space, q).action_weights(), kernel, initial)
        initial = evaluation.stationary
        if evaluation.avg_tx > params.gamma_max:
            hi = q
            continue
        best = RandomBaseline(space, q, achieved_tx=evaluation.avg_tx, max_tx=max_tx)
        if evaluation.avg_tx >= params.gamma_max - tol:
            logger.info(f"Random baseline calibrated: q={q:.6f}, frequency={evaluation.avg_tx:.6f}.")
            return best
        lo = q
    logger.warning(f"Random baseline bisection stopped at q={best.q:.6f} with frequency {best.achieved_tx:.6f}.")
    return best

# src/services/policy_evaluator_service.py

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..utils.errors import ConvergenceError
from ..utils.policies import DeterministicPolicy, MixturePolicy, PolicyEvaluation
from ..utils.state_space import Action
from .kernel_builder_service import Kernel

logger = logging.getLogger(__name__)


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(default=1e-9, gt=0.0)
    max_iters: int = Field(default=1_000_000, ge=1)


class PolicyEvaluatorService:
    """
    Computes exact long-run averages of stationary policies on the truncated chain.

    The stationary distribution is found by lazy power iteration,
    pi <- (pi + pi P) / 2, started from the synchronized initial state. The
    lazy chain has the same stationary distribution as P but is aperiodic, so
    deterministic cycles such as the p = 1, gamma = 0 two-state loop converge.
    """

    def __init__(self, tol: float = 1e-9, max_iters: int = 1_000_000):
        self.tol = tol
        self.max_iters = max_iters
        logger.info(f"PolicyEvaluatorService initialized (tol={tol}, max_iters={max_iters}).")

    def run(self, policy: DeterministicPolicy, kernel: Kernel, initial: Optional[np.ndarray] = None) -> PolicyEvaluation:
        return self.evaluate_action_weights(policy.action_weights(), kernel, initial)

    def evaluate_action_weights(self, weights: np.ndarray, kernel: Kernel,
                                initial: Optional[np.ndarray] = None) -> PolicyEvaluation:
        """
        Evaluates a randomized stationary policy given as (n, 3) action probabilities.

        Raises:
            ConvergenceError: If the L1 change between iterates stays above the
                tolerance for max_iters iterations.
        """
        space = kernel.space
        transposed = kernel.policy_matrix(weights).T.tocsr()
        pi = space.initial_distribution() if initial is None else np.array(initial, dtype=float)

        residual = np.inf
        for iterations in range(1, self.max_iters + 1):
            pi_next = 0.5 * (pi + transposed @ pi)
            residual = float(np.abs(pi_next - pi).sum())
            pi = pi_next
            if residual < self.tol:
                break
        else:
            raise ConvergenceError("Stationary distribution did not converge; the chain may not be unichain",
                                   residual, self.max_iters)
        pi /= pi.sum()

        tx_prob = weights[:, Action.RETRANSMIT - 1] + weights[:, Action.TRANSMIT_FRESH - 1]
        fresh = space.b == 1
        fresh_mass = pi[fresh].sum()
        fresh_tx = float(pi[fresh] @ weights[fresh, Action.TRANSMIT_FRESH - 1] / fresh_mass) if fresh_mass > 0 else 0.0

        evaluation = PolicyEvaluation(
            avg_aoi=float(pi @ space.delta),
            avg_tx=float(pi @ tx_prob),
            stationary=pi,
            fresh_tx_given_b1=fresh_tx,
            iterations=iterations,
            residual=residual,
        )
        logger.debug(f"Evaluated policy in {iterations} iterations: C={evaluation.avg_aoi:.6f}, "
                     f"D={evaluation.avg_tx:.6f}.")
        return evaluation

    def horizon_averages(self, weights: np.ndarray, kernel: Kernel, horizon: int) -> Tuple[float, float]:
        """
        Expected AoI and transmission averages over the first `horizon` slots from s0.

        This is what a single simulated trial estimates, start-up transient
        included. Once the slot distribution stops moving (L1 step below tol)
        the remaining slots are filled in with it.
        """
        space = kernel.space
        transposed = kernel.policy_matrix(weights).T.tocsr()
        delta = space.delta.astype(float)
        tx_prob = weights[:, Action.RETRANSMIT - 1] + weights[:, Action.TRANSMIT_FRESH - 1]

        pi = space.initial_distribution()
        aoi_sum = tx_sum = 0.0
        for t in range(horizon):
            aoi_sum += float(pi @ delta)
            tx_sum += float(pi @ tx_prob)
            pi_next = transposed @ pi
            if np.abs(pi_next - pi).sum() < self.tol:
                remaining = horizon - t - 1
                aoi_sum += remaining * float(pi_next @ delta)
                tx_sum += remaining * float(pi_next @ tx_prob)
                break
            pi = pi_next
        return aoi_sum / horizon, tx_sum / horizon


def evaluate_policy(policy: DeterministicPolicy, kernel: Kernel, cfg: Optional[EvaluationConfig] = None) -> PolicyEvaluation:
    cfg = cfg or EvaluationConfig()
    return PolicyEvaluatorService(**cfg.model_dump()).run(policy, kernel)


def expected_over_horizon(policy, kernel: Kernel, horizon: int,
                          evaluator: Optional[PolicyEvaluatorService] = None) -> Tuple[float, float]:
    """Finite-horizon (AoI, transmission) expectation of any simulated policy; mixtures combine by mu."""
    evaluator = evaluator or PolicyEvaluatorService()
    if isinstance(policy, MixturePolicy):
        first = evaluator.horizon_averages(policy.pi1.action_weights(), kernel, horizon)
        second = evaluator.horizon_averages(policy.pi2.action_weights(), kernel, horizon)
        return tuple(policy.mu * a + (1.0 - policy.mu) * b for a, b in zip(first, second))
    return evaluator.horizon_averages(policy.action_weights(), kernel, horizon)

# src/services/cmdp_solver_service.py

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..utils.errors import BracketingError
from ..utils.policies import DualProbe, MixturePolicy, PolicyEvaluation
from ..utils.state_space import ModelParams
from .kernel_builder_service import Kernel, build_kernel
from .policy_evaluator_service import PolicyEvaluatorService
from .rvi_solver_service import RviConfig, RviSolution, RviSolverService

logger = logging.getLogger(__name__)

# Budget matches treated as binding with a deterministic policy.
EQUALITY_TOL = 1e-9

Probe = Tuple[RviSolution, PolicyEvaluation]


def mixing_weight(d1: float, d2: float, gamma_max: float) -> float:
    """Weight on the over-budget policy that makes the mixture spend exactly gamma_max."""
    if d1 <= d2:
        raise ValueError(f"Mixing needs D1 > D2, got D1={d1}, D2={d2}.")
    return float(np.clip((gamma_max - d2) / (d1 - d2), 0.0, 1.0))


def mixture_targets(m: MixturePolicy, gamma_max: float) -> Tuple[float, float]:
    """Long-run (AoI, transmission frequency) of a mixture: the mu-convex combination of both policies."""
    expected_aoi = m.mu * m.eval1.avg_aoi + (1.0 - m.mu) * m.eval2.avg_aoi
    expected_tx = m.mu * m.eval1.avg_tx + (1.0 - m.mu) * m.eval2.avg_tx
    if 0.0 < m.mu < 1.0 and abs(expected_tx - gamma_max) > 1e-6:
        logger.warning(f"Binding mixture spends {expected_tx:.9f} instead of the budget {gamma_max}.")
    return expected_aoi, expected_tx


class CmdpSolverService:
    """
    Solves the power-constrained AoI problem in three steps.

    1. Solve the unconstrained problem (lam = 0); if it already meets the
       budget it is optimal.
    2. Bracket the multiplier by doubling from 1, then bisect until the
       bracket is narrower than epsilon_lambda, keeping
       D(pi_lam1) > gamma_max > D(pi_lam2).
    3. Mix the two bracketing policies with the weight that spends the
       budget exactly.

    Each probe is evaluated exactly on the truncated chain, so the bracket is
    ordered without simulation noise.
    """

    def __init__(self, rvi_solver: RviSolverService, evaluator: PolicyEvaluatorService,
                 epsilon_lambda: float = 0.01, max_doublings: int = 60):
        self.rvi_solver = rvi_solver
        self.evaluator = evaluator
        self.epsilon_lambda = epsilon_lambda
        self.max_doublings = max_doublings
        logger.info(f"CmdpSolverService initialized (epsilon_lambda={epsilon_lambda}, max_doublings={max_doublings}).")

    def _probe(self, kernel: Kernel, lam: float, warm: Optional[Probe], probes: List[DualProbe]) -> Probe:
        solution = self.rvi_solver.run(kernel, lam, initial_bias=warm[0].bias if warm else None)
        evaluation = self.evaluator.run(solution.policy, kernel, initial=warm[1].stationary if warm else None)
        probes.append(DualProbe(
            lam=lam,
            avg_aoi=evaluation.avg_aoi,
            avg_tx=evaluation.avg_tx,
            gain=solution.gain,
            lagrangian=solution.gain - lam * kernel.params.gamma_max,
            iterations=solution.iterations,
            converged=solution.converged,
            residual=solution.residual,
        ))
        logger.info(f"Probe lam={lam:.6g}: C={evaluation.avg_aoi:.4f}, D={evaluation.avg_tx:.6f}, "
                    f"gain={solution.gain:.4f} ({solution.iterations} RVI iterations).")
        return solution, evaluation

    def _deterministic(self, probe: Probe, gamma_max: float, probes: List[DualProbe]) -> MixturePolicy:
        solution, evaluation = probe
        return MixturePolicy(pi1=solution.policy, pi2=solution.policy, mu=1.0,
                             lambda1=solution.lam, lambda2=solution.lam,
                             eval1=evaluation, eval2=evaluation, gamma_max=gamma_max, probes=probes)

    def run(self, kernel: Kernel) -> MixturePolicy:
        """
        Computes the optimal stationary policy of the constrained problem.

        Raises:
            BracketingError: If no multiplier up to 2**(max_doublings - 1)
                brings the transmission frequency under the budget.
        """
        gamma_max = kernel.params.gamma_max
        probes: List[DualProbe] = []

        # Step 1: unconstrained optimum.
        low = self._probe(kernel, 0.0, None, probes)
        if low[1].avg_tx <= gamma_max:
            logger.info(f"Unconstrained optimum meets the budget (D={low[1].avg_tx:.6f} <= {gamma_max}).")
            return self._deterministic(low, gamma_max, probes)

        # Step 2a: bracket by doubling.
        high: Optional[Probe] = None
        lam = 1.0
        for _ in range(self.max_doublings):
            current = self._probe(kernel, lam, low, probes)
            if abs(current[1].avg_tx - gamma_max) < EQUALITY_TOL:
                return self._deterministic(current, gamma_max, probes)
            if current[1].avg_tx < gamma_max:
                high = current
                break
            low = current
            lam *= 2.0
        if high is None:
            raise BracketingError("Transmission budget never met while doubling the multiplier",
                                  lam / 2.0, low[1].avg_tx)

        # Step 2b: bisection.
        while high[0].lam - low[0].lam > self.epsilon_lambda:
            mid = 0.5 * (low[0].lam + high[0].lam)
            current = self._probe(kernel, mid, low, probes)
            if abs(current[1].avg_tx - gamma_max) < EQUALITY_TOL:
                return self._deterministic(current, gamma_max, probes)
            if current[1].avg_tx > gamma_max:
                low = current
            else:
                high = current

        # Step 3: randomize between the bracketing policies.
        mu = mixing_weight(low[1].avg_tx, high[1].avg_tx, gamma_max)
        mixture = MixturePolicy(pi1=low[0].policy, pi2=high[0].policy, mu=mu,
                                lambda1=low[0].lam, lambda2=high[0].lam,
                                eval1=low[1], eval2=high[1], gamma_max=gamma_max, probes=probes)
        expected_aoi, expected_tx = mixture_targets(mixture, gamma_max)
        logger.info(f"Mixture found: lam1={mixture.lambda1:.6g}, lam2={mixture.lambda2:.6g}, mu={mu:.4f}, "
                    f"C={expected_aoi:.4f}, D={expected_tx:.6f}.")
        return mixture


def solve_cmdp(params: ModelParams, epsilon_lambda: float = 0.01, cfg: Optional[RviConfig] = None,
               kernel: Optional[Kernel] = None, evaluator: Optional[PolicyEvaluatorService] = None) -> MixturePolicy:
    cfg = cfg or RviConfig()
    kernel = kernel or build_kernel(params)
    solver = CmdpSolverService(RviSolverService.from_config(cfg), evaluator or PolicyEvaluatorService(),
                               epsilon_lambda=epsilon_lambda)
    return solver.run(kernel)

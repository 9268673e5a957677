# src/services/rvi_solver_service.py

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..utils.policies import DeterministicPolicy
from ..utils.state_space import State
from .kernel_builder_service import ACTION_COST, Kernel

logger = logging.getLogger(__name__)


class RviConfig(BaseModel):
    """Settings of one relative value iteration solve; `lam` is the Lagrange multiplier."""

    model_config = ConfigDict(frozen=True)

    lam: float = Field(default=0.0, ge=0.0)
    span_tol: float = Field(default=1e-6, gt=0.0)
    max_iters: int = Field(default=100_000, ge=1)
    ref_state: Tuple[int, int, int] = (1, 1, 0)
    aperiodicity: float = Field(default=0.9, gt=0.0, le=1.0)
    tie_tol: float = Field(default=1e-9, ge=0.0)


@dataclass(eq=False)
class RviSolution:
    policy: DeterministicPolicy
    gain: float
    bias: np.ndarray
    iterations: int
    converged: bool
    residual: float
    lam: float


def q_value(s: State, a: int, h: np.ndarray, lam: float, kernel: Kernel) -> float:
    """State-action value delta + lam * 1[a != 1] + E[h(next state)]."""
    expected = sum(prob * h[kernel.space.index(nxt)] for nxt, prob in kernel.row(s, a))
    return s.delta + lam * kernel.cost(s, a) + expected


class RviSolverService:
    """
    Solves the Lagrangian-relaxed average-AoI MDP by relative value iteration.

    Each sweep is a synchronous update over all states. The iterate is damped
    by the aperiodicity factor tau:

        h_{k+1} = (1 - tau) * h_k + tau * (T h_k - (T h_k)(ref))

    which has the same fixed point as plain RVI (tau = 1) but does not
    oscillate when the optimal chain is periodic, e.g. with p = 1 and a
    perfect channel.
    """

    def __init__(self, span_tol: float = 1e-6, max_iters: int = 100_000, ref_state: Tuple[int, int, int] = (1, 1, 0),
                 aperiodicity: float = 0.9, tie_tol: float = 1e-9):
        self.span_tol = span_tol
        self.max_iters = max_iters
        self.ref_state = State(*ref_state)
        self.aperiodicity = aperiodicity
        self.tie_tol = tie_tol
        logger.info(f"RviSolverService initialized (span_tol={span_tol}, max_iters={max_iters}, "
                    f"tau={aperiodicity}, ref={tuple(self.ref_state)}).")

    @classmethod
    def from_config(cls, cfg: RviConfig) -> "RviSolverService":
        return cls(**cfg.model_dump(exclude={"lam"}))

    def _q_table(self, kernel: Kernel, base: np.ndarray, h: np.ndarray) -> np.ndarray:
        q = base + (kernel.transitions @ h).reshape(3, kernel.n_states)
        return np.where(kernel.allowed.T, q, np.inf)

    def _greedy(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Minimum over actions and the smallest action attaining it (within the tie tolerance)."""
        q_min = q.min(axis=0)
        tol = self.tie_tol * np.maximum(1.0, np.abs(q_min))
        actions = np.argmax(q <= (q_min + tol)[None, :], axis=0) + 1
        return q_min, actions.astype(np.int8)

    def run(self, kernel: Kernel, lam: float, initial_bias: Optional[np.ndarray] = None) -> RviSolution:
        """
        Runs RVI for a fixed multiplier.

        Args:
            kernel: The truncated CMDP kernel.
            lam: Price charged per transmission.
            initial_bias: Optional warm start, e.g. the bias of a nearby multiplier.

        Returns:
            The greedy policy, the gain J*_lam, the bias normalized to zero at
            the reference state, and convergence diagnostics.
        """
        ref = kernel.space.index(self.ref_state)
        base = kernel.reward[None, :] + lam * ACTION_COST[:, None]
        tau = self.aperiodicity

        h = np.zeros(kernel.n_states) if initial_bias is None else np.array(initial_bias, dtype=float)
        h -= h[ref]

        converged = False
        iterations = 0
        span = np.inf
        for iterations in range(1, self.max_iters + 1):
            t_h = self._q_table(kernel, base, h).min(axis=0)
            h_next = (1.0 - tau) * h + tau * (t_h - t_h[ref])
            diff = h_next - h
            span = float(diff.max() - diff.min())
            h = h_next
            if iterations % 1000 == 0:
                logger.debug(f"RVI lam={lam:g}: iteration {iterations}, span={span:.3e}")
            if span < self.span_tol:
                converged = True
                break

        q_min, actions = self._greedy(self._q_table(kernel, base, h))
        gain = float(q_min[ref] - h[ref])
        residual = float(np.max(np.abs(gain + h - q_min)))

        if converged:
            logger.debug(f"RVI lam={lam:g} converged in {iterations} iterations (gain={gain:.6f}).")
        else:
            logger.warning(f"RVI lam={lam:g} did not converge within {self.max_iters} iterations "
                           f"(last span={span:.3e}, residual={residual:.3e}).")

        policy = DeterministicPolicy(kernel.space, actions, lam)
        return RviSolution(policy=policy, gain=gain, bias=h, iterations=iterations,
                           converged=converged, residual=residual, lam=lam)


def rvi_solve(kernel: Kernel, cfg: RviConfig, initial_bias: Optional[np.ndarray] = None) -> RviSolution:
    return RviSolverService.from_config(cfg).run(kernel, cfg.lam, initial_bias)

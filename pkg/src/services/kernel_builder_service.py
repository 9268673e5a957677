# src/services/kernel_builder_service.py

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import sparse

from ..utils.errors import DisallowedActionError
from ..utils.state_space import Action, ModelParams, State, StateSpace, transition

logger = logging.getLogger(__name__)

# Immediate transmission cost d(s, a) indexed by a - 1.
ACTION_COST = np.array([0.0, 1.0, 1.0])


@dataclass(eq=False)
class Kernel:
    """
    Transition, reward and cost structure of the truncated CMDP.

    `transitions` stacks the three per-action matrices vertically: row
    (a - 1) * n + i holds P(. | state i, action a). Rows of disallowed
    (state, action) pairs are empty.
    """

    params: ModelParams
    space: StateSpace
    transitions: sparse.csr_matrix

    @property
    def n_states(self) -> int:
        return len(self.space)

    @property
    def reward(self) -> np.ndarray:
        return self.space.delta.astype(float)

    @property
    def allowed(self) -> np.ndarray:
        return self.space.allowed

    def cost(self, s: State, a: int) -> float:
        return float(ACTION_COST[int(a) - 1])

    def matrix(self, a: int) -> sparse.csr_matrix:
        n = self.n_states
        return self.transitions[(int(a) - 1) * n:int(a) * n]

    def row(self, s: State, a: int) -> List[Tuple[State, float]]:
        i = self.space.index(s)
        if not self.allowed[i, int(a) - 1]:
            raise DisallowedActionError(f"No kernel row for action {int(a)} in state {tuple(s)}")
        r = (int(a) - 1) * self.n_states + i
        start, end = self.transitions.indptr[r], self.transitions.indptr[r + 1]
        return [
            (self.space.state(int(j)), float(v))
            for j, v in zip(self.transitions.indices[start:end], self.transitions.data[start:end])
        ]

    def policy_matrix(self, action_weights: np.ndarray) -> sparse.csr_matrix:
        """Transition matrix of a stationary policy given its (n, 3) action probabilities."""
        n = self.n_states
        matrix = sparse.csr_matrix((n, n))
        for a in Action:
            w = action_weights[:, a - 1]
            if np.any(w > 0.0):
                matrix = matrix + sparse.diags(w) @ self.matrix(a)
        return matrix.tocsr()

    def check_invariants(self) -> List[str]:
        """Returns a description of every violated kernel invariant; an empty list means sound."""
        violations: List[str] = []
        n = self.n_states
        params = self.params
        row_sums = np.asarray(self.transitions.sum(axis=1)).ravel()
        allowed_rows = self.allowed.T.ravel()
        successors_per_row = np.diff(self.transitions.indptr)

        for a in Action:
            for i in range(n):
                row_idx = (a - 1) * n + i
                s = self.space.state(i)
                if not allowed_rows[row_idx]:
                    if successors_per_row[row_idx] > 0:
                        violations.append(f"eliminated pair {tuple(s)}, a={int(a)} has a kernel row")
                    continue
                if abs(row_sums[row_idx] - 1.0) > 1e-12:
                    violations.append(f"row {tuple(s)}, a={int(a)} sums to {row_sums[row_idx]!r}")
                if successors_per_row[row_idx] > 4:
                    violations.append(f"row {tuple(s)}, a={int(a)} has {successors_per_row[row_idx]} successors")
                for nxt, prob in self.row(s, a):
                    if not (nxt.l <= nxt.delta <= params.delta_max and nxt.l <= params.l_max):
                        violations.append(f"successor {tuple(nxt)} of {tuple(s)}, a={int(a)} leaves the space")
                    aged = min(s.delta + 1, params.delta_max)
                    if nxt.delta < aged:
                        # AoI can only drop on a successful transmission.
                        success_prob = (1.0 - params.gamma) * (params.p if nxt.b else 1.0 - params.p)
                        if a == Action.IDLE or abs(prob - success_prob) > 1e-12:
                            violations.append(f"AoI drop {tuple(s)} -> {tuple(nxt)} under a={int(a)} with p={prob}")
        return violations


class KernelBuilderService:
    """
    Assembles the sparse transition kernel of the truncated CMDP.

    Only (state, action) pairs that survive action elimination get a row, which
    is what keeps retransmissions out of S1 and out of finished updates.
    """

    def __init__(self):
        logger.info("KernelBuilderService initialized.")

    def run(self, params: ModelParams) -> Kernel:
        """
        Builds the kernel for the given parameters.

        Args:
            params: Validated model parameters.

        Returns:
            A Kernel whose rows are row-stochastic for every allowed pair.
        """
        space = StateSpace(params)
        n = len(space)
        logger.info(f"Building kernel over {n} states (p={params.p}, gamma={params.gamma}, "
                    f"delta_max={params.delta_max}, l_max={params.l_max})...")

        rows, cols, vals = [], [], []
        allowed = space.allowed
        for i, s in enumerate(space):
            for a in Action:
                if not allowed[i, a - 1]:
                    continue
                for nxt, prob in transition(s, a, params):
                    rows.append((a - 1) * n + i)
                    cols.append(space.index(nxt))
                    vals.append(prob)

        transitions = sparse.csr_matrix((vals, (rows, cols)), shape=(3 * n, n))
        transitions.sum_duplicates()
        transitions.sort_indices()
        logger.info(f"Kernel built with {transitions.nnz} non-zero transitions.")
        return Kernel(params=params, space=space, transitions=transitions)


def build_kernel(params: ModelParams) -> Kernel:
    return KernelBuilderService().run(params)

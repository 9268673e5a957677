# src/utils/policies.py

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import DisallowedActionError
from .state_space import Action, State, StateSpace


@dataclass(eq=False)
class DeterministicPolicy:
    """
    A stationary deterministic policy stored as one action per state index.

    All policies expose `act(state_idx, trial_u, slot_u)` so the simulator can
    run deterministic, mixture and random policies through the same loop.
    """

    space: StateSpace
    actions: np.ndarray
    lam: Optional[float] = None

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int8)
        if self.actions.shape != (len(self.space),):
            raise ValueError(f"Expected {len(self.space)} actions, got shape {self.actions.shape}.")
        if self.actions.min() < 1 or self.actions.max() > 3:
            raise DisallowedActionError("Actions must lie in {1, 2, 3}.")
        feasible = self.space.allowed[np.arange(len(self.space)), self.actions - 1]
        if not feasible.all():
            bad = self.space.state(int(np.flatnonzero(~feasible)[0]))
            raise DisallowedActionError(f"Policy chooses a disallowed action in state {tuple(bad)}.")

    @classmethod
    def idle(cls, space: StateSpace) -> "DeterministicPolicy":
        return cls(space, np.ones(len(space), dtype=np.int8))

    @classmethod
    def transmit_when_allowed(cls, space: StateSpace) -> "DeterministicPolicy":
        return cls(space, space.transmit_action.copy())

    def action(self, s: State) -> Action:
        return Action(int(self.actions[self.space.index(s)]))

    def act(self, state_idx: np.ndarray, trial_u: np.ndarray, slot_u: np.ndarray) -> np.ndarray:
        return self.actions[state_idx]

    def action_weights(self) -> np.ndarray:
        """One-hot (n, 3) matrix of action probabilities."""
        weights = np.zeros((len(self.space), 3))
        weights[np.arange(len(self.space)), self.actions - 1] = 1.0
        return weights

    def to_dict(self) -> Dict[str, Any]:
        return {"lam": self.lam, "actions": self.actions.tolist()}

    @classmethod
    def from_dict(cls, space: StateSpace, data: Dict[str, Any]) -> "DeterministicPolicy":
        return cls(space, np.array(data["actions"], dtype=np.int8), data.get("lam"))


@dataclass(eq=False)
class PolicyEvaluation:
    """Long-run averages of a stationary policy: C (AoI), D (transmissions) and P(a=3 | b=1)."""

    avg_aoi: float
    avg_tx: float
    stationary: np.ndarray
    fresh_tx_given_b1: float
    iterations: int = 0
    residual: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stationary"] = self.stationary.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PolicyEvaluation":
        return cls(**{**data, "stationary": np.array(data["stationary"])})


@dataclass
class DualProbe:
    """One point of the multiplier search."""

    lam: float
    avg_aoi: float
    avg_tx: float
    gain: float
    lagrangian: float
    iterations: int
    converged: bool
    residual: float = 0.0


@dataclass(eq=False)
class MixturePolicy:
    """
    Randomized mixture of two deterministic policies.

    A single Bernoulli(mu) draw per run selects pi1, otherwise pi2; the chosen
    policy is then followed forever, so long-run averages are the mu-convex
    combination of the two evaluations.
    """

    pi1: DeterministicPolicy
    pi2: DeterministicPolicy
    mu: float
    lambda1: float
    lambda2: float
    eval1: PolicyEvaluation
    eval2: PolicyEvaluation
    gamma_max: float
    probes: List[DualProbe] = field(default_factory=list)

    @property
    def space(self) -> StateSpace:
        return self.pi1.space

    @property
    def fresh_tx_given_b1(self) -> float:
        return self.mu * self.eval1.fresh_tx_given_b1 + (1.0 - self.mu) * self.eval2.fresh_tx_given_b1

    def act(self, state_idx: np.ndarray, trial_u: np.ndarray, slot_u: np.ndarray) -> np.ndarray:
        return np.where(trial_u < self.mu, self.pi1.actions[state_idx], self.pi2.actions[state_idx])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pi1": self.pi1.to_dict(),
            "pi2": self.pi2.to_dict(),
            "mu": self.mu,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "eval1": self.eval1.to_dict(),
            "eval2": self.eval2.to_dict(),
            "gamma_max": self.gamma_max,
            "probes": [asdict(probe) for probe in self.probes],
        }

    @classmethod
    def from_dict(cls, space: StateSpace, data: Dict[str, Any]) -> "MixturePolicy":
        return cls(
            pi1=DeterministicPolicy.from_dict(space, data["pi1"]),
            pi2=DeterministicPolicy.from_dict(space, data["pi2"]),
            mu=data["mu"],
            lambda1=data["lambda1"],
            lambda2=data["lambda2"],
            eval1=PolicyEvaluation.from_dict(data["eval1"]),
            eval2=PolicyEvaluation.from_dict(data["eval2"]),
            gamma_max=data["gamma_max"],
            probes=[DualProbe(**probe) for probe in data.get("probes", [])],
        )


@dataclass(eq=False)
class RandomBaseline:
    """
    Benchmark that transmits with a fixed probability q whenever transmitting is allowed.

    Fresh updates are sent in S1 states and retransmissions in S2 states, so the
    baseline has the same transmission opportunities as the optimal policy.
    """

    space: StateSpace
    q: float
    achieved_tx: float = 0.0
    max_tx: float = 0.0

    def act(self, state_idx: np.ndarray, trial_u: np.ndarray, slot_u: np.ndarray) -> np.ndarray:
        return np.where(slot_u < self.q, self.space.transmit_action[state_idx], Action.IDLE).astype(np.int8)

    def action_weights(self) -> np.ndarray:
        weights = np.zeros((len(self.space), 3))
        eligible = self.space.transmit_action != Action.IDLE
        weights[:, 0] = np.where(eligible, 1.0 - self.q, 1.0)
        tx_cols = self.space.transmit_action[eligible] - 1
        weights[np.flatnonzero(eligible), tx_cols] = self.q
        return weights

# src/utils/state_space.py

import logging
from enum import IntEnum
from functools import cached_property
from typing import Iterator, List, NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DisallowedActionError, InvalidStateError

logger = logging.getLogger(__name__)


class ModelParams(BaseModel):
    """
    Parameters of the slotted status-update link.

    Attributes:
        p: Probability that a fresh status update is generated in a slot.
        gamma: Per-transmission failure probability of the erasure channel.
        gamma_max: Budget on the long-run fraction of slots with a transmission.
        delta_max: AoI truncation bound of the finite state space.
        l_max: Maximum number of transmissions of a single update.
    """

    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0.0, le=1.0)
    gamma: float = Field(ge=0.0, lt=1.0)
    gamma_max: float = Field(default=1.0, gt=0.0, le=1.0)
    delta_max: int = Field(default=1000, ge=1)
    l_max: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _check_truncation(self) -> "ModelParams":
        if self.delta_max < self.l_max + 2:
            raise ValueError(f"delta_max ({self.delta_max}) must be at least l_max + 2 ({self.l_max + 2}).")
        return self


class Action(IntEnum):
    IDLE = 1
    RETRANSMIT = 2
    TRANSMIT_FRESH = 3


class State(NamedTuple):
    delta: int
    l: int
    b: int


def validate_state(s: State, params: ModelParams) -> None:
    """Raises InvalidStateError unless `s` lies inside the truncated state space."""
    delta, l, b = s
    if not 1 <= delta <= params.delta_max:
        raise InvalidStateError(f"AoI {delta} outside [1, {params.delta_max}] in state {tuple(s)}")
    if not 0 <= l <= min(delta, params.l_max):
        raise InvalidStateError(f"Transmission count {l} outside [0, min(delta, l_max)] in state {tuple(s)}")
    if b not in (0, 1):
        raise InvalidStateError(f"Fresh-update flag {b} must be 0 or 1 in state {tuple(s)}")


def allowed_actions(s: State, params: ModelParams) -> Tuple[Action, ...]:
    """
    Returns the eligible actions of a state after action elimination.

    A fresh update makes retransmission pointless, so S1 = {b=1} keeps {idle,
    fresh}. Without a fresh update, retransmission is only useful when the last
    update failed and still has transmissions left, so S2 = {b=0, 0<l<l_max,
    delta != l} keeps {idle, retransmit}. Every other state can only idle.
    """
    validate_state(s, params)
    delta, l, b = s
    if b == 1:
        return (Action.IDLE, Action.TRANSMIT_FRESH)
    if 0 < l < params.l_max and delta != l:
        return (Action.IDLE, Action.RETRANSMIT)
    return (Action.IDLE,)


def transition(s: State, a: int, params: ModelParams) -> List[Tuple[State, float]]:
    """
    Returns the successor distribution of taking action `a` in state `s`.

    The AoI increment saturates at delta_max. The fresh-update flag of the next
    slot is drawn independently with probability p, and zero-probability
    successors are omitted.
    """
    if a not in allowed_actions(s, params):
        raise DisallowedActionError(f"Action {int(a)} is not allowed in state {tuple(s)}")

    delta, l, b = s
    aged = min(delta + 1, params.delta_max)
    if a == Action.IDLE:
        outcomes = [((aged, 0), 1.0)]
    elif a == Action.RETRANSMIT:
        outcomes = [((aged, l + 1), params.gamma), ((l + 1, l + 1), 1.0 - params.gamma)]
    else:
        outcomes = [((aged, 1), params.gamma), ((1, 1), 1.0 - params.gamma)]

    successors: dict[State, float] = {}
    for (next_delta, next_l), prob in outcomes:
        for next_b, b_prob in ((1, params.p), (0, 1.0 - params.p)):
            weight = prob * b_prob
            if weight <= 0.0:
                continue
            key = State(next_delta, next_l, next_b)
            successors[key] = successors.get(key, 0.0) + weight
    return list(successors.items())


class StateSpace:
    """
    Dense enumeration of the truncated state space.

    States are ordered by delta, then l, then b, which keeps every (l, b)
    slice sorted by AoI. Unreachable states such as (1, 0, b) are kept so the
    index map stays a plain bijection.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.states: List[State] = [
            State(delta, l, b)
            for delta in range(1, params.delta_max + 1)
            for l in range(0, min(delta, params.l_max) + 1)
            for b in (0, 1)
        ]
        self.lookup = np.full((params.delta_max + 1, params.l_max + 1, 2), -1, dtype=np.int64)
        for i, (delta, l, b) in enumerate(self.states):
            self.lookup[delta, l, b] = i
        logger.debug(f"Enumerated {len(self.states)} states (delta_max={params.delta_max}, l_max={params.l_max}).")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[State]:
        return iter(self.states)

    def index(self, s: State) -> int:
        validate_state(s, self.params)
        return int(self.lookup[s[0], s[1], s[2]])

    def state(self, i: int) -> State:
        return self.states[i]

    @cached_property
    def delta(self) -> np.ndarray:
        return np.array([s.delta for s in self.states], dtype=np.int64)

    @cached_property
    def l(self) -> np.ndarray:
        return np.array([s.l for s in self.states], dtype=np.int64)

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([s.b for s in self.states], dtype=np.int64)

    @cached_property
    def allowed(self) -> np.ndarray:
        """Boolean mask of shape (n, 3); column a-1 marks states where action a is eligible."""
        mask = np.zeros((len(self.states), 3), dtype=bool)
        for i, s in enumerate(self.states):
            for a in allowed_actions(s, self.params):
                mask[i, a - 1] = True
        return mask

    @cached_property
    def transmit_action(self) -> np.ndarray:
        """Transmitting action of each state (3 in S1, 2 in S2), or 1 where only idling is allowed."""
        actions = np.ones(len(self.states), dtype=np.int8)
        actions[self.allowed[:, Action.RETRANSMIT - 1]] = Action.RETRANSMIT
        actions[self.allowed[:, Action.TRANSMIT_FRESH - 1]] = Action.TRANSMIT_FRESH
        return actions

    def initial_distribution(self) -> np.ndarray:
        """Distribution of the synchronized start s0 = (1, 1, b0) with b0 ~ Bernoulli(p)."""
        dist = np.zeros(len(self.states))
        dist[self.lookup[1, 1, 1]] = self.params.p
        dist[self.lookup[1, 1, 0]] += 1.0 - self.params.p
        return dist

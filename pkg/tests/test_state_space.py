import pytest
from pydantic import ValidationError

from src.utils.errors import DisallowedActionError, InvalidStateError
from src.utils.state_space import Action, ModelParams, State, StateSpace, allowed_actions, transition


@pytest.fixture
def params():
    return ModelParams(p=0.3, gamma=0.3, gamma_max=0.3, delta_max=20, l_max=10)


@pytest.mark.parametrize("kwargs", [
    {"p": 0.0, "gamma": 0.3},
    {"p": 1.1, "gamma": 0.3},
    {"p": 0.3, "gamma": 1.0},
    {"p": 0.3, "gamma": -0.1},
    {"p": 0.3, "gamma": 0.3, "gamma_max": 0.0},
    {"p": 0.3, "gamma": 0.3, "l_max": 0},
    {"p": 0.3, "gamma": 0.3, "delta_max": 11, "l_max": 10},
])
def test_model_params_rejects_invalid_values(kwargs):
    with pytest.raises(ValidationError):
        ModelParams(**kwargs)


def test_model_params_defaults():
    params = ModelParams(p=0.3, gamma=0.3)
    assert (params.delta_max, params.l_max, params.gamma_max) == (1000, 10, 1.0)


@pytest.mark.parametrize("state, expected", [
    (State(5, 2, 1), (Action.IDLE, Action.TRANSMIT_FRESH)),
    (State(5, 2, 0), (Action.IDLE, Action.RETRANSMIT)),
    (State(5, 5, 0), (Action.IDLE,)),
    (State(12, 10, 0), (Action.IDLE,)),
    (State(5, 0, 0), (Action.IDLE,)),
    (State(5, 5, 1), (Action.IDLE, Action.TRANSMIT_FRESH)),
])
def test_allowed_actions(params, state, expected):
    assert allowed_actions(state, params) == expected


@pytest.mark.parametrize("state", [State(0, 0, 0), State(21, 0, 0), State(2, 3, 0), State(3, 1, 2), State(15, 11, 0), State(5, 10, 0)])
def test_invalid_states_are_rejected(params, state):
    with pytest.raises(InvalidStateError):
        allowed_actions(state, params)


def test_retransmission_transition(params):
    successors = dict(transition(State(5, 2, 0), Action.RETRANSMIT, params))
    assert successors == pytest.approx({
        State(6, 3, 1): 0.09, State(6, 3, 0): 0.21, State(3, 3, 1): 0.21, State(3, 3, 0): 0.49,
    })


def test_fresh_transition(params):
    successors = dict(transition(State(5, 2, 1), Action.TRANSMIT_FRESH, params))
    assert successors == pytest.approx({
        State(6, 1, 1): 0.09, State(6, 1, 0): 0.21, State(1, 1, 1): 0.21, State(1, 1, 0): 0.49,
    })


def test_idle_saturates_at_delta_max(params):
    successors = dict(transition(State(20, 0, 0), Action.IDLE, params))
    assert successors == pytest.approx({State(20, 0, 1): 0.3, State(20, 0, 0): 0.7})


def test_zero_probability_successors_are_dropped():
    params = ModelParams(p=1.0, gamma=0.0, delta_max=5, l_max=1)
    assert transition(State(3, 0, 1), Action.TRANSMIT_FRESH, params) == [(State(1, 1, 1), 1.0)]


def test_disallowed_action_is_rejected(params):
    with pytest.raises(DisallowedActionError):
        transition(State(5, 2, 1), Action.RETRANSMIT, params)
    with pytest.raises(DisallowedActionError):
        transition(State(5, 0, 0), Action.TRANSMIT_FRESH, params)


def test_state_count_tiny_instance():
    space = StateSpace(ModelParams(p=0.5, gamma=0.5, delta_max=3, l_max=1))
    assert len(space) == 12


def test_state_count_at_full_scale():
    params = ModelParams(p=0.3, gamma=0.3)
    expected = sum(2 * (min(delta, params.l_max) + 1) for delta in range(1, params.delta_max + 1))
    assert len(StateSpace(params)) == expected


def test_index_is_a_bijection(params):
    space = StateSpace(params)
    assert [space.index(s) for s in space] == list(range(len(space)))
    assert all(space.state(space.index(s)) == s for s in space)
    assert (space.lookup >= 0).sum() == len(space)


def test_states_are_ordered_by_delta_then_l_then_b(params):
    space = StateSpace(params)
    assert list(space) == sorted(space)


def test_transmit_action_mask(params):
    space = StateSpace(params)
    assert space.transmit_action[space.index(State(4, 1, 1))] == Action.TRANSMIT_FRESH
    assert space.transmit_action[space.index(State(4, 1, 0))] == Action.RETRANSMIT
    assert space.transmit_action[space.index(State(4, 4, 0))] == Action.IDLE


def test_initial_distribution(params):
    space = StateSpace(params)
    dist = space.initial_distribution()
    assert dist.sum() == pytest.approx(1.0)
    assert dist[space.index(State(1, 1, 1))] == pytest.approx(0.3)
    assert dist[space.index(State(1, 1, 0))] == pytest.approx(0.7)

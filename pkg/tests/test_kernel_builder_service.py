import numpy as np
import pytest

from src.services.kernel_builder_service import build_kernel
from src.utils.errors import DisallowedActionError
from src.utils.policies import DeterministicPolicy
from src.utils.state_space import Action, ModelParams, State


def test_kernel_invariants_hold(small_kernel):
    assert small_kernel.check_invariants() == []


@pytest.mark.parametrize("p, gamma", [(1.0, 0.0), (0.3, 0.0), (1.0, 0.5), (0.7, 0.9)])
def test_kernel_invariants_hold_at_edge_parameters(p, gamma):
    assert build_kernel(ModelParams(p=p, gamma=gamma, delta_max=8, l_max=3)).check_invariants() == []


def test_rows_are_stochastic_for_allowed_pairs(small_kernel):
    row_sums = np.asarray(small_kernel.transitions.sum(axis=1)).ravel()
    allowed = small_kernel.allowed.T.ravel()
    np.testing.assert_allclose(row_sums[allowed], 1.0, atol=1e-12)
    assert np.all(row_sums[~allowed] == 0.0)


def test_eliminated_pairs_have_no_rows(small_kernel):
    retransmit = small_kernel.matrix(Action.RETRANSMIT)
    space = small_kernel.space
    for s in (State(3, 1, 1), State(3, 0, 0), State(3, 2, 0), State(2, 2, 0)):
        assert retransmit[space.index(s)].nnz == 0
        with pytest.raises(DisallowedActionError):
            small_kernel.row(s, Action.RETRANSMIT)


def test_row_matches_transition(small_kernel):
    row = dict(small_kernel.row(State(4, 1, 0), Action.RETRANSMIT))
    assert row == pytest.approx({
        State(5, 2, 1): 0.15, State(5, 2, 0): 0.15, State(2, 2, 1): 0.35, State(2, 2, 0): 0.35,
    })


def test_reward_and_cost(small_kernel):
    space = small_kernel.space
    np.testing.assert_array_equal(small_kernel.reward, space.delta)
    for s in space:
        assert small_kernel.cost(s, Action.IDLE) == 0.0
        assert small_kernel.cost(s, Action.RETRANSMIT) == 1.0
        assert small_kernel.cost(s, Action.TRANSMIT_FRESH) == 1.0


def test_policy_matrix_is_row_stochastic(small_kernel):
    policy = DeterministicPolicy.transmit_when_allowed(small_kernel.space)
    matrix = small_kernel.policy_matrix(policy.action_weights())
    np.testing.assert_allclose(np.asarray(matrix.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_policy_matrix_selects_rows(small_kernel):
    space = small_kernel.space
    policy = DeterministicPolicy.transmit_when_allowed(space)
    matrix = small_kernel.policy_matrix(policy.action_weights()).toarray()
    i = space.index(State(3, 1, 1))
    expected = small_kernel.matrix(Action.TRANSMIT_FRESH)[i].toarray().ravel()
    np.testing.assert_allclose(matrix[i], expected)

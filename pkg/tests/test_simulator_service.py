import numpy as np
import pytest

from src.services.cmdp_solver_service import mixture_targets, solve_cmdp
from src.services.kernel_builder_service import build_kernel
from src.services.policy_evaluator_service import evaluate_policy, expected_over_horizon
from src.services.simulator_service import (
    SimConfig,
    SimulatorService,
    calibrate_random_baseline,
    compare_policies,
    run_trial,
)
from src.services.structure_analyzer_service import ThresholdBoundary, reconstruct
from src.utils.errors import DisallowedActionError
from src.utils.policies import DeterministicPolicy, RandomBaseline
from src.utils.state_space import Action, ModelParams, StateSpace

# Monte Carlo checks use four standard errors to keep fixed-seed runs far from the edge.
Z = 4.0


def fresh_threshold_policy(space, delta_star: int) -> DeterministicPolicy:
    params = space.params
    thresholds = {(l, 1): delta_star for l in range(params.l_max + 1)}
    thresholds.update({(l, 0): delta_star for l in range(1, params.l_max)})
    return reconstruct(ThresholdBoundary(params.delta_max, params.l_max, thresholds), space)


class _BrokenPolicy:
    """Retransmits everywhere, which is never allowed in S1."""

    def __init__(self, space):
        self.space = space

    def act(self, state_idx, trial_u, slot_u):
        return np.full(len(state_idx), Action.RETRANSMIT, dtype=np.int8)


def test_sim_config_validation(small_params):
    with pytest.raises(ValueError):
        SimConfig(params=small_params, horizon=0)
    with pytest.raises(ValueError):
        SimConfig(params=small_params, trials=0)


def test_idle_policy_sample_path_is_deterministic(small_params):
    """AoI is recorded at the start of each slot from delta=1 at t=0, so T=100 idle slots average (1+...+100)/100."""
    policy = DeterministicPolicy.idle(StateSpace(small_params))
    cfg = SimConfig(params=small_params, horizon=100, trials=3, seed=11)
    for trial in range(3):
        result = run_trial(policy, cfg, trial)
        assert result.aoi_avg == pytest.approx(50.5)
        assert result.tx_freq == 0.0


def test_transmit_always_on_perfect_link():
    params = ModelParams(p=1.0, gamma=0.0, delta_max=10, l_max=2)
    policy = DeterministicPolicy.transmit_when_allowed(StateSpace(params))
    report = SimulatorService(horizon=200, trials=4).run(policy, params)
    assert report.mean_aoi == 1.0
    assert report.mean_tx == 1.0
    assert report.se_aoi == 0.0


def test_two_state_cycle_on_perfect_link():
    params = ModelParams(p=1.0, gamma=0.0, delta_max=10, l_max=2)
    policy = fresh_threshold_policy(StateSpace(params), 2)
    result = SimulatorService(horizon=1000, trials=1).run_trial(policy, params, 0)
    assert result.aoi_avg == pytest.approx(1.5)
    assert result.tx_freq == pytest.approx(0.5)


def test_identical_seeds_reproduce_reports(small_params):
    policy = fresh_threshold_policy(StateSpace(small_params), 3)
    first = SimulatorService(horizon=300, trials=20, seed=5, chunk_size=7).run(policy, small_params)
    second = SimulatorService(horizon=300, trials=20, seed=5, chunk_size=20).run(policy, small_params)
    assert first.per_trial == second.per_trial
    assert first.to_dict() == second.to_dict()


def test_policies_share_the_environment(small_params):
    space = StateSpace(small_params)
    simulator = SimulatorService(horizon=200, trials=5, seed=3)
    idle = simulator.trace_block(DeterministicPolicy.idle(space), small_params, range(5))
    randomized = simulator.trace_block(RandomBaseline(space, 0.4), small_params, range(5))
    np.testing.assert_array_equal(idle["b"], randomized["b"])


def test_disallowed_action_is_an_error(small_params):
    simulator = SimulatorService(horizon=50, trials=2)
    with pytest.raises(DisallowedActionError):
        simulator.run(_BrokenPolicy(StateSpace(small_params)), small_params)


def test_trace_rows(small_params):
    policy = fresh_threshold_policy(StateSpace(small_params), 2)
    cfg = SimConfig(params=small_params, horizon=50, trials=1, seed=2)
    trace = run_trial(policy, cfg, 0, trace=True).trace
    assert [row["t"] for row in trace] == list(range(50))
    assert trace[0]["delta"] == 1 and trace[0]["l"] == 1
    for row, nxt in zip(trace, trace[1:]):
        if row["outcome"] == "idle":
            assert row["action"] == Action.IDLE
            assert nxt["delta"] == row["delta"] + 1 and nxt["l"] == 0
        elif row["outcome"] == "success":
            assert nxt["delta"] == (1 if row["action"] == Action.TRANSMIT_FRESH else row["l"] + 1)
        else:
            assert nxt["delta"] == row["delta"] + 1


def test_one_step_frequencies_match_the_kernel(small_kernel):
    params, space = small_kernel.params, small_kernel.space
    simulator = SimulatorService(horizon=1000, trials=1000, seed=17)
    trace = simulator.trace_block(fresh_threshold_policy(space, 3), params, range(1000))

    # The kernel saturates AoI at delta_max; clamping the untruncated path gives the same chain.
    idx = space.lookup[np.minimum(trace["delta"], params.delta_max), trace["l"], trace["b"]]
    current, successor = idx[:-1].ravel(), idx[1:].ravel()
    action = trace["action"][:-1].ravel()

    checked = 0
    for s in np.unique(current):
        for a in np.unique(action[current == s]):
            visits = (current == s) & (action == a)
            n = int(visits.sum())
            if n < 1000:
                continue
            row = small_kernel.row(space.state(int(s)), int(a))
            landed = successor[visits]
            assert np.isin(landed, [space.index(state) for state, _ in row]).all()
            for state, prob in row:
                share = np.mean(landed == space.index(state))
                assert abs(share - prob) <= Z * np.sqrt(prob * (1 - prob) / n)
            checked += 1
    assert checked >= 10


def test_simulation_agrees_with_exact_evaluation(medium_kernel):
    params = medium_kernel.params
    policy = fresh_threshold_policy(medium_kernel.space, 3)
    evaluation = evaluate_policy(policy, medium_kernel)
    horizon_aoi, horizon_tx = expected_over_horizon(policy, medium_kernel, 5000)
    # Over 5000 slots the start from AoI 1 shifts the mean only slightly below the long-run value.
    assert horizon_aoi == pytest.approx(evaluation.avg_aoi, abs=1e-2)

    report = SimulatorService(horizon=5000, trials=200, seed=1).run(policy, params)
    assert abs(report.mean_aoi - horizon_aoi) <= Z * report.se_aoi
    assert abs(report.mean_tx - horizon_tx) <= Z * report.se_tx
    assert report.fresh_tx_given_b1 == pytest.approx(evaluation.fresh_tx_given_b1, abs=0.01)


def test_random_baseline_calibration(medium_kernel):
    params = medium_kernel.params.model_copy(update={"gamma_max": 0.1})
    baseline = calibrate_random_baseline(params, medium_kernel)
    assert 0.0 < baseline.q < 1.0
    assert params.gamma_max - 1e-6 <= baseline.achieved_tx <= params.gamma_max
    assert baseline.max_tx > params.gamma_max

    _, horizon_tx = expected_over_horizon(baseline, medium_kernel, 5000)
    report = SimulatorService(horizon=5000, trials=200, seed=4).run(baseline, params)
    assert abs(report.mean_tx - horizon_tx) <= Z * report.se_tx
    assert abs(report.mean_tx - params.gamma_max) <= Z * report.se_tx + abs(horizon_tx - params.gamma_max)


def test_random_baseline_with_loose_budget(medium_kernel):
    params = medium_kernel.params.model_copy(update={"gamma_max": 1.0})
    baseline = calibrate_random_baseline(params, medium_kernel)
    assert baseline.q == 1.0
    assert baseline.achieved_tx == baseline.max_tx


def test_optimal_beats_random_on_common_random_numbers():
    params = ModelParams(p=0.3, gamma=0.3, gamma_max=0.1, delta_max=100, l_max=4)
    kernel = build_kernel(params)
    mixture = solve_cmdp(params, kernel=kernel)
    baseline = calibrate_random_baseline(params, kernel)
    cfg = SimConfig(params=params, horizon=5000, trials=200, seed=9)
    reports = compare_policies(cfg, {"optimal": mixture, "random": baseline})
    optimal, baseline_report = reports["optimal"], reports["random"]
    gap_se = np.hypot(optimal.se_aoi, baseline_report.se_aoi)
    assert baseline_report.mean_aoi - optimal.mean_aoi > 3 * gap_se

    horizon_aoi, horizon_tx = expected_over_horizon(mixture, kernel, cfg.horizon)
    assert abs(optimal.mean_aoi - horizon_aoi) <= Z * optimal.se_aoi
    assert abs(optimal.mean_tx - horizon_tx) <= Z * optimal.se_tx
    # Within the sampling error of the budget, up to the analytic start-up transient.
    assert abs(optimal.mean_tx - params.gamma_max) <= Z * optimal.se_tx + abs(horizon_tx - params.gamma_max)


def test_higher_failure_rate_raises_aoi():
    simulator = SimulatorService(horizon=5000, trials=200, seed=21)
    analytic, simulated = {}, {}
    for gamma in (0.3, 0.5):
        params = ModelParams(p=0.3, gamma=gamma, gamma_max=0.1, delta_max=100, l_max=4)
        mixture = solve_cmdp(params)
        analytic[gamma] = mixture_targets(mixture, params.gamma_max)[0]
        simulated[gamma] = simulator.run(mixture, params)

    assert analytic[0.5] > analytic[0.3]
    # Same seeds: every failure at gamma = 0.3 is also a failure at gamma = 0.5.
    gap_se = np.hypot(simulated[0.3].se_aoi, simulated[0.5].se_aoi)
    assert simulated[0.5].mean_aoi - simulated[0.3].mean_aoi > 3 * gap_se

"""Tests for the one-point and batch sequential design engines."""
import numpy as np
import pytest

from src.design.batch_select import select_batch_adjmmse
from src.design.criteria import make_grid
from src.design.mf_sequential import (
    Allocation,
    CostModel,
    FitOptions,
    allocate_budget,
    choose_levels,
    feasible_allocations,
    imse_red,
    imse_red_adj,
    initial_state,
    select_round,
    step_batch,
    step_kriging,
    step_kriging_batch,
    step_one_point,
    volume_factors,
)
from src.models.cokriging import (
    MfLoocvDiagnostics,
    fit_cokriging,
    mf_loocv_diagnostics,
    mf_predict_var,
    variance_decomposition,
)
from src.models.loocv import loocv_diagnostics
from src.utils.exceptions import ArgumentError, BudgetError, ConfigError
from src.utils.seeding import derive_seed
from tests.conftest import coarse_response, nested_data, two_level_simulator

FAST_FIT = FitOptions(starts=3)
X = np.array([0.37, 0.62])


def _zero_ratio_diag(sizes):
    zeros = tuple(np.zeros(n) for n in sizes)
    return MfLoocvDiagnostics(zeros, zeros, zeros, zeros, zeros)


def _identical_simulator(level, points):
    return coarse_response(points)


@pytest.fixture
def two_level_state(two_level_data):
    return initial_state(two_level_data, CostModel((1, 10)), FAST_FIT, seed=1)


@pytest.fixture
def kriging_state():
    return initial_state(nested_data([8], d=2, seed=2), CostModel((1,)), FAST_FIT, seed=2)


class TestCostModel:
    def test_costs(self):
        cost = CostModel((1, 4, 20))
        assert cost.ratio(3) == 5.0
        assert cost.stack_cost(2) == 5
        assert cost.round_cost((3, 1, 1)) == 3 + 5 + 25

    def test_times_must_increase(self):
        with pytest.raises(ArgumentError):
            CostModel((5, 5))
        with pytest.raises(ArgumentError):
            Allocation((1, -1))


class TestFeasibleAllocations:
    def test_two_levels(self):
        cost = CostModel((1, 10))
        found = feasible_allocations(cost, 120)
        assert len(found) == 11
        assert {a.q for a in found} == {(120 - 11 * k, k) for k in range(11)}
        assert all(cost.round_cost(a.q) == 120 for a in found)

    def test_below_cheapest_run(self):
        with pytest.raises(BudgetError):
            feasible_allocations(CostModel((2, 10)), 1)

    def test_no_exact_spend(self):
        with pytest.raises(BudgetError):
            feasible_allocations(CostModel((2, 10)), 3)

    def test_limit(self):
        assert len(feasible_allocations(CostModel((1, 2, 3)), 60, limit=5)) == 5


class TestReductionProxy:
    def test_single_level_is_scaled_variance(self):
        data = nested_data([10], d=2, seed=1)
        state = initial_state(data, CostModel((1,)), FAST_FIT)
        model = state.model
        expected = mf_predict_var(model, X) * np.prod(model.theta(1))
        assert imse_red(model, X, 1) == pytest.approx(expected, rel=1e-12)

    def test_two_levels(self, two_level_model):
        profile = variance_decomposition(two_level_model, X)
        expected = float(np.sum(profile.weighted * volume_factors(two_level_model)))
        assert imse_red(two_level_model, X, 2) == pytest.approx(expected, rel=1e-12)
        assert imse_red(two_level_model, X, 1) == pytest.approx(
            profile.bias[0] * np.prod(two_level_model.theta(1)), rel=1e-12)

    def test_vanishes_at_accurate_design_point(self, two_level_model):
        scale = two_level_model.sigma2(1) + two_level_model.sigma2(2)
        assert imse_red(two_level_model, two_level_model.design(2)[0], 2) <= 1e-6 * scale

    def test_adjusted_without_errors_is_plain(self, two_level_model):
        diag = _zero_ratio_diag([14, 7])
        points = np.random.default_rng(3).random((5, 2))
        np.testing.assert_allclose(imse_red_adj(two_level_model, diag, points, 2),
                                   imse_red(two_level_model, points, 2), rtol=1e-12)

    def test_level_choice_is_consistent(self, two_level_model):
        grid = make_grid(2, 200, seed=1).points
        top, decisions = choose_levels(two_level_model, X, grid, CostModel((1, 10)))
        assert top in (1, 2)
        assert len(decisions) == 1
        assert decisions[0].stop == (top == 1)
        expected_ratio = imse_red(two_level_model, X, 1) / imse_red(two_level_model, X, 2)
        assert decisions[0].reduction_ratio == pytest.approx(expected_ratio, rel=1e-12)


class TestOnePoint:
    def test_single_level_matches_kriging_maxvar(self, kriging_state):
        grid = make_grid(2, 200, seed=4)
        a = step_one_point(kriging_state, "plain", two_level_simulator, grid)
        b = step_kriging(kriging_state, "maxvar", two_level_simulator, grid)
        np.testing.assert_array_equal(a.log[-1].points[0], b.log[-1].points[0])
        assert a.spent == b.spent == 1

    def test_single_level_tracks_kriging_maxvar_over_ten_steps(self, kriging_state):
        grid = make_grid(2, 200, seed=4)
        a = b = kriging_state
        for _ in range(10):
            a = step_one_point(a, "plain", two_level_simulator, grid)
            b = step_kriging(b, "maxvar", two_level_simulator, grid)
            np.testing.assert_allclose(a.log[-1].points[0], b.log[-1].points[0], rtol=0.0, atol=1e-12)
        assert a.spent == b.spent == 10
        np.testing.assert_allclose(a.data.designs[0], b.data.designs[0], rtol=0.0, atol=1e-12)

    def test_accurate_runs_stay_a_minority(self, two_level_state):
        grid = make_grid(2, 200, seed=9)
        state = two_level_state
        for _ in range(20):
            state = step_one_point(state, "plain", two_level_simulator, grid)
        assert state.iteration == 20
        assert state.accurate_fraction < 0.5
        assert state.spent == (state.runs[0] - 14) + 10 * (state.runs[1] - 7)

    @pytest.mark.parametrize("criterion", ["plain", "adjusted"])
    def test_ledger(self, two_level_state, criterion):
        grid = make_grid(2, 200, seed=5)
        new = step_one_point(two_level_state, criterion, two_level_simulator, grid, nrmse_fn=lambda m: 0.25)
        record = new.log[-1]
        top = record.levels[0]
        assert new.spent == two_level_state.cost.stack_cost(top)
        assert record.spent_time == new.spent
        assert new.data.sizes()[0] == 15
        assert new.data.sizes()[1] == 7 + (top == 2)
        assert record.total_runs == sum(new.runs) == 21 + top
        assert record.nrmse == 0.25
        assert new.iteration == 1 and two_level_state.iteration == 0

    def test_budget_truncates_levels(self, two_level_state):
        grid = make_grid(2, 200, seed=6)
        new = step_one_point(two_level_state, "plain", two_level_simulator, grid, budget=5)
        assert new.log[-1].levels == (1,)
        assert new.spent == 1

    def test_exhausted_budget(self, two_level_state):
        with pytest.raises(BudgetError):
            step_one_point(two_level_state, "plain", two_level_simulator, make_grid(2, 200), budget=0)

    def test_unknown_criterion(self, two_level_state):
        with pytest.raises(ConfigError):
            step_one_point(two_level_state, "greedy", two_level_simulator, make_grid(2, 200))


class TestKrigingSteps:
    def test_rejects_multi_level_state(self, two_level_state, fast_mh):
        grid = make_grid(2, 200)
        with pytest.raises(ConfigError):
            step_kriging(two_level_state, "maxvar", two_level_simulator, grid)
        with pytest.raises(ConfigError):
            step_kriging_batch(two_level_state, 2, "adjmmse", two_level_simulator, grid, fast_mh)

    @pytest.mark.parametrize("method", ["adjmmse", "liar-minimse"])
    def test_batch_spends_q_runs(self, kriging_state, fast_mh, method):
        new = step_kriging_batch(kriging_state, 2, method, two_level_simulator, make_grid(2, 200, seed=7), fast_mh)
        assert new.spent == 2
        assert new.data.sizes() == [10]
        assert new.accurate_fraction == 1.0

    def test_unknown_batch_method(self, kriging_state, fast_mh):
        with pytest.raises(ConfigError):
            step_kriging_batch(kriging_state, 2, "qei", two_level_simulator, make_grid(2, 200), fast_mh)


class TestBatchRounds:
    def test_round_conditions_coarse_level_on_fine_picks(self, two_level_model, fast_mh):
        diag = mf_loocv_diagnostics(two_level_model)
        selection = select_round(two_level_model, diag, Allocation((2, 1)), fast_mh)
        assert selection.points[2].shape == (1, 2)
        assert selection.points[1].shape == (2, 2)
        assert selection.conditioned[1].design(1).shape[0] == 14 + 1
        assert selection.conditioned[2].levels == 2
        assert selection.score == pytest.approx(sum(selection.level_scores.values()))

    def test_coarse_only_round_is_kriging_batch(self, two_level_model, fast_mh):
        diag = mf_loocv_diagnostics(two_level_model)
        selection = select_round(two_level_model, diag, Allocation((1, 0)), fast_mh, n_max=6)
        base = two_level_model.base
        single = select_batch_adjmmse(base, loocv_diagnostics(base), 1,
                                      fast_mh.with_seed(derive_seed(fast_mh.seed, 1)), n_max=6)
        assert selection.points[2].shape == (0, 2)
        np.testing.assert_allclose(selection.points[1], single.points, rtol=0.0, atol=1e-12)
        assert selection.level_scores[2] == 0.0

    def test_identical_codes_spend_everything_on_coarse_runs(self, fast_mh):
        data = nested_data([14, 7], d=2, seed=3, simulator=_identical_simulator)
        model = fit_cokriging(data, thetas=[np.full(2, 0.3), np.full(2, 0.4)])
        assert model.rho(2) == pytest.approx(1.0, abs=1e-8)
        result = allocate_budget(model, CostModel((1, 10)), 34, fast_mh, n_max=40)
        assert set(result.scores) == {(34, 0), (23, 1), (12, 2), (1, 3)}
        assert result.best.allocation.q == (34, 0)
        assert result.scores[(34, 0)] > max(v for q, v in result.scores.items() if q[1] > 0)

    def test_allocation_keeps_best_score(self, two_level_model, fast_mh):
        result = allocate_budget(two_level_model, CostModel((1, 10)), 12, fast_mh)
        assert set(result.scores) == {(12, 0), (1, 1)}
        assert result.best.score == max(result.scores.values())

    def test_step_spends_round_budget(self, two_level_state, fast_mh):
        new = step_batch(two_level_state, 13, fast_mh, two_level_simulator, allocation=Allocation((2, 1)))
        assert new.spent == 13
        assert new.log[-1].levels == (2, 1, 1)
        assert new.data.sizes() == [17, 8]
        assert new.runs == (17, 8)

    def test_allocation_must_cost_budget(self, two_level_state, fast_mh):
        with pytest.raises(BudgetError):
            step_batch(two_level_state, 12, fast_mh, two_level_simulator, allocation=Allocation((2, 1)))

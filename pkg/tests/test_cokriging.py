"""Tests for the recursive co-kriging stack and its multi-level LOO."""
import numpy as np
import pytest

from src.models.cokriging import (
    MultiFidelityData,
    cokriging_from_dict,
    cokriging_to_dict,
    fit_cokriging,
    level_variance,
    mf_liar_condition,
    mf_loocv_diagnostics,
    mf_loocv_error,
    mf_loocv_var,
    mf_predict_mean,
    mf_predict_var,
    variance_decomposition,
)
from src.models.kernels import correlation_matrix, cross_correlation
from src.models.kriging import fit_kriging, predict_mean, predict_var
from src.utils.exceptions import ArgumentError, NestingError
from tests.conftest import coarse_response, nested_data, three_level_simulator, two_level_simulator

TEST_POINTS = np.random.default_rng(21).random((60, 2))


def _without_point(data, level, i):
    """Data with point i of D^level removed from levels 1..level (higher levels dropped)"""
    point = data.designs[level - 1][i]
    designs, outputs = [], []
    for j in range(level):
        keep = ~np.all(np.isclose(data.designs[j], point, rtol=0.0, atol=1e-12), axis=1)
        designs.append(data.designs[j][keep])
        outputs.append(data.outputs[j][keep])
    return MultiFidelityData(tuple(designs), tuple(outputs))


def _dense_level(design, outputs, regressors, kernel, nugget, points, point_regressors):
    """Dense GLS fit of one level and its mean and bias variance at the points"""
    R_inv = np.linalg.inv(correlation_matrix(design, kernel, nugget=nugget))
    info = regressors.T @ R_inv @ regressors
    coef = np.linalg.solve(info, regressors.T @ R_inv @ outputs)
    residual = outputs - regressors @ coef
    sigma2 = residual @ R_inv @ residual / (len(outputs) - regressors.shape[1])
    r = cross_correlation(design, points, kernel)
    mean = point_regressors @ coef + r.T @ R_inv @ residual
    u = point_regressors.T - regressors.T @ R_inv @ r
    var = sigma2 * (1.0 - np.sum(r * (R_inv @ r), axis=0) + np.sum(u * np.linalg.solve(info, u), axis=0))
    return coef, mean, var


def _dense_two_level(model, data, points):
    """Two-level co-kriging recomputed with plain numpy at the fitted theta and nugget"""
    X1, y1 = data.designs[0], data.outputs[0]
    X2, y2 = data.designs[1], data.outputs[1]
    ones = np.ones((len(points), 1))
    _, mean1, var1 = _dense_level(X1, y1, np.ones((len(y1), 1)), model.base.kernel, model.base.nugget,
                                  points, ones)
    rows = [int(np.flatnonzero(np.all(np.isclose(X1, x, rtol=0.0, atol=1e-12), axis=1))[0]) for x in X2]
    H = np.column_stack([y1[rows], np.ones(len(y2))])
    lm = model.upper[0]
    coef, mean2, bias2 = _dense_level(X2, y2, H, lm.kernel, lm.nugget, points, np.column_stack([mean1, ones]))
    return coef, mean1, mean2, var1, bias2


class TestSingleLevel:
    def test_matches_kriging(self):
        data = nested_data([10], d=2, seed=4)
        theta = np.array([0.3, 0.5])
        stack = fit_cokriging(data, thetas=[theta])
        plain = fit_kriging(data.designs[0], data.outputs[0], theta=theta)
        np.testing.assert_allclose(mf_predict_mean(stack, TEST_POINTS), predict_mean(plain, TEST_POINTS), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(mf_predict_var(stack, TEST_POINTS), predict_var(plain, TEST_POINTS), rtol=1e-12, atol=1e-14)


class TestPrediction:
    def test_variance_recursion(self, two_level_model):
        expected = (two_level_model.rho(2) ** 2 * mf_predict_var(two_level_model, TEST_POINTS, level=1)
                    + level_variance(two_level_model, TEST_POINTS, 2))
        np.testing.assert_allclose(mf_predict_var(two_level_model, TEST_POINTS), expected, rtol=1e-12)

    def test_decomposition_sums_to_total(self, two_level_data, two_level_model):
        points = np.random.default_rng(22).random((100, 2))
        profile = variance_decomposition(two_level_model, points)
        total = mf_predict_var(two_level_model, points)
        _, _, _, var1, bias2 = _dense_two_level(two_level_model, two_level_data, points)
        rho = two_level_model.rho(2)
        assert profile.bias.shape == (2, 100)
        np.testing.assert_allclose(profile.weighted[1], profile.bias[1], rtol=1e-12)
        np.testing.assert_allclose(profile.weighted[0], rho ** 2 * profile.bias[0], rtol=1e-12)
        assert np.max(np.abs(profile.weighted.sum(axis=0) - total) / total) < 1e-10
        floor = 1e-10 * two_level_model.sigma2(1)
        np.testing.assert_allclose(total, rho ** 2 * var1 + bias2, rtol=1e-6, atol=floor)

    def test_interpolates_every_level(self, two_level_data, two_level_model):
        for level in (1, 2):
            np.testing.assert_allclose(mf_predict_mean(two_level_model, two_level_data.designs[level - 1], level),
                                       two_level_data.outputs[level - 1], rtol=1e-6, atol=1e-6)

    def test_level_out_of_range(self, two_level_model):
        with pytest.raises(ArgumentError):
            mf_predict_mean(two_level_model, TEST_POINTS[0], level=3)

    def test_regression_on_coarse_output(self, two_level_model):
        # fine = 1.5 * coarse + small smooth term
        assert two_level_model.rho(2) == pytest.approx(1.5, abs=0.5)
        assert two_level_model.rho(1) == 0.0


def _scaled_simulator(level, points):
    return coarse_response(points) if level == 1 else 2.0 * coarse_response(points)


class TestDenseSolve:
    def test_mean_matches_dense_recursion(self, two_level_data, two_level_model):
        points = TEST_POINTS[:10]
        _, mean1, mean2, _, _ = _dense_two_level(two_level_model, two_level_data, points)
        scale = np.max(np.abs(two_level_data.outputs[1]))
        np.testing.assert_allclose(mf_predict_mean(two_level_model, points, level=1), mean1,
                                   rtol=1e-7, atol=1e-8 * scale)
        np.testing.assert_allclose(mf_predict_mean(two_level_model, points), mean2,
                                   rtol=1e-7, atol=1e-8 * scale)

    def test_scale_and_trend_least_squares(self):
        data = nested_data([8, 5], d=1, seed=6)
        model = fit_cokriging(data, thetas=[np.array([0.15]), np.array([0.25])])
        coef, _, _, _, _ = _dense_two_level(model, data, np.array([[0.5]]))
        assert model.rho(2) == pytest.approx(coef[0], rel=1e-8, abs=1e-10)
        np.testing.assert_allclose(model.upper[0].beta_hat, coef[1:], rtol=1e-8, atol=1e-10)

    def test_pure_scaling(self):
        data = nested_data([12, 6], d=2, seed=8, simulator=_scaled_simulator)
        model = fit_cokriging(data, thetas=[np.full(2, 0.3), np.full(2, 0.35)])
        assert model.rho(2) == pytest.approx(2.0, abs=1e-8)
        assert model.sigma2(2) <= 1e-10 * np.mean(data.outputs[1] ** 2)
        np.testing.assert_allclose(mf_predict_mean(model, TEST_POINTS), 2.0 * mf_predict_mean(model, TEST_POINTS, level=1),
                                   rtol=1e-8, atol=1e-8)
        diag = mf_loocv_diagnostics(model)
        coarse_rows = data.index_maps[1][0]
        np.testing.assert_allclose(diag.errors[1], model.rho(2) * diag.errors[0][coarse_rows],
                                   rtol=1e-8, atol=1e-8)


class TestMultiLevelLoo:
    @pytest.mark.parametrize("sizes,d,seed", [([10, 6], 1 + seed % 2, seed) for seed in range(10)]
                             + [([16, 10, 6], 2, seed) for seed in range(3)])
    def test_matches_delete_from_all_levels(self, sizes, d, seed):
        simulator = two_level_simulator if len(sizes) == 2 else three_level_simulator
        data = nested_data(sizes, d=d, seed=seed, simulator=simulator)
        base = 0.15 if d == 1 else 0.3
        thetas = [np.full(d, base + 0.05 * l) for l in range(len(sizes))]
        model = fit_cokriging(data, thetas=thetas)
        diag = mf_loocv_diagnostics(model)
        for level in range(1, len(sizes) + 1):
            for i in range(sizes[level - 1]):
                reduced = fit_cokriging(_without_point(data, level, i), thetas=thetas[:level])
                x = data.designs[level - 1][i]
                error = data.outputs[level - 1][i] - mf_predict_mean(reduced, x)
                var = mf_predict_var(reduced, x)
                assert diag.errors[level - 1][i] == pytest.approx(error, rel=1e-6, abs=1e-8)
                assert diag.variances[level - 1][i] == pytest.approx(var, rel=1e-6, abs=1e-12)

    def test_ratios_use_level_increments(self, two_level_model):
        diag = mf_loocv_diagnostics(two_level_model)
        assert diag.levels == 2
        np.testing.assert_allclose(diag.error_increments[0], diag.errors[0])
        np.testing.assert_allclose(diag.ratios[1],
                                   np.minimum(diag.error_increments[1] ** 2 / diag.variance_increments[1], 1e6))

    def test_single_point_accessors(self, two_level_model):
        diag = mf_loocv_diagnostics(two_level_model)
        assert mf_loocv_error(two_level_model, 2, 3) == pytest.approx(diag.errors[1][3])
        assert mf_loocv_var(two_level_model, 1, 5) == pytest.approx(diag.variances[0][5])
        with pytest.raises(ArgumentError):
            mf_loocv_error(two_level_model, 2, 7)


class TestLiarCondition:
    def test_means_kept_variance_reduced(self, two_level_model):
        new = np.array([[0.52, 0.47], [0.05, 0.93]])
        updated = mf_liar_condition(two_level_model, new, 2)
        assert updated.levels == 2
        assert updated.design(1).shape[0] == two_level_model.design(1).shape[0] + 2
        assert updated.design(2).shape[0] == two_level_model.design(2).shape[0] + 2
        np.testing.assert_allclose(mf_predict_mean(updated, TEST_POINTS), mf_predict_mean(two_level_model, TEST_POINTS),
                                   rtol=1e-6, atol=1e-7)
        scale = two_level_model.sigma2(1) + two_level_model.sigma2(2)
        assert np.all(mf_predict_var(updated, TEST_POINTS) <= mf_predict_var(two_level_model, TEST_POINTS) + 1e-9 * scale)
        assert updated.rho(2) == two_level_model.rho(2)

    def test_truncates_to_level(self, two_level_model):
        updated = mf_liar_condition(two_level_model, np.array([0.52, 0.47]), 1)
        assert updated.levels == 1
        assert updated.design(1).shape[0] == two_level_model.design(1).shape[0] + 1


class TestData:
    def test_rejects_non_nested(self):
        coarse = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.2], [0.3, 0.8]])
        fine = np.array([[0.1, 0.1], [0.6, 0.6]])
        with pytest.raises(NestingError):
            MultiFidelityData((coarse, fine), (np.zeros(4), np.zeros(2)))

    def test_coarse_outputs_follow_nesting(self, two_level_data):
        coarse = two_level_data.coarse_outputs(2)
        idx = two_level_data.index_maps[1][0]
        np.testing.assert_array_equal(coarse, two_level_data.outputs[0][idx])

    def test_add_runs(self, two_level_data):
        point = np.array([0.515, 0.485])
        grown = two_level_data.add_runs(point, [1.0, 2.0])
        assert grown.sizes() == [15, 8]
        assert grown.contains(2, point)
        # existing level-1 point keeps its stored value
        again = grown.add_runs(point, [None, None])
        assert again.sizes() == [15, 8]
        with pytest.raises(ArgumentError):
            two_level_data.add_runs(np.array([0.2, 0.9]), [None])

    def test_dict_round_trip(self, two_level_data):
        rebuilt = MultiFidelityData.from_dict(two_level_data.to_dict())
        assert rebuilt.sizes() == two_level_data.sizes()


class TestSerialization:
    def test_record_rebuilds_same_predictions(self, two_level_model):
        record = cokriging_to_dict(two_level_model)
        assert record["kind"] == "cokriging"
        rebuilt = cokriging_from_dict(record)
        np.testing.assert_allclose(mf_predict_mean(rebuilt, TEST_POINTS), mf_predict_mean(two_level_model, TEST_POINTS),
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(mf_predict_var(rebuilt, TEST_POINTS), mf_predict_var(two_level_model, TEST_POINTS),
                                   rtol=1e-8, atol=1e-14)

    def test_rejects_kriging_record(self, make_kriging):
        from src.models.kriging import model_to_dict

        with pytest.raises(ArgumentError):
            cokriging_from_dict(model_to_dict(make_kriging()))


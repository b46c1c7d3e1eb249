"""Closed-form leave-one-out against brute-force delete-and-refit."""
import numpy as np
import pandas as pd
import pytest

from src.models.kernels import correlation_matrix, cross_correlation, factorization_count
from src.models.kriging import fit_kriging, predict_mean
from src.models.loocv import (
    RATIO_CAP,
    diagnostics_frame,
    jackknife_variance,
    loocv_diagnostics,
    loocv_mean,
    loocv_means_at,
    loocv_var,
    ratio_from,
    save_diagnostics_csv,
    zero_diagnostics,
)
from src.utils.exceptions import ArgumentError, DiagnosticsError


def _delete_and_refit(model, i):
    """LOO mean and variance at x_i from a dense refit without point i (theta and nugget fixed)."""
    keep = np.arange(model.n) != i
    X, y, F = model.design[keep], model.outputs[keep], model.F[keep]
    R = correlation_matrix(X, model.kernel, nugget=model.nugget)
    R_inv = np.linalg.inv(R)
    info = F.T @ R_inv @ F
    beta = np.linalg.solve(info, F.T @ R_inv @ y)
    residual = y - F @ beta
    sigma2 = residual @ R_inv @ residual / (len(y) - F.shape[1])
    r = cross_correlation(X, model.design[i:i + 1], model.kernel)[:, 0]
    f = model.F[i]
    mean = f @ beta + r @ R_inv @ residual
    u = f - F.T @ R_inv @ r
    var = sigma2 * (1.0 - r @ R_inv @ r + u @ np.linalg.solve(info, u))
    return mean, var


def _random_model(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    n = int(rng.integers(6, 16))
    trend = ("constant", "linear")[seed % 2]
    family = ("squared-exponential", "matern-5/2")[(seed // 2) % 2]
    design = rng.random((n, d))
    theta = rng.uniform(0.1, 0.2, d) if d == 1 else rng.uniform(0.2, 0.4, d)
    outputs = np.sin(5.0 * design[:, 0]) + design.sum(axis=1) ** 2
    return fit_kriging(design, outputs, trend, family, theta=theta)


class TestClosedForm:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_delete_and_refit(self, seed):
        model = _random_model(seed)
        scale = np.max(np.abs(model.outputs))
        for i in range(model.n):
            mean, var = _delete_and_refit(model, i)
            assert loocv_mean(model, i) == pytest.approx(mean, rel=1e-8, abs=1e-8 * scale)
            assert loocv_var(model, i) == pytest.approx(var, rel=1e-8, abs=1e-10 * model.sigma2_hat)

    def test_index_out_of_range(self, make_kriging):
        model = make_kriging(n=8, d=2)
        with pytest.raises(ArgumentError):
            loocv_var(model, 8)

    def test_no_new_factorization(self, make_kriging):
        model = make_kriging(n=10, d=2, seed=3)
        before = factorization_count()
        loocv_diagnostics(model)
        assert factorization_count() == before


class TestDiagnostics:
    def test_ratios_are_error_over_variance(self, make_kriging):
        model = make_kriging(n=10, d=2, seed=5)
        diag = loocv_diagnostics(model)
        assert diag.n == 10
        np.testing.assert_allclose(diag.e2, diag.errors ** 2)
        np.testing.assert_allclose(diag.ratios, np.minimum(diag.e2 / diag.s2, RATIO_CAP))
        for i in (0, 4, 9):
            assert diag.errors[i] == pytest.approx(model.outputs[i] - loocv_mean(model, i), abs=1e-12)

    def test_ratio_cap(self):
        ratios = ratio_from(np.array([1.0, 1e-2]), np.array([1e-12, 1.0]))
        np.testing.assert_allclose(ratios, [RATIO_CAP, 1e-2])

    def test_nonpositive_variance_reports_index(self):
        with pytest.raises(DiagnosticsError) as info:
            ratio_from(np.array([1.0, 1.0]), np.array([1.0, 0.0]), level=2)
        assert info.value.index == 1 and info.value.level == 2

    def test_zero_diagnostics(self):
        diag = zero_diagnostics(4)
        np.testing.assert_array_equal(diag.ratios, np.zeros(4))

    def test_frame_and_csv(self, make_kriging, tmp_path):
        diag = loocv_diagnostics(make_kriging(n=8, d=2, seed=6))
        frame = diagnostics_frame(diag)
        assert list(frame.columns) == ["index", "e2", "s2", "ratio"]
        path = save_diagnostics_csv(diag, tmp_path / "diag.csv")
        np.testing.assert_allclose(pd.read_csv(path)["ratio"].to_numpy(), diag.ratios, rtol=1e-11)


class TestJackknife:
    def test_delete_one_means_at_design_points(self, make_kriging):
        model = make_kriging(n=9, d=2, seed=7)
        means = loocv_means_at(model, model.design)
        for i in range(model.n):
            assert means[i, i] == pytest.approx(loocv_mean(model, i), rel=1e-8, abs=1e-10)

    def test_variance_from_pseudo_values(self, make_kriging):
        model = make_kriging(n=9, d=2, seed=8)
        x = np.array([[0.31, 0.47], [0.8, 0.1]])
        n = model.n
        pseudo = n * predict_mean(model, x)[None, :] - (n - 1) * loocv_means_at(model, x)
        expected = pseudo.var(axis=0, ddof=1) / n
        np.testing.assert_allclose(jackknife_variance(model, x), expected, rtol=1e-10)
        assert isinstance(jackknife_variance(model, x[0]), float)

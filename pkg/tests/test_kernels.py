"""Tests for correlation kernels, domain scaling and the nugget escalation."""
import numpy as np
import pytest
from scipy import linalg

from src.models import kernels
from src.models.kernels import (
    CorrelationKernel,
    Domain,
    TrendBasis,
    correlation,
    correlation_matrix,
    correlation_vector,
    factorization_count,
    factorize_correlation,
    scale_from_unit,
    scale_to_unit,
)
from src.utils.exceptions import ArgumentError, ConditioningError, DomainError


class TestCorrelation:
    def test_squared_exponential_value(self):
        kernel = CorrelationKernel("squared-exponential", [0.5, 2.0])
        x, y = np.array([0.1, 0.2]), np.array([0.4, 0.9])
        expected = np.exp(-((0.3 / 0.5) ** 2 + (0.7 / 2.0) ** 2))
        assert correlation(x, y, kernel) == pytest.approx(expected, rel=1e-14)

    def test_matern_value(self):
        kernel = CorrelationKernel("matern-5/2", [0.5, 2.0])
        x, y = np.array([0.1, 0.2]), np.array([0.4, 0.9])
        r = np.sqrt((0.3 / 0.5) ** 2 + (0.7 / 2.0) ** 2)
        h = np.sqrt(5.0) * r
        expected = (1.0 + h + h ** 2 / 3.0) * np.exp(-h)
        assert correlation(x, y, kernel) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("family", ["squared-exponential", "matern-5/2"])
    def test_unit_on_diagonal_and_symmetric(self, family):
        kernel = CorrelationKernel(family, [0.3, 0.7, 1.1])
        rng = np.random.default_rng(0)
        x, y = rng.random(3), rng.random(3)
        assert correlation(x, x, kernel) == pytest.approx(1.0)
        assert correlation(x, y, kernel) == pytest.approx(correlation(y, x, kernel), rel=1e-15)

    def test_dimension_mismatch(self):
        kernel = CorrelationKernel("squared-exponential", [0.3, 0.7])
        with pytest.raises(ArgumentError):
            correlation(np.zeros(2), np.zeros(3), kernel)

    def test_invalid_theta(self):
        with pytest.raises(ArgumentError):
            CorrelationKernel("squared-exponential", [0.3, 0.0])
        with pytest.raises(ArgumentError):
            CorrelationKernel("gaussian", [0.3])

    def test_matrix_nugget_and_vector(self):
        kernel = CorrelationKernel("squared-exponential", [0.4])
        design = np.array([[0.0], [0.5], [1.0]])
        R = correlation_matrix(design, kernel, nugget=1e-8)
        np.testing.assert_allclose(np.diag(R), 1.0 + 1e-8)
        np.testing.assert_allclose(R, R.T)
        np.testing.assert_allclose(correlation_vector(design, np.array([0.5]), kernel), R[:, 1] - [0, 1e-8, 0])


class TestDomain:
    def test_round_trip(self):
        domain = Domain([30.0, 1500.0], [50.0, 2500.0])
        x = np.array([[35.0, 2000.0], [50.0, 1500.0]])
        unit = scale_to_unit(x, domain)
        np.testing.assert_allclose(unit, [[0.25, 0.5], [1.0, 0.0]])
        np.testing.assert_allclose(scale_from_unit(unit, domain), x)

    def test_out_of_range_names_coordinate(self):
        domain = Domain([0.0, 0.0], [1.0, 2.0], ("a", "b"))
        with pytest.raises(DomainError) as info:
            scale_to_unit(np.array([0.5, 2.5]), domain)
        assert info.value.coordinate == 1
        assert "b" in str(info.value)

    def test_invalid_bounds(self):
        with pytest.raises(ArgumentError):
            Domain([1.0], [1.0])


class TestFactorization:
    def test_well_conditioned_uses_start_nugget(self):
        kernel = CorrelationKernel("squared-exponential", [0.2])
        design = np.linspace(0.0, 1.0, 6)[:, None]
        before = factorization_count()
        R, L, nugget = factorize_correlation(design, kernel)
        assert factorization_count() == before + 1
        assert nugget == pytest.approx(1e-10)
        np.testing.assert_allclose(L @ L.T, R, atol=1e-12)

    def test_escalates_until_success(self, monkeypatch):
        real = linalg.cholesky

        def picky(R, lower=True):
            if R[0, 0] - 1.0 < 5e-9:
                raise linalg.LinAlgError("not positive definite")
            return real(R, lower=lower)

        monkeypatch.setattr(kernels.linalg, "cholesky", picky)
        kernel = CorrelationKernel("squared-exponential", [0.2])
        design = np.linspace(0.0, 1.0, 4)[:, None]
        _, _, nugget = factorize_correlation(design, kernel)
        assert nugget == pytest.approx(1e-8)

    def test_gives_up_at_nugget_max(self, monkeypatch):
        def never(R, lower=True):
            raise linalg.LinAlgError("not positive definite")

        monkeypatch.setattr(kernels.linalg, "cholesky", never)
        kernel = CorrelationKernel("squared-exponential", [0.2])
        with pytest.raises(ConditioningError) as info:
            factorize_correlation(np.linspace(0.0, 1.0, 4)[:, None], kernel)
        assert info.value.nugget == pytest.approx(1e-6)


class TestTrendBasis:
    def test_constant_and_linear(self):
        points = np.array([[0.1, 0.2], [0.3, 0.4]])
        np.testing.assert_array_equal(TrendBasis("constant", 2).evaluate(points), [[1.0], [1.0]])
        linear = TrendBasis("linear", 2)
        assert linear.p == 3
        np.testing.assert_array_equal(linear.evaluate(points), [[1.0, 0.1, 0.2], [1.0, 0.3, 0.4]])

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            TrendBasis("quadratic", 2)

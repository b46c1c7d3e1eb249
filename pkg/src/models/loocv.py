"""
Closed-form leave-one-out cross-validation

Deleting point i and re-estimating the regression coefficients and the
process variance (theta fixed) only needs the stored R^-1: the inverse of the
reduced correlation matrix is the Schur complement
K_i = Q_{-i,-i} - Q_{-i,i} Q_{i,-i} / Q_ii with Q = R^-1.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg

from src.models.kernels import cross_correlation
from src.models.kriging import KrigingModel, _as_points, predict_mean, sigma2_floor
from src.utils.exceptions import ArgumentError, ConditioningError, DiagnosticsError

RATIO_CAP = 1e6
MIN_DIAGONAL = 1e-12


@dataclass(frozen=True, eq=False)
class LooTerm:
    """Quantities of one deletion computed from the full inverse"""

    index: int
    error: float
    sigma2: float
    coef: np.ndarray
    u: np.ndarray
    coef_cov: np.ndarray
    base: float

    @property
    def variance(self) -> float:
        return self.sigma2 * (self.base + float(self.u @ self.coef_cov @ self.u))


@dataclass(frozen=True, eq=False)
class LoocvDiagnostics:
    """Per-point LOO errors, variances and capped error/variance ratios"""

    errors: np.ndarray
    e2: np.ndarray
    s2: np.ndarray
    ratios: np.ndarray

    @property
    def n(self) -> int:
        return int(self.e2.size)


def loo_term(R_inv: np.ndarray, regressors: np.ndarray, outputs: np.ndarray,
             nugget: float, i: int) -> LooTerm:
    """
    Delete point i and re-estimate coefficients and variance at fixed theta

    Args:
        R_inv: inverse correlation matrix of the full design
        regressors: n x k regressor matrix (F, or [y^{l-1}, F_l] for co-kriging)
        outputs: n observed values
        nugget: nugget in R
        i: 0-based index of the deleted point

    Returns:
        LooTerm; the error is observed minus LOO-predicted, the variance
        uses the divisor n - 1 - k
    """
    n, k = regressors.shape
    if not 0 <= i < n:
        raise ArgumentError(f"LOO index {i} out of range for {n} points")
    if n - 1 - k < 1:
        raise ArgumentError(f"Only {n - 1} points left after deletion for {k} regressors")

    q_ii = float(R_inv[i, i])
    if q_ii < MIN_DIAGONAL:
        raise ConditioningError(f"Diagonal entry {i} of R^-1 is {q_ii:.3e}", nugget=nugget)

    keep = np.arange(n) != i
    q = R_inv[keep, i]
    K = R_inv[np.ix_(keep, keep)] - np.outer(q, q) / q_ii
    H = regressors[keep]
    y = outputs[keep]

    KH = K @ H
    info = H.T @ KH
    coef_cov = linalg.inv(0.5 * (info + info.T))
    coef = coef_cov @ (KH.T @ y)

    residual = outputs - regressors @ coef
    error = float(R_inv[i] @ residual) / q_ii
    reduced = residual[keep]
    sigma2 = max(float(reduced @ K @ reduced) / (n - 1 - k), sigma2_floor(outputs))
    u = (R_inv[i] @ regressors) / q_ii
    return LooTerm(index=i, error=error, sigma2=sigma2, coef=coef, u=u,
                   coef_cov=coef_cov, base=max(1.0 / q_ii - nugget, 0.0))


def loo_terms(R_inv: np.ndarray, regressors: np.ndarray, outputs: np.ndarray,
              nugget: float) -> List[LooTerm]:
    return [loo_term(R_inv, regressors, outputs, nugget, i) for i in range(regressors.shape[0])]


def _model_term(model: KrigingModel, i: int) -> LooTerm:
    return loo_term(model.R_inv, model.F, model.outputs, model.nugget, i)


def loocv_mean(model: KrigingModel, i: int) -> float:
    """LOO-predicted mean m_{n,-i}(x_i) for the 0-based index i"""
    term = _model_term(model, i)
    return float(model.outputs[i]) - term.error


def loocv_var(model: KrigingModel, i: int) -> float:
    """LOO predictive variance k_{n,-i}(x_i) with sigma2 re-estimated on n - p - 1"""
    return _model_term(model, i).variance


def ratio_from(e2: np.ndarray, s2: np.ndarray, level: int = 1) -> np.ndarray:
    """Error/variance ratios capped at RATIO_CAP"""
    bad = np.flatnonzero(~(s2 > 0.0))
    if bad.size:
        raise DiagnosticsError(f"LOO variance {s2[bad[0]]:.3e} at index {int(bad[0])} is not positive",
                               level=level, index=int(bad[0]))
    raw = e2 / s2
    capped = raw > RATIO_CAP
    if np.any(capped):
        logger.debug("Capped {} LOO ratio(s) at {:.0e}, largest raw value {:.3e}",
                     int(capped.sum()), RATIO_CAP, float(raw.max()))
    return np.minimum(raw, RATIO_CAP)


def loocv_diagnostics(model: KrigingModel) -> LoocvDiagnostics:
    """All LOO errors and variances from the stored inverse, no new factorization"""
    terms = loo_terms(model.R_inv, model.F, model.outputs, model.nugget)
    errors = np.array([t.error for t in terms])
    e2 = errors ** 2
    s2 = np.array([t.variance for t in terms])
    return LoocvDiagnostics(errors=errors, e2=e2, s2=s2, ratios=ratio_from(e2, s2))


def zero_diagnostics(n: int) -> LoocvDiagnostics:
    zeros = np.zeros(n)
    return LoocvDiagnostics(errors=zeros, e2=zeros, s2=np.ones(n), ratios=zeros)


def loocv_means_at(model: KrigingModel, x) -> np.ndarray:
    """
    Delete-one means m_{n,-i}(x) at arbitrary points

    Returns:
        Array of shape (n, m): row i is the model without point i
    """
    points, _ = _as_points(x, model.dim)
    r = cross_correlation(model.design, points, model.kernel)
    f = model.trend.evaluate(points)
    R_inv = model.R_inv
    means = np.empty((model.n, points.shape[0]))
    for i in range(model.n):
        term = _model_term(model, i)
        residual = model.outputs - model.F @ term.coef
        q = R_inv[:, i]
        weights = R_inv @ residual - q * (q @ residual) / R_inv[i, i]
        means[i] = f @ term.coef + r.T @ weights
    return means


def jackknife_variance(model: KrigingModel, x):
    """
    Jackknife variance of the kriging mean from delete-one pseudo-values

    s2_jack(x) = 1 / (n (n - 1)) * sum_i (y_i - mean(y))^2 with pseudo-values
    y_i = n m_n(x) - (n - 1) m_{n,-i}(x).
    """
    points, single = _as_points(x, model.dim)
    n = model.n
    full = np.atleast_1d(predict_mean(model, points))
    pseudo = n * full[None, :] - (n - 1) * loocv_means_at(model, points)
    centered = pseudo - pseudo.mean(axis=0, keepdims=True)
    s2 = np.sum(centered ** 2, axis=0) / (n * (n - 1))
    return float(s2[0]) if single else s2


def diagnostics_frame(diag: LoocvDiagnostics) -> pd.DataFrame:
    """Audit table with columns index, e2, s2, ratio"""
    return pd.DataFrame({
        "index": np.arange(diag.n),
        "e2": diag.e2,
        "s2": diag.s2,
        "ratio": diag.ratios,
    })


def save_diagnostics_csv(diag: LoocvDiagnostics, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    diagnostics_frame(diag).to_csv(path, index=False, float_format="%.12g")
    return path

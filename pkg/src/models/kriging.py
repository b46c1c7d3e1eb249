"""
Universal kriging: fit, predict, likelihood-based length-scales and liar conditioning

The generalized least-squares machinery (``GlsFactors`` and the ``gls_*``
helpers) works on an arbitrary regressor matrix so that co-kriging levels,
whose regressors are ``[y^{l-1}(D^l), F_l]``, reuse it unchanged.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist
from scipy.stats import qmc

from config.settings import settings
from src.models.kernels import (
    CorrelationKernel,
    TrendBasis,
    cross_correlation,
    factorize_correlation,
)
from src.utils.exceptions import (
    ArgumentError,
    ConditioningError,
    DegenerateUpdateError,
    SurrogateDesignError,
    TrendError,
)

FORMAT_VERSION = 1

# Relative floor keeping sigma2 > 0 on constant data
SIGMA2_FLOOR = 1e-14

# Raw variances above -(NEGATIVE_VARIANCE_SLACK + 10 * nugget) * sigma2 are round-off
NEGATIVE_VARIANCE_SLACK = 1e-10

COINCIDENCE_TOLERANCE = 1e-10

_FAILED_LIKELIHOOD = 1e10


@dataclass(frozen=True, eq=False)
class GlsFactors:
    """Factorized correlation structure and GLS estimates at fixed theta"""

    R: np.ndarray
    R_factor: np.ndarray
    R_inv: np.ndarray
    nugget: float
    coef: np.ndarray
    coef_cov: np.ndarray
    sigma2: float
    alpha: np.ndarray
    log_likelihood: float


def sigma2_floor(outputs: np.ndarray) -> float:
    return SIGMA2_FLOOR * max(1.0, float(np.mean(np.asarray(outputs) ** 2)))


def _check_rank(regressors: np.ndarray):
    p = regressors.shape[1]
    if np.linalg.matrix_rank(regressors) < p:
        raise TrendError(f"Regressor matrix of shape {regressors.shape} has rank below {p}")


def gls_factors(design: np.ndarray, outputs: np.ndarray, regressors: np.ndarray,
                kernel: CorrelationKernel, coef: Optional[np.ndarray] = None,
                sigma2: Optional[float] = None, nugget_start: Optional[float] = None,
                nugget_max: Optional[float] = None) -> GlsFactors:
    """
    Factorize R and compute the GLS coefficients and variance estimate

    Args:
        design: n x d unit-cube design
        outputs: n observed values
        regressors: n x p regressor matrix
        kernel: correlation kernel with theta fixed
        coef: frozen coefficients, skips the GLS solve
        sigma2: frozen process variance, skips the estimate
        nugget_start: first nugget tried
        nugget_max: largest nugget tried

    Returns:
        GlsFactors with sigma2 estimated on the divisor n - p
    """
    n, p = regressors.shape
    _check_rank(regressors)

    R, L, nugget = factorize_correlation(design, kernel, nugget_start, nugget_max)
    R_inv = linalg.cho_solve((L, True), np.eye(n))
    R_inv = 0.5 * (R_inv + R_inv.T)

    Rinv_F = R_inv @ regressors
    info = regressors.T @ Rinv_F
    try:
        coef_cov = linalg.inv(0.5 * (info + info.T))
    except linalg.LinAlgError as exc:
        raise TrendError(f"F' R^-1 F is singular for regressors of shape {regressors.shape}") from exc
    if coef is None:
        coef = coef_cov @ (Rinv_F.T @ outputs)
    coef = np.asarray(coef, dtype=float)

    residual = outputs - regressors @ coef
    alpha = R_inv @ residual
    quad = float(residual @ alpha)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))

    if sigma2 is None:
        if n <= p:
            raise ArgumentError(f"Need more than {p} points to estimate sigma2, got {n}")
        sigma2 = max(quad / (n - p), sigma2_floor(outputs))
    dof = max(n - p, 1)
    log_likelihood = -0.5 * (dof * np.log(max(quad / dof, sigma2_floor(outputs))) + log_det)

    return GlsFactors(R=R, R_factor=L, R_inv=R_inv, nugget=nugget, coef=coef,
                      coef_cov=coef_cov, sigma2=float(sigma2), alpha=alpha,
                      log_likelihood=float(log_likelihood))


def profile_log_likelihood(design: np.ndarray, outputs: np.ndarray, regressors: np.ndarray,
                           kernel: CorrelationKernel) -> float:
    """Concentrated log-likelihood -1/2 [(n - p) log sigma2_hat + log |R|] at fixed theta"""
    n, p = regressors.shape
    _, L, _ = factorize_correlation(design, kernel)
    Rinv_F = linalg.cho_solve((L, True), regressors)
    Rinv_y = linalg.cho_solve((L, True), outputs)
    info = regressors.T @ Rinv_F
    coef = linalg.solve(0.5 * (info + info.T), regressors.T @ Rinv_y, assume_a="pos")
    residual = outputs - regressors @ coef
    quad = float(residual @ linalg.cho_solve((L, True), residual))
    dof = max(n - p, 1)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (dof * np.log(max(quad / dof, sigma2_floor(outputs))) + log_det)


def estimate_theta(design: np.ndarray, outputs: np.ndarray, regressors: np.ndarray,
                   kernel_family: str, theta_bounds: Optional[Tuple[float, float]] = None,
                   seed: int = 0, starts: Optional[int] = None) -> CorrelationKernel:
    """
    Maximize the profile log-likelihood over per-axis length-scales

    Multi-start L-BFGS-B in log(theta); start points come from a seeded Latin
    hypercube over the log-bounds so the result is deterministic under ``seed``.
    """
    lower, upper = theta_bounds or settings.theta_bounds()
    starts = settings.MLE_STARTS if starts is None else starts
    d = design.shape[1]
    log_lower, log_upper = np.log(lower), np.log(upper)

    def objective(log_theta: np.ndarray) -> float:
        kernel = CorrelationKernel(kernel_family, np.exp(log_theta))
        try:
            value = profile_log_likelihood(design, outputs, regressors, kernel)
        except (SurrogateDesignError, linalg.LinAlgError):
            return _FAILED_LIKELIHOOD
        return -value if np.isfinite(value) else _FAILED_LIKELIHOOD

    sampler = qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed))
    start_points = log_lower + sampler.random(starts) * (log_upper - log_lower)

    best_x, best_value = None, np.inf
    for start in start_points:
        result = minimize(objective, start, method="L-BFGS-B",
                          bounds=[(log_lower, log_upper)] * d)
        if result.fun < best_value:
            best_x, best_value = result.x, float(result.fun)

    if best_x is None or best_value >= _FAILED_LIKELIHOOD:
        raise ConditioningError("Likelihood could not be evaluated at any length-scale start",
                                nugget=settings.NUGGET_MAX)

    theta = np.exp(np.clip(best_x, log_lower, log_upper))
    logger.debug("MLE theta={} log-likelihood={:.6g} ({} starts)", np.round(theta, 4), -best_value, starts)
    return CorrelationKernel(kernel_family, theta)


def gls_mean(factors: GlsFactors, design: np.ndarray, kernel: CorrelationKernel,
             points: np.ndarray, point_regressors: np.ndarray) -> np.ndarray:
    r = cross_correlation(design, points, kernel)
    return point_regressors @ factors.coef + r.T @ factors.alpha


def gls_cross_covariance(factors: GlsFactors, design: np.ndarray, regressors: np.ndarray,
                         kernel: CorrelationKernel, a: np.ndarray, reg_a: np.ndarray,
                         b: np.ndarray, reg_b: np.ndarray) -> np.ndarray:
    """sigma2 (r(a, b) - r_a' R^-1 r_b + u_a' (F' R^-1 F)^-1 u_b), shape (len(a), len(b))"""
    r_a = cross_correlation(design, a, kernel)
    r_b = cross_correlation(design, b, kernel)
    Rinv_rb = factors.R_inv @ r_b
    u_a = reg_a.T - regressors.T @ (factors.R_inv @ r_a)
    u_b = reg_b.T - regressors.T @ Rinv_rb
    block = cross_correlation(a, b, kernel) - r_a.T @ Rinv_rb + u_a.T @ factors.coef_cov @ u_b
    return factors.sigma2 * block


def gls_variance(factors: GlsFactors, design: np.ndarray, regressors: np.ndarray,
                 kernel: CorrelationKernel, points: np.ndarray,
                 point_regressors: np.ndarray) -> np.ndarray:
    """Diagonal of ``gls_cross_covariance`` with round-off negatives clamped to zero"""
    r = cross_correlation(design, points, kernel)
    Rinv_r = factors.R_inv @ r
    u = point_regressors.T - regressors.T @ Rinv_r
    raw = factors.sigma2 * (1.0 - np.sum(r * Rinv_r, axis=0)
                            + np.sum(u * (factors.coef_cov @ u), axis=0))
    return clamp_variance(raw, factors.sigma2, factors.nugget)


def clamp_variance(raw: np.ndarray, sigma2: float, nugget: float) -> np.ndarray:
    """Zero out round-off negatives; raise on anything more negative"""
    raw = np.asarray(raw, dtype=float)
    negative = raw < 0.0
    if not np.any(negative):
        return raw
    floor = -(NEGATIVE_VARIANCE_SLACK + 10.0 * nugget) * sigma2
    worst = float(np.min(raw))
    if worst < floor:
        raise ConditioningError(f"Predicted variance {worst:.3e} is below the round-off floor {floor:.3e}",
                                nugget=nugget)
    logger.debug("Clamped {} negative variance(s), most negative raw value {:.3e}", int(negative.sum()), worst)
    return np.where(negative, 0.0, raw)


@dataclass(frozen=True, eq=False)
class KrigingModel:
    """Fitted universal kriging model on unit-cube inputs"""

    design: np.ndarray
    outputs: np.ndarray
    trend: TrendBasis
    kernel: CorrelationKernel
    F: np.ndarray
    factors: GlsFactors

    @property
    def beta_hat(self) -> np.ndarray:
        return self.factors.coef

    @property
    def sigma2_hat(self) -> float:
        return self.factors.sigma2

    @property
    def R_factor(self) -> np.ndarray:
        return self.factors.R_factor

    @property
    def R_inv(self) -> np.ndarray:
        return self.factors.R_inv

    @property
    def nugget(self) -> float:
        return self.factors.nugget

    @property
    def theta(self) -> np.ndarray:
        return self.kernel.theta

    @property
    def n(self) -> int:
        return int(self.design.shape[0])

    @property
    def p(self) -> int:
        return self.trend.p

    @property
    def dim(self) -> int:
        return int(self.design.shape[1])


def _as_points(x, dim: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    points = np.atleast_2d(x)
    if points.ndim != 2 or points.shape[1] != dim:
        raise ArgumentError(f"Expected points of dimension {dim}, got shape {x.shape}")
    return points, single


def check_design(design, outputs) -> Tuple[np.ndarray, np.ndarray]:
    """Validate an n x d unit-cube design with n matching outputs and distinct rows"""
    design = np.atleast_2d(np.asarray(design, dtype=float))
    outputs = np.asarray(outputs, dtype=float).ravel()
    if design.ndim != 2 or design.shape[0] != outputs.size:
        raise ArgumentError(f"Design of shape {design.shape} does not match {outputs.size} outputs")
    if not np.all(np.isfinite(design)) or not np.all(np.isfinite(outputs)):
        raise ArgumentError("Design and outputs must be finite")
    if np.any(design < -1e-12) or np.any(design > 1.0 + 1e-12):
        raise ArgumentError("Design points must lie in the unit cube")
    if design.shape[0] > 1 and float(np.min(pdist(design))) < COINCIDENCE_TOLERANCE:
        raise ArgumentError("Design points must be pairwise distinct")
    return design, outputs


def _assemble(design: np.ndarray, outputs: np.ndarray, trend: TrendBasis, kernel: CorrelationKernel,
              coef=None, sigma2=None, nugget_start=None) -> KrigingModel:
    F = trend.evaluate(design)
    factors = gls_factors(design, outputs, F, kernel, coef=coef, sigma2=sigma2, nugget_start=nugget_start)
    return KrigingModel(design=design, outputs=outputs, trend=trend, kernel=kernel, F=F, factors=factors)


def fit_kriging(design, outputs, trend: str = "constant", kernel_family: str = "squared-exponential",
                theta_bounds: Optional[Tuple[float, float]] = None, seed: int = 0,
                theta: Optional[Sequence[float]] = None, sigma2: Optional[float] = None,
                starts: Optional[int] = None) -> KrigingModel:
    """
    Fit a universal kriging model

    Args:
        design: n x d points in the unit cube, pairwise distinct
        outputs: n observed values
        trend: "constant" or "linear"
        kernel_family: "squared-exponential" or "matern-5/2"
        theta_bounds: (lower, upper) length-scale bounds for every axis
        seed: seed of the likelihood multi-start
        theta: fixed length-scales, skips likelihood maximization
        sigma2: fixed process variance, allows n < p + 2
        starts: number of multi-start points

    Returns:
        Fitted KrigingModel
    """
    design, outputs = check_design(design, outputs)
    basis = TrendBasis(trend, design.shape[1])
    if sigma2 is None and design.shape[0] < basis.p + 2:
        raise ArgumentError(f"Kriging needs at least p + 2 = {basis.p + 2} points, got {design.shape[0]}")

    if theta is None:
        F = basis.evaluate(design)
        _check_rank(F)
        kernel = estimate_theta(design, outputs, F, kernel_family, theta_bounds, seed, starts)
    else:
        kernel = CorrelationKernel(kernel_family, np.broadcast_to(np.asarray(theta, dtype=float),
                                                                  (design.shape[1],)))

    model = _assemble(design, outputs, basis, kernel, sigma2=sigma2)
    logger.debug("Fitted kriging n={} p={} sigma2={:.4g} nugget={:.0e}",
                 model.n, model.p, model.sigma2_hat, model.nugget)
    return model


def predict_mean(model: KrigingModel, x):
    """Kriging mean m_n(x); scalar for one point, array for a batch"""
    points, single = _as_points(x, model.dim)
    mean = gls_mean(model.factors, model.design, model.kernel, points, model.trend.evaluate(points))
    return float(mean[0]) if single else mean


def predict_var(model: KrigingModel, x):
    """Kriging variance k_n(x, x); scalar for one point, array for a batch"""
    points, single = _as_points(x, model.dim)
    var = gls_variance(model.factors, model.design, model.F, model.kernel,
                       points, model.trend.evaluate(points))
    return float(var[0]) if single else var


def predict_cov_matrix(model: KrigingModel, a, b) -> np.ndarray:
    """Posterior covariance block k_n(a_i, b_j)"""
    a, _ = _as_points(a, model.dim)
    b, _ = _as_points(b, model.dim)
    return gls_cross_covariance(model.factors, model.design, model.F, model.kernel,
                                a, model.trend.evaluate(a), b, model.trend.evaluate(b))


def predict_cov(model: KrigingModel, x, x_tilde) -> float:
    """Posterior covariance k_n(x, x_tilde) between two points"""
    x = np.asarray(x, dtype=float).ravel()
    x_tilde = np.asarray(x_tilde, dtype=float).ravel()
    if np.array_equal(x, x_tilde):
        return predict_var(model, x)
    return float(predict_cov_matrix(model, x, x_tilde)[0, 0])


def check_new_points(existing: np.ndarray, new_points: np.ndarray):
    """Raise DegenerateUpdateError when a conditioning point repeats a design point"""
    distance = cdist(new_points, existing).min(axis=1)
    bad = np.flatnonzero(distance < COINCIDENCE_TOLERANCE)
    if bad.size:
        raise DegenerateUpdateError(
            f"Conditioning point {np.round(new_points[bad[0]], 6).tolist()} coincides with a design point"
        )


def liar_condition(model: KrigingModel, x_new) -> KrigingModel:
    """
    Condition on one or several points with fantasized outputs

    Each fantasized output is the current kriging mean, so means are
    unchanged; theta, sigma2 and beta stay frozen. Several points are
    appended one after another.
    """
    points, _ = _as_points(x_new, model.dim)
    current = model
    for point in points:
        point = point[None, :]
        check_new_points(current.design, point)
        fantasy = predict_mean(current, point)
        design = np.vstack([current.design, point])
        outputs = np.concatenate([current.outputs, fantasy])
        current = _assemble(design, outputs, model.trend, model.kernel, coef=model.beta_hat,
                            sigma2=model.sigma2_hat, nugget_start=model.nugget)
    return current


def model_to_dict(model: KrigingModel) -> Dict[str, Any]:
    """Structured-text representation of a fitted model"""
    return {
        "format_version": FORMAT_VERSION,
        "kind": "kriging",
        "design": model.design.tolist(),
        "outputs": model.outputs.tolist(),
        "trend": model.trend.kind,
        "kernel_family": model.kernel.family,
        "theta": model.kernel.theta.tolist(),
        "beta_hat": model.beta_hat.tolist(),
        "sigma2_hat": model.sigma2_hat,
        "nugget": model.nugget,
    }


def model_from_dict(data: Dict[str, Any]) -> KrigingModel:
    """Rebuild a model from ``model_to_dict`` output without refitting any parameter"""
    if data.get("kind") != "kriging" or data.get("format_version") != FORMAT_VERSION:
        raise ArgumentError(f"Unsupported model record: kind={data.get('kind')} "
                            f"format_version={data.get('format_version')}")
    design, outputs = check_design(data["design"], data["outputs"])
    basis = TrendBasis(data["trend"], design.shape[1])
    kernel = CorrelationKernel(data["kernel_family"], data["theta"])
    return _assemble(design, outputs, basis, kernel, coef=np.asarray(data["beta_hat"], dtype=float),
                     sigma2=float(data["sigma2_hat"]), nugget_start=float(data["nugget"]))

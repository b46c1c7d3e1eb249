"""
Correlation kernels, correlation matrices and trend bases

All model internals work on unit-cube coordinates; ``Domain`` maps physical
points in and out of the cube. Length-scales ``theta`` are expressed in
unit-cube units.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.spatial.distance import cdist

from config.settings import settings
from src.utils.exceptions import ArgumentError, ConditioningError, DomainError

KERNEL_FAMILIES = ("squared-exponential", "matern-5/2")
TREND_KINDS = ("constant", "linear")

BOUND_TOLERANCE = 1e-12

_factorization_calls = 0


def factorization_count() -> int:
    """Number of n x n Cholesky factorizations performed so far in this process"""
    return _factorization_calls


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned box of physical inputs"""

    lower: np.ndarray
    upper: np.ndarray
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise ArgumentError("Domain bounds must be two vectors of the same length d >= 1")
        bad = np.flatnonzero(~(lower < upper))
        if bad.size:
            raise ArgumentError(f"Domain lower bound must be below upper bound on axis {int(bad[0])}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, x) -> np.ndarray:
        return scale_to_unit(x, self)

    def from_unit(self, u) -> np.ndarray:
        return scale_from_unit(u, self)


def _coordinate_label(domain: Domain, axis: int) -> str:
    if domain.names and axis < len(domain.names):
        return f"{axis} ({domain.names[axis]})"
    return str(axis)


def scale_to_unit(x, domain: Domain) -> np.ndarray:
    """
    Affine map of physical points onto [0, 1]^d

    Args:
        x: One point (d,) or a batch (m, d) in physical units
        domain: Input domain

    Returns:
        Points of the same shape in unit-cube coordinates
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != domain.dim:
        raise ArgumentError(f"Expected points of dimension {domain.dim}, got {x.shape[-1]}")
    tol = BOUND_TOLERANCE * np.maximum(1.0, np.abs(domain.span))
    below = x < domain.lower - tol
    above = x > domain.upper + tol
    outside = np.flatnonzero(np.any((below | above).reshape(-1, domain.dim), axis=0))
    if outside.size:
        axis = int(outside[0])
        raise DomainError(
            f"Point outside domain on coordinate {_coordinate_label(domain, axis)}: "
            f"bounds [{domain.lower[axis]}, {domain.upper[axis]}]",
            coordinate=axis,
        )
    return np.clip((x - domain.lower) / domain.span, 0.0, 1.0)


def scale_from_unit(u, domain: Domain) -> np.ndarray:
    """Inverse of ``scale_to_unit``"""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != domain.dim:
        raise ArgumentError(f"Expected points of dimension {domain.dim}, got {u.shape[-1]}")
    return domain.lower + u * domain.span


@dataclass(frozen=True, eq=False)
class CorrelationKernel:
    """Stationary product-form correlation with per-axis length-scales"""

    family: str
    theta: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ArgumentError(f"Unknown kernel family '{self.family}', expected one of {KERNEL_FAMILIES}")
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 1 or not np.all(np.isfinite(theta)) or np.any(theta <= 0):
            raise ArgumentError("Kernel length-scales must be finite and strictly positive")
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return int(self.theta.size)

    def with_theta(self, theta) -> "CorrelationKernel":
        return CorrelationKernel(self.family, theta)


def _check_points(points, dim: int) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != dim:
        raise ArgumentError(f"Expected points of dimension {dim}, got {points.shape[1]}")
    return points


def cross_correlation(a, b, kernel: CorrelationKernel) -> np.ndarray:
    """Correlation block between two point sets, shape (len(a), len(b))"""
    a = _check_points(a, kernel.dim) / kernel.theta
    b = _check_points(b, kernel.dim) / kernel.theta
    sq = cdist(a, b, metric="sqeuclidean")
    if kernel.family == "squared-exponential":
        return np.exp(-sq)
    h = np.sqrt(5.0 * sq)
    return (1.0 + h + h * h / 3.0) * np.exp(-h)


def correlation(x, y, kernel: CorrelationKernel) -> float:
    """Correlation between two unit-cube points"""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size != kernel.dim:
        raise ArgumentError(f"Dimension mismatch: {x.size}, {y.size} against kernel dimension {kernel.dim}")
    return float(cross_correlation(x, y, kernel)[0, 0])


def correlation_vector(design, x, kernel: CorrelationKernel) -> np.ndarray:
    """Correlations between the design points and one point x"""
    return cross_correlation(design, x, kernel)[:, 0]


def correlation_matrix(design, kernel: CorrelationKernel, nugget: float = 0.0) -> np.ndarray:
    """Correlation matrix of the design with ``nugget`` added to the diagonal"""
    design = _check_points(design, kernel.dim)
    R = cross_correlation(design, design, kernel)
    R = 0.5 * (R + R.T)
    R[np.diag_indices_from(R)] = 1.0 + nugget
    return R


def factorize_correlation(design, kernel: CorrelationKernel,
                          nugget_start: float = None, nugget_max: float = None):
    """
    Cholesky factor of the correlation matrix with nugget escalation

    The nugget starts at ``nugget_start`` and grows tenfold after every failed
    factorization until it exceeds ``nugget_max``.

    Returns:
        Tuple (R, lower Cholesky factor, nugget used)
    """
    global _factorization_calls

    nugget_start = settings.NUGGET_START if nugget_start is None else nugget_start
    nugget_max = settings.NUGGET_MAX if nugget_max is None else nugget_max

    base = correlation_matrix(design, kernel, nugget=0.0)
    n = base.shape[0]
    nugget = nugget_start
    while nugget <= nugget_max * (1.0 + 1e-9):
        R = base + nugget * np.eye(n)
        _factorization_calls += 1
        try:
            L = linalg.cholesky(R, lower=True)
            if np.all(np.isfinite(L)):
                return R, L, nugget
        except linalg.LinAlgError:
            pass
        logger.debug("Cholesky failed with nugget {:.1e}, escalating", nugget)
        nugget *= 10.0
    raise ConditioningError(
        f"Correlation matrix of {n} points is not positive definite with nugget {nugget / 10.0:.1e}",
        nugget=nugget / 10.0,
    )


@dataclass(frozen=True, eq=False)
class TrendBasis:
    """Polynomial trend f(x): constant (p = 1) or linear (p = d + 1)"""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in TREND_KINDS:
            raise ArgumentError(f"Unknown trend kind '{self.kind}', expected one of {TREND_KINDS}")
        if self.dim < 1:
            raise ArgumentError("Trend dimension must be at least 1")

    @property
    def p(self) -> int:
        return 1 if self.kind == "constant" else self.dim + 1

    def evaluate(self, points) -> np.ndarray:
        points = _check_points(points, self.dim)
        ones = np.ones((points.shape[0], 1))
        if self.kind == "constant":
            return ones
        return np.hstack([ones, points])

"""
Single-point acquisition criteria

Every criterion is maximized the same way: a coarse pass over a seeded
candidate grid, then a coordinate pattern search started from the best grid
point. Ties always go to the lowest index.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from config.settings import settings
from src.design.design_gen import lhs_maximin
from src.models.kriging import KrigingModel, predict_cov_matrix, predict_var
from src.models.loocv import LoocvDiagnostics, jackknife_variance, loocv_diagnostics
from src.utils.exceptions import ArgumentError

CRITERIA = ("maxvar", "minimse", "kleicrit", "adjmmse")
GRID_KINDS = ("low-discrepancy", "uniform-random")

MIN_GRID_POINTS = 100
REFINE_MIN_STEP = 1e-4
REFINE_MAX_EVALS = 200
COVARIANCE_CHUNK = 256
KLEICRIT_CANDIDATES_PER_DIM = 100
KLEICRIT_LHS_ITERS = 200


@dataclass(frozen=True, eq=False)
class VoronoiPartition:
    """Nearest-site partition of the unit cube"""

    sites: np.ndarray

    def index(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        # argmin returns the first minimum, i.e. the lowest site index on ties
        return np.argmin(cdist(x, self.sites), axis=1)


@dataclass(frozen=True, eq=False)
class CandidateGrid:
    """Candidate points for the argmax and for IMSE quadrature"""

    points: np.ndarray
    kind: str
    seed: int

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class CriterionResult:
    """Selected point, its criterion value and the grid index the search started from"""

    point: np.ndarray
    value: float
    grid_index: int


def make_grid(d: int, m: Optional[int] = None, kind: str = "low-discrepancy", seed: int = 0) -> CandidateGrid:
    """Scrambled Halton points (or uniform draws) in [0, 1]^d, M = 2000 d by default"""
    m = settings.GRID_POINTS_PER_DIM * d if m is None else int(m)
    if m < MIN_GRID_POINTS:
        raise ArgumentError(f"Candidate grid needs at least {MIN_GRID_POINTS} points, got {m}")
    if kind == "low-discrepancy":
        points = qmc.Halton(d=d, scramble=True, seed=np.random.default_rng(seed)).random(m)
    elif kind == "uniform-random":
        points = np.random.default_rng(seed).random((m, d))
    else:
        raise ArgumentError(f"Unknown grid kind '{kind}', expected one of {GRID_KINDS}")
    return CandidateGrid(points=points, kind=kind, seed=seed)


def voronoi_index(partition: VoronoiPartition, x) -> int:
    return int(partition.index(x)[0])


def adjusted_variance(variance: np.ndarray, ratios: np.ndarray, partition: VoronoiPartition,
                      points: np.ndarray) -> np.ndarray:
    return variance * (1.0 + ratios[partition.index(points)])


def adjusted_mse(model: KrigingModel, diag: LoocvDiagnostics, partition: VoronoiPartition, x):
    """k_n(x, x) (1 + ratio of the Voronoi cell holding x)"""
    points = np.atleast_2d(np.asarray(x, dtype=float))
    values = adjusted_variance(np.atleast_1d(predict_var(model, points)), diag.ratios, partition, points)
    return float(values[0]) if np.ndim(x) == 1 else values


def imse_reduction(model: KrigingModel, candidates, quadrature: np.ndarray) -> np.ndarray:
    """
    Mean over the quadrature points u of k_n(u, x)^2 / (k_n(x, x) + sigma2 nugget)

    This is the drop of the integrated variance after conditioning on x with
    frozen parameters, i.e. what a liar update at x removes.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    variance = np.atleast_1d(predict_var(model, candidates))
    denominator = variance + model.sigma2_hat * model.nugget
    reduction = np.empty(candidates.shape[0])
    for start in range(0, candidates.shape[0], COVARIANCE_CHUNK):
        stop = start + COVARIANCE_CHUNK
        cov = predict_cov_matrix(model, quadrature, candidates[start:stop])
        reduction[start:stop] = np.mean(cov ** 2, axis=0) / denominator[start:stop]
    return reduction


def _first_argmax(scores: np.ndarray, atol: float = 0.0) -> int:
    return int(np.flatnonzero(scores >= scores.max() - atol)[0])


def refine(score: Callable[[np.ndarray], np.ndarray], start: np.ndarray, start_value: float,
           step: float):
    """
    Coordinate pattern search in the unit cube

    Tries +/- step along each axis, keeps strict improvements and halves the
    step after a sweep without one.
    """
    best, best_value = start.copy(), float(start_value)
    evals = 0
    while step >= REFINE_MIN_STEP and evals < REFINE_MAX_EVALS:
        improved = False
        for axis in range(best.size):
            for sign in (1.0, -1.0):
                trial = best.copy()
                trial[axis] = np.clip(trial[axis] + sign * step, 0.0, 1.0)
                value = float(score(trial[None, :])[0])
                evals += 1
                if value > best_value:
                    best, best_value, improved = trial, value, True
        if not improved:
            step *= 0.5
    return best, best_value


def maximize_on_grid(score: Callable[[np.ndarray], np.ndarray], grid: CandidateGrid,
                     name: str, do_refine: bool = True) -> CriterionResult:
    scores = score(grid.points)
    index = _first_argmax(scores)
    point, value = grid.points[index], float(scores[index])
    if do_refine:
        step = 0.5 * grid.size ** (-1.0 / grid.points.shape[1])
        point, value = refine(score, point, value, step)
    logger.debug("{} selected {} (value {:.4g}, grid index {})", name, np.round(point, 4), value, index)
    return CriterionResult(point=point, value=value, grid_index=index)


def select_maxvar(model: KrigingModel, grid: CandidateGrid, do_refine: bool = True) -> CriterionResult:
    """Point of largest kriging variance"""
    return maximize_on_grid(lambda pts: np.atleast_1d(predict_var(model, pts)), grid, "maxvar", do_refine)


def select_min_imse(model: KrigingModel, grid: CandidateGrid, do_refine: bool = True) -> CriterionResult:
    """Point whose liar update most reduces the integrated variance over the grid"""
    return maximize_on_grid(lambda pts: imse_reduction(model, pts, grid.points), grid, "minimse", do_refine)


def select_adjmmse(model: KrigingModel, diag: LoocvDiagnostics, grid: CandidateGrid,
                   do_refine: bool = True) -> CriterionResult:
    """Point of largest LOO-adjusted variance"""
    partition = VoronoiPartition(model.design)

    def score(pts):
        return adjusted_variance(np.atleast_1d(predict_var(model, pts)), diag.ratios, partition, pts)

    return maximize_on_grid(score, grid, "adjmmse", do_refine)


def select_kleicrit(model: KrigingModel, seed: int = 0, n_candidates: Optional[int] = None,
                    candidates: Optional[np.ndarray] = None) -> CriterionResult:
    """
    Candidate of largest jackknife variance over a fresh maximin LHS

    Jackknife values at round-off level count as ties, so constant data picks
    the first candidate.
    """
    if candidates is None:
        n_candidates = KLEICRIT_CANDIDATES_PER_DIM * model.dim if n_candidates is None else n_candidates
        candidates = lhs_maximin(n_candidates, model.dim, KLEICRIT_LHS_ITERS, seed).points
    scores = np.atleast_1d(jackknife_variance(model, candidates))
    scale = max(1.0, float(np.max(np.abs(model.outputs))))
    index = _first_argmax(scores, atol=(1e-10 * scale) ** 2)
    logger.debug("kleicrit selected candidate {} (value {:.4g})", index, scores[index])
    return CriterionResult(point=candidates[index], value=float(scores[index]), grid_index=index)


def select_point(criterion: str, model: KrigingModel, grid: CandidateGrid, seed: int = 0,
                 diag: Optional[LoocvDiagnostics] = None) -> CriterionResult:
    """Dispatch on a criterion name from ``CRITERIA``"""
    if criterion == "maxvar":
        return select_maxvar(model, grid)
    if criterion == "minimse":
        return select_min_imse(model, grid)
    if criterion == "kleicrit":
        return select_kleicrit(model, seed=seed)
    if criterion == "adjmmse":
        return select_adjmmse(model, diag if diag is not None else loocv_diagnostics(model), grid)
    raise ArgumentError(f"Unknown criterion '{criterion}', expected one of {CRITERIA}")

"""
Initial experimental designs: maximin Latin hypercubes and nested pairs
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.spatial.distance import cdist, pdist
from scipy.stats import qmc

from config.settings import settings
from src.utils.exceptions import ArgumentError
from src.utils.seeding import derive_seed

# Exponent of the phi_p space-filling score used to break min-distance ties
PHI_P = 15


@dataclass(frozen=True, eq=False)
class LhsDesign:
    """Unit-cube Latin hypercube with its maximin score"""

    points: np.ndarray
    score: float
    initial_score: float
    seed: int

    @property
    def n(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True, eq=False)
class NestedDesign:
    """Coarse design D^1 = D^2 + remaining candidates, with the removal audit"""

    coarse: np.ndarray
    fine: np.ndarray
    candidates: np.ndarray
    removed: Tuple[Tuple[int, int, float], ...]


def _phi_p(distances: np.ndarray) -> float:
    return float(np.sum(distances ** (-PHI_P)) ** (1.0 / PHI_P))


def lhs_maximin(n: int, d: int, iters: Optional[int] = None, seed: int = 0) -> LhsDesign:
    """
    Latin hypercube improved by within-column swaps

    A swap of two entries of one column keeps the stratification. It is
    accepted when the minimum pairwise distance increases, or stays equal
    while the phi_p score decreases.

    Args:
        n: number of points, at least 2
        d: dimension
        iters: number of swap proposals
        seed: random seed

    Returns:
        LhsDesign
    """
    if n < 2 or d < 1:
        raise ArgumentError(f"Latin hypercube needs n >= 2 and d >= 1, got n={n}, d={d}")
    iters = settings.LHS_ITERS if iters is None else int(iters)

    rng = np.random.default_rng(seed)
    points = qmc.LatinHypercube(d=d, seed=rng).random(n)
    distances = pdist(points)
    score, phi = float(distances.min()), _phi_p(distances)
    initial = score

    for _ in range(iters):
        k = int(rng.integers(d))
        i, j = rng.choice(n, size=2, replace=False)
        trial = points.copy()
        trial[[i, j], k] = trial[[j, i], k]
        trial_distances = pdist(trial)
        trial_score, trial_phi = float(trial_distances.min()), _phi_p(trial_distances)
        if trial_score > score or (trial_score == score and trial_phi < phi):
            points, score, phi = trial, trial_score, trial_phi

    logger.debug("Maximin LHS n={} d={}: min distance {:.4f} -> {:.4f}", n, d, initial, score)
    return LhsDesign(points=points, score=score, initial_score=initial, seed=seed)


def greedy_nearest_matching(fine: np.ndarray, candidates: np.ndarray) -> List[Tuple[int, int, float]]:
    """
    One-to-one matching of every fine point to a candidate

    The globally closest unmatched pair is taken first; ties go to the lowest
    candidate index, then the lowest fine index.

    Returns:
        List of (fine index, candidate index, distance) in matching order
    """
    distance = cdist(fine, candidates)
    free_fine = np.ones(fine.shape[0], dtype=bool)
    free_cand = np.ones(candidates.shape[0], dtype=bool)
    matches = []
    for _ in range(fine.shape[0]):
        masked = np.where(free_fine[:, None] & free_cand[None, :], distance, np.inf)
        best = masked.min()
        rows, cols = np.nonzero(masked == best)
        order = np.lexsort((rows, cols))
        i, j = int(rows[order[0]]), int(cols[order[0]])
        matches.append((i, j, float(best)))
        free_fine[i] = False
        free_cand[j] = False
    return matches


def nested_pair(fine, n_c: int, seed: int = 0, iters: Optional[int] = None) -> NestedDesign:
    """
    Coarse design containing the fine design exactly

    A maximin LHS of n_c candidates is drawn; the n_f candidates matched to
    the fine points are removed and the fine points are put first.
    """
    fine = np.atleast_2d(np.asarray(fine, dtype=float))
    n_f, d = fine.shape
    if n_c < n_f:
        raise ArgumentError(f"Coarse design size {n_c} is smaller than fine design size {n_f}")
    if n_c == n_f:
        return NestedDesign(coarse=fine.copy(), fine=fine, candidates=fine.copy(), removed=())

    candidates = lhs_maximin(n_c, d, iters, seed).points
    matches = greedy_nearest_matching(fine, candidates)
    removed = {j for _, j, _ in matches}
    kept = candidates[[j for j in range(n_c) if j not in removed]]
    coarse = np.vstack([fine, kept])
    return NestedDesign(coarse=coarse, fine=fine, candidates=candidates, removed=tuple(matches))


def nested_designs(sizes: Sequence[int], d: int, seed: int = 0,
                   iters: Optional[int] = None) -> List[np.ndarray]:
    """
    Nested designs D^1 ⊇ ... ⊇ D^s from sizes listed coarse to fine

    The finest design is a maximin LHS; each coarser one is built with
    ``nested_pair`` from the next finer one.
    """
    sizes = [int(n) for n in sizes]
    if any(a < b for a, b in zip(sizes, sizes[1:])):
        raise ArgumentError(f"Design sizes must be non-increasing from coarse to fine, got {sizes}")
    designs = [lhs_maximin(sizes[-1], d, iters, seed).points]
    for offset, n_c in enumerate(reversed(sizes[:-1]), start=1):
        designs.insert(0, nested_pair(designs[0], n_c, derive_seed(seed, offset), iters).coarse)
    return designs


def save_design_csv(points, path: Union[str, Path], names: Optional[Sequence[str]] = None) -> Path:
    """Write unit-cube coordinates with one column per input"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    names = list(names) if names else [f"x{k + 1}" for k in range(points.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(points, columns=names).to_csv(path, index=False, float_format="%.17g")
    return path


def load_design_csv(path: Union[str, Path]) -> np.ndarray:
    points = pd.read_csv(path).to_numpy(dtype=float)
    if points.ndim != 2 or np.any(points < 0.0) or np.any(points > 1.0):
        raise ArgumentError(f"Design file {path} does not hold unit-cube coordinates")
    return points

"""
q-points-at-a-time selection

Metropolis-Hastings samples the density proportional to the kriging
variance, N-means clustering condenses the chain into N representative
points (N chosen so that no center sits where the variance vanishes), and the
q best centers under the adjusted variance form the batch. The liar MinIMSE
baseline conditions the model on each pick before choosing the next.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from scipy.spatial.distance import cdist

from config.settings import settings
from src.design.criteria import CandidateGrid, VoronoiPartition, adjusted_variance, select_min_imse
from src.models.kriging import KrigingModel, liar_condition, predict_var
from src.models.loocv import LoocvDiagnostics
from src.utils.exceptions import ArgumentError, ConfigError, StartPointError
from src.utils.seeding import derive_seed

MAX_LLOYD_ITERS = 100
START_CANDIDATES = 1000
ADAPT_FACTOR = 1.1

VarianceFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MhConfig:
    """Metropolis-Hastings settings; proposal_std None means 0.5 / sqrt(d)"""

    n_samples: int = field(default_factory=lambda: settings.N_MCMC)
    burn_in: int = field(default_factory=lambda: settings.BURN_IN)
    proposal_std: Optional[float] = None
    target_acceptance: float = field(default_factory=lambda: settings.TARGET_ACCEPT)
    adapt_interval: int = field(default_factory=lambda: settings.ADAPT_INTERVAL)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_acceptance < 1.0:
            raise ArgumentError(f"Target acceptance must lie in (0, 1), got {self.target_acceptance}")
        if not 0 <= self.burn_in < self.n_samples:
            raise ArgumentError(f"Burn-in {self.burn_in} must be below the chain length {self.n_samples}")
        if self.adapt_interval < 1:
            raise ArgumentError("Adaptation interval must be at least 1")
        if self.proposal_std is not None and self.proposal_std <= 0:
            raise ArgumentError("Proposal standard deviation must be positive")

    def with_seed(self, seed: int) -> "MhConfig":
        return MhConfig(self.n_samples, self.burn_in, self.proposal_std, self.target_acceptance,
                        self.adapt_interval, seed)


@dataclass(frozen=True, eq=False)
class MhChain:
    """Post-burn-in samples with the frozen proposal scale and its acceptance rate"""

    samples: np.ndarray
    acceptance_rate: float
    proposal_std: float
    start: np.ndarray


@dataclass(frozen=True, eq=False)
class ClusterSet:
    """N-means result; ``min_center_var`` is filled in when a variance is known"""

    centers: np.ndarray
    labels: np.ndarray
    inertia_history: Tuple[float, ...]
    min_center_var: float = float("nan")

    @property
    def N(self) -> int:
        return int(self.centers.shape[0])


@dataclass(frozen=True, eq=False)
class BatchSelection:
    points: np.ndarray
    scores: np.ndarray
    clusters: ClusterSet
    scan: Dict[int, float]
    chain: MhChain


def start_point(variance_fn: VarianceFn, d: int, rng: np.random.Generator) -> np.ndarray:
    """Largest-variance point among seeded uniform candidates"""
    candidates = rng.random((START_CANDIDATES, d))
    values = np.asarray(variance_fn(candidates), dtype=float)
    index = int(np.argmax(values))
    if not values[index] > 0.0:
        raise StartPointError(f"Variance is zero at all {START_CANDIDATES} start candidates")
    return candidates[index]


def mh_sample(variance_fn: VarianceFn, cfg: MhConfig, d: int, start: Optional[np.ndarray] = None) -> MhChain:
    """
    Random-walk Metropolis-Hastings on the unit cube with target ∝ variance_fn

    Proposals leaving the cube are rejected. During burn-in the proposal scale
    is multiplied or divided by 1.1 after every ``adapt_interval`` proposals,
    depending on whether the window acceptance rate is above or below target;
    the scale is then frozen at the geometric mean of the scales visited over
    the second half of burn-in.
    """
    rng = np.random.default_rng(cfg.seed)
    std = cfg.proposal_std if cfg.proposal_std is not None else 0.5 / np.sqrt(d)

    current = np.asarray(start, dtype=float) if start is not None else start_point(variance_fn, d, rng)
    current_value = float(np.asarray(variance_fn(current[None, :]))[0])
    if not current_value > 0.0:
        raise StartPointError(f"Variance is zero at the chain start {np.round(current, 6).tolist()}")
    first = current.copy()

    steps = rng.standard_normal((cfg.n_samples, d))
    uniforms = rng.random(cfg.n_samples)
    samples = np.empty((cfg.n_samples - cfg.burn_in, d))
    window_accepted, accepted_after = 0, 0
    late_log_std: List[float] = []

    for t in range(cfg.n_samples):
        proposal = current + std * steps[t]
        accepted = False
        if np.all(proposal >= 0.0) and np.all(proposal <= 1.0):
            value = float(np.asarray(variance_fn(proposal[None, :]))[0])
            if value > 0.0 and uniforms[t] * current_value < value:
                current, current_value, accepted = proposal, value, True

        if t < cfg.burn_in:
            window_accepted += accepted
            if (t + 1) % cfg.adapt_interval == 0:
                rate = window_accepted / cfg.adapt_interval
                std = std * ADAPT_FACTOR if rate > cfg.target_acceptance else std / ADAPT_FACTOR
                window_accepted = 0
                if t + 1 > cfg.burn_in // 2:
                    late_log_std.append(np.log(std))
            if t + 1 == cfg.burn_in and late_log_std:
                std = float(np.exp(np.mean(late_log_std)))
        else:
            samples[t - cfg.burn_in] = current
            accepted_after += accepted

    rate = accepted_after / (cfg.n_samples - cfg.burn_in)
    logger.debug("MH chain: {} samples, acceptance {:.3f}, proposal std {:.4f}", samples.shape[0], rate, std)
    return MhChain(samples=samples, acceptance_rate=rate, proposal_std=float(std), start=first)


def _farthest_point_seeds(samples: np.ndarray, N: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(samples.shape[0]))]
    nearest = cdist(samples, samples[chosen]).ravel()
    for _ in range(N - 1):
        index = int(np.argmax(nearest))
        chosen.append(index)
        nearest = np.minimum(nearest, cdist(samples, samples[index][None, :]).ravel())
    return samples[chosen].copy()


def nmeans(samples: np.ndarray, N: int, seed: int = 0) -> ClusterSet:
    """
    Lloyd iterations from farthest-point seeds

    Stops at an assignment fixpoint or after 100 iterations. An empty cluster
    is re-seeded at the sample farthest from its current center.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if not 1 <= N <= samples.shape[0]:
        raise ArgumentError(f"Cluster count {N} must lie in 1..{samples.shape[0]}")
    rng = np.random.default_rng(seed)
    centers = _farthest_point_seeds(samples, N, rng)

    labels = None
    history = []
    for _ in range(MAX_LLOYD_ITERS):
        distance = cdist(samples, centers)
        new_labels = np.argmin(distance, axis=1)
        history.append(float(np.sum(distance[np.arange(samples.shape[0]), new_labels] ** 2)))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        own = distance[np.arange(samples.shape[0]), labels]
        for k in range(N):
            members = labels == k
            if np.any(members):
                centers[k] = samples[members].mean(axis=0)
            else:
                far = int(np.argmax(own))
                centers[k] = samples[far]
                labels[far] = k
                own[far] = 0.0
    return ClusterSet(centers=centers, labels=labels, inertia_history=tuple(history))


def _cluster(samples: np.ndarray, N: int, seed: int) -> ClusterSet:
    return nmeans(samples, N, derive_seed(seed, N))


def choose_cluster_count(variance_fn: VarianceFn, samples: np.ndarray, q: int,
                         n_max: Optional[int] = None, seed: int = 0,
                         cache: Optional[Dict[int, ClusterSet]] = None,
                         n_jobs: int = 1) -> Tuple[ClusterSet, Dict[int, float]]:
    """
    Scan every N in [q, n_max] and keep the N maximizing the smallest center variance

    Clustering for each N uses derive_seed(seed, N); ties go to the smallest N.
    ``cache`` holds clusterings of the same samples and seed by N, so repeated
    scans over one chain only cluster the counts not seen yet. Missing counts
    are clustered with joblib over ``n_jobs`` workers.

    Returns:
        Chosen ClusterSet and the scanned {N: min center variance}
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n_max = 3 * q if n_max is None else int(n_max)
    if n_max < q:
        raise ArgumentError(f"Largest cluster count {n_max} is below q = {q}")
    if n_max > samples.shape[0]:
        raise ArgumentError(f"Largest cluster count {n_max} exceeds the {samples.shape[0]} samples")

    cache = {} if cache is None else cache
    missing = [N for N in range(q, n_max + 1) if N not in cache]
    if missing:
        found = Parallel(n_jobs=n_jobs)(delayed(_cluster)(samples, N, seed) for N in missing)
        cache.update(zip(missing, found))

    best, scan = None, {}
    for N in range(q, n_max + 1):
        clusters = cache[N]
        value = float(np.min(variance_fn(clusters.centers)))
        scan[N] = value
        if best is None or value > best.min_center_var:
            best = ClusterSet(clusters.centers, clusters.labels, clusters.inertia_history, value)
    logger.debug("Cluster count scan over N = {}..{} -> N={} (min center variance {:.4g})",
                 q, n_max, best.N, best.min_center_var)
    return best, scan


def select_batch(variance_fn: VarianceFn, score_fn: VarianceFn, q: int, cfg: MhConfig, d: int,
                 n_max: Optional[int] = None) -> BatchSelection:
    """Sample, cluster and keep the q centers of highest score"""
    chain = mh_sample(variance_fn, cfg, d)
    clusters, scan = choose_cluster_count(variance_fn, chain.samples, q, n_max, cfg.seed)
    if q > clusters.N:
        raise ConfigError(f"Batch size {q} exceeds the {clusters.N} available cluster centers")
    scores = np.asarray(score_fn(clusters.centers), dtype=float)
    # stable sort keeps the lowest index first among equal scores
    order = np.argsort(-scores, kind="stable")[:q]
    return BatchSelection(points=clusters.centers[order], scores=scores[order], clusters=clusters,
                          scan=scan, chain=chain)


def select_batch_adjmmse(model: KrigingModel, diag: LoocvDiagnostics, q: int, cfg: MhConfig,
                         n_max: Optional[int] = None) -> BatchSelection:
    """q cluster centers ranked by the LOO-adjusted variance"""
    partition = VoronoiPartition(model.design)

    def variance(points):
        return np.atleast_1d(predict_var(model, points))

    def score(points):
        return adjusted_variance(variance(points), diag.ratios, partition, points)

    return select_batch(variance, score, q, cfg, model.dim, n_max)


def select_batch_liar_minimse(model: KrigingModel, q: int, grid: CandidateGrid) -> Tuple[np.ndarray, KrigingModel]:
    """
    q sequential MinIMSE picks, each followed by a liar update

    Returns:
        The q points and the model conditioned on all of them
    """
    points = []
    current = model
    for _ in range(q):
        choice = select_min_imse(current, grid)
        points.append(choice.point)
        current = liar_condition(current, choice.point)
    return np.vstack(points), current

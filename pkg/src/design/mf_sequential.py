"""
Sequential design engines

``step_one_point`` picks the point of largest top-level co-kriging variance
and walks the levels upward to decide how far to run it; ``step_batch``
spends a fixed time budget T per round on (q^1, ..., q^s) new points, the
allocation being chosen by exhaustive enumeration of the integer solutions of
the cost identity. Single-fidelity kriging steps share the same state and
ledger so that kriging and co-kriging runs compare at equal cost.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.design.batch_select import (
    ClusterSet,
    MhChain,
    MhConfig,
    choose_cluster_count,
    mh_sample,
    select_batch_adjmmse,
    select_batch_liar_minimse,
)
from src.design.criteria import (
    CandidateGrid,
    VoronoiPartition,
    maximize_on_grid,
    select_point,
)
from src.models.cokriging import (
    CokrigingModel,
    MfLoocvDiagnostics,
    MultiFidelityData,
    fit_cokriging,
    mf_liar_condition,
    mf_loocv_diagnostics,
    mf_predict_var,
    variance_decomposition,
)
from src.models.loocv import loocv_diagnostics
from src.utils.exceptions import ArgumentError, BudgetError, ConfigError
from src.utils.seeding import derive_seed

MAX_ALLOCATIONS = 10_000
ONE_POINT_CRITERIA = ("plain", "adjusted")
BATCH_METHODS = ("adjmmse", "liar-minimse")

Simulator = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CostModel:
    """Integer run times t^1 < ... < t^s of the code levels"""

    times: Tuple[int, ...]

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        if not times or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ArgumentError(f"Run times must be positive and strictly increasing, got {self.times}")
        object.__setattr__(self, "times", times)

    @property
    def levels(self) -> int:
        return len(self.times)

    def ratio(self, level: int) -> float:
        """B_{l/l-1} = t^l / t^{l-1}"""
        return self.times[level - 1] / self.times[level - 2]

    def stack_cost(self, level: int) -> int:
        """Cost of running one point at levels 1..level"""
        return sum(self.times[:level])

    def round_cost(self, q: Sequence[int]) -> int:
        return sum(int(q_i) * self.stack_cost(i) for i, q_i in enumerate(q, start=1))


@dataclass(frozen=True)
class Allocation:
    """New-point counts (q^1, ..., q^s) of one batch round"""

    q: Tuple[int, ...]

    def __post_init__(self):
        if any(int(v) < 0 for v in self.q):
            raise ArgumentError(f"Allocation counts must be non-negative, got {self.q}")
        object.__setattr__(self, "q", tuple(int(v) for v in self.q))


@dataclass(frozen=True)
class FitOptions:
    trend: str = "constant"
    kernel_family: str = "squared-exponential"
    theta_bounds: Optional[Tuple[float, float]] = None
    starts: Optional[int] = None


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """One step of a sequential run; points are unit-cube coordinates"""

    iteration: int
    points: Tuple[np.ndarray, ...]
    levels: Tuple[int, ...]
    criterion_value: float
    spent_time: int
    accurate_runs: int
    total_runs: int
    nrmse: Optional[float] = None


@dataclass(frozen=True, eq=False)
class SequentialState:
    """Data, fitted model and time ledger of one sequential run"""

    data: MultiFidelityData
    model: CokrigingModel
    cost: CostModel
    options: FitOptions = field(default_factory=FitOptions)
    seed: int = 0
    spent: int = 0
    iteration: int = 0
    runs: Tuple[int, ...] = ()
    log: Tuple[IterationRecord, ...] = ()

    @property
    def accurate_fraction(self) -> float:
        total = sum(self.runs)
        return self.runs[-1] / total if total else 1.0


def initial_state(data: MultiFidelityData, cost: CostModel, options: FitOptions = FitOptions(),
                  seed: int = 0) -> SequentialState:
    """Fit the first model; the initial design counts as runs but not as spent time"""
    if cost.levels != data.levels:
        raise ArgumentError(f"Cost model has {cost.levels} levels, data has {data.levels}")
    model = _fit(data, options, seed, 0)
    return SequentialState(data=data, model=model, cost=cost, options=options, seed=seed,
                           runs=tuple(data.sizes()))


def _fit(data: MultiFidelityData, options: FitOptions, seed: int, iteration: int) -> CokrigingModel:
    return fit_cokriging(data, options.trend, options.kernel_family, seed=derive_seed(seed, iteration),
                         theta_bounds=options.theta_bounds, starts=options.starts)


def volume_factors(model: CokrigingModel) -> np.ndarray:
    """prod_m theta_i^m for every level i"""
    return np.array([float(np.prod(model.theta(level))) for level in range(1, model.levels + 1)])


def _weighted_terms(model: CokrigingModel, x, level: int) -> np.ndarray:
    profile = variance_decomposition(model, x, level)
    return profile.weighted * volume_factors(model)[:level].reshape((-1,) + (1,) * (profile.weighted.ndim - 1))


def imse_red(model: CokrigingModel, x, level: int):
    """IMSE reduction proxy sum_i sigma2_delta_i(x) prod rho_j^2 prod_m theta_i^m"""
    total = _weighted_terms(model, x, level).sum(axis=0)
    return float(total) if np.ndim(total) == 0 else total


def _level_adjustments(diag: MfLoocvDiagnostics, level: int) -> np.ndarray:
    """1 + sum over the points of level i of the increment ratios"""
    return np.array([1.0 + float(np.sum(diag.ratios[i])) for i in range(level)])


def imse_red_adj(model: CokrigingModel, diag: MfLoocvDiagnostics, x, level: int):
    """IMSE reduction proxy with each level term scaled by its aggregated LOO ratio"""
    terms = _weighted_terms(model, x, level)
    adjust = _level_adjustments(diag, level).reshape((-1,) + (1,) * (terms.ndim - 1))
    total = (terms * adjust).sum(axis=0)
    return float(total) if np.ndim(total) == 0 else total


def adjusted_level_variance(model: CokrigingModel, diag: MfLoocvDiagnostics,
                            partitions: Sequence[VoronoiPartition], x, level: int,
                            volume: bool = True) -> np.ndarray:
    """
    Adjusted co-kriging variance at a batch of points

    Level i's weighted bias variance is multiplied by 1 + the increment ratio
    of the level-i Voronoi cell holding x, and by prod_m theta_i^m when
    ``volume`` is set.
    """
    points = np.atleast_2d(np.asarray(x, dtype=float))
    profile = variance_decomposition(model, points, level)
    total = np.zeros(points.shape[0])
    factors = volume_factors(model) if volume else np.ones(model.levels)
    for i in range(level):
        cell = partitions[i].index(points)
        total += profile.weighted[i] * (1.0 + diag.ratios[i][cell]) * factors[i]
    return total


def partitions_of(model: CokrigingModel) -> List[VoronoiPartition]:
    return [VoronoiPartition(model.design(level)) for level in range(1, model.levels + 1)]


def level_imse(model: CokrigingModel, grid: np.ndarray, level: int) -> float:
    """Mean of sigma2_delta_l over the grid (the unit cube has volume 1)"""
    return float(np.mean(variance_decomposition(model, grid, model.levels).bias[level - 1]))


@dataclass(frozen=True)
class LevelDecision:
    level: int
    bias_variance: float
    level_imse: float
    reduction_ratio: float
    stop: bool


def choose_levels(model: CokrigingModel, x_new: np.ndarray, grid: np.ndarray, cost: CostModel,
                  diag: Optional[MfLoocvDiagnostics] = None) -> Tuple[int, List[LevelDecision]]:
    """
    Highest level to run at x_new

    Walks l = 2..s and stops at the first level where the bias variance at
    x_new is below its grid mean, or where running level l - 1 B_{l/l-1}
    times promises more reduction than one run of level l. Reductions use
    the adjusted proxy when ``diag`` is given.
    """
    bias = variance_decomposition(model, grid, model.levels).bias
    at_point = variance_decomposition(model, x_new, model.levels).bias
    decisions = []
    for level in range(2, model.levels + 1):
        if diag is None:
            lower, upper = imse_red(model, x_new, level - 1), imse_red(model, x_new, level)
        else:
            lower, upper = imse_red_adj(model, diag, x_new, level - 1), imse_red_adj(model, diag, x_new, level)
        ratio = lower / upper if upper > 0.0 else np.inf
        mean_bias = float(np.mean(bias[level - 1]))
        stop = bool(at_point[level - 1] < mean_bias or ratio > 1.0 / cost.ratio(level))
        decisions.append(LevelDecision(level, float(at_point[level - 1]), mean_bias, float(ratio), stop))
        logger.debug("Level {}: bias var {:.4g} vs IMSE {:.4g}, reduction ratio {:.4g} -> {}",
                     level, at_point[level - 1], mean_bias, ratio, "stop" if stop else "continue")
        if stop:
            return level - 1, decisions
    return model.levels, decisions


def _run_point(state: SequentialState, simulate: Simulator, point: np.ndarray,
               top_level: int) -> Tuple[MultiFidelityData, int, List[int]]:
    """Simulate levels 1..top_level where the point is new; returns data, cost and runs per level"""
    values, spent = [], 0
    runs = [0] * state.data.levels
    for level in range(1, top_level + 1):
        if state.data.contains(level, point):
            values.append(None)
            continue
        values.append(float(simulate(level, point[None, :])[0]))
        spent += state.cost.times[level - 1]
        runs[level - 1] += 1
    return state.data.add_runs(point, values), spent, runs


def _advance(state: SequentialState, data: MultiFidelityData, spent: int, runs: Sequence[int],
             points: Sequence[np.ndarray], levels: Sequence[int], value: float,
             nrmse_fn: Optional[Callable[[CokrigingModel], float]]) -> SequentialState:
    iteration = state.iteration + 1
    model = _fit(data, state.options, state.seed, iteration)
    new_runs = tuple(a + b for a, b in zip(state.runs, runs))
    record = IterationRecord(
        iteration=iteration, points=tuple(np.asarray(p) for p in points), levels=tuple(levels),
        criterion_value=float(value), spent_time=state.spent + spent,
        accurate_runs=new_runs[-1], total_runs=sum(new_runs),
        nrmse=nrmse_fn(model) if nrmse_fn is not None else None,
    )
    return replace(state, data=data, model=model, spent=state.spent + spent, iteration=iteration,
                   runs=new_runs, log=state.log + (record,))


def step_one_point(state: SequentialState, criterion: str, simulate: Simulator, grid: CandidateGrid,
                   budget: Optional[int] = None,
                   nrmse_fn: Optional[Callable[[CokrigingModel], float]] = None) -> SequentialState:
    """
    One point at a time sequential co-kriging step

    ``criterion`` "plain" maximizes the top-level variance and uses the plain
    reduction proxy; "adjusted" maximizes the LOO-adjusted top-level variance
    and uses the adjusted proxy. Levels above what the remaining budget
    affords are dropped.
    """
    if criterion not in ONE_POINT_CRITERIA:
        raise ConfigError(f"Unknown one-point criterion '{criterion}', expected one of {ONE_POINT_CRITERIA}")
    model = state.model
    s = model.levels
    diag = mf_loocv_diagnostics(model) if criterion == "adjusted" else None

    if diag is None:
        choice = maximize_on_grid(lambda pts: np.atleast_1d(mf_predict_var(model, pts)), grid, "plain")
    else:
        partitions = partitions_of(model)
        choice = maximize_on_grid(
            lambda pts: adjusted_level_variance(model, diag, partitions, pts, s, volume=False), grid, "adjusted")

    top, _ = choose_levels(model, choice.point, grid.points, state.cost, diag)
    if budget is not None:
        remaining = budget - state.spent
        while top > 1 and state.cost.stack_cost(top) > remaining:
            top -= 1
        if state.cost.stack_cost(top) > remaining:
            raise BudgetError(f"Remaining budget {remaining} cannot pay for a level-1 run")

    data, spent, runs = _run_point(state, simulate, choice.point, top)
    return _advance(state, data, spent, runs, [choice.point], [top], choice.value, nrmse_fn)


def step_kriging(state: SequentialState, criterion: str, simulate: Simulator, grid: CandidateGrid,
                 nrmse_fn: Optional[Callable[[CokrigingModel], float]] = None) -> SequentialState:
    """One-point single-fidelity step with a criterion from the criteria module"""
    if state.model.levels != 1:
        raise ConfigError("Single-fidelity steps need a one-level state")
    choice = select_point(criterion, state.model.base, grid, seed=derive_seed(state.seed, state.iteration, 1))
    data, spent, runs = _run_point(state, simulate, choice.point, 1)
    return _advance(state, data, spent, runs, [choice.point], [1], choice.value, nrmse_fn)


def step_kriging_batch(state: SequentialState, q: int, method: str, simulate: Simulator,
                       grid: CandidateGrid, mh: MhConfig,
                       nrmse_fn: Optional[Callable[[CokrigingModel], float]] = None) -> SequentialState:
    """q-points-at-a-time single-fidelity step: batch AdjMMSE or liar MinIMSE"""
    if state.model.levels != 1:
        raise ConfigError("Single-fidelity steps need a one-level state")
    model = state.model.base
    if method == "adjmmse":
        selection = select_batch_adjmmse(model, loocv_diagnostics(model), q,
                                         mh.with_seed(derive_seed(state.seed, state.iteration, 2)))
        points, value = selection.points, float(selection.scores.sum())
    elif method == "liar-minimse":
        points, _ = select_batch_liar_minimse(model, q, grid)
        value = float("nan")
    else:
        raise ConfigError(f"Unknown batch method '{method}', expected one of {BATCH_METHODS}")

    data, spent, runs = state.data, 0, [0]
    for point in points:
        data, cost, new_runs = _run_point(replace(state, data=data), simulate, point, 1)
        spent += cost
        runs[0] += new_runs[0]
    return _advance(state, data, spent, runs, list(points), [1] * len(points), value, nrmse_fn)


def feasible_allocations(cost: CostModel, T: int, limit: Optional[int] = MAX_ALLOCATIONS) -> List[Allocation]:
    """
    Every integer allocation whose round cost equals T

    Enumeration stops after ``limit`` allocations; the caller then switches
    to the greedy search.
    """
    T = int(T)
    if T < cost.times[0]:
        raise BudgetError(f"Budget {T} is below the level-1 run time {cost.times[0]}")
    found: List[Allocation] = []

    def descend(level: int, remaining: int, tail: Tuple[int, ...]):
        if limit is not None and len(found) >= limit:
            return
        unit = cost.stack_cost(level)
        if level == 1:
            if remaining % unit == 0:
                found.append(Allocation((remaining // unit,) + tail))
            return
        for count in range(remaining // unit + 1):
            descend(level - 1, remaining - count * unit, (count,) + tail)

    descend(cost.levels, T, ())
    if not found:
        raise BudgetError(f"No allocation spends exactly {T} with run times {cost.times}")
    return found


@dataclass(frozen=True, eq=False)
class RoundSelection:
    """Points chosen per level for one allocation and their reduction score"""

    allocation: Allocation
    points: Dict[int, np.ndarray]
    score: float
    level_scores: Dict[int, float]
    conditioned: Dict[int, CokrigingModel]


class _ChainCache:
    """MH chains and their clusterings by N, keyed by level and conditioning points"""

    def __init__(self):
        self._chains: Dict[Tuple[int, bytes], MhChain] = {}
        self._clusters: Dict[Tuple[int, bytes], Dict[int, ClusterSet]] = {}

    @staticmethod
    def _key(level: int, conditioning: np.ndarray) -> Tuple[int, bytes]:
        return level, np.ascontiguousarray(conditioning).tobytes()

    def get(self, level: int, conditioning: np.ndarray, build: Callable[[], MhChain]) -> MhChain:
        key = self._key(level, conditioning)
        if key not in self._chains:
            self._chains[key] = build()
        return self._chains[key]

    def clusterings(self, level: int, conditioning: np.ndarray) -> Dict[int, ClusterSet]:
        return self._clusters.setdefault(self._key(level, conditioning), {})


def select_round(model: CokrigingModel, diag: MfLoocvDiagnostics, allocation: Allocation,
                 mh: MhConfig, cache: Optional[_ChainCache] = None,
                 n_max: Optional[int] = None) -> RoundSelection:
    """
    Choose q^l points per level from the top level down

    Level m samples and ranks with the model liar-conditioned on the points
    already chosen for the finer levels.
    """
    cache = cache or _ChainCache()
    s = model.levels
    partitions = partitions_of(model)
    volumes = volume_factors(model)
    chosen: Dict[int, np.ndarray] = {}
    conditioned: Dict[int, CokrigingModel] = {}
    level_scores: Dict[int, float] = {}

    for level in range(s, 0, -1):
        q = allocation.q[level - 1]
        finer = [chosen[l] for l in range(level + 1, s + 1) if chosen[l].size]
        conditioning = np.vstack(finer) if finer else np.empty((0, model.dim))
        current = mf_liar_condition(model, conditioning, level)
        conditioned[level] = current
        if q == 0:
            chosen[level] = np.empty((0, model.dim))
            level_scores[level] = 0.0
            continue

        def variance(points, current=current, level=level):
            return np.atleast_1d(mf_predict_var(current, points, level))

        seed = derive_seed(mh.seed, level)
        chain = cache.get(level, conditioning, lambda: mh_sample(variance, mh.with_seed(seed), model.dim))
        clusters, _ = choose_cluster_count(variance, chain.samples, q, n_max, seed,
                                           cache=cache.clusterings(level, conditioning))
        if q > clusters.N:
            raise ConfigError(f"Batch size {q} exceeds the {clusters.N} cluster centers of level {level}")
        scores = adjusted_level_variance(current, diag, partitions, clusters.centers, level)
        order = np.argsort(-scores, kind="stable")[:q]
        chosen[level] = clusters.centers[order]

        bias = variance_decomposition(current, chosen[level], level).bias[level - 1]
        weight = float(np.prod([model.rho(j) ** 2 for j in range(level + 1, s + 1)]))
        level_scores[level] = float(np.sum(bias)) * weight * volumes[level - 1]

    return RoundSelection(allocation=allocation, points=chosen, score=float(sum(level_scores.values())),
                          level_scores=level_scores, conditioned=conditioned)


@dataclass(frozen=True, eq=False)
class AllocationResult:
    best: RoundSelection
    scores: Dict[Tuple[int, ...], float]


def _greedy_allocations(cost: CostModel, T: int, evaluate: Callable[[Allocation], RoundSelection]):
    """Level-by-level greedy search, level 1 absorbing the remaining budget"""
    s = cost.levels
    fixed: List[int] = [0] * s
    best = None
    for level in range(s, 1, -1):
        spent = sum(fixed[i] * cost.stack_cost(i + 1) for i in range(level, s))
        level_best = None
        for count in range((T - spent) // cost.stack_cost(level) + 1):
            remaining = T - spent - count * cost.stack_cost(level)
            if remaining % cost.stack_cost(1):
                continue
            q = [0] * s
            q[level:] = fixed[level:]
            q[level - 1] = count
            q[0] = remaining // cost.stack_cost(1)
            result = evaluate(Allocation(tuple(q)))
            if level_best is None or result.score > level_best.score:
                level_best = result
        if level_best is None:
            raise BudgetError(f"No allocation spends exactly {T} with run times {cost.times}")
        fixed[level - 1] = level_best.allocation.q[level - 1]
        best = level_best
    return best


def allocate_budget(model: CokrigingModel, cost: CostModel, T: int, mh: MhConfig,
                    diag: Optional[MfLoocvDiagnostics] = None,
                    candidates: Optional[Sequence[Allocation]] = None,
                    n_max: Optional[int] = None) -> AllocationResult:
    """
    Allocation of largest summed reduction proxy among the feasible set

    Every candidate allocation runs the point-selection pipeline without
    simulating. Ties go to the larger q^1.
    """
    diag = mf_loocv_diagnostics(model) if diag is None else diag
    cache = _ChainCache()
    scores: Dict[Tuple[int, ...], float] = {}

    def evaluate(allocation: Allocation) -> RoundSelection:
        result = select_round(model, diag, allocation, mh, cache, n_max)
        scores[allocation.q] = result.score
        logger.debug("Allocation {} score {:.6g}", allocation.q, result.score)
        return result

    if candidates is None:
        candidates = feasible_allocations(cost, T, limit=MAX_ALLOCATIONS + 1)
        if len(candidates) > MAX_ALLOCATIONS:
            logger.info("More than {} allocations for budget {}, using the greedy search", MAX_ALLOCATIONS, T)
            return AllocationResult(best=_greedy_allocations(cost, T, evaluate), scores=scores)

    best = None
    for allocation in candidates:
        result = evaluate(allocation)
        if (best is None or result.score > best.score
                or (result.score == best.score and allocation.q[0] > best.allocation.q[0])):
            best = result
    return AllocationResult(best=best, scores=scores)


def step_batch(state: SequentialState, T: int, mh: MhConfig, simulate: Simulator,
               allocation: Optional[Allocation] = None, n_max: Optional[int] = None,
               nrmse_fn: Optional[Callable[[CokrigingModel], float]] = None) -> SequentialState:
    """
    One (q^1, ..., q^s) points at a time round costing exactly T

    Points chosen for level l are simulated at levels 1..l.
    """
    model = state.model
    diag = mf_loocv_diagnostics(model)
    round_mh = mh.with_seed(derive_seed(state.seed, state.iteration, 3))
    if allocation is None:
        selection = allocate_budget(model, state.cost, T, round_mh, diag, n_max=n_max).best
    else:
        if state.cost.round_cost(allocation.q) != T:
            raise BudgetError(f"Allocation {allocation.q} does not cost exactly {T}")
        selection = select_round(model, diag, allocation, round_mh, n_max=n_max)
    logger.debug("Round {} allocation {}", state.iteration + 1, selection.allocation.q)

    data, spent = state.data, 0
    runs = [0] * state.data.levels
    points, levels = [], []
    for level in range(model.levels, 0, -1):
        for point in selection.points[level]:
            data, cost, new_runs = _run_point(replace(state, data=data), simulate, point, level)
            spent += cost
            runs = [a + b for a, b in zip(runs, new_runs)]
            points.append(point)
            levels.append(level)
    return _advance(state, data, spent, runs, points, levels, selection.score, nrmse_fn)

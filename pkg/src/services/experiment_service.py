"""
Experiment orchestration

An experiment replicates one sequential design run over independently seeded
initial designs. Every replicate fits its surrogate, loops design steps until
the time budget is spent, and records the normalized RMSE on the problem's
fixed test set after each step.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.profiles import Profiles
from config.settings import settings
from src.design.batch_select import MhConfig
from src.design.criteria import CRITERIA, make_grid
from src.design.design_gen import nested_designs
from src.design.mf_sequential import (
    BATCH_METHODS,
    ONE_POINT_CRITERIA,
    Allocation,
    CostModel,
    FitOptions,
    SequentialState,
    initial_state,
    step_batch,
    step_kriging,
    step_kriging_batch,
    step_one_point,
)
from src.models.cokriging import MultiFidelityData, mf_predict_mean
from src.models.kernels import KERNEL_FAMILIES, TREND_KINDS
from src.services.problems import BenchmarkProblem, normalized_rmse, problem_registry
from src.utils.exceptions import ArgumentError, ConfigError, SurrogateDesignError
from src.utils.seeding import derive_seed

RECORD_COLUMNS = ["replicate", "iteration", "spent_time", "nrmse", "accurate_runs", "total_runs",
                  "accurate_run_fraction", "criterion_value", "levels", "points"]
SUMMARY_COLUMNS = ["iteration", "spent_time", "mean_nrmse", "q10_nrmse", "q90_nrmse",
                   "mean_accurate_run_fraction"]

CRITERIA_BY_MODE = {
    ("kriging", "one-point"): CRITERIA,
    ("kriging", "batch"): BATCH_METHODS,
    ("cokriging", "one-point"): ONE_POINT_CRITERIA,
    ("cokriging", "batch"): ("adjmmse",),
}


class MhOverrides(BaseModel):
    """Optional Metropolis-Hastings settings; unset fields use the profile or settings"""

    model_config = ConfigDict(extra="forbid")

    n_samples: Optional[int] = None
    burn_in: Optional[int] = None
    proposal_std: Optional[float] = None
    target_acceptance: Optional[float] = None
    adapt_interval: Optional[int] = None


class ExperimentConfig(BaseModel):
    """Validated description of one replicated sequential design experiment"""

    model_config = ConfigDict(extra="forbid")

    problem: str
    criterion: str
    surrogate: Literal["kriging", "cokriging"] = "kriging"
    mode: Literal["one-point", "batch"] = "one-point"
    q: int = Field(default=1, ge=1)
    allocation: Optional[List[int]] = None
    round_budget: Optional[int] = Field(default=None, ge=1)
    budget: int = Field(default=0, ge=0)
    replicates: Optional[int] = Field(default=None, ge=1)
    initial_sizes: Optional[List[int]] = None
    seed: int = 0
    trend: str = "constant"
    kernel_family: str = "squared-exponential"
    grid_points: Optional[int] = None
    n_test: Optional[int] = Field(default=None, ge=2)
    n_max: Optional[int] = None
    mh: MhOverrides = Field(default_factory=MhOverrides)
    full_scale: bool = False
    n_jobs: int = Field(default_factory=lambda: settings.N_JOBS)
    output_dir: Optional[str] = None

    @field_validator("problem")
    @classmethod
    def _known_problem(cls, value):
        if value not in problem_registry.names():
            raise ValueError(f"unknown problem '{value}', expected one of {problem_registry.names()}")
        return value

    @field_validator("trend")
    @classmethod
    def _known_trend(cls, value):
        if value not in TREND_KINDS:
            raise ValueError(f"unknown trend '{value}', expected one of {TREND_KINDS}")
        return value

    @field_validator("kernel_family")
    @classmethod
    def _known_kernel(cls, value):
        if value not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family '{value}', expected one of {KERNEL_FAMILIES}")
        return value

    @model_validator(mode="after")
    def _consistent(self):
        allowed = CRITERIA_BY_MODE[(self.surrogate, self.mode)]
        if self.criterion not in allowed:
            raise ValueError(f"criterion '{self.criterion}' is not available for {self.surrogate} "
                             f"{self.mode} runs, expected one of {allowed}")
        levels = self.levels_used()
        if self.initial_sizes is not None and len(self.initial_sizes) != len(levels):
            raise ValueError(f"initial_sizes needs {len(levels)} entries, got {len(self.initial_sizes)}")
        if self.surrogate == "cokriging" and self.mode == "batch":
            if self.round_budget is None:
                raise ValueError("co-kriging batch runs need a round_budget")
            if self.allocation is not None:
                if len(self.allocation) != len(levels):
                    raise ValueError(f"allocation needs {len(levels)} entries, got {len(self.allocation)}")
                if self.cost_model().round_cost(self.allocation) != self.round_budget:
                    raise ValueError(f"allocation {self.allocation} does not cost round_budget "
                                     f"{self.round_budget}")
        try:
            self.mh_config()
        except ArgumentError as exc:
            raise ValueError(str(exc)) from exc
        return self

    def problem_object(self) -> BenchmarkProblem:
        return problem_registry.get(self.problem)

    def levels_used(self) -> Tuple[int, ...]:
        """Problem levels the surrogate sees; kriging uses the accurate level only"""
        n_levels = self.problem_object().n_levels
        return (n_levels,) if self.surrogate == "kriging" else tuple(range(1, n_levels + 1))

    def cost_model(self) -> CostModel:
        costs = self.problem_object().costs
        return CostModel(tuple(costs[level - 1] for level in self.levels_used()))

    def design_sizes(self) -> List[int]:
        if self.initial_sizes is not None:
            return list(self.initial_sizes)
        sizes = self.problem_object().initial_sizes
        return [sizes[level - 1] for level in self.levels_used()]

    def profile(self) -> Dict[str, int]:
        return Profiles.get_profile(self.full_scale)

    def replicate_count(self) -> int:
        return self.replicates if self.replicates is not None else self.profile()["replicates"]

    def test_size(self) -> int:
        return self.n_test if self.n_test is not None else self.profile()["n_test"]

    def mh_config(self, seed: int = 0) -> MhConfig:
        profile = self.profile()
        mh = self.mh
        return MhConfig(
            n_samples=mh.n_samples if mh.n_samples is not None else profile["n_mcmc"],
            burn_in=mh.burn_in if mh.burn_in is not None else profile["burn_in"],
            proposal_std=mh.proposal_std,
            target_acceptance=mh.target_acceptance if mh.target_acceptance is not None else settings.TARGET_ACCEPT,
            adapt_interval=mh.adapt_interval if mh.adapt_interval is not None else settings.ADAPT_INTERVAL,
            seed=seed,
        )


@dataclass
class ReplicateResult:
    """Rows of one replicate, or the reason it failed"""

    replicate: int
    seed: int
    rows: List[Dict] = field(default_factory=list)
    failure: Optional[str] = None
    wall_clock: List[float] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.failure is None

    @property
    def final_nrmse(self) -> float:
        return float(self.rows[-1]["nrmse"]) if self.rows else float("nan")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replicates: List[ReplicateResult]

    @property
    def completed(self) -> List[ReplicateResult]:
        return [r for r in self.replicates if r.completed]

    @property
    def failures(self) -> List[ReplicateResult]:
        return [r for r in self.replicates if not r.completed]

    def records_frame(self) -> pd.DataFrame:
        rows = [row for r in self.completed for row in r.rows]
        return pd.DataFrame(rows, columns=RECORD_COLUMNS)

    def summary_frame(self) -> pd.DataFrame:
        return summarize(self.records_frame())


def summarize(records: pd.DataFrame) -> pd.DataFrame:
    """Per-iteration mean and 10%/90% empirical quantiles across replicates"""
    if records.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = records.groupby("iteration", sort=True)
    summary = pd.DataFrame({
        "spent_time": grouped["spent_time"].mean(),
        "mean_nrmse": grouped["nrmse"].mean(),
        "q10_nrmse": grouped["nrmse"].quantile(0.1),
        "q90_nrmse": grouped["nrmse"].quantile(0.9),
        "mean_accurate_run_fraction": grouped["accurate_run_fraction"].mean(),
    }).reset_index()
    return summary[SUMMARY_COLUMNS]


def _format_points(problem: BenchmarkProblem, points) -> str:
    if not len(points):
        return ""
    physical = problem.domain.from_unit(np.vstack(points))
    return ";".join(" ".join(f"{v:.12g}" for v in row) for row in physical)


class _Replicate:
    """One replicate's fixed inputs: problem, test set, grid and step dispatch"""

    def __init__(self, config: ExperimentConfig, replicate: int):
        self.config = config
        self.replicate = replicate
        self.seed = derive_seed(config.seed, replicate)
        self.problem = config.problem_object()
        self.levels = config.levels_used()
        self.cost = config.cost_model()
        self.test_points, self.truth = self.problem.test_set(config.test_size())
        self.grid = make_grid(self.problem.dim, config.grid_points, seed=derive_seed(self.seed, 1))

    def simulate(self, level: int, points: np.ndarray) -> np.ndarray:
        return self.problem.simulate(self.levels[level - 1], points)

    def nrmse(self, model) -> float:
        return normalized_rmse(np.atleast_1d(mf_predict_mean(model, self.test_points)), self.truth)

    def start(self) -> SequentialState:
        sizes = self.config.design_sizes()
        designs = nested_designs(sizes, self.problem.dim, seed=derive_seed(self.seed, 0))
        outputs = [self.simulate(level, design) for level, design in enumerate(designs, start=1)]
        data = MultiFidelityData(tuple(designs), tuple(outputs))
        options = FitOptions(self.config.trend, self.config.kernel_family)
        return initial_state(data, self.cost, options, seed=derive_seed(self.seed, 2))

    def smallest_step(self) -> int:
        config, t1 = self.config, self.cost.times[0]
        if config.mode == "one-point":
            return t1
        if config.surrogate == "kriging":
            return config.q * t1
        return config.round_budget

    def step(self, state: SequentialState) -> SequentialState:
        config = self.config
        if config.surrogate == "kriging" and config.mode == "one-point":
            return step_kriging(state, config.criterion, self.simulate, self.grid, self.nrmse)
        if config.surrogate == "kriging":
            return step_kriging_batch(state, config.q, config.criterion, self.simulate, self.grid,
                                      config.mh_config(), self.nrmse)
        if config.mode == "one-point":
            criterion = "adjusted" if config.criterion == "adjusted" else "plain"
            return step_one_point(state, criterion, self.simulate, self.grid, config.budget, self.nrmse)
        allocation = Allocation(tuple(config.allocation)) if config.allocation is not None else None
        return step_batch(state, config.round_budget, config.mh_config(), self.simulate, allocation,
                          config.n_max, self.nrmse)

    def row(self, state: SequentialState, iteration: int, nrmse: float, value: float,
            levels: Tuple[int, ...] = (), points=()) -> Dict:
        return {
            "replicate": self.replicate,
            "iteration": iteration,
            "spent_time": state.spent,
            "nrmse": nrmse,
            "accurate_runs": state.runs[-1],
            "total_runs": sum(state.runs),
            "accurate_run_fraction": state.accurate_fraction if self.config.surrogate == "cokriging" else 1.0,
            "criterion_value": value,
            "levels": " ".join(str(self.levels[l - 1]) for l in levels),
            "points": _format_points(self.problem, points),
        }


def run_replicate(config: ExperimentConfig, replicate: int) -> ReplicateResult:
    """Run one seeded replicate to budget exhaustion; module errors mark it failed"""
    result = ReplicateResult(replicate=replicate, seed=derive_seed(config.seed, replicate))
    logger.info("Replicate {} of {} on {} started", replicate, config.criterion, config.problem)
    clock = time.perf_counter()
    try:
        runner = _Replicate(config, replicate)
        state = runner.start()
        result.rows.append(runner.row(state, 0, runner.nrmse(state.model), float("nan")))
        result.wall_clock.append(time.perf_counter() - clock)
        while state.spent + runner.smallest_step() <= config.budget:
            state = runner.step(state)
            record = state.log[-1]
            result.rows.append(runner.row(state, record.iteration, record.nrmse, record.criterion_value,
                                          record.levels, record.points))
            result.wall_clock.append(time.perf_counter() - clock)
    except (SurrogateDesignError, np.linalg.LinAlgError) as exc:
        result.failure = f"{type(exc).__name__}: {exc}"
        logger.warning("Replicate {} failed: {}", replicate, result.failure)
        return result
    logger.info("Replicate {} finished: {} steps, final NRMSE {:.4g}", replicate, len(result.rows) - 1,
                result.final_nrmse)
    return result


class ExperimentService:
    """Service for running replicated sequential design experiments"""

    def load_config(self, path: Union[str, Path]) -> ExperimentConfig:
        """
        Read a JSON experiment configuration

        Raises:
            ConfigError: unreadable file or invalid content
        """
        path = Path(path)
        try:
            return ExperimentConfig.model_validate_json(path.read_text())
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc}") from exc
        except ValidationError as exc:
            raise ConfigError(f"Invalid config {path}: {exc}") from exc

    def run(self, config: ExperimentConfig) -> ExperimentResult:
        """Run every replicate, in parallel when n_jobs > 1"""
        count = config.replicate_count()
        if config.n_jobs == 1:
            replicates = [run_replicate(config, r) for r in range(count)]
        else:
            replicates = Parallel(n_jobs=config.n_jobs)(delayed(run_replicate)(config, r) for r in range(count))
        result = ExperimentResult(config=config, replicates=list(replicates))
        if result.failures:
            logger.warning("{} of {} replicates failed", len(result.failures), count)
        return result

    def list_problems(self) -> List[Dict[str, object]]:
        problems = []
        for name in problem_registry.names():
            problem = problem_registry.get(name)
            problems.append({"name": name, "dim": problem.dim, "levels": problem.n_levels,
                             "costs": list(problem.costs), "description": problem.description})
        return problems

    def list_criteria(self) -> Dict[str, List[str]]:
        return {f"{surrogate} {mode}": list(names) for (surrogate, mode), names in CRITERIA_BY_MODE.items()}

    def describe(self, config: ExperimentConfig) -> str:
        return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)


# Create a global instance
experiment_service = ExperimentService()

"""
Benchmark problems: tabulated 2-d test functions and the pressurized tank

Every problem exposes physical-unit evaluators (level 1 = coarsest), a
``Domain`` and per-level run costs. Models work in unit coordinates, so the
service also offers ``simulate(level, unit_points)``.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from src.models.kernels import Domain, scale_to_unit
from src.utils.exceptions import ArgumentError, CalibrationError, SimulatorRunError
from src.utils.seeding import derive_seed

Evaluator = Callable[[np.ndarray], np.ndarray]

TANK_NAMES = ("P", "R_int", "T_shell", "T_cap", "E_shell", "E_cap", "sigma_y_shell", "sigma_y_cap")
TANK_DOMAIN = Domain(
    lower=np.array([30.0, 1500.0, 300.0, 100.0, 63.0, 189.0, 200.0, 400.0]),
    upper=np.array([50.0, 2500.0, 500.0, 300.0, 77.0, 231.0, 300.0, 800.0]),
    names=TANK_NAMES,
)

# Correlation between the coarse and the synthetic accurate tank code per response
TANK_PRESETS = {1: 0.99, 2: 0.80, 3: 0.45}

CALIBRATION_SAMPLES = 10_000
CALIBRATION_TOLERANCE = 0.02
N_FEATURES = 8


def ackley(x, y):
    """Ackley function on [-2, 2]^2, zero at the origin"""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return (-20.0 * np.exp(-0.2 * np.sqrt((x ** 2 + y ** 2) / 2.0))
            - np.exp((np.cos(2.0 * np.pi * x) + np.cos(2.0 * np.pi * y)) / 2.0)
            + 20.0 + np.exp(1.0))


def _shubert_factor(t):
    k = np.arange(1, 6)
    t = np.asarray(t, dtype=float)
    return np.sum(k * np.cos(np.multiply.outer(t, k + 1) + k), axis=-1)


def shubert(x, y):
    """Shubert function on [-2, 2]^2"""
    return _shubert_factor(x) * _shubert_factor(y)


def michalewicz(x, y):
    """Michalewicz function (m = 10) on [0, pi]^2"""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return (-np.sin(x) * np.sin(x ** 2 / np.pi) ** 20
            - np.sin(y) * np.sin(y ** 2 / np.pi) ** 20)


def tank_coarse(x) -> np.ndarray:
    """
    Von Mises stress (MPa) of a perfect spherical shell under internal pressure

    Depends on P, R_int and T_shell only.

    Args:
        x: (8,) or (m, 8) physical parameters in TANK_NAMES order

    Returns:
        Stress, scalar for one point
    """
    x = np.asarray(x, dtype=float)
    scale_to_unit(x, TANK_DOMAIN)
    points = np.atleast_2d(x)
    pressure, radius, thickness = points[:, 0], points[:, 1], points[:, 2]
    outer3 = (radius + thickness) ** 3
    stress = 1.5 * outer3 / (outer3 - radius ** 3) * pressure
    return float(stress[0]) if x.ndim == 1 else stress


class SyntheticTankCode:
    """
    Smooth stand-in for the accurate tank code with a set correlation to the coarse code

    f = mean_C + cos(phi) (C - mean_C) + std_C sin(phi) G, where C is the
    coarse code, cos(phi) the correlation target and G a seeded sum of cosine
    features of (P, R_int, T_shell, T_cap) made uncorrelated with C and of unit
    variance over a uniform calibration sample.
    """

    def __init__(self, corr_target: float, response_id: int = 1, seed: int = 0,
                 n_calibration: int = CALIBRATION_SAMPLES, calibration_seed: Optional[int] = None):
        if not 0.0 < corr_target <= 1.0:
            raise ArgumentError(f"Correlation target must lie in (0, 1], got {corr_target}")
        self.corr_target = float(corr_target)
        self.response_id = int(response_id)
        self.seed = int(seed)

        rng = np.random.default_rng(derive_seed(seed, response_id))
        self._freq = rng.uniform(-1.0, 1.0, size=(N_FEATURES, 4))
        self._freq[:, 3] = rng.choice([-1.0, 1.0], N_FEATURES) * rng.uniform(0.5, 1.0, N_FEATURES)
        self._phase = rng.uniform(0.0, 2.0 * np.pi, N_FEATURES)
        self._weight = rng.normal(size=N_FEATURES)

        calibration_seed = derive_seed(seed, response_id, 1) if calibration_seed is None else calibration_seed
        unit = np.random.default_rng(calibration_seed).random((n_calibration, TANK_DOMAIN.dim))
        physical = TANK_DOMAIN.from_unit(unit)
        coarse = tank_coarse(physical)
        features = self._features(physical)

        self.mean_coarse = float(np.mean(coarse))
        self.std_coarse = float(np.std(coarse))
        slope, intercept = np.polyfit(coarse, features, 1)
        residual = features - (intercept + slope * coarse)
        self._intercept, self._slope = float(intercept), float(slope)
        self._resid_std = float(np.std(residual))
        if not self._resid_std > 1e-12 * max(1.0, float(np.std(features))):
            raise CalibrationError("Cosine features are collinear with the coarse code")

        measured = float(np.corrcoef(self(physical), coarse)[0, 1])
        if abs(measured - self.corr_target) > CALIBRATION_TOLERANCE:
            raise CalibrationError(f"Measured correlation {measured:.4f} misses target {self.corr_target}")
        self.calibrated_correlation = measured
        logger.debug("Synthetic tank response {} calibrated: correlation {:.4f}", response_id, measured)

    def _features(self, physical: np.ndarray) -> np.ndarray:
        unit = scale_to_unit(physical, TANK_DOMAIN)[:, :4]
        waves = np.cos(2.0 * np.pi * unit @ self._freq.T + self._phase)
        return waves @ self._weight / np.sqrt(N_FEATURES)

    def standardized_residual(self, physical: np.ndarray) -> np.ndarray:
        coarse = tank_coarse(physical)
        return (self._features(physical) - self._intercept - self._slope * coarse) / self._resid_std

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        physical = np.atleast_2d(x)
        coarse = tank_coarse(physical)
        cos_phi = self.corr_target
        sin_phi = np.sqrt(max(0.0, 1.0 - cos_phi ** 2))
        value = self.mean_coarse + cos_phi * (coarse - self.mean_coarse)
        if sin_phi > 0.0:
            value = value + self.std_coarse * sin_phi * self.standardized_residual(physical)
        return float(value[0]) if x.ndim == 1 else value


def tank_fine_synthetic(x, response_id: int = 1, corr_target: Optional[float] = None, seed: int = 0):
    """Evaluate the synthetic accurate code of one tank response"""
    corr = TANK_PRESETS[response_id] if corr_target is None else corr_target
    return SyntheticTankCode(corr, response_id, seed)(x)


def normalized_rmse(pred, truth, test_set: Optional[np.ndarray] = None) -> float:
    """
    RMSE over the test set divided by the range of the true values

    ``pred`` and ``truth`` are arrays of values or callables evaluated on
    ``test_set``.
    """
    pred = np.asarray(pred(test_set) if callable(pred) else pred, dtype=float)
    truth = np.asarray(truth(test_set) if callable(truth) else truth, dtype=float)
    if pred.shape != truth.shape:
        raise ArgumentError(f"Prediction shape {pred.shape} does not match truth shape {truth.shape}")
    spread = float(np.max(truth) - np.min(truth))
    if spread <= 0.0:
        raise ArgumentError("True values are constant over the test set, normalized RMSE is undefined")
    return float(np.sqrt(np.mean((pred - truth) ** 2)) / spread)


def _pair(function) -> Evaluator:
    def evaluate(points):
        points = np.atleast_2d(points)
        return function(points[:, 0], points[:, 1])
    return evaluate


@dataclass(frozen=True, eq=False)
class BenchmarkProblem:
    """A named problem with nested-fidelity evaluators in physical units"""

    name: str
    domain: Domain
    levels: Tuple[Evaluator, ...]
    costs: Tuple[int, ...]
    initial_sizes: Tuple[int, ...]
    description: str = ""
    n_test: int = 1000
    test_seed: int = 2024

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def simulate(self, level: int, unit_points) -> np.ndarray:
        """Run level ``level`` (1-based) at unit-cube points"""
        unit_points = np.atleast_2d(np.asarray(unit_points, dtype=float))
        physical = self.domain.from_unit(unit_points)
        values = np.asarray(self.levels[level - 1](physical), dtype=float).reshape(-1)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise SimulatorRunError(f"{self.name} level {level} returned a non-finite value",
                                    level=level, point=physical[bad[0]])
        return values

    def test_set(self, n_test: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Seeded uniform test points (unit coordinates) and accurate-level values"""
        n_test = self.n_test if n_test is None else n_test
        points = np.random.default_rng(self.test_seed).random((n_test, self.dim))
        return points, self.simulate(self.n_levels, points)


class ProblemRegistry:
    """Problems addressable by name"""

    def __init__(self):
        self._builders: Dict[str, Callable[[], BenchmarkProblem]] = {
            "ackley": lambda: BenchmarkProblem(
                "ackley", Domain([-2.0, -2.0], [2.0, 2.0], ("x", "y")), (_pair(ackley),), (1,), (10,),
                "Ackley function on [-2, 2]^2"),
            "shubert": lambda: BenchmarkProblem(
                "shubert", Domain([-2.0, -2.0], [2.0, 2.0], ("x", "y")), (_pair(shubert),), (1,), (10,),
                "Shubert function on [-2, 2]^2"),
            "michalewicz": lambda: BenchmarkProblem(
                "michalewicz", Domain([0.0, 0.0], [np.pi, np.pi], ("x", "y")), (_pair(michalewicz),), (1,),
                (10,), "Michalewicz function on [0, pi]^2"),
        }
        for response_id in TANK_PRESETS:
            self._builders[f"tank-r{response_id}"] = self._tank_builder(response_id)
        self._cache: Dict[str, BenchmarkProblem] = {}

    @staticmethod
    def _tank_builder(response_id: int) -> Callable[[], BenchmarkProblem]:
        def build():
            accurate = SyntheticTankCode(TANK_PRESETS[response_id], response_id)
            return BenchmarkProblem(
                f"tank-r{response_id}", TANK_DOMAIN, (tank_coarse, accurate), (1, 10), (20, 10),
                f"Spherical tank response {response_id}, coarse/accurate correlation "
                f"{TANK_PRESETS[response_id]:.2f}")
        return build

    def names(self) -> List[str]:
        return list(self._builders)

    def get(self, name: str) -> BenchmarkProblem:
        if name not in self._builders:
            raise ArgumentError(f"Unknown problem '{name}', expected one of {self.names()}")
        if name not in self._cache:
            self._cache[name] = self._builders[name]()
        return self._cache[name]


# Create a global instance
problem_registry = ProblemRegistry()

"""
Recursive multi-fidelity co-kriging on nested designs

Level l models Y^l(x) = rho_{l-1} Y^{l-1}(x) + delta^l(x). Its regressors at
the design are H_l = [y^{l-1}(D^l), F_l] built from the observed coarse
outputs (available by nesting); at a new point the coarse column is the
coarse predictive mean. Each level reuses the kriging GLS machinery.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist

from src.models.kernels import CorrelationKernel, TrendBasis
from src.models.kriging import (
    FORMAT_VERSION,
    GlsFactors,
    KrigingModel,
    _as_points,
    check_design,
    check_new_points,
    estimate_theta,
    fit_kriging,
    gls_factors,
    gls_mean,
    gls_variance,
    liar_condition,
    model_from_dict,
    model_to_dict,
)
from src.models.loocv import loo_term, loo_terms, ratio_from
from src.utils.exceptions import ArgumentError, DiagnosticsError, NestingError
from src.utils.seeding import derive_seed

NESTING_TOLERANCE = 1e-12


def _match_rows(points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Row index in ``reference`` of every point, or -1 when absent"""
    if reference.shape[0] == 0 or points.shape[0] == 0:
        return -np.ones(points.shape[0], dtype=int)
    distance = cdist(points, reference, metric="chebyshev")
    index = np.argmin(distance, axis=1)
    found = distance[np.arange(points.shape[0]), index] <= NESTING_TOLERANCE
    return np.where(found, index, -1)


@dataclass(frozen=True, eq=False)
class MultiFidelityData:
    """
    Nested designs D^1 ⊇ D^2 ⊇ ... ⊇ D^s with outputs per level

    ``index_maps[l][j]`` holds, for every point of level l (0-based), its row
    index in the design of level j <= l.
    """

    designs: Tuple[np.ndarray, ...]
    outputs: Tuple[np.ndarray, ...]
    index_maps: Tuple[Tuple[np.ndarray, ...], ...] = field(init=False)

    def __post_init__(self):
        if len(self.designs) != len(self.outputs) or not self.designs:
            raise ArgumentError("Need one output vector per level and at least one level")
        designs, outputs = [], []
        for design, values in zip(self.designs, self.outputs):
            design, values = check_design(design, values)
            designs.append(design)
            outputs.append(values)
        if len({d.shape[1] for d in designs}) != 1:
            raise ArgumentError("All levels must share the input dimension")

        maps = []
        for l, design in enumerate(designs):
            row = []
            for j in range(l + 1):
                index = _match_rows(design, designs[j])
                if np.any(index < 0):
                    missing = int(np.flatnonzero(index < 0)[0])
                    raise NestingError(f"Point {missing} of level {l + 1} is missing from level {j + 1}")
                row.append(index)
            maps.append(tuple(row))

        object.__setattr__(self, "designs", tuple(designs))
        object.__setattr__(self, "outputs", tuple(outputs))
        object.__setattr__(self, "index_maps", tuple(maps))

    @property
    def levels(self) -> int:
        return len(self.designs)

    @property
    def dim(self) -> int:
        return int(self.designs[0].shape[1])

    def sizes(self) -> List[int]:
        return [int(d.shape[0]) for d in self.designs]

    def coarse_outputs(self, level: int) -> np.ndarray:
        """y^{l-1} at the points of D^l, 1-based level l >= 2"""
        return self.outputs[level - 2][self.index_maps[level - 1][level - 2]]

    def contains(self, level: int, point) -> bool:
        point = np.atleast_2d(np.asarray(point, dtype=float))
        return bool(_match_rows(point, self.designs[level - 1])[0] >= 0)

    def add_runs(self, point, values: Sequence[Optional[float]]) -> "MultiFidelityData":
        """
        Append one point to levels 1..len(values)

        Levels whose design already holds the point keep their stored value.
        """
        point = np.asarray(point, dtype=float).ravel()
        designs, outputs = list(self.designs), list(self.outputs)
        for l, value in enumerate(values, start=1):
            if self.contains(l, point):
                continue
            if value is None:
                raise ArgumentError(f"Missing output for new level-{l} point")
            designs[l - 1] = np.vstack([designs[l - 1], point])
            outputs[l - 1] = np.append(outputs[l - 1], float(value))
        return MultiFidelityData(tuple(designs), tuple(outputs))

    def to_dict(self) -> Dict[str, Any]:
        return {"designs": [d.tolist() for d in self.designs],
                "outputs": [y.tolist() for y in self.outputs]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MultiFidelityData":
        return cls(tuple(np.asarray(d, dtype=float) for d in data["designs"]),
                   tuple(np.asarray(y, dtype=float) for y in data["outputs"]))


@dataclass(frozen=True, eq=False)
class LevelModel:
    """Level l >= 2 of the stack: GLS fit of y^l on H_l = [y^{l-1}(D^l), F_l]"""

    level: int
    design: np.ndarray
    outputs: np.ndarray
    coarse_outputs: np.ndarray
    trend: TrendBasis
    kernel: CorrelationKernel
    H: np.ndarray
    factors: GlsFactors

    @property
    def rho(self) -> float:
        return float(self.factors.coef[0])

    @property
    def beta_hat(self) -> np.ndarray:
        return self.factors.coef[1:]

    @property
    def sigma2_hat(self) -> float:
        return self.factors.sigma2

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

    def regressors(self, coarse_mean: np.ndarray, points: np.ndarray) -> np.ndarray:
        return np.column_stack([coarse_mean, self.trend.evaluate(points)])


@dataclass(frozen=True, eq=False)
class CokrigingModel:
    """Level 1 is a plain KrigingModel, levels 2..s are LevelModels"""

    base: KrigingModel
    upper: Tuple[LevelModel, ...] = ()

    @property
    def levels(self) -> int:
        return 1 + len(self.upper)

    @property
    def dim(self) -> int:
        return self.base.dim

    def rho(self, level: int) -> float:
        """rho_{l-1} multiplying level l - 1 inside level l; 0 for level 1"""
        return 0.0 if level == 1 else self.upper[level - 2].rho

    def theta(self, level: int) -> np.ndarray:
        return self.base.theta if level == 1 else self.upper[level - 2].theta

    def sigma2(self, level: int) -> float:
        return self.base.sigma2_hat if level == 1 else self.upper[level - 2].sigma2_hat

    def design(self, level: int) -> np.ndarray:
        return self.base.design if level == 1 else self.upper[level - 2].design

    def truncated(self, level: int) -> "CokrigingModel":
        return CokrigingModel(self.base, self.upper[:level - 1])


@dataclass(frozen=True, eq=False)
class LevelVarianceProfile:
    """
    Per-level bias variances at one point (or a batch, trailing axis)

    ``weighted[i]`` is sigma2_delta_i(x) times the product of squared scale
    factors from level i up to the top level.
    """

    bias: np.ndarray
    weighted: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.weighted.sum(axis=0)


def _check_level(model: CokrigingModel, level: Optional[int]) -> int:
    level = model.levels if level is None else int(level)
    if not 1 <= level <= model.levels:
        raise ArgumentError(f"Level {level} out of range 1..{model.levels}")
    return level


def _fit_level(level: int, design, outputs, coarse, trend: str, family: str, seed: int,
               theta=None, theta_bounds=None, starts=None) -> LevelModel:
    basis = TrendBasis(trend, design.shape[1])
    H = np.column_stack([coarse, basis.evaluate(design)])
    if design.shape[0] < H.shape[1] + 2:
        raise ArgumentError(f"Level {level} needs at least p + 3 = {H.shape[1] + 2} points, "
                            f"got {design.shape[0]}")
    if theta is None:
        kernel = estimate_theta(design, outputs, H, family, theta_bounds, seed, starts)
    else:
        kernel = CorrelationKernel(family, np.broadcast_to(np.asarray(theta, dtype=float),
                                                           (design.shape[1],)))
    factors = gls_factors(design, outputs, H, kernel)
    return LevelModel(level=level, design=design, outputs=outputs, coarse_outputs=coarse,
                      trend=basis, kernel=kernel, H=H, factors=factors)


def _per_level(value, levels: int, name: str) -> list:
    if value is None or isinstance(value, str):
        return [value] * levels
    value = list(value)
    if len(value) != levels:
        raise ArgumentError(f"Expected {levels} entries for {name}, got {len(value)}")
    return value


def fit_cokriging(data: MultiFidelityData, trends: Union[str, Sequence[str]] = "constant",
                  kernel_families: Union[str, Sequence[str]] = "squared-exponential",
                  seed: int = 0, thetas: Optional[Sequence] = None,
                  theta_bounds: Optional[Tuple[float, float]] = None,
                  starts: Optional[int] = None) -> CokrigingModel:
    """
    Fit the co-kriging stack level by level

    Args:
        data: nested multi-fidelity data
        trends: trend kind for every level, or one kind for all
        kernel_families: kernel family for every level, or one for all
        seed: master seed; level l uses derive_seed(seed, l)
        thetas: fixed length-scales per level (entries may be None)
        theta_bounds: length-scale bounds
        starts: likelihood multi-start count

    Returns:
        CokrigingModel with per-level rho, beta, sigma2 and theta
    """
    s = data.levels
    trends = _per_level(trends, s, "trends")
    families = _per_level(kernel_families, s, "kernel_families")
    thetas = [None] * s if thetas is None else _per_level(thetas, s, "thetas")

    base = fit_kriging(data.designs[0], data.outputs[0], trends[0], families[0],
                       theta_bounds=theta_bounds, seed=derive_seed(seed, 1), theta=thetas[0], starts=starts)
    upper = []
    for level in range(2, s + 1):
        upper.append(_fit_level(level, data.designs[level - 1], data.outputs[level - 1],
                                data.coarse_outputs(level), trends[level - 1], families[level - 1],
                                derive_seed(seed, level), thetas[level - 1], theta_bounds, starts))
        logger.debug("Fitted co-kriging level {} rho={:.4g} sigma2={:.4g}",
                     level, upper[-1].rho, upper[-1].sigma2_hat)
    return CokrigingModel(base=base, upper=tuple(upper))


def _walk(model: CokrigingModel, points: np.ndarray, level: int):
    """Means and bias variances of levels 1..level at a batch of points"""
    base = model.base
    f = base.trend.evaluate(points)
    mean = gls_mean(base.factors, base.design, base.kernel, points, f)
    means = [mean]
    bias = [gls_variance(base.factors, base.design, base.F, base.kernel, points, f)]
    for lm in model.upper[:level - 1]:
        h = lm.regressors(means[-1], points)
        means.append(gls_mean(lm.factors, lm.design, lm.kernel, points, h))
        bias.append(gls_variance(lm.factors, lm.design, lm.H, lm.kernel, points, h))
    return means, bias


def _weights(model: CokrigingModel, level: int) -> np.ndarray:
    """Product of squared scale factors from level i + 1 up to ``level``"""
    weights = np.ones(level)
    for i in range(level - 1):
        for j in range(i + 2, level + 1):
            weights[i] *= model.rho(j) ** 2
    return weights


def mf_predict_mean(model: CokrigingModel, x, level: Optional[int] = None):
    """Co-kriging mean mu^l(x)"""
    level = _check_level(model, level)
    points, single = _as_points(x, model.dim)
    mean = _walk(model, points, level)[0][-1]
    return float(mean[0]) if single else mean


def level_variance(model: CokrigingModel, x, level: int):
    """Bias variance sigma2_delta_l(x)"""
    level = _check_level(model, level)
    points, single = _as_points(x, model.dim)
    var = _walk(model, points, level)[1][-1]
    return float(var[0]) if single else var


def variance_decomposition(model: CokrigingModel, x, level: Optional[int] = None) -> LevelVarianceProfile:
    """Bias variances of levels 1..l and their weighted contributions to k^l(x, x)"""
    level = _check_level(model, level)
    points, single = _as_points(x, model.dim)
    bias = np.vstack(_walk(model, points, level)[1])
    weighted = bias * _weights(model, level)[:, None]
    if single:
        return LevelVarianceProfile(bias=bias[:, 0], weighted=weighted[:, 0])
    return LevelVarianceProfile(bias=bias, weighted=weighted)


def mf_predict_var(model: CokrigingModel, x, level: Optional[int] = None):
    """Co-kriging variance k^l(x, x) = rho_{l-1}^2 k^{l-1}(x, x) + sigma2_delta_l(x)"""
    profile = variance_decomposition(model, x, level)
    total = profile.total
    return float(total) if np.ndim(total) == 0 else total


@dataclass(frozen=True, eq=False)
class MfLoocvDiagnostics:
    """
    Multi-level LOO quantities, one array per level over the points of D^l

    ``error_increments[l]`` is the part of the level-l LOO error explained by
    delta^l, ``variance_increments[l]`` the matching variance term.
    """

    errors: Tuple[np.ndarray, ...]
    variances: Tuple[np.ndarray, ...]
    error_increments: Tuple[np.ndarray, ...]
    variance_increments: Tuple[np.ndarray, ...]
    ratios: Tuple[np.ndarray, ...]

    @property
    def levels(self) -> int:
        return len(self.errors)


def _level_loo(model: CokrigingModel, level: int, prev_errors: Optional[np.ndarray],
               prev_variances: Optional[np.ndarray], coarse_index: Optional[np.ndarray]):
    """LOO errors, variances and their increments of one level for every point"""
    if level == 1:
        base = model.base
        terms = loo_terms(base.R_inv, base.F, base.outputs, base.nugget)
        increments = np.array([t.error for t in terms])
        var_increments = np.array([t.variance for t in terms])
        return increments, var_increments, increments, var_increments

    lm = model.upper[level - 2]
    errors = np.empty(lm.n)
    variances = np.empty(lm.n)
    increments = np.empty(lm.n)
    var_increments = np.empty(lm.n)
    for i in range(lm.n):
        term = loo_term(lm.R_inv, lm.H, lm.outputs, lm.nugget, i)
        coarse_error = prev_errors[coarse_index[i]]
        rho = float(term.coef[0])
        # The deleted model sees the coarse LOO mean, not the observed coarse value
        u = term.u.copy()
        u[0] -= coarse_error
        increments[i] = term.error
        var_increments[i] = term.sigma2 * (term.base + float(u @ term.coef_cov @ u))
        errors[i] = rho * coarse_error + term.error
        variances[i] = rho ** 2 * prev_variances[coarse_index[i]] + var_increments[i]
    return errors, variances, increments, var_increments


def mf_loocv_diagnostics(model: CokrigingModel) -> MfLoocvDiagnostics:
    """Closed-form delete-from-all-levels LOO diagnostics of every level"""
    errors, variances, err_inc, var_inc, ratios = [], [], [], [], []
    for level in range(1, model.levels + 1):
        coarse_index = None
        if level > 1:
            coarse_index = _match_rows(model.design(level), model.design(level - 1))
            if np.any(coarse_index < 0):
                raise NestingError(f"Level {level} design is not nested in level {level - 1}")
        e, v, de, dv = _level_loo(model, level, errors[-1] if errors else None,
                                  variances[-1] if variances else None, coarse_index)
        bad = np.flatnonzero(~(dv > 0.0))
        if bad.size:
            raise DiagnosticsError(f"LOO variance increment {dv[bad[0]]:.3e} is not positive",
                                   level=level, index=int(bad[0]))
        errors.append(e)
        variances.append(v)
        err_inc.append(de)
        var_inc.append(dv)
        ratios.append(ratio_from(de ** 2, dv, level=level))
    return MfLoocvDiagnostics(tuple(errors), tuple(variances), tuple(err_inc), tuple(var_inc), tuple(ratios))


def mf_loocv_error(model: CokrigingModel, level: int, i: int) -> float:
    """LOO error (observed minus predicted) of point i of D^l, removed from all levels"""
    level = _check_level(model, level)
    diag = mf_loocv_diagnostics(model.truncated(level))
    if not 0 <= i < diag.errors[-1].size:
        raise ArgumentError(f"LOO index {i} out of range for level {level}")
    return float(diag.errors[-1][i])


def mf_loocv_var(model: CokrigingModel, level: int, i: int) -> float:
    """LOO predictive variance of point i of D^l, removed from all levels"""
    level = _check_level(model, level)
    diag = mf_loocv_diagnostics(model.truncated(level))
    if not 0 <= i < diag.variances[-1].size:
        raise ArgumentError(f"LOO index {i} out of range for level {level}")
    return float(diag.variances[-1][i])


def mf_liar_condition(model: CokrigingModel, x_new, level: int) -> CokrigingModel:
    """
    Condition levels 1..level on new points with fantasized outputs

    Fantasized outputs are the current means of each level; the coarse column
    of the new H rows holds the coarse fantasy. Parameters stay frozen.

    Returns:
        A model truncated to ``level`` levels
    """
    level = _check_level(model, level)
    points, _ = _as_points(x_new, model.dim)
    if points.shape[0] == 0:
        return model.truncated(level)
    means, _ = _walk(model, points, level)

    base = liar_condition(model.base, points)
    upper = []
    for lm in model.upper[:level - 1]:
        check_new_points(lm.design, points)
        coarse_new = means[lm.level - 2]
        design = np.vstack([lm.design, points])
        outputs = np.concatenate([lm.outputs, means[lm.level - 1]])
        coarse = np.concatenate([lm.coarse_outputs, coarse_new])
        H = np.vstack([lm.H, lm.regressors(coarse_new, points)])
        factors = gls_factors(design, outputs, H, lm.kernel, coef=lm.factors.coef,
                              sigma2=lm.sigma2_hat, nugget_start=lm.nugget)
        upper.append(LevelModel(level=lm.level, design=design, outputs=outputs, coarse_outputs=coarse,
                                trend=lm.trend, kernel=lm.kernel, H=H, factors=factors))
    return CokrigingModel(base=base, upper=tuple(upper))


def cokriging_to_dict(model: CokrigingModel) -> Dict[str, Any]:
    """Kriging record of level 1 plus one block per upper level"""
    blocks = []
    for lm in model.upper:
        blocks.append({
            "level": lm.level,
            "design": lm.design.tolist(),
            "outputs": lm.outputs.tolist(),
            "coarse_outputs": lm.coarse_outputs.tolist(),
            "trend": lm.trend.kind,
            "kernel_family": lm.kernel.family,
            "theta": lm.kernel.theta.tolist(),
            "rho": lm.rho,
            "beta_hat": lm.beta_hat.tolist(),
            "sigma2_hat": lm.sigma2_hat,
            "nugget": lm.nugget,
        })
    return {"format_version": FORMAT_VERSION, "kind": "cokriging",
            "base": model_to_dict(model.base), "levels": blocks}


def cokriging_from_dict(data: Dict[str, Any]) -> CokrigingModel:
    if data.get("kind") != "cokriging" or data.get("format_version") != FORMAT_VERSION:
        raise ArgumentError(f"Unsupported model record: kind={data.get('kind')} "
                            f"format_version={data.get('format_version')}")
    base = model_from_dict(data["base"])
    upper = []
    for block in data["levels"]:
        design, outputs = check_design(block["design"], block["outputs"])
        coarse = np.asarray(block["coarse_outputs"], dtype=float)
        basis = TrendBasis(block["trend"], design.shape[1])
        kernel = CorrelationKernel(block["kernel_family"], block["theta"])
        H = np.column_stack([coarse, basis.evaluate(design)])
        coef = np.concatenate([[block["rho"]], block["beta_hat"]])
        factors = gls_factors(design, outputs, H, kernel, coef=coef, sigma2=float(block["sigma2_hat"]),
                              nugget_start=float(block["nugget"]))
        upper.append(LevelModel(level=int(block["level"]), design=design, outputs=outputs,
                                coarse_outputs=coarse, trend=basis, kernel=kernel, H=H, factors=factors))
    return CokrigingModel(base=base, upper=tuple(upper))

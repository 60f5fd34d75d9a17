# pipeline/fitting.py

"""
Cycle-Curve Fitting
-------------------
Fits the per-phase metric curve of one cardiac cycle with either a fourth-degree
polynomial or a Gaussian Process, picks end-diastole (curve maximum) and
end-systole (curve minimum), and turns the selected phases into an ejection
fraction.

Both fits work on the phase axis mapped affinely to [0, 1]. The GP additionally
standardizes its targets (zero mean, unit variance; constant targets are only
centred), uses a ConstantKernel * RBF prior and chooses the two kernel
hyperparameters by maximizing the log marginal likelihood from several starts.
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel

from pipeline.cycle import CycleSeries, MetricKind
from pipeline.errors import DegenerateCycleError, DomainError, GPFitError, UnderdeterminedFitError

logger = logging.getLogger("ventriq.fitting")

CURVE_GRID_SIZE = 512
DEFAULT_RESTARTS = 8
# Side length of the log-spaced hyperparameter grid seeding the optimizer.
SEED_GRID_SIZE = 20
_BOUND_TOL = 1e-9


class FitMethod(str, Enum):
    GP = "gp"
    POLY4 = "poly4"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.lower() == "poly":
            return cls.POLY4
        return None


# --- Phase axis ---

def _phase_range(phases: Sequence[int]) -> Tuple[float, float]:
    lo, hi = float(min(phases)), float(max(phases))
    if hi == lo:
        raise DomainError("All phases are equal; the phase axis cannot be normalized")
    return lo, hi


def _normalize(x, lo: float, hi: float) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)


# --- Polynomial ---

@dataclass(frozen=True, eq=False)
class Poly4Model:
    """P(x) = c0 + c1 x + ... + c4 x^4 with x the phase mapped to [0, 1]."""
    coefficients: np.ndarray
    x_min: float
    x_max: float

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if coefficients.shape != (5,) or not np.all(np.isfinite(coefficients)):
            raise DomainError("A quartic needs exactly 5 finite coefficients")
        object.__setattr__(self, "coefficients", coefficients)

    def evaluate(self, phases) -> np.ndarray:
        x = _normalize(phases, self.x_min, self.x_max)
        return np.polynomial.polynomial.polyval(x, self.coefficients)


def fit_poly4(series: CycleSeries) -> Poly4Model:
    """Least-squares quartic through the series (SVD-based solve, not normal equations)."""
    if len(set(series.phases)) < 5:
        raise UnderdeterminedFitError(
            f"A fourth-degree polynomial needs >= 5 distinct phases, got {len(set(series.phases))}")
    lo, hi = _phase_range(series.phases)
    x = _normalize(series.phases, lo, hi)
    coefficients = np.polynomial.polynomial.polyfit(x, series.values, 4)
    return Poly4Model(coefficients, lo, hi)


# --- Gaussian Process ---

@dataclass(frozen=True)
class GPHyper:
    amplitude: float = 0.1
    length_scale: float = 0.5
    jitter: float = 1e-10
    amplitude_bounds: Tuple[float, float] = (0.1, 10.0)
    length_scale_bounds: Tuple[float, float] = (0.1, 10.0)

    def __post_init__(self):
        for name, bounds in (("amplitude", self.amplitude_bounds), ("length_scale", self.length_scale_bounds)):
            lo, hi = bounds
            value = getattr(self, name)
            if not (0 < lo <= hi):
                raise DomainError(f"Invalid {name} bounds {bounds}")
            if not (lo * (1 - _BOUND_TOL) <= value <= hi * (1 + _BOUND_TOL)):
                raise DomainError(f"{name}={value} lies outside its bounds {bounds}")
        if not self.jitter >= 0:
            raise DomainError(f"Jitter must be >= 0, got {self.jitter}")

    def with_values(self, amplitude: float, length_scale: float) -> "GPHyper":
        return GPHyper(amplitude, length_scale, self.jitter, self.amplitude_bounds, self.length_scale_bounds)


def build_kernel(hyper: GPHyper, fixed: bool = False):
    """ConstantKernel(c) * RBF(l), optionally with frozen hyperparameters."""
    amplitude_bounds = "fixed" if fixed else hyper.amplitude_bounds
    length_bounds = "fixed" if fixed else hyper.length_scale_bounds
    return (ConstantKernel(constant_value=hyper.amplitude, constant_value_bounds=amplitude_bounds)
            * RBF(length_scale=hyper.length_scale, length_scale_bounds=length_bounds))


def gp_kernel(x: float, x2: float, hyper: GPHyper) -> float:
    """c * exp(-d(x, x')^2 / (2 l^2))."""
    kernel = build_kernel(hyper, fixed=True)
    return float(kernel(np.array([[float(x)]]), np.array([[float(x2)]]))[0, 0])


def gp_log_marginal_likelihood(x: Sequence[float], y: Sequence[float], hyper: GPHyper) -> float:
    """
    -1/2 y^T (K + aI)^-1 y - 1/2 log det(K + aI) - n/2 log(2 pi), for targets already
    standardized by the caller.
    """
    X = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) < 1 or len(X) != len(y):
        raise DomainError("Log marginal likelihood needs >= 1 point and one target per input")
    regressor = GaussianProcessRegressor(kernel=build_kernel(hyper, fixed=True), alpha=hyper.jitter,
                                         optimizer=None, normalize_y=False)
    try:
        regressor.fit(X, y)
    except np.linalg.LinAlgError as e:
        raise GPFitError(f"K + alpha*I is not positive definite for amplitude={hyper.amplitude}, "
                         f"length_scale={hyper.length_scale}, jitter={hyper.jitter}: {e}") from e
    return float(regressor.log_marginal_likelihood_value_)


class MultiStartOptimizer:
    """
    Optimizer plug-in for GaussianProcessRegressor.

    Evaluates a log-spaced grid over the bounds, then runs L-BFGS-B from the
    initial hyperparameters, from `restarts` seeded uniform draws in log space and
    from the best grid point. The lowest objective wins; ties go to the earliest
    start, and the grid point itself stays a candidate.
    """

    def __init__(self, restarts: int = DEFAULT_RESTARTS, seed: int = 0, grid_size: int = SEED_GRID_SIZE):
        self.restarts = int(restarts)
        self.seed = int(seed)
        self.grid_size = int(grid_size)

    def __call__(self, obj_func, initial_theta, bounds):
        bounds = np.asarray(bounds, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        starts = [np.asarray(initial_theta, dtype=np.float64)]
        starts += [rng.uniform(bounds[:, 0], bounds[:, 1]) for _ in range(self.restarts)]

        axes = [np.linspace(lo, hi, self.grid_size) for lo, hi in bounds]
        grid_best = (np.inf, None)
        for theta in itertools.product(*axes):
            theta = np.asarray(theta)
            value = obj_func(theta, eval_gradient=False)
            if value < grid_best[0]:
                grid_best = (value, theta)
        candidates = []
        if grid_best[1] is not None:
            starts.append(grid_best[1])

        for i, x0 in enumerate(starts):
            try:
                result = optimize.minimize(obj_func, x0, method="L-BFGS-B", jac=True, bounds=bounds)
            except (np.linalg.LinAlgError, ValueError) as e:
                logger.warning(f"GP optimizer start {i} failed: {e}")
                continue
            if np.isfinite(result.fun):
                candidates.append((float(result.fun), i, np.clip(result.x, bounds[:, 0], bounds[:, 1])))
        if grid_best[1] is not None and np.isfinite(grid_best[0]):
            candidates.append((float(grid_best[0]), len(starts), grid_best[1]))
        if not candidates:
            raise GPFitError("Every GP optimizer start failed")

        value, index, theta = min(candidates, key=lambda c: (c[0], c[1]))
        logger.debug(f"GP optimizer: best start {index} of {len(starts)}, -LML={value:.6g}")
        return theta, value


@dataclass(frozen=True, eq=False)
class GPModel:
    hyper: GPHyper
    x_min: float
    x_max: float
    train_x: np.ndarray
    train_y: np.ndarray
    y_mean: float
    y_std: float
    log_marginal_likelihood: float
    regressor: GaussianProcessRegressor = field(repr=False)

    def evaluate(self, phases) -> np.ndarray:
        mean, _ = gp_predict_many(self, phases)
        return mean


def gp_fit(
    series: CycleSeries,
    init: Optional[GPHyper] = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> GPModel:
    init = init or GPHyper()
    if len(series.phases) < 3:
        raise UnderdeterminedFitError(f"A GP fit needs >= 3 phases, got {len(series.phases)}")
    lo, hi = _phase_range(series.phases)
    x = _normalize(series.phases, lo, hi).reshape(-1, 1)
    y_mean = float(series.values.mean())
    y_std = float(series.values.std())
    if y_std == 0:
        y_std = 1.0
    y = (series.values - y_mean) / y_std

    regressor = GaussianProcessRegressor(
        kernel=build_kernel(init), alpha=init.jitter,
        optimizer=MultiStartOptimizer(restarts, seed), n_restarts_optimizer=0, normalize_y=False)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            regressor.fit(x, y)
    except np.linalg.LinAlgError as e:
        raise GPFitError(f"GP fit failed with jitter={init.jitter}: {e}") from e

    fitted = regressor.kernel_
    hyper = init.with_values(float(fitted.k1.constant_value), float(fitted.k2.length_scale))
    lml = float(regressor.log_marginal_likelihood_value_)
    if not np.isfinite(lml):
        raise GPFitError(f"Non-finite log marginal likelihood at amplitude={hyper.amplitude}, "
                         f"length_scale={hyper.length_scale}")
    logger.debug(f"GP fit: amplitude={hyper.amplitude:.4g}, length_scale={hyper.length_scale:.4g}, LML={lml:.6g}")
    return GPModel(hyper, lo, hi, x.ravel(), y, y_mean, y_std, lml, regressor)


def gp_predict_many(model: GPModel, phases) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at raw phase positions, in the units of the series."""
    xs = _normalize(np.atleast_1d(phases), model.x_min, model.x_max).reshape(-1, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        mean, std = model.regressor.predict(xs, return_std=True)
    mean = model.y_mean + model.y_std * mean
    variance = np.maximum(model.y_std ** 2 * std ** 2, 0.0)
    return mean, variance


def gp_predict(model: GPModel, x: float) -> Tuple[float, float]:
    mean, variance = gp_predict_many(model, [x])
    return float(mean[0]), float(variance[0])


# --- Phase selection and EF ---

CurveModel = Union[Poly4Model, GPModel]


def fit_curve(
    series: CycleSeries,
    method: FitMethod,
    hyper: Optional[GPHyper] = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> CurveModel:
    if FitMethod(method) is FitMethod.POLY4:
        return fit_poly4(series)
    return gp_fit(series, hyper, restarts, seed)


@dataclass(frozen=True, eq=False)
class PhaseSelection:
    ed_phase: int
    es_phase: int
    ed_value: float
    es_value: float
    metric: MetricKind
    method: FitMethod
    curve_x: np.ndarray = field(repr=False)
    curve_y: np.ndarray = field(repr=False)
    # Unsnapped extremum locations and fitted values.
    ed_x: float = 0.0
    es_x: float = 0.0
    fitted_ed_value: float = 0.0
    fitted_es_value: float = 0.0
    model: Optional[CurveModel] = field(default=None, repr=False)

    def curve_rows(self):
        return [{"phase": float(x), "fitted": float(y)} for x, y in zip(self.curve_x, self.curve_y)]

    def to_dict(self) -> dict:
        return {
            "ed_phase": self.ed_phase,
            "es_phase": self.es_phase,
            "ed_value": self.ed_value,
            "es_value": self.es_value,
            "metric": self.metric.value,
            "method": self.method.value,
            "fitted_ed_phase": self.ed_x,
            "fitted_es_phase": self.es_x,
            "fitted_ed_value": self.fitted_ed_value,
            "fitted_es_value": self.fitted_es_value,
        }


def _snap(phases: Tuple[int, ...], x: float) -> int:
    distances = np.abs(np.asarray(phases, dtype=np.float64) - x)
    return phases[int(np.argmin(distances))]


def select_phases(
    series: CycleSeries,
    method: FitMethod = FitMethod.GP,
    hyper: Optional[GPHyper] = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    grid_size: int = CURVE_GRID_SIZE,
) -> PhaseSelection:
    """
    ED/ES from the fitted curve sampled on a uniform grid over the phase range.
    The extrema are snapped to the nearest acquired phase (earlier grid point and
    earlier phase win ties); reported values are the observed series values there.
    """
    method = FitMethod(method)
    if np.ptp(series.values) == 0:
        raise DegenerateCycleError(f"degenerate cycle: constant {series.metric.value} series")
    model = fit_curve(series, method, hyper, restarts, seed)
    lo, hi = _phase_range(series.phases)
    curve_x = np.linspace(lo, hi, grid_size)
    curve_y = model.evaluate(curve_x)

    i_max, i_min = int(np.argmax(curve_y)), int(np.argmin(curve_y))
    ed_phase, es_phase = _snap(series.phases, curve_x[i_max]), _snap(series.phases, curve_x[i_min])
    if ed_phase == es_phase:
        raise DegenerateCycleError(
            f"degenerate cycle: ED and ES both snap to phase {ed_phase} ({series.metric.value}, {method.value})")

    selection = PhaseSelection(
        ed_phase=ed_phase, es_phase=es_phase,
        ed_value=series.value_at(ed_phase), es_value=series.value_at(es_phase),
        metric=series.metric, method=method, curve_x=curve_x, curve_y=curve_y,
        ed_x=float(curve_x[i_max]), es_x=float(curve_x[i_min]),
        fitted_ed_value=float(curve_y[i_max]), fitted_es_value=float(curve_y[i_min]),
        model=model,
    )
    logger.info(f"Selected ED phase {ed_phase}, ES phase {es_phase} ({series.metric.value}, {method.value})")
    return selection


@dataclass(frozen=True)
class EFResult:
    ef_percent: float
    v_ed: float
    v_es: float
    ed_phase: int
    es_phase: int
    metric: MetricKind
    method: FitMethod

    def to_dict(self) -> dict:
        return {
            "ef_percent": self.ef_percent,
            "v_ed_mm3": self.v_ed,
            "v_es_mm3": self.v_es,
            "ed_phase": self.ed_phase,
            "es_phase": self.es_phase,
            "metric": self.metric.value,
            "method": self.method.value,
        }


def ejection_fraction(v_ed: float, v_es: float) -> float:
    if v_ed <= 0:
        raise DomainError(f"End-diastolic volume must be positive, got {v_ed}")
    return 100.0 * (v_ed - v_es) / v_ed


def estimate_ef(volume_series: CycleSeries, selection: PhaseSelection) -> EFResult:
    """EF from the observed volumes at the selected phases, whatever metric chose them."""
    if volume_series.metric is not MetricKind.VOLUME:
        raise DomainError(f"EF needs a volume series, got {volume_series.metric.value}")
    v_ed = volume_series.value_at(selection.ed_phase)
    v_es = volume_series.value_at(selection.es_phase)
    return EFResult(ejection_fraction(v_ed, v_es), v_ed, v_es,
                    selection.ed_phase, selection.es_phase, selection.metric, selection.method)


def estimate_ef_interpolated(
    volume_series: CycleSeries,
    selection: PhaseSelection,
    hyper: Optional[GPHyper] = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> float:
    """EF from the fitted volume curve at the unsnapped ED/ES instants."""
    if volume_series.metric is not MetricKind.VOLUME:
        raise DomainError(f"EF needs a volume series, got {volume_series.metric.value}")
    if selection.metric is MetricKind.VOLUME and selection.model is not None:
        model = selection.model
    else:
        model = fit_curve(volume_series, selection.method, hyper, restarts, seed)
    v_ed, v_es = model.evaluate([selection.ed_x, selection.es_x])
    return ejection_fraction(float(v_ed), float(v_es))

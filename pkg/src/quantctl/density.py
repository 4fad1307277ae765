"""One-dimensional probability densities on uniform grids.

A :class:`GriddedDensity` is piecewise constant: ``values[j]`` is the density
on ``[lo + j*step, lo + (j+1)*step)``. All integrals are exact for that model,
which keeps quantizer design continuous in the cell boundaries. Densities are
immutable; every operation returns a new one.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

from quantctl._backend import core
from quantctl.errors import DegenerateTransformError, EmptyCellError, InvalidParameterError

DEFAULT_POINTS = 2**14
DEFAULT_TAIL = 1e-12
LOG_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class GriddedDensity:
    lo: float
    step: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise InvalidParameterError("values must be a non-empty 1-D array")
        if not (self.step > 0 and np.isfinite(self.step) and np.isfinite(self.lo)):
            raise InvalidParameterError(f"bad grid: lo={self.lo}, step={self.step}")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise InvalidParameterError("density values must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "values", vals)

    @classmethod
    def _trusted(cls, lo, step, values):
        # skips validation; for kernel outputs that are nonnegative by construction
        obj = object.__new__(cls)
        values = np.asarray(values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(obj, "lo", float(lo))
        object.__setattr__(obj, "step", float(step))
        object.__setattr__(obj, "values", values)
        return obj

    def __len__(self):
        return self.values.shape[0]

    @property
    def hi(self):
        return self.lo + self.step * len(self)

    @property
    def support(self):
        return (self.lo, self.hi)

    @property
    def mass(self):
        return float(self.values.sum() * self.step)

    @property
    def edges(self):
        return self.lo + self.step * np.arange(len(self) + 1)

    @property
    def midpoints(self):
        return self.lo + self.step * (np.arange(len(self)) + 0.5)

    @cached_property
    def _moments(self):
        mass, mean, var = core.cell_stats(self.values, self.lo, self.step, np.array([self.lo, self.hi]))
        return float(mean[0]), float(var[0])

    @property
    def mean(self):
        return self._moments[0]

    @property
    def variance(self):
        return self._moments[1]

    @cached_property
    def _cdf_edges(self):
        return core.cdf_edges(self.values, self.step)

    def cdf(self, x):
        return np.interp(x, self.edges, self._cdf_edges)

    def quantile(self, u):
        """Inverse CDF; ``u`` is a probability (scalar or array)."""
        out = core.quantiles(self.values, self.lo, self.step, np.atleast_1d(u))
        return float(out[0]) if np.ndim(u) == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        j = np.floor((x - self.lo) / self.step).astype(np.intp)
        inside = (j >= 0) & (j < len(self))
        out = np.zeros(x.shape)
        out[inside] = self.values[j[inside]]
        return out

    def normalized(self):
        m = self.mass
        if m <= 0:
            raise EmptyCellError("density has zero mass")
        return GriddedDensity._trusted(self.lo, self.step, self.values / m)


def from_pdf(pdf, lo, hi, points=DEFAULT_POINTS):
    """Sample ``pdf`` at cell midpoints of a uniform grid on ``[lo, hi]``."""
    if not hi > lo:
        raise InvalidParameterError("need hi > lo")
    step = (hi - lo) / points
    mids = lo + step * (np.arange(points) + 0.5)
    vals = np.asarray(pdf(mids), dtype=np.float64)
    return GriddedDensity(lo, step, vals).normalized()


def from_gaussian(mean, variance, tail_mass=DEFAULT_TAIL, points=DEFAULT_POINTS):
    if not variance > 0:
        raise InvalidParameterError(f"variance must be positive, got {variance}")
    if not 0 < tail_mass < 1e-3:
        raise InvalidParameterError("tail_mass must lie in (0, 1e-3)")
    sigma = np.sqrt(variance)
    z = stats.norm.isf(tail_mass / 2)
    return from_pdf(lambda x: stats.norm.pdf(x, mean, sigma), mean - z * sigma, mean + z * sigma, points)


def from_uniform(a, b, points=DEFAULT_POINTS):
    if not b > a:
        raise InvalidParameterError("need b > a")
    return GriddedDensity(a, (b - a) / points, np.full(points, 1.0 / (b - a)))


def from_laplace(mu, scale, tail_mass=DEFAULT_TAIL, points=DEFAULT_POINTS):
    if not scale > 0:
        raise InvalidParameterError("scale must be positive")
    z = -scale * np.log(tail_mass)
    return from_pdf(lambda x: np.exp(-np.abs(x - mu) / scale) / (2 * scale), mu - z, mu + z, points)


def from_exponential(rate, tail_mass=DEFAULT_TAIL, points=DEFAULT_POINTS):
    if not rate > 0:
        raise InvalidParameterError("rate must be positive")
    return from_pdf(lambda x: rate * np.exp(-rate * x), 0.0, -np.log(tail_mass) / rate, points)


_FAMILIES = {
    "gaussian": (from_gaussian, 2),
    "normal": (from_gaussian, 2),
    "uniform": (from_uniform, 2),
    "laplace": (from_laplace, 2),
    "exponential": (from_exponential, 1),
}


def from_spec(spec, points=DEFAULT_POINTS, tail_mass=DEFAULT_TAIL):
    """Parse ``family:p1,p2`` (e.g. ``gaussian:0,1`` = mean 0, variance 1)."""
    name, _, args = spec.partition(":")
    name = name.strip().lower()
    if name not in _FAMILIES:
        raise InvalidParameterError(f"unknown density family {name!r}; expected one of {sorted(_FAMILIES)}")
    fn, nargs = _FAMILIES[name]
    try:
        params = [float(s) for s in args.split(",")] if args.strip() else []
    except ValueError as exc:
        raise InvalidParameterError(f"bad parameters in {spec!r}") from exc
    if len(params) != nargs:
        raise InvalidParameterError(f"{name} takes {nargs} parameter(s), got {len(params)}")
    if name == "uniform":
        return fn(*params, points=points)
    return fn(*params, tail_mass=tail_mass, points=points)


def affine(d, a, b):
    """Density of ``a*X + b``. Exact on the grid: only ``lo`` and ``step`` change."""
    if a == 0:
        raise DegenerateTransformError("affine gain must be nonzero")
    g = abs(a)
    if a > 0:
        return GriddedDensity._trusted(a * d.lo + b, g * d.step, d.values / g)
    return GriddedDensity._trusted(a * d.hi + b, g * d.step, d.values[::-1] / g)


def truncate_normalize(d, interval):
    """Condition ``d`` on ``interval``; returns ``(density, gamma)``.

    ``gamma`` is the probability of the interval. Grid cells cut by an endpoint
    keep only the covered fraction of their mass.
    """
    a, b = interval
    vals, lo, gamma = core.truncate(d.values, d.lo, d.step, float(a), float(b))
    if not gamma > 0:
        raise EmptyCellError(f"interval [{a}, {b}) has zero probability")
    return GriddedDensity._trusted(lo, d.step, vals), gamma


def rebin(d, step):
    """Resample onto spacing ``step`` (same left edge), keeping mass and log-concavity."""
    return GriddedDensity._trusted(d.lo, step, core.rebin(d.values, d.lo, d.step, step))


def convolve(d1, d2, tail_mass=DEFAULT_TAIL, max_points=DEFAULT_POINTS):
    """Density of ``X + Y`` for independent ``X ~ d1`` and ``Y ~ d2``.

    The input with the finer grid is rebinned onto the coarser spacing. The
    result is clipped to two-sided tail mass ``tail_mass`` and capped at
    ``max_points`` cells.
    """
    if abs(d1.step - d2.step) > 1e-12 * max(d1.step, d2.step):
        if d1.step < d2.step:
            d1 = rebin(d1, d2.step)
        else:
            d2 = rebin(d2, d1.step)
    vals, lo, step = core.convolve(d1.values, d1.lo, d2.values, d2.lo, d2.step, tail_mass, max_points)
    return GriddedDensity._trusted(lo, step, vals)


def _interval(d, interval):
    if interval is None:
        return d.lo, d.hi
    a, b = interval
    return max(float(a), d.lo), min(float(b), d.hi)


def _stats(d, interval):
    a, b = _interval(d, interval)
    if b <= a:
        return 0.0, float("nan"), 0.0
    mass, mean, var = core.cell_stats(d.values, d.lo, d.step, np.array([a, b]))
    return float(mass[0]), float(mean[0]), float(var[0])


def mass_on(d, interval=None):
    return _stats(d, interval)[0]


def mean_on(d, interval=None):
    """Conditional mean of ``d`` on the interval."""
    m, mu, _ = _stats(d, interval)
    if not m > 0:
        raise EmptyCellError(f"interval {interval} has zero probability")
    return mu


def second_moment_about(d, point, interval=None):
    """Unnormalized ``integral of (x - point)^2 d(x) dx`` over the interval."""
    m, mu, var = _stats(d, interval)
    if not m > 0:
        return 0.0
    return m * (var + (mu - point) ** 2)


def check_log_concavity(d, tol=1e-6):
    """True if log-values have second differences ``<= tol`` on the support.

    Samples below ``LOG_FLOOR`` count as zero; a zero strictly inside the
    positive region makes the density not log-concave.
    """
    pos = np.flatnonzero(d.values > LOG_FLOOR)
    if pos.size < 3:
        return True
    if pos[-1] - pos[0] + 1 != pos.size:
        return False
    logs = np.log(d.values[pos[0]:pos[-1] + 1])
    d2 = logs[:-2] - 2.0 * logs[1:-1] + logs[2:]
    return bool(np.all(d2 <= tol))

"""Regular scalar quantizers and Lloyd-Max design."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from quantctl._backend import core
from quantctl.density import GriddedDensity
from quantctl.errors import ConvergenceWarning, EmptyCellError, InvalidParameterError, InvalidQuantizerError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class ScalarQuantizer:
    """Partition levels ``p[0..K]`` and reproduction points ``c[0..K-1]``.

    Cell ``l`` is ``[p[l], p[l+1])``; the last cell is closed on the right.
    """

    levels: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.levels, dtype=np.float64)
        c = np.array(self.points, dtype=np.float64)
        if p.ndim != 1 or c.ndim != 1 or p.size != c.size + 1 or c.size == 0:
            raise InvalidQuantizerError("need len(levels) == len(points) + 1 >= 2")
        if np.any(np.diff(p) < 0):
            raise InvalidQuantizerError("partition levels must be non-decreasing")
        p.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "levels", p)
        object.__setattr__(self, "points", c)

    @property
    def cells(self):
        return self.points.shape[0]

    @property
    def rate(self):
        r = np.log2(self.cells)
        return int(r) if float(r).is_integer() else float(r)

    def encode(self, x):
        idx = np.searchsorted(self.levels[1:-1], x, side="right")
        return int(idx) if np.ndim(x) == 0 else idx

    def decode(self, index):
        if np.any(np.asarray(index) < 0) or np.any(np.asarray(index) >= self.cells):
            raise IndexError(f"index {index} outside [0, {self.cells})")
        out = self.points[index]
        return float(out) if np.ndim(out) == 0 else out

    def __call__(self, x):
        return self.points[self.encode(x)]

    def cell(self, index):
        return float(self.levels[index]), float(self.levels[index + 1])

    def cell_masses(self, d):
        mass, _, _ = core.cell_stats(d.values, d.lo, d.step, self.levels)
        return mass

    def is_regular(self):
        p, c = self.levels, self.points
        return bool(np.all(p[:-1] <= c) and np.all(c <= p[1:]) and np.all(np.diff(c) > 0))


def encode(q, x):
    return q.encode(x)


def decode(q, index):
    return q.decode(index)


def distortion(d, q):
    """Mean squared error ``E[(W - Q(W))^2]`` under ``d``."""
    mass, mean, var = core.cell_stats(d.values, d.lo, d.step, q.levels)
    pos = mass > 0
    return float(np.sum(mass[pos] * (var[pos] + (mean[pos] - q.points[pos]) ** 2)))


def centroid_step(d, levels):
    """Conditional means of the cells; raises :class:`EmptyCellError` on a massless cell."""
    mass, mean, _ = core.cell_stats(d.values, d.lo, d.step, np.asarray(levels, dtype=np.float64))
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise EmptyCellError(f"cell {empty[0]} has zero probability", cell=int(empty[0]))
    return mean


def nn_step(points, lo=None, hi=None):
    """Midpoint partition for fixed points; end levels pinned to ``lo``/``hi``."""
    c = np.asarray(points, dtype=np.float64)
    if np.any(np.diff(c) <= 0):
        raise InvalidQuantizerError("reproduction points must be strictly increasing")
    inner = 0.5 * (c[:-1] + c[1:])
    if lo is None and hi is None:
        return inner
    return np.concatenate([[lo], inner, [hi]])


@dataclass
class LloydMaxResult:
    quantizer: ScalarQuantizer
    distortion: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    repairs: int = 0


def quantile_levels(d, cells, lo=None, hi=None):
    """Equal-probability partition of ``[lo, hi]`` (default: the support)."""
    lo = d.lo if lo is None else lo
    hi = d.hi if hi is None else hi
    Flo, Fhi = d.cdf(lo), d.cdf(hi)
    probs = Flo + (Fhi - Flo) * np.arange(1, cells) / cells
    inner = d.quantile(probs) if cells > 1 else np.empty(0)
    return np.concatenate([[lo], inner, [hi]])


def _repair_empty(d, p, empty):
    """Delete the empty cell and split the highest-distortion cell at its centroid."""
    p = np.delete(p, empty + 1 if empty + 1 < p.size - 1 else empty)
    mass, mean, var = core.cell_stats(d.values, d.lo, d.step, p)
    worst = int(np.argmax(mass * var))
    return np.insert(p, worst + 1, mean[worst])


def lloyd_iterate(d, levels, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, record=False):
    """Run Lloyd-Max from ``levels`` with the outer two levels held fixed."""
    p = np.asarray(levels, dtype=np.float64)
    history = []
    total = 0
    repairs = 0
    while True:
        p, c, D, it, status, info, hist = core.lloyd(d.values, d.lo, d.step, p, tol, max_iter - total, record)
        total += it
        if record:
            history.extend(hist)
        if status != core.STATUS_EMPTY_CELL:
            break
        if p.size <= 2 or repairs > 4 * p.size:
            raise EmptyCellError(f"cell {info} stays empty after repair", cell=info)
        repairs += 1
        log.info("lloyd_max: repairing empty cell %d", info)
        p = _repair_empty(d, p, info)
    converged = status == core.STATUS_CONVERGED
    if not converged:
        warnings.warn(f"Lloyd-Max stopped after {total} iterations without meeting tol={tol}", ConvergenceWarning, stacklevel=3)
    return LloydMaxResult(ScalarQuantizer(p, c), D, total, converged, history, repairs)


def lloyd_max(d, rate=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, *, cells=None, init=None, record=False):
    """Design a minimum-MSE regular quantizer for ``d``.

    Give either ``rate`` (``2**rate`` cells) or ``cells``. Initialization is
    at equal-probability quantiles unless ``init`` supplies the levels.
    """
    if cells is None:
        if rate is None or rate < 0 or int(rate) != rate:
            raise InvalidParameterError(f"rate must be a nonnegative integer, got {rate}")
        cells = 2 ** int(rate)
    if cells < 1:
        raise InvalidParameterError("need at least one cell")
    if not isinstance(d, GriddedDensity):
        raise TypeError("d must be a GriddedDensity")
    if cells == 1:
        q = ScalarQuantizer([d.lo, d.hi], [d.mean])
        return LloydMaxResult(q, d.variance, 0, True, [d.variance] if record else [])
    p0 = quantile_levels(d, cells) if init is None else np.asarray(init, dtype=np.float64)
    return lloyd_iterate(d, p0, tol, max_iter, record)

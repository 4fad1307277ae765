"""Three-cell quantizers whose most likely cell is sent as silence.

The silent cell must carry probability at least ``delta``, so on average a
fraction ``delta`` of the time steps needs no transmission.
"""

import bisect
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from quantctl._backend import core
from quantctl.errors import (
    ConvergenceWarning,
    EmptyCellError,
    InfeasibleConstraintError,
    InvalidParameterError,
)
from quantctl.quantizer import DEFAULT_MAX_ITER, DEFAULT_TOL, ScalarQuantizer, lloyd_iterate, lloyd_max

TIE_TOL = 1e-12
STEP_TOL = 1e-9
ROOT_MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class SilentQuantizer:
    q: ScalarQuantizer
    silent_index: int
    delta: float
    distortion: float = float("nan")
    constrained: bool = False
    kkt_residual: float = None

    def __post_init__(self):
        if self.q.cells != 3:
            raise InvalidParameterError("a silent quantizer has exactly three cells")
        if self.silent_index not in (0, 1, 2):
            raise InvalidParameterError("silent_index must be 0, 1 or 2")

    @property
    def average_rate(self):
        return 1.0 - self.delta

    def encode(self, x):
        """Cell index, or ``None`` when ``x`` falls in the silent cell."""
        idx = self.q.encode(x)
        return None if idx == self.silent_index else idx

    def decode(self, symbol):
        return self.q.decode(self.silent_index if symbol is None else symbol)


@dataclass
class Candidate:
    quantizer: ScalarQuantizer
    distortion: float
    iterations: int = 0
    converged: bool = True
    kkt_active: bool = False
    kkt_residual: float = None

    def __iter__(self):
        yield self.quantizer
        yield self.distortion


def _check_delta(delta):
    if not 0.0 <= delta < 1.0:
        if delta >= 1.0:
            raise InfeasibleConstraintError(f"delta={delta} leaves no probability for the other cells")
        raise InvalidParameterError(f"delta must lie in [0, 1), got {delta}")


def _stats(d, p):
    return core.cell_stats(d.values, d.lo, d.step, p)


def _distortion_fixed(d, p, c):
    mass, mean, var = _stats(d, p)
    pos = mass > 0
    return float(np.sum(mass[pos] * (var[pos] + (mean[pos] - c[pos]) ** 2)))


def constrained_edge_candidate(d, delta, side, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Edge cell pinned to probability ``delta``; two-cell Lloyd-Max on the rest."""
    _check_delta(delta)
    if side not in ("left", "right"):
        raise InvalidParameterError("side must be 'left' or 'right'")
    if side == "left":
        cut = d.quantile(delta)
        rest = lloyd_iterate(d, [cut, d.quantile(0.5 * (1.0 + delta)), d.hi], tol, max_iter)
        edge = _stats(d, np.array([d.lo, cut]))[1][0]
        p = np.concatenate([[d.lo], rest.quantizer.levels])
        c = np.concatenate([[edge], rest.quantizer.points])
    else:
        cut = d.quantile(1.0 - delta)
        rest = lloyd_iterate(d, [d.lo, d.quantile(0.5 * (1.0 - delta)), cut], tol, max_iter)
        edge = _stats(d, np.array([cut, d.hi]))[1][0]
        p = np.concatenate([rest.quantizer.levels, [d.hi]])
        c = np.concatenate([rest.quantizer.points, [edge]])
    if not np.isfinite(edge):
        raise EmptyCellError(f"{side} edge cell is empty")
    q = ScalarQuantizer(p, c)
    return Candidate(q, _distortion_fixed(d, q.levels, q.points), rest.iterations, rest.converged)


def _kkt_affine(c):
    span = c[2] - c[1]
    return (c[0] - c[1]) / span, (c[2] ** 2 - c[0] ** 2) / (2.0 * span)


class _ScalarCdf:
    """Scalar CDF and inverse CDF of a gridded density, for root finding."""

    def __init__(self, d):
        self.d = d
        self.F = core.cdf_edges(d.values, d.step)
        self.Fl = self.F.tolist()
        self.total = self.F[-1]

    def cdf(self, x):
        d = self.d
        r = (x - d.lo) / d.step
        j = int(r)
        if r <= 0:
            return 0.0
        if j >= len(d):
            return self.total
        return self.Fl[j] + d.values[j] * d.step * (r - j)

    def quantile(self, u):
        # same convention as the vectorized core routine
        d = self.d
        u = min(u, 1.0) * self.total
        j = min(max(bisect.bisect_left(self.Fl, u) - 1, 0), len(d) - 1)
        dens = d.values[j]
        frac = (u - self.Fl[j]) / (dens * d.step) if dens > 0 else 0.0
        return d.lo + d.step * j + d.step * min(max(frac, 0.0), 1.0)


def _kkt_solve(d, c, delta, sc=None):
    """Boundaries ``(p1, p2)`` minimizing distortion for fixed ``c`` with middle mass ``delta``.

    Returns ``None`` when the affine stationarity line misses the constraint curve.
    """
    sc = _ScalarCdf(d) if sc is None else sc
    A, B = _kkt_affine(c)

    def resid(p1):
        return sc.quantile(sc.cdf(p1) + delta) - (A * p1 + B)

    lo, hi = d.lo, sc.quantile(1.0 - delta)
    rlo, rhi = resid(lo), resid(hi)
    if rlo > 0 or rhi < 0:
        return None
    if rlo == 0:
        p1 = lo
    elif rhi == 0:
        p1 = hi
    else:
        p1 = optimize.brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=ROOT_MAX_ITER)
    return p1, sc.quantile(sc.cdf(p1) + delta)


def kkt_residual(d, q, delta):
    """Largest violation of the two stationarity equations of the middle-cell problem."""
    p, c = q.levels, q.points
    A, B = _kkt_affine(c)
    mass_err = abs(d.cdf(p[2]) - d.cdf(p[1]) - delta)
    line_err = abs(p[2] - (A * p[1] + B))
    return float(max(mass_err, line_err))


def constrained_middle_candidate(d, delta, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Middle cell constrained to probability at least ``delta``."""
    _check_delta(delta)
    p = np.array([d.lo, d.quantile(0.5 * (1.0 - delta)), d.quantile(0.5 * (1.0 + delta)), d.hi])
    sc = _ScalarCdf(d)
    c = None
    prev = np.inf
    active = False
    it = 0
    converged = False
    while it < max_iter:
        mass, mean, var = _stats(d, p)
        if mass[1] <= 0:
            raise EmptyCellError("middle cell is empty", cell=1)
        # an edge cell emptied by the fallback keeps its previous point
        c = np.where(mass > 0, mean, c if c is not None else mean)
        D = float(np.sum(mass * var))
        it += 1
        dp = np.max(np.abs(p - p_old)) if it > 1 else np.inf
        if prev - D < tol and dp < STEP_TOL:
            converged = True
            break
        prev = D
        p_old = p.copy()
        p_nn = np.array([d.lo, 0.5 * (c[0] + c[1]), 0.5 * (c[1] + c[2]), d.hi])
        if sc.cdf(p_nn[2]) - sc.cdf(p_nn[1]) >= delta:
            p = p_nn
            active = False
            continue
        active = True
        sol = _kkt_solve(d, c, delta, sc)
        if sol is not None:
            p = np.array([d.lo, sol[0], sol[1], d.hi])
            continue
        left = np.array([d.lo, d.lo, d.quantile(delta), d.hi])
        right = np.array([d.lo, d.quantile(1.0 - delta), d.hi, d.hi])
        p = left if _distortion_fixed(d, left, c) <= _distortion_fixed(d, right, c) else right
    if not converged:
        warnings.warn(f"constrained middle-cell iteration stopped after {it} iterations", ConvergenceWarning, stacklevel=2)
    mass, mean, var = _stats(d, p)
    c = np.where(mass > 0, mean, c)
    q = ScalarQuantizer(p, c)
    resid = kkt_residual(d, q, delta) if active else None
    return Candidate(q, _distortion_fixed(d, p, c), it, converged, active, resid)


def _argmax_mass(mass):
    # deterministic tie handling: middle cell first, then the left cell
    best = float(np.max(mass))
    for idx in (1, 0, 2):
        if mass[idx] >= best - TIE_TOL:
            return idx
    return int(np.argmax(mass))


def min_cell_prob_quantizer(d, delta, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Minimum-distortion three-cell quantizer whose largest cell has probability >= ``delta``.

    ``delta = 0`` removes the constraint.
    """
    _check_delta(delta)
    base = lloyd_max(d, cells=3, tol=tol, max_iter=max_iter)
    mass = base.quantizer.cell_masses(d)
    if np.max(mass) >= delta:
        return SilentQuantizer(base.quantizer, _argmax_mass(mass), delta, base.distortion, False)

    candidates = {}
    for idx, make in (
        (0, lambda: constrained_edge_candidate(d, delta, "left", tol, max_iter)),
        (1, lambda: constrained_middle_candidate(d, delta, tol, max_iter)),
        (2, lambda: constrained_edge_candidate(d, delta, "right", tol, max_iter)),
    ):
        try:
            candidates[idx] = make()
        except EmptyCellError:
            continue
    if not candidates:
        raise InfeasibleConstraintError(f"no three-cell quantizer reaches cell probability {delta}")
    best = min(cand.distortion for cand in candidates.values())
    pick = next(i for i in (1, 0, 2) if i in candidates and candidates[i].distortion <= best + TIE_TOL)
    cand = candidates[pick]
    mass = cand.quantizer.cell_masses(d)
    return SilentQuantizer(cand.quantizer, _argmax_mass(mass), delta, cand.distortion, True, cand.kkt_residual)

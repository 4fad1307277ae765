"""Multi-resolution (successive refinement) scalar quantizers.

Stage ``t`` refines stage ``t-1`` by ``rates[t-1]`` extra bits. All stages are
induced by one finest partition: a stage-``t`` cell is a run of
``2**(rates[t] + ... + rates[T-1])`` contiguous finest cells. Stages are
numbered from 1 in the public functions.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from quantctl._backend import core
from quantctl.errors import (
    ConvergenceWarning,
    DegenerateCodebookError,
    EmptyCellError,
    InvalidParameterError,
    InvalidQuantizerError,
)
from quantctl.quantizer import DEFAULT_MAX_ITER, DEFAULT_TOL, ScalarQuantizer, quantile_levels

log = logging.getLogger(__name__)


def _shifts(rates):
    r = np.asarray(rates, dtype=np.int64)
    tail = np.concatenate([np.cumsum(r[::-1])[::-1][1:], [0]])
    return tail


def stage_index(ell, t, rates):
    """Stage-``t`` cell containing finest cell ``ell`` (``t`` counts from 1)."""
    shift = int(_shifts(rates)[t - 1])
    return np.right_shift(ell, shift)


@dataclass(frozen=True, eq=False)
class MultiResolutionQuantizer:
    rates: tuple
    finest_levels: np.ndarray
    stage_points: tuple

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        if not rates or min(rates) < 0:
            raise InvalidParameterError("rates must be a non-empty sequence of nonnegative integers")
        p = np.array(self.finest_levels, dtype=np.float64)
        if p.size != 2 ** sum(rates) + 1:
            raise InvalidQuantizerError(f"expected {2 ** sum(rates) + 1} finest levels, got {p.size}")
        if np.any(np.diff(p) < 0):
            raise InvalidQuantizerError("finest levels must be non-decreasing")
        pts = []
        for t, c in enumerate(self.stage_points):
            c = np.array(c, dtype=np.float64)
            if c.size != 2 ** sum(rates[: t + 1]):
                raise InvalidQuantizerError(f"stage {t + 1} needs {2 ** sum(rates[:t + 1])} points")
            c.setflags(write=False)
            pts.append(c)
        if len(pts) != len(rates):
            raise InvalidQuantizerError("one point set per stage is required")
        p.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "finest_levels", p)
        object.__setattr__(self, "stage_points", tuple(pts))

    @property
    def stages(self):
        return len(self.rates)

    @property
    def shifts(self):
        return _shifts(self.rates)

    def stage_levels(self, t):
        return self.finest_levels[:: 1 << int(self.shifts[t - 1])]

    def stage_quantizer(self, t):
        return ScalarQuantizer(self.stage_levels(t), self.stage_points[t - 1])

    def finest_index(self, w):
        idx = np.searchsorted(self.finest_levels[1:-1], w, side="right")
        return int(idx) if np.ndim(w) == 0 else idx

    def is_nested(self):
        for t in range(2, self.stages + 1):
            coarse = self.stage_levels(t - 1)
            fine = self.stage_levels(t)
            if not np.array_equal(fine[:: 1 << self.rates[t - 1]], coarse):
                return False
        return True


def mrsq_encode(mrsq, w):
    """Per-stage sub-indices ``(l_1, ..., l_T)``; stage ``t`` contributes ``rates[t-1]`` bits."""
    ell = mrsq.finest_index(w)
    shifts = mrsq.shifts
    out = [np.bitwise_and(np.right_shift(ell, int(s)), (1 << r) - 1) for s, r in zip(shifts, mrsq.rates)]
    if np.ndim(w) == 0:
        return tuple(int(x) for x in out)
    return np.stack(out, axis=-1)


def mrsq_decode(mrsq, prefix):
    """Stage-``len(prefix)`` reproduction point for a prefix of sub-indices."""
    prefix = list(prefix)
    t = len(prefix)
    if not 1 <= t <= mrsq.stages:
        raise IndexError(f"prefix length must be in [1, {mrsq.stages}]")
    idx = 0
    for sub, r in zip(prefix, mrsq.rates):
        if not 0 <= sub < (1 << r):
            raise IndexError(f"sub-index {sub} outside [0, {1 << r})")
        idx = (idx << r) | int(sub)
    return float(mrsq.stage_points[t - 1][idx])


def _alpha_beta(stage_points, weights, rates):
    n = 2 ** sum(rates)
    ell = np.arange(n)
    shifts = _shifts(rates)
    alpha = np.zeros(n)
    beta = np.zeros(n)
    for c, g, s in zip(stage_points, weights, shifts):
        ct = np.asarray(c)[ell >> int(s)]
        alpha += g * ct
        beta += g * ct * ct
    return alpha, beta


def weighted_nn(stage_points, weights, rates, lo, hi):
    """Finest partition minimizing the weighted error for fixed reproduction points.

    A value ``w`` goes to the finest cell minimizing ``beta_l - 2 w alpha_l``.
    Returns ``(levels, degenerate)`` where ``degenerate`` lists finest cells
    whose admissible interval is empty; they come back with zero width.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise InvalidParameterError("weights must be nonnegative")
    alpha, beta = _alpha_beta(stage_points, weights, rates)
    n = alpha.size
    if n == 1:
        return np.array([lo, hi]), np.empty(0, dtype=np.intp)
    if np.all(alpha == alpha[0]):
        raise DegenerateCodebookError("all weighted reproduction values coincide")
    da = np.diff(alpha)
    if np.all(da > 0):
        thr = np.diff(beta) / (2.0 * da)
        if np.all(np.diff(thr) > 0):
            levels = np.concatenate([[lo], np.clip(thr, lo, hi), [hi]])
            return levels, np.empty(0, dtype=np.intp)
    # general case: cells with smaller alpha bound cell l from below, larger alpha from above
    A = alpha[:, None] - alpha[None, :]
    Bm = beta[:, None] - beta[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        T = Bm / (2.0 * A)
    low = np.max(np.where(A > 0, T, -np.inf), axis=1)
    up = np.min(np.where(A < 0, T, np.inf), axis=1)
    # equal alpha: the larger beta (or later index on a tie) never wins
    idx = np.arange(n)
    beaten = (A == 0) & ((Bm > 0) | ((Bm == 0) & (idx[:, None] > idx[None, :])))
    low[np.any(beaten, axis=1)] = np.inf
    low = np.clip(low, lo, hi)
    up = np.clip(up, lo, hi)
    degenerate = np.flatnonzero(up <= low)
    # an empty cell collapses onto the left edge of the next surviving cell
    left = low.copy()
    left[degenerate] = hi
    left = np.minimum.accumulate(left[::-1])[::-1]
    levels = np.empty(n + 1)
    levels[0] = lo
    levels[1:n] = left[1:]
    levels[n] = hi
    return levels, degenerate


def weighted_distortion(d, mrsq, weights):
    """``(sum_t g_t D_t, [D_1, ..., D_T])`` with ``D_t = E[(W - Q_t(W))^2]``."""
    Ds = []
    for t in range(1, mrsq.stages + 1):
        mass, mean, var = core.cell_stats(d.values, d.lo, d.step, mrsq.stage_levels(t))
        c = mrsq.stage_points[t - 1]
        pos = mass > 0
        Ds.append(float(np.sum(mass[pos] * (var[pos] + (mean[pos] - c[pos]) ** 2))))
    Ds = np.array(Ds)
    return float(np.dot(np.asarray(weights, dtype=np.float64), Ds)), Ds


def _repair(d, p):
    """Give every massless finest cell half the probability of its larger neighbour."""
    p = p.copy()
    n = p.size - 1
    count = 0
    for _ in range(n):
        mass, _, _ = core.cell_stats(d.values, d.lo, d.step, p)
        bad = np.flatnonzero(mass <= 0)
        if bad.size == 0:
            break
        l = int(bad[0])
        left = mass[l - 1] if l > 0 else -1.0
        right = mass[l + 1] if l < n - 1 else -1.0
        if max(left, right) <= 0:
            raise EmptyCellError(f"cannot repair empty finest cell {l}", cell=l)
        if left >= right:
            # cell l-1 = [p[l-1], p[l]]: move p[l] to its probability median
            p[l] = d.quantile(0.5 * (d.cdf(p[l - 1]) + d.cdf(p[l])))
        else:
            p[l + 1] = d.quantile(0.5 * (d.cdf(p[l + 1]) + d.cdf(p[l + 2])))
        count += 1
    return p, count


def _resplit(d, p, degenerate):
    """Drop the zero-width finest cells and split the most probable cells instead."""
    n = p.size - 1
    dead = np.zeros(n, dtype=bool)
    dead[degenerate] = True
    lev = [p[0]] + [p[l + 1] for l in range(n) if not dead[l]]
    lev[-1] = p[-1]
    for _ in range(int(dead.sum())):
        F = d.cdf(np.array(lev))
        j = int(np.argmax(np.diff(F)))
        lev.insert(j + 1, float(d.quantile(0.5 * (F[j] + F[j + 1]))))
    return np.array(lev)


@dataclass
class GeneralizedLloydMaxResult:
    quantizer: MultiResolutionQuantizer
    distortion: float
    stage_distortions: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    repairs: int = 0
    dropped: int = 0


def generalized_lloyd_max(d, rates, weights, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, *, init=None, record=False):
    """Design a multi-resolution quantizer minimizing ``sum_t g_t D_t``.

    Alternates stage centroids for a fixed finest partition with the
    weighted nearest-neighbour partition for fixed points. Finest cells that
    the partition step leaves empty are replaced by splitting the most
    probable cells in half; the distortion may rise at such a step.
    """
    rates = tuple(int(r) for r in rates)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(rates),):
        raise InvalidParameterError("need one weight per stage")
    if not rates or min(rates) < 0:
        raise InvalidParameterError("rates must be nonnegative integers")
    if np.any(weights <= 0):
        raise InvalidParameterError("weights must be positive")
    n = 2 ** sum(rates)
    p = quantile_levels(d, n) if init is None else np.array(init, dtype=np.float64)
    p, repairs = _repair(d, p)
    shifts = _shifts(rates)
    prev = np.inf
    history = []
    converged = False
    points = None
    dropped = 0
    it = 0
    p_eval = p
    while it < max_iter:
        p_eval = p
        new_points = []
        Ds = np.empty(len(rates))
        for t, s in enumerate(shifts):
            mass, mean, var = core.cell_stats(d.values, d.lo, d.step, p[:: 1 << int(s)])
            if points is None and np.any(mass <= 0):
                raise EmptyCellError(f"stage {t + 1} starts with an empty cell", cell=int(np.flatnonzero(mass <= 0)[0]))
            # a cell emptied by the partition step keeps its last point
            new_points.append(mean if points is None else np.where(mass > 0, mean, points[t]))
            Ds[t] = np.dot(mass, var)
        points = new_points
        D = float(np.dot(weights, Ds))
        it += 1
        if record:
            history.append(D)
        if prev - D < tol:
            converged = True
            break
        prev = D
        p, degenerate = weighted_nn(points, weights, rates, d.lo, d.hi)
        if degenerate.size:
            dropped += degenerate.size
            log.debug("generalized_lloyd_max: re-splitting %d empty finest cells at iteration %d", degenerate.size, it)
            p = _resplit(d, p, degenerate)
            prev = np.inf
    if not converged:
        warnings.warn(f"generalized Lloyd-Max stopped after {it} iterations", ConvergenceWarning, stacklevel=2)
    if dropped:
        log.info("generalized_lloyd_max: %d finest-cell drops over %d iterations", dropped, it)
    q = MultiResolutionQuantizer(rates, p_eval, tuple(points))
    return GeneralizedLloydMaxResult(q, D, Ds, it, converged, history, repairs, dropped)

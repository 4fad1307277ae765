"""Experiment drivers: Monte Carlo cost estimates, exact LQR costs and high-rate asymptotics."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from quantctl._backend import core
from quantctl.control import (
    LQRPolicy,
    SystemSpec,
    lqr_policy,
    prop4_bounds,
    riccati,
)
from quantctl.density import GriddedDensity
from quantctl.errors import InvalidParameterError
from quantctl.quantizer import lloyd_max
from quantctl.silent import _argmax_mass, min_cell_prob_quantizer

log = logging.getLogger(__name__)

POLICIES = ("greedy", "event", "lqr")


# ---------------------------------------------------------------------------
# rate models


@dataclass(frozen=True)
class FixedRate:
    rate: int

    @property
    def average(self):
        return float(self.rate)

    def realize(self, rng, trials, steps):
        return np.full((trials, steps), int(self.rate), dtype=np.int64)


@dataclass(frozen=True)
class RateSchedule:
    rates: tuple

    @property
    def average(self):
        return float(np.mean(self.rates))

    def realize(self, rng, trials, steps):
        r = np.asarray(self.rates, dtype=np.int64)
        if r.size != steps:
            raise InvalidParameterError(f"rate schedule needs {steps} entries, got {r.size}")
        return np.broadcast_to(r, (trials, steps)).copy()


@dataclass(frozen=True)
class ErasureRate:
    """Each step independently carries ``rate`` bits or, with probability ``p_drop``, none."""

    p_drop: float
    rate: int

    def __post_init__(self):
        if not 0.0 <= self.p_drop <= 1.0:
            raise InvalidParameterError("p_drop must lie in [0, 1]")

    @property
    def average(self):
        return (1.0 - self.p_drop) * self.rate

    def realize(self, rng, trials, steps):
        drop = rng.random((trials, steps)) < self.p_drop
        return np.where(drop, 0, int(self.rate)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    spec: SystemSpec
    policy: str = "greedy"
    trials: int = 1000
    seed: int = 0
    rate_model: object = None
    delta: float = 0.0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise InvalidParameterError(f"policy must be one of {POLICIES}")
        if self.trials < 1:
            raise InvalidParameterError("trials must be at least 1")
        if self.rate_model is None:
            object.__setattr__(self, "rate_model", RateSchedule(tuple(int(r) for r in self.spec.rates)))

    @property
    def nominal_rate(self):
        return 1.0 - self.delta if self.policy == "event" else self.rate_model.average


@dataclass
class CostReport:
    J: np.ndarray
    stderr: np.ndarray
    cum_avg: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    average_rate: float
    steady_state: float
    steady_stderr: float
    silence: np.ndarray = None
    silence_stderr: np.ndarray = None
    mse: np.ndarray = None
    nodes: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def horizon(self):
        return self.J.size

    def rows(self):
        for t in range(self.horizon):
            yield t + 1, self.J[t], self.stderr[t], self.lb[t], self.ub[t], self.cum_avg[t]


def steady_window(T):
    """Final third of the horizon (at least one step)."""
    n = max(T // 3, 1)
    return slice(T - n, T)


# ---------------------------------------------------------------------------
# Monte Carlo


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    noise, rates = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(noise)), np.random.Generator(np.random.PCG64(rates))


def sample_disturbances(d, rng, shape):
    """Draw from the gridded density by inverse-CDF sampling."""
    u = rng.random(shape)
    return core.quantiles(d.values, d.lo, d.step, u.ravel()).reshape(shape)


def _design(belief, R, policy, delta):
    """``(levels, points, silent_index)`` for one shared prior."""
    if policy == "event":
        if R == 0:
            return np.array([belief.lo, belief.hi]), np.array([belief.mean]), 0
        p, c, _, _, status, _ = core.design(belief.values, belief.lo, belief.step, 3, 1e-12, 10_000)
        if status == core.STATUS_CONVERGED:
            mass, _, _ = core.cell_stats(belief.values, belief.lo, belief.step, p)
            if mass.max() >= delta:
                # constraint inactive: the unconstrained design is the answer
                return p, c, _argmax_mass(mass)
        sq = min_cell_prob_quantizer(belief, delta)
        return sq.q.levels, sq.q.points, sq.silent_index
    p, c, _, _, status, _ = core.design(belief.values, belief.lo, belief.step, 1 << R, 1e-12, 10_000)
    if status != core.STATUS_CONVERGED:
        # rare: empty cell or slow convergence; the full routine repairs and reports
        q = lloyd_max(belief, R).quantizer
        return q.levels, q.points, -1
    return p, c, -1


def run_monte_carlo(config):
    """Simulate ``config.trials`` trajectories of the greedy or event-triggered scheme.

    Trials sharing an index history share their prior, so each prior is
    filtered and quantized once and every member trial is encoded against it.
    """
    spec = config.spec
    if config.policy == "lqr":
        raise InvalidParameterError("use run_lqr_exact for the successive-refinement policy")
    t0 = time.perf_counter()
    T, N, a = spec.horizon, config.trials, spec.a
    gains = riccati(spec)
    q_w, r_w = spec.state_weights, spec.control_weights
    noise_rng, rate_rng = _streams(config.seed)
    w = sample_disturbances(spec.disturbance, noise_rng, (N, T))
    if spec.mode == "lqr":
        w[:, 1:] = 0.0
    steps = max(T - 1, 0)
    if config.policy == "event":
        rates = np.ones((N, steps), dtype=np.int64)
    else:
        rates = config.rate_model.realize(rate_rng, N, steps)
    noise = spec.disturbance if spec.mode == "iid" else None
    wv = None if noise is None else noise.values
    w_lo = 0.0 if noise is None else noise.lo
    w_step = 1.0 if noise is None else noise.step
    event = config.policy == "event"

    cost = np.zeros((N, T))
    sent = np.zeros((N, steps))
    err = np.zeros((N, T))
    x = w[:, 0].copy()
    node = np.zeros(N, dtype=np.int64)
    beliefs = [spec.disturbance]
    node_counts = []
    for t in range(1, T):
        col = t - 1
        R = rates[:, col]
        keys = node * 64 + R
        uniq, inv = np.unique(keys, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(np.bincount(inv, minlength=uniq.size))])
        u = np.empty(N)
        xhat = np.empty(N)
        new_node = np.empty(N, dtype=np.int64)
        children = []
        for g in range(uniq.size):
            members = order[bounds[g]:bounds[g + 1]]
            belief = beliefs[int(uniq[g] >> 6)]
            Rg = int(uniq[g] & 63)
            levels, points, silent = _design(belief, Rg, config.policy, config.delta)
            if members.size == 1:
                ell = np.searchsorted(levels[1:-1], x[members], side="right")
                used = ell
            else:
                ell = np.searchsorted(levels[1:-1], x[members], side="right")
                used = np.unique(ell)
            for l in used:
                sel = members if used.size == 1 else members[ell == l]
                c = float(points[l])
                ug = -gains.k[col] * c
                vals, lo, step, gamma = core.advance(
                    belief.values, belief.lo, belief.step, float(levels[l]), float(levels[l + 1]), a, ug,
                    wv, w_lo, w_step, spec.tail_mass, spec.max_points,
                )
                new_node[sel] = len(children)
                children.append(GriddedDensity._trusted(lo, step, vals))
                u[sel] = ug
                xhat[sel] = c
                if event:
                    sent[sel, col] = 0.0 if l == silent else 1.0
                else:
                    sent[sel, col] = Rg
        node_counts.append(uniq.size)
        err[:, col] = x - xhat
        cost[:, col] = q_w[col] * x * x + r_w[col] * u * u
        x = a * x + u + w[:, t]
        node = new_node
        beliefs = children
    cost[:, T - 1] = q_w[T - 1] * x * x

    J = cost.mean(axis=0)
    se = cost.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros(T)
    cum = np.cumsum(J) / np.arange(1, T + 1)
    lb, ub = prop4_bounds(a, config.nominal_rate, spec.variance, T)
    win = steady_window(T)
    per_trial = cost[:, win].mean(axis=1)
    ss_se = float(per_trial.std(ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    silence = silence_se = None
    if config.policy == "event" and steps:
        silent_frac = 1.0 - sent
        silence = silent_frac.mean(axis=0)
        silence_se = silent_frac.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros(steps)
    avg_rate = float(sent.mean()) if steps else 0.0
    mse = np.r_[(err[:, :steps] ** 2).mean(axis=0), np.nan]
    elapsed = time.perf_counter() - t0
    log.info("run_monte_carlo: %d trials x %d steps in %.1fs (%d priors)", N, T, elapsed, sum(node_counts))
    return CostReport(J, se, cum, lb, ub, avg_rate, float(per_trial.mean()), ss_se, silence, silence_se, mse,
                      node_counts, elapsed)


# ---------------------------------------------------------------------------
# exact evaluation in lqr mode


@dataclass
class LQRExactReport:
    greedy_J: np.ndarray
    optimal_J: np.ndarray
    greedy_mse: np.ndarray
    optimal_mse: np.ndarray
    stage_distortions: np.ndarray
    policy: LQRPolicy = None

    @property
    def greedy_cumulative(self):
        return np.cumsum(self.greedy_J)

    @property
    def optimal_cumulative(self):
        return np.cumsum(self.optimal_J)

    @property
    def greedy_average(self):
        return self.greedy_cumulative / np.arange(1, self.greedy_J.size + 1)

    @property
    def optimal_average(self):
        return self.optimal_cumulative / np.arange(1, self.optimal_J.size + 1)


def _second_moment(d):
    m, mean, var = core.cell_stats(d.values, d.lo, d.step, np.array([d.lo, d.hi]))
    return float(var[0] + mean[0] ** 2)


def greedy_lqr_exact(spec, gains=None):
    """Instantaneous costs and estimation MSEs of the greedy policy, by tree enumeration.

    With no noise after ``t = 1`` each index history leaves a truncated,
    rescaled copy of the initial density, so all expectations are sums over
    the ``2^(R_1 + ... + R_t)`` histories.
    """
    gains = riccati(spec) if gains is None else gains
    T, a = spec.horizon, spec.a
    J = np.zeros(T)
    mse = np.full(T, np.nan)
    nodes = [(spec.disturbance, 1.0)]
    for t in range(1, T + 1):
        col = t - 1
        J[col] = spec.state_weights[col] * sum(p * _second_moment(d) for d, p in nodes)
        if t == T:
            break
        R = int(spec.rates[col])
        nxt = []
        m = 0.0
        ucost = 0.0
        for d, p in nodes:
            res = lloyd_max(d, R)
            q = res.quantizer
            m += p * res.distortion
            for l in range(q.cells):
                u = -gains.k[col] * q.points[l]
                vals, lo, step, gamma = core.advance(
                    d.values, d.lo, d.step, float(q.levels[l]), float(q.levels[l + 1]), a, u,
                    None, 0.0, 1.0, 0.0, 0,
                )
                if gamma <= 0:
                    continue
                nxt.append((GriddedDensity._trusted(lo, step, vals), p * gamma))
                ucost += p * gamma * u * u
        J[col] += spec.control_weights[col] * ucost
        mse[col] = m
        nodes = nxt
    return J, mse


def optimal_lqr_exact(spec, policy=None):
    """Instantaneous costs of the successive-refinement policy by per-cell integration.

    Within finest cell ``l`` the state is ``X_t = a^(t-1) W_0 + C_t(l)`` with a
    deterministic offset, so ``E[X_t^2]`` follows from the cell's moments.
    """
    policy = lqr_policy(spec) if policy is None else policy
    T, a = spec.horizon, spec.a
    mq = policy.mrsq
    d = spec.disturbance
    mass, mean, var = core.cell_stats(d.values, d.lo, d.step, mq.finest_levels)
    pos = mass > 0
    mass, mean, var = mass[pos], mean[pos], var[pos]
    ell = np.arange(pos.size)[pos]
    shifts = mq.shifts
    J = np.zeros(T)
    mse = np.full(T, np.nan)
    C = np.zeros(ell.size)
    xhat = np.zeros(ell.size)
    what = np.zeros(ell.size)
    u = np.zeros(ell.size)
    for t in range(1, T + 1):
        col = t - 1
        g = a ** (t - 1)
        ex2 = g * g * (var + mean ** 2) + 2 * g * mean * C + C * C
        J[col] = spec.state_weights[col] * np.dot(mass, ex2)
        if t == T:
            break
        w_t = mq.stage_points[col][ell >> int(shifts[col])]
        xhat = a * xhat + u + g * (w_t - what)
        what = w_t
        u = -policy.gains.k[col] * xhat
        # E[(X_t - Xhat_t)^2] per cell, with X_t - Xhat_t = g W_0 + C - Xhat
        off = C - xhat
        mse[col] = np.dot(mass, g * g * (var + mean ** 2) + 2 * g * mean * off + off * off)
        J[col] += spec.control_weights[col] * np.dot(mass, u * u)
        C = a * C + u
    return J, mse, policy


def run_lqr_exact(spec, policy=None):
    """Exact per-step costs of both the greedy and the successive-refinement policy."""
    if spec.mode != "lqr":
        raise InvalidParameterError("run_lqr_exact needs an lqr-mode spec")
    gains = riccati(spec)
    gJ, gm = greedy_lqr_exact(spec, gains)
    oJ, om, policy = optimal_lqr_exact(spec, policy)
    return LQRExactReport(gJ, oJ, gm, om, policy.design.stage_distortions, policy)


# ---------------------------------------------------------------------------
# exact tree enumeration of the greedy scheme (iid mode)


@dataclass
class SubcellRow:
    t: int
    history: str
    probability: float
    lo: float
    hi: float
    xhat: float
    mse: float


def enumerate_greedy(spec, depth):
    """Per-history probabilities and conditional MSEs for ``t = 1..depth``.

    Row ``(t, history)`` describes the cell selected at time ``t`` after the
    index sequence ``history``.
    """
    gains = riccati(spec)
    depth = min(depth, spec.horizon - 1)
    rows = []
    nodes = [(spec.disturbance, 1.0, "")]
    noise = spec.disturbance if spec.mode == "iid" else None
    for t in range(1, depth + 1):
        col = t - 1
        R = int(spec.rates[col])
        nxt = []
        for d, p, hist in nodes:
            q = lloyd_max(d, R).quantizer
            for l in range(q.cells):
                mass, mean, var = core.cell_stats(d.values, d.lo, d.step, q.levels[l:l + 2])
                if mass[0] <= 0:
                    continue
                h = hist + (format(l, f"0{R}b") if R else "-")
                rows.append(SubcellRow(t, h, p * mass[0], q.levels[l], q.levels[l + 1], q.points[l], var[0]))
                u = -gains.k[col] * q.points[l]
                vals, lo, step, gamma = core.advance(
                    d.values, d.lo, d.step, float(q.levels[l]), float(q.levels[l + 1]), spec.a, u,
                    None if noise is None else noise.values, 0.0 if noise is None else noise.lo,
                    1.0 if noise is None else noise.step, spec.tail_mass, spec.max_points,
                )
                nxt.append((GriddedDensity._trusted(lo, step, vals), p * gamma, h))
        nodes = nxt
    return rows


# ---------------------------------------------------------------------------
# high-rate asymptotics


def _cube_root_integral(d):
    return float(np.sum(np.cbrt(d.values)) * d.step)


def bennett_distortion(d, R):
    """High-rate distortion estimate ``(int f^(1/3))^3 / (12 * 2^(2R))``."""
    return _cube_root_integral(d) ** 3 / (12.0 * 2.0 ** (2.0 * R))


def bennett_point_density(d):
    """Optimal high-rate density of reproduction points, proportional to ``f^(1/3)``."""
    return GriddedDensity._trusted(d.lo, d.step, np.cbrt(d.values) / _cube_root_integral(d))

"""Quantized feedback control of the scalar plant ``X_{t+1} = a X_t + W_t + U_t``.

Time runs over ``t = 1..T`` with ``X_1 = W_0``. Indices are sent at
``t = 1..T-1``; nothing is sent or applied at ``t = T``. Arrays indexed by
time are stored 0-based, so ``gains.k[t-1]`` is ``k_t``.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from quantctl._backend import core
from quantctl.density import DEFAULT_POINTS, DEFAULT_TAIL, GriddedDensity
from quantctl.errors import EmptyCellError, InvalidParameterError
from quantctl.mrsq import MultiResolutionQuantizer, generalized_lloyd_max, mrsq_decode, mrsq_encode
from quantctl.quantizer import lloyd_max, quantile_levels
from quantctl.silent import min_cell_prob_quantizer

MODES = ("iid", "lqr")


@dataclass(frozen=True, eq=False)
class SystemSpec:
    a: float
    horizon: int
    state_weights: np.ndarray
    control_weights: np.ndarray
    rates: np.ndarray
    disturbance: GriddedDensity
    mode: str = "iid"
    tail_mass: float = DEFAULT_TAIL
    max_points: int = DEFAULT_POINTS

    def __post_init__(self):
        T = int(self.horizon)
        if T < 1:
            raise InvalidParameterError("horizon must be at least 1")
        if self.a == 0 or not np.isfinite(self.a):
            raise InvalidParameterError("plant gain a must be finite and nonzero")
        if self.mode not in MODES:
            raise InvalidParameterError(f"mode must be one of {MODES}")
        q = _expand(self.state_weights, T, "state_weights")
        r = _expand(self.control_weights, T - 1, "control_weights")
        R = _expand(self.rates, T - 1, "rates")
        if np.any(q < 0) or np.any(r < 0):
            raise InvalidParameterError("cost weights must be nonnegative")
        if not np.any(q > 0):
            raise InvalidParameterError("at least one state weight must be positive")
        if np.any(R < 0) or np.any(R != np.round(R)):
            raise InvalidParameterError("rates must be nonnegative integers")
        for name, val in (("horizon", T), ("state_weights", q), ("control_weights", r), ("rates", R.astype(np.int64))):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def variance(self):
        return self.disturbance.variance

    def with_rates(self, rates):
        return replace(self, rates=rates)


def _expand(x, n, name):
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.size == 1 and n != 1:
        arr = np.full(n, float(arr[0]))
    if arr.size != n:
        raise InvalidParameterError(f"{name} needs {n} entries, got {arr.size}")
    return arr.copy()


@dataclass(frozen=True)
class RiccatiGains:
    s: np.ndarray  # s_1..s_{T+1}
    k: np.ndarray  # k_1..k_T
    g: np.ndarray  # g_1..g_T


def riccati(spec):
    """Backward recursion for cost-to-go ``s_t``, gains ``k_t`` and MSE weights ``g_t``."""
    T, a = spec.horizon, spec.a
    q = spec.state_weights
    r = np.concatenate([spec.control_weights, [0.0]])
    s = np.zeros(T + 1)
    k = np.zeros(T)
    g = np.zeros(T)
    for t in range(T - 1, -1, -1):
        nxt = s[t + 1]
        den = nxt + r[t]
        # 0/0 means nothing is left to control
        k[t] = nxt * a / den if den > 0 else 0.0
        s[t] = q[t] + (nxt * r[t] * a * a / den if den > 0 else 0.0)
        g[t] = nxt * a * a - s[t] + q[t]
    g = np.maximum(g, 0.0)
    return RiccatiGains(s, k, g)


def lqr_weights(gains, a):
    """Stage weights ``a^(2(t-1)) g_t`` for the successive-refinement design."""
    t = np.arange(gains.g.size)
    return (float(a) ** (2 * t)) * gains.g


def prop4_bounds(a, R, variance, T):
    """Lower and upper bound sequences on ``J_1..J_T`` for average rate ``R``."""
    if R < 0 or not variance > 0:
        raise InvalidParameterError("need R >= 0 and variance > 0")
    rho = a * a * 2.0 ** (-2.0 * R)
    lb = np.empty(T)
    ub = np.empty(T)
    jl = ju = 0.0
    for t in range(T):
        jl = rho * jl + variance
        ju = rho * (2 * np.pi * np.e / 12) * ju + variance
        lb[t] = jl
        ub[t] = ju
    return lb, ub


def prop4_fixed_points(a, R, variance):
    """Limits of :func:`prop4_bounds`; ``inf`` when a recursion diverges."""
    rho = a * a * 2.0 ** (-2.0 * R)
    out = []
    for f in (rho, rho * 2 * np.pi * np.e / 12):
        out.append(variance / (1 - f) if f < 1 else np.inf)
    return tuple(out)


def cost_decomposition(spec, gains, mse):
    """Average cost ``(1/T) sum_t (s_t var_t + g_t E[(X_t - Xhat_t)^2])``.

    ``mse`` holds ``E[(X_t - Xhat_t)^2]`` for ``t = 1..T``. The disturbance
    variance enters every step in iid mode and only through ``s_1`` in lqr mode.
    """
    mse = np.asarray(mse, dtype=np.float64)
    T = spec.horizon
    if mse.size != T:
        raise InvalidParameterError(f"need {T} MSE values")
    var = np.full(T, spec.variance) if spec.mode == "iid" else np.r_[spec.variance, np.zeros(T - 1)]
    return float(np.sum(gains.s[:T] * var + gains.g * mse) / T)


# ---------------------------------------------------------------------------
# belief recursion shared by encoder and decoder


@dataclass(frozen=True, eq=False)
class CoderState:
    belief: GriddedDensity
    t: int = 1
    last_xhat: float = 0.0
    last_u: float = 0.0


@dataclass
class TrajectoryRecord:
    x: list = field(default_factory=list)
    xhat: list = field(default_factory=list)
    u: list = field(default_factory=list)
    index: list = field(default_factory=list)
    cost: list = field(default_factory=list)


def initial_state(spec):
    return CoderState(spec.disturbance, 1, 0.0, 0.0)


def advance_belief(belief, cell, gain, shift, spec):
    """Condition ``belief`` on ``cell``, map ``x -> gain*x + shift`` and add noise in iid mode.

    Returns ``(next_belief, gamma)``; the function is deterministic so encoder
    and decoder stay in lockstep.
    """
    w = spec.disturbance if spec.mode == "iid" else None
    vals, lo, step, gamma = core.advance(
        belief.values, belief.lo, belief.step, float(cell[0]), float(cell[1]), float(gain), float(shift),
        None if w is None else w.values, 0.0 if w is None else w.lo, 1.0 if w is None else w.step,
        spec.tail_mass, spec.max_points,
    )
    if not gamma > 0:
        raise EmptyCellError(f"cell {cell} has zero probability")
    return GriddedDensity._trusted(lo, step, vals), gamma


def design_quantizer(state, spec):
    """Lloyd-Max quantizer for the current prior at rate ``R_t``."""
    return lloyd_max(state.belief, int(spec.rates[state.t - 1])).quantizer


def _apply(state, spec, gains, q, index):
    t = state.t
    xhat = float(q.points[index])
    u = -gains.k[t - 1] * xhat
    nxt, _ = advance_belief(state.belief, q.cell(index), spec.a, u, spec)
    return xhat, u, CoderState(nxt, t + 1, xhat, u)


def _check_step(state, spec):
    if not 1 <= state.t < spec.horizon:
        raise InvalidParameterError(f"no transmission at t={state.t} (horizon {spec.horizon})")


def greedy_observer_step(state, spec, gains, x):
    """Encode ``x_t`` against the current prior; returns ``(index, next_state)``."""
    _check_step(state, spec)
    q = design_quantizer(state, spec)
    index = q.encode(x)
    _, _, nxt = _apply(state, spec, gains, q, index)
    return index, nxt


def greedy_controller_step(state, spec, gains, index):
    """Decode index ``l_t``; returns ``(u_t, next_state)``."""
    _check_step(state, spec)
    q = design_quantizer(state, spec)
    _, u, nxt = _apply(state, spec, gains, q, int(index))
    return u, nxt


def event_observer_step(state, spec, gains, delta, x):
    """Event-triggered encoder: returns ``(symbol, next_state)``, ``None`` meaning silence."""
    _check_step(state, spec)
    sq = min_cell_prob_quantizer(state.belief, delta)
    index = sq.q.encode(x)
    _, _, nxt = _apply(state, spec, gains, sq.q, index)
    return (None if index == sq.silent_index else index), nxt


def event_controller_step(state, spec, gains, delta, symbol):
    """Event-triggered decoder: silence stands for the silent cell."""
    _check_step(state, spec)
    sq = min_cell_prob_quantizer(state.belief, delta)
    index = sq.silent_index if symbol is None else int(symbol)
    _, u, nxt = _apply(state, spec, gains, sq.q, index)
    return u, nxt


def run_trajectory(spec, gains, disturbances, delta=None):
    """Run observer and controller side by side on one noise path.

    ``disturbances`` holds ``w_0..w_{T-1}`` (only ``w_0`` is used in lqr mode).
    Returns a :class:`TrajectoryRecord` and the list of (observer, controller)
    state pairs, which must agree exactly.
    """
    T = spec.horizon
    rec = TrajectoryRecord()
    obs = ctl = initial_state(spec)
    pairs = []
    x = float(disturbances[0])
    for t in range(1, T + 1):
        rec.x.append(x)
        if t == T:
            rec.cost.append(spec.state_weights[t - 1] * x * x)
            break
        if delta is None:
            sym, obs = greedy_observer_step(obs, spec, gains, x)
            u, ctl = greedy_controller_step(ctl, spec, gains, sym)
        else:
            sym, obs = event_observer_step(obs, spec, gains, delta, x)
            u, ctl = event_controller_step(ctl, spec, gains, delta, sym)
        pairs.append((obs, ctl))
        rec.index.append(sym)
        rec.u.append(u)
        rec.xhat.append(ctl.last_xhat)
        rec.cost.append(spec.state_weights[t - 1] * x * x + spec.control_weights[t - 1] * u * u)
        w = float(disturbances[t]) if spec.mode == "iid" else 0.0
        x = spec.a * x + u + w
    return rec, pairs


# ---------------------------------------------------------------------------
# globally optimal LQR policy


def nested_levels(d, rates):
    """Finest partition built by successively splitting each cell with Lloyd-Max."""
    levels = np.array([d.lo, d.hi])
    for R in rates:
        if R == 0:
            continue
        parts = [levels[:1]]
        for a, b in zip(levels[:-1], levels[1:]):
            vals, lo, gamma = core.truncate(d.values, d.lo, d.step, a, b)
            if gamma > 0:
                sub = GriddedDensity._trusted(lo, d.step, vals)
                inner = lloyd_max(sub, R).quantizer.levels[1:-1]
                inner = np.clip(inner, a, b)
            else:
                inner = np.full((1 << R) - 1, b)
            parts.append(np.concatenate([inner, [b]]))
        levels = np.concatenate(parts)
    return levels


@dataclass
class LQRPolicy:
    mrsq: MultiResolutionQuantizer
    gains: RiccatiGains
    weights: np.ndarray
    a: float
    design: object = None

    def encode(self, w0):
        return mrsq_encode(self.mrsq, w0)

    def controller(self):
        return LQRController(self)


class LQRController:
    """Decoder side: rebuilds ``Xhat_t`` from the received sub-indices."""

    def __init__(self, policy):
        self.policy = policy
        self.prefix = []
        self.xhat = 0.0
        self.what = 0.0
        self.u = 0.0

    def step(self, sub_index):
        p = self.policy
        self.prefix.append(int(sub_index))
        t = len(self.prefix)
        what = mrsq_decode(p.mrsq, self.prefix)
        self.xhat = p.a * self.xhat + self.u + p.a ** (t - 1) * (what - self.what)
        self.what = what
        self.u = -p.gains.k[t - 1] * self.xhat
        return self.u


def lqr_policy(spec, gains=None, tol=1e-12, max_iter=10_000, init="nested"):
    """Successive-refinement quantizer for ``W_0`` over stages ``t = 1..T-1``.

    ``init`` is ``"nested"`` (split each cell by Lloyd-Max, stage by stage),
    ``"quantile"`` or an explicit finest partition.
    """
    if spec.mode != "lqr":
        raise InvalidParameterError("lqr_policy needs an lqr-mode spec")
    if spec.horizon < 2:
        raise InvalidParameterError("horizon must be at least 2 to transmit anything")
    gains = riccati(spec) if gains is None else gains
    weights = lqr_weights(gains, spec.a)[: spec.horizon - 1].copy()
    if np.any(weights <= 0):
        warnings.warn("zero-weight stages get a tiny positive weight", UserWarning, stacklevel=2)
        weights = np.maximum(weights, 1e-12 * max(weights.max(), 1.0))
    rates = tuple(int(r) for r in spec.rates)
    d = spec.disturbance
    if isinstance(init, str):
        init = nested_levels(d, rates) if init == "nested" else quantile_levels(d, 2 ** sum(rates))
    res = generalized_lloyd_max(d, rates, weights, tol, max_iter, init=init)
    return LQRPolicy(res.quantizer, gains, weights, spec.a, res)

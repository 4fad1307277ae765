import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantctl.control import (
    CoderState,
    SystemSpec,
    advance_belief,
    cost_decomposition,
    design_quantizer,
    event_controller_step,
    event_observer_step,
    greedy_controller_step,
    greedy_observer_step,
    initial_state,
    lqr_policy,
    lqr_weights,
    nested_levels,
    prop4_bounds,
    prop4_fixed_points,
    riccati,
    run_trajectory,
)
from quantctl.density import check_log_concavity, from_gaussian, from_laplace, from_uniform
from quantctl.errors import InvalidParameterError
from quantctl.quantizer import ScalarQuantizer, distortion, lloyd_max
from quantctl.sim import sample_disturbances

GAUSS_R1 = 1 - 2 / np.pi
HALF_NORMAL_MEAN = np.sqrt(2 / np.pi)
UB_FACTOR = 2 * np.pi * np.e / 12


@pytest.fixture(scope="module")
def w256():
    return from_gaussian(0.0, 1.0, tail_mass=1e-9, points=256)


def _spec(d, a=1.2, T=10, q=1.0, r=0.0, R=1, mode="iid"):
    return SystemSpec(a, T, q, r, R, d, mode, tail_mass=1e-9, max_points=1024)


class TestSystemSpec:
    def test_scalar_expansion(self, w256):
        s = _spec(w256, T=5, R=2)
        assert s.state_weights.shape == (5,)
        assert s.control_weights.shape == (4,)
        np.testing.assert_array_equal(s.rates, [2, 2, 2, 2])

    @pytest.mark.parametrize(
        "kw",
        [
            dict(a=0.0),
            dict(T=0),
            dict(R=-1),
            dict(R=1.5),
            dict(q=0.0),
            dict(r=-1.0),
            dict(mode="batch"),
        ],
    )
    def test_invalid(self, w256, kw):
        with pytest.raises(InvalidParameterError):
            _spec(w256, **kw)

    def test_schedule_length(self, w256):
        with pytest.raises(InvalidParameterError):
            SystemSpec(1.2, 5, 1.0, 0.0, [1, 1], w256)

    def test_variance(self, w256):
        # piecewise-constant cells add step^2 / 12
        assert _spec(w256).variance == pytest.approx(1.0 + w256.step**2 / 12, abs=1e-6)


class TestRiccati:
    @pytest.mark.parametrize("a", [0.5, 1.2, 1.5, -2.0])
    def test_no_control_cost(self, w256, a):
        g = riccati(_spec(w256, a=a, T=6))
        np.testing.assert_allclose(g.s[:6], 1.0)
        assert g.s[6] == 0.0
        np.testing.assert_allclose(g.k[:5], a)
        assert g.k[5] == 0.0
        np.testing.assert_allclose(g.g[:5], a * a)
        assert g.g[5] == 0.0

    def test_hand_recursion(self, w256):
        g = riccati(_spec(w256, a=1.0, T=2, q=1.0, r=1.0))
        np.testing.assert_allclose(g.s, [1.5, 1.0, 0.0])
        np.testing.assert_allclose(g.k, [0.5, 0.0])
        np.testing.assert_allclose(g.g, [0.5, 0.0])

    def test_single_step(self, w256):
        g = riccati(_spec(w256, T=1, q=3.0))
        np.testing.assert_allclose(g.s, [3.0, 0.0])
        np.testing.assert_allclose(g.k, [0.0])

    @given(
        a=st.floats(0.1, 3),
        T=st.integers(1, 12),
        q=st.lists(st.floats(0.01, 5), min_size=12, max_size=12),
        r=st.lists(st.floats(0, 5), min_size=12, max_size=12),
    )
    def test_nonnegative(self, w256, a, T, q, r):
        g = riccati(SystemSpec(a, T, q[:T], r[: T - 1] if T > 1 else [], 1 if T > 1 else [], w256))
        assert np.all(g.s >= 0) and np.all(g.g >= 0)
        assert g.s[T - 1] == q[T - 1] and g.s[T] == 0 and g.k[T - 1] == 0


class TestLqrWeights:
    def test_geometric(self, w256):
        g = riccati(_spec(w256, a=1.5, T=9, mode="lqr"))
        np.testing.assert_allclose(lqr_weights(g, 1.5)[:3], [2.25, 5.0625, 11.390625])

    def test_unit_gain(self, w256):
        g = riccati(_spec(w256, a=1.0, T=5, r=0.5))
        np.testing.assert_array_equal(lqr_weights(g, 1.0), g.g)

    def test_first_stage(self, w256):
        g = riccati(_spec(w256, a=-1.7, T=5, r=0.5))
        assert lqr_weights(g, -1.7)[0] == g.g[0]


class TestCostBounds:
    def test_lower(self):
        lb, _ = prop4_bounds(1.2, 1, 1.0, 40)
        assert lb[0] == 1.0
        assert lb[1] == pytest.approx(1.36, rel=1e-15)
        assert lb[-1] == pytest.approx(1 / (1 - 0.36), rel=1e-12)

    def test_high_rate(self):
        lb, ub = prop4_bounds(1.2, 60, 2.0, 5)
        np.testing.assert_allclose(lb, 2.0)
        np.testing.assert_allclose(ub, 2.0)

    def test_upper_fixed_point(self):
        # linear recursion J <- rho * 2 pi e / 12 * J + 1 with rho = 1.44 / 4
        fp = 1 / (1 - UB_FACTOR * 1.44 * 0.25)
        assert fp == pytest.approx(2.0507942918838435, abs=1e-12)
        _, ub = prop4_bounds(1.2, 1, 1.0, 200)
        assert ub[-1] == pytest.approx(fp, rel=1e-12)
        assert prop4_fixed_points(1.2, 1, 1.0) == pytest.approx((1.5625, fp), rel=1e-12)

    def test_divergent(self):
        lb, ub = prop4_bounds(3.0, 1, 1.0, 10)
        assert np.all(np.diff(ub) > 0) and np.all(np.diff(lb) > 0)
        assert prop4_fixed_points(3.0, 1, 1.0) == (np.inf, np.inf)

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            prop4_bounds(1.2, -1, 1.0, 5)


class TestCostDecomposition:
    def test_zero_mse(self, w256):
        spec = _spec(w256, a=1.3, T=6, r=0.4)
        g = riccati(spec)
        assert cost_decomposition(spec, g, np.zeros(6)) == pytest.approx(np.sum(g.s[:6]) * spec.variance / 6)

    def test_lqr_mode(self, w256):
        spec = _spec(w256, a=1.5, T=9, mode="lqr")
        g = riccati(spec)
        D = np.linspace(0.4, 0.01, 9)
        mse = 1.5 ** (2 * np.arange(9)) * D
        got = cost_decomposition(spec, g, mse)
        want = (spec.variance * g.s[0] + np.sum(lqr_weights(g, 1.5) * D)) / 9
        assert got == pytest.approx(want, rel=1e-14)

    def test_length(self, w256):
        spec = _spec(w256, T=4)
        with pytest.raises(InvalidParameterError):
            cost_decomposition(spec, riccati(spec), np.zeros(3))


class TestGreedySteps:
    def test_first_step_symmetry(self, gauss):
        spec = _spec(gauss, T=3)
        g = riccati(spec)
        idx, nxt = greedy_observer_step(initial_state(spec), spec, g, 0.3)
        assert idx == 1
        assert nxt.last_xhat == pytest.approx(HALF_NORMAL_MEAN, abs=1e-6)
        assert nxt.last_u == pytest.approx(-1.2 * nxt.last_xhat)

    def test_first_step_mse(self, gauss):
        spec = _spec(gauss, T=3)
        q = design_quantizer(initial_state(spec), spec)
        assert distortion(gauss, q) == pytest.approx(GAUSS_R1, abs=1e-3)

    def test_erasure_step(self, w256):
        spec = SystemSpec(1.2, 4, 1.0, 0.0, [0, 1, 1], w256)
        g = riccati(spec)
        idx, nxt = greedy_observer_step(initial_state(spec), spec, g, 1.7)
        assert idx == 0
        assert nxt.last_xhat == pytest.approx(w256.mean, abs=1e-12)
        # an empty message leaves the posterior equal to the prior
        ref, _ = advance_belief(w256, (w256.lo, w256.hi), 1.2, nxt.last_u, spec)
        np.testing.assert_array_equal(nxt.belief.values, ref.values)

    def test_no_step_at_horizon(self, w256):
        spec = _spec(w256, T=2)
        g = riccati(spec)
        with pytest.raises(InvalidParameterError):
            greedy_observer_step(CoderState(w256, 2), spec, g, 0.0)

    def test_controller_mirrors_observer(self, w256):
        spec = _spec(w256, T=6)
        g = riccati(spec)
        obs = ctl = initial_state(spec)
        rng = np.random.default_rng(5)
        for _ in range(5):
            idx, obs = greedy_observer_step(obs, spec, g, rng.normal() * 2)
            u, ctl = greedy_controller_step(ctl, spec, g, idx)
            assert u == obs.last_u
            assert ctl.last_xhat == obs.last_xhat
            np.testing.assert_array_equal(ctl.belief.values, obs.belief.values)


class TestSynchronization:
    def test_greedy_bit_identical(self, w256):
        spec = _spec(w256, T=8, R=[1, 2, 0, 1, 3, 1, 2])
        g = riccati(spec)
        rng = np.random.default_rng(2024)
        for _ in range(100):
            w = sample_disturbances(w256, rng, (spec.horizon,))
            rec, pairs = run_trajectory(spec, g, w)
            for obs, ctl in pairs:
                assert obs.belief.lo == ctl.belief.lo and obs.belief.step == ctl.belief.step
                assert obs.belief.values.tobytes() == ctl.belief.values.tobytes()
                assert obs.last_xhat == ctl.last_xhat and obs.last_u == ctl.last_u

    def test_event_bit_identical(self, w256):
        spec = _spec(w256, a=1.5, T=6)
        g = riccati(spec)
        rng = np.random.default_rng(7)
        silent = 0
        for _ in range(20):
            w = sample_disturbances(w256, rng, (spec.horizon,))
            rec, pairs = run_trajectory(spec, g, w, delta=0.6)
            silent += sum(s is None for s in rec.index)
            for obs, ctl in pairs:
                assert obs.belief.values.tobytes() == ctl.belief.values.tobytes()
                assert obs.last_xhat == ctl.last_xhat
        assert silent > 0

    def test_event_silence_decodes_silent_cell(self, w256):
        spec = _spec(w256, a=1.5, T=3)
        g = riccati(spec)
        sym, obs = event_observer_step(initial_state(spec), spec, g, 0.5, 0.01)
        assert sym is None
        u, ctl = event_controller_step(initial_state(spec), spec, g, 0.5, None)
        assert u == obs.last_u
        # symmetric prior: the middle cell is silent and reproduces 0
        assert abs(ctl.last_xhat) < 1e-9

    def test_log_concave_priors(self):
        rng = np.random.default_rng(99)
        for d in (from_gaussian(0, 1, tail_mass=1e-9, points=256), from_laplace(0, 1, points=256), from_uniform(-1, 1, 128)):
            spec = SystemSpec(1.2, 10, 1.0, 0.0, 1, d, tail_mass=1e-9, max_points=1024)
            g = riccati(spec)
            for _ in range(50 // 3 + 1):
                w = sample_disturbances(d, rng, (10,))
                _, pairs = run_trajectory(spec, g, w)
                for obs, _ in pairs:
                    assert check_log_concavity(obs.belief)


class TestGreedyOptimalityAtTwo:
    def test_perturbations(self, gauss):
        # with q = 1, r = 0 the cost at t = 2 is a^2 E[(X_1 - Xhat_1)^2] + var(W)
        spec = _spec(gauss, T=3)
        q0 = design_quantizer(initial_state(spec), spec)
        J0 = 1.44 * distortion(gauss, q0) + gauss.variance
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = q0.levels.copy()
            p[1] += rng.normal(scale=0.3)
            c = np.sort(q0.points + rng.normal(scale=0.3, size=2))
            c = np.clip(c, [p[0], p[1]], [p[1], p[2]])
            J = 1.44 * distortion(gauss, ScalarQuantizer(p, c)) + gauss.variance
            assert J >= J0 - 1e-12


class TestLQRPolicy:
    def test_requires_lqr_mode(self, w256):
        with pytest.raises(InvalidParameterError):
            lqr_policy(_spec(w256, T=4))

    def test_two_step_recursion(self, w256):
        spec = _spec(w256, a=1.5, T=3, mode="lqr")
        pol = lqr_policy(spec)
        ctl = pol.controller()
        w0 = 0.37
        sub = pol.encode(w0)
        u1 = ctl.step(sub[0])
        W1 = pol.mrsq.stage_quantizer(1)(w0)
        assert ctl.xhat == pytest.approx(W1, abs=1e-15)
        x1hat = ctl.xhat
        ctl.step(sub[1])
        W2 = pol.mrsq.stage_quantizer(2)(w0)
        assert ctl.xhat == pytest.approx(1.5 * x1hat + u1 + 1.5 * (W2 - W1), abs=1e-14)

    def test_estimation_error_identity(self, w256):
        spec = _spec(w256, a=1.5, T=6, mode="lqr")
        pol = lqr_policy(spec)
        for w0 in np.random.default_rng(4).normal(size=50):
            ctl = pol.controller()
            sub = pol.encode(w0)
            x = w0
            for t in range(1, spec.horizon):
                u = ctl.step(sub[t - 1])
                What = pol.mrsq.stage_quantizer(t)(w0)
                err = 1.5 ** (t - 1) * (w0 - What)
                assert x - ctl.xhat == pytest.approx(err, rel=1e-9, abs=1e-12)
                x = 1.5 * x + u

    def test_nested_init_is_nested(self, w256):
        lev = nested_levels(w256, (1, 2, 1))
        assert lev.size == 2**4 + 1
        assert np.all(np.diff(lev) >= 0)
        # the first split is the rate-1 Lloyd-Max threshold
        assert lev[8] == pytest.approx(lloyd_max(w256, 1).quantizer.levels[1], abs=1e-12)

    def test_init_choices_agree(self, w256):
        spec = _spec(w256, a=1.5, T=4, mode="lqr")
        a = lqr_policy(spec, init="nested").design.distortion
        b = lqr_policy(spec, init="quantile").design.distortion
        assert a == pytest.approx(b, rel=1e-9)

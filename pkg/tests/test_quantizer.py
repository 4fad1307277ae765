import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantctl.density import from_gaussian, from_laplace, from_pdf, from_uniform
from quantctl.errors import ConvergenceWarning, EmptyCellError, InvalidParameterError, InvalidQuantizerError
from quantctl.quantizer import (
    ScalarQuantizer,
    centroid_step,
    decode,
    distortion,
    encode,
    lloyd_iterate,
    lloyd_max,
    nn_step,
    quantile_levels,
)

# 1 - 2/pi: rate-1 Gaussian optimum (threshold 0, points +-E|W|)
GAUSS_R1 = 1 - 2 / np.pi
HALF_NORMAL_MEAN = np.sqrt(2 / np.pi)
# symmetric 2-bit Gaussian optimum: bounded scalar search over the outer threshold t of
# {-t, 0, t} with closed-form cell moments (scipy.stats.norm), t* = 0.98159885
GAUSS_R2 = 0.11748184782932913


class TestScalarQuantizer:
    def setup_method(self):
        self.q = ScalarQuantizer([-5.0, 0.0, 5.0], [-1.0, 1.0])

    def test_encode_half_open(self):
        assert self.q.encode(-0.3) == 0
        assert self.q.encode(0.0) == 1
        assert self.q.encode(5.0) == 1

    def test_encode_clamps(self):
        assert self.q.encode(-100) == 0
        assert self.q.encode(100) == 1

    def test_encode_array(self):
        np.testing.assert_array_equal(encode(self.q, np.array([-1, 0, 1])), [0, 1, 1])

    def test_rate_zero(self):
        q = ScalarQuantizer([0.0, 1.0], [0.5])
        assert q.rate == 0
        assert all(q.encode(x) == 0 for x in (-1.0, 0.3, 2.0))

    def test_decode(self):
        assert decode(self.q, 0) == -1.0
        assert self.q.decode(1) == 1.0
        assert self.q(0.2) == 1.0

    @pytest.mark.parametrize("idx", [-1, 2])
    def test_decode_out_of_range(self, idx):
        with pytest.raises(IndexError):
            self.q.decode(idx)

    def test_shape_checks(self):
        with pytest.raises(InvalidQuantizerError):
            ScalarQuantizer([0, 1], [0.2, 0.4])
        with pytest.raises(InvalidQuantizerError):
            ScalarQuantizer([0, 2, 1], [0.2, 0.4])

    def test_regular(self):
        assert self.q.is_regular()
        assert not ScalarQuantizer([0, 1, 2], [1.5, 1.7]).is_regular()

    def test_rate_of_three_cells(self):
        assert ScalarQuantizer([0, 1, 2, 3], [0.5, 1.5, 2.5]).rate == pytest.approx(np.log2(3))


class TestSteps:
    def test_uniform_distortion(self, unif):
        q = ScalarQuantizer([0, 0.5, 1], [0.25, 0.75])
        assert distortion(unif, q) == pytest.approx(1 / 48, abs=1e-7)

    def test_rate_zero_distortion_is_variance(self, gauss):
        q = ScalarQuantizer([gauss.lo, gauss.hi], [gauss.mean])
        assert distortion(gauss, q) == pytest.approx(gauss.variance, abs=1e-12)

    def test_centroids_uniform(self, unif):
        np.testing.assert_allclose(centroid_step(unif, [0, 0.5, 1]), [0.25, 0.75], atol=1e-12)

    def test_centroids_gaussian(self, gauss):
        c = centroid_step(gauss, [gauss.lo, 0, gauss.hi])
        np.testing.assert_allclose(c, [-HALF_NORMAL_MEAN, HALF_NORMAL_MEAN], atol=1e-4)

    def test_centroid_single_cell(self, gauss):
        assert centroid_step(gauss, [gauss.lo, gauss.hi])[0] == pytest.approx(gauss.mean)

    def test_centroid_empty_cell(self, unif):
        with pytest.raises(EmptyCellError) as exc:
            centroid_step(unif, [0.0, 0.5, 0.5, 1.0])
        assert exc.value.cell == 1

    @pytest.mark.parametrize(
        "c, p", [([0.25, 0.75], [0.5]), ([-1, 0, 1], [-0.5, 0.5]), ([-0.79788, 0.79788], [0.0])]
    )
    def test_nn_midpoints(self, c, p):
        np.testing.assert_allclose(nn_step(c), p, atol=1e-15)

    def test_nn_pins_ends(self):
        np.testing.assert_allclose(nn_step([1, 3], 0, 4), [0, 2, 4])

    def test_nn_rejects_unsorted(self):
        with pytest.raises(InvalidQuantizerError):
            nn_step([1, 0])

    def test_quantile_levels(self, gauss):
        p = quantile_levels(gauss, 4)
        np.testing.assert_allclose(gauss.cdf(p), [0, 0.25, 0.5, 0.75, 1], atol=1e-12)


class TestLloydMax:
    def test_uniform_rate1(self, unif):
        r = lloyd_max(unif, 1)
        np.testing.assert_allclose(r.quantizer.levels, [0, 0.5, 1], atol=1e-12)
        np.testing.assert_allclose(r.quantizer.points, [0.25, 0.75], atol=1e-12)
        assert r.distortion == pytest.approx(1 / 48, abs=1e-12)

    def test_gaussian_rate1(self, gauss):
        r = lloyd_max(gauss, 1)
        np.testing.assert_allclose(r.quantizer.points, [-HALF_NORMAL_MEAN, HALF_NORMAL_MEAN], atol=1e-4)
        assert r.distortion == pytest.approx(GAUSS_R1, abs=1e-4)

    def test_gaussian_rate2(self, gauss):
        assert lloyd_max(gauss, 2).distortion == pytest.approx(GAUSS_R2, abs=2e-4)

    @pytest.mark.parametrize("R", [1, 2, 3, 4])
    def test_uniform_any_rate(self, unif, R):
        assert lloyd_max(unif, R).distortion == pytest.approx(2.0 ** (-2 * R) / 12, abs=1e-9)

    def test_rate_zero(self, gauss):
        r = lloyd_max(gauss, 0)
        assert r.quantizer.cells == 1
        assert r.quantizer.points[0] == pytest.approx(gauss.mean)
        assert r.distortion == pytest.approx(gauss.variance)

    @pytest.mark.parametrize("bad", [-1, 1.5])
    def test_bad_rate(self, gauss, bad):
        with pytest.raises(InvalidParameterError):
            lloyd_max(gauss, bad)

    def test_needs_density(self):
        with pytest.raises(TypeError):
            lloyd_max(np.ones(4), 1)

    def test_non_power_of_two_cells(self, gauss):
        r = lloyd_max(gauss, cells=3)
        assert r.quantizer.cells == 3
        assert r.converged

    def test_convergence_warning_carries_iterate(self, gauss):
        with pytest.warns(ConvergenceWarning):
            r = lloyd_max(gauss, 4, max_iter=3)
        assert not r.converged
        assert r.iterations == 3
        assert r.quantizer.cells == 16

    @pytest.mark.parametrize("R", [1, 2, 3])
    def test_monotone_distortion(self, laplace, R):
        r = lloyd_max(laplace, R, record=True)
        h = np.array(r.history)
        assert np.all(np.diff(h) <= 8 * np.finfo(float).eps * h[:-1])

    @given(st.integers(1, 3), st.floats(0.2, 3.0), st.floats(-2, 2))
    def test_monotone_distortion_property(self, R, var, mean):
        d = from_gaussian(mean, var, tail_mass=1e-9, points=1024)
        h = np.array(lloyd_max(d, R, record=True).history)
        assert np.all(np.diff(h) <= 8 * np.finfo(float).eps * h[:-1])

    @pytest.mark.parametrize("R", [1, 2, 3])
    def test_fixed_point(self, gauss, R):
        q = lloyd_max(gauss, R).quantizer
        c = centroid_step(gauss, q.levels)
        p = nn_step(c, gauss.lo, gauss.hi)
        np.testing.assert_allclose(p, q.levels, atol=1e-5)
        np.testing.assert_allclose(c, q.points, atol=1e-5)
        assert q.is_regular()

    @pytest.mark.parametrize("R", [1, 2, 3])
    def test_init_independence(self, gauss, R):
        tol = 1e-12
        rng = np.random.default_rng(R)
        Ds = []
        for _ in range(10):
            inner = np.sort(rng.uniform(gauss.quantile(0.01), gauss.quantile(0.99), 2**R - 1))
            Ds.append(lloyd_max(gauss, R, tol=tol, init=np.r_[gauss.lo, inner, gauss.hi]).distortion)
        assert np.ptp(Ds) <= 10 * tol

    @pytest.mark.parametrize("R", [1, 2, 3])
    def test_init_independence_laplace(self, laplace, R):
        tol = 1e-12
        rng = np.random.default_rng(7 + R)
        Ds = []
        for _ in range(10):
            inner = np.sort(rng.uniform(laplace.quantile(0.01), laplace.quantile(0.99), 2**R - 1))
            Ds.append(lloyd_max(laplace, R, tol=tol, init=np.r_[laplace.lo, inner, laplace.hi]).distortion)
        assert np.ptp(Ds) <= 10 * tol

    @pytest.mark.parametrize("R", [1, 2, 3])
    def test_symmetry(self, gauss, R):
        c = lloyd_max(gauss, R).quantizer.points
        np.testing.assert_allclose(c, -c[::-1], atol=1e-6)

    def test_empty_cell_repair(self):
        # two separated bumps: a quantile init can strand a boundary in the gap
        d = from_pdf(lambda x: ((np.abs(x + 3) < 1) | (np.abs(x - 3) < 1)).astype(float), -4, 4, points=800)
        r = lloyd_iterate(d, [-4.0, -0.5, 0.0, 0.5, 4.0])
        assert r.repairs >= 1
        assert np.all(r.quantizer.cell_masses(d) > 0)

    def test_warning_free_on_log_concave(self, gauss):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            for R in range(1, 6):
                assert lloyd_max(gauss, R).converged


def test_laplace_rate1_closed_form():
    # rate-1 Laplace(0, 1): threshold 0, points +-1, D = Var - 1 = 1
    d = from_laplace(0, 1, tail_mass=1e-12)
    assert lloyd_max(d, 1).distortion == pytest.approx(1.0, abs=1e-6)


def test_shift_equivariance():
    a = lloyd_max(from_uniform(0, 1, points=1000), 2).quantizer
    b = lloyd_max(from_uniform(3, 4, points=1000), 2).quantizer
    np.testing.assert_allclose(b.points, a.points + 3, atol=1e-9)

import math

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nonovershoot import benchmark as bm
from nonovershoot.dilation import (Dilation, canonical_norm, canonical_norm_gradient,
                                   check_field_homogeneity, dilate, hom_add, psi,
                                   psi_inverse, weighted_norm)
from nonovershoot.exceptions import DilationError

DIL = Dilation(bm.generator(), bm.P)
EUCLID = Dilation(np.eye(3), np.eye(3))

vectors = arrays(np.float64, (3,), elements=st.floats(-10, 10)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


def norm_oracle(G, P, x):
    """Root of |d(-s) x|_P = 1 with scipy's expm and Brent's method."""
    def f(s):
        y = scipy.linalg.expm(-s * G) @ x
        return math.log(math.sqrt(y @ P @ y))
    lo, hi = -60.0, 60.0
    return math.exp(scipy.optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15))


class TestDilationType:
    def test_monotonicity_margin(self):
        assert DIL.monotonicity_margin > 0
        assert DIL.monotonicity_margin == pytest.approx(
            np.min(np.linalg.eigvalsh(bm.P @ bm.generator() + bm.generator().T @ bm.P)))

    def test_rejects_non_dilation(self):
        with pytest.raises(DilationError):
            Dilation(-np.eye(2), np.eye(2))
        with pytest.raises(DilationError):
            Dilation(np.eye(2), -np.eye(2))
        # anti-Hurwitz but not monotone in this weight
        with pytest.raises(DilationError):
            Dilation(np.array([[1.0, 10.0], [0.0, 1.0]]), np.eye(2))

    def test_unvalidated_is_inspectable(self):
        d = Dilation(np.array([[1.0, 10.0], [0.0, 1.0]]), np.eye(2), validate=False)
        assert d.monotonicity_margin < 0

    def test_immutable(self):
        with pytest.raises((AttributeError, TypeError)):
            DIL.generator = np.eye(3)
        with pytest.raises(ValueError):
            DIL.generator[0, 0] = 2.0


class TestDilate:
    def test_identity_at_zero(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(dilate(DIL, 0.0, x), x, atol=1e-15)

    def test_standard(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(dilate(EUCLID, 0.7, x), math.exp(0.7) * x)

    @pytest.mark.parametrize("s", [-2.0, 0.3, 4.0])
    def test_first_axis(self, s):
        assert np.allclose(dilate(DIL, s, [1.0, 0, 0]), [math.exp(s), 0, 0], atol=1e-12)

    def test_group_law(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(dilate(DIL, 0.4, dilate(DIL, -1.1, x)), dilate(DIL, -0.7, x))


class TestCanonicalNorm:
    def test_origin(self):
        r = canonical_norm(DIL, np.zeros(3))
        assert r.value == 0.0

    def test_subnormal_input(self):
        assert canonical_norm(DIL, np.full(3, 1e-310)).value == 0.0

    def test_euclidean(self, rng):
        x = rng.standard_normal(3)
        assert canonical_norm(EUCLID, x).value == pytest.approx(np.linalg.norm(x), rel=1e-13)

    def test_first_axis(self):
        v = canonical_norm(DIL, [1.0, 0.0, 0.0]).value
        assert v == pytest.approx(math.sqrt(bm.P[0, 0]), rel=1e-12)
        assert v == pytest.approx(0.9331, abs=1e-4)
        assert v == pytest.approx(norm_oracle(bm.generator(), bm.P, np.array([1.0, 0, 0])),
                                  rel=1e-12)

    def test_against_oracle(self, rng):
        for _ in range(50):
            x = rng.standard_normal(3) * 10.0 ** rng.uniform(-4, 4)
            assert canonical_norm(DIL, x).value == pytest.approx(
                norm_oracle(bm.generator(), bm.P, x), rel=1e-10)

    def test_complex_generator(self, rng):
        G = np.array([[1.0, 0.5], [-0.5, 1.0]])
        d = Dilation(G, np.eye(2))
        for _ in range(10):
            x = rng.standard_normal(2)
            assert canonical_norm(d, x).value == pytest.approx(norm_oracle(G, np.eye(2), x),
                                                               rel=1e-10)

    def test_result_invariant(self, rng):
        for _ in range(100):
            x = rng.standard_normal(3) * 10.0 ** rng.uniform(-6, 6)
            r = canonical_norm(DIL, x)
            assert r.value == pytest.approx(math.exp(r.s_x), rel=1e-14)
            assert weighted_norm(bm.P, dilate(DIL, -r.s_x, x)) == pytest.approx(1.0, abs=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(x=vectors, s=st.floats(-3, 3))
    def test_homogeneity(self, x, s):
        v = canonical_norm(DIL, x).value
        assert canonical_norm(DIL, dilate(DIL, s, x)).value == pytest.approx(math.exp(s) * v,
                                                                             rel=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(x=vectors)
    def test_unit_sphere_consistency(self, x):
        u = x / weighted_norm(bm.P, x)
        assert canonical_norm(DIL, u).value == pytest.approx(1.0, rel=1e-12)
        # and the converse: the point at homogeneous norm one lies on the sphere
        r = canonical_norm(DIL, x)
        assert weighted_norm(bm.P, r.projection) == pytest.approx(1.0, rel=1e-10)

    def test_continuity(self, rng):
        for _ in range(50):
            x = rng.standard_normal(3)
            v = canonical_norm(DIL, x).value
            for h in (1e-4, 1e-6, 1e-8):
                y = x + h * rng.standard_normal(3)
                assert abs(canonical_norm(DIL, y).value - v) <= 50 * h


class TestGradient:
    def test_euclidean(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(canonical_norm_gradient(EUCLID, x), x / np.linalg.norm(x))

    def test_origin_rejected(self):
        with pytest.raises(ValueError):
            canonical_norm_gradient(DIL, np.zeros(3))

    def test_finite_differences_and_euler(self, rng):
        eps = 1e-6
        for _ in range(50):
            x = rng.standard_normal(3)
            g = canonical_norm_gradient(DIL, x)
            fd = np.array([(canonical_norm(DIL, x + eps * e).value
                            - canonical_norm(DIL, x - eps * e).value) / (2 * eps)
                           for e in np.eye(3)])
            assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)
            assert g @ bm.generator() @ x == pytest.approx(canonical_norm(DIL, x).value,
                                                           rel=1e-12)


class TestPsi:
    def test_origin(self):
        assert np.array_equal(psi(DIL, np.zeros(3)), np.zeros(3))
        assert np.array_equal(psi_inverse(DIL, np.zeros(3)), np.zeros(3))

    def test_euclidean_identity(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(psi(EUCLID, x), x, rtol=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(x=vectors)
    def test_round_trip_and_norm(self, x):
        z = psi(DIL, x)
        assert np.linalg.norm(psi_inverse(DIL, z) - x) <= 1e-9 * np.linalg.norm(x)
        assert np.linalg.norm(psi(DIL, psi_inverse(DIL, x)) - x) <= 1e-9 * np.linalg.norm(x)
        assert weighted_norm(bm.P, z) == pytest.approx(canonical_norm(DIL, x).value, rel=1e-10)


class TestHomAdd:
    def test_neutral_element(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(hom_add(DIL, x, np.zeros(3)), x, rtol=1e-12)

    def test_euclidean(self, rng):
        x, y = rng.standard_normal(3), rng.standard_normal(3)
        assert np.allclose(hom_add(EUCLID, x, y), x + y)

    def test_barrier_additivity(self, rng):
        for _ in range(50):
            x, y = rng.standard_normal(3), rng.standard_normal(3)
            lhs = bm.H @ psi(DIL, hom_add(DIL, x, y))
            assert np.allclose(lhs, bm.H @ psi(DIL, x) + bm.H @ psi(DIL, y), atol=1e-10)


class TestFieldHomogeneity:
    def test_linear_field_standard_dilation(self, rng):
        A = rng.standard_normal((3, 3))
        rep = check_field_homogeneity(lambda x: A @ x, EUCLID, 0.0)
        assert rep.passed and rep.margin <= 1e-12

    def test_noncommuting_linear_field_fails(self):
        A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        rep = check_field_homogeneity(lambda x: A @ x, DIL, 0.0)
        assert not rep.passed and rep.margin > 1e-3
        assert rep.worst_point is not None

    def test_closed_loop(self, controller):
        rep = check_field_homogeneity(controller.field, controller.dilation, controller.mu)
        assert rep.passed and rep.margin <= 1e-8

    def test_closed_loop_wrong_degree(self, controller):
        rep = check_field_homogeneity(controller.field, controller.dilation, -0.5)
        assert not rep.passed

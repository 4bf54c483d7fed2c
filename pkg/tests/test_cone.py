import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nonovershoot import benchmark as bm
from nonovershoot.cone import (ConeSpec, barrier_values, closed_loop_cone_matrix, contains,
                               embedding_check, invariance_margin, is_metzler, iss_margin,
                               issf_check, sample_xi)
from nonovershoot.dilation import Dilation, dilate, hom_add, psi
from nonovershoot.exceptions import ConeError
from nonovershoot.synthesis import HomogeneousController, full_pipeline

DIL = Dilation(bm.generator(), bm.P)
EUCLID = Dilation(np.eye(3), np.eye(3))
CONE = ConeSpec(bm.H)

vectors = arrays(np.float64, (3,), elements=st.floats(-10, 10)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@pytest.fixture(scope="module")
def near_linear(plant, cone):
    ctrl, _ = full_pipeline(plant, cone, bm.RHO, -0.05, samples=64, K=bm.K)
    return ctrl


class TestConeSpec:
    def test_defaults(self):
        assert CONE.p == 3 and CONE.n == 3 and CONE.is_square
        assert CONE.labels == ("h1", "h2", "h3")
        assert CONE.condition == pytest.approx(np.linalg.cond(bm.H))

    def test_rejects_zero_row(self):
        with pytest.raises(ConeError):
            ConeSpec(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_label_count(self):
        with pytest.raises(ConeError):
            ConeSpec(np.eye(2), labels=("a",))

    def test_inverse_errors(self):
        with pytest.raises(ConeError):
            ConeSpec(np.array([[1.0, 0.0], [2.0, 0.0]])).inverse()
        with pytest.raises(ConeError):
            ConeSpec(np.ones((1, 2))).inverse()


class TestBarriers:
    def test_origin(self):
        assert np.array_equal(barrier_values(CONE, DIL, np.zeros(3)), np.zeros(3))

    def test_standard_dilation(self, rng):
        x = rng.standard_normal(3)
        assert np.allclose(barrier_values(CONE, EUCLID, x), bm.H @ x)

    def test_left_eigenvector_row_keeps_sign(self, rng):
        h1 = bm.H[0]
        assert np.allclose(h1 @ bm.generator(), h1)
        for _ in range(500):
            x = rng.standard_normal(3)
            assert np.sign(barrier_values(CONE, DIL, x)[0]) == np.sign(h1 @ x)

    def test_contains(self):
        safety = ConeSpec(bm.H[list(bm.SAFETY_ROWS)])
        assert contains(CONE, DIL, np.zeros(3))
        assert contains(safety, DIL, bm.X0)
        # the virtual row is not a left eigenvector, so x3 = 0 does not put x0 on it
        assert barrier_values(CONE, DIL, bm.X0)[2] < 0 and not contains(CONE, DIL, bm.X0)
        assert not contains(CONE, DIL, np.array([0.0, -1.0, 0.0]))
        assert barrier_values(CONE, DIL, np.array([0.0, -1.0, 0.0]))[1] < 0

    @settings(max_examples=100, deadline=None)
    @given(x=vectors, y=vectors)
    def test_cone_closed_under_homogeneous_sum(self, x, y):
        if contains(CONE, DIL, x) and contains(CONE, DIL, y):
            assert contains(CONE, DIL, hom_add(DIL, x, y), tol=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(x=vectors)
    def test_cone_is_dilation_invariant(self, x):
        inside = contains(CONE, DIL, x)
        for s in np.linspace(-3, 3, 7):
            phi = barrier_values(CONE, DIL, dilate(DIL, s, x))
            if inside:
                assert np.all(phi >= -1e-9 * math.exp(s) * (1 + np.linalg.norm(x)))
            assert np.allclose(phi, math.exp(s) * barrier_values(CONE, DIL, x), atol=1e-9,
                               rtol=1e-8)


class TestMetzler:
    def test_examples(self):
        assert is_metzler(np.eye(3))
        assert is_metzler(bm.CONE_MATRIX)
        M = np.eye(2)
        M[0, 1] = -1e-3
        assert not is_metzler(M, 1e-9)
        M[0, 1] = -1e-10
        assert is_metzler(M, 1e-9)


class TestSampleXi:
    def test_two_dimensional_slice_is_a_point(self):
        s = sample_xi(ConeSpec(np.eye(2)), 0, count=16)
        assert s.feasible and np.allclose(s.points, [[0.0, 1.0]])

    def test_benchmark_slice_residuals(self):
        for i in range(3):
            s = sample_xi(CONE, i, count=512, weight=bm.P)
            Z = s.points
            assert s.feasible and len(Z) > 10
            assert np.max(np.abs(Z @ bm.H[i])) <= 1e-12
            others = [j for j in range(3) if j != i]
            assert np.min(Z @ bm.H[others].T) >= -1e-12
            assert np.allclose(np.einsum("ij,jk,ik->i", Z, bm.P, Z), 1.0)

    def test_empty_slice(self):
        s = sample_xi(ConeSpec(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])), 0, count=16)
        assert not s.feasible and len(s.points) == 0

    def test_non_square_cone(self):
        H = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, -1.0]])
        s = sample_xi(ConeSpec(H), 3, count=256)
        Z = s.points
        assert s.feasible and len(Z) > 0
        assert np.max(np.abs(Z @ H[3])) <= 1e-10
        assert np.min(Z @ H[:3].T) >= -1e-10

    def test_affine_slice(self):
        r = bm.ISSF_R
        s = sample_xi(CONE, 1, r=r, count=256)
        Z = s.points
        assert np.max(np.abs(Z @ bm.H[1] + r[1])) <= 1e-10
        assert np.min(Z @ bm.H[[0, 2]].T + r[[0, 2]]) >= -1e-10
        assert np.max(np.linalg.norm(Z, axis=1)) <= 100 * r.max() * (1 + 1e-12)

    def test_deterministic(self):
        a = sample_xi(CONE, 0, count=128, seed=3).points
        b = sample_xi(CONE, 0, count=128, seed=3).points
        assert np.array_equal(a, b)


class TestInvariance:
    def test_benchmark_controller(self, controller):
        rep = invariance_margin(controller.field, controller.dilation, CONE, samples=512)
        assert rep.passed and rep.worst >= -1e-9
        assert rep.per_constraint.shape == (3,)

    def test_contraction_has_zero_margin(self):
        rep = invariance_margin(lambda z: -z, EUCLID, CONE, samples=256)
        assert abs(rep.worst) <= 1e-12 and rep.passed

    def test_outward_field(self):
        h1 = bm.H[0]
        rep = invariance_margin(lambda z: -h1, EUCLID, CONE, samples=256, constraints=[0])
        assert not rep.passed and rep.worst < 0
        assert rep.witness is not None and abs(h1 @ rep.witness) <= 1e-12
        assert "FAIL" in rep.summary()


class TestIss:
    def test_zero_grid_reduces_to_invariance(self, controller):
        dil = controller.dilation
        a = invariance_margin(controller.field, dil, CONE, samples=256)
        b = iss_margin(lambda z, q: controller.field(z), dil, CONE, [0.0], samples=256)
        assert np.allclose(a.per_constraint, b.per_constraint, atol=1e-12)

    def test_benchmark_perturbation(self, controller):
        D = bm.ISS_CHANNEL

        def f(z, q):
            return controller.field(z) + D * abs(q[0] * z[0]) ** bm.ISS_NU

        rep = iss_margin(f, controller.dilation, CONE, np.linspace(-1, 1, 9), samples=256,
                         constraints=list(bm.SAFETY_ROWS))
        assert rep.worst >= -1e-9

    def test_wrong_sign_perturbation(self, controller):
        h1 = bm.H[0]

        def f(z, q):
            return controller.field(z) - h1 * abs(q[0])

        rep = iss_margin(f, controller.dilation, CONE, [0.0, 1.0], samples=256)
        assert not rep.passed and rep.per_constraint[0] < 0


class TestClosedLoopConeMatrix:
    def test_zero_degree_is_constant(self, plant, rng):
        ctrl = HomogeneousController.build(plant, bm.K, bm.K0, bm.G0, 0.0, bm.P)
        ref = bm.H @ (bm.A + bm.B @ bm.K) @ np.linalg.inv(bm.H)
        for _ in range(10):
            assert np.allclose(closed_loop_cone_matrix(ctrl, CONE, rng.standard_normal(3)), ref)

    def test_metzler_and_positive_gain(self, controller, rng):
        P = bm.P
        Acl = controller.closed_loop_matrix
        for _ in range(500):
            z = rng.standard_normal(3)
            assert is_metzler(closed_loop_cone_matrix(controller, CONE, z))
            gamma = -(z @ P @ Acl @ z) / (z @ P @ bm.generator() @ z)
            assert gamma > 0

    def test_lipschitz_on_sphere(self, controller, rng):
        worst = 0.0
        for _ in range(300):
            z1 = rng.standard_normal(3)
            z1 /= np.linalg.norm(z1)
            z2 = z1 + 1e-4 * rng.standard_normal(3)
            z2 /= np.linalg.norm(z2)
            d = np.linalg.norm(closed_loop_cone_matrix(controller, CONE, z1)
                               - closed_loop_cone_matrix(controller, CONE, z2))
            worst = max(worst, d / np.linalg.norm(z1 - z2))
        assert worst < 100.0


class TestIssf:
    def test_static_certificate(self, controller):
        rep = issf_check(controller, CONE, bm.ISSF_R, samples=64)
        assert np.allclose(rep.details["static_certificate"], [0.7136, 0.2, 0.6537], atol=5e-4)
        assert np.all(rep.details["static_certificate"] >= 0.1)

    def test_rejects_nonpositive_offset(self, controller):
        with pytest.raises(ValueError):
            issf_check(controller, CONE, np.zeros(3))
        with pytest.raises(ValueError):
            issf_check(controller, CONE, [0.2, -1.0, 0.2])

    def test_near_zero_degree_passes(self, near_linear):
        rep = issf_check(near_linear, CONE, bm.ISSF_R, samples=256)
        assert rep.passed and rep.worst > 0
        static = rep.details["static_certificate"]
        # the sampled margin stays within the degree-scaled gap of the static one
        assert np.all(rep.per_constraint <= static + 1e-12)
        assert rep.per_constraint[0] == pytest.approx(static[0], abs=0.1)

    def test_benchmark_degree_sampled_condition_fails(self, controller):
        # far from zero degree the state-dependent condition is violated on rows 2 and 3
        rep = issf_check(controller, CONE, bm.ISSF_R, samples=256)
        assert not rep.passed
        assert rep.per_constraint[0] > 0
        assert rep.per_constraint[1] < 0 and rep.per_constraint[2] < 0


class TestEmbedding:
    def test_standard_dilation(self):
        rep = embedding_check(CONE, EUCLID, np.zeros((3, 3)), samples=500)
        assert rep.applicable and rep.holds

    def test_benchmark(self):
        rep = embedding_check(CONE, DIL, bm.G0, samples=10_000)
        assert rep.applicable and rep.holds and rep.samples >= 9_000

    def test_point_in_linear_cone(self, rng):
        for _ in range(200):
            y = np.abs(rng.standard_normal(3))
            x = np.linalg.solve(bm.H, y)
            x *= 0.5 / np.sqrt(x @ bm.P @ x)
            assert np.all(bm.H @ psi(DIL, x) >= -1e-12)

    def test_not_applicable(self):
        rep = embedding_check(CONE, DIL, -bm.G0, samples=100)
        assert not rep.applicable and rep.samples == 0

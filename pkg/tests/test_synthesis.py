import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nonovershoot import benchmark as bm
from nonovershoot import synthesis
from nonovershoot.cone import ConeSpec, is_metzler
from nonovershoot.dilation import canonical_norm, dilate
from nonovershoot.exceptions import PlantError, SynthesisError
from nonovershoot.numerics import is_hurwitz
from nonovershoot.synthesis import (HomogeneousController, LinearPlant, eval_control,
                                    eval_mixed_control, full_pipeline,
                                    homogenization_residual, lmi_residuals,
                                    metzler_offset_range, solve_homogenization,
                                    solve_lmi_weight, synth_linear)

vectors = arrays(np.float64, (3,), elements=st.floats(-5, 5)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


def cone_matrix(cone, plant, K):
    return cone.H @ (plant.A + plant.B @ K) @ np.linalg.inv(cone.H)


class TestPlant:
    def test_uncontrollable(self):
        with pytest.raises(PlantError):
            LinearPlant(np.zeros((2, 2)), np.zeros((2, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(PlantError):
            LinearPlant(np.eye(2), np.ones((3, 1)))

    def test_dimensions(self, plant):
        assert plant.n == 3 and plant.m == 2


class TestLinearSynthesis:
    def test_already_stable(self):
        p = LinearPlant(-np.eye(2), np.eye(2))
        res = synth_linear(p, ConeSpec(np.eye(2)), 1.0)
        assert res.J < 0
        assert is_hurwitz(-np.eye(2) + res.K)

    def test_benchmark(self, plant, cone):
        res = synth_linear(plant, cone, bm.RHO)
        M = cone_matrix(cone, plant, res.K)
        assert res.J < 0
        assert is_metzler(M) and is_hurwitz(plant.A + plant.B @ res.K)
        assert np.max(np.abs(M)) <= bm.RHO + 1e-9
        assert len(res.history) == res.iterations
        assert np.all((res.ell >= synthesis.ELL_MIN - 1e-12) & (res.ell <= 1 + 1e-12))

    def test_published_gain_is_admissible(self, plant, cone):
        M = cone_matrix(cone, plant, bm.K)
        assert is_metzler(M)
        assert np.max(np.abs(M)) <= bm.RHO
        # a positive vector l with l^T M < 0 certifies stability of the positive system
        ell = np.array([1.0, 0.5, 1.0])
        assert np.all(ell @ M < 0)

    def test_infeasible_bound(self, plant, cone):
        with pytest.raises(SynthesisError) as info:
            synth_linear(plant, cone, 0.01)
        assert info.value.stage == "linear"


class TestHomogenization:
    def test_double_integrator(self):
        p = LinearPlant(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))
        hom = solve_homogenization(p)
        assert hom.residual < 1e-12
        assert homogenization_residual(p, hom.G0, hom.Y0) < 1e-12
        assert np.allclose(hom.G0 @ p.B, 0, atol=1e-12)
        assert np.allclose(hom.K0 @ (hom.G0 - np.eye(2)), hom.Y0, atol=1e-12)

    def test_published_solution(self, plant):
        assert homogenization_residual(plant, bm.G0, bm.y0()) < 1e-12
        assert np.allclose(bm.G0 @ bm.B, 0, atol=1e-12)
        assert np.allclose(bm.G0 @ bm.G0, -bm.G0)

    def test_benchmark_solution(self, plant):
        hom = solve_homogenization(plant)
        assert hom.residual < 1e-12
        assert np.allclose(hom.G0 @ plant.B, 0, atol=1e-12)
        # the solution set is affine; the published G0 differs by a homogeneous solution
        diff = hom.G0 - bm.G0
        ydiff = hom.Y0 - bm.y0()
        assert np.allclose(plant.A @ diff + plant.B @ ydiff - diff @ plant.A, 0, atol=1e-10)


class TestMetzlerOffset:
    def test_benchmark(self, plant, cone):
        tau, rng = metzler_offset_range(cone, bm.K, bm.G0, plant)
        assert tau == 0.0 and rng == (-1.0, 0.0)
        assert np.allclose(cone.H @ (-bm.G0) @ np.linalg.inv(cone.H), bm.CONE_OFFSET,
                           atol=1e-12)

    def _toy(self, a01, g01):
        p = LinearPlant(np.array([[-3.0, a01], [0.0, -3.0]]), np.eye(2))
        G0 = np.array([[0.0, g01], [0.0, 0.0]])
        return ConeSpec(np.eye(2)), p, G0

    def test_single_violation(self):
        cone, p, G0 = self._toy(1.0, 2.0)
        tau, rng = metzler_offset_range(cone, np.zeros((2, 2)), G0, p)
        assert tau == pytest.approx(2.0) and rng == pytest.approx((-0.5, 0.0))

    def test_infeasible(self):
        cone, p, G0 = self._toy(0.0, 1.0)
        with pytest.raises(SynthesisError) as info:
            metzler_offset_range(cone, np.zeros((2, 2)), G0, p)
        assert info.value.stage == "metzler" and info.value.detail[0][:2] == (0, 1)

    def test_positive_degree_flag(self):
        cone, p, G0 = self._toy(1.0, -2.0)
        tau, rng = metzler_offset_range(cone, np.zeros((2, 2)), G0, p, positive=True)
        assert tau == pytest.approx(2.0) and rng == pytest.approx((0.0, 0.5))


class TestLmi:
    def test_trivial(self):
        p = LinearPlant(-np.eye(2), np.eye(2))
        P = solve_lmi_weight(p, np.zeros((2, 2)), np.eye(2))
        a, b, c = lmi_residuals(P, -np.eye(2), np.eye(2))
        assert a < 0 < min(b, c)

    def test_published_weight(self):
        a, b, c = lmi_residuals(bm.P, bm.A + bm.B @ bm.K, bm.generator())
        assert a < 0 and b > 0 and c > 0

    @pytest.mark.parametrize("mu", [-1.0, -0.75, -0.3, -0.05])
    def test_benchmark_degrees(self, plant, cone, mu):
        Gd = bm.generator(mu)
        P = solve_lmi_weight(plant, bm.K, Gd, cone)
        assert np.array_equal(P, P.T)
        d = synthesis.LMI_DELTA * np.linalg.norm(P, 2)
        a, b, c = lmi_residuals(P, plant.A + plant.B @ bm.K, Gd)
        assert a <= -d and b >= d and c >= d

    def test_unstable_gain(self, plant):
        with pytest.raises(SynthesisError):
            solve_lmi_weight(plant, np.zeros((2, 3)), bm.generator())


class TestControl:
    def test_origin(self, controller):
        assert np.array_equal(eval_control(controller, np.zeros(3)), np.zeros(2))
        assert np.array_equal(eval_mixed_control(controller, np.zeros(3)), np.zeros(2))

    def test_unit_sphere_gives_linear_law(self, controller, rng):
        for _ in range(20):
            x = rng.standard_normal(3)
            x /= math.sqrt(x @ bm.P @ x)
            assert np.allclose(eval_control(controller, x), bm.K @ x, atol=1e-10)

    def test_degree_near_zero(self, plant, rng):
        ctrl = HomogeneousController.build(plant, bm.K, bm.K0, bm.G0, -1e-6, bm.P)
        for _ in range(20):
            x = rng.standard_normal(3) * rng.uniform(0.1, 3)
            assert np.allclose(eval_control(ctrl, x), bm.K @ x, atol=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(x=vectors, s=st.floats(-2, 2))
    def test_nonlinear_part_is_homogeneous(self, controller, x, s):
        # u - K0 x scales like e^{(1+mu)s}; the linear K0 x term does not
        y = dilate(controller.dilation, s, x)
        lhs = eval_control(controller, y) - bm.K0 @ y
        rhs = math.exp((1 + bm.MU) * s) * (eval_control(controller, x) - bm.K0 @ x)
        assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.linalg.norm(rhs)))

    def test_full_law_is_not_degree_one_plus_mu(self, controller):
        x = np.array([0.3, -0.2, 0.4])
        s = 1.0
        lhs = eval_control(controller, dilate(controller.dilation, s, x))
        rhs = math.exp((1 + bm.MU) * s) * eval_control(controller, x)
        assert np.linalg.norm(lhs - rhs) > 1e-3

    def test_mixed_law(self, controller, rng):
        for _ in range(20):
            x = rng.standard_normal(3)
            x /= math.sqrt(x @ bm.P @ x)
            assert np.allclose(eval_mixed_control(controller, 2 * x), bm.K @ (2 * x))
            assert np.allclose(eval_mixed_control(controller, x), eval_control(controller, x),
                               atol=1e-9)
            assert np.allclose(eval_mixed_control(controller, 0.5 * x),
                               eval_control(controller, 0.5 * x))

    def test_field_euler_identity(self, controller, rng):
        G = controller.dilation.generator
        eps = 1e-6
        for _ in range(30):
            x = rng.standard_normal(3)
            J = np.column_stack([(controller.field(x + eps * e) - controller.field(x - eps * e))
                                 / (2 * eps) for e in np.eye(3)])
            lhs = J @ G @ x
            rhs = (bm.MU * np.eye(3) + G) @ controller.field(x)
            assert np.linalg.norm(lhs - rhs) <= 1e-6 * (1 + np.linalg.norm(rhs))


class TestPipeline:
    def test_benchmark(self, plant, cone):
        ctrl, rep = full_pipeline(plant, cone, bm.RHO, bm.MU, samples=512)
        assert rep.passed and rep.margins[0].worst >= -1e-9
        assert rep.linear is not None and rep.linear.J < 0
        assert rep.homogenization.tau == 0.0
        assert rep.lmi["max_eig_PAcl"] < 0
        assert ctrl.mu == bm.MU
        assert canonical_norm(ctrl.dilation, bm.X0).value > 0

    def test_published_gain(self, plant, cone):
        ctrl, rep = full_pipeline(plant, cone, bm.RHO, bm.MU, samples=512, K=bm.K)
        assert rep.linear is None and rep.passed
        assert np.array_equal(ctrl.K, bm.K)

    @pytest.mark.parametrize("mu", [-2.0, 0.0, 0.5])
    def test_degree_outside_interval(self, plant, cone, mu):
        with pytest.raises(ValueError):
            full_pipeline(plant, cone, bm.RHO, mu, K=bm.K)

    def test_degree_outside_admissible_range(self, plant, cone, monkeypatch):
        calls = []
        monkeypatch.setattr(synthesis, "metzler_offset_range",
                            lambda *a, **k: (4.0, (-0.25, 0.0)))
        monkeypatch.setattr(synthesis, "solve_lmi_weight",
                            lambda *a, **k: calls.append(1))
        with pytest.raises(SynthesisError) as info:
            full_pipeline(plant, cone, bm.RHO, -0.5, K=bm.K)
        assert info.value.stage == "metzler" and not calls

    def test_rejects_non_metzler_gain(self, plant, cone):
        with pytest.raises(SynthesisError) as info:
            full_pipeline(plant, cone, bm.RHO, bm.MU, K=np.zeros((2, 3)))
        assert info.value.stage == "linear"

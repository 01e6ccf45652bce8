"""Deformed Hamiltonian flows and variational equations.

Oracles: closed-form solutions of the linear conformal model H = x1*y1
(exponential coordinates and Jacobian), exact energy conservation of the
harmonic oscillator at q = 1, and Runge-Kutta order measured by step halving.
"""

import math

import numpy as np
import pytest

from defham import expr as ex
from defham.dynamics import (
    FlowSpec,
    HamiltonianField,
    IntegrationError,
    deformed_field,
    energy_derivative_defect,
    integrate,
    integrate_variational,
    pullback_defect,
    trajectory_to_csv,
)
from defham.phase import PhasePoint

from conftest import random_polynomial_expr, random_point

OSC = "(x1^2 + y1^2)/2"


class TestField:
    def test_hand_case(self):
        # [DERIVED] H = (x1^2+y1^2)/2, q = 1/2, z = (1,2):
        # X = (q^{-1} H_y, -H_x) = (4, -1).
        h = ex.parse(OSC, 1)
        v = deformed_field(h, 0.5, PhasePoint((1.0,), (2.0,)))
        assert v.a == pytest.approx((4.0,), abs=1e-15)
        assert v.b == pytest.approx((-1.0,), abs=1e-15)

    def test_q_one_is_canonical(self, rng):
        # [DERIVED] at q = 1 the field is the standard (H_y, -H_x).
        h = random_polynomial_expr(rng, 2)
        z = PhasePoint.from_array(random_point(rng, 2))
        jet = ex.evaluate_jet(h, z.as_array())
        v = deformed_field(h, 1.0, z)
        assert v.as_array() == pytest.approx(
            np.concatenate([jet.gradient[2:], -jet.gradient[:2]]), abs=1e-13
        )

    def test_vanishes_at_critical_point(self):
        h = ex.parse(OSC, 1)
        v = deformed_field(h, 0.3, PhasePoint((0.0,), (0.0,)))
        assert v.as_array() == pytest.approx(np.zeros(2), abs=0)

    def test_rejects_q_zero(self):
        with pytest.raises(ValueError):
            deformed_field(ex.parse(OSC, 1), 0.0, PhasePoint((1.0,), (0.0,)))


class TestDissipationIdentity:
    def test_hand_case(self):
        # [DERIVED] H = x1 y1, q = 1/3, z = (1,1):
        # dH(X^q_H) = (q^{-1}-1) H_x H_y = 2.
        h = ex.parse("x1*y1", 1)
        f = HamiltonianField(h, 1.0 / 3.0)
        z = np.array([1.0, 1.0])
        assert float(f.gradient(z) @ f.field(z)) == pytest.approx(2.0, abs=1e-13)
        assert energy_derivative_defect(h, 1.0 / 3.0, PhasePoint((1.0,), (1.0,))) < 1e-14

    def test_random_sweep(self, rng):
        # [DERIVED] the identity holds for every (H, q, z) to rounding error.
        for _ in range(100):
            h = random_polynomial_expr(rng, 2)
            z = PhasePoint.from_array(random_point(rng, 2, scale=2.0))
            for q in (-2.0, -1.0, 0.5, 1.0, 1.5):
                assert energy_derivative_defect(h, q, z) < 1e-12


class TestIntegrate:
    def test_oscillator_energy_conserved_at_q_one(self):
        # [DERIVED] circular orbit: |z(t)|^2 = 5 for all t from z0 = (1, 2).
        spec = FlowSpec(ex.parse(OSC, 1), 1, 1.0, step=1e-3, t_final=10.0, sample_stride=100)
        traj = integrate(spec, PhasePoint((1.0,), (2.0,)))
        radii = np.sum(traj.zs**2, axis=1)
        assert np.max(np.abs(radii - 5.0)) < 1e-8
        assert np.max(np.abs(traj.energies - 2.5)) < 1e-8

    @pytest.mark.parametrize(
        "q,direction", [(2.0, -1.0), (1.0, 0.0), (0.5, 1.0)]
    )
    def test_regime_trichotomy_on_conformal_model(self, q, direction):
        # [DERIVED] H = x1 y1 from (1,1): H(t) = e^{(1/q - 1) t}, so H is
        # decreasing for q > 1, constant at q = 1, increasing for q < 1.
        spec = FlowSpec(
            ex.parse("x1*y1", 1), 1, q, integrator="rkf45",
            rel_tol=1e-11, abs_tol=1e-13, t_final=1.0, sample_stride=10,
        )
        traj = integrate(spec, PhasePoint((1.0,), (1.0,)))
        want = math.exp((1.0 / q - 1.0) * 1.0)
        assert traj.energies[-1] == pytest.approx(want, rel=1e-8)
        delta = traj.energies[-1] - traj.energies[0]
        if direction == 0.0:
            assert abs(delta) < 1e-9
        else:
            assert math.copysign(1.0, delta) == direction

    def test_rk4_is_fourth_order(self):
        # [DERIVED] halving the step cuts the error by ~2^4; the measured
        # ratio lands in [12, 20] on the oscillator over one period-ish span.
        z0 = PhasePoint((1.0,), (0.0,))
        h = ex.parse(OSC, 1)

        def final_error(step):
            spec = FlowSpec(h, 1, 1.0, step=step, t_final=2.0, sample_stride=10**9)
            traj = integrate(spec, z0)
            exact = np.array([math.cos(2.0), -math.sin(2.0)])
            return float(np.max(np.abs(traj.zs[-1] - exact)))

        ratio = final_error(2e-2) / final_error(1e-2)
        assert 12.0 <= ratio <= 20.0

    def test_samples_well_formed(self):
        spec = FlowSpec(ex.parse(OSC, 1), 1, 0.5, step=1e-2, t_final=0.5, sample_stride=5)
        traj = integrate(spec, PhasePoint((1.0,), (2.0,)))
        assert traj.ts[0] == 0.0
        assert traj.zs[0] == pytest.approx([1.0, 2.0], abs=0)
        assert np.all(np.diff(traj.ts) > 0)
        assert traj.ts[-1] == pytest.approx(0.5, abs=1e-12)

    def test_blow_up_raises(self):
        # [DERIVED] H = x1^2 y1^2 escapes in finite time (~0.5) from (1,1).
        spec = FlowSpec(
            ex.parse("x1^2*y1^2", 1), 1, 0.5, integrator="rkf45", t_final=2.0
        )
        with pytest.raises(IntegrationError):
            integrate(spec, PhasePoint((1.0,), (1.0,)))

    def test_spec_validation(self):
        h = ex.parse(OSC, 1)
        with pytest.raises(ValueError):
            FlowSpec(h, 1, 0.0)
        with pytest.raises(ValueError):
            FlowSpec(h, 1, 1.0, integrator="euler")
        with pytest.raises(ValueError):
            FlowSpec(h, 1, 1.0, t_final=-1.0)
        with pytest.raises(ValueError):
            FlowSpec(h, 1, 1.0, sample_stride=0)
        with pytest.raises(ValueError):
            FlowSpec(h, 2, 1.0)  # dimension mismatch


class TestVariational:
    def test_identity_at_t_zero(self):
        spec = FlowSpec(ex.parse(OSC, 1), 1, 1.0, step=1e-2, t_final=0.1)
        vf = integrate_variational(spec, PhasePoint((1.0,), (0.5,)))
        assert vf.jacobians[0] == pytest.approx(np.eye(2), abs=0)

    @pytest.mark.parametrize("q", [0.5, 2.0])
    def test_conformal_jacobian_closed_form(self, q):
        # [DERIVED] H = x1 y1 is linear, so Dphi_t = diag(e^{t/q}, e^{-t}).
        spec = FlowSpec(
            ex.parse("x1*y1", 1), 1, q, integrator="rkf45",
            rel_tol=1e-11, abs_tol=1e-13, t_final=1.0, sample_stride=10,
        )
        vf = integrate_variational(spec, PhasePoint((0.3,), (0.7,)))
        want = np.diag([math.exp(1.0 / q), math.exp(-1.0)])
        assert vf.jacobians[-1] == pytest.approx(want, abs=1e-6)

    def test_symplectic_at_q_one(self):
        # [DERIVED] pendulum flow at q = 1 preserves omega to solver accuracy.
        spec = FlowSpec(
            ex.parse("y1^2/2 + (1 - cos(x1))", 1), 1, 1.0, integrator="rkf45",
            rel_tol=1e-11, abs_tol=1e-13, t_final=5.0, sample_stride=50,
        )
        vf = integrate_variational(spec, PhasePoint((1.0,), (0.5,)))
        defects = pullback_defect(vf, mode="symplectic")
        assert max(d for _, d in defects) < 1e-6

    def test_liouville_at_q_one(self):
        spec = FlowSpec(
            ex.parse("y1^2/2 + (1 - cos(x1))", 1), 1, 1.0, integrator="rkf45",
            rel_tol=1e-11, abs_tol=1e-13, t_final=5.0, sample_stride=50,
        )
        vf = integrate_variational(spec, PhasePoint((1.0,), (0.5,)))
        dets = [np.linalg.det(d) for d in vf.jacobians]
        assert np.max(np.abs(np.array(dets) - 1.0)) < 1e-6
        assert all(d > 0 for d in dets)

    def test_conformal_pullback(self):
        # [DERIVED] H = x1 y1, q = 1/2: phi_t^* omega = e^t omega (c = 1).
        spec = FlowSpec(
            ex.parse("x1*y1", 1), 1, 0.5, integrator="rkf45",
            rel_tol=1e-11, abs_tol=1e-13, t_final=1.0, sample_stride=10,
        )
        vf = integrate_variational(spec, PhasePoint((1.0,), (1.0,)))
        defects = pullback_defect(vf, mode="conformal", c=1.0)
        assert max(d for _, d in defects) < 1e-6

    def test_nonsimple_defect_is_genuine(self):
        # [DERIVED] H = x1^2 y1^2 at q = 1/2 is neither symplectic nor
        # conformal: the defect reaches ~3 by t = 1 and is step-independent.
        def run(rel):
            spec = FlowSpec(
                ex.parse("x1^2*y1^2", 1), 1, 0.5, integrator="rkf45",
                rel_tol=rel, abs_tol=rel * 1e-2, t_final=1.0, sample_stride=100,
            )
            vf = integrate_variational(spec, PhasePoint((0.5,), (0.5,)))
            return pullback_defect(vf, mode="symplectic")[-1][1]

        d1 = run(1e-9)
        d2 = run(1e-11)
        assert d1 > 1e-2 and d2 > 1e-2
        assert d1 == pytest.approx(d2, rel=1e-6)

    def test_pullback_mode_validation(self):
        spec = FlowSpec(ex.parse(OSC, 1), 1, 1.0, step=1e-2, t_final=0.1)
        vf = integrate_variational(spec, PhasePoint((1.0,), (0.0,)))
        with pytest.raises(ValueError):
            pullback_defect(vf, mode="volume")
        with pytest.raises(ValueError):
            pullback_defect(vf, mode="conformal")  # missing c


class TestCsv:
    def test_format(self, tmp_path):
        spec = FlowSpec(ex.parse(OSC, 1), 1, 1.0, step=1e-2, t_final=0.1, sample_stride=5)
        traj = integrate(spec, PhasePoint((1.0,), (2.0,)))
        path = tmp_path / "traj.csv"
        trajectory_to_csv(traj, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x1,y1,H"
        assert len(lines) == len(traj.ts) + 1
        first = lines[1].split(",")
        assert float(first[0]) == 0.0
        assert float(first[1]) == 1.0 and float(first[2]) == 2.0
        # 17 significant digits survive a float round trip exactly
        again = [float(v) for v in lines[-1].split(",")]
        assert again[1] == traj.zs[-1][0] and again[2] == traj.zs[-1][1]

"""Flows of deformed Hamiltonian fields and their variational equations.

The field of a Hamiltonian H at parameter q is, in flat coordinates,

    X^q_H(z) = (q^{-1} dH/dy, -dH/dx),

the unique solution of omega(X, .) = -d_q H under the sign convention of
the phase module.  Flows are integrated with a fixed-step classical RK4 or
an adaptive Fehlberg RKF45; the Jacobian of the flow map is co-integrated
from the exact symbolic Hessian of H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .phase import PhasePoint, omega_matrix, wrap_angles

__all__ = [
    "FlowSpec",
    "Trajectory",
    "VariationalFlow",
    "IntegrationError",
    "HamiltonianField",
    "deformed_field",
    "energy_derivative_defect",
    "integrate",
    "integrate_variational",
    "pullback_defect",
    "trajectory_to_csv",
]


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


@dataclass
class FlowSpec:
    hamiltonian: ex.Node
    n: int
    q: float
    space: str = "plane"
    integrator: str = "rk4"  # "rk4" or "rkf45"
    step: float = 1e-3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    t_final: float = 1.0
    sample_stride: int = 1

    def __post_init__(self):
        if self.q == 0:
            raise ValueError("q must be nonzero")
        if self.space not in ("plane", "torus"):
            raise ValueError(f"unknown space {self.space!r}")
        if self.integrator not in ("rk4", "rkf45"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.step <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("step and tolerances must be positive")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be a positive integer")
        if self.hamiltonian.n != self.n:
            raise ValueError("Hamiltonian dimension does not match n")


@dataclass
class Trajectory:
    """Time-sampled solution of zdot = X^q_H(z)."""

    ts: np.ndarray
    zs: np.ndarray  # shape (m, 2n), torus x-coordinates wrapped at samples
    energies: np.ndarray
    n: int
    space: str = "plane"

    @property
    def samples(self):
        return [
            (float(t), PhasePoint.from_array(z, self.space), float(h))
            for t, z, h in zip(self.ts, self.zs, self.energies)
        ]


@dataclass
class VariationalFlow:
    trajectory: Trajectory
    jacobians: np.ndarray  # shape (m, 2n, 2n), aligned with samples


class HamiltonianField:
    """Compiled field, energy and field-Jacobian evaluation for one (H, q)."""

    def __init__(self, hamiltonian: ex.Node, q: float):
        if q == 0:
            raise ValueError("q must be nonzero")
        self.n = hamiltonian.n
        self.q = float(q)
        self.jet = ex.JetEvaluator(hamiltonian)
        self._qinv = 1.0 / float(q)

    def energy(self, z) -> float:
        return self.jet.value(z)

    def gradient(self, z) -> np.ndarray:
        return self.jet.gradient(z)

    def field(self, z) -> np.ndarray:
        g = self.jet.gradient(z)
        n = self.n
        out = np.empty(2 * n)
        out[:n] = self._qinv * g[n:]
        out[n:] = -g[:n]
        return out

    def field_jacobian(self, z) -> np.ndarray:
        h = self.jet.hessian(z)
        n = self.n
        out = np.empty((2 * n, 2 * n))
        out[:n, :] = self._qinv * h[n:, :]
        out[n:, :] = -h[:n, :]
        return out


def deformed_field(hamiltonian: ex.Node, q: float, z: PhasePoint):
    """X^q_H(z) = (q^{-1} dH/dy, -dH/dx) as a TangentVector."""
    from .phase import TangentVector

    f = HamiltonianField(hamiltonian, q)
    v = f.field(z.as_array())
    return TangentVector.from_array(v)


def energy_derivative_defect(hamiltonian: ex.Node, q: float, z: PhasePoint) -> float:
    """Relative defect of the dissipation identity

        dH(X^q_H) = (q^{-1} - 1) sum_i (dH/dx_i)(dH/dy_i),

    which holds analytically for every q != 0; the result is the floating
    point residue normalized by the scale of the terms involved.
    """
    f = HamiltonianField(hamiltonian, q)
    za = z.as_array()
    g = f.gradient(za)
    n = f.n
    lhs = float(g @ f.field(za))
    rhs = (1.0 / q - 1.0) * float(g[:n] @ g[n:])
    scale = (1.0 + 1.0 / abs(q)) * float(np.abs(g[:n]) @ np.abs(g[n:]))
    return abs(lhs - rhs) / max(1.0, scale)


# ---------------------------------------------------------------------------
# Steppers.  Both drive a generic autonomous right-hand side and invoke a
# callback at sample times; integration always runs in the covering space,
# torus reduction happens only when samples are stored.


def _rk4_step(rhs, z, h):
    k1 = rhs(z)
    k2 = rhs(z + 0.5 * h * k1)
    k3 = rhs(z + 0.5 * h * k2)
    k4 = rhs(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_path(rhs, z0, t_final, step, stride, observe):
    z = np.asarray(z0, dtype=float)
    nsteps = max(1, int(round(t_final / step)))
    h = t_final / nsteps
    observe(0.0, z)
    for k in range(1, nsteps + 1):
        z = _rk4_step(rhs, z, h)
        if not np.all(np.isfinite(z)):
            raise IntegrationError("solution blew up", k * h)
        if k % stride == 0 or k == nsteps:
            observe(k * h, z)
    return z


# Fehlberg 4(5) tableau.
_RKF_A = [
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
]
_RKF_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_RKF_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)


def rkf45_path(rhs, z0, t_final, rel_tol, abs_tol, stride, observe, h0=None):
    z = np.asarray(z0, dtype=float)
    t = 0.0
    h = h0 if h0 is not None else min(1e-2, t_final)
    observe(t, z)
    accepted = 0
    while t < t_final:
        h = min(h, t_final - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError("step size underflow (stiff blow-up)", t)
        ks = []
        for row in _RKF_A:
            zi = z + h * sum(c * k for c, k in zip(row, ks)) if row else z
            ks.append(rhs(zi))
        z5 = z + h * sum(b * k for b, k in zip(_RKF_B5, ks))
        z4 = z + h * sum(b * k for b, k in zip(_RKF_B4, ks))
        if not (np.all(np.isfinite(z5)) and np.all(np.isfinite(z4))):
            h *= 0.25
            continue
        scale = abs_tol + rel_tol * np.maximum(np.abs(z), np.abs(z5))
        err = float(np.sqrt(np.mean(((z5 - z4) / scale) ** 2)))
        if err <= 1.0:
            t += h
            z = z5
            accepted += 1
            if accepted % stride == 0 or t >= t_final:
                observe(t, z)
        factor = 0.9 * (err ** -0.2) if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return z


def _make_observer(spec: FlowSpec, energy: Callable):
    ts: list[float] = []
    zs: list[np.ndarray] = []
    es: list[float] = []
    n = spec.n

    def observe(t, z):
        zz = np.array(z)
        if spec.space == "torus":
            zz[:n] = wrap_angles(zz[:n])
        ts.append(t)
        zs.append(zz)
        es.append(energy(z))

    return ts, zs, es, observe


def integrate(spec: FlowSpec, z0: PhasePoint) -> Trajectory:
    """Numerically solve zdot = X^q_H(z) from z0 and sample the result."""
    f = HamiltonianField(spec.hamiltonian, spec.q)
    ts, zs, es, observe = _make_observer(spec, lambda z: f.energy(z))
    za = z0.as_array()
    if spec.integrator == "rk4":
        rk4_path(f.field, za, spec.t_final, spec.step, spec.sample_stride, observe)
    else:
        rkf45_path(
            f.field, za, spec.t_final, spec.rel_tol, spec.abs_tol, spec.sample_stride, observe
        )
    return Trajectory(np.array(ts), np.array(zs), np.array(es), spec.n, spec.space)


def integrate_variational(spec: FlowSpec, z0: PhasePoint) -> VariationalFlow:
    """Co-integrate the flow with Ddot = (dX^q_H/dz) D, D(0) = I."""
    f = HamiltonianField(spec.hamiltonian, spec.q)
    n2 = 2 * spec.n

    def rhs(state):
        z = state[:n2]
        d = state[n2:].reshape(n2, n2)
        v = f.field(z)
        dd = f.field_jacobian(z) @ d
        return np.concatenate([v, dd.ravel()])

    ts: list[float] = []
    zs: list[np.ndarray] = []
    es: list[float] = []
    ds: list[np.ndarray] = []

    def observe(t, state):
        z = np.array(state[:n2])
        if spec.space == "torus":
            z[: spec.n] = wrap_angles(z[: spec.n])
        ts.append(t)
        zs.append(z)
        es.append(f.energy(state[:n2]))
        ds.append(np.array(state[n2:]).reshape(n2, n2))

    state0 = np.concatenate([z0.as_array(), np.eye(n2).ravel()])
    if spec.integrator == "rk4":
        rk4_path(rhs, state0, spec.t_final, spec.step, spec.sample_stride, observe)
    else:
        rkf45_path(
            rhs, state0, spec.t_final, spec.rel_tol, spec.abs_tol, spec.sample_stride, observe
        )
    trajectory = Trajectory(np.array(ts), np.array(zs), np.array(es), spec.n, spec.space)
    return VariationalFlow(trajectory, np.array(ds))


def pullback_defect(
    vf: VariationalFlow, mode: str = "symplectic", c: Optional[float] = None
) -> list[tuple[float, float]]:
    """Per-sample defect of the pullback of omega along the flow.

    symplectic:  || D^T O D - O ||_max
    conformal:   || D^T O D - e^{ct} O ||_max  (c required)
    """
    if mode not in ("symplectic", "conformal"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "conformal" and c is None:
        raise ValueError("conformal mode requires the rate c")
    n = vf.trajectory.n
    om = omega_matrix(n)
    out = []
    for t, d in zip(vf.trajectory.ts, vf.jacobians):
        target = om if mode == "symplectic" else math.exp(c * t) * om
        defect = float(np.max(np.abs(d.T @ om @ d - target)))
        out.append((float(t), defect))
    return out


def trajectory_to_csv(trajectory: Trajectory, path) -> None:
    """Write `t,x1..xn,y1..yn,H` rows with 17 significant digits."""
    n = trajectory.n
    header = (
        "t,"
        + ",".join(f"x{i}" for i in range(1, n + 1))
        + ","
        + ",".join(f"y{i}" for i in range(1, n + 1))
        + ",H"
    )
    lines = [header]
    for t, z, h in zip(trajectory.ts, trajectory.zs, trajectory.energies):
        values = [t, *z, h]
        lines.append(",".join(f"{v:.17g}" for v in values))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

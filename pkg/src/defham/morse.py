"""Lagrange-multiplier Morse complex and its adiabatic limit.

The Hamiltonian of the construction is

    H_q(z) = f(x) + sum_i y_i w_i(x) + q g(y),       q in (0, 1],

with f and the constraint components w_i on the base, g on the fibre, and
k the number of independent constraints.  Critical points solve w(x) = 0,
df(x) + y . dw(x) = 0 together with the fibre condition from g; their index
decomposes as base index + fibre index + k.  The boundary operator counts
isolated negative-G_q-gradient flow lines mod 2, and for q -> 0 the flow
lines collapse onto the constraint set Z, recovering constrained gradient
flow on w^{-1}(0).

When every w_i vanishes identically and g = 0 the pipeline degenerates to
ordinary Morse theory of f on the base (used by the torus sanity fixture);
in that mode all computations run in the n base coordinates only.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .dynamics import IntegrationError, rkf45_path
from .phase import PhasePoint, TWO_PI

__all__ = [
    "MorseSpec",
    "MorseOptions",
    "CriticalPoint",
    "IndexCertificate",
    "FlowLineCount",
    "MorseComplex",
    "MorseSpecError",
    "MorseConditionError",
    "build_hamiltonian",
    "find_critical_points",
    "critical_index",
    "count_flow_lines",
    "build_complex",
    "homology_ranks",
    "adiabatic_deviation",
    "mod2_rank",
    "complex_to_report",
]


class MorseSpecError(ValueError):
    pass


class MorseConditionError(RuntimeError):
    """A computed critical point violates the Morse (nondegeneracy) condition."""


@dataclass(frozen=True)
class MorseSpec:
    """Data of the multiplier Hamiltonian H_q = f + sum y_i w_i + q g."""

    n: int
    f: ex.Node
    w: tuple
    g: ex.Node
    q: float = 1.0
    space: str = "plane"

    def __init__(self, n, f, w, g, q=1.0, space="plane"):
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "w", tuple(w))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "q", float(q))
        object.__setattr__(self, "space", space)
        self._validate()

    def _validate(self):
        if not 0 < self.q <= 1:
            raise MorseSpecError(f"q must lie in (0, 1], got {self.q}")
        if self.space not in ("plane", "torus"):
            raise MorseSpecError(f"unknown space {self.space!r}")
        if len(self.w) != self.n:
            raise MorseSpecError(
                f"w must have {self.n} components, got {len(self.w)}"
            )
        for name, e in [("f", self.f)] + [
            (f"w{i+1}", wi) for i, wi in enumerate(self.w)
        ]:
            if e.n != self.n:
                raise MorseSpecError(f"{name} has dimension {e.n}, expected {self.n}")
            bad = [v for v in ex.used_variables(e) if v[0] == "y"]
            if bad:
                raise MorseSpecError(
                    f"{name} must depend only on base variables, "
                    f"found {bad[0][0]}{bad[0][1]} in '{ex.to_text(e)}'"
                )
        if self.g.n != self.n:
            raise MorseSpecError(f"g has dimension {self.g.n}, expected {self.n}")
        bad = [v for v in ex.used_variables(self.g) if v[0] == "x"]
        if bad:
            raise MorseSpecError(
                f"g must depend only on fibre variables, "
                f"found {bad[0][0]}{bad[0][1]} in '{ex.to_text(self.g)}'"
            )

    @property
    def constraint_rank(self) -> int:
        """k = number of constraint components that are not identically 0."""
        return sum(0 if _is_zero_expr(wi) else 1 for wi in self.w)

    @property
    def base_only(self) -> bool:
        return self.constraint_rank == 0 and _is_zero_expr(self.g)


def _is_zero_expr(e: ex.Node) -> bool:
    return isinstance(e, ex.Const) and e.value == 0


@dataclass(frozen=True)
class MorseOptions:
    """Numerical parameters of the Morse pipeline; defaults validated on the
    bundled fixtures."""

    search_box: Optional[tuple] = None  # per-coordinate (lo, hi); None = [-2,2]
    grid: int = 7
    newton_tol: float = 1e-12
    max_newton: int = 60
    dedupe_distance: float = 1e-6
    degenerate_tol: float = 1e-8
    shoot_radius: float = 0.05
    capture_radius: float = 1e-3
    near_miss_radius: float = 0.1
    mesh: int = 48
    t_max: float = 200.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11

    def box_for(self, dim: int) -> list[tuple[float, float]]:
        if self.search_box is None:
            return [(-2.0, 2.0)] * dim
        box = [tuple(map(float, b)) for b in self.search_box]
        if len(box) != dim:
            raise MorseSpecError(f"search box must have {dim} entries, got {len(box)}")
        return box


@dataclass(frozen=True)
class CriticalPoint:
    z: PhasePoint
    index: int
    residual: float
    hessian_spectrum: tuple

    def coords(self) -> np.ndarray:
        return self.z.as_array()


@dataclass(frozen=True)
class IndexCertificate:
    total: int
    base_index: int
    fibre_index: int
    k: int
    separable: bool

    @property
    def consistent(self) -> bool:
        return self.separable and self.total == self.base_index + self.fibre_index + self.k


@dataclass(frozen=True)
class FlowLineCount:
    raw: int
    mod2: int
    registered: tuple  # mesh parameters (indices) that registered
    escaped_fraction: float


@dataclass
class MorseComplex:
    generators: dict  # index -> list[CriticalPoint]
    boundary: dict  # m -> uint8 matrix C_m -> C_{m-1}, rows = C_{m-1}
    flow_line_counts: dict  # ((m, col), (m-1, row)) -> raw count
    q: float


# ---------------------------------------------------------------------------
# Hamiltonian assembly.


def build_hamiltonian(spec: MorseSpec) -> ex.Node:
    """H_q = f(x) + sum_i y_i w_i(x) + q g(y) as a single expression."""
    n = spec.n
    h: ex.Node = spec.f
    for i, wi in enumerate(spec.w, start=1):
        if _is_zero_expr(wi):
            continue
        h = ex.add(h, ex.mul(ex.var("y", i, n), wi))
    if not _is_zero_expr(spec.g):
        h = ex.add(h, ex.mul(ex.const(Fraction(spec.q), n), spec.g))
    return h


# ---------------------------------------------------------------------------
# Working system: unifies the full phase-space problem and the base-only
# degeneration behind one gradient/Hessian/flow interface.


class _System:
    def __init__(self, spec: MorseSpec, options: MorseOptions):
        self.spec = spec
        self.options = options
        self.base_only = spec.base_only
        n = spec.n
        if self.base_only:
            self.dim = n
            self.jet = ex.JetEvaluator(spec.f)
            self.scales = np.ones(n)
            self.wrap = spec.space == "torus"
        else:
            self.dim = 2 * n
            self.jet = ex.JetEvaluator(build_hamiltonian(spec))
            s = np.ones(2 * n)
            s[n:] = 1.0 / spec.q
            self.scales = s
            self.wrap = spec.space == "torus"
        self.sqrt_scales = np.sqrt(self.scales)
        self.box = options.box_for(self.dim)

    # base-only mode works on x alone; slice accordingly
    def gradient(self, u: np.ndarray) -> np.ndarray:
        if self.base_only:
            z = np.concatenate([u, np.zeros(self.spec.n)])
            return self.jet.gradient(z)[: self.spec.n]
        return self.jet.gradient(u)

    def hessian(self, u: np.ndarray) -> np.ndarray:
        if self.base_only:
            n = self.spec.n
            z = np.concatenate([u, np.zeros(n)])
            return self.jet.hessian(z)[:n, :n]
        return self.jet.hessian(u)

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """Negative G_q-gradient flow: (-dH/dx, -(1/q) dH/dy)."""
        return -self.scales * self.gradient(u)

    def symmetrized_hessian(self, u: np.ndarray) -> np.ndarray:
        """W^{1/2} Hess W^{1/2}: same inertia as the linearized flow."""
        s = self.sqrt_scales
        return self.hessian(u) * np.outer(s, s)

    def wrap_coords(self, u: np.ndarray) -> np.ndarray:
        if not self.wrap:
            return u
        out = np.array(u)
        if self.base_only:
            out[:] = np.mod(out, TWO_PI)
        else:
            n = self.spec.n
            out[:n] = np.mod(out[:n], TWO_PI)
        return out

    def distance(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.linalg.norm(self.displacement(v, u)))

    def displacement(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Shortest v - u, reducing angular components to (-pi, pi]."""
        d = np.asarray(v, dtype=float) - np.asarray(u, dtype=float)
        if self.wrap:
            upto = self.dim if self.base_only else self.spec.n
            d[:upto] = (d[:upto] + math.pi) % TWO_PI - math.pi
        return d

    def in_box(self, u: np.ndarray, margin: float = 0.5) -> bool:
        for axis, (value, (lo, hi)) in enumerate(zip(u, self.box)):
            if self.wrap and (self.base_only or axis < self.spec.n):
                continue  # angular coordinates are compact
            if value < lo - margin or value > hi + margin:
                return False
        return True

    def phase_point(self, u: np.ndarray) -> PhasePoint:
        if self.base_only:
            return PhasePoint(self.wrap_coords(u), np.zeros(self.spec.n), self.spec.space)
        return PhasePoint.from_array(self.wrap_coords(u), self.spec.space)


# ---------------------------------------------------------------------------
# Critical points.


def _newton_seeds(system: _System) -> list[np.ndarray]:
    grids = []
    for axis, (lo, hi) in enumerate(system.box):
        if system.wrap and (system.base_only or axis < system.spec.n):
            grids.append(np.linspace(0.0, TWO_PI, system.options.grid, endpoint=False))
        else:
            grids.append(np.linspace(lo, hi, system.options.grid))
    return [np.array(seed) for seed in itertools.product(*grids)]


def _newton(system: _System, seed: np.ndarray) -> Optional[np.ndarray]:
    opts = system.options
    u = np.array(seed, dtype=float)
    span = max(hi - lo for lo, hi in system.box)
    for _ in range(opts.max_newton):
        g = system.gradient(u)
        if not np.all(np.isfinite(g)):
            return None
        if np.max(np.abs(g)) <= opts.newton_tol:
            return u
        h = system.hessian(u)
        try:
            step, *_ = np.linalg.lstsq(h, g, rcond=None)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 10 * span:
            return None
        u = u - step
        u = system.wrap_coords(u)
    return None


def find_critical_points(
    spec: MorseSpec,
    search_box=None,
    grid: Optional[int] = None,
    options: Optional[MorseOptions] = None,
) -> list[CriticalPoint]:
    """Newton iteration from every grid seed, deduplicated and index-checked.

    Raises MorseConditionError when a converged point has a Hessian
    eigenvalue within the degeneracy tolerance of zero.
    """
    options = options or MorseOptions()
    if search_box is not None or grid is not None:
        options = replace(
            options,
            search_box=tuple(search_box) if search_box is not None else options.search_box,
            grid=grid if grid is not None else options.grid,
        )
    system = _System(spec, options)
    found: list[np.ndarray] = []
    for seed in _newton_seeds(system):
        u = _newton(system, seed)
        if u is None:
            continue
        u = system.wrap_coords(u)
        if not system.in_box(u, margin=1e-6):
            continue
        if any(system.distance(u, v) <= options.dedupe_distance for v in found):
            continue
        found.append(u)
    found.sort(key=lambda u: tuple(np.round(u, 9)))
    points = []
    for u in found:
        residual = float(np.linalg.norm(system.gradient(u)))
        spectrum = np.linalg.eigvalsh(system.symmetrized_hessian(u))
        if np.min(np.abs(spectrum)) < options.degenerate_tol:
            raise MorseConditionError(
                f"degenerate critical point at {np.round(u, 6).tolist()}: "
                f"Hessian eigenvalue {spectrum[np.argmin(np.abs(spectrum))]:.3e} "
                "within tolerance of zero"
            )
        index = int(np.sum(spectrum < 0))
        points.append(
            CriticalPoint(
                z=system.phase_point(u),
                index=index,
                residual=residual,
                hessian_spectrum=tuple(float(v) for v in spectrum),
            )
        )
    return points


def _nullspace(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if m.size == 0:
        return np.eye(m.shape[1] if m.ndim == 2 else 0)
    u, s, vt = np.linalg.svd(m)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return vt[rank:].T


def critical_index(
    spec: MorseSpec, p: CriticalPoint, options: Optional[MorseOptions] = None
) -> tuple[int, IndexCertificate]:
    """Morse index of p with the base/fibre/k decomposition certificate.

    index = #negative eigenvalues of the G_q-symmetrized Hessian; the
    certificate reports index_base(f|_{w^{-1}(0)}) + index_fibre(g) + k and
    whether it matches.
    """
    options = options or MorseOptions()
    system = _System(spec, options)
    u = p.coords() if not spec.base_only else np.array(p.z.x)
    spectrum = np.linalg.eigvalsh(system.symmetrized_hessian(u))
    if np.min(np.abs(spectrum)) < options.degenerate_tol:
        raise MorseConditionError(
            f"critical point at {np.round(u, 6).tolist()} fails nondegeneracy"
        )
    total = int(np.sum(spectrum < 0))

    n = spec.n
    if spec.base_only:
        cert = IndexCertificate(total, total, 0, 0, separable=True)
        return total, cert

    x = np.array(p.z.x)
    y = np.array(p.z.y)
    z = np.concatenate([x, y])
    k = spec.constraint_rank

    # Jacobian of the constraints: rows grad_x w_i (zero rows for zero w_i).
    jets_w = [None if _is_zero_expr(wi) else ex.JetEvaluator(wi) for wi in spec.w]
    dw = np.zeros((n, n))
    for i, jet in enumerate(jets_w):
        if jet is not None:
            dw[i, :] = jet.gradient(z)[:n]
    nonzero_rows = [i for i, jet in enumerate(jets_w) if jet is not None]
    dw_active = dw[nonzero_rows, :] if nonzero_rows else np.zeros((0, n))
    separable = int(np.linalg.matrix_rank(dw_active, tol=1e-8)) == k if k else True

    # Base index: Hessian of the Lagrangian f + y.w restricted to ker dw.
    a = ex.JetEvaluator(spec.f).hessian(z)[:n, :n]
    for i, jet in enumerate(jets_w):
        if jet is not None:
            a = a + y[i] * jet.hessian(z)[:n, :n]
    kernel = _nullspace(dw_active) if k else np.eye(n)
    if kernel.shape[1]:
        base_vals = np.linalg.eigvalsh(kernel.T @ a @ kernel)
        base_index = int(np.sum(base_vals < 0))
    else:
        base_index = 0

    # Fibre index: Hessian of g restricted to the vertical kernel of dw.
    vertical = _nullspace(dw.T)
    if vertical.shape[1] and not _is_zero_expr(spec.g):
        hg = ex.JetEvaluator(spec.g).hessian(z)[n:, n:]
        fibre_vals = np.linalg.eigvalsh(vertical.T @ hg @ vertical)
        fibre_index = int(np.sum(fibre_vals < 0))
    else:
        fibre_index = 0

    cert = IndexCertificate(total, base_index, fibre_index, k, separable)
    return total, cert


# ---------------------------------------------------------------------------
# Flow-line counting by unstable-sphere shooting.


def _unstable_frame(system: _System, u: np.ndarray) -> np.ndarray:
    """Columns spanning the unstable subspace of the linearized flow at u."""
    s = system.symmetrized_hessian(u)
    vals, vecs = np.linalg.eigh(s)
    unstable = vecs[:, vals < 0]
    frame = system.sqrt_scales[:, None] * unstable
    norms = np.linalg.norm(frame, axis=0)
    return frame / norms


@dataclass
class _ShotResult:
    outcome: str  # "captured", "escaped", "timeout"
    target: Optional[int]
    min_dist: np.ndarray  # closest approach per target along the path
    ts: list
    states: list
    last_state: Optional[np.ndarray] = None


def _shoot(
    system: _System,
    start: np.ndarray,
    targets: Sequence[np.ndarray],
    rel_tol: float,
    abs_tol: float,
    keep_states: bool = False,
) -> _ShotResult:
    opts = system.options
    delta = opts.capture_radius
    result = _ShotResult("timeout", None, np.full(len(targets), np.inf), [], [])

    class _Stop(Exception):
        pass

    def observe(t, z):
        z = np.asarray(z)
        result.last_state = np.array(z)
        if keep_states:
            result.ts.append(t)
            result.states.append(np.array(z))
        for idx, target in enumerate(targets):
            dist = system.distance(z, target)
            if dist < result.min_dist[idx]:
                result.min_dist[idx] = dist
            if dist < delta:
                result.outcome = "captured"
                result.target = idx
                raise _Stop
        if not system.in_box(z):
            result.outcome = "escaped"
            raise _Stop

    try:
        rkf45_path(
            system.rhs, start, opts.t_max, rel_tol, abs_tol, stride=1, observe=observe
        )
    except _Stop:
        pass
    except IntegrationError:
        result.outcome = "escaped"
    return result


def _angle_shot(system, u_minus, frame, theta, stop_points, rel_tol, keep_states=False):
    direction = math.cos(theta) * frame[:, 0] + math.sin(theta) * frame[:, 1]
    start = u_minus + system.options.shoot_radius * direction
    return _shoot(
        system, start, stop_points, rel_tol, rel_tol * 1e-2, keep_states=keep_states
    )


def _fate(system: _System, shot: _ShotResult):
    """Coarse classification of where a shot ended up.

    Captures are keyed by target; escapes by the box face crossed.  Two
    shots on the same side of a separatrix share a fate, so a fate change
    between neighbouring angles brackets a connecting orbit.
    """
    if shot.outcome == "captured":
        return ("captured", shot.target)
    if shot.outcome != "escaped" or shot.last_state is None:
        return ("timeout",)
    worst, axis, side = 0.0, -1, 0
    for a, (value, (lo, hi)) in enumerate(zip(shot.last_state, system.box)):
        if system.wrap and (system.base_only or a < system.spec.n):
            continue
        over = max(lo - value, value - hi)
        if over > worst:
            worst, axis = over, a
            side = -1 if lo - value > value - hi else 1
    return ("escaped", axis, side)


def _pair_refine(
    system, u_minus, frame, theta_a, theta_b, stop_points, keep_states, stages=4
):
    """Re-anchored shooting for separatrices too stiff for the angle alone.

    When the fast/slow eigenvalue ratio at the source is large the angular
    window that reaches the capture ball lies below double precision, and
    the angle bisection collapses onto two orbits with distinct escape
    fates that both still miss the ball.  The two orbits straddle the
    stable manifold of the target, so the segment between their closest
    approaches crosses it; bisecting along that segment recovers the
    capture with a fresh full mantissa of resolution, and each stage
    restarts from the refined pair until an orbit enters the ball.

    Trial starts inside the capture ball are rejected so that only shots
    with a genuine transit count.
    """
    opts = system.options
    rel = min(opts.rel_tol, 1e-12)
    delta = opts.capture_radius
    shot_a = _angle_shot(system, u_minus, frame, theta_a, stop_points, rel, True)
    shot_b = _angle_shot(system, u_minus, frame, theta_b, stop_points, rel, True)
    prefix_ts: list = []
    prefix_states: list = []

    def finish(shot):
        if not keep_states:
            shot.states = []
            shot.ts = []
        elif prefix_states:
            # a refined tail starts mid-segment, off the true orbit; the
            # genuine track up to the closest approach is what callers
            # measure along, so report that and drop the transient
            shot.states = list(prefix_states)
            shot.ts = list(prefix_ts)
        return shot

    for _ in range(stages):
        for shot in (shot_a, shot_b):
            if shot.outcome == "captured":
                return finish(shot)
        if not shot_a.states or not shot_b.states:
            return None
        fate_a, fate_b = _fate(system, shot_a), _fate(system, shot_b)
        if fate_a == fate_b:
            return None  # bracket lost; nothing left to straddle
        d_a = np.array(
            [[system.distance(z, t) for t in stop_points] for z in shot_a.states]
        )
        i_a, k = np.unravel_index(int(np.argmin(d_a)), d_a.shape)
        i_b = int(
            np.argmin([system.distance(z, stop_points[k]) for z in shot_b.states])
        )
        offset = prefix_ts[-1] if prefix_ts else 0.0
        if keep_states:
            # the true orbit lies between the bracketing pair, so states
            # are certified only while the pair still agrees; the meterable
            # part of the journey ends where the orbits split
            zb = np.array(shot_b.states)
            zb = zb[:: max(1, len(zb) // 512)]
            cut = i_a + 1
            for j in range(i_a + 1):
                d = zb - np.asarray(shot_a.states[j])
                if system.wrap:
                    upto = system.dim if system.base_only else system.spec.n
                    d[:, :upto] = (d[:, :upto] + math.pi) % TWO_PI - math.pi
                if float(np.min(np.linalg.norm(d, axis=1))) > 1e-2:
                    cut = j
                    break
            prefix_states.extend(shot_a.states[:cut])
            prefix_ts.extend(offset + t for t in shot_a.ts[:cut])
        z_a = np.array(shot_a.states[i_a])
        z_b = np.array(shot_b.states[i_b])
        segment = system.displacement(z_a, z_b)
        lo_s, hi_s = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo_s + hi_s)
            if mid == lo_s or mid == hi_s:
                break
            start = z_a + mid * segment
            if min(system.distance(start, t) for t in stop_points) <= delta:
                # the segment sags into the ball; an instant capture proves
                # nothing, so shrink toward the better-tracked side instead
                hi_s = mid
                continue
            trial = _shoot(system, start, stop_points, rel, rel * 1e-2, True)
            if trial.outcome == "captured":
                return finish(trial)
            fm = _fate(system, trial)
            if fm == fate_a:
                lo_s, shot_a = mid, trial
            else:
                hi_s, shot_b, fate_b = mid, trial, fm
    return None


def _bisect_lines(
    system, u_minus, frame, stop_points, lo, hi, fate_lo, fate_hi, keep_states
):
    """Captured shots on fate boundaries inside the angle interval [lo, hi].

    Bisection drives the angle onto the separatrix between two escape (or
    capture) behaviours; the boundary trajectory is a connecting orbit and
    registers by entering a capture ball.  A midpoint showing a third fate
    splits the interval and both halves are searched.

    For strongly stiff spectra the angular window that reaches the capture
    ball can lie below double precision, so a bracketed separatrix whose
    best shot still approaches a target within ``near_miss_radius`` is
    accepted once the interval has collapsed.
    """
    opts = system.options
    rel_tol = min(opts.rel_tol, 1e-12)
    lines = []
    work = [(lo, hi, fate_lo, fate_hi)]
    budget = 220
    while work and budget > 0:
        a, b, fa, fb = work.pop()
        best = None  # (distance, angle, shot, target)
        captured = False
        for _ in range(70):
            budget -= 1
            mid = 0.5 * (a + b)
            if mid == a or mid == b or budget <= 0:
                break
            shot = _angle_shot(
                system, u_minus, frame, mid, stop_points, rel_tol, keep_states
            )
            fm = _fate(system, shot)
            if fm[0] == "captured":
                lines.append((mid, shot))
                captured = True
                break
            if shot.min_dist.size and np.isfinite(shot.min_dist).any():
                k = int(np.argmin(shot.min_dist))
                if best is None or shot.min_dist[k] < best[0]:
                    best = (float(shot.min_dist[k]), mid, shot, k)
            if fm == fa:
                a = mid
            elif fm == fb:
                b = mid
            else:
                work.append((mid, b, fm, fb))
                b, fb = mid, fm
        # refinement is worthwhile when the collapsed bracket plausibly holds
        # a connecting orbit: either the best shot already came close, or the
        # two fates are escapes along one axis with opposite signs -- the
        # signature of a single fast transverse direction flipping across it
        opposed = (
            fa[0] == "escaped"
            and fb[0] == "escaped"
            and fa[1] == fb[1]
            and fa[2] == -fb[2]
        )
        promising = best is not None and (
            best[0] <= 5.0 * opts.near_miss_radius or opposed
        )
        if not captured and promising:
            dist, theta, shot, k = best
            refined = _pair_refine(
                system, u_minus, frame, a, b, stop_points, keep_states
            )
            if refined is not None:
                lines.append((theta, refined))
            elif dist <= opts.near_miss_radius:
                shot.outcome = "captured"
                shot.target = k
                lines.append((theta, shot))
    return lines


def _lines_from(
    system: _System,
    p_minus: CriticalPoint,
    stop_points: Sequence[np.ndarray],
    keep_states: bool = False,
) -> tuple[dict, float]:
    """All registered flow lines out of p_minus, grouped by capture target.

    Returns ({target index: [(angle, captured shot), ...]}, escaped
    fraction of the coarse sweep).  A coarse sweep over the unstable-sphere
    mesh collects direct captures and fate changes; each fate change is
    refined by bisection onto the separatrix.
    """
    opts = system.options
    u_minus = np.array(p_minus.z.x) if system.base_only else p_minus.coords()
    frame = _unstable_frame(system, u_minus)
    m = frame.shape[1]
    lines: dict[int, list] = {}

    def register(theta, shot):
        lines.setdefault(shot.target, []).append((theta % (2.0 * math.pi), shot))

    if m == 1:
        for sign, theta in ((1.0, 0.0), (-1.0, math.pi)):
            start = u_minus + sign * opts.shoot_radius * frame[:, 0]
            shot = _shoot(
                system, start, stop_points, opts.rel_tol, opts.abs_tol, keep_states
            )
            if shot.outcome == "captured":
                register(theta, shot)
        return lines, 0.0

    if m != 2:
        raise NotImplementedError(
            f"shooting mesh implemented for unstable dimension <= 2, got {m}"
        )

    thetas = np.linspace(0.0, 2.0 * math.pi, opts.mesh, endpoint=False)
    coarse = [
        _angle_shot(system, u_minus, frame, t, stop_points, opts.rel_tol, keep_states)
        for t in thetas
    ]
    escaped = sum(1 for r in coarse if r.outcome == "escaped") / len(coarse)
    fates = [_fate(system, shot) for shot in coarse]
    for t, shot, fate in zip(thetas, coarse, fates):
        if fate[0] == "captured":
            register(float(t), shot)
    spacing = 2.0 * math.pi / opts.mesh
    for i in range(opts.mesh):
        j = (i + 1) % opts.mesh
        if fates[i] == fates[j]:
            continue
        found = _bisect_lines(
            system,
            u_minus,
            frame,
            stop_points,
            float(thetas[i]),
            float(thetas[i]) + spacing,
            fates[i],
            fates[j],
            keep_states,
        )
        for theta, shot in found:
            register(theta, shot)

    # collapse registrations of the same orbit: angles closer than half a
    # mesh cell that hit the same target count once
    for target, found in lines.items():
        deduped: list = []
        for theta, shot in sorted(found, key=lambda item: item[0]):
            gap = min(
                (
                    min(abs(theta - t), 2.0 * math.pi - abs(theta - t))
                    for t, _ in deduped
                ),
                default=np.inf,
            )
            if gap > 0.5 * spacing:
                deduped.append((theta, shot))
        lines[target] = deduped
    return lines, escaped


def count_flow_lines(
    spec: MorseSpec,
    p_minus: CriticalPoint,
    p_plus: CriticalPoint,
    options: Optional[MorseOptions] = None,
    all_points: Optional[Sequence[CriticalPoint]] = None,
) -> FlowLineCount:
    """Mod-2 (with raw) count of flow lines from p_minus down to p_plus.

    Shoots from a mesh on a small sphere in the unstable subspace of
    p_minus and bisects fate changes until trajectories enter the capture
    ball of p_plus; each registered separatrix is one flow line.
    """
    if p_minus.index - p_plus.index != 1:
        raise ValueError(
            f"index difference must be 1, got {p_minus.index} - {p_plus.index}"
        )
    options = options or MorseOptions()
    system = _System(spec, options)

    def coords(p: CriticalPoint) -> np.ndarray:
        return np.array(p.z.x) if system.base_only else p.coords()

    others = [p for p in (all_points or []) if p not in (p_minus, p_plus)]
    stop_points = [coords(p_plus)] + [coords(p) for p in others]
    lines, escaped = _lines_from(system, p_minus, stop_points)
    to_target = lines.get(0, [])
    if escaped > 0.5:
        warnings.warn(
            f"{escaped:.0%} of shooting directions escaped the search box; "
            "the Morse-Smale assumption may fail or the box may be too small",
            stacklevel=2,
        )
    raw = len(to_target)
    registered = tuple(round(theta, 9) for theta, _ in to_target)
    return FlowLineCount(
        raw=raw, mod2=raw % 2, registered=registered, escaped_fraction=escaped
    )


# ---------------------------------------------------------------------------
# Complex assembly and homology.


def build_complex(spec: MorseSpec, options: Optional[MorseOptions] = None) -> MorseComplex:
    """Critical points, mod-2 boundary matrices and flow-line counts.

    Raises MorseConditionError if the boundary operator fails d^2 = 0.
    """
    options = options or MorseOptions()
    system = _System(spec, options)
    points = find_critical_points(spec, options=options)
    generators: dict[int, list[CriticalPoint]] = {}
    for p in points:
        generators.setdefault(p.index, []).append(p)

    def coords(p: CriticalPoint) -> np.ndarray:
        return np.array(p.z.x) if system.base_only else p.coords()

    boundary: dict[int, np.ndarray] = {}
    counts: dict = {}
    for m, sources in sorted(generators.items()):
        rows = generators.get(m - 1, [])
        if not rows:
            continue
        matrix = np.zeros((len(rows), len(sources)), dtype=np.uint8)
        for col, p_minus in enumerate(sources):
            stop_points = [coords(p) for p in rows] + [
                coords(p) for p in points if p.index < m - 1
            ]
            lines, _ = _lines_from(system, p_minus, stop_points)
            for row in range(len(rows)):
                raw = len(lines.get(row, []))
                counts[((m, col), (m - 1, row))] = raw
                matrix[row, col] = raw % 2
        boundary[m] = matrix

    # d^2 = 0 over Z/2
    for m in boundary:
        if m - 1 in boundary:
            square = (boundary[m - 1].astype(int) @ boundary[m].astype(int)) % 2
            if np.any(square):
                raise MorseConditionError(
                    f"boundary fails d^2 = 0 between degrees {m} and {m - 2}; "
                    "flow-line counting is inconsistent"
                )
    return MorseComplex(generators=generators, boundary=boundary, flow_line_counts=counts, q=spec.q)


def mod2_rank(matrix: np.ndarray) -> int:
    m = np.array(matrix, dtype=np.uint8) % 2
    rank = 0
    rows, cols = m.shape
    row = 0
    for col in range(cols):
        pivot = None
        for r in range(row, rows):
            if m[r, col]:
                pivot = r
                break
        if pivot is None:
            continue
        m[[row, pivot]] = m[[pivot, row]]
        for r in range(rows):
            if r != row and m[r, col]:
                m[r] ^= m[row]
        rank += 1
        row += 1
        if row == rows:
            break
    return rank


def homology_ranks(complex_: MorseComplex) -> dict[int, int]:
    """Mod-2 homology ranks by Gaussian elimination over Z/2."""
    ranks = {}
    for m, gens in sorted(complex_.generators.items()):
        dim = len(gens)
        r_in = mod2_rank(complex_.boundary[m]) if m in complex_.boundary else 0
        r_out = mod2_rank(complex_.boundary[m + 1]) if m + 1 in complex_.boundary else 0
        ranks[m] = dim - r_in - r_out
    return {m: r for m, r in ranks.items() if r != 0 or m in complex_.generators}


# ---------------------------------------------------------------------------
# Adiabatic limit.


class _DeviationMeter:
    """Distance of a phase path from the constraint set Z.

    deviation(z) = ||w(x)|| + ||P_N (df(x) + y . dw(x))|| where P_N projects
    onto the span of the constraint gradients; both terms vanish identically
    on Z.
    """

    def __init__(self, spec: MorseSpec):
        self.n = spec.n
        self.jet_f = ex.JetEvaluator(spec.f)
        self.jets_w = [
            None if _is_zero_expr(wi) else ex.JetEvaluator(wi) for wi in spec.w
        ]

    def __call__(self, z: np.ndarray) -> float:
        n = self.n
        x, y = z[:n], z[n:]
        w_vals = []
        dw = np.zeros((n, n))
        for i, jet in enumerate(self.jets_w):
            if jet is None:
                continue
            w_vals.append(jet.value(z))
            dw[i, :] = jet.gradient(z)[:n]
        residual = self.jet_f.gradient(z)[:n] + dw.T @ y
        rows = dw[[i for i, jet in enumerate(self.jets_w) if jet is not None], :]
        if rows.size:
            # projection of the residual onto the constraint-gradient span
            pinv = np.linalg.pinv(rows)
            proj = rows.T @ (pinv.T @ residual)
        else:
            proj = np.zeros(n)
        return float(np.linalg.norm(w_vals) + np.linalg.norm(proj))


def _match_point(points: Sequence[CriticalPoint], reference: CriticalPoint) -> CriticalPoint:
    same_index = [p for p in points if p.index == reference.index]
    if not same_index:
        raise MorseConditionError(
            f"no critical point of index {reference.index} found"
        )
    ref = reference.coords()
    return min(same_index, key=lambda p: float(np.linalg.norm(p.coords() - ref)))


def adiabatic_deviation(
    spec: MorseSpec,
    q_list: Sequence[float],
    pair: Optional[tuple[CriticalPoint, CriticalPoint]] = None,
    options: Optional[MorseOptions] = None,
) -> list[tuple[float, float]]:
    """Max distance of a recomputed flow line from Z, for each q in q_list.

    For each q the critical points are re-solved, the flow line joining the
    chosen pair is re-shot, and the trajectory's maximum deviation from the
    constraint set is recorded.  The limit q -> 0 forces the flow onto Z, so
    the deviations should decrease.
    """
    options = options or MorseOptions()
    if not q_list:
        raise MorseSpecError("q_list must be nonempty")
    if any(not 0 < q <= 1 for q in q_list):
        raise MorseSpecError("all q values must lie in (0, 1]")
    if spec.base_only:
        raise MorseSpecError("adiabatic deviation needs a nontrivial constraint")

    # The deviation is a mid-journey quantity (it vanishes at both critical
    # points), so the flow line only needs to be located, not threaded into
    # a tight capture ball; a relaxed ball keeps the shooting well inside
    # the floating-point budget as the q -> 0 stiffness grows.
    options = replace(options, capture_radius=max(options.capture_radius, 0.15))
    meter = _DeviationMeter(spec)
    out = []
    reference_pair = pair
    for q in q_list:
        spec_q = MorseSpec(spec.n, spec.f, spec.w, spec.g, q=q, space=spec.space)
        points = find_critical_points(spec_q, options=options)
        if reference_pair is None:
            by_index = sorted(points, key=lambda p: p.index)
            p_plus, p_minus = by_index[0], by_index[-1]
            if p_minus.index - p_plus.index != 1:
                raise MorseConditionError("no index-difference-1 pair found")
            reference_pair = (p_minus, p_plus)
        p_minus = _match_point(points, reference_pair[0])
        p_plus = _match_point(points, reference_pair[1])

        system = _System(spec_q, options)
        others = [p for p in points if p not in (p_minus, p_plus)]
        stop_points = [p_plus.coords()] + [p.coords() for p in others]
        lines, _ = _lines_from(system, p_minus, stop_points, keep_states=True)
        best = None
        for _, shot in lines.get(0, []):
            deviation = max(meter(z) for z in shot.states)
            if best is None or deviation < best:
                best = deviation
        if best is None:
            raise MorseConditionError(f"no flow line found between the pair at q={q}")
        out.append((float(q), float(best)))
    return out


# ---------------------------------------------------------------------------
# Report serialization.


def complex_to_report(
    complex_: MorseComplex, adiabatic: Optional[list[tuple[float, float]]] = None
) -> dict:
    points = []
    for m in sorted(complex_.generators):
        for p in complex_.generators[m]:
            points.append(
                {
                    "z": [float(v) for v in p.coords()],
                    "index": m,
                    "residual": p.residual,
                }
            )
    doc = {
        "critical_points": points,
        "boundary": {
            str(m): matrix.astype(int).tolist() for m, matrix in sorted(complex_.boundary.items())
        },
        "homology_ranks": {str(m): r for m, r in sorted(homology_ranks(complex_).items())},
    }
    if adiabatic is not None:
        doc["adiabatic"] = [{"q": q, "deviation": d} for q, d in adiabatic]
    return doc

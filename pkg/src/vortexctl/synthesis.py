"""N controls for N vortices: global synthesis along reference curves and local straight-line synthesis.

The control is always defined pointwise by inverting the coupled field:
``y(t) = F^{-1}_{Gamma(t)}(dGamma/dt(t))``, so the controlled vortices follow
the reference curves ``Gamma`` exactly (up to integration error). Inversions
are solved at every node and midpoint of the integration grid, so the
integrator sees exact control values; a cubic Hermite interpolant with
implicitly differentiated slopes fills the gaps.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .curves import (BasePath, TrochoidCurve, build_trochoid_family, route_base_paths, straight_line,
                     transition_curve)
from .dynamics import ControlSet, IntegratorSettings, Trajectory, VortexConfig, integrate
from .errors import (ContainmentViolated, DTooLarge, InfeasibleClearance, MembershipViolated,
                     SpeedFloorUnachievable)
from .inversion import (F_full_arrays, FieldContext, SpeedFloor, calibrate_speed_floor, control_velocity,
                        invert_along, single_inverse)
from .kernel import perp
from .paths import ControlPath, concat, hermite_path

log = logging.getLogger(__name__)

RATE_FACTOR = 3.0
STEP_ANGLE = 0.05
SPEED_MARGIN = 1.5
DRIFT_RATIO = 3.0
STRAIGHT_EXPONENT = 4.0
AUTO_RADIUS = 10.0
JOIN_CHECK = 1e-8
CONTAINMENT_TOL = 1e-9


# --------------------------------------------------------------------------
# plan container
# --------------------------------------------------------------------------

@dataclass
class SynthesisPlan:
    """Reference curves, controls and the integration grid they were solved on.

    ``reference_curves[i]`` is the trajectory vortex ``i`` is meant to follow
    on the whole horizon; ``controls[k]`` is the control path of intensity
    ``gamma_c[k]``. ``r_bar`` is the largest radius with
    ``|y_k - Gamma_j| >= 2 r_bar`` and ``|Gamma_i - Gamma_j| >= 4 r_bar`` on the grid.
    """

    reference_curves: list[ControlPath]
    controls: list[ControlPath]
    r_bar: float
    v_min: float
    horizon: tuple[float, float]
    gamma: np.ndarray
    gamma_c: np.ndarray
    x0: np.ndarray
    xf: np.ndarray
    grid: np.ndarray = field(repr=False)
    kind: str = "trochoid"
    approach: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.reference_curves)

    def reference_positions(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        return np.stack([p.evaluate(t, 0) for p in self.reference_curves], axis=1)

    def control_positions(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        return np.stack([p.evaluate(t, 0) for p in self.controls], axis=1)

    def control_set(self) -> ControlSet:
        return ControlSet(tuple(self.controls), self.gamma_c)

    def settings(self) -> IntegratorSettings:
        return IntegratorSettings(method="rk4", grid=self.grid)

    def simulate(self) -> Trajectory:
        """Integrate the N-control system from ``x0`` on the plan grid."""
        return integrate(VortexConfig(self.x0, self.gamma), self.control_set(), self.horizon, self.settings())

    def ymin_margins(self, points: int = 10_000) -> tuple[float, float]:
        """Smallest control-to-reference and reference-to-reference distances on a uniform grid."""
        t = np.linspace(*self.horizon, points)
        return _margins(self.reference_positions(t), self.control_positions(t))

    def to_dict(self, samples: int = 2001) -> dict:
        t = np.linspace(*self.horizon, samples)
        ref = self.reference_positions(t)
        ctl = self.control_positions(t)
        return {
            "kind": self.kind,
            "horizon": list(self.horizon),
            "r_bar": self.r_bar,
            "v_min": self.v_min,
            "approach": self.approach,
            "gamma": self.gamma.tolist(),
            "gamma_c": self.gamma_c.tolist(),
            "x0": self.x0.tolist(),
            "xf": self.xf.tolist(),
            "grid_points": int(self.grid.size),
            "meta": to_jsonable(self.meta),
            "samples": {"t": t.tolist(), "reference": ref.tolist(), "controls": ctl.tolist()},
        }

    def write_json(self, path: str | Path, samples: int = 2001) -> None:
        Path(path).write_text(json.dumps(self.to_dict(samples), indent=1, sort_keys=True))


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _margins(ref, ctl):
    d = ref[:, :, None, :] - ctl[:, None, :, :]
    to_ctl = float(np.sqrt(np.min(np.sum(d * d, axis=-1))))
    n = ref.shape[1]
    if n < 2:
        return to_ctl, np.inf
    e = ref[:, :, None, :] - ref[:, None, :, :]
    r = np.sqrt(np.sum(e * e, axis=-1)) + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    return to_ctl, float(r.min())


def r_bar_from_margins(to_ctl: float, between: float) -> float:
    return float(min(to_ctl / 2, between / 4))


# --------------------------------------------------------------------------
# shared machinery
# --------------------------------------------------------------------------

def _validate_points(name, pts):
    pts = np.asarray(pts, float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} must be finite")
    n = pts.shape[0]
    if n > 1:
        d = pts[:, None] - pts[None]
        r = np.sqrt(np.sum(d * d, -1)) + np.eye(n)
        if r.min() <= 0:
            raise ValueError(f"{name} must be pairwise distinct")
    return pts


def _controls_on_grid(curves, gamma, gamma_c, grid, floor):
    """Invert the field at every grid node and midpoint; return Hermite control paths."""
    mids = 0.5 * (grid[1:] + grid[:-1])
    ts = np.empty(grid.size + mids.size)
    ts[0::2] = grid
    ts[1::2] = mids
    G0 = np.stack([c.evaluate(ts, 0) for c in curves], axis=1)
    G1 = np.stack([c.evaluate(ts, 1) for c in curves], axis=1)
    G2 = np.stack([c.evaluate(ts, 2) for c in curves], axis=1)
    y = invert_along(G0, gamma, gamma_c, G1, floor)
    yd = control_velocity(G0, gamma, gamma_c, y, G1, G2)
    residual = float(np.max(np.abs(F_full_arrays(G0, gamma, gamma_c, y) - G1)))
    return ts, y, yd, residual


def _uniform_grid(t0, t1, dt):
    steps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    return np.linspace(t0, t1, steps + 1)


def auto_control_starts(x0, xf) -> np.ndarray:
    """Control starts on a circle of radius 10 diameters around the centroid of ``x0`` and ``xf``."""
    pts = np.vstack([x0, xf])
    d = pts[:, None] - pts[None]
    diam = float(np.sqrt(np.max(np.sum(d * d, -1))))
    diam = diam if diam > 0 else 1.0
    center = pts.mean(axis=0)
    n = np.asarray(x0).reshape(-1, 2).shape[0]
    ang = 2 * np.pi * np.arange(n) / n + 0.5 * np.pi
    return center + AUTO_RADIUS * diam * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def plan_floor(xs_family, gamma, gamma_c, min_separation) -> SpeedFloor:
    """Speed floor for contexts whose vortices stay ``min_separation`` apart."""
    ctxs = [FieldContext(x, gamma, gamma_c) for x in xs_family]
    return calibrate_speed_floor(ctxs, min_separation=min_separation)


@dataclass
class ApproachPhase:
    """Short fast phase bringing the controls from far away next to the vortices."""

    epsilon: float
    r_tilde: float
    v_inf: np.ndarray
    paths: list[ControlPath]
    trajectory: Trajectory
    landing: np.ndarray

    @property
    def displacement(self) -> float:
        return float(np.max(np.linalg.norm(self.trajectory.states - self.trajectory.states[0], axis=-1)))

    @property
    def bound(self) -> float:
        return float(self.epsilon * np.max(self.v_inf))


def approach_phase(x0, y0, landing, gamma, gamma_c, t0: float = 0.0, steps_per_clearance: float = 40.0) -> ApproachPhase:
    """Move control ``i`` from ``y0[i]`` to ``landing[i]`` while every vortex barely moves.

    Each control walks around discs centered at the vortices (half its own
    landing distance around its own vortex, a quarter of the smallest vortex
    separation around the others), so every control stays at least
    ``r_tilde`` from every initial vortex position. The duration is half of
    ``r_tilde / (4 max_i |v_i|_inf)`` with
    ``|v_i|_inf = sum_{j != i} 2|gamma_j|/r_tilde + sum_j 2|gamma_c_j|/r_tilde``.
    """
    x0 = np.asarray(x0, float)
    y0 = np.asarray(y0, float)
    landing = np.asarray(landing, float)
    n = x0.shape[0]
    gamma = np.asarray(gamma, float)
    gamma_c = np.asarray(gamma_c, float)
    land_d = np.linalg.norm(landing - x0, axis=1)
    if n > 1:
        d = x0[:, None] - x0[None]
        sep0 = float(np.min(np.sqrt(np.sum(d * d, -1)) + np.diag(np.full(n, np.inf))))
        other_r = sep0 / 4
    else:
        other_r = np.inf
    r_tilde = float(min(land_d.min() / 2, other_r))
    v_inf = np.array([sum(2 * abs(gamma[j]) / r_tilde for j in range(n) if j != i)
                      + sum(2 * abs(gc) / r_tilde for gc in gamma_c) for i in range(n)])
    eps = 0.5 * r_tilde / (4 * float(v_inf.max()))
    paths = []
    longest = 0.0
    for i in range(n):
        obstacles = [(x0[j], land_d[i] / 2 if j == i else other_r) for j in range(n)]
        p = transition_curve(y0[i], landing[i], obstacles, eps, t0=t0)
        paths.append(p)
        longest = max(longest, float(np.linalg.norm(landing[i] - y0[i])) + np.pi * max(r_tilde, other_r if n > 1 else 0))
    grid = _uniform_grid(t0, t0 + eps, eps * r_tilde / (steps_per_clearance * max(longest, r_tilde)))
    traj = integrate(VortexConfig(x0, gamma), ControlSet(tuple(paths), gamma_c), (t0, t0 + eps),
                     IntegratorSettings(grid=grid))
    return ApproachPhase(eps, r_tilde, v_inf, paths, traj, landing)


def _trajectory_path(traj: Trajectory, gamma, gamma_c) -> list[ControlPath]:
    """Hermite interpolant of simulated vortex positions with exact field slopes, one path per vortex."""
    x = traj.states
    v = F_full_arrays_general(x, gamma, traj.controls, gamma_c)
    return [hermite_path(traj.times, x[:, i], v[:, i]) for i in range(x.shape[1])]


def F_full_arrays_general(x, gamma, y, gamma_c):
    """Velocities of vortices ``x`` (``(B, N, 2)``) with any number of controls ``y`` (``(B, M, 2)``)."""
    out = np.zeros_like(x)
    n = x.shape[1]
    for j in range(n):
        d = x - x[:, j:j + 1]
        r2 = np.sum(d * d, -1)
        r2[:, j] = np.inf
        out += gamma[j] * perp(d) / r2[..., None]
    for k in range(y.shape[1]):
        d = x - y[:, k:k + 1]
        out += gamma_c[k] * perp(d) / np.sum(d * d, -1)[..., None]
    return out


# --------------------------------------------------------------------------
# global synthesis
# --------------------------------------------------------------------------

def synthesize_N(x0, xf, T: float, gamma, gamma_c, y0=None, curves: str = "auto", t0: float = 0.0,
                 rate_factor: float = RATE_FACTOR, step_angle: float = STEP_ANGLE) -> SynthesisPlan:
    """Controls ``y_1..y_N`` driving ``x0`` to ``xf`` on ``[t0, t0 + T]``.

    Parameters
    ----------
    y0
        ``None`` lets the construction choose where the controls start (next
        to the vortices, no approach phase). ``"auto"`` places them on a far
        circle and ``(N, 2)`` coordinates place them explicitly; both add a
        short approach phase bringing the controls next to the vortices.
    curves
        ``"straight"`` (constant-velocity lines, no approach phase),
        ``"trochoid"`` (fast circling plus drift) or ``"auto"``: straight
        when the lines are admissible and mildly strained, trochoid otherwise.
    rate_factor
        Trochoid angular rate in units of ``|v|^2/|gamma_c|``, the strain a
        control exerts on its vortex. Above 1 the strain rotates faster than
        it can stretch perturbations, which keeps open-loop tracking stable.
    """
    x0 = _validate_points("x0", x0)
    xf = _validate_points("xf", xf)
    gamma = np.asarray(gamma, float).reshape(-1)
    gamma_c = np.asarray(gamma_c, float).reshape(-1)
    n = x0.shape[0]
    if not (xf.shape[0] == n == gamma.size == gamma_c.size):
        raise ValueError("x0, xf, gamma and gamma_c must have the same length")
    if not T > 0:
        raise ValueError("T must be positive")
    if isinstance(y0, str):
        if y0 != "auto":
            raise ValueError("y0 must be None, 'auto' or coordinates")
        y0 = auto_control_starts(x0, xf)
    elif y0 is not None:
        y0 = np.asarray(y0, float).reshape(n, 2)
        if np.min(np.linalg.norm(y0[:, None] - x0[None], axis=-1)) <= 0:
            raise ValueError("control starts must differ from the vortex starts")
    if curves not in ("auto", "straight", "trochoid"):
        raise ValueError(f"unknown curve style {curves!r}")
    if curves == "straight" and y0 is not None:
        raise ValueError("straight reference lines need controls starting next to the vortices (y0=None)")

    if curves in ("auto", "straight") and y0 is None:
        plan = _try_straight(x0, xf, T, gamma, gamma_c, t0, step_angle, force=curves == "straight")
        if plan is not None:
            return plan
    return _synthesize_trochoid(x0, xf, T, gamma, gamma_c, y0, t0, rate_factor, step_angle)


def _straight_separation(x0, xf, samples=2001):
    s = np.linspace(0, 1, samples)[:, None, None]
    pts = x0[None] + s * (xf - x0)[None]
    n = x0.shape[0]
    if n < 2:
        return np.inf
    d = pts[:, :, None] - pts[:, None]
    return float(np.min(np.sqrt(np.sum(d * d, -1)) + np.where(np.eye(n, dtype=bool), np.inf, 0.0)))


def _try_straight(x0, xf, T, gamma, gamma_c, t0, step_angle, force):
    n = x0.shape[0]
    delta = xf - x0
    speed = np.linalg.norm(delta, axis=1)
    sep = _straight_separation(x0, xf)
    if np.any(speed == 0) or sep <= 0:
        if force:
            raise InfeasibleClearance("straight lines are degenerate or collide")
        return None
    v = delta / T
    if n > 1:
        floor = plan_floor([x0, xf], gamma, gamma_c, sep)
    else:
        floor = SpeedFloor(np.full(1, np.finfo(float).tiny))
    exponent = float(np.max(speed**2 / (np.abs(gamma_c) * T)))
    ok_speed = bool(np.all(speed / T >= floor.a))
    if not force and (not ok_speed or exponent > STRAIGHT_EXPONENT):
        return None
    if not ok_speed:
        raise SpeedFloorUnachievable(f"straight speed {np.min(speed / T):.4g} below floor {floor.v_min:.4g}")
    curves = [straight_line(x0[i], xf[i], T, t0=t0) for i in range(n)]
    strain = float(np.max(np.sum(v * v, 1) / np.abs(gamma_c)))
    dt = min(T / 2000, step_angle / strain)
    grid = _uniform_grid(t0, t0 + T, dt)
    return _assemble(curves, None, gamma, gamma_c, x0, xf, (t0, t0 + T), grid, floor, "straight",
                     {"separation_floor": sep, "strain_exponent": exponent})


def _synthesize_trochoid(x0, xf, T, gamma, gamma_c, y0, t0, rate_factor, step_angle):
    n = x0.shape[0]
    if n > 1:
        base, dmin = route_base_paths(x0, xf, accept=0.6)
        sep = 0.75 * dmin
        floor = plan_floor([x0, xf], gamma, gamma_c, sep)
    else:
        base = [BasePath(x0[0], xf[0], 0.0)]
        dmin = sep = np.inf
        floor = SpeedFloor(np.full(1, np.finfo(float).tiny))
    drift = max(TrochoidCurve(b, 0.0, T, 0.0, 1.0, 0.0).max_drift_speed() if not b.is_loop else 0.0
                for b in base)
    V = max(SPEED_MARGIN * (floor.v_min + drift), DRIFT_RATIO * drift, 1e-3)
    dirs = []
    for b in base:
        if b.is_loop:
            dirs.append(np.array([1.0, 0.0]))
        else:
            u = b.eval(np.array([0.5]), 1)[0]
            dirs.append(u / np.linalg.norm(u))
    dirs = np.array(dirs)

    approach = None
    t_main = t0
    x_start = x0
    if y0 is not None:
        landing = np.array([single_inverse(x0[i], gamma_c[i], V * dirs[i]) for i in range(n)])
        approach = approach_phase(x0, y0, landing, gamma, gamma_c, t0=t0)
        t_main = t0 + approach.epsilon
        x_start = approach.trajectory.final.copy()
        v0 = F_full_arrays(x_start[None], gamma, gamma_c, landing[None])[0]
    else:
        v0 = V * dirs
    Tm = t0 + T - t_main
    if np.any(np.linalg.norm(v0, axis=1) < floor.v_min + drift):
        raise SpeedFloorUnachievable("start velocities leave no room above the speed floor")
    bases = [BasePath(x_start[i], xf[i], base[i].bend) for i in range(n)]
    speeds = np.linalg.norm(v0, axis=1)
    min_rates = rate_factor * (speeds + drift) ** 2 / np.abs(gamma_c)
    fam = build_trochoid_family(x_start, xf, v0, min_rates, (t_main, t0 + T), base=bases,
                                clearance=0.5 * sep if np.isfinite(sep) else None)
    omega = max(c.omega for c in fam.curves)
    grid_main = _uniform_grid(t_main, t0 + T, step_angle / omega)
    curves = list(fam.paths)
    meta = {"clearance": fam.clearance, "turns": fam.k, "omega": omega, "cruise_speed": V,
            "drift_speed": drift, "routing_separation": dmin}
    if approach is not None:
        meta.update({"approach_epsilon": approach.epsilon, "r_tilde": approach.r_tilde,
                     "approach_displacement": approach.displacement, "approach_bound": approach.bound})
    return _assemble(curves, approach, gamma, gamma_c, x0, xf, (t0, t0 + T), grid_main, floor, "trochoid", meta)


def _assemble(curves, approach, gamma, gamma_c, x0, xf, horizon, grid_main, floor, kind, meta):
    ts, y, yd, residual = _controls_on_grid(curves, gamma, gamma_c, grid_main, floor)
    n = len(curves)
    if approach is not None:
        mismatch = float(np.max(np.linalg.norm(y[0] - approach.landing, axis=1)))
        if mismatch > JOIN_CHECK * max(1.0, float(np.abs(approach.landing).max())):
            raise InfeasibleClearance(f"inverted control misses the landing point by {mismatch:.3e}")
        y[0] = approach.landing
        meta["landing_mismatch"] = mismatch
    controls = []
    refs = []
    app_refs = _trajectory_path(approach.trajectory, gamma, gamma_c) if approach is not None else None
    for k in range(n):
        main = hermite_path(ts, y[:, k], yd[:, k])
        main.label = "control"
        controls.append(concat(approach.paths[k], main) if approach is not None else main)
        refs.append(concat(app_refs[k], curves[k]) if approach is not None else curves[k])
    grid = grid_main if approach is None else np.concatenate([approach.trajectory.times[:-1], grid_main])
    ref_nodes = np.stack([r.evaluate(grid, 0) for r in refs], axis=1)
    ctl_nodes = np.stack([c.evaluate(grid, 0) for c in controls], axis=1)
    to_ctl, between = _margins(ref_nodes, ctl_nodes)
    meta = dict(meta)
    meta.update({"identity_residual": residual, "min_control_distance": to_ctl,
                 "min_reference_distance": between, "floor": floor.a.tolist()})
    return SynthesisPlan(refs, controls, r_bar_from_margins(to_ctl, between), floor.v_min, horizon,
                         gamma.copy(), gamma_c.copy(), x0.copy(), xf.copy(), grid, kind,
                         approach.epsilon if approach is not None else 0.0, meta)


def identity_residual(plan: SynthesisPlan, t) -> float:
    """``max |F_{Gamma(t)}(y(t)) - dGamma/dt(t)|`` at the given times (main phase only)."""
    t = np.atleast_1d(np.asarray(t, float))
    G0 = plan.reference_positions(t)
    G1 = np.stack([p.evaluate(t, 1) for p in plan.reference_curves], axis=1)
    y = plan.control_positions(t)
    return float(np.max(np.abs(F_full_arrays(G0, plan.gamma, plan.gamma_c, y) - G1)))


# --------------------------------------------------------------------------
# local straight-line synthesis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscHull:
    """Convex hull of two closed discs ``(c1, r1)`` and ``(c2, r2)``."""

    c1: tuple[float, float]
    r1: float
    c2: tuple[float, float]
    r2: float

    def __post_init__(self):
        h = float(np.hypot(self.c2[0] - self.c1[0], self.c2[1] - self.c1[1]))
        if h <= abs(self.r1 - self.r2):
            raise ValueError("one disc contains the other; the hull is a disc")

    def support(self, u) -> np.ndarray:
        """Support function ``max_{p in hull} <u, p>`` for unit directions ``u`` (``(K, 2)``)."""
        u = np.atleast_2d(u)
        return np.maximum(u @ np.asarray(self.c1) + self.r1, u @ np.asarray(self.c2) + self.r2)

    def signed_distance(self, p) -> np.ndarray:
        """Exact signed distance (negative inside)."""
        p = np.atleast_2d(np.asarray(p, float))
        c1 = np.asarray(self.c1, float)
        axis = np.asarray(self.c2, float) - c1
        h = float(np.linalg.norm(axis))
        ey = axis / h
        ex = perp(ey)
        q = p - c1
        px = np.abs(q @ ex)
        py = q @ ey
        b = (self.r1 - self.r2) / h
        a = np.sqrt(1 - b * b)
        k = -b * px + a * py
        d_first = np.hypot(px, py) - self.r1
        d_second = np.hypot(px, py - h) - self.r2
        d_side = a * px + b * py - self.r1
        return np.where(k < 0, d_first, np.where(k > a * h, d_second, d_side))

    def enclosing_disc(self) -> tuple[np.ndarray, float]:
        c1, c2 = np.asarray(self.c1, float), np.asarray(self.c2, float)
        h = float(np.linalg.norm(c2 - c1))
        radius = 0.5 * (h + self.r1 + self.r2)
        center = c1 + (c2 - c1) / h * (radius - self.r1)
        return center, radius

    def middle_point(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.c1, float) + np.asarray(self.c2, float))


def hull_distance(A: DiscHull, B: DiscHull, samples: int = 2048) -> float:
    """Distance between two hulls via the separating-direction maximization.

    ``dist(A, B) = max_u (-h_B(-u) - h_A(u))``; negative values measure
    penetration when the sets intersect.
    """
    def gap(theta):
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1).reshape(-1, 2)
        return -B.support(-u) - A.support(u)

    th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    g = gap(th)
    i = int(np.argmax(g))
    step = 2 * np.pi / samples
    res = minimize_scalar(lambda t: -float(gap(np.array([t]))[0]), bounds=(th[i] - step, th[i] + step),
                          method="bounded", options={"xatol": 1e-12})
    return float(max(g[i], -res.fun))


@dataclass
class LocalGeometry:
    """Cones and stadiums of the local straight-line construction."""

    D: float
    tau: float
    rho: float
    x0_bar: np.ndarray
    xf_bar: np.ndarray
    gamma_c: np.ndarray
    v_min: float
    cones: list[DiscHull]
    stadiums: list[DiscHull]
    min_set_distance: float

    @property
    def n(self) -> int:
        return len(self.cones)

    def offsets(self) -> np.ndarray:
        """Stadium offsets ``gamma_c_i tau perp(xf_bar_i - x0_bar_i)/|xf_bar_i - x0_bar_i|^2``."""
        d = self.xf_bar - self.x0_bar
        return self.gamma_c[:, None] * self.tau * perp(d) / np.sum(d * d, 1)[:, None]

    def waypoints(self) -> np.ndarray:
        """One fixed point inside each stadium (the middle of its center segment)."""
        return np.array([s.middle_point() for s in self.stadiums])

    def to_dict(self) -> dict:
        return {"D": self.D, "tau": self.tau, "rho": self.rho, "v_min": self.v_min,
                "x0_bar": self.x0_bar.tolist(), "xf_bar": self.xf_bar.tolist(),
                "min_set_distance": self.min_set_distance}


def tau_rho(D: float, gamma_c) -> tuple[float, float]:
    """``tau = D^2/min|gamma_c|`` and ``rho = min(D/8, D^3)``."""
    return D * D / float(np.min(np.abs(gamma_c))), min(D / 8, D**3)


def _min_pair(pts):
    n = pts.shape[0]
    if n < 2:
        return np.inf
    d = pts[:, None] - pts[None]
    return float(np.min(np.sqrt(np.sum(d * d, -1)) + np.diag(np.full(n, np.inf))))


def local_floor(xf_bar, gamma, gamma_c) -> SpeedFloor:
    """Floor valid for every configuration at least half the target separation apart."""
    xf_bar = np.asarray(xf_bar, float).reshape(-1, 2)
    if xf_bar.shape[0] == 1:
        return SpeedFloor(np.full(1, np.finfo(float).tiny))
    return plan_floor([xf_bar], gamma, gamma_c, _min_pair(xf_bar) / 2)


def local_geometry(xf_bar, D: float, v_min: float, gamma_c, x0_bar) -> LocalGeometry:
    """Cones ``Conv({x0_bar_i} U B(xf_bar_i, rho))`` and stadiums for a given ``D``.

    Raises :class:`DTooLarge` naming the violated condition and
    :class:`MembershipViolated` when a start is outside its annulus.
    """
    xf_bar = np.asarray(xf_bar, float).reshape(-1, 2)
    x0_bar = np.asarray(x0_bar, float).reshape(-1, 2)
    gamma_c = np.asarray(gamma_c, float).reshape(-1)
    if not D > 0:
        raise ValueError("D must be positive")
    sepf = _min_pair(xf_bar)
    if not D < sepf / 8:
        raise DTooLarge(f"separation condition: D={D:.4g} must be below min|xf_i - xf_j|/8 = {sepf / 8:.4g}")
    if D > 0.375 * float(np.min(np.abs(gamma_c))) / v_min:
        raise DTooLarge(f"speed condition: D={D:.4g} exceeds (3/8) min|gamma_c|/v_min = "
                        f"{0.375 * np.min(np.abs(gamma_c)) / v_min:.4g}")
    dist = np.linalg.norm(x0_bar - xf_bar, axis=1)
    if np.any(dist > D * (1 + 1e-12)) or np.any(dist <= D / 2):
        raise MembershipViolated("starts must lie in the annuli D/2 < |x0_bar_i - xf_bar_i| <= D")
    tau, rho = tau_rho(D, gamma_c)
    delta = xf_bar - x0_bar
    off = gamma_c[:, None] * tau * perp(delta) / np.sum(delta * delta, 1)[:, None]
    cones = [DiscHull(tuple(x0_bar[i]), 0.0, tuple(xf_bar[i]), rho) for i in range(len(xf_bar))]
    stadiums = [DiscHull(tuple(x0_bar[i] + off[i]), D / 8, tuple(xf_bar[i] + off[i]), D / 8)
                for i in range(len(xf_bar))]
    sets = cones + stadiums
    gap = np.inf
    for a in range(len(sets)):
        for b in range(a + 1, len(sets)):
            gap = min(gap, hull_distance(sets[a], sets[b]))
    if not gap > 0:
        raise DTooLarge(f"disjointness: cones and stadiums intersect (gap {gap:.3e})")
    return LocalGeometry(float(D), tau, rho, x0_bar, xf_bar, gamma_c, float(v_min), cones, stadiums, gap)


def default_local_starts(xf_bar, D: float, directions=None) -> np.ndarray:
    """Starts at distance ``3D/4`` from the targets (middle of the annuli)."""
    xf_bar = np.asarray(xf_bar, float).reshape(-1, 2)
    n = xf_bar.shape[0]
    if directions is None:
        ang = 2 * np.pi * np.arange(n) / max(n, 1) + 0.25 * np.pi
        directions = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    u = np.asarray(directions, float).reshape(n, 2)
    u = u / np.linalg.norm(u, axis=1)[:, None]
    return xf_bar + 0.75 * D * u


def target_shift_bound(gamma_c) -> float:
    """Largest ``D`` with ``D^3 (1 + 64/9 max|gamma_c|/min|gamma_c|) <= D/16``.

    Below it, moving a target anywhere within ``rho`` of its nominal
    position shifts the uncoupled control by at most ``D/16``, half the room
    the stadium leaves around its center segment.
    """
    a = np.abs(np.asarray(gamma_c, float))
    return float(1.0 / (4.0 * np.sqrt(1.0 + 64.0 / 9.0 * a.max() / a.min())))


def select_local_geometry(xf_bar, gamma, gamma_c, directions=None, max_halvings: int = 30) -> LocalGeometry:
    """Largest ``D`` in ``{D0/2^k}`` passing both smallness conditions and the disjointness check.

    ``D0`` is the smallest of the two closed-form bounds and
    :func:`target_shift_bound`, so ``k = 0`` already satisfies them; halving
    continues only while the sets intersect.
    """
    xf_bar = np.asarray(xf_bar, float).reshape(-1, 2)
    gamma_c = np.asarray(gamma_c, float).reshape(-1)
    floor = local_floor(xf_bar, gamma, gamma_c)
    sepf = _min_pair(xf_bar)
    D0 = min(sepf / 8 * (1 - 1e-9), 0.375 * float(np.min(np.abs(gamma_c))) / floor.v_min,
             target_shift_bound(gamma_c))
    if not np.isfinite(D0):
        D0 = 1.0
    D = D0
    last = None
    for _ in range(max_halvings + 1):
        try:
            return local_geometry(xf_bar, D, floor.v_min, gamma_c, default_local_starts(xf_bar, D, directions))
        except DTooLarge as exc:
            last = exc
            D /= 2
    raise DTooLarge(f"no admissible D after {max_halvings} halvings: {last}")


def local_geometry_for_starts(xf_bar, x0_bar, gamma, gamma_c) -> LocalGeometry:
    """Local geometry around prescribed starts, with ``D = max_i |x0_bar_i - xf_bar_i|``.

    ``D`` must not exceed the bound ``D0`` of :func:`select_local_geometry`;
    the starts must then lie in their annuli, which needs
    ``min_i |x0_bar_i - xf_bar_i| > D/2``.
    """
    xf_bar = np.asarray(xf_bar, float).reshape(-1, 2)
    x0_bar = np.asarray(x0_bar, float).reshape(-1, 2)
    gamma_c = np.asarray(gamma_c, float).reshape(-1)
    floor = local_floor(xf_bar, gamma, gamma_c)
    D0 = min(_min_pair(xf_bar) / 8 * (1 - 1e-9), 0.375 * float(np.min(np.abs(gamma_c))) / floor.v_min,
             target_shift_bound(gamma_c))
    D = float(np.max(np.linalg.norm(x0_bar - xf_bar, axis=1)))
    if D > D0:
        raise DTooLarge(f"starts are {D:.4g} from their targets; the local construction allows at most {D0:.4g}")
    return local_geometry(xf_bar, D, floor.v_min, gamma_c, x0_bar)


def check_local_membership(geom: LocalGeometry, x0_bar, xf) -> None:
    x0_bar = np.asarray(x0_bar, float).reshape(-1, 2)
    xf = np.asarray(xf, float).reshape(-1, 2)
    dist0 = np.linalg.norm(x0_bar - geom.xf_bar, axis=1)
    if np.any(dist0 > geom.D * (1 + 1e-12)) or np.any(dist0 <= geom.D / 2):
        raise MembershipViolated("x0_bar must lie in the annuli around xf_bar")
    if np.any(np.linalg.norm(xf - geom.xf_bar, axis=1) > geom.rho * (1 + 1e-12)):
        raise MembershipViolated("xf must lie within rho of xf_bar")
    if np.any(np.linalg.norm(xf - x0_bar, axis=1) < 0.375 * geom.D * (1 - 1e-12)):
        raise MembershipViolated("|xf_i - x0_bar_i| must be at least 3D/8")


def synthesize_local(x0_bar, xf, geom: LocalGeometry, gamma, t0: float = 0.0, steps: int | None = None,
                     verify: bool = True) -> SynthesisPlan:
    """Straight-line controls driving ``x0_bar`` to ``xf`` in time ``tau``.

    With ``verify`` the plan is simulated and every vortex (control) must
    stay in its cone (stadium) on the integration grid; the margins are
    stored in ``plan.meta``.
    """
    x0_bar = np.asarray(x0_bar, float).reshape(-1, 2)
    xf = np.asarray(xf, float).reshape(-1, 2)
    gamma = np.asarray(gamma, float).reshape(-1)
    check_local_membership(geom, x0_bar, xf)
    n = x0_bar.shape[0]
    tau = geom.tau
    curves = [straight_line(x0_bar[i], xf[i], tau, t0=t0) for i in range(n)]
    floor = SpeedFloor(np.full(n, geom.v_min))
    v = (xf - x0_bar) / tau
    strain = float(np.max(np.sum(v * v, 1) / np.abs(geom.gamma_c)))
    grid = np.linspace(t0, t0 + tau, (steps or max(2000, int(np.ceil(tau * strain / STEP_ANGLE)))) + 1)
    plan = _assemble(curves, None, gamma, geom.gamma_c, x0_bar, xf, (t0, t0 + tau), grid, floor, "local",
                     {"D": geom.D, "tau": tau, "rho": geom.rho})
    if verify:
        traj = plan.simulate()
        cone_m, stadium_m = containment_margins(geom, traj.states, traj.controls)
        plan.meta.update({"cone_margin": cone_m, "stadium_margin": stadium_m,
                          "endpoint_error": float(np.max(np.linalg.norm(traj.final - xf, axis=1)))})
        tol = CONTAINMENT_TOL * geom.D
        if cone_m < -tol or stadium_m < -tol:
            raise ContainmentViolated(f"containment margins cone={cone_m:.3e}, stadium={stadium_m:.3e}")
    return plan


def containment_margins(geom: LocalGeometry, states, controls) -> tuple[float, float]:
    """Smallest inward distance of vortices to their cones and controls to their stadiums.

    The vortices start at the cone apex, so the cone margin is zero at ``t0``
    and the sets are closed: a margin of ``-CONTAINMENT_TOL * D`` still counts as inside.
    """
    cone = min(float(np.min(-c.signed_distance(states[:, i]))) for i, c in enumerate(geom.cones))
    stadium = min(float(np.min(-s.signed_distance(controls[:, i]))) for i, s in enumerate(geom.stadiums))
    return cone, stadium

"""One control for N vortices: oscillating control, convergence studies and exact control by shooting.

A single control vortex of intensity ``gamma_c`` imitates N reference
controls of intensity ``gamma_c / N`` by visiting them in turn. Time is cut
into ``n`` blocks of length ``T/n``; each block is cut into ``N`` slots of
length ``T/(nN)``. In slot ``k`` the control sits on reference control
``y_k`` (the core); around each slot boundary a short window of length
``T/(n^2 N)`` carries it to the next reference control along a curve that
keeps away from the vortices. The result is smoothed with a bump of
half-width ``T/n^3``. As ``n`` grows the vortices feel the average of the
reference controls and follow the reference trajectories up to ``O(1/n)``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curves import path_length, transition_curve
from .dynamics import ControlSet, IntegratorSettings, Trajectory, VortexConfig, integrate
from .errors import (CollisionError, HypothesisHViolated, MembershipViolated, NoConvergence,
                     ShootingDiverged, VortexError)
from .kernel import Mollifier, biot_savart_regularized, mollify
from .paths import ControlPath, LinearPiece, Piece, reparametrize
from .synthesis import (SynthesisPlan, default_local_starts, local_geometry, select_local_geometry,
                        synthesize_local, synthesize_N)

log = logging.getLogger(__name__)

PIN_FACTOR = 2.5
WINDOW_STEP_ANGLE = 0.15
WINDOW_MIN_STEPS = 12
WINDOW_SAMPLES = 256
KINK_STEPS = 8
SHOOTING_MAX_ITER = 20
SHOOTING_TOL = 1e-9


def worker_count() -> int:
    """Worker cap from ``VORTEXCTL_THREADS`` (default: min(4, cpu count))."""
    raw = os.environ.get("VORTEXCTL_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"VORTEXCTL_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


# --------------------------------------------------------------------------
# time partition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimePartition:
    """Blocks ``I_i``, slots ``I_{i,k}``, cores and windows on ``[t0, t0 + T]``.

    Indices are 1-based as in the usual notation: ``i`` in ``1..n`` counts
    blocks and ``k`` in ``1..N`` counts slots. Window ``(i, k)`` is centered
    on the right end of slot ``(i, k)`` with half-width ``T/(2 n^2 N)``; the
    last slot has no window, the first core starts at ``t0`` and the last
    core ends at ``t0 + T``.
    """

    n: int
    N: int
    T: float
    t0: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.N < 1:
            raise ValueError("n and N must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def block(self) -> float:
        """``Delta T = T/n``."""
        return self.T / self.n

    @property
    def slot(self) -> float:
        """``delta T = T/(nN)``."""
        return self.T / (self.n * self.N)

    @property
    def half_window(self) -> float:
        return self.slot / (2 * self.n)

    @property
    def t1(self) -> float:
        return self.t0 + self.T

    def slot_end(self, i: int, k: int) -> float:
        return self.t0 + (i - 1) * self.block + k * self.slot

    def interval(self, i: int, k: int) -> tuple[float, float]:
        return self.slot_end(i, k - 1), self.slot_end(i, k)

    def core(self, i: int, k: int) -> tuple[float, float]:
        a, b = self.interval(i, k)
        h = self.half_window
        lo = self.t0 if (i, k) == (1, 1) else a + h
        hi = self.t1 if (i, k) == (self.n, self.N) else b - h
        return lo, hi

    def window(self, i: int, k: int) -> tuple[float, float] | None:
        if (i, k) == (self.n, self.N):
            return None
        c = self.slot_end(i, k)
        return c - self.half_window, c + self.half_window

    def segments(self) -> list[tuple[str, int, int, float, float]]:
        """Cores and windows in time order as ``(kind, i, k, start, end)``."""
        out = []
        for i in range(1, self.n + 1):
            for k in range(1, self.N + 1):
                out.append(("core", i, k) + self.core(i, k))
                w = self.window(i, k)
                if w is not None:
                    out.append(("window", i, k) + w)
        return out

    def check(self, tol: float = 1e-12) -> None:
        """Raise ``AssertionError`` unless cores and windows tile ``[t0, t1]`` without overlap."""
        seg = self.segments()
        scale = max(1.0, abs(self.t0), abs(self.t1))
        assert abs(seg[0][3] - self.t0) <= tol * scale
        assert abs(seg[-1][4] - self.t1) <= tol * scale
        for a, b in zip(seg, seg[1:]):
            assert abs(a[4] - b[3]) <= tol * scale
            assert b[4] > b[3]

    def layout(self) -> list[tuple[str, int, int]]:
        """Sequence of visited reference controls and transitions (for display and tests)."""
        return [(kind, i, k) for kind, i, k, _, _ in self.segments()]


def build_partition(n: int, N: int, T: float, t0: float = 0.0) -> TimePartition:
    part = TimePartition(int(n), int(N), float(T), float(t0))
    part.check()
    return part


# --------------------------------------------------------------------------
# oscillating control
# --------------------------------------------------------------------------

class SubPath(Piece):
    """A path restricted to ``[t0, t1]`` (used for the cores)."""

    def __init__(self, t0: float, t1: float, path: ControlPath):
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.path = path

    def eval(self, t, order):
        return self.path.evaluate(t, order, clamp=True)

    @property
    def kinks(self):
        k = self.path.kinks
        return tuple(float(v) for v in k[(k > self.t0) & (k < self.t1)])


@dataclass
class OscillatingControl:
    """Raw and smoothed single control built from an N-control plan."""

    partition: TimePartition
    raw: ControlPath = field(repr=False)
    smoothed: ControlPath = field(repr=False)
    lipschitz: float
    mollifier_width: float
    intensity: float
    grid: np.ndarray = field(repr=False)
    waypoint_mode: str = "avoid_balls"
    pinned: bool = True
    pin_margin: float = 0.0
    c_pi: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def horizon(self) -> tuple[float, float]:
        return self.partition.t0, self.partition.t1

    def control_set(self) -> ControlSet:
        return ControlSet((self.smoothed,), np.array([self.intensity]))

    def deviation(self, points: int = 20_001) -> float:
        """``sup |z_n - z_n^0|`` on the integration grid plus a uniform grid."""
        t = np.union1d(self.grid, np.linspace(*self.horizon, points))
        return float(np.max(np.linalg.norm(self.smoothed.evaluate(t) - self.raw.evaluate(t), axis=1)))


def _line(t0, t1, p, q) -> Piece:
    return LinearPiece(float(t0), float(t1), (float(p[0]), float(p[1])), (float(q[0]), float(q[1])))


def _chain(parts: list[ControlPath], t0: float, t1: float) -> list[Piece]:
    """Run unit-time paths one after another at constant overall speed on ``[t0, t1]``."""
    lengths = np.array([path_length(p) for p in parts])
    total = float(lengths.sum())
    if total == 0:
        p = parts[0].evaluate(parts[0].domain[0])
        return [_line(t0, t1, p, p)]
    cuts = t0 + (t1 - t0) * np.concatenate([[0.0], np.cumsum(lengths) / total])
    cuts[-1] = t1
    pieces: list[Piece] = []
    for p, a, b in zip(parts, cuts[:-1], cuts[1:]):
        if b - a <= 1e-15 * max(1.0, abs(b)):
            continue
        pieces.extend(reparametrize(p, p.domain, (a, b)).pieces)
    # close rounding gaps between consecutive pieces
    fixed = []
    for idx, pc in enumerate(pieces):
        lo = t0 if idx == 0 else fixed[-1].t1
        hi = t1 if idx == len(pieces) - 1 else pc.t1
        fixed.append(pc if (pc.t0 == lo and pc.t1 == hi) else _Retimed(lo, hi, pc))
    return fixed


class _Retimed(Piece):
    """Piece evaluated on a slightly shifted interval (absorbs float rounding at joins)."""

    def __init__(self, t0, t1, inner: Piece):
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.inner = inner

    def eval(self, t, order):
        s = self.inner.t0 + (t - self.t0) * (self.inner.t1 - self.inner.t0) / (self.t1 - self.t0)
        scale = (self.inner.t1 - self.inner.t0) / (self.t1 - self.t0)
        return self.inner.eval(s, order) * scale**order


def _segment_path(p, q) -> ControlPath:
    return ControlPath([_line(0.0, 1.0, p, q)])


class FixedWaypoints:
    """Waypoints ``y*_k`` and the fixed connecting paths between them.

    Every transition from reference control ``k`` to ``k+1`` runs
    ``y_k(t_1) -> y*_k`` on a straight line, then the fixed path
    ``y*_k -> y*_{k+1}`` avoiding ``obstacles``, then a straight line to
    ``y_{k+1}(t_2)``. Only the two end lines depend on the reference
    controls, which makes the control continuous in the target.
    """

    def __init__(self, waypoints, obstacles):
        self.waypoints = np.asarray(waypoints, float).reshape(-1, 2)
        self.obstacles = [(np.asarray(c, float), float(r)) for c, r in obstacles]
        N = self.waypoints.shape[0]
        self.links = {}
        for k in range(N):
            j = (k + 1) % N
            if j != k:
                self.links[(k, j)] = transition_curve(self.waypoints[k], self.waypoints[j], self.obstacles, 1.0)

    def pieces(self, start, k, end, j, t0, t1, start_is_reference=True) -> list[Piece]:
        parts = []
        if start_is_reference:
            parts.append(_segment_path(start, self.waypoints[k]))
            if (k, j) in self.links:
                parts.append(self.links[(k, j)])
        else:
            parts.append(transition_curve(start, self.waypoints[j], self.obstacles, 1.0))
        parts.append(_segment_path(self.waypoints[j], end))
        return _chain(parts, t0, t1)


def build_oscillating_control(plan: SynthesisPlan, n: int, waypoint_mode: str = "avoid_balls",
                              start_from=None, waypoints: FixedWaypoints | None = None,
                              grid: np.ndarray | None = None, pin: bool = True) -> OscillatingControl:
    """Single control ``z_n`` visiting the plan's reference controls in turn.

    Parameters
    ----------
    waypoint_mode
        ``"avoid_balls"``: transitions walk around the balls of radius
        ``3 r_bar/2`` centered at the reference vortex positions at the
        start of the window. ``"fixed_waypoints"``: transitions go through
        fixed waypoints (see :class:`FixedWaypoints`, passed as ``waypoints``).
    start_from
        Optional start point: a lead transition of half a window carries
        the control from there to ``y_1`` (used to chain two phases).
    grid
        Integration grid to attach; by default one is built that resolves
        the cores on the plan grid (refined N times) and the windows by
        the angle the control sweeps as seen from the vortices.
    pin
        Hold the raw control still for ``2.5`` mollifier widths at both
        ends so the smoothed control keeps the exact end values. Skipped
        automatically when the first or last core is too short.
    """
    if waypoint_mode not in ("avoid_balls", "fixed_waypoints"):
        raise ValueError(f"unknown waypoint mode {waypoint_mode!r}")
    if waypoint_mode == "fixed_waypoints" and waypoints is None:
        raise ValueError("fixed_waypoints mode needs waypoints")
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    gc = np.asarray(plan.gamma_c, float)
    if not np.allclose(gc, gc[0], rtol=1e-12, atol=0):
        raise ValueError("reference controls must share one intensity (gamma_c / N each)")
    N = plan.n
    t0, t1 = plan.horizon
    T = t1 - t0
    part = build_partition(n, N, T, t0)
    width = T / n**3
    margin = PIN_FACTOR * width
    refs = plan.reference_curves
    ctl = plan.controls
    h = part.half_window
    first_core = part.core(1, 1)
    last_core = part.core(n, N)
    lead = start_from is not None
    first_room = (h if lead else first_core[1] - first_core[0])
    pinned = pin and first_room > 2 * margin * (1 + 1e-9) and (last_core[1] - last_core[0]) > 2 * margin * (1 + 1e-9)

    def y(k, t):
        return ctl[k].evaluate(float(t))

    pieces: list[Piece] = []
    # lead-in
    if lead:
        start_from = np.asarray(start_from, float).reshape(2)
        lo = t0
        if pinned:
            pieces.append(_line(t0, t0 + margin, start_from, start_from))
            lo = t0 + margin
        end = y(0, t0 + h)
        if waypoint_mode == "avoid_balls":
            obst = [(refs[j].evaluate(t0), 1.5 * plan.r_bar) for j in range(N)]
            tr = transition_curve(start_from, end, obst, t0 + h - lo, t0=lo)
            pieces.extend(tr.pieces)
        else:
            pieces.extend(waypoints.pieces(start_from, None, end, 0, lo, t0 + h, start_is_reference=False))
    for kind, i, k, a, b in part.segments():
        kk = k - 1
        if kind == "core":
            if lead and (i, k) == (1, 1):
                a = t0 + h
            if pinned and not lead and (i, k) == (1, 1):
                p0 = y(0, t0)
                pieces.append(_line(t0, t0 + margin, p0, p0))
                pieces.append(_line(t0 + margin, t0 + 2 * margin, p0, y(0, t0 + 2 * margin)))
                a = t0 + 2 * margin
            if pinned and (i, k) == (n, N):
                pieces.append(SubPath(a, t1 - 2 * margin, ctl[kk]))
                pe = y(kk, t1)
                pieces.append(_line(t1 - 2 * margin, t1 - margin, y(kk, t1 - 2 * margin), pe))
                pieces.append(_line(t1 - margin, t1, pe, pe))
            else:
                pieces.append(SubPath(a, b, ctl[kk]))
        else:
            jj = k % N
            p, q = y(kk, a), y(jj, b)
            if waypoint_mode == "avoid_balls":
                obst = [(refs[j].evaluate(a), 1.5 * plan.r_bar) for j in range(N)]
                pieces.extend(transition_curve(p, q, obst, b - a, t0=a).pieces)
            else:
                pieces.extend(waypoints.pieces(p, kk, q, jj, a, b))
    raw = ControlPath(pieces, c1=False, label="raw control")
    smoothed = mollify(raw, Mollifier(width), pin_margin=margin if pinned else None)
    smoothed.label = "control"

    lip = _lipschitz(raw, ctl, part, plan.grid)
    c1_norm = max(float(np.max(np.linalg.norm(c.evaluate(plan.grid), axis=1)))
                  + float(np.max(np.linalg.norm(c.evaluate(plan.grid, 1), axis=1))) for c in ctl)
    c_pi = lip * T / (N * n * n * c1_norm)
    if grid is None:
        grid = _adapted_grid(raw, smoothed, plan, part, width)
    return OscillatingControl(part, raw, smoothed, lip, width, float(np.sum(gc)), np.asarray(grid, float),
                              waypoint_mode, pinned, margin if pinned else 0.0, c_pi,
                              {"pieces": len(pieces)})


def _lipschitz(raw: ControlPath, ctl, part, plan_grid) -> float:
    core_speed = max(float(np.max(np.linalg.norm(c.evaluate(plan_grid, 1), axis=1))) for c in ctl)
    other = 0.0
    for pc in raw.pieces:
        if isinstance(pc, SubPath):
            continue
        t = np.linspace(pc.t0, pc.t1, 5)
        other = max(other, float(np.max(np.linalg.norm(pc.eval(t, 1), axis=1))))
    return max(core_speed, other)


def _adapted_grid(raw, smoothed, plan, part, width) -> np.ndarray:
    t0, t1 = part.t0, part.t1
    base = plan.grid[(plan.grid >= t0) & (plan.grid <= t1)]
    N = part.N
    if N > 1:
        fine = [base]
        for j in range(1, N):
            fine.append(base[:-1] + (j / N) * np.diff(base))
        base = np.concatenate(fine)
    pts = [base, np.array([t0, t1])]
    # windows (and the lead, if any): spread steps by swept angle
    spans = []
    for kind, i, k, a, b in part.segments():
        if kind == "window":
            spans.append((a, b))
    if raw.pieces and not isinstance(raw.pieces[0], SubPath):
        first_core_start = next(pc.t0 for pc in raw.pieces if isinstance(pc, SubPath))
        spans.append((t0, first_core_start))
    for a, b in spans:
        lo, hi = max(t0, a - width), min(t1, b + width)
        ts = np.linspace(lo, hi, WINDOW_SAMPLES)
        z = raw.evaluate(ts)
        xr = plan.reference_positions(ts)
        dist = np.min(np.linalg.norm(xr - z[:, None, :], axis=-1), axis=1)
        step = np.linalg.norm(np.diff(z, axis=0), axis=1) / np.minimum(dist[1:], dist[:-1])
        cum = np.concatenate([[0.0], np.cumsum(step)])
        count = max(WINDOW_MIN_STEPS, int(np.ceil(cum[-1] / WINDOW_STEP_ANGLE)))
        if cum[-1] > 0:
            targets = np.linspace(0.0, cum[-1], count + 1)
            # equal swept angle per step, with a floor of uniform spacing
            warped = np.interp(targets, cum, ts)
            pts.append(np.union1d(warped, np.linspace(lo, hi, WINDOW_MIN_STEPS + 1)))
        else:
            pts.append(np.linspace(lo, hi, count + 1))
    # remaining kinks (pins, transitions inside windows already covered)
    for kink in raw.kinks:
        lo, hi = max(t0, kink - width), min(t1, kink + width)
        pts.append(np.linspace(lo, hi, KINK_STEPS + 1))
    grid = np.unique(np.concatenate(pts))
    grid = grid[(grid >= t0) & (grid <= t1)]
    keep = np.concatenate([[True], np.diff(grid) > 1e-13 * max(1.0, abs(t1))])
    grid = grid[keep]
    grid[0], grid[-1] = t0, t1
    return grid


# --------------------------------------------------------------------------
# separation, simulation
# --------------------------------------------------------------------------

def separation_margin(ctrl: OscillatingControl, plan: SynthesisPlan, points: int = 20_001) -> float:
    """``min_t min_j |z_n(t) - xbar_j(t)|`` on the control grid plus a uniform grid."""
    t = np.union1d(ctrl.grid, np.linspace(*ctrl.horizon, points))
    z = ctrl.smoothed.evaluate(t)
    xr = plan.reference_positions(t)
    return float(np.min(np.linalg.norm(xr - z[:, None, :], axis=-1)))


def check_separation(ctrl: OscillatingControl, plan: SynthesisPlan, scan_max: int | None = None,
                     **build) -> tuple[bool, float, int | None]:
    """Whether ``z_n`` keeps distance ``r_bar`` from every reference vortex.

    Returns ``(ok, margin, n0_hint)`` where ``margin`` is the smallest
    distance and ``n0_hint`` the smallest ``n`` in ``1, 2, 4, ...`` (up to
    ``scan_max``, default ``ctrl.n``) from which every scanned ``n`` passes.
    """
    margin = separation_margin(ctrl, plan)
    ok = margin >= plan.r_bar
    top = scan_max or ctrl.n
    ns = [1]
    while ns[-1] * 2 <= top:
        ns.append(ns[-1] * 2)
    passed = []
    for m in ns:
        if m == ctrl.n:
            passed.append(ok)
            continue
        try:
            c = build_oscillating_control(plan, m, ctrl.waypoint_mode, **build)
            passed.append(separation_margin(c, plan) >= plan.r_bar)
        except VortexError:
            passed.append(False)
    hint = None
    for idx in range(len(ns) - 1, -1, -1):
        if not passed[idx]:
            break
        hint = ns[idx]
    return bool(ok), margin, hint


def separation_scan(plan: SynthesisPlan, ns, waypoint_mode: str = "avoid_balls", **build) -> dict:
    """Separation margin for each ``n`` and the smallest ``n0`` after which all pass."""
    margins = []
    for m in ns:
        try:
            c = build_oscillating_control(plan, m, waypoint_mode, **build)
            margins.append(separation_margin(c, plan))
        except VortexError as exc:
            log.info("n=%d failed to build: %s", m, exc)
            margins.append(float("nan"))
    n0 = None
    for idx in range(len(ns) - 1, -1, -1):
        if not margins[idx] >= plan.r_bar:
            break
        n0 = ns[idx]
    return {"ns": list(ns), "margins": margins, "r_bar": plan.r_bar, "n0": n0}


def hypothesis_h_margin(traj: Trajectory) -> tuple[float, float, float]:
    """Smallest control-vortex and vortex-vortex distances, and the time of the smaller."""
    ctl = traj.control_separation
    vv = traj.vortex_separation
    both = np.minimum(ctl, vv)
    k = int(np.argmin(both))
    return float(ctl.min()), float(vv.min()), float(traj.times[k])


def simulate_single_control(x0, ctrl: OscillatingControl, gamma, r_bar: float | None = None,
                            settings: IntegratorSettings | None = None) -> Trajectory:
    """Integrate the vortices under the single control ``z_n``.

    With ``r_bar`` the run is monitored: any control-vortex or vortex-vortex
    distance below ``r_bar / 2`` raises :class:`HypothesisHViolated`.
    """
    settings = settings or IntegratorSettings(grid=ctrl.grid)
    cfg = VortexConfig(np.asarray(x0, float), np.asarray(gamma, float))
    traj = integrate(cfg, ctrl.control_set(), ctrl.horizon, settings)
    if r_bar is not None:
        dc, dv, when = hypothesis_h_margin(traj)
        worst = min(dc, dv)
        if worst < r_bar / 2:
            raise HypothesisHViolated(f"distance {worst:.4g} fell below r_bar/2 = {r_bar / 2:.4g} near t={when:.6g}",
                                      time=when, distance=worst)
    return traj


# --------------------------------------------------------------------------
# convergence study
# --------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Sup-norm deviation from the reference for each ``n`` and its log-log fit."""

    ns: list[int]
    errors: list[float]
    separations: list[float]
    slope: float
    constant: float
    failures: dict = field(default_factory=dict)
    constants: list[float] = field(default_factory=list)
    endpoint_errors: list[float] = field(default_factory=list)
    trajectories: dict = field(default_factory=dict, repr=False)

    @property
    def constant_spread(self) -> float:
        c = np.asarray(self.constants, float)
        c = c[np.isfinite(c)]
        return float(c.max() / c.min()) if c.size else float("nan")

    def monotone_within(self, noise: float = 0.2) -> bool:
        e = np.asarray(self.errors, float)
        return bool(np.all(e[1:] <= e[:-1] * (1 + noise)))

    def to_dict(self) -> dict:
        return {"ns": self.ns, "errors": self.errors, "separations": self.separations,
                "slope": self.slope, "constant": self.constant, "constants": self.constants,
                "constant_spread": self.constant_spread, "endpoint_errors": self.endpoint_errors,
                "failures": self.failures}

    def to_csv(self, path: str | Path) -> None:
        lines = ["n,error,min_separation,endpoint_error"]
        for n, e, s, f in zip(self.ns, self.errors, self.separations, self.endpoint_errors):
            lines.append(f"{n},{format(e, '.17g')},{format(s, '.17g')},{format(f, '.17g')}")
        Path(path).write_text("\n".join(lines) + "\n")


def fit_rate(ns, errors) -> tuple[float, float]:
    """Least-squares ``log error = log C + slope log n``."""
    ns = np.asarray(ns, float)
    errors = np.asarray(errors, float)
    ok = np.isfinite(errors) & (errors > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(ns[ok]), np.log(errors[ok]), 1)
    return float(slope), float(np.exp(intercept))


def _study_one(plan, x0, m, waypoint_mode, build):
    ctrl = build_oscillating_control(plan, m, waypoint_mode, **build)
    traj = simulate_single_control(x0, ctrl, plan.gamma, r_bar=plan.r_bar)
    ref = integrate(VortexConfig(np.asarray(x0, float), plan.gamma), plan.control_set(), plan.horizon,
                    IntegratorSettings(grid=ctrl.grid))
    err = float(np.max(np.linalg.norm(traj.states - ref.states, axis=-1)))
    dc, dv, _ = hypothesis_h_margin(traj)
    end = float(np.max(np.linalg.norm(traj.final - ref.final, axis=-1)))
    return err, min(dc, dv), end, traj


def convergence_study(plan: SynthesisPlan, x0, ns, waypoint_mode: str = "avoid_balls",
                      workers: int | None = None, **build) -> ConvergenceReport:
    """Deviation ``sup_t |x^n(t) - xbar(t)|`` for each ``n``, with the reference solved on the same grid.

    Runs for different ``n`` are independent and spread over ``workers``
    threads (default :func:`worker_count`). Failed runs are recorded in
    ``failures`` and left out of the fit.
    """
    ns = [int(v) for v in ns]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("ns must be strictly increasing")
    workers = workers or worker_count()

    def job(m):
        try:
            return m, _study_one(plan, x0, m, waypoint_mode, build), None
        except (HypothesisHViolated, CollisionError, NoConvergence) as exc:
            return m, None, f"{type(exc).__name__}: {exc}"

    if workers > 1 and len(ns) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, ns))
    else:
        results = [job(m) for m in ns]
    errors, seps, ends, failures, trajs = [], [], [], {}, {}
    for m, res, msg in results:
        if res is None:
            errors.append(float("nan"))
            seps.append(float("nan"))
            ends.append(float("nan"))
            failures[m] = msg
        else:
            errors.append(res[0])
            seps.append(res[1])
            ends.append(res[2])
            trajs[m] = res[3]
    slope, const = fit_rate(ns, errors)
    constants = [e * m for e, m in zip(errors, ns)]
    return ConvergenceReport(ns, errors, seps, slope, const, failures, constants, ends, trajs)


# --------------------------------------------------------------------------
# weak convergence diagnostic
# --------------------------------------------------------------------------

def kernel_test_functions(plan: SynthesisPlan, eta: float | None = None) -> list:
    """Components of ``K_eta(xbar_j(t) - x)`` for every reference vortex ``j``."""
    eta = eta if eta is not None else plan.r_bar / 2
    funcs = []
    for j in range(plan.n):
        for c in range(2):
            def phi(t, x, j=j, c=c):
                xr = plan.reference_curves[j].evaluate(t)
                return biot_savart_regularized(xr - x, eta)[:, c]
            phi.__name__ = f"K_eta[x{j + 1}]_{c + 1}"
            funcs.append(phi)
    return funcs


def weak_convergence_diagnostic(ctrl: OscillatingControl, plan: SynthesisPlan, testfns,
                                form: str = "cumulative", refine: int = 4) -> list[float]:
    """Distance between the action of ``z_n`` and the average of the reference controls.

    For each test function ``phi(t, x)`` (vectorized, returns one value per
    time) let ``g(t) = phi(t, z_n(t)) - (1/N) sum_k phi(t, y_k(t))``.

    ``form="cumulative"`` returns ``sup_t |int_0^t g|``, the quantity the
    convergence proof actually needs and which decays like ``1/n``.
    ``form="pointwise"`` returns ``int_0^T |g|``, which stays of order one
    because ``z_n`` sits on a single reference control at any instant.
    Quadrature is the trapezoid rule on the control grid refined ``refine`` times.
    """
    if form not in ("cumulative", "pointwise"):
        raise ValueError(f"unknown form {form!r}")
    g = ctrl.grid
    t = np.concatenate([g[:-1, None] + (np.arange(refine) / refine)[None, :] * np.diff(g)[:, None]]).ravel()
    t = np.append(t, g[-1])
    z = ctrl.smoothed.evaluate(t)
    ys = plan.control_positions(t)
    out = []
    for phi in testfns:
        val = np.asarray(phi(t, z), float)
        avg = np.mean([np.asarray(phi(t, ys[:, k]), float) for k in range(plan.n)], axis=0)
        diff = val - avg
        dt = np.diff(t)
        if form == "cumulative":
            cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (diff[1:] + diff[:-1]))])
            out.append(float(np.max(np.abs(cum))))
        else:
            a = np.abs(diff)
            out.append(float(np.sum(0.5 * dt * (a[1:] + a[:-1]))))
    return out


# --------------------------------------------------------------------------
# exact control
# --------------------------------------------------------------------------

def shoot(f, xf, kappa: float, tol: float = SHOOTING_TOL, max_iter: int = SHOOTING_MAX_ITER):
    """Solve ``f(w) = xf`` by ``w <- w + alpha (xf - f(w))`` starting at ``w = xf``.

    ``alpha`` starts at 1 and is halved (once, to 0.5) when the residual
    grows; the iterate must stay in the closed ball of radius ``kappa``
    around ``xf``. Returns ``(w, f(w), residuals, distances, iterations)``.
    """
    xf = np.asarray(xf, float)
    w = xf.copy()
    fw = f(w)
    res = [float(np.max(np.linalg.norm(xf - fw, axis=-1)))]
    dist = [0.0]
    alpha = 1.0
    it = 0
    while res[-1] > tol:
        if it >= max_iter:
            raise ShootingDiverged(f"residual {res[-1]:.3e} after {max_iter} iterations")
        cand = w + alpha * (xf - fw)
        d = float(np.max(np.linalg.norm(cand - xf, axis=-1)))
        if d > kappa * (1 + 1e-12):
            raise ShootingDiverged(f"iterate left the ball of radius {kappa:.3e} (distance {d:.3e})")
        fc = f(cand)
        r = float(np.max(np.linalg.norm(xf - fc, axis=-1)))
        it += 1
        if r >= res[-1]:
            if alpha > 0.5:
                alpha = 0.5
                continue
            raise ShootingDiverged(f"residual stopped decreasing ({res[-1]:.3e} -> {r:.3e})")
        w, fw = cand, fc
        res.append(r)
        dist.append(d)
        log.info("shooting iteration %d: residual %.3e, |w - xf| = %.3e", it, r, d)
    return w, fw, res, dist, it


def _next_n(n: int, ratio: float) -> int:
    """Next ``n`` after a miss ``ratio`` times too large, assuming error ~ C/n (at least doubling)."""
    factor = max(2.0, 1.1 * ratio)
    return int(n * 2 ** int(np.ceil(np.log2(factor))))


def _cone_obstacles(geom) -> list:
    return [c.enclosing_disc() for c in geom.cones]


def exact_control(x0, xf, T: float, gamma, gamma_c: float, n1: int = 8, n2: int = 32,
                  max_doublings: int = 4, local_steps: int = 400) -> tuple[ControlPath, dict]:
    """Single control driving ``x0`` exactly to ``xf`` at time ``T``.

    Phase 1 (``[0, T - tau]``): the oscillating control of an N-control plan
    brings each vortex within ``D/5`` of the middle of the annulus ``D/2 < |x - xf_i| < D``.
    Phase 2 (``[T - tau, T]``): the oscillating control of the local
    straight-line plan from the phase-1 end state to a shifted target ``w``,
    with fixed-waypoint transitions. ``w`` is found by shooting so that the
    simulated end point equals ``xf``. The shooting starts only when the
    first miss ``|f(xf) - xf|`` is at most ``kappa/2``. When a phase misses
    its tolerance, ``n`` is raised by the power of two that the ``C/n`` law
    predicts (at least doubled); other failures double ``n``. At most
    ``max_doublings`` retries per phase.

    Returns the control path on ``[0, T]`` and a report dictionary.
    """
    x0 = np.asarray(x0, float).reshape(-1, 2)
    xf = np.asarray(xf, float).reshape(-1, 2)
    gamma = np.asarray(gamma, float).reshape(-1)
    N = x0.shape[0]
    if not T > 0:
        raise ValueError("T must be positive")
    share = np.full(N, float(gamma_c) / N)
    geom0 = select_local_geometry(xf, gamma, share)
    D, tau = geom0.D, geom0.tau
    if tau >= T:
        raise ValueError(f"horizon T={T} is shorter than the local phase tau={tau:.4g}")
    x_mid = default_local_starts(xf, D)
    t_switch = T - tau

    # phase 1
    plan1 = synthesize_N(x0, x_mid, t_switch, gamma, share)
    phase1 = None
    n = n1
    errors = []
    for _ in range(max_doublings + 1):
        try:
            ctrl1 = build_oscillating_control(plan1, n, "avoid_balls")
            traj1 = simulate_single_control(x0, ctrl1, gamma, r_bar=plan1.r_bar)
            miss = float(np.max(np.linalg.norm(traj1.final - x_mid, axis=1)))
            if miss <= D / 5:
                phase1 = (ctrl1, traj1, miss)
                break
            errors.append(f"n={n}: phase-1 miss {miss:.3e} > D/5")
            n = _next_n(n, miss / (D / 5))
            continue
        except (HypothesisHViolated, CollisionError) as exc:
            errors.append(f"n={n}: {exc}")
        n *= 2
    if phase1 is None:
        raise ShootingDiverged("phase 1 did not reach the annuli: " + "; ".join(errors))
    ctrl1, traj1, miss1 = phase1
    x_bar0 = traj1.final.copy()
    z_switch = ctrl1.smoothed.evaluate(t_switch)

    # phase 2
    geom = local_geometry(xf, D, geom0.v_min, share, x_bar0)
    wp = FixedWaypoints(geom.waypoints(), _cone_obstacles(geom))
    kappa = geom.rho
    n = n2
    outcome = None
    for _ in range(max_doublings + 1):
        ref_plan = synthesize_local(x_bar0, xf, geom, gamma, t0=t_switch, steps=local_steps, verify=False)
        try:
            ref_ctrl = build_oscillating_control(ref_plan, n, "fixed_waypoints", start_from=z_switch,
                                                 waypoints=wp)
        except VortexError as exc:
            errors.append(f"n={n}: {exc}")
            n *= 2
            continue
        grid2 = ref_ctrl.grid
        cache = {}

        def f(w, n=n, grid2=grid2):
            plan2 = synthesize_local(x_bar0, w, geom, gamma, t0=t_switch, steps=local_steps, verify=False)
            c2 = build_oscillating_control(plan2, n, "fixed_waypoints", start_from=z_switch, waypoints=wp,
                                           grid=grid2)
            tr = simulate_single_control(x_bar0, c2, gamma, r_bar=plan2.r_bar)
            cache["last"] = (plan2, c2, tr)
            cache[w.tobytes()] = (plan2, c2, tr)
            return tr.final

        try:
            first = float(np.max(np.linalg.norm(f(xf.copy()) - xf, axis=1)))
            if first > kappa / 2:
                raise ShootingDiverged(f"first miss {first:.3e} exceeds kappa/2 = {kappa / 2:.3e}")
            w, fw, res, dist, it = shoot(f, xf, kappa)
            outcome = (w, fw, res, dist, it, n, cache[w.tobytes()])
            break
        except ShootingDiverged as exc:
            errors.append(f"n={n}: {exc}")
            n = _next_n(n, first / (kappa / 2)) if "first miss" in str(exc) else 2 * n
        except (HypothesisHViolated, CollisionError, MembershipViolated) as exc:
            errors.append(f"n={n}: {type(exc).__name__}: {exc}")
            n *= 2
    if outcome is None:
        raise ShootingDiverged("phase 2 shooting failed: " + "; ".join(errors))
    w, fw, res, dist, it, n2_used, (plan2, ctrl2, traj2) = outcome

    control = ControlPath(list(ctrl1.smoothed.pieces) + list(ctrl2.smoothed.pieces), c1=True, label="control")
    grid = np.concatenate([ctrl1.grid[:-1], ctrl2.grid])
    full = integrate(VortexConfig(x0, gamma), ControlSet((control,), np.array([float(gamma_c)])), (0.0, T),
                     IntegratorSettings(grid=grid))
    endpoint = float(np.max(np.linalg.norm(full.final - xf, axis=1)))
    dc, dv, _ = hypothesis_h_margin(full)
    report = {
        "mode": "single_control_exact",
        "T": float(T), "tau": tau, "D": D, "rho": geom.rho, "kappa": kappa,
        "switch_time": t_switch,
        "phase1": {"n": ctrl1.n, "kind": plan1.kind, "r_bar": plan1.r_bar, "miss": miss1,
                   "annulus_distances": np.linalg.norm(x_bar0 - xf, axis=1).tolist()},
        "phase2": {"n": n2_used, "r_bar": plan2.r_bar, "target": w.tolist(),
                   "cone_margin_hint": geom.min_set_distance},
        "shooting": {"iterations": it, "residuals": res, "distances": dist,
                     "monotone": all(b < a for a, b in zip(res, res[1:])),
                     "inside_ball": all(d <= kappa * (1 + 1e-12) for d in dist)},
        "endpoint_error": endpoint,
        "min_control_distance": dc, "min_vortex_distance": dv,
        "log": errors,
    }
    report["_trajectory"] = full
    report["_plans"] = (plan1, plan2)
    return control, report

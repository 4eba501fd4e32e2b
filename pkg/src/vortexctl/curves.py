"""Construction of reference curves, straight lines and obstacle-avoiding transitions.

The curve family realizes the reference trajectories needed by the N-control
synthesis: each curve starts at a prescribed point (optionally with a
prescribed velocity), ends at a prescribed point, keeps a clearance ``r``
from the others at every common time, and never moves slower than a speed
floor. The recipe is constructive:

1. a short lead-in that turns the initial velocity onto the base direction;
2. a base path traversed in time ``T/k`` (straight line, bent sideways when
   it would pass too close to an earlier curve at the same instant);
3. a blend onto a small terminal circle through the end point, looped until
   ``T`` so the end point is reached exactly at ``T`` while the speed stays
   high.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import BlockedPath, InfeasibleClearance, OverlappingObstacles, SpeedFloorUnachievable
from .kernel import perp
from .paths import (ArcPiece, ControlPath, FunctionPiece, LinearPiece, concat,  # noqa: F401
                    constant_path, reparametrize, shift)

MAX_DOUBLINGS = 20
CHECK_POINTS = 10_000
_GL_X, _GL_W = leggauss(32)


def straight_line(x0, xf, T: float, t0: float = 0.0) -> ControlPath:
    """Constant-speed segment from ``x0`` (time ``t0``) to ``xf`` (time ``t0 + T``)."""
    if not T > 0:
        raise ValueError("duration must be positive")
    a = tuple(map(float, x0))
    b = tuple(map(float, xf))
    return ControlPath([LinearPiece(t0, t0 + T, a, b)], label="line")


# --------------------------------------------------------------------------
# transition curves
# --------------------------------------------------------------------------

def transition_curve(start, end, obstacles: Sequence[tuple], duration: float,
                     t0: float = 0.0) -> ControlPath:
    """Constant-speed path from ``start`` to ``end`` that walks around discs.

    The path follows the straight segment and, whenever the segment crosses
    an obstacle disc, replaces the chord by the shorter boundary arc between
    the entry and exit points (clockwise when both arcs have equal length).

    Parameters
    ----------
    obstacles
        Sequence of ``(center, radius)``.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    a = np.asarray(start, float)
    b = np.asarray(end, float)
    discs = [(np.asarray(c, float), float(r)) for c, r in obstacles]
    for c, r in discs:
        for name, p in (("start", a), ("end", b)):
            if np.linalg.norm(p - c) < r * (1 - 1e-12):
                raise BlockedPath(f"transition {name} point lies inside obstacle at {c.tolist()}")
    seg = b - a
    length = float(np.linalg.norm(seg))
    crossings = []
    if length > 0:
        u = seg / length
        for idx, (c, r) in enumerate(discs):
            proj = float((c - a) @ u)
            h2 = r * r - float(np.sum((c - a - proj * u) ** 2))
            if h2 <= 0:
                continue
            half = np.sqrt(h2)
            s_in, s_out = proj - half, proj + half
            if s_out <= 1e-12 * length or s_in >= length * (1 - 1e-12) or half < 1e-12 * max(1.0, r):
                continue
            crossings.append((s_in, s_out, idx))
    crossings.sort()
    hit = {c[2] for c in crossings}
    for i in range(len(discs)):
        for j in range(i + 1, len(discs)):
            if i not in hit and j not in hit:
                continue
            (ci, ri), (cj, rj) = discs[i], discs[j]
            if np.linalg.norm(ci - cj) < ri + rj:
                raise OverlappingObstacles(f"obstacles {i} and {j} overlap")

    # geometric pieces: ('line', p, q) or ('arc', center, radius, th0, dth)
    geo = []
    cursor = a
    for s_in, s_out, idx in crossings:
        c, r = discs[idx]
        p_in = a + s_in * u
        p_out = a + s_out * u
        if np.linalg.norm(p_in - cursor) > 0:
            geo.append(("line", cursor, p_in))
        th0 = np.arctan2(*(p_in - c)[::-1])
        th1 = np.arctan2(*(p_out - c)[::-1])
        ccw = (th1 - th0) % (2 * np.pi)
        cw = ccw - 2 * np.pi
        dth = ccw if ccw < -cw - 1e-12 else cw
        geo.append(("arc", c, r, th0, dth))
        cursor = p_out
    if np.linalg.norm(b - cursor) > 0 or not geo:
        geo.append(("line", cursor, b))

    lengths = np.array([np.linalg.norm(g[2] - g[1]) if g[0] == "line" else g[2] * abs(g[4]) for g in geo])
    total = float(lengths.sum())
    if total == 0:
        return ControlPath([LinearPiece(t0, t0 + duration, tuple(a), tuple(a))], label="transition")
    cuts = t0 + duration * np.concatenate([[0.0], np.cumsum(lengths) / total])
    cuts[-1] = t0 + duration
    pieces = []
    for g, ta, tb in zip(geo, cuts[:-1], cuts[1:]):
        if tb <= ta:
            continue
        if g[0] == "line":
            pieces.append(LinearPiece(float(ta), float(tb), tuple(map(float, g[1])), tuple(map(float, g[2]))))
        else:
            pieces.append(ArcPiece(float(ta), float(tb), tuple(map(float, g[1])), g[2], float(g[3]), float(g[4])))
    return ControlPath(pieces, c1=len(pieces) == 1, label="transition")


def path_length(path: ControlPath) -> float:
    total = 0.0
    for p in path.pieces:
        if isinstance(p, LinearPiece):
            total += float(np.hypot(p.p1[0] - p.p0[0], p.p1[1] - p.p0[1]))
        elif isinstance(p, ArcPiece):
            total += p.radius * abs(p.dtheta)
        else:
            t = np.linspace(p.t0, p.t1, 2001)
            total += float(np.trapz(np.linalg.norm(p.eval(t, 1), axis=1), t))
    return total


# --------------------------------------------------------------------------
# curve family
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveConstraints:
    """Per-curve requirements; start and end points are passed alongside.

    ``clearance=None`` lets the routing pick ``r`` (a quarter of the smallest
    synchronized distance between the routed base paths).
    """

    start_velocity: tuple[float, float] | None = None
    v_min: float = 0.0
    clearance: float | None = None
    horizon: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.v_min < 0:
            raise ValueError("v_min must be nonnegative")
        if self.clearance is not None and not self.clearance > 0:
            raise ValueError("clearance must be positive")
        if not self.horizon[1] > self.horizon[0]:
            raise ValueError("horizon must have positive length")
        if self.start_velocity is not None and np.hypot(*self.start_velocity) < self.v_min * (1 - 1e-12):
            raise ValueError("prescribed start velocity is below the speed floor")


@dataclass
class CurveFamily:
    """Reference curves plus the parameters that produced them."""

    paths: list[ControlPath]
    clearance: float
    k: int
    n_blend: float
    lead_in: float
    base: list[BasePath] = field(repr=False, default_factory=list)
    curves: list = field(repr=False, default_factory=list)

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i):
        return self.paths[i]


def smoothstep(x, order: int = 0):
    """Quintic smoothstep clamped to [0, 1] (C2), or its derivatives."""
    x = np.asarray(x, float)
    xc = np.clip(x, 0.0, 1.0)
    inside = (x > 0) & (x < 1)
    if order == 0:
        return xc**3 * (10 - 15 * xc + 6 * xc**2)
    if order == 1:
        return np.where(inside, 30 * xc**2 * (1 - xc) ** 2, 0.0)
    return np.where(inside, 60 * xc * (1 - xc) * (1 - 2 * xc), 0.0)


def blend_weight(u, order: int = 0):
    """Cut-off equal to 1 on (-inf, -1] and 0 on [0, inf)."""
    if order == 0:
        return 1.0 - smoothstep(np.asarray(u) + 1.0)
    return -smoothstep(np.asarray(u) + 1.0, order)


@dataclass(frozen=True)
class BasePath:
    """``s -> a + s (b - a) + bend sin(pi s) n`` on [0, 1] (or a loop when a == b)."""

    a: np.ndarray
    b: np.ndarray
    bend: float
    loop_diameter: float = 0.0

    @property
    def is_loop(self) -> bool:
        return bool(np.allclose(self.a, self.b, atol=0, rtol=0))

    @property
    def normal(self) -> np.ndarray:
        d = self.b - self.a
        return perp(d / np.linalg.norm(d))

    def eval(self, s, order=0):
        s = np.asarray(s, float)[:, None]
        if self.is_loop:
            return _loop(self.a, np.array([1.0, 0.0]), self.loop_diameter, s[:, 0], order)
        d = self.b - self.a
        n = self.normal
        if order == 0:
            return self.a + s * d + self.bend * np.sin(np.pi * s) * n
        if order == 1:
            return d + self.bend * np.pi * np.cos(np.pi * s) * n
        return -self.bend * np.pi**2 * np.sin(np.pi * s) * n

    def end_direction(self) -> np.ndarray:
        v = self.eval(np.array([1.0]), 1)[0]
        return v / np.linalg.norm(v)


def _loop(through, direction, diameter, s, order):
    """Circle of given diameter through ``through`` with tangent perpendicular to ``direction`` at s=0."""
    e = np.asarray(direction, float)
    p = perp(e)
    rad = 0.5 * diameter
    center = np.asarray(through, float) + rad * e
    w = 2 * np.pi
    th = w * np.asarray(s, float)
    cs, sn = np.cos(th)[:, None], np.sin(th)[:, None]
    if order == 0:
        return center - rad * (cs * e + sn * p)
    if order == 1:
        return -rad * w * (-sn * e + cs * p)
    return rad * w * w * (cs * e + sn * p)


def route_base_paths(starts, ends, scale: float | None = None, samples: int = 2001,
                     accept: float = 1.0) -> tuple[list[BasePath], float]:
    """Deterministic sequential routing with synchronized separation.

    Curve 1 is a straight line. Each later curve picks, from a fixed list
    of sideways bends, the one maximizing its smallest same-parameter
    distance to the curves already routed. With ``accept < 1`` the
    mildest bend reaching ``accept`` times that best distance is taken
    instead, which keeps paths short. Returns the base paths and the
    smallest synchronized distance between any two of them.
    """
    starts = np.asarray(starts, float).reshape(-1, 2)
    ends = np.asarray(ends, float).reshape(-1, 2)
    n = starts.shape[0]
    if scale is None:
        pts = np.vstack([starts, ends])
        d = pts[:, None] - pts[None]
        r = np.sqrt(np.sum(d * d, -1))
        r[r == 0] = np.inf
        scale = float(r.min()) if np.isfinite(r.min()) else 1.0
    s = np.linspace(0.0, 1.0, samples)
    candidates = [0.0]
    for m in (0.25, 0.5, 1.0, 2.0, 4.0):
        candidates += [m * scale, -m * scale]
    routed: list[BasePath] = []
    samples_so_far = []
    for i in range(n):
        a, b = starts[i], ends[i]
        if np.array_equal(a, b):
            best = BasePath(a, b, 0.0, loop_diameter=scale / 8)
        else:
            best, best_d = None, -np.inf
            scored = []
            for bend in candidates:
                cand = BasePath(a, b, bend)
                if not samples_so_far:
                    best = cand
                    break
                pts = cand.eval(s)
                dmin = min(float(np.min(np.linalg.norm(pts - q, axis=1))) for q in samples_so_far)
                scored.append((cand, dmin))
                if dmin > best_d * (1 + 1e-9):
                    best, best_d = cand, dmin
            if accept < 1.0 and scored:
                best = next(c for c, dm in scored if dm >= accept * best_d)
        routed.append(best)
        samples_so_far.append(best.eval(s))
    dmin = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            dmin = min(dmin, float(np.min(np.linalg.norm(samples_so_far[i] - samples_so_far[j], axis=1))))
    return routed, dmin


class _FamilyCurve:
    """Analytic evaluation of one curve of the family (lead-in + blended main part)."""

    def __init__(self, base: BasePath, start, v0, u, lead, t0, T, k, nb, loop_d):
        self.base = base
        self.start = np.asarray(start, float)
        self.v0 = np.asarray(v0, float)
        self.u = np.asarray(u, float)
        self.lead = lead
        self.t0 = t0
        self.T = T
        self.k = k
        self.nb = nb
        self.Tm = T - lead
        self.turn = _signed_angle(self.v0, self.u)
        self.th0 = float(np.arctan2(self.v0[1], self.v0[0]))
        self.sp0 = float(np.linalg.norm(self.v0))
        self.sp1 = float(np.linalg.norm(self.u))
        self.shift = self._lead_position(np.array([lead]))[0] - base.a if lead > 0 else np.zeros(2)
        direction = base.end_direction() if not base.is_loop else np.array([1.0, 0.0])
        self.loop_dir = direction
        self.loop_d = loop_d if not base.is_loop else base.loop_diameter

    # lead-in: velocity turns from v0 to u with speed interpolated monotonically
    def _lead_velocity(self, t, order):
        x = t / self.lead
        sg, dsg = smoothstep(x), smoothstep(x, 1) / self.lead
        th = self.th0 + self.turn * sg
        sp = self.sp0 + (self.sp1 - self.sp0) * sg
        d = np.stack([np.cos(th), np.sin(th)], axis=1)
        if order == 0:
            return sp[:, None] * d
        dsp = (self.sp1 - self.sp0) * dsg
        dth = self.turn * dsg
        return dsp[:, None] * d + (sp * dth)[:, None] * perp(d)

    def _lead_position(self, t):
        # Gauss-Legendre on [0, t] (velocity is smooth and slowly varying)
        nodes = 0.5 * t[:, None] * (_GL_X + 1.0)
        v = self._lead_velocity(nodes.reshape(-1), 0).reshape(t.size, -1, 2)
        return self.start + 0.5 * t[:, None] * np.einsum("q,tqd->td", _GL_W, v)

    def lead_eval(self, t, order):
        t = np.asarray(t, float) - self.t0
        if order == 0:
            return self._lead_position(t)
        if order == 1:
            return self._lead_velocity(t, 0)
        return self._lead_velocity(t, 1)

    def _shifted_base(self, s, order):
        sc = np.clip(s, 0.0, 1.0)
        inside = (s < 1.0)[:, None]
        val = self.base.eval(sc, order)
        if order == 0:
            return val + self.shift[None, :] * (1.0 - smoothstep(sc))[:, None]
        corr = -self.shift[None, :] * smoothstep(sc, order)[:, None]
        return np.where(inside, val + corr, 0.0)

    def main_eval(self, t, order):
        tau = np.asarray(t, float) - self.t0 - self.lead
        k, Tm, nb = self.k, self.Tm, self.nb
        s = k * tau / Tm
        ds = k / Tm
        u = nb * (tau - Tm / k)
        phi = [blend_weight(u, j)[:, None] for j in range(3)]
        C = [self._shifted_base(s, j) for j in range(3)]
        c = [_loop(self.base.b, self.loop_dir, self.loop_d, s, j) for j in range(3)]
        diff0 = C[0] - c[0]
        if order == 0:
            return c[0] + phi[0] * diff0
        diff1 = (C[1] - c[1]) * ds
        if order == 1:
            return c[1] * ds + phi[1] * nb * diff0 + phi[0] * diff1
        diff2 = (C[2] - c[2]) * ds * ds
        return (c[2] * ds * ds + phi[2] * nb * nb * diff0 + 2 * phi[1] * nb * diff1 + phi[0] * diff2)

    def path(self) -> ControlPath:
        t0, T = self.t0, self.T
        main = FunctionPiece(t0 + self.lead, t0 + T, self.main_eval)
        if self.lead > 0:
            return ControlPath([FunctionPiece(t0, t0 + self.lead, self.lead_eval), main], label="reference")
        return ControlPath([main], label="reference")


def _signed_angle(v0, u):
    a0 = np.arctan2(v0[1], v0[0])
    a1 = np.arctan2(u[1], u[0])
    d = (a1 - a0 + np.pi) % (2 * np.pi) - np.pi
    return float(d)


def build_curve_family(starts, ends, constraints: Sequence[CurveConstraints] | CurveConstraints,
                       check_points: int = CHECK_POINTS) -> CurveFamily:
    """Curves from ``starts`` to ``ends`` meeting clearance, speed floor and start velocity.

    The integer loop count ``k`` and the blend sharpness ``n`` are doubled
    until the dense-grid checks pass (cap ``2**20``).
    """
    starts = np.asarray(starts, float).reshape(-1, 2)
    ends = np.asarray(ends, float).reshape(-1, 2)
    N = starts.shape[0]
    if ends.shape[0] != N:
        raise ValueError("starts and ends must have the same length")
    if isinstance(constraints, CurveConstraints):
        constraints = [constraints] * N
    constraints = list(constraints)
    if len(constraints) != N:
        raise ValueError("one constraint per curve is required")
    horizons = {c.horizon for c in constraints}
    if len(horizons) != 1:
        raise ValueError("all curves must share one horizon")
    t0, t1 = constraints[0].horizon
    T = t1 - t0
    for name, pts in (("starts", starts), ("ends", ends)):
        if N > 1:
            d = pts[:, None] - pts[None]
            r = np.sqrt(np.sum(d * d, -1)) + np.eye(N)
            if r.min() <= 0:
                raise ValueError(f"{name} must be pairwise distinct")
    v_min = max(c.v_min for c in constraints)

    requested = [c.clearance for c in constraints if c.clearance is not None]
    if N > 1:
        base, dmin = route_base_paths(starts, ends)
        r = min(requested) if requested else dmin / 4
        if dmin < 2 * r:
            raise InfeasibleClearance(
                f"routed base paths come within {dmin:.4g}; clearance {r:.4g} needs at least {2 * r:.4g}")
    else:
        r = requested[0] if requested else (float(np.linalg.norm(ends[0] - starts[0])) or 1.0)
        base = [BasePath(starts[0], ends[0], 0.0, loop_diameter=r / 8)]
    loop_d = r / 8
    base = [BasePath(b.a, b.b, b.bend, loop_diameter=loop_d) for b in base]

    need_lead = any(c.start_velocity is not None for c in constraints)
    rate0 = [float(np.linalg.norm(b.eval(np.array([0.0]), 1)[0])) for b in base]
    # initial guesses for the loop count and blend sharpness
    lengths = [max(rate0[i], np.pi * loop_d) for i in range(N)]
    k = 1
    while k * min(min(rate0), np.pi * loop_d) / T < v_min and k < 2**MAX_DOUBLINGS:
        k *= 2
    nb = 4.0 * k / T
    last_error = None
    for _ in range(2 * MAX_DOUBLINGS + 2):
        lead = 0.0
        if need_lead:
            fastest = max(max(np.linalg.norm(c.start_velocity) for c in constraints if c.start_velocity is not None),
                          k * max(lengths) / (0.95 * T))
            lead = min(T / 20, r / (8 * fastest))
        Tm = T - lead
        nb = max(nb, 2.0 * k / Tm)
        curves = []
        for i in range(N):
            u = base[i].eval(np.array([0.0]), 1)[0] * k / Tm
            v0 = constraints[i].start_velocity
            v0 = u if v0 is None else np.asarray(v0, float)
            curves.append(_FamilyCurve(base[i], starts[i], v0, u, lead, t0, T, k, nb, loop_d))
        paths = [c.path() for c in curves]
        ok, reason = _check_family(paths, starts, ends, constraints, r, v_min, max(check_points, 64 * k))
        if ok:
            return CurveFamily(paths, r, k, nb, lead, base)
        last_error = reason
        if reason == "speed":
            if k >= 2**MAX_DOUBLINGS:
                raise SpeedFloorUnachievable(f"speed floor {v_min:.4g} not reached with k up to 2^{MAX_DOUBLINGS}")
            k *= 2
            nb = max(nb, 4.0 * k / T)
        else:
            if nb * T >= 2.0**MAX_DOUBLINGS * 4:
                raise InfeasibleClearance(f"clearance {r:.4g} not met with blend sharpness up to cap")
            nb *= 2
    raise InfeasibleClearance(f"curve family checks failed ({last_error})")


def _check_family(paths, starts, ends, constraints, r, v_min, points):
    t0, t1 = paths[0].domain
    t = np.linspace(t0, t1, points)
    vals = [p.evaluate(t, 0) for p in paths]
    for i, p in enumerate(paths):
        speed = np.linalg.norm(p.evaluate(t, 1), axis=1)
        if speed.min() < v_min:
            return False, "speed"
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            if np.min(np.linalg.norm(vals[i] - vals[j], axis=1)) < r:
                return False, "clearance"
    return True, ""


def check_curve_family(family: CurveFamily, starts, ends, constraints, points: int = CHECK_POINTS) -> dict:
    """Dense-grid report of the four curve-family conditions."""
    starts = np.asarray(starts, float).reshape(-1, 2)
    ends = np.asarray(ends, float).reshape(-1, 2)
    if isinstance(constraints, CurveConstraints):
        constraints = [constraints] * len(family)
    t0, t1 = family[0].domain
    t = np.linspace(t0, t1, points)
    vals = np.stack([p.evaluate(t, 0) for p in family])
    speeds = np.stack([np.linalg.norm(p.evaluate(t, 1), axis=1) for p in family])
    start_err = max(float(np.linalg.norm(p.evaluate(t0) - s)) for p, s in zip(family, starts))
    end_err = max(float(np.linalg.norm(p.evaluate(t1) - e)) for p, e in zip(family, ends))
    vel_err = 0.0
    for p, c in zip(family, constraints):
        if c.start_velocity is not None:
            vel_err = max(vel_err, float(np.linalg.norm(p.evaluate(t0, 1) - np.asarray(c.start_velocity))))
    sep = np.inf
    for i in range(len(family)):
        for j in range(i + 1, len(family)):
            sep = min(sep, float(np.min(np.linalg.norm(vals[i] - vals[j], axis=1))))
    return {"start_error": start_err, "end_error": end_err, "start_velocity_error": vel_err,
            "min_separation": sep, "min_speed": float(speeds.min())}


# --------------------------------------------------------------------------
# trochoid family
# --------------------------------------------------------------------------

class TrochoidCurve:
    """Fast circling superposed on a slow drift along a base path.

    ``Gamma(t) = c(sigma(u)) + radius (e(theta0 + omega (t - t0)) - e(theta0))``
    with ``u = (t - t0)/T``, ``sigma`` the quintic smoothstep (so the drift
    starts and stops at rest), ``e(a) = (cos a, sin a)`` and ``omega T`` a
    multiple of ``2 pi`` so the circle closes at ``T``. The start velocity is
    ``radius * omega * perp(e(theta0))``.
    """

    def __init__(self, base: BasePath, t0: float, T: float, radius: float, omega: float, theta0: float):
        self.base = base
        self.t0 = float(t0)
        self.T = float(T)
        self.radius = float(radius)
        self.omega = float(omega)
        self.theta0 = float(theta0)
        self.e0 = np.array([np.cos(theta0), np.sin(theta0)])

    def eval(self, t, order):
        t = np.asarray(t, float)
        u = (t - self.t0) / self.T
        s = smoothstep(u)
        th = self.theta0 + self.omega * (t - self.t0)
        e = np.stack([np.cos(th), np.sin(th)], axis=1)
        w, r, T = self.omega, self.radius, self.T
        if order == 0:
            return self.base.eval(s, 0) + r * (e - self.e0)
        ds = smoothstep(u, 1)[:, None] / T
        c1 = self.base.eval(s, 1)
        if order == 1:
            return c1 * ds + r * w * perp(e)
        d2s = smoothstep(u, 2)[:, None] / T**2
        return self.base.eval(s, 2) * ds * ds + c1 * d2s - r * w * w * e

    def max_drift_speed(self) -> float:
        u = np.linspace(0.0, 1.0, 2001)
        c1 = self.base.eval(smoothstep(u), 1) * smoothstep(u, 1)[:, None] / self.T
        return float(np.max(np.linalg.norm(c1, axis=1)))

    def path(self) -> ControlPath:
        return ControlPath([FunctionPiece(self.t0, self.t0 + self.T, self.eval)], label="reference")


def trochoid_turns(speed: float, min_rate: float, T: float) -> int:
    """Smallest number of turns on ``[0, T]`` giving an angular rate of at least ``min_rate``."""
    return max(1, int(np.ceil(min_rate * T / (2 * np.pi) - 1e-12)))


def build_trochoid_family(starts, ends, start_velocities, min_rates, horizon: tuple[float, float],
                          base: list[BasePath] | None = None, clearance: float | None = None,
                          check_points: int = CHECK_POINTS) -> CurveFamily:
    """Trochoids from ``starts`` to ``ends`` with exact start velocities.

    Curve ``i`` circles with angular rate ``omega_i >= min_rates[i]`` (an
    integer number of turns on the horizon) and radius
    ``|start_velocities[i]| / omega_i`` while its circle center drifts along
    the routed base path. The speed stays within ``max drift`` of
    ``|start_velocities[i]|``. Clearance is checked on a dense grid.
    """
    starts = np.asarray(starts, float).reshape(-1, 2)
    ends = np.asarray(ends, float).reshape(-1, 2)
    v0 = np.asarray(start_velocities, float).reshape(-1, 2)
    N = starts.shape[0]
    t0, t1 = map(float, horizon)
    T = t1 - t0
    if base is None:
        if N > 1:
            base, dmin = route_base_paths(starts, ends)
        else:
            base, dmin = [BasePath(starts[0], ends[0], 0.0, loop_diameter=1.0)], np.inf
    else:
        dmin = np.inf
    curves = []
    turns = []
    for i in range(N):
        sp = float(np.linalg.norm(v0[i]))
        if sp <= 0:
            raise ValueError("start velocities must be nonzero")
        m = trochoid_turns(sp, float(min_rates[i]), T)
        omega = 2 * np.pi * m / T
        theta0 = float(np.arctan2(v0[i, 1], v0[i, 0])) - 0.5 * np.pi
        b = base[i]
        if b.is_loop:
            b = BasePath(b.a, b.b, 0.0, loop_diameter=0.0)
        curves.append(TrochoidCurve(_StillBase(b) if b.is_loop else b, t0, T, sp / omega, omega, theta0))
        turns.append(m)
    paths = [c.path() for c in curves]
    points = max(check_points, 64 * max(turns))
    t = np.linspace(t0, t1, points)
    vals = [p.evaluate(t, 0) for p in paths]
    sep = np.inf
    for i in range(N):
        for j in range(i + 1, N):
            sep = min(sep, float(np.min(np.linalg.norm(vals[i] - vals[j], axis=1))))
    r = clearance if clearance is not None else (sep if np.isfinite(sep) else 1.0)
    if sep < r:
        raise InfeasibleClearance(f"trochoids come within {sep:.4g} < clearance {r:.4g}")
    return CurveFamily(paths, float(r), max(turns), 0.0, 0.0, list(base), curves)


class _StillBase:
    """Base path of a curve whose start and end coincide: the drift is zero."""

    def __init__(self, b: BasePath):
        self.a = b.a
        self.b = b.b
        self.is_loop = True

    def eval(self, s, order=0):
        s = np.asarray(s, float)
        if order == 0:
            return np.broadcast_to(self.a, (s.size, 2)).copy()
        return np.zeros((s.size, 2))

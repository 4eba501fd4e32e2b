"""Point-vortex equations of motion, guarded integrators and conserved quantities.

The velocity induced at ``x`` by a vortex of intensity ``g`` sitting at ``p``
is ``g * K(x - p)`` with ``K(x) = perp(x)/|x|^2`` (the 1/(2 pi) factor is
absorbed into intensities). Control vortices are prescribed
:class:`~vortexctl.paths.ControlPath` objects; they act on the free vortices
but are not acted upon.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .errors import CollisionError, StepFailure
from .kernel import biot_savart
from .paths import ControlPath

DEFAULT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class VortexConfig:
    """Positions ``(N, 2)`` and nonzero intensities ``(N,)`` of the free vortices."""

    positions: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, float).reshape(-1, 2)
        gam = np.array(self.intensities, float).reshape(-1)
        if pos.shape[0] != gam.size:
            raise ValueError("positions and intensities must have the same length")
        if np.any(gam == 0) or not np.all(np.isfinite(gam)):
            raise ValueError("vortex intensities must be finite and nonzero")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if pos.shape[0] > 1 and pairwise_min_distance(pos) <= 0:
            raise ValueError("vortex positions must be pairwise distinct")
        pos.setflags(write=False)
        gam.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", gam)

    @property
    def n(self) -> int:
        return self.intensities.size

    def with_positions(self, positions) -> VortexConfig:
        return VortexConfig(positions, self.intensities)


@dataclass(frozen=True)
class ControlSet:
    """Prescribed control vortices: one path and one intensity per control."""

    paths: tuple[ControlPath, ...]
    intensities: np.ndarray

    def __post_init__(self):
        paths = tuple(self.paths)
        gam = np.array(self.intensities, float).reshape(-1)
        if len(paths) != gam.size:
            raise ValueError("one intensity per control path is required")
        if np.any(gam == 0):
            raise ValueError("control intensities must be nonzero")
        gam.setflags(write=False)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "intensities", gam)

    @property
    def m(self) -> int:
        return len(self.paths)

    def positions(self, t) -> np.ndarray:
        """Control positions at times ``t``: shape ``(len(t), M, 2)``."""
        t = np.atleast_1d(np.asarray(t, float))
        out = np.empty((t.size, self.m, 2))
        for k, p in enumerate(self.paths):
            out[:, k] = p.evaluate(t, 0)
        return out

    def covers(self, t0: float, t1: float) -> bool:
        tol = 1e-9 * max(1.0, abs(t1))
        return all(p.domain[0] <= t0 + tol and p.domain[1] >= t1 - tol for p in self.paths)


@dataclass(frozen=True)
class IntegratorSettings:
    """How to integrate.

    ``method`` is ``"rk4"`` (fixed step, numba loop) or ``"rk45"`` (scipy,
    adaptive). For RK4 either ``dt`` or an explicit increasing ``grid`` may be
    given; when both are missing a step is derived from the initial geometry.
    ``guard_radius=None`` means 1e-6 times the configuration diameter.
    """

    method: Literal["rk4", "rk45"] = "rk4"
    dt: float | None = None
    tolerance: float = DEFAULT_TOLERANCE
    guard_radius: float | None = None
    grid: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.guard_radius is not None and self.guard_radius < 0:
            raise ValueError("guard_radius must be nonnegative")

    def to_dict(self) -> dict:
        return {"method": self.method, "dt": self.dt, "tolerance": self.tolerance,
                "guard_radius": self.guard_radius,
                "grid_points": None if self.grid is None else int(len(self.grid))}


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution. ``states`` is ``(T, N, 2)``, ``controls`` is ``(T, M, 2)``."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    intensities: np.ndarray
    control_intensities: np.ndarray
    guard_radius: float
    settings: IntegratorSettings

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def vortex_separation(self) -> np.ndarray:
        """Minimum vortex-vortex distance at each sample (inf for one vortex)."""
        return _min_pair_distance(self.states)

    @property
    def control_separation(self) -> np.ndarray:
        """Minimum vortex-control distance at each sample (inf without controls)."""
        if self.controls.shape[1] == 0:
            return np.full(self.times.size, np.inf)
        d = self.states[:, :, None, :] - self.controls[:, None, :, :]
        return np.sqrt(np.min(np.sum(d * d, axis=-1), axis=(1, 2)))

    def csv_header(self) -> list[str]:
        n, m = self.states.shape[1], self.controls.shape[1]
        head = ["t"] + [f"x{i + 1}_{c}" for i in range(n) for c in (1, 2)]
        if m == 1:
            head += ["z_1", "z_2"]
        else:
            head += [f"z{k + 1}_{c}" for k in range(m) for c in (1, 2)]
        return head + ["sep_vortex", "sep_control"]

    def to_csv(self, path: str | Path) -> None:
        """Write one row per sample, full double precision, deterministic formatting."""
        rows = np.column_stack([
            self.times,
            self.states.reshape(self.times.size, -1),
            self.controls.reshape(self.times.size, -1),
            self.vortex_separation,
            self.control_separation,
        ])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header())
            for row in rows:
                w.writerow([format(float(v), ".17g") for v in row])

    def manifest(self) -> dict:
        return {
            "intensities": self.intensities.tolist(),
            "control_intensities": self.control_intensities.tolist(),
            "horizon": [float(self.times[0]), float(self.times[-1])],
            "samples": int(self.times.size),
            "guard_radius": self.guard_radius,
            "settings": self.settings.to_dict(),
        }

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))


def pairwise_min_distance(points) -> float:
    p = np.asarray(points, float).reshape(-1, 2)
    if p.shape[0] < 2:
        return np.inf
    d = p[:, None, :] - p[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1))
    r[np.diag_indices(p.shape[0])] = np.inf
    return float(r.min())


def _min_pair_distance(states):
    n = states.shape[1]
    if n < 2:
        return np.full(states.shape[0], np.inf)
    d = states[:, :, None, :] - states[:, None, :, :]
    r2 = np.sum(d * d, axis=-1)
    iu = np.triu_indices(n, 1)
    return np.sqrt(np.min(r2[:, iu[0], iu[1]], axis=1))


def rhs_free(cfg: VortexConfig, i: int, guard: float = 0.0) -> np.ndarray:
    """Velocity of vortex ``i`` induced by the other free vortices."""
    x = cfg.positions
    out = np.zeros(2)
    for j in range(cfg.n):
        if j == i:
            continue
        d = x[i] - x[j]
        dist = float(np.hypot(*d))
        if dist <= guard or dist == 0:
            raise CollisionError(f"vortices {i} and {j} at distance {dist:.3e}",
                                 pair=(f"x{i}", f"x{j}"), distance=dist)
        out += cfg.intensities[j] * biot_savart(d)
    return out


def rhs_controlled(cfg: VortexConfig, controls: ControlSet, t: float, i: int,
                   guard: float = 0.0) -> np.ndarray:
    """:func:`rhs_free` plus the field of every control vortex at time ``t``."""
    out = rhs_free(cfg, i, guard)
    y = controls.positions([t])[0]
    for k in range(controls.m):
        d = cfg.positions[i] - y[k]
        dist = float(np.hypot(*d))
        if dist <= guard or dist == 0:
            raise CollisionError(f"vortex {i} and control {k} at distance {dist:.3e}",
                                 pair=(f"x{i}", f"y{k}"), time=t, distance=dist)
        out += controls.intensities[k] * biot_savart(d)
    return out


def conserved_quantities(cfg: VortexConfig) -> tuple[np.ndarray, float, float]:
    """Linear impulse, angular impulse and Hamiltonian of the free system."""
    x, g = cfg.positions, cfg.intensities
    impulse = g @ x
    angular = float(g @ np.sum(x * x, axis=1))
    ham = 0.0
    for i in range(cfg.n):
        for j in range(i + 1, cfg.n):
            dist = float(np.hypot(*(x[i] - x[j])))
            if dist == 0:
                raise CollisionError("coincident vortices", pair=(f"x{i}", f"x{j}"), distance=0.0)
            ham -= g[i] * g[j] * np.log(dist)
    return impulse, angular, float(ham)


@numba.njit(cache=True)
def _field(x, gam, y, gamc, guard2, out):
    """Fill ``out`` with velocities; return -1 if fine, else an encoded offending pair."""
    n = x.shape[0]
    m = y.shape[0]
    for i in range(n):
        vx = 0.0
        vy = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            r2 = dx * dx + dy * dy
            if r2 <= guard2:
                return i * 1000 + j
            vx -= gam[j] * dy / r2
            vy += gam[j] * dx / r2
        for k in range(m):
            dx = x[i, 0] - y[k, 0]
            dy = x[i, 1] - y[k, 1]
            r2 = dx * dx + dy * dy
            if r2 <= guard2:
                return 1000000 + i * 1000 + k
            vx -= gamc[k] * dy / r2
            vy += gamc[k] * dx / r2
        out[i, 0] = vx
        out[i, 1] = vy
    return -1


@numba.njit(cache=True)
def _rk4_loop(x0, gam, gamc, times, y_nodes, y_mid, guard):
    steps = times.size - 1
    n = x0.shape[0]
    states = np.empty((steps + 1, n, 2))
    states[0] = x0
    k1 = np.empty((n, 2))
    k2 = np.empty((n, 2))
    k3 = np.empty((n, 2))
    k4 = np.empty((n, 2))
    tmp = np.empty((n, 2))
    guard2 = guard * guard
    for s in range(steps):
        h = times[s + 1] - times[s]
        x = states[s]
        code = _field(x, gam, y_nodes[s], gamc, guard2, k1)
        if code >= 0:
            return states, s, code
        for i in range(n):
            for c in range(2):
                tmp[i, c] = x[i, c] + 0.5 * h * k1[i, c]
        code = _field(tmp, gam, y_mid[s], gamc, guard2, k2)
        if code >= 0:
            return states, s, code
        for i in range(n):
            for c in range(2):
                tmp[i, c] = x[i, c] + 0.5 * h * k2[i, c]
        code = _field(tmp, gam, y_mid[s], gamc, guard2, k3)
        if code >= 0:
            return states, s, code
        for i in range(n):
            for c in range(2):
                tmp[i, c] = x[i, c] + h * k3[i, c]
        code = _field(tmp, gam, y_nodes[s + 1], gamc, guard2, k4)
        if code >= 0:
            return states, s, code
        for i in range(n):
            for c in range(2):
                states[s + 1, i, c] = x[i, c] + h / 6.0 * (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])
    # final node check
    code = _field(states[steps], gam, y_nodes[steps], gamc, guard2, k1)
    if code >= 0:
        return states, steps, code
    return states, -1, -1


def default_guard(cfg: VortexConfig) -> float:
    x = cfg.positions
    diam = float(np.max(np.ptp(x, axis=0))) if cfg.n > 1 else 0.0
    return 1e-6 * max(diam, 1e-300) if cfg.n > 1 else 0.0


def default_step(cfg: VortexConfig, controls: ControlSet | None, t0: float, t1: float) -> float:
    """``min(1e-3 T, 0.05 dmin^2 / max|gamma|)`` from the initial geometry."""
    pts = [cfg.positions]
    gams = [np.abs(cfg.intensities)]
    if controls is not None and controls.m:
        pts.append(controls.positions([t0])[0])
        gams.append(np.abs(controls.intensities))
    dmin = np.inf
    if cfg.n > 1:
        dmin = pairwise_min_distance(cfg.positions)
    if len(pts) > 1:
        d = cfg.positions[:, None, :] - pts[1][None, :, :]
        dmin = min(dmin, float(np.sqrt(np.min(np.sum(d * d, axis=-1)))))
    gmax = float(np.max(np.concatenate(gams)))
    step = 1e-3 * (t1 - t0)
    if np.isfinite(dmin):
        step = min(step, 0.05 * dmin**2 / gmax)
    return step


def _decode(code, grid_time, state, controls):
    if code >= 1000000:
        i, k = divmod(code - 1000000, 1000)
        d = float(np.hypot(*(state[i] - controls[k])))
        return CollisionError(f"vortex {i} met control {k} (distance {d:.3e}) near t={grid_time:.6g}",
                              pair=(f"x{i}", f"y{k}"), time=grid_time, distance=d)
    i, j = divmod(code, 1000)
    d = float(np.hypot(*(state[i] - state[j])))
    return CollisionError(f"vortices {i} and {j} met (distance {d:.3e}) near t={grid_time:.6g}",
                          pair=(f"x{i}", f"x{j}"), time=grid_time, distance=d)


def integrate(cfg0: VortexConfig, controls: ControlSet | None, horizon: tuple[float, float],
              settings: IntegratorSettings = IntegratorSettings()) -> Trajectory:
    """Integrate the free or controlled system on ``horizon``.

    Raises :class:`CollisionError` as soon as a vortex-vortex or
    vortex-control distance drops to the guard radius, and
    :class:`StepFailure` if the adaptive solver gives up.
    """
    t0, t1 = map(float, horizon)
    if not t1 > t0:
        raise ValueError("horizon must have positive length")
    if controls is not None and not controls.covers(t0, t1):
        raise ValueError("control paths do not cover the integration horizon")
    guard = default_guard(cfg0) if settings.guard_radius is None else float(settings.guard_radius)
    gamc = np.zeros(0) if controls is None else np.asarray(controls.intensities, float)
    m = 0 if controls is None else controls.m
    if settings.method == "rk45":
        return _integrate_adaptive(cfg0, controls, t0, t1, settings, guard, gamc)

    if settings.grid is not None:
        grid = np.asarray(settings.grid, float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("integration grid must be strictly increasing")
        if abs(grid[0] - t0) > 1e-12 * max(1, abs(t0)) or abs(grid[-1] - t1) > 1e-12 * max(1, abs(t1)):
            raise ValueError("integration grid must span the horizon")
    else:
        dt = settings.dt or default_step(cfg0, controls, t0, t1)
        steps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
        grid = np.linspace(t0, t1, steps + 1)
    mids = 0.5 * (grid[1:] + grid[:-1])
    if m:
        y_nodes = controls.positions(grid)
        y_mid = controls.positions(mids)
    else:
        y_nodes = np.zeros((grid.size, 0, 2))
        y_mid = np.zeros((mids.size, 0, 2))
    states, fail, code = _rk4_loop(np.ascontiguousarray(cfg0.positions), np.ascontiguousarray(cfg0.intensities),
                                   gamc, grid, y_nodes, y_mid, guard)
    if fail >= 0:
        raise _decode(code, float(grid[fail]), states[fail], y_nodes[fail])
    if not np.all(np.isfinite(states)):
        raise StepFailure("non-finite state produced by the fixed-step integrator")
    return Trajectory(grid, states, y_nodes, np.array(cfg0.intensities), gamc, guard, settings)


def _integrate_adaptive(cfg0, controls, t0, t1, settings, guard, gamc):
    n = cfg0.n
    gam = np.asarray(cfg0.intensities, float)
    m = gamc.size
    out = np.empty((n, 2))

    def ctrl(t):
        return controls.positions([t])[0] if m else np.zeros((0, 2))

    # the guard is enforced by the terminal event; a trial step that overshoots
    # into the guard ball must still get a finite field so the event can be located
    def fun(t, u):
        code = _field(u.reshape(n, 2), gam, ctrl(t), gamc, 0.0, out)
        if code >= 0:
            return np.full(2 * n, np.nan)
        return out.reshape(-1).copy()

    def margin(t, u):
        x = u.reshape(n, 2)
        d = np.inf
        if n > 1:
            d = pairwise_min_distance(x)
        if m:
            diff = x[:, None, :] - ctrl(t)[None, :, :]
            d = min(d, float(np.sqrt(np.min(np.sum(diff * diff, axis=-1)))))
        return d - guard if np.isfinite(d) else 1.0

    margin.terminal = True
    margin.direction = -1
    tol = settings.tolerance
    sol = solve_ivp(fun, (t0, t1), cfg0.positions.reshape(-1), method="RK45",
                    rtol=tol, atol=tol, events=margin if (n > 1 or m) else None)
    if sol.status == -1:
        raise StepFailure(f"adaptive integrator failed: {sol.message}")
    states = sol.y.T.reshape(-1, n, 2)
    times = sol.t
    if m:
        y = controls.positions(times)
    else:
        y = np.zeros((times.size, 0, 2))
    if sol.status == 1:
        tc = float(sol.t_events[0][0])
        xc = sol.y_events[0][0].reshape(n, 2)
        raise CollisionError(f"guard radius reached at t={tc:.6g}", time=tc,
                             pair=_closest_pair(xc, ctrl(tc)), distance=guard)
    return Trajectory(times, states, y, gam.copy(), gamc, guard, settings)


def _closest_pair(x, y):
    best, pair = np.inf, None
    for i in range(x.shape[0]):
        for j in range(i + 1, x.shape[0]):
            d = np.hypot(*(x[i] - x[j]))
            if d < best:
                best, pair = d, (f"x{i}", f"x{j}")
        for k in range(y.shape[0]):
            d = np.hypot(*(x[i] - y[k]))
            if d < best:
                best, pair = d, (f"x{i}", f"y{k}")
    return pair

"""Inversion of the control-to-velocity map.

For anchors ``x`` (vortex positions) and control positions ``y`` the velocity
of vortex ``i`` is ``F_i(y) = Ft_i(y) + G_i(y)`` where the diagonal part
``Ft_i(y) = gc_i K(x_i - y_i)`` has a closed-form inverse and ``G`` gathers
the vortex-vortex field and the far controls. Inverting ``F`` is done by the
fixed point ``y <- Ft^{-1}(v - G(y))`` with a damped Newton fallback.

All array routines are batched: ``x`` and ``y`` are ``(B, N, 2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (CalibrationFailed, Coincidence, ContractionViolated, DegenerateContext,
                     NoConvergence, ZeroVelocity)
from .kernel import biot_savart_jacobian, perp

log = logging.getLogger(__name__)

ZERO_TOL = 1e-300
H_BOUND = 7.0 / 9.0
DOMINANCE_FACTOR = 56.0 / 15.0
REL_TOL = 1e-10
MAX_FIXED_POINT = 50
MAX_NEWTON = 30


@dataclass(frozen=True)
class FieldContext:
    """Anchor positions with vortex and control intensities."""

    x: np.ndarray
    gamma: np.ndarray
    gamma_c: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, float).reshape(-1, 2)
        g = np.array(self.gamma, float).reshape(-1)
        gc = np.array(self.gamma_c, float).reshape(-1)
        if not (x.shape[0] == g.size == gc.size):
            raise ValueError("x, gamma and gamma_c must have the same length")
        if np.any(gc == 0):
            raise ValueError("control intensities must be nonzero")
        if x.shape[0] > 1 and _min_sep(x[None])[0] <= 0:
            raise Coincidence("anchor positions must be pairwise distinct")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "gamma_c", gc)

    @property
    def n(self) -> int:
        return self.gamma.size

    @property
    def min_separation(self) -> float:
        return float(_min_sep(self.x[None])[0]) if self.n > 1 else np.inf


@dataclass(frozen=True)
class AdmissibleRadii:
    R: np.ndarray

    @property
    def degenerate(self) -> bool:
        return bool(np.all(np.isinf(self.R)))


@dataclass(frozen=True)
class SpeedFloor:
    a: np.ndarray
    doublings: int = 0

    def __post_init__(self):
        a = np.array(self.a, float).reshape(-1)
        if np.any(a <= 0):
            raise ValueError("speed floor components must be positive")
        object.__setattr__(self, "a", a)

    @property
    def v_min(self) -> float:
        return float(self.a.max())


@dataclass
class InversionInfo:
    """Per-call certificate of the fixed-point solve."""

    iterations: int = 0
    newton_used: int = 0
    residual_history: list[float] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        h = self.residual_history[1:]
        return all(b <= a for a, b in zip(h, h[1:]))


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def _kernel(d):
    r2 = np.sum(d * d, axis=-1)
    if np.any(r2 <= ZERO_TOL):
        raise Coincidence("kernel evaluated at coincident points")
    return perp(d) / r2[..., None]


def _min_sep(x):
    n = x.shape[-2]
    if n < 2:
        return np.full(x.shape[:-2], np.inf)
    d = x[..., :, None, :] - x[..., None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1))
    r = r + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    return r.min(axis=(-1, -2))


def _as_batch(a):
    a = np.asarray(a, float)
    single = a.ndim == 2
    return (a[None] if single else a), single


def single_inverse(x, gamma, v) -> np.ndarray:
    """The point ``y`` with ``gamma K(x - y) = v``: ``x + gamma perp(v)/|v|^2``.

    ``gamma`` may be a scalar or an array broadcasting against ``v[..., :1]``.
    """
    gamma = np.asarray(gamma, float)
    if np.any(gamma == 0):
        raise ValueError("intensity must be nonzero")
    v = np.asarray(v, float)
    n2 = np.sum(v * v, axis=-1)
    if np.any(n2 <= ZERO_TOL):
        raise ZeroVelocity("cannot invert a zero velocity")
    return np.asarray(x, float) + gamma * perp(v) / n2[..., None]


def f_single(x, gamma: float, y) -> np.ndarray:
    """Velocity at ``x`` induced by a vortex of intensity ``gamma`` at ``y``."""
    return gamma * _kernel(np.asarray(x, float) - np.asarray(y, float))


def F_tilde_arrays(x, gc, y):
    return gc[:, None] * _kernel(x - y)


def F_tilde_inverse_arrays(x, gc, v):
    n2 = np.sum(v * v, axis=-1)
    if np.any(n2 <= ZERO_TOL):
        raise ZeroVelocity("cannot invert a zero velocity component")
    return x + gc[:, None] * perp(v) / n2[..., None]


def G_arrays(x, g, gc, y):
    """Off-diagonal field: other vortices plus the controls of the other vortices."""
    n = x.shape[-2]
    out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    for j in range(n):
        mask = np.ones(n, bool)
        mask[j] = False
        out[..., mask, :] += g[j] * _kernel(x[..., mask, :] - x[..., j:j + 1, :])
        out[..., mask, :] += gc[j] * _kernel(x[..., mask, :] - y[..., j:j + 1, :])
    return out


def F_full_arrays(x, g, gc, y):
    return F_tilde_arrays(x, gc, y) + G_arrays(x, g, gc, y)


def F_tilde(ctx: FieldContext, y) -> np.ndarray:
    """Diagonal part: component ``i`` is ``gc_i K(x_i - y_i)``."""
    yb, single = _as_batch(y)
    out = F_tilde_arrays(ctx.x, ctx.gamma_c, yb)
    return out[0] if single else out


def F_tilde_inverse(ctx: FieldContext, v) -> np.ndarray:
    vb, single = _as_batch(v)
    out = F_tilde_inverse_arrays(ctx.x, ctx.gamma_c, vb)
    return out[0] if single else out


def G(ctx: FieldContext, y) -> np.ndarray:
    yb, single = _as_batch(y)
    out = G_arrays(ctx.x, ctx.gamma, ctx.gamma_c, yb)
    return out[0] if single else out


def F_full(ctx: FieldContext, y) -> np.ndarray:
    """Velocity of every vortex when control ``k`` sits at ``y_k``."""
    yb, single = _as_batch(y)
    out = F_full_arrays(ctx.x, ctx.gamma, ctx.gamma_c, yb)
    return out[0] if single else out


def H(ctx: FieldContext, y) -> np.ndarray:
    """``H_i = 2 <perp(x_i - y_i)/gc_i, G_i> + |x_i - y_i|^2 |G_i|^2 / gc_i^2`` (smooth at y = x)."""
    yb, single = _as_batch(y)
    out = _H_arrays(ctx.x, ctx.gamma, ctx.gamma_c, yb)
    return out[0] if single else out


def _H_arrays(x, g, gc, y):
    Gv = G_arrays(x, g, gc, y)
    d = x - y
    return (2 * np.sum(perp(d) * Gv, axis=-1) / gc
            + np.sum(d * d, axis=-1) * np.sum(Gv * Gv, axis=-1) / gc**2)


def admissible_radii(ctx: FieldContext) -> AdmissibleRadii:
    """Radii ``R_i`` of the balls where the diagonal term dominates.

    ``R_i = min|gc| * min_{j != i}|x_i - x_j| / (8 (N-1) max_j max(|gc_j|, |g_j|))``;
    a single vortex gets ``+inf``.
    """
    return AdmissibleRadii(_radii(ctx.x[None], ctx.gamma, ctx.gamma_c)[0])


def _radii(x, g, gc):
    n = x.shape[-2]
    if n == 1:
        return np.full(x.shape[:-1], np.inf)
    d = x[..., :, None, :] - x[..., None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1)) + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    near = r.min(axis=-1)
    scale = np.min(np.abs(gc)) / (8 * (n - 1) * max(np.max(np.abs(gc)), np.max(np.abs(g))))
    return scale * near


def dominance_margin(ctx: FieldContext, y) -> tuple[np.ndarray, np.ndarray]:
    """Ratios checking the diagonal dominance on ``D_R(x)``.

    Returns ``(q1, q2)`` with ``q1_i = |gc_i|/|x_i-y_i| / (56/15 S_i)`` and
    ``q2_i = |F_i(y)| / (2 S_i)`` where ``S_i`` is the off-diagonal budget;
    both must exceed 1.
    """
    yb, single = _as_batch(y)
    x, g, gc = ctx.x, ctx.gamma, ctx.gamma_c
    n = ctx.n
    S = np.zeros(yb.shape[:-1])
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            S[..., i] += abs(g[j]) / np.linalg.norm(x[i] - x[j]) + abs(gc[j]) / np.linalg.norm(x[i] - yb[..., j, :], axis=-1)
    diag = np.abs(gc) / np.linalg.norm(x - yb, axis=-1)
    full = np.linalg.norm(F_full_arrays(x, g, gc, yb), axis=-1)
    q1, q2 = diag / (DOMINANCE_FACTOR * S), full / (2 * S)
    return (q1[0], q2[0]) if single else (q1, q2)


def J_map(ctx: FieldContext, y, form: str = "expansion") -> np.ndarray:
    """``J = Ft^{-1} o F`` evaluated either directly or through its smooth expansion.

    The expansion ``J_i = x_i + (y_i - x_i + |x_i - y_i|^2 perp(G_i)/gc_i) / (1 + H_i)``
    extends continuously to ``y_i = x_i`` where it equals ``x_i``.
    Raises :class:`ContractionViolated` when some ``|H_i| >= 7/9``.
    """
    yb, single = _as_batch(y)
    x, g, gc = ctx.x, ctx.gamma, ctx.gamma_c
    Hv = _H_arrays(x, g, gc, yb)
    if np.any(np.abs(Hv) >= H_BOUND):
        raise ContractionViolated(f"|H| reached {np.abs(Hv).max():.3f} >= 7/9")
    if form == "direct":
        out = F_tilde_inverse_arrays(x, gc, F_full_arrays(x, g, gc, yb))
    elif form == "expansion":
        Gv = G_arrays(x, g, gc, yb)
        d = yb - x
        r2 = np.sum(d * d, axis=-1, keepdims=True)
        out = x + (d + r2 * perp(Gv) / gc[:, None]) / (1.0 + Hv[..., None])
    else:
        raise ValueError(f"unknown form {form!r}")
    return out[0] if single else out


def jacobians(x, g, gc, y):
    """Jacobians of ``F`` with respect to ``y`` and ``x``: each ``(B, 2N, 2N)``."""
    xb, _ = _as_batch(x)
    yb, _ = _as_batch(y)
    B = max(xb.shape[0], yb.shape[0])
    xb = np.broadcast_to(xb, (B,) + xb.shape[1:])
    yb = np.broadcast_to(yb, (B,) + yb.shape[1:])
    n = xb.shape[1]
    Jy = np.zeros((B, 2 * n, 2 * n))
    Jx = np.zeros((B, 2 * n, 2 * n))
    for i in range(n):
        si = slice(2 * i, 2 * i + 2)
        for k in range(n):
            Dk = biot_savart_jacobian(xb[:, i] - yb[:, k])
            Jy[:, si, 2 * k:2 * k + 2] = -gc[k] * Dk
            Jx[:, si, si] += gc[k] * Dk
            if k != i:
                Dv = biot_savart_jacobian(xb[:, i] - xb[:, k])
                Jx[:, si, si] += g[k] * Dv
                Jx[:, si, 2 * k:2 * k + 2] -= g[k] * Dv
    return Jy, Jx


# --------------------------------------------------------------------------
# inversion
# --------------------------------------------------------------------------

def invert_arrays(x, g, gc, v, info: InversionInfo | None = None, tol: float = REL_TOL,
                  max_fixed: int = MAX_FIXED_POINT, max_newton: int = MAX_NEWTON):
    """Batched solve of ``F_x(y) = v``; returns ``(y, converged_mask)``.

    ``x`` and ``v`` are ``(B, N, 2)`` (``x`` may also be ``(N, 2)``).
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    xb = np.broadcast_to(x, v.shape)
    n = v.shape[-2]
    scale = np.maximum(1.0, np.linalg.norm(v.reshape(v.shape[0], -1), axis=1))
    y = F_tilde_inverse_arrays(xb, gc, v)
    if n == 1:
        if info is not None:
            info.residual_history.append(0.0)
        return y, np.ones(v.shape[0], bool)
    done = np.zeros(v.shape[0], bool)
    history = []
    for it in range(max_fixed + 1):
        with np.errstate(all="ignore"):
            try:
                res = np.linalg.norm((F_full_arrays(xb, g, gc, y) - v).reshape(v.shape[0], -1), axis=1)
            except Coincidence:
                res = _safe_residual(xb, g, gc, y, v)
        res = np.where(np.isfinite(res), res, np.inf)
        history.append(float(np.max(res[~done])) if np.any(~done) else 0.0)
        done = res <= tol * scale
        if done.all() or it == max_fixed:
            break
        act = ~done
        with np.errstate(all="ignore"):
            try:
                target = v[act] - G_arrays(xb[act], g, gc, y[act])
                y_new = F_tilde_inverse_arrays(xb[act], gc, target)
            except (ZeroVelocity, Coincidence):
                y_new = y[act].copy()
                for b in range(y_new.shape[0]):
                    try:
                        tgt = v[act][b] - G_arrays(xb[act][b:b + 1], g, gc, y[act][b:b + 1])[0]
                        y_new[b] = F_tilde_inverse_arrays(xb[act][b], gc, tgt)
                    except (ZeroVelocity, Coincidence):
                        y_new[b] = np.nan
        y[act] = y_new
    if info is not None:
        info.iterations = it
        info.residual_history.extend(history)
    if not done.all():
        bad = np.flatnonzero(~done)
        if info is not None:
            info.newton_used = bad.size
        for b in bad:
            seed = F_tilde_inverse_arrays(xb[b], gc, v[b])
            yb, ok = newton_solve(xb[b], g, gc, v[b], seed, tol=tol * scale[b], max_iter=max_newton)
            if ok:
                y[b] = yb
                done[b] = True
    return y, done


def _safe_residual(xb, g, gc, y, v):
    out = np.full(v.shape[0], np.inf)
    for b in range(v.shape[0]):
        try:
            out[b] = np.linalg.norm(F_full_arrays(xb[b], g, gc, y[b]) - v[b])
        except Coincidence:
            pass
    return out


def newton_solve(x, g, gc, v, y0, tol: float, max_iter: int = MAX_NEWTON, fd_step: float = 1e-7):
    """Damped Newton with a forward-difference Jacobian for one instance."""
    n = v.shape[0]
    y = np.array(y0, float)
    span = max(1.0, float(np.max(np.abs(x))))

    def resid(yy):
        try:
            return (F_full_arrays(x, g, gc, yy) - v).reshape(-1)
        except Coincidence:
            return np.full(2 * n, np.inf)

    r = resid(y)
    for _ in range(max_iter):
        rn = np.linalg.norm(r)
        if rn <= tol:
            return y, True
        h = fd_step * span
        J = np.empty((2 * n, 2 * n))
        flat = y.reshape(-1)
        for c in range(2 * n):
            e = flat.copy()
            e[c] += h
            J[:, c] = (resid(e.reshape(n, 2)) - r) / h
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return y, False
        lam = 1.0
        while lam > 1e-4:
            trial = y + lam * step.reshape(n, 2)
            rt = resid(trial)
            if np.linalg.norm(rt) < rn:
                y, r = trial, rt
                break
            lam *= 0.5
        else:
            return y, False
    return y, bool(np.linalg.norm(r) <= tol)


def invert_F(ctx: FieldContext, v, floor: SpeedFloor | None = None, certify: bool = True,
             info: InversionInfo | None = None) -> np.ndarray:
    """Controls ``y`` with ``F_x(y) = v``.

    With a ``floor``, targets below it are rejected and the answer is
    certified: ``y`` must lie in ``D_R(x)`` with ``|H| < 7/9`` there.
    """
    vb, single = _as_batch(v)
    speeds = np.linalg.norm(vb, axis=-1)
    if np.any(speeds <= ZERO_TOL):
        raise ZeroVelocity("target velocity has a zero component")
    if floor is not None and np.any(speeds < floor.a * (1 - 1e-12)):
        raise ValueError("target velocity below the speed floor")
    info = info if info is not None else InversionInfo()
    y, ok = invert_arrays(ctx.x, ctx.gamma, ctx.gamma_c, vb, info)
    if not ok.all():
        raise NoConvergence(f"inversion failed for {int((~ok).sum())} target(s)")
    log.debug("invert_F: %d fixed-point iterations, monotone=%s, residuals=%s",
              info.iterations, info.monotone, info.residual_history)
    if floor is not None and certify and ctx.n > 1:
        _certify(ctx.x, ctx.gamma, ctx.gamma_c, y)
    return y[0] if single else y


def _certify(x, g, gc, y):
    R = _radii(np.broadcast_to(x, y.shape), g, gc)
    dist = np.linalg.norm(y - x, axis=-1)
    if np.any(dist >= R):
        raise ContractionViolated("inverted controls left the admissible balls D_R(x)")
    if np.any(np.abs(_H_arrays(x, g, gc, y)) >= H_BOUND):
        raise ContractionViolated("|H| >= 7/9 at the inverted controls")


def boundary_targets(a, directions: int = 32) -> np.ndarray:
    """``directions`` targets with ``|v_i| = a_i``, angles staggered across components."""
    a = np.asarray(a, float)
    n = a.size
    m = np.arange(directions)[:, None]
    i = np.arange(n)[None, :]
    th = 2 * np.pi * (m / directions + i * 0.6180339887498949)
    return a[None, :, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)


def calibrate_speed_floor(ctx_family, min_separation: float | None = None,
                          directions: int = 32, max_doublings: int = 20) -> SpeedFloor:
    """Smallest floor of the form ``2^m * 2|gc_i|/R_i`` that every context accepts.

    ``R_i`` is evaluated at the worst-case separation of the family (or at
    ``min_separation`` when given), so a smaller separation never yields a
    lower floor. Each context is stress-tested on ``directions`` boundary
    targets; a failure doubles the floor.
    """
    family = list(ctx_family)
    if not family:
        raise ValueError("calibration needs at least one context")
    ctx0 = family[0]
    g, gc, n = ctx0.gamma, ctx0.gamma_c, ctx0.n
    if n == 1:
        return SpeedFloor(np.array([np.finfo(float).tiny]))
    sep = min(c.min_separation for c in family) if min_separation is None else float(min_separation)
    R = np.min(np.abs(gc)) * sep / (8 * (n - 1) * max(np.max(np.abs(gc)), np.max(np.abs(g))))
    a = 2 * np.abs(gc) / R
    for m in range(max_doublings + 1):
        if all(_accepts(c, a, directions) for c in family):
            return SpeedFloor(a, doublings=m)
        a = 2 * a
    raise CalibrationFailed(f"no floor found after {max_doublings} doublings")


def _accepts(ctx, a, directions):
    v = boundary_targets(a, directions)
    y, ok = invert_arrays(ctx.x, ctx.gamma, ctx.gamma_c, v)
    if not ok.all():
        return False
    try:
        _certify(ctx.x, ctx.gamma, ctx.gamma_c, y)
    except ContractionViolated:
        return False
    return True


def invert_along(xs, gamma, gamma_c, vs, floor: SpeedFloor | None = None) -> np.ndarray:
    """Invert ``F`` for a batch of contexts ``xs`` (``(B, N, 2)``) and targets ``vs``.

    Same contract as :func:`invert_F` applied row by row, vectorized.
    """
    xs = np.asarray(xs, float)
    vs = np.asarray(vs, float)
    g = np.asarray(gamma, float)
    gc = np.asarray(gamma_c, float)
    speeds = np.linalg.norm(vs, axis=-1)
    if np.any(speeds <= ZERO_TOL):
        raise ZeroVelocity("target velocity has a zero component")
    if floor is not None and np.any(speeds < floor.a * (1 - 1e-12)):
        raise ValueError(f"target speed {speeds.min():.4g} below the speed floor {floor.a.min():.4g}")
    y, ok = invert_arrays(xs, g, gc, vs)
    if not ok.all():
        raise NoConvergence(f"inversion failed at {int((~ok).sum())} of {ok.size} samples")
    if floor is not None and gc.size > 1:
        _certify(xs, g, gc, y)
    return y


def control_velocity(xs, gamma, gamma_c, ys, xdot, xddot) -> np.ndarray:
    """Time derivative of ``y`` defined implicitly by ``F_{x(t)}(y(t)) = xdot(t)``.

    Differentiating gives ``Dy F ydot + Dx F xdot = xddot``.
    """
    B, n, _ = xs.shape
    Jy, Jx = jacobians(xs, np.asarray(gamma, float), np.asarray(gamma_c, float), ys)
    rhs = xddot.reshape(B, -1) - np.einsum("bij,bj->bi", Jx, xdot.reshape(B, -1))
    return np.linalg.solve(Jy, rhs[..., None])[..., 0].reshape(B, n, 2)

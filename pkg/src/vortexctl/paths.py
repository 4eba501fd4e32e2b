"""Time-parametrized planar paths.

A :class:`ControlPath` is a list of contiguous pieces, each able to return
value, first and second time derivative on its own interval. Pieces are
vectorized over time. The same container holds reference curves, control
trajectories, transition curves and mollified controls.
"""

from __future__ import annotations

import csv
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import DiscontinuousJoin

FloatArray = NDArray[np.float64]

JOIN_TOL = 1e-9


class Piece:
    """One smooth chunk of a path on ``[t0, t1]``."""

    t0: float
    t1: float

    def eval(self, t: FloatArray, order: int) -> FloatArray:  # pragma: no cover - interface
        raise NotImplementedError

    @property
    def kinks(self) -> tuple[float, ...]:
        """Interior times where the derivative may jump."""
        return ()


@dataclass(frozen=True)
class LinearPiece(Piece):
    t0: float
    t1: float
    p0: tuple[float, float]
    p1: tuple[float, float]

    def eval(self, t, order):
        p0 = np.asarray(self.p0, float)
        p1 = np.asarray(self.p1, float)
        span = self.t1 - self.t0
        vel = (p1 - p0) / span if span > 0 else np.zeros(2)
        if order == 0:
            return p0 + (t - self.t0)[:, None] * vel
        if order == 1:
            return np.broadcast_to(vel, (t.size, 2)).copy()
        return np.zeros((t.size, 2))


@dataclass(frozen=True)
class ArcPiece(Piece):
    """Constant-speed arc ``center + radius*(cos th, sin th)``, th from theta0 by dtheta."""

    t0: float
    t1: float
    center: tuple[float, float]
    radius: float
    theta0: float
    dtheta: float

    def eval(self, t, order):
        c = np.asarray(self.center, float)
        w = self.dtheta / (self.t1 - self.t0)
        th = self.theta0 + w * (t - self.t0)
        cs, sn = np.cos(th), np.sin(th)
        r = self.radius
        if order == 0:
            return c + r * np.stack([cs, sn], axis=1)
        if order == 1:
            return r * w * np.stack([-sn, cs], axis=1)
        return -r * w * w * np.stack([cs, sn], axis=1)


@dataclass(frozen=True)
class FunctionPiece(Piece):
    """Analytic piece; ``func(t, order)`` returns an ``(len(t), 2)`` array."""

    t0: float
    t1: float
    func: Callable[[FloatArray, int], FloatArray]
    inner_kinks: tuple[float, ...] = ()

    def eval(self, t, order):
        return np.asarray(self.func(t, order), float).reshape(t.size, 2)

    @property
    def kinks(self):
        return self.inner_kinks


class HermiteSpline(Piece):
    """Piecewise Hermite interpolant through sampled nodes.

    Quintic when second derivatives are supplied, cubic otherwise. Either
    way the result is C1 across nodes.
    """

    def __init__(self, times, values, derivs, accs=None):
        self.times = np.asarray(times, float)
        self.values = np.asarray(values, float).reshape(-1, 2)
        self.derivs = np.asarray(derivs, float).reshape(-1, 2)
        self.accs = None if accs is None else np.asarray(accs, float).reshape(-1, 2)
        if self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("HermiteSpline needs at least two strictly increasing nodes")
        self.t0 = float(self.times[0])
        self.t1 = float(self.times[-1])

    def eval(self, t, order):
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        ta, tb = self.times[idx], self.times[idx + 1]
        h = (tb - ta)[:, None]
        s = ((t - ta) / (tb - ta))[:, None]
        p0, p1 = self.values[idx], self.values[idx + 1]
        m0, m1 = self.derivs[idx] * h, self.derivs[idx + 1] * h
        if self.accs is None:
            basis = _cubic_basis(s, order)
            out = basis[0] * p0 + basis[1] * m0 + basis[2] * p1 + basis[3] * m1
        else:
            a0, a1 = self.accs[idx] * h * h, self.accs[idx + 1] * h * h
            basis = _quintic_basis(s, order)
            out = (basis[0] * p0 + basis[1] * m0 + basis[2] * a0
                   + basis[3] * p1 + basis[4] * m1 + basis[5] * a1)
        return out / h**order


def _cubic_basis(s, order):
    if order == 0:
        return (2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s, -2 * s**3 + 3 * s**2, s**3 - s**2)
    if order == 1:
        return (6 * s**2 - 6 * s, 3 * s**2 - 4 * s + 1, -6 * s**2 + 6 * s, 3 * s**2 - 2 * s)
    return (12 * s - 6, 6 * s - 4, -12 * s + 6, 6 * s - 2)


def _quintic_basis(s, order):
    if order == 0:
        return (1 - 10 * s**3 + 15 * s**4 - 6 * s**5,
                s - 6 * s**3 + 8 * s**4 - 3 * s**5,
                0.5 * s**2 - 1.5 * s**3 + 1.5 * s**4 - 0.5 * s**5,
                10 * s**3 - 15 * s**4 + 6 * s**5,
                -4 * s**3 + 7 * s**4 - 3 * s**5,
                0.5 * s**3 - s**4 + 0.5 * s**5)
    if order == 1:
        return (-30 * s**2 + 60 * s**3 - 30 * s**4,
                1 - 18 * s**2 + 32 * s**3 - 15 * s**4,
                s - 4.5 * s**2 + 6 * s**3 - 2.5 * s**4,
                30 * s**2 - 60 * s**3 + 30 * s**4,
                -12 * s**2 + 28 * s**3 - 15 * s**4,
                1.5 * s**2 - 4 * s**3 + 2.5 * s**4)
    return (-60 * s + 180 * s**2 - 120 * s**3,
            -36 * s + 96 * s**2 - 60 * s**3,
            1 - 9 * s + 18 * s**2 - 10 * s**3,
            60 * s - 180 * s**2 + 120 * s**3,
            -24 * s + 84 * s**2 - 60 * s**3,
            3 * s - 12 * s**2 + 10 * s**3)


@dataclass(frozen=True)
class AffinePiece(Piece):
    """``inner`` evaluated at ``scale * t + offset``."""

    t0: float
    t1: float
    inner: Piece
    scale: float
    offset: float

    def eval(self, t, order):
        return self.inner.eval(self.scale * t + self.offset, order) * self.scale**order

    @property
    def kinks(self):
        return tuple((k - self.offset) / self.scale for k in self.inner.kinks)


@dataclass
class ControlPath:
    """Piecewise-smooth planar trajectory on ``[pieces[0].t0, pieces[-1].t1]``."""

    pieces: list[Piece]
    c1: bool = True
    label: str = ""
    _starts: FloatArray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("a path needs at least one piece")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if abs(a.t1 - b.t0) > JOIN_TOL * max(1.0, abs(a.t1)):
                raise ValueError(f"pieces are not contiguous at t={a.t1}")
        self._starts = np.array([p.t0 for p in self.pieces])

    @property
    def domain(self) -> tuple[float, float]:
        return (self.pieces[0].t0, self.pieces[-1].t1)

    @property
    def breakpoints(self) -> FloatArray:
        return np.array([p.t0 for p in self.pieces] + [self.pieces[-1].t1])

    @property
    def kinks(self) -> FloatArray:
        """Times where the first derivative may be discontinuous."""
        out = [k for p in self.pieces for k in p.kinks]
        if not self.c1:
            out += [p.t0 for p in self.pieces[1:]]
        return np.unique(np.array(out, float))

    def evaluate(self, t, order: int = 0, clamp: bool = False) -> FloatArray:
        tt = np.atleast_1d(np.asarray(t, float))
        a, b = self.domain
        tol = 1e-9 * max(1.0, abs(a), abs(b))
        if clamp:
            inside = (tt >= a) & (tt <= b)
            tt = np.clip(tt, a, b)
        elif tt.size and (tt.min() < a - tol or tt.max() > b + tol):
            raise ValueError(f"time outside path domain [{a}, {b}]")
        else:
            tt = np.clip(tt, a, b)
        out = np.empty((tt.size, 2))
        if len(self.pieces) == 1:
            out[:] = self.pieces[0].eval(tt, order)
        else:
            idx = np.clip(np.searchsorted(self._starts, tt, side="right") - 1, 0, len(self.pieces) - 1)
            order_idx = np.argsort(idx, kind="stable")
            sorted_idx = idx[order_idx]
            cuts = np.flatnonzero(np.diff(sorted_idx)) + 1
            for sel in np.split(order_idx, cuts):
                out[sel] = self.pieces[idx[sel[0]]].eval(tt[sel], order)
        if clamp and order > 0:
            out[~inside] = 0.0
        if np.ndim(t) == 0:
            return out[0]
        return out

    def __call__(self, t) -> FloatArray:
        return self.evaluate(t, 0)

    def derivative(self, t) -> FloatArray:
        return self.evaluate(t, 1)

    def second_derivative(self, t) -> FloatArray:
        return self.evaluate(t, 2)

    def sample(self, n: int = 1001) -> tuple[FloatArray, FloatArray, FloatArray]:
        a, b = self.domain
        t = np.linspace(a, b, n)
        return t, self.evaluate(t, 0), self.evaluate(t, 1)

    def to_csv(self, path: str | Path, n: int = 1001) -> None:
        t, x, dx = self.sample(n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "dx", "dy"])
            for row in np.column_stack([t, x, dx]):
                w.writerow([repr(float(v)) for v in row])


def constant_path(p, t0: float, t1: float) -> ControlPath:
    p = (float(p[0]), float(p[1]))
    return ControlPath([LinearPiece(t0, t1, p, p)])


def function_path(func, t0: float, t1: float, kinks: Sequence[float] = ()) -> ControlPath:
    return ControlPath([FunctionPiece(t0, t1, func, tuple(kinks))])


def hermite_path(times, values, derivs, accs=None) -> ControlPath:
    return ControlPath([HermiteSpline(times, values, derivs, accs)])


def shift(path: ControlPath, dt: float) -> ControlPath:
    """Translate a path in time by ``dt``."""
    pieces = [AffinePiece(p.t0 + dt, p.t1 + dt, p, 1.0, -dt) for p in path.pieces]
    return ControlPath(pieces, c1=path.c1, label=path.label)


def reparametrize(path: ControlPath, old: tuple[float, float], new: tuple[float, float]) -> ControlPath:
    """Affine time change mapping ``old`` onto ``new``; derivatives scale by |old|/|new|."""
    (s0, s1), (u0, u1) = old, new
    if s1 <= s0 or u1 <= u0:
        raise ValueError("intervals must have positive length")
    scale = (s1 - s0) / (u1 - u0)
    offset = s0 - scale * u0
    pieces = []
    for p in path.pieces:
        a = (p.t0 - offset) / scale
        b = (p.t1 - offset) / scale
        if isinstance(p, AffinePiece):
            # collapse nested affine maps so compositions stay one level deep
            pieces.append(AffinePiece(a, b, p.inner, p.scale * scale, p.scale * offset + p.offset))
        else:
            pieces.append(AffinePiece(a, b, p, scale, offset))
    return ControlPath(pieces, c1=path.c1, label=path.label)


def concat(first: ControlPath, second: ControlPath) -> ControlPath:
    """Join two paths sharing the junction time ``first.domain[1] == second.domain[0]``.

    Raises :class:`DiscontinuousJoin` on a position mismatch; a velocity
    mismatch only clears the ``c1`` flag so the caller knows to mollify.
    """
    a = first.domain[1]
    if abs(second.domain[0] - a) > JOIN_TOL * max(1.0, abs(a)):
        raise DiscontinuousJoin(f"time gap at junction: {a} vs {second.domain[0]}")
    pa, pb = first.evaluate(a), second.evaluate(second.domain[0])
    if np.linalg.norm(pa - pb) > JOIN_TOL * max(1.0, float(np.abs(pa).max())):
        raise DiscontinuousJoin(f"position mismatch {np.linalg.norm(pa - pb):.3e} at t={a}")
    va, vb = first.evaluate(a, 1), second.evaluate(second.domain[0], 1)
    smooth = first.c1 and second.c1 and (
        np.linalg.norm(va - vb) <= JOIN_TOL * max(1.0, float(np.abs(va).max())))
    return ControlPath(list(first.pieces) + list(second.pieces), c1=bool(smooth),
                       label=first.label or second.label)

"""Planar Biot-Savart kernel, its regularization, and path mollification."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .errors import WidthTooLarge, ZeroArgument
from .paths import ControlPath, FunctionPiece

ZERO_TOL = 1e-300
LN_ETA_DEGREE = 5
GL_NODES, GL_WEIGHTS = leggauss(64)


def perp(v):
    """Rotation by +pi/2: ``(a, b) -> (-b, a)``. Works on ``(..., 2)`` arrays."""
    v = np.asarray(v, float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def biot_savart(x):
    """``K(x) = perp(x) / |x|^2`` for ``(..., 2)`` input."""
    x = np.asarray(x, float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 <= ZERO_TOL):
        raise ZeroArgument("Biot-Savart kernel evaluated at the origin")
    return perp(x) / r2[..., None]


def biot_savart_jacobian(x):
    """Jacobian of ``K`` at ``x``: shape ``(..., 2, 2)``."""
    x = np.asarray(x, float)
    a, b = x[..., 0], x[..., 1]
    r4 = (a * a + b * b) ** 2
    if np.any(r4 <= ZERO_TOL):
        raise ZeroArgument("Biot-Savart kernel evaluated at the origin")
    j = np.empty(x.shape[:-1] + (2, 2))
    j[..., 0, 0] = 2 * a * b / r4
    j[..., 0, 1] = (b * b - a * a) / r4
    j[..., 1, 0] = (b * b - a * a) / r4
    j[..., 1, 1] = -2 * a * b / r4
    return j


def ln_eta(x, eta: float):
    """Radial log with a polynomial core on ``|x| <= eta``.

    Inside the core the profile is the degree-5 Taylor polynomial of
    ``0.5*log(u)`` in ``u = |x|^2`` about ``u = eta^2``. That gives
    ``|grad| * |x| = 1 - (1 - |x|^2/eta^2)^5 <= 1`` and a C5 match at ``eta``.
    """
    _check_eta(eta)
    x = np.asarray(x, float)
    u = np.sum(x * x, axis=-1)
    s = u / eta**2
    core = np.log(eta) * np.ones_like(s)
    for k in range(1, LN_ETA_DEGREE + 1):
        core = core + (-1) ** (k + 1) * (s - 1) ** k / (2 * k)
    with np.errstate(divide="ignore"):
        outer = 0.5 * np.log(np.where(u > 0, u, 1.0))
    return np.where(s > 1, outer, core)


def _kernel_factor(u, eta):
    s = u / eta**2
    core = sum((1 - s) ** k for k in range(LN_ETA_DEGREE)) / eta**2
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = 1.0 / np.where(u > 0, u, 1.0)
    return np.where(s > 1, outer, core)


def biot_savart_regularized(x, eta: float):
    """``K_eta = perp(grad ln_eta)``; equals ``K`` for ``|x| > eta``, zero at the origin."""
    _check_eta(eta)
    x = np.asarray(x, float)
    u = np.sum(x * x, axis=-1)
    return perp(x) * _kernel_factor(u, eta)[..., None]


def regularized_lipschitz(eta: float) -> float:
    """Global Lipschitz constant of ``K_eta`` (attained inside the core)."""
    # |DK_eta| <= sup over the core of |q| + 2 u |q'|, evaluated on a fine grid
    s = np.linspace(0.0, 1.0, 2001)
    q = sum((1 - s) ** k for k in range(LN_ETA_DEGREE))
    dq = -sum(k * (1 - s) ** (k - 1) for k in range(1, LN_ETA_DEGREE))
    return float(np.max(np.abs(q) + 2 * s * np.abs(dq))) / eta**2


def _check_eta(eta):
    if not (0 < eta < 1):
        raise ValueError(f"regularization radius must lie in (0, 1), got {eta}")


def _bump(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _bump_derivative(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    ui = u[inside]
    d = 1.0 - ui**2
    out[inside] = np.exp(-1.0 / d) * (-2.0 * ui / d**2)
    return out


_BUMP_MASS = quad(lambda u: float(np.exp(-1.0 / (1.0 - u * u))), -1.0, 1.0,
                  epsabs=1e-14, epsrel=1e-13, limit=200)[0]


@dataclass(frozen=True)
class Mollifier:
    """Standard smooth bump of half-width ``width`` and unit mass."""

    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("mollifier width must be positive")

    def __call__(self, s):
        s = np.asarray(s, float)
        return _bump(s / self.width) / (_BUMP_MASS * self.width)

    def derivative(self, s):
        s = np.asarray(s, float)
        return _bump_derivative(s / self.width) / (_BUMP_MASS * self.width**2)

    @cached_property
    def mass(self) -> float:
        w = self.width
        return quad(lambda s: float(self(np.array([s]))[0]), -w, w,
                    epsabs=1e-14 / w, epsrel=1e-13, limit=200)[0]


class MollifiedPiece(FunctionPiece):
    pass


def mollify(path: ControlPath, m: Mollifier, pin_margin: float | None = None,
            chunk: int = 4096) -> ControlPath:
    """Convolve ``path`` with ``m`` after extending it constantly outside its domain.

    Gauss-Legendre quadrature (64 nodes) is applied on each sub-interval of
    the kernel support between derivative kinks of the input, so piecewise
    smooth inputs are integrated to full accuracy.
    """
    if pin_margin is not None and m.width >= 0.5 * pin_margin:
        raise WidthTooLarge(f"mollifier width {m.width:g} >= half the pinning margin {pin_margin:g}")
    a, b = path.domain
    kinks = np.unique(np.concatenate([path.kinks, [a, b]]))
    w = m.width

    def convolve(t, order):
        t = np.asarray(t, float)
        out = np.empty((t.size, 2))
        for lo in range(0, t.size, chunk):
            out[lo:lo + chunk] = _convolve_block(path, m, kinks, t[lo:lo + chunk], order, w)
        return out

    piece = MollifiedPiece(a, b, convolve)
    return ControlPath([piece], c1=True, label=path.label)


def _convolve_block(path, m, kinks, t, order, w):
    lo = np.searchsorted(kinks, t - w, side="right")
    hi = np.searchsorted(kinks, t + w, side="left")
    kmax = int(np.max(hi - lo)) if t.size else 0
    splits = np.empty((t.size, kmax + 2))
    splits[:, 0] = t - w
    splits[:, 1:] = (t + w)[:, None]
    for j in range(kmax):
        has = lo + j < hi
        splits[has, j + 1] = kinks[lo[has] + j]
    left, right = splits[:, :-1], splits[:, 1:]
    half = 0.5 * (right - left)
    tau = left[..., None] + half[..., None] * (GL_NODES + 1.0)  # (M, K, Q)
    wts = half[..., None] * GL_WEIGHTS
    flat = tau.reshape(-1)
    if order == 0:
        vals = path.evaluate(flat, 0, clamp=True)
        kern = m(t[:, None, None] - tau)
    else:
        vals = path.evaluate(flat, 1, clamp=True)
        kern = m(t[:, None, None] - tau) if order == 1 else m.derivative(t[:, None, None] - tau)
    vals = vals.reshape(tau.shape + (2,))
    return np.einsum("mkq,mkqd->md", wts * kern, vals)

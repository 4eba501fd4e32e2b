import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from vortexctl.errors import WidthTooLarge, ZeroArgument
from vortexctl.kernel import (Mollifier, biot_savart, biot_savart_jacobian, biot_savart_regularized, ln_eta,
                              mollify, perp, regularized_lipschitz)
from vortexctl.paths import ControlPath, LinearPiece, constant_path, function_path

coord = st.floats(-50, 50, allow_nan=False)


@pytest.mark.parametrize("v, expected", [((1, 0), (0, 1)), ((0, 1), (-1, 0)), ((3, 4), (-4, 3))])
def test_perp_examples(v, expected):
    assert np.allclose(perp(v), expected)


@given(coord, coord)
def test_perp_is_an_isometry_and_squares_to_minus_identity(a, b):
    v = np.array([a, b])
    assert np.isclose(np.linalg.norm(perp(v)), np.linalg.norm(v))
    assert np.allclose(perp(perp(v)), -v)


@pytest.mark.parametrize("x, expected", [((1, 0), (0, 1)), ((2, 0), (0, 0.5)), ((1, 1), (-0.5, 0.5))])
def test_biot_savart_examples(x, expected):
    assert np.allclose(biot_savart(x), expected)


@given(coord, coord)
def test_biot_savart_is_orthogonal_with_inverse_norm(a, b):
    x = np.array([a, b])
    if np.hypot(a, b) < 1e-6:
        return
    k = biot_savart(x)
    assert abs(k @ x) <= 1e-12 * np.linalg.norm(x) * np.linalg.norm(k)
    assert np.isclose(np.linalg.norm(k), 1 / np.linalg.norm(x), rtol=1e-12)


def test_biot_savart_rejects_origin():
    with pytest.raises(ZeroArgument):
        biot_savart((0.0, 0.0))


def test_jacobian_matches_finite_differences(rng):
    x = rng.normal(size=(20, 2)) + 2.0
    h = 1e-6
    for p, jac in zip(x, biot_savart_jacobian(x)):
        fd = np.stack([(biot_savart(p + h * e) - biot_savart(p - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
        assert np.allclose(jac, fd, atol=1e-7)


def test_regularized_examples():
    assert np.allclose(biot_savart_regularized((1.0, 0.0), 0.25), (0, 1))
    assert np.allclose(biot_savart_regularized((0.0, 0.0), 0.25), (0, 0))
    assert np.linalg.norm(biot_savart_regularized((0.1, 0.0), 0.25)) <= 10


def test_regularized_equals_kernel_outside_core(rng):
    eta = 0.3
    r = rng.uniform(1.01 * eta, 5.0, 1000)
    th = rng.uniform(0, 2 * np.pi, 1000)
    x = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    assert np.allclose(biot_savart_regularized(x, eta), biot_savart(x), rtol=1e-14, atol=0)


def test_regularized_is_perp_gradient_of_ln_eta(rng):
    # oracle: central differences of the implemented profile
    eta, h = 0.25, 1e-6
    x = rng.uniform(-0.3, 0.3, (200, 2))
    grad = np.stack([(ln_eta(x + h * e, eta) - ln_eta(x - h * e, eta)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.allclose(biot_savart_regularized(x, eta), perp(grad), atol=1e-6)


def test_regularized_bounded_by_inverse_distance(rng):
    eta = 0.4
    x = rng.uniform(-0.5, 0.5, (5000, 2))
    norm = np.linalg.norm(x, axis=1)
    assert np.all(np.linalg.norm(biot_savart_regularized(x, eta), axis=1) <= 1 / norm * (1 + 1e-12))


def test_ln_eta_is_continuous_across_the_core_boundary():
    eta = 0.2
    for side in (1 - 1e-9, 1 + 1e-9):
        assert np.isclose(ln_eta(np.array([eta * side, 0.0]), eta), np.log(eta), atol=1e-8)


def test_regularized_lipschitz_bound_holds(rng):
    eta = 0.3
    L = regularized_lipschitz(eta)
    a = rng.uniform(-0.6, 0.6, (3000, 2))
    b = a + rng.normal(scale=1e-3, size=a.shape)
    ratio = np.linalg.norm(biot_savart_regularized(a, eta) - biot_savart_regularized(b, eta), axis=1) / \
        np.linalg.norm(a - b, axis=1)
    assert ratio.max() <= L * (1 + 1e-6)


@pytest.mark.parametrize("eta", [0.0, 1.0, -0.1])
def test_regularization_radius_must_lie_in_unit_interval(eta):
    with pytest.raises(ValueError):
        biot_savart_regularized((1.0, 0.0), eta)


def test_mollifier_has_unit_mass_and_vanishes_at_support_edge():
    for w in (1e-4, 0.1, 2.0):
        m = Mollifier(w)
        assert abs(m.mass - 1) <= 1e-12
        assert m(np.array([w, -w, 1.5 * w])).max() == 0.0


def test_mollifier_derivative_matches_finite_differences():
    m = Mollifier(0.5)
    s = np.linspace(-0.45, 0.45, 31)
    h = 1e-7
    assert np.allclose(m.derivative(s), (m(s + h) - m(s - h)) / (2 * h), rtol=1e-5, atol=1e-6)


def test_mollify_constant_path_is_unchanged():
    out = mollify(constant_path((1.5, -2.0), 0.0, 1.0), Mollifier(0.05))
    t = np.linspace(0, 1, 101)
    assert np.allclose(out.evaluate(t), [1.5, -2.0], atol=1e-13)


def test_mollify_reproduces_lines_in_the_interior():
    line = ControlPath([LinearPiece(0.0, 1.0, (0.0, 0.0), (2.0, -1.0))])
    out = mollify(line, Mollifier(0.05))
    t = np.linspace(0.05, 0.95, 50)
    assert np.allclose(out.evaluate(t), line.evaluate(t), atol=1e-12)


def _sawtooth(L, period):
    def f(t, order):
        phase = (t / period) % 1.0
        if order == 0:
            v = L * period * np.abs(phase - 0.5)
            return np.stack([v, np.zeros_like(v)], axis=1)
        d = L * np.sign(phase - 0.5)
        return np.stack([d, np.zeros_like(d)], axis=1) if order == 1 else np.zeros((t.size, 2))
    kinks = np.arange(0, 1 + 1e-12, period / 2)[1:-1]
    return function_path(f, 0.0, 1.0, kinks)


def test_mollify_sawtooth_deviation_within_twice_lipschitz_times_width():
    L, w = 3.0, 0.01
    saw = _sawtooth(L, 0.1)
    out = mollify(saw, Mollifier(w))
    t = np.linspace(0, 1, 20001)
    dev = np.max(np.linalg.norm(out.evaluate(t) - saw.evaluate(t), axis=1))
    assert 0 < dev <= 2 * L * w


def test_mollify_matches_direct_quadrature_oracle():
    saw = _sawtooth(2.0, 0.2)
    m = Mollifier(0.03)
    out = mollify(saw, m)
    for t in (0.1, 0.2, 0.37, 0.5):
        ref = quad(lambda s: m(np.array([t - s]))[0] * saw.evaluate(np.array([s]))[0, 0], t - 0.03, t + 0.03,
                   points=[0.1, 0.2, 0.3, 0.4, 0.5], epsabs=1e-14, limit=200)[0]
        assert abs(out.evaluate(np.array([t]))[0, 0] - ref) <= 1e-11


def test_mollify_preserves_window_means():
    saw = _sawtooth(2.0, 0.1)
    out = mollify(saw, Mollifier(0.005))
    # over a window that is a whole number of periods the convolution keeps the mean
    a, b = 0.3, 0.7
    mean_in = quad(lambda s: saw.evaluate(np.array([s]))[0, 0], a, b, points=np.arange(0.35, 0.7, 0.05),
                   limit=400, epsabs=1e-13)[0]
    mean_out = quad(lambda s: out.evaluate(np.array([s]))[0, 0], a, b, limit=400, epsabs=1e-13)[0]
    assert abs(mean_in - mean_out) <= 1e-9


def test_mollify_derivative_is_consistent():
    saw = _sawtooth(2.0, 0.2)
    out = mollify(saw, Mollifier(0.04))
    t = np.linspace(0.05, 0.95, 40)
    h = 1e-6
    fd = (out.evaluate(t + h) - out.evaluate(t - h)) / (2 * h)
    assert np.allclose(out.evaluate(t, 1), fd, atol=1e-6)


def test_mollify_pins_ends_when_margin_is_wide_enough():
    line = ControlPath([LinearPiece(0.0, 1.0, (0.0, 0.0), (1.0, 1.0))])
    held = ControlPath([LinearPiece(0.0, 0.1, (0.0, 0.0), (0.0, 0.0)),
                        LinearPiece(0.1, 0.9, (0.0, 0.0), (1.0, 1.0)),
                        LinearPiece(0.9, 1.0, (1.0, 1.0), (1.0, 1.0))], c1=False)
    out = mollify(held, Mollifier(0.04), pin_margin=0.1)
    assert np.allclose(out.evaluate(np.array([0.0, 1.0])), [[0, 0], [1, 1]], atol=1e-15)
    with pytest.raises(WidthTooLarge):
        mollify(line, Mollifier(0.06), pin_margin=0.1)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from vortexctl.errors import ContractionViolated, ZeroVelocity
from vortexctl.inversion import (H_BOUND, FieldContext, G, H, InversionInfo, J_map, admissible_radii,
                                 boundary_targets, calibrate_speed_floor, control_velocity, dominance_margin,
                                 F_full, F_tilde, F_tilde_inverse, f_single, invert_F, jacobians, single_inverse)


def velocity_oracle(x, g, gc, y):
    """Independent field evaluation: a plain double loop over every point source."""
    n = len(g)
    out = np.zeros((n, 2))
    for i in range(n):
        for j in range(n):
            for pos, s in ((y[j], gc[j]), (x[j], g[j] if j != i else 0.0)):
                if s == 0.0:
                    continue
                d = x[i] - pos
                out[i] += s * np.array([-d[1], d[0]]) / (d @ d)
    return out


def random_context(rng, n):
    while True:
        x = rng.uniform(-3, 3, (n, 2))
        d = np.linalg.norm(x[:, None] - x[None], axis=-1) + 10 * np.eye(n)
        if d.min() > 0.5:
            break
    g = rng.uniform(0.5, 2, n) * rng.choice([-1, 1], n)
    gc = rng.uniform(0.5, 2, n) * rng.choice([-1, 1], n)
    return FieldContext(x, g, gc)


def sample_in_balls(rng, ctx, frac=1.0):
    R = admissible_radii(ctx).R
    r = frac * R * np.sqrt(rng.uniform(0, 1, ctx.n))
    a = rng.uniform(0, 2 * np.pi, ctx.n)
    return ctx.x + r[:, None] * np.stack([np.cos(a), np.sin(a)], 1)


# ------------------------------------------------------------------ closed forms

def test_single_inverse_examples():
    assert np.allclose(single_inverse((0, 0), 1.0, (0, -1)), (1, 0))
    assert np.allclose(single_inverse((1, 1), 2.0, (1, 0)), (1, 3))
    with pytest.raises(ZeroVelocity):
        single_inverse((0, 0), 1.0, (0, 0))
    with pytest.raises(ValueError):
        single_inverse((0, 0), 0.0, (1, 0))


def test_single_inverse_round_trip(rng):
    x = rng.normal(size=(1000, 2))
    v = rng.normal(size=(1000, 2))
    gam = rng.uniform(0.1, 5, 1000) * rng.choice([-1, 1], 1000)
    y = single_inverse(x, gam[:, None], v)
    back = gam[:, None] * np.stack([-(x - y)[:, 1], (x - y)[:, 0]], 1) / np.sum((x - y) ** 2, 1)[:, None]
    assert np.max(np.abs(back - v) / np.linalg.norm(v, axis=1)[:, None]) <= 1e-12
    assert np.allclose(f_single(x[0], gam[0], y[0]), v[0], rtol=1e-12)


def test_F_tilde_inverse_round_trip(rng):
    ctx = random_context(rng, 3)
    v = rng.normal(size=(1000, 3, 2))
    y = F_tilde_inverse(ctx, v)
    assert np.max(np.abs(F_tilde(ctx, y) - v) / np.linalg.norm(v, axis=-1)[..., None]) <= 1e-12


def test_F_decomposes_into_diagonal_and_rest(rng):
    for n in (1, 2, 3):
        ctx = random_context(rng, n)
        y = ctx.x + rng.normal(size=(n, 2))
        assert np.allclose(F_full(ctx, y), F_tilde(ctx, y) + G(ctx, y))
        assert np.allclose(F_full(ctx, y), velocity_oracle(ctx.x, ctx.gamma, ctx.gamma_c, y), rtol=1e-12)


def test_context_validation():
    with pytest.raises(ValueError):
        FieldContext([[0, 0]], [1.0], [0.0])
    with pytest.raises(ValueError):
        FieldContext([[0, 0], [1, 0]], [1.0], [1.0, 1.0])


# ------------------------------------------------------------------ admissible radii and bounds

def test_admissible_radius_formula():
    ctx = FieldContext([[0, 0], [2, 0]], [1.0, 1.0], [1.0, 1.0])
    assert np.allclose(admissible_radii(ctx).R, 2 / 8)
    ctx3 = FieldContext([[0, 0], [2, 0], [0, 5]], [1.0, -2.0, 1.0], [1.0, 1.0, 0.5])
    assert np.allclose(admissible_radii(ctx3).R, 0.5 * np.array([2, 2, 5]) / (8 * 2 * 2))
    assert admissible_radii(FieldContext([[0, 0]], [1.0], [1.0])).degenerate


def test_H_vanishes_at_anchor(rng):
    ctx = random_context(rng, 3)
    assert np.allclose(H(ctx, ctx.x), 0.0)


def test_certified_bounds_hold_in_admissible_balls(rng):
    violations = 0
    for _ in range(1000):
        ctx = random_context(rng, int(rng.integers(2, 4)))
        y = sample_in_balls(rng, ctx)
        q1, _ = dominance_margin(ctx, y)
        violations += int(np.any(q1 <= 1) or np.any(np.abs(H(ctx, y)) >= H_BOUND))
    assert violations == 0


# ------------------------------------------------------------------ J forms

def test_J_expansion_matches_direct(rng):
    for _ in range(50):
        ctx = random_context(rng, 3)
        y = sample_in_balls(rng, ctx)
        assert np.allclose(J_map(ctx, y, "expansion"), J_map(ctx, y, "direct"), rtol=1e-10, atol=1e-12)


def test_J_continuous_at_anchor(rng):
    ctx = random_context(rng, 2)
    assert np.allclose(J_map(ctx, ctx.x), ctx.x)
    y = ctx.x + 1e-9
    assert np.allclose(J_map(ctx, y), ctx.x, atol=1e-8)
    with pytest.raises(ValueError):
        J_map(ctx, y, "other")


def test_J_rejects_large_H():
    ctx = FieldContext([[0, 0], [1, 0]], [50.0, 50.0], [1.0, 1.0])
    with pytest.raises(ContractionViolated):
        J_map(ctx, np.array([[0.3, 0.0], [1.3, 0.0]]))


# ------------------------------------------------------------------ inversion

@pytest.mark.parametrize("n", [2, 3])
def test_invert_F_round_trip_and_matches_root_finder(rng, n):
    for _ in range(50):
        ctx = random_context(rng, n)
        y_true = sample_in_balls(rng, ctx, 0.9)
        v = F_full(ctx, y_true)
        info = InversionInfo()
        y = invert_F(ctx, v, info=info)
        assert np.linalg.norm(F_full(ctx, y) - v) <= 1e-10 * max(1.0, np.linalg.norm(v))
        oracle = fsolve(lambda z: (velocity_oracle(ctx.x, ctx.gamma, ctx.gamma_c, z.reshape(n, 2)) - v).ravel(),
                        y_true.ravel() + 1e-3 * admissible_radii(ctx).R.repeat(2), xtol=1e-13)
        assert np.max(np.abs(y - oracle.reshape(n, 2))) <= 1e-8
        assert info.monotone


def test_invert_single_vortex_is_closed_form():
    ctx = FieldContext([[1.0, 2.0]], [3.0], [2.0])
    v = np.array([[0.5, -1.0]])
    assert np.allclose(invert_F(ctx, v), single_inverse([1.0, 2.0], 2.0, v[0]))


@given(st.floats(0, 2 * np.pi), st.floats(0.5, 2.0))
@settings(max_examples=30)
def test_inversion_commutes_with_rotation(theta, gc):
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    x = np.array([[0.0, 0.0], [1.5, 0.3]])
    ctx = FieldContext(x, [1.0, -0.7], [gc, gc])
    ctx_r = FieldContext(x @ rot.T, [1.0, -0.7], [gc, gc])
    floor = calibrate_speed_floor([ctx])
    v = 1.5 * floor.a[:, None] * np.array([[1.0, 0.0], [0.0, 1.0]])
    y = invert_F(ctx, v, floor)
    y_r = invert_F(ctx_r, v @ rot.T, floor)
    assert np.allclose(y_r, y @ rot.T, atol=1e-10)


def test_invert_rejects_zero_and_below_floor():
    ctx = FieldContext([[0, 0], [2, 0]], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ZeroVelocity):
        invert_F(ctx, np.array([[0.0, 0.0], [1.0, 0.0]]))
    floor = calibrate_speed_floor([ctx])
    with pytest.raises(ValueError):
        invert_F(ctx, 0.5 * floor.a[:, None] * np.array([[1.0, 0.0], [1.0, 0.0]]), floor)


def test_calibrated_floor_certifies_boundary_targets():
    ctx = FieldContext([[0, 0], [2, 0], [1, 1.5]], [1.0, -1.0, 0.5], [1.0, 2.0, 1.0])
    floor = calibrate_speed_floor([ctx])
    for v in boundary_targets(floor.a * 1.3, 16):
        y = invert_F(ctx, v, floor)
        assert np.all(np.linalg.norm(y - ctx.x, axis=1) < admissible_radii(ctx).R)


def test_calibration_is_monotone_in_separation():
    ctx = FieldContext([[0, 0], [2, 0]], [1.0, 1.0], [1.0, 1.0])
    seps = [2.0, 1.0, 0.5, 0.25]
    floors = [calibrate_speed_floor([ctx], min_separation=s).v_min for s in seps]
    assert all(b >= a for a, b in zip(floors, floors[1:]))


def test_calibration_base_value():
    ctx = FieldContext([[0, 0], [2, 0]], [1.0, 1.0], [1.0, 1.0])
    floor = calibrate_speed_floor([ctx])
    R = 2 / 8
    assert np.allclose(floor.a, 2 * 2 ** floor.doublings / R)


# ------------------------------------------------------------------ derivatives

def test_jacobians_match_finite_differences(rng):
    ctx = random_context(rng, 3)
    y = sample_in_balls(rng, ctx)
    Jy, Jx = jacobians(ctx.x, ctx.gamma, ctx.gamma_c, y)
    h = 1e-7
    for c in range(6):
        e = np.zeros(6)
        e[c] = h
        dy = (F_full(ctx, y + e.reshape(3, 2)) - F_full(ctx, y - e.reshape(3, 2))).ravel() / (2 * h)
        ctx_p = FieldContext(ctx.x + e.reshape(3, 2), ctx.gamma, ctx.gamma_c)
        ctx_m = FieldContext(ctx.x - e.reshape(3, 2), ctx.gamma, ctx.gamma_c)
        dx = (F_full(ctx_p, y) - F_full(ctx_m, y)).ravel() / (2 * h)
        scale = np.abs(Jy[0]).max()
        assert np.allclose(Jy[0][:, c], dy, atol=1e-6 * scale)
        assert np.allclose(Jx[0][:, c], dx, atol=1e-6 * scale)


def test_control_velocity_matches_difference_of_inverses(rng):
    ctx = random_context(rng, 2)
    xdot = np.array([[0.3, -0.2], [0.1, 0.4]])
    xddot = np.array([[0.05, 0.02], [-0.03, 0.01]])
    y0 = sample_in_balls(rng, ctx, 0.5)
    v0 = F_full(ctx, y0)

    def y_at(t):
        c = FieldContext(ctx.x + t * xdot, ctx.gamma, ctx.gamma_c)
        return invert_F(c, v0 + t * xddot)

    h = 1e-6
    fd = (y_at(h) - y_at(-h)) / (2 * h)
    yd = control_velocity(ctx.x[None], ctx.gamma, ctx.gamma_c, y_at(0.0)[None], xdot[None], xddot[None])
    assert np.allclose(yd[0], fd, rtol=1e-5, atol=1e-6)

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vortexctl.dynamics import (ControlSet, IntegratorSettings, VortexConfig, conserved_quantities, default_step,
                                integrate, rhs_controlled, rhs_free)
from vortexctl.errors import CollisionError
from vortexctl.paths import ControlPath, LinearPiece, constant_path


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_config_rejects_zero_intensity_and_coincident_points():
    with pytest.raises(ValueError):
        VortexConfig([[0, 0], [1, 0]], [1, 0])
    with pytest.raises(ValueError):
        VortexConfig([[0, 0], [0, 0]], [1, 1])


def test_rhs_free_examples():
    cfg = VortexConfig([[0.5, 0], [-0.5, 0]], [1, 1])
    assert np.allclose(rhs_free(cfg, 0), (0, 1))
    assert np.allclose(rhs_free(VortexConfig([[3, 4]], [2]), 0), (0, 0))


def test_equilateral_triangle_speeds_equal_and_tangent():
    pts = np.array([[np.cos(a), np.sin(a)] for a in 2 * np.pi * np.arange(3) / 3 + 0.3])
    cfg = VortexConfig(pts, [1, 1, 1])
    vel = np.array([rhs_free(cfg, i) for i in range(3)])
    # symmetry oracle: rotating the configuration by 120 degrees rotates the velocities
    rot = _rotation(2 * np.pi / 3)
    assert np.allclose(vel[1], rot @ vel[0], atol=1e-14)
    assert np.allclose(np.linalg.norm(vel, axis=1), np.linalg.norm(vel[0]))
    assert np.allclose(np.sum(vel * pts, axis=1), 0, atol=1e-14)


def test_rhs_controlled_example_and_far_controls():
    cfg = VortexConfig([[0, 0]], [1])
    ctl = ControlSet((constant_path((1.0, 0.0), 0, 1),), [1.0])
    assert np.allclose(rhs_controlled(cfg, ctl, 0.5, 0), (0, -1))
    cfg2 = VortexConfig([[0.5, 0], [-0.5, 0]], [1, 2])
    far = ControlSet((constant_path((1e9, 0.0), 0, 1),), [1.0])
    assert np.allclose(rhs_controlled(cfg2, far, 0.0, 0), rhs_free(cfg2, 0), atol=1e-8)


def test_rhs_controlled_respects_reflection_symmetry():
    # reflection across the x-axis flips the sign of every intensity-weighted field component
    x = np.array([[0.3, 0.4], [-0.2, 0.7]])
    y = np.array([[1.0, 0.2], [0.1, -0.9]])
    flip = np.diag([1.0, -1.0])
    cfg = VortexConfig(x, [1.0, 2.0])
    cfg_r = VortexConfig(x @ flip, [-1.0, -2.0])
    ctl = ControlSet(tuple(constant_path(p, 0, 1) for p in y), [1.5, -0.5])
    ctl_r = ControlSet(tuple(constant_path(p, 0, 1) for p in y @ flip), [-1.5, 0.5])
    for i in range(2):
        assert np.allclose(rhs_controlled(cfg_r, ctl_r, 0.0, i), flip @ rhs_controlled(cfg, ctl, 0.0, i))


def test_conserved_quantities_examples():
    imp, ang, ham = conserved_quantities(VortexConfig([[0.5, 0], [-0.5, 0]], [1, 1]))
    assert np.allclose(imp, 0) and np.isclose(ang, 0.5) and ham == 0.0


def test_two_equal_vortices_rotate_with_period_pi():
    cfg = VortexConfig([[0.5, 0], [-0.5, 0]], [1, 1])
    traj = integrate(cfg, None, (0, np.pi), IntegratorSettings(dt=1e-3))
    assert np.max(np.abs(traj.final - cfg.positions)) <= 1e-6
    # the pair has rotated by pi at half the period
    half = integrate(cfg, None, (0, np.pi / 2), IntegratorSettings(dt=1e-3))
    assert np.allclose(half.final, -cfg.positions, atol=1e-6)


def test_opposite_pair_translates_at_unit_speed():
    cfg = VortexConfig([[0.5, 0], [-0.5, 0]], [1, -1])
    traj = integrate(cfg, None, (0, 2.0), IntegratorSettings(dt=1e-3))
    disp = traj.final - cfg.positions
    assert np.allclose(disp, [[0, -2.0], [0, -2.0]], atol=1e-9)


def test_single_free_vortex_is_stationary():
    traj = integrate(VortexConfig([[1.0, 2.0]], [3.0]), None, (0, 1), IntegratorSettings(dt=0.1))
    assert np.all(traj.states == [1.0, 2.0])


@pytest.mark.parametrize("seed", range(5))
def test_conservation_drift_small(seed):
    rng = np.random.default_rng(seed)
    while True:
        x = rng.uniform(-2, 2, (4, 2))
        d = np.linalg.norm(x[:, None] - x[None], axis=-1) + 10 * np.eye(4)
        if d.min() > 0.6:
            break
    g = rng.uniform(0.5, 1.5, 4) * rng.choice([-1, 1], 4)
    cfg = VortexConfig(x, g)
    traj = integrate(cfg, None, (0, 1), IntegratorSettings(dt=1e-4))
    q0 = conserved_quantities(cfg)
    q1 = conserved_quantities(cfg.with_positions(traj.final))
    for a, b in zip(q0, q1):
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        assert np.linalg.norm(b - a) <= 1e-8 * max(np.linalg.norm(a), 1.0)


def test_time_reversal_returns_to_start():
    cfg = VortexConfig([[0, 0], [1.2, 0.1], [0.3, 1.1]], [1.0, -0.6, 0.8])
    fwd = integrate(cfg, None, (0, 1), IntegratorSettings(dt=1e-3))
    back = integrate(VortexConfig(fwd.final, -cfg.intensities), None, (0, 1), IntegratorSettings(dt=1e-3))
    assert np.max(np.abs(back.final - cfg.positions)) <= 1e-8


def test_adaptive_and_fixed_step_agree():
    cfg = VortexConfig([[0.5, 0], [-0.5, 0]], [1, 1])
    tol = 1e-10
    a = integrate(cfg, None, (0, np.pi), IntegratorSettings(method="rk45", tolerance=tol))
    f = integrate(cfg, None, (0, np.pi), IntegratorSettings(dt=1e-3))
    assert np.max(np.abs(a.final - f.final)) <= 10 * tol * 100
    assert np.max(np.abs(a.final - cfg.positions)) <= 1e-6


def _passing_control():
    # control sweeps past a vortex at the origin with closest approach 0.1
    return ControlSet((ControlPath([LinearPiece(0.0, 1.0, (-5.0, 0.1), (5.0, 0.1))]),), [0.01])


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_collision_guard_raises_instead_of_nan(method):
    cfg = VortexConfig([[0.0, 0.0]], [1.0])
    settings = IntegratorSettings(method=method, dt=1e-3 if method == "rk4" else None, guard_radius=0.2)
    with pytest.raises(CollisionError) as info:
        integrate(cfg, _passing_control(), (0, 1), settings)
    assert info.value.pair == ("x0", "y0")
    assert 0.3 < info.value.time < 0.7


def test_pair_inside_guard_raises_at_start():
    cfg = VortexConfig([[0.0, 0.0], [0.05, 0.0]], [1.0, 1.0])
    with pytest.raises(CollisionError) as info:
        integrate(cfg, None, (0, 1), IntegratorSettings(dt=1e-3, guard_radius=0.1))
    assert info.value.time == 0.0
    assert info.value.pair == ("x0", "x1")


def test_default_step_rule():
    cfg = VortexConfig([[0, 0], [0.1, 0]], [2.0, 1.0])
    assert np.isclose(default_step(cfg, None, 0, 1), min(1e-3, 0.05 * 0.01 / 2))


def test_trajectory_csv_and_manifest(tmp_path):
    cfg = VortexConfig([[0.5, 0], [-0.5, 0]], [1, 1])
    ctl = ControlSet((constant_path((3.0, 3.0), 0, 0.1),), [0.5])
    traj = integrate(cfg, ctl, (0, 0.1), IntegratorSettings(dt=0.01))
    traj.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x1_1,x1_2,x2_1,x2_2,z_1,z_2,sep_vortex,sep_control"
    assert len(lines) == 12
    row = np.array([float(v) for v in lines[-1].split(",")])
    assert np.allclose(row[1:5], traj.final.reshape(-1), rtol=0, atol=0)
    traj.write_manifest(tmp_path / "m.json")
    man = json.loads((tmp_path / "m.json").read_text())
    assert man["horizon"] == [0.0, 0.1] and man["samples"] == 11


@given(st.floats(0.2, 3.0), st.floats(0.1, 5.0))
def test_pair_rotation_period_scales_with_distance_and_intensity(d, gamma):
    # rotation rate of an equal pair is 2 gamma / d^2
    cfg = VortexConfig([[d / 2, 0], [-d / 2, 0]], [gamma, gamma])
    v = rhs_free(cfg, 0)
    assert np.isclose(np.linalg.norm(v), gamma / d, rtol=1e-12)

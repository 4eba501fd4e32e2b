import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vortexctl.curves import (CurveConstraints, build_curve_family, build_trochoid_family, check_curve_family,
                              path_length, route_base_paths, smoothstep, straight_line, transition_curve,
                              trochoid_turns)
from vortexctl.errors import BlockedPath, DiscontinuousJoin, OverlappingObstacles
from vortexctl.paths import ControlPath, LinearPiece, concat, constant_path, reparametrize, shift


def _numeric_length(path, n=200_001):
    t = np.linspace(*path.domain, n)
    v = np.linalg.norm(path.evaluate(t, 1), axis=1)
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))


# ------------------------------------------------------------------ paths

def test_straight_line_endpoints_and_speed():
    p = straight_line((0, 0), (3, 4), 2.0, t0=1.0)
    assert p.domain == (1.0, 3.0)
    assert np.allclose(p.evaluate(1.0), (0, 0)) and np.allclose(p.evaluate(3.0), (3, 4))
    assert np.allclose(p.evaluate(np.linspace(1, 3, 7), 1), (1.5, 2.0))
    assert np.allclose(p.evaluate(2.0, 2), 0)
    with pytest.raises(ValueError):
        straight_line((0, 0), (1, 0), 0.0)


def test_evaluate_outside_domain_raises_unless_clamped():
    p = straight_line((0, 0), (1, 0), 1.0)
    with pytest.raises(ValueError):
        p.evaluate(1.5)
    assert np.allclose(p.evaluate(1.5, clamp=True), (1, 0))
    assert np.allclose(p.evaluate(1.5, 1, clamp=True), 0)


def test_noncontiguous_pieces_rejected():
    with pytest.raises(ValueError):
        ControlPath([LinearPiece(0, 1, (0, 0), (1, 0)), LinearPiece(1.5, 2, (1, 0), (2, 0))])


def test_reparametrize_scales_derivatives():
    p = straight_line((0, 0), (2, 0), 1.0)
    q = reparametrize(p, (0, 1), (10, 14))
    assert q.domain == (10, 14)
    assert np.allclose(q.evaluate(12.0), (1, 0))
    assert np.allclose(q.evaluate(12.0, 1), (0.5, 0))
    r = reparametrize(q, (10, 14), (0, 2))
    assert np.allclose(r.evaluate(np.linspace(0, 2, 5)), p.evaluate(np.linspace(0, 1, 5)))
    with pytest.raises(ValueError):
        reparametrize(p, (0, 1), (1, 1))


def test_shift_translates_time():
    p = shift(straight_line((0, 0), (1, 1), 1.0), 2.0)
    assert p.domain == (2.0, 3.0)
    assert np.allclose(p.evaluate(2.5), (0.5, 0.5))


def test_concat_flags_velocity_jump_and_rejects_gap():
    a = straight_line((0, 0), (1, 0), 1.0)
    b = straight_line((1, 0), (2, 0), 1.0, t0=1.0)
    c = straight_line((1, 0), (1, 1), 1.0, t0=1.0)
    assert concat(a, b).c1
    joined = concat(a, c)
    assert not joined.c1 and np.allclose(joined.kinks, [1.0])
    assert np.allclose(joined.evaluate(1.5), (1, 0.5))
    with pytest.raises(DiscontinuousJoin):
        concat(a, straight_line((5, 0), (6, 0), 1.0, t0=1.0))
    with pytest.raises(DiscontinuousJoin):
        concat(a, straight_line((1, 0), (2, 0), 1.0, t0=1.5))


def test_csv_export(tmp_path):
    straight_line((0, 0), (1, 0), 1.0).to_csv(tmp_path / "p.csv", n=11)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,dx,dy" and len(lines) == 12


# ------------------------------------------------------------------ transitions

def test_transition_without_obstacles_is_straight():
    p = transition_curve((0, 0), (2, 0), [((0, 5), 1.0)], 1.0)
    assert np.allclose(p.evaluate(0.5), (1, 0))


def test_transition_around_centered_disc_breaks_tie_clockwise():
    p = transition_curve((-2, 0), (2, 0), [((0, 0), 1.0)], 1.0)
    assert np.isclose(path_length(p), 2 + np.pi)
    assert np.isclose(_numeric_length(p), 2 + np.pi, rtol=1e-8)
    # clockwise from the entry point (-1, 0) passes over the top of the disc
    assert np.allclose(p.evaluate(0.5), (0, 1), atol=1e-12)
    assert np.allclose(p.evaluate(1.0), (2, 0))


def test_transition_takes_shorter_arc():
    c = np.array([0.0, 0.5])
    p = transition_curve((-2, 0), (2, 0), [(c, 1.0)], 3.0)
    h = np.sqrt(0.75)
    expected = 2 * (2 - h) + 2 * np.pi / 3
    assert np.isclose(path_length(p), expected)
    assert np.allclose(p.evaluate(1.5), (0, -0.5), atol=1e-12)
    t = np.linspace(0, 3, 20001)
    speed = np.linalg.norm(p.evaluate(t, 1), axis=1)
    assert np.allclose(speed, expected / 3)
    # never enters the disc
    assert np.min(np.linalg.norm(p.evaluate(t) - c, axis=1)) >= 1 - 1e-12


def test_transition_arc_pieces_move_tangentially():
    p = transition_curve((-3, 0.2), (3, 0.2), [((0, 0), 1.0)], 1.0)
    tb = p.breakpoints
    assert len(tb) == 4
    eps = 1e-12
    for t in tb[1:-1]:
        assert np.allclose(p.evaluate(t - eps), p.evaluate(t + eps), atol=1e-9)
    t = np.linspace(tb[1], tb[2], 101)[:-1]
    x, v = p.evaluate(t), p.evaluate(t, 1)
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0)
    assert np.max(np.abs(np.sum(x * v, axis=1))) <= 1e-9 * np.linalg.norm(v[0])


def test_transition_errors():
    with pytest.raises(BlockedPath):
        transition_curve((0, 0), (3, 0), [((0, 0), 1.0)], 1.0)
    with pytest.raises(OverlappingObstacles):
        transition_curve((-3, 0), (3, 0), [((0, 0), 1.0), ((1.5, 0), 1.0)], 1.0)


@given(st.floats(-0.9, 0.9), st.floats(0.5, 3.0))
def test_transition_stays_outside_disc(offset, duration):
    c = np.array([0.0, offset])
    p = transition_curve((-2, 0), (2, 0), [(c, 1.0)], duration)
    t = np.linspace(0, duration, 4001)
    assert np.min(np.linalg.norm(p.evaluate(t) - c, axis=1)) >= 1 - 1e-9
    assert np.allclose(p.evaluate(duration), (2, 0))


# ------------------------------------------------------------------ curve families

def test_smoothstep_endpoints():
    assert smoothstep(0.0) == 0 and smoothstep(1.0) == 1
    assert smoothstep(0.5, 1) == pytest.approx(1.875)
    assert smoothstep(-1.0, 1) == 0 and smoothstep(2.0, 2) == 0


def test_route_first_path_straight_and_separated():
    base, dmin = route_base_paths([[0, 0], [1, 0]], [[1, 0], [0, 0]])
    assert base[0].bend == 0.0
    assert base[1].bend != 0.0
    assert dmin > 0


def test_curve_family_meets_conditions():
    starts = [[0, 0], [1, 0]]
    ends = [[1, 0], [0, 0]]
    cons = [CurveConstraints(start_velocity=(0.0, 3.0), v_min=2.0, horizon=(0.0, 1.0)),
            CurveConstraints(start_velocity=(-2.5, 0.0), v_min=2.0, horizon=(0.0, 1.0))]
    fam = build_curve_family(starts, ends, cons)
    rep = check_curve_family(fam, starts, ends, cons, points=20001)
    assert rep["start_error"] <= 1e-12
    assert rep["end_error"] <= 1e-9
    assert rep["start_velocity_error"] <= 1e-9
    assert rep["min_speed"] >= 2.0
    assert rep["min_separation"] >= fam.clearance


def test_curve_family_single_curve_speed_floor():
    cons = CurveConstraints(v_min=5.0, horizon=(0.0, 2.0))
    fam = build_curve_family([[0, 0]], [[0.5, 0]], cons)
    rep = check_curve_family(fam, [[0, 0]], [[0.5, 0]], cons, points=20001)
    assert rep["min_speed"] >= 5.0 and rep["end_error"] <= 1e-9


def test_constraints_validation():
    with pytest.raises(ValueError):
        CurveConstraints(v_min=-1)
    with pytest.raises(ValueError):
        CurveConstraints(start_velocity=(0.1, 0), v_min=1)
    with pytest.raises(ValueError):
        CurveConstraints(horizon=(1, 1))


def test_trochoid_family_exact_start_velocity_and_end():
    starts, ends = [[0, 0], [3, 0]], [[0.5, 0.2], [3.2, -0.4]]
    v0 = [[0, 2.0], [1.0, 1.0]]
    fam = build_trochoid_family(starts, ends, v0, [10.0, 10.0], (0.0, 1.0))
    for p, s, e, v in zip(fam, starts, ends, v0):
        assert np.allclose(p.evaluate(0.0), s, atol=1e-14)
        assert np.allclose(p.evaluate(1.0), e, atol=1e-12)
        assert np.allclose(p.evaluate(0.0, 1), v, atol=1e-12)
        speed = np.linalg.norm(p.evaluate(np.linspace(0, 1, 5001), 1), axis=1)
        drift = fam.curves[fam.paths.index(p)].max_drift_speed()
        assert np.all(np.abs(speed - np.linalg.norm(v)) <= drift + 1e-12)


def test_trochoid_derivative_matches_finite_difference():
    fam = build_trochoid_family([[0, 0]], [[1, 1]], [[0, 3.0]], [20.0], (0.0, 2.0))
    p = fam[0]
    t = np.linspace(0.1, 1.9, 7)
    h = 1e-6
    fd = (p.evaluate(t + h) - p.evaluate(t - h)) / (2 * h)
    assert np.allclose(p.evaluate(t, 1), fd, atol=1e-6)
    fd2 = (p.evaluate(t + h, 1) - p.evaluate(t - h, 1)) / (2 * h)
    assert np.allclose(p.evaluate(t, 2), fd2, atol=1e-4)


def test_trochoid_turns():
    assert trochoid_turns(1.0, 1.0, 1.0) == 1
    assert trochoid_turns(1.0, 2 * np.pi * 3, 1.0) == 3
    assert trochoid_turns(1.0, 2 * np.pi * 3 + 1e-6, 1.0) == 4


def test_constant_path_is_still():
    p = constant_path((1, 2), 0, 1)
    assert np.allclose(p.evaluate([0, 0.5, 1]), (1, 2)) and np.allclose(p.evaluate(0.3, 1), 0)

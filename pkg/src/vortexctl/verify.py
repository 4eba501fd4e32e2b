"""Re-check a run directory from its artifacts alone.

Separations are recomputed from the positions in ``trajectory.csv``,
endpoint errors from its last row, containment from the geometry stored
in ``plan.json`` and the convergence rate by refitting ``convergence.csv``.
Thresholds are fixed here, not read from the artifacts, so an edited
report cannot loosen them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .reduction import fit_rate
from .runner import conservation_drift
from .synthesis import containment_margins, local_geometry

ENDPOINT_TOL = 1e-6
CONSERVATION_TOL = 1e-8
SLOPE_RANGE = (-1.3, -0.7)
MONOTONE_NOISE = 0.2
WEAK_RATIO_RANGE = (0.3, 0.7)
SHOOTING_MAX_ITER = 20
COLUMN_TOL = 1e-9
CONTAINMENT_TOL = 1e-9


class VerificationFailed(Exception):
    """An invariant does not hold; the message names it."""


@dataclass
class TrajectoryTable:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    sep_vortex: np.ndarray
    sep_control: np.ndarray


def _require(ok: bool, name: str, detail: str) -> None:
    if not ok:
        raise VerificationFailed(f"{name}: {detail}")


def read_trajectory(path: Path) -> TrajectoryTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    _require(len(rows) >= 2, "trajectory.csv", "no data rows")
    head = rows[0]
    _require(head[0] == "t" and head[-2:] == ["sep_vortex", "sep_control"], "trajectory.csv", "unexpected header")
    n = sum(1 for h in head if h.startswith("x")) // 2
    m = sum(1 for h in head if h.startswith("z")) // 2
    _require(len(head) == 1 + 2 * n + 2 * m + 2 and n >= 1, "trajectory.csv", "unexpected header")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise VerificationFailed(f"trajectory.csv: unreadable value ({exc})") from exc
    _require(data.ndim == 2 and data.shape[1] == len(head), "trajectory.csv", "ragged rows")
    k = data.shape[0]
    states = data[:, 1:1 + 2 * n].reshape(k, n, 2)
    controls = data[:, 1 + 2 * n:1 + 2 * n + 2 * m].reshape(k, m, 2)
    return TrajectoryTable(data[:, 0], states, controls, data[:, -2], data[:, -1])


def _min_pair(states):
    n = states.shape[1]
    if n < 2:
        return np.full(states.shape[0], np.inf)
    d = states[:, :, None] - states[:, None]
    r = np.sqrt(np.sum(d * d, -1))
    r[:, np.arange(n), np.arange(n)] = np.inf
    return r.min(axis=(1, 2))


def _to_controls(states, controls):
    if controls.shape[1] == 0:
        return np.full(states.shape[0], np.inf)
    d = states[:, :, None] - controls[:, None]
    return np.sqrt(np.min(np.sum(d * d, -1), axis=(1, 2)))


def _same(col, ref):
    both_inf = np.isinf(col) & np.isinf(ref)
    diff = np.where(both_inf, 0.0, np.abs(np.where(both_inf, 0.0, col) - np.where(both_inf, 0.0, ref)))
    bad = ~(diff <= COLUMN_TOL * np.maximum(1.0, np.abs(np.where(both_inf, 0.0, ref))))
    return int(np.argmax(bad)) if bad.any() else None


def check_trajectory_columns(tab: TrajectoryTable) -> None:
    _require(bool(np.all(np.diff(tab.times) > 0)), "time column", "times must increase")
    _require(bool(np.all(np.isfinite(tab.states))), "positions", "non-finite vortex position")
    for name, col, ref in (("sep_vortex", tab.sep_vortex, _min_pair(tab.states)),
                           ("sep_control", tab.sep_control, _to_controls(tab.states, tab.controls))):
        row = _same(col, ref)
        _require(row is None, f"separation column {name}",
                 f"row {row}: stored {col[row] if row is not None else 0:.17g} != recomputed "
                 f"{ref[row] if row is not None else 0:.17g}")


def _check_separation(tab, r_bar, name="separation hypothesis", mask=None):
    sel = slice(None) if mask is None else mask
    worst = float(min(np.min(tab.sep_vortex[sel]), np.min(tab.sep_control[sel])))
    _require(worst >= r_bar / 2, name, f"minimum distance {worst:.6g} below r_bar/2 = {r_bar / 2:.6g}")


def _check_endpoint(tab, xf, name="endpoint error"):
    err = float(np.max(np.linalg.norm(tab.states[-1] - np.asarray(xf, float), axis=1)))
    _require(err <= ENDPOINT_TOL, name, f"{err:.3e} exceeds {ENDPOINT_TOL:g}")
    return err


def _verify_free(tab, report, plan, out):
    drift = conservation_drift(np.asarray(plan["gamma"], float), tab.states[0], tab.states[-1])
    for key, val in drift.items():
        _require(val < CONSERVATION_TOL, f"conservation of {key}", f"relative drift {val:.3e} >= {CONSERVATION_TOL:g}")


def _verify_n_controls(tab, report, plan, out):
    _check_separation(tab, plan["r_bar"])
    _check_endpoint(tab, plan["xf"])


def _verify_local(tab, report, plan, out):
    g = plan["geometry"]
    geom = local_geometry(g["xf_bar"], g["D"], g["v_min"], g["gamma_c"], g["x0_bar"])
    cone, stadium = containment_margins(geom, tab.states, tab.controls)
    tol = CONTAINMENT_TOL * geom.D
    _require(cone >= -tol, "cone containment", f"margin {cone:.3e}")
    _require(stadium > 0, "stadium containment", f"margin {stadium:.3e}")
    _check_endpoint(tab, plan["xf"])


def _verify_approx(tab, report, plan, out):
    _check_separation(tab, plan["r_bar"])
    _require(report["smoothing_deviation"] <= report["smoothing_bound"] * (1 + 1e-9), "smoothing deviation",
             f"{report['smoothing_deviation']:.3e} exceeds 2 L w = {report['smoothing_bound']:.3e}")


def read_convergence(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    _require(rows and rows[0][:3] == ["n", "error", "min_separation"], "convergence.csv", "unexpected header")
    ns = np.array([int(r[0]) for r in rows[1:]])
    errors = np.array([float(r[1]) for r in rows[1:]])
    seps = np.array([float(r[2]) for r in rows[1:]])
    return ns, errors, seps


def _verify_convergence(tab, report, plan, out):
    _check_separation(tab, plan["r_bar"])
    path = out / "convergence.csv"
    _require(path.exists(), "convergence.csv", "missing")
    ns, errors, seps = read_convergence(path)
    _require(bool(np.all(np.isfinite(errors))), "convergence runs", "some n failed")
    slope, _ = fit_rate(ns, errors)
    _require(SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1], "convergence slope",
             f"{slope:.3f} outside [{SLOPE_RANGE[0]}, {SLOPE_RANGE[1]}]")
    _require(bool(np.all(errors[1:] <= errors[:-1] * (1 + MONOTONE_NOISE))), "convergence monotonicity",
             f"errors {errors.tolist()} not monotone within {MONOTONE_NOISE:.0%}")
    _require(bool(np.all(seps >= plan["r_bar"] / 2)), "separation hypothesis",
             f"min_separation column {seps.min():.4g} below r_bar/2")
    scan = report["separation_scan"]
    _require(scan.get("n0") is not None, "separation scan", "no n0 after which z_n keeps distance r_bar")
    weak = report["weak_diagnostic"]
    vals = np.asarray(weak["values"], float)
    ratios = vals[1:] / vals[:-1]
    lo, hi = WEAK_RATIO_RANGE
    _require(bool(np.all((ratios >= lo) & (ratios <= hi))), "weak diagnostic ratio",
             f"ratios {np.round(ratios, 3).tolist()} outside [{lo}, {hi}]")


def _verify_exact(tab, report, plan, out):
    _check_endpoint(tab, report["scenario"]["xf"])
    sh = report["shooting"]
    it = int(sh["iterations"])
    _require(it <= SHOOTING_MAX_ITER, "shooting iterations", f"{it} > {SHOOTING_MAX_ITER}")
    res = np.asarray(sh["residuals"], float)
    _require(bool(np.all(res[1:] < res[:-1])), "shooting monotonicity", f"residuals {res.tolist()} not decreasing")
    kappa = float(report["kappa"])
    _require(bool(np.all(np.asarray(sh["distances"], float) <= kappa * (1 + 1e-12))), "shooting ball",
             "an iterate left the ball of radius kappa")
    ts = float(plan["switch_time"])
    _check_separation(tab, plan["phase1"]["r_bar"], "separation hypothesis (approximate phase)", tab.times <= ts)
    _check_separation(tab, plan["phase2"]["r_bar"], "separation hypothesis (local phase)", tab.times >= ts)


CHECKS = {"free": _verify_free, "n_controls": _verify_n_controls, "local_straight": _verify_local,
          "single_control_approx": _verify_approx, "convergence_study": _verify_convergence,
          "single_control_exact": _verify_exact}


def verify_run(out: str | Path) -> list[str]:
    """Run every check for the mode recorded in ``report.json``; return the names of passed checks.

    Raises :class:`VerificationFailed` at the first violated invariant.
    """
    out = Path(out)
    for name in ("trajectory.csv", "plan.json", "report.json"):
        _require((out / name).is_file(), name, "missing")
    try:
        report = json.loads((out / "report.json").read_text())
        plan = json.loads((out / "plan.json").read_text())
    except json.JSONDecodeError as exc:
        raise VerificationFailed(f"artifact JSON: {exc}") from exc
    mode = report.get("mode")
    _require(mode in CHECKS, "report.json", f"unknown mode {mode!r}")
    tab = read_trajectory(out / "trajectory.csv")
    check_trajectory_columns(tab)
    try:
        CHECKS[mode](tab, report, plan, out)
    except (KeyError, TypeError, ValueError) as exc:
        raise VerificationFailed(f"artifact contents: missing or malformed entry ({exc})") from exc
    return ["trajectory columns", mode]

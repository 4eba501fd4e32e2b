"""Run one scenario and write its artifacts.

Each mode produces ``trajectory.csv`` (the simulated run), ``plan.json``
(what was synthesized) and ``report.json`` (measured quantities);
``convergence_study`` adds ``convergence.csv``. Everything written to the
CSV files is a deterministic function of the scenario.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .dynamics import IntegratorSettings, VortexConfig, conserved_quantities, integrate
from .errors import HypothesisHViolated
from .reduction import (build_oscillating_control, convergence_study, exact_control, hypothesis_h_margin,
                        kernel_test_functions, separation_scan, simulate_single_control,
                        weak_convergence_diagnostic, worker_count)
from .scenario import Scenario
from .synthesis import (to_jsonable, containment_margins, local_geometry_for_starts,
                        synthesize_N, synthesize_local)

log = logging.getLogger(__name__)

FREE_DT = 1e-4
PLAN_SAMPLES = 2001


def conservation_drift(gamma, start, end) -> dict:
    """Relative drift of impulse, angular impulse and Hamiltonian between two configurations.

    A quantity whose initial size is below ``1e-12`` is compared in absolute terms.
    """
    q0 = conserved_quantities(VortexConfig(start, gamma))
    q1 = conserved_quantities(VortexConfig(end, gamma))
    out = {}
    for name, a, b in zip(("impulse", "angular_impulse", "hamiltonian"), q0, q1):
        a = np.atleast_1d(np.asarray(a, float))
        b = np.atleast_1d(np.asarray(b, float))
        scale = float(np.linalg.norm(a))
        out[name] = float(np.linalg.norm(b - a) / (scale if scale > 1e-12 else 1.0))
    return out


def _settings(sc: Scenario, default_dt: float | None = None, grid=None) -> IntegratorSettings:
    cfg = sc.integrator
    method = cfg.get("method", "rk4")
    kwargs = {"method": method}
    if "tolerance" in cfg:
        kwargs["tolerance"] = float(cfg["tolerance"])
    if method == "rk4":
        if "dt" in cfg:
            kwargs["dt"] = float(cfg["dt"])
        elif grid is not None:
            kwargs["grid"] = grid
        elif default_dt is not None:
            kwargs["dt"] = default_dt
    return IntegratorSettings(**kwargs)


def _endpoint(final, xf) -> float:
    return float(np.max(np.linalg.norm(np.asarray(final) - np.asarray(xf), axis=1)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(to_jsonable(obj), indent=1, sort_keys=True, allow_nan=True) + "\n")


def _check_h(traj, r_bar):
    dc, dv, when = hypothesis_h_margin(traj)
    worst = min(dc, dv)
    if worst < r_bar / 2:
        raise HypothesisHViolated(f"distance {worst:.4g} fell below r_bar/2 = {r_bar / 2:.4g} near t={when:.6g}",
                                  time=when, distance=worst)
    return dc, dv


def _run_free(sc, out):
    settings = _settings(sc, FREE_DT)
    traj = integrate(VortexConfig(sc.x0, sc.gamma), None, (0.0, sc.T), settings)
    traj.to_csv(out / "trajectory.csv")
    _write_json(out / "plan.json", {"kind": "free", "gamma": sc.gamma, "x0": sc.x0, "horizon": [0.0, sc.T]})
    return {"final": traj.final, "conservation_drift": conservation_drift(sc.gamma, sc.x0, traj.final),
            "min_vortex_distance": float(np.min(traj.vortex_separation)), "settings": settings.to_dict()}


def _run_n_controls(sc, out):
    plan = synthesize_N(sc.x0, sc.xf, sc.T, sc.gamma, sc.gamma_c, y0=sc.y0)
    if sc.integrator.get("method") == "rk45" or "dt" in sc.integrator:
        settings = _settings(sc)
    else:
        settings = plan.settings()
    traj = integrate(VortexConfig(sc.x0, sc.gamma), plan.control_set(), plan.horizon, settings)
    dc, dv = _check_h(traj, plan.r_bar)
    traj.to_csv(out / "trajectory.csv")
    plan.write_json(out / "plan.json", PLAN_SAMPLES)
    return {"kind": plan.kind, "r_bar": plan.r_bar, "endpoint_error": _endpoint(traj.final, sc.xf),
            "min_control_distance": dc, "min_vortex_distance": dv,
            "identity_residual": plan.meta["identity_residual"], "settings": settings.to_dict()}


def _run_local(sc, out):
    geom = local_geometry_for_starts(sc.xf, sc.x0, sc.gamma, sc.gamma_c)
    plan = synthesize_local(sc.x0, sc.xf, geom, sc.gamma, verify=False)
    traj = plan.simulate()
    cone, stadium = containment_margins(geom, traj.states, traj.controls)
    traj.to_csv(out / "trajectory.csv")
    doc = plan.to_dict(PLAN_SAMPLES)
    doc["geometry"] = geom.to_dict() | {"gamma_c": geom.gamma_c}
    _write_json(out / "plan.json", doc)
    return {"D": geom.D, "tau": geom.tau, "rho": geom.rho, "cone_margin": cone, "stadium_margin": stadium,
            "min_set_distance": geom.min_set_distance, "endpoint_error": _endpoint(traj.final, sc.xf)}


def _share(sc):
    return np.full(sc.N, sc.gamma_c / sc.N)


def _run_approx(sc, out):
    plan = synthesize_N(sc.x0, sc.xf, sc.T, sc.gamma, _share(sc))
    ctrl = build_oscillating_control(plan, sc.n, sc.waypoint_mode)
    traj = simulate_single_control(sc.x0, ctrl, sc.gamma, r_bar=plan.r_bar)
    ref = integrate(VortexConfig(sc.x0, sc.gamma), plan.control_set(), plan.horizon,
                    IntegratorSettings(grid=ctrl.grid))
    dc, dv, _ = hypothesis_h_margin(traj)
    traj.to_csv(out / "trajectory.csv")
    doc = plan.to_dict(PLAN_SAMPLES)
    doc["single_control"] = {"n": ctrl.n, "intensity": ctrl.intensity, "mollifier_width": ctrl.mollifier_width,
                             "lipschitz": ctrl.lipschitz, "pinned": ctrl.pinned, "grid_points": int(ctrl.grid.size)}
    _write_json(out / "plan.json", doc)
    return {"n": ctrl.n, "r_bar": plan.r_bar,
            "error": float(np.max(np.linalg.norm(traj.states - ref.states, axis=-1))),
            "endpoint_error": _endpoint(traj.final, sc.xf), "reference_endpoint_error": _endpoint(ref.final, sc.xf),
            "smoothing_deviation": ctrl.deviation(), "smoothing_bound": 2 * ctrl.lipschitz * ctrl.mollifier_width,
            "min_control_distance": dc, "min_vortex_distance": dv}


def weak_diagnostic_series(plan, ns, waypoint_mode="avoid_balls") -> dict:
    """Largest weak-diagnostic value over the kernel test functions for each ``n``, and successive ratios."""
    testfns = kernel_test_functions(plan)
    values = []
    for m in ns:
        ctrl = build_oscillating_control(plan, m, waypoint_mode)
        values.append(max(weak_convergence_diagnostic(ctrl, plan, testfns)))
    ratios = [b / a for a, b in zip(values, values[1:])]
    return {"ns": list(ns), "values": values, "ratios": ratios, "eta": plan.r_bar / 2}


def _run_convergence(sc, out):
    plan = synthesize_N(sc.x0, sc.xf, sc.T, sc.gamma, _share(sc))
    report = convergence_study(plan, sc.x0, sc.ns, sc.waypoint_mode, workers=worker_count())
    scan = separation_scan(plan, sc.ns, sc.waypoint_mode)
    weak = weak_diagnostic_series(plan, sc.ns, sc.waypoint_mode)
    done = sorted(report.trajectories)
    if not done:
        raise HypothesisHViolated("every run of the convergence study failed: " + "; ".join(
            f"n={k}: {v}" for k, v in report.failures.items()))
    traj = report.trajectories[done[-1]]
    traj.to_csv(out / "trajectory.csv")
    report.to_csv(out / "convergence.csv")
    plan.write_json(out / "plan.json", PLAN_SAMPLES)
    return {"r_bar": plan.r_bar, "trajectory_n": done[-1], "convergence": report.to_dict(),
            "monotone_within_20pct": report.monotone_within(0.2), "separation_scan": scan, "weak_diagnostic": weak,
            "endpoint_error": _endpoint(traj.final, sc.xf)}


def _run_exact(sc, out):
    _, rep = exact_control(sc.x0, sc.xf, sc.T, sc.gamma, sc.gamma_c)
    traj = rep.pop("_trajectory")
    plan1, plan2 = rep.pop("_plans")
    traj.to_csv(out / "trajectory.csv")
    _write_json(out / "plan.json", {"kind": "two_phase", "switch_time": rep["switch_time"],
                                    "phase1": plan1.to_dict(PLAN_SAMPLES), "phase2": plan2.to_dict(PLAN_SAMPLES)})
    return rep


RUNNERS = {"free": _run_free, "n_controls": _run_n_controls, "local_straight": _run_local,
           "single_control_approx": _run_approx, "convergence_study": _run_convergence,
           "single_control_exact": _run_exact}


def run_scenario(sc: Scenario, out: str | Path) -> dict:
    """Run ``sc`` and write its artifacts into the existing directory ``out``; return the report."""
    out = Path(out)
    start = time.perf_counter()
    body = RUNNERS[sc.mode](sc, out)
    report = {"mode": sc.mode, "name": sc.name, "seed": sc.seed, "schema_version": sc.schema_version,
              "scenario": sc.to_dict(), "status": "ok", "elapsed_seconds": time.perf_counter() - start}
    report.update(body)
    report["mode"] = sc.mode
    _write_json(out / "report.json", report)
    log.info("%s (%s) finished in %.2f s", sc.name, sc.mode, report["elapsed_seconds"])
    return report

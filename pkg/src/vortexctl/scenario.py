"""Scenario files: JSON description of one run.

Every field is validated before any computation starts so a malformed file
fails fast with the offending field named. Random positions are drawn from
a Philox generator keyed by the scenario seed, so a file plus its seed
fully determines the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1
MODES = ("free", "n_controls", "single_control_approx", "single_control_exact", "convergence_study",
         "local_straight")
SINGLE_CONTROL_MODES = ("single_control_approx", "single_control_exact", "convergence_study")
KNOWN_FIELDS = {"schema_version", "name", "mode", "gamma", "gamma_c", "x0", "xf", "T", "y0", "n", "ns",
                "waypoint_mode", "integrator", "seed", "description"}


@dataclass
class Scenario:
    """Validated contents of a scenario file."""

    name: str
    mode: str
    gamma: np.ndarray
    x0: np.ndarray
    T: float | None
    seed: int = 0
    xf: np.ndarray | None = None
    gamma_c: np.ndarray | float | None = None
    y0: object = None
    n: int | None = None
    ns: list[int] = field(default_factory=list)
    waypoint_mode: str = "avoid_balls"
    integrator: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def N(self) -> int:
        return self.x0.shape[0]

    def to_dict(self) -> dict:
        def conv(v):
            return v.tolist() if isinstance(v, np.ndarray) else v
        return {"schema_version": self.schema_version, "name": self.name, "mode": self.mode,
                "gamma": conv(self.gamma), "gamma_c": conv(self.gamma_c), "x0": conv(self.x0),
                "xf": conv(self.xf), "T": self.T, "y0": conv(self.y0), "n": self.n, "ns": self.ns,
                "waypoint_mode": self.waypoint_mode, "integrator": self.integrator, "seed": self.seed}


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Counter-based generator for a named stream of the scenario seed."""
    key = int.from_bytes(stream.encode()[:8].ljust(8, b"\0"), "little")
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), key]))


def _fail(field_name: str, msg: str):
    raise ConfigError(f"field '{field_name}': {msg}")


def _points(value, field_name, seed, count=None, base=None) -> np.ndarray:
    if isinstance(value, dict):
        if "random" not in value or len(value) != 1:
            _fail(field_name, "object form must be {\"random\": {...}}")
        spec = value["random"]
        rng = rng_for(seed, field_name)
        if base is not None:
            lo = float(spec.get("min_length", 0.0))
            hi = float(spec.get("max_length", 1.0))
            if not 0 <= lo <= hi:
                _fail(field_name, "need 0 <= min_length <= max_length")
            ang = rng.uniform(0, 2 * np.pi, base.shape[0])
            r = rng.uniform(lo, hi, base.shape[0])
            return base + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        try:
            k = int(spec["count"])
            radius = float(spec["radius"])
            sep = float(spec.get("min_separation", 0.0))
        except (KeyError, TypeError, ValueError):
            _fail(field_name, "random positions need count, radius and optional min_separation")
        pts = []
        for _ in range(100_000):
            p = rng.uniform(-radius, radius, 2)
            if np.hypot(*p) > radius:
                continue
            if all(np.hypot(*(p - q)) >= sep for q in pts):
                pts.append(p)
                if len(pts) == k:
                    return np.array(pts)
        _fail(field_name, "could not place random points with the requested separation")
    try:
        arr = np.asarray(value, float)
    except (TypeError, ValueError):
        _fail(field_name, "must be a list of [x, y] pairs")
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        _fail(field_name, "must be a non-empty list of [x, y] pairs")
    if not np.all(np.isfinite(arr)):
        _fail(field_name, "coordinates must be finite")
    if count is not None and arr.shape[0] != count:
        _fail(field_name, f"expected {count} points, got {arr.shape[0]}")
    return arr


def _distinct(arr, field_name):
    if arr.shape[0] > 1:
        d = arr[:, None] - arr[None]
        r = np.sqrt(np.sum(d * d, -1)) + np.eye(arr.shape[0])
        if r.min() <= 0:
            _fail(field_name, "positions must be pairwise distinct")


def parse_scenario(data: dict) -> Scenario:
    """Validate a decoded scenario object."""
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = sorted(set(data) - KNOWN_FIELDS)
    if unknown:
        _fail(unknown[0], "unknown field")
    if data.get("schema_version") != SCHEMA_VERSION:
        _fail("schema_version", f"must be {SCHEMA_VERSION}")
    for req in ("name", "mode", "gamma", "x0"):
        if req not in data:
            _fail(req, "missing")
    mode = data["mode"]
    if mode not in MODES:
        _fail("mode", f"must be one of {', '.join(MODES)}")
    if mode != "local_straight" and "T" not in data:
        _fail("T", "missing")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        _fail("seed", "must be a non-negative integer")
    name = data["name"]
    if not isinstance(name, str) or not name:
        _fail("name", "must be a non-empty string")
    T = None
    if mode == "local_straight":
        if "T" in data:
            _fail("T", "local_straight runs for the time tau fixed by its geometry; omit T")
    else:
        try:
            T = float(data["T"])
        except (TypeError, ValueError):
            _fail("T", "must be a number")
        if not (np.isfinite(T) and T > 0):
            _fail("T", "must be positive")
    x0 = _points(data["x0"], "x0", seed)
    _distinct(x0, "x0")
    N = x0.shape[0]
    try:
        gamma = np.asarray(data["gamma"], float).reshape(-1)
    except (TypeError, ValueError):
        _fail("gamma", "must be a list of numbers")
    if gamma.size != N:
        _fail("gamma", f"expected {N} intensities, got {gamma.size}")
    if not np.all(np.isfinite(gamma)) or np.any(gamma == 0):
        _fail("gamma", "intensities must be finite and nonzero")
    sc = Scenario(name=name, mode=mode, gamma=gamma, x0=x0, T=T, seed=seed)

    integ = data.get("integrator", {})
    if not isinstance(integ, dict):
        _fail("integrator", "must be an object")
    for key in integ:
        if key not in ("method", "dt", "tolerance"):
            _fail(f"integrator.{key}", "unknown field")
    if "method" in integ and integ["method"] not in ("rk4", "rk45"):
        _fail("integrator.method", "must be rk4 or rk45")
    for key in ("dt", "tolerance"):
        if key in integ and not (isinstance(integ[key], (int, float)) and integ[key] > 0):
            _fail(f"integrator.{key}", "must be a positive number")
    sc.integrator = dict(integ)

    if mode == "free":
        return sc
    if "xf" not in data:
        _fail("xf", "missing")
    sc.xf = _points(data["xf"], "xf", seed, count=N, base=x0 if isinstance(data["xf"], dict) else None)
    _distinct(sc.xf, "xf")
    if "gamma_c" not in data:
        _fail("gamma_c", "missing")
    gc = data["gamma_c"]
    if mode in SINGLE_CONTROL_MODES:
        if not isinstance(gc, (int, float)) or isinstance(gc, bool) or not np.isfinite(gc) or gc == 0:
            _fail("gamma_c", "single-control modes take one nonzero number (the control intensity)")
        sc.gamma_c = float(gc)
    else:
        try:
            arr = np.asarray(gc, float).reshape(-1)
        except (TypeError, ValueError):
            _fail("gamma_c", "must be a list of numbers")
        if arr.size != N or not np.all(np.isfinite(arr)) or np.any(arr == 0):
            _fail("gamma_c", f"expected {N} finite nonzero intensities")
        sc.gamma_c = arr
    y0 = data.get("y0")
    if y0 is not None:
        if mode != "n_controls":
            _fail("y0", "only used in n_controls mode")
        if y0 != "auto":
            y0 = _points(y0, "y0", seed, count=N)
    sc.y0 = y0
    wm = data.get("waypoint_mode", "avoid_balls")
    if wm not in ("avoid_balls", "fixed_waypoints"):
        _fail("waypoint_mode", "must be avoid_balls or fixed_waypoints")
    if wm == "fixed_waypoints" and mode != "single_control_exact":
        _fail("waypoint_mode", "fixed_waypoints is only used by the exact-control phase")
    sc.waypoint_mode = wm
    if mode == "single_control_approx":
        n = data.get("n")
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            _fail("n", "single_control_approx needs an integer n >= 1")
        sc.n = n
    if mode == "convergence_study":
        sc.ns = parse_ns(data.get("ns"), "ns")
    return sc


def parse_ns(value, field_name="ns") -> list[int]:
    if isinstance(value, str):
        try:
            value = [int(v) for v in value.split(",") if v.strip()]
        except ValueError:
            _fail(field_name, "must be comma-separated integers")
    if not isinstance(value, list) or len(value) < 2:
        _fail(field_name, "need at least two values of n")
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in value):
        _fail(field_name, "values must be positive integers")
    if any(b <= a for a, b in zip(value, value[1:])):
        _fail(field_name, "values must be strictly increasing")
    return list(value)


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file; JSON syntax errors report line and column."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(data)

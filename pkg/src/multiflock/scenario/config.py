"""Scenario files: parsing, validation, canonical form and initial-state sampling.

Scenarios are YAML mappings.  Every key has a default, so the canonical form
(``dump_scenario``) writes the complete tree with sorted keys; loading that text
again and dumping it reproduces it byte for byte.

Randomized samplers draw from numpy's ``Philox`` bit generator keyed by
``(seed, flock index)``, so each flock has its own reproducible stream.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..dynamics import MODES, ModelParams
from ..errors import ConfigError
from ..hydro1d import HydroFlock1D, HydroState, init_from_profiles
from ..integrate import IntegratorSpec
from ..kernels import KernelSpec, PotentialSpec
from ..state import Flock, MultiFlockState

KINDS = ("particles", "hydro")
SAMPLERS = ("grid", "gaussian_blob", "two_cluster", "custom_table")
RANDOMIZED = ("gaussian_blob", "two_cluster")
DENSITIES = ("bump", "uniform", "gaussian")
VELOCITY_PROFILES = ("constant", "tanh", "linear", "sine")

_INTEGRATOR_DEFAULTS = {"method": "rk45_adaptive", "rtol": 1e-8, "atol": 1e-10, "t_end": 10.0, "dt": None,
                        "collision_guard": False, "theta": 0.5}
_SAMPLER_DEFAULTS = {
    "grid": {"center": None, "spacing": 0.25, "velocity": None, "velocity_gradient": 0.0},
    "gaussian_blob": {"center": None, "spread": 1.0, "velocity": None, "velocity_spread": 0.5},
    "two_cluster": {"center": None, "separation": 2.0, "spread": 0.1, "speed": 1.0, "velocity": None,
                    "velocity_spread": 0.0},
    "custom_table": {"positions": [], "velocities": []},
}


@dataclass
class Scenario:
    """A validated, defaults-filled scenario.  ``config`` is the canonical tree."""

    config: dict

    @property
    def name(self) -> str:
        return self.config["name"]

    @property
    def kind(self) -> str:
        return self.config["kind"]

    @property
    def seed(self) -> int | None:
        return self.config["seed"]

    @property
    def budget_seconds(self) -> float:
        return float(self.config["budget_seconds"])

    @property
    def params(self) -> ModelParams:
        c = self.config
        return ModelParams(eps=float(c["coupling"]["eps"]), psi=KernelSpec.from_dict(c["coupling"]["psi"]),
                           mode=c["mode"], allow_heterogeneous_attraction=bool(c["allow_heterogeneous_attraction"]))

    @property
    def integrator(self) -> IntegratorSpec:
        i = self.config["integrator"]
        return IntegratorSpec(method=i["method"], t_end=float(i["t_end"]), dt=i["dt"], rtol=float(i["rtol"]),
                              atol=float(i["atol"]), collision_guard=bool(i["collision_guard"]),
                              theta=float(i["theta"]))

    @property
    def sample_times(self) -> list[float]:
        s = self.config["samples"]
        t_end = float(self.config["integrator"]["t_end"])
        if s["times"] is not None:
            return [float(t) for t in s["times"]]
        n = int(s["count"])
        if n == 0:
            return []
        if n == 1:
            return [t_end]
        return [float(t) for t in np.linspace(0.0, t_end, n)]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.config)


# --------------------------------------------------------------------------- normalization


def _vec(v, d, default=0.0):
    if v is None:
        return [float(default)] * d
    if isinstance(v, (int, float)):
        return [float(v)] * d
    return [float(x) for x in v]


def _canonical_kernel(k: dict) -> dict:
    return KernelSpec.from_dict(k).to_dict()


def _normalize_flock(f: dict, kind: str, d: int) -> dict:
    out: dict[str, Any] = {
        "n": f.get("n"),
        "mass": float(f.get("mass", 1.0)),
        "lam": float(f.get("lam", 1.0)),
        "kernel": _canonical_kernel(f.get("kernel", {"family": "constant", "c0": 1.0})),
    }
    if kind == "particles":
        out["mass_law"] = f.get("mass_law", "equal")
        out["potential"] = None if f.get("potential") is None else PotentialSpec.from_dict(f["potential"]).to_dict()
        smp = dict(f.get("sampler", {"kind": "grid"}))
        skind = smp.get("kind", "grid")
        base = {"kind": skind, "seed": smp.get("seed")}
        for key, default in _SAMPLER_DEFAULTS.get(skind, {}).items():
            val = smp.get(key, default)
            if key in ("center", "velocity"):
                val = _vec(val, d)
            elif key in ("positions", "velocities"):
                val = [[float(c) for c in row] for row in val]
            else:
                val = float(val)
            base[key] = val
        out["sampler"] = base
    else:
        prof = dict(f.get("profile", {}))
        out["profile"] = {"density": prof.get("density", "bump"), "center": float(prof.get("center", 0.0)),
                          "halfwidth": float(prof.get("halfwidth", 1.0))}
        vel = dict(f.get("velocity_profile", {}))
        out["velocity_profile"] = {"kind": vel.get("kind", "constant"), "amplitude": float(vel.get("amplitude", 0.0)),
                                   "width": float(vel.get("width", 1.0)), "offset": float(vel.get("offset", 0.0))}
        out["grid_points"] = int(f.get("grid_points", 3001))
    return out


def _check(cfg: dict) -> list[tuple[str, str]]:
    """Collect every problem in a raw config as (path, message)."""
    probs: list[tuple[str, str]] = []

    def need(cond, path, msg):
        if not cond:
            probs.append((path, msg))

    if not isinstance(cfg, dict):
        return [("", "scenario must be a mapping")]
    need(isinstance(cfg.get("name"), str) and cfg.get("name"), "name", "a non-empty name is required")
    kind = cfg.get("kind", "particles")
    need(kind in KINDS, "kind", f"must be one of {KINDS}")
    d = cfg.get("dimension", 1 if kind == "hydro" else 2)
    need(isinstance(d, int) and d >= 1, "dimension", "must be a positive integer")
    if kind == "hydro":
        need(d == 1, "dimension", "hydro scenarios are one-dimensional")
    need(cfg.get("mode", "alignment_only") in MODES, "mode", f"must be one of {MODES}")
    seed = cfg.get("seed")
    need(seed is None or (isinstance(seed, int) and 0 <= seed < 2 ** 64), "seed", "must be an unsigned 64-bit integer")
    coupling = cfg.get("coupling", {}) or {}
    eps = coupling.get("eps", 0.0)
    need(isinstance(eps, (int, float)) and eps >= 0, "coupling.eps", "must be a nonnegative number")
    _check_kernel(coupling.get("psi", {"family": "constant", "c0": 1.0}), "coupling.psi", probs, bounded=True)
    flocks = cfg.get("flocks")
    if not isinstance(flocks, list) or not flocks:
        probs.append(("flocks", "at least one flock is required"))
        flocks = []
    for a, f in enumerate(flocks):
        p = f"flocks[{a}]"
        if not isinstance(f, dict):
            probs.append((p, "must be a mapping"))
            continue
        n = f.get("n")
        need(isinstance(n, int) and n >= 1, f"{p}.n", "must be a positive integer")
        need(isinstance(f.get("mass", 1.0), (int, float)) and f.get("mass", 1.0) > 0, f"{p}.mass", "must be positive")
        need(isinstance(f.get("lam", 1.0), (int, float)) and f.get("lam", 1.0) > 0, f"{p}.lam", "must be positive")
        _check_kernel(f.get("kernel", {"family": "constant"}), f"{p}.kernel", probs, bounded=(kind == "hydro"))
        if kind == "particles":
            need(f.get("mass_law", "equal") in ("equal", "random"), f"{p}.mass_law", "must be 'equal' or 'random'")
            if f.get("potential") is not None:
                try:
                    PotentialSpec.from_dict(f["potential"])
                except (ValueError, TypeError) as exc:
                    probs.append((f"{p}.potential", str(exc)))
            smp = f.get("sampler", {"kind": "grid"}) or {}
            sk = smp.get("kind", "grid")
            if sk not in SAMPLERS:
                probs.append((f"{p}.sampler.kind", f"unknown sampler {sk!r}; expected one of {SAMPLERS}"))
                continue
            randomized = sk in RANDOMIZED or f.get("mass_law") == "random"
            if randomized and smp.get("seed") is None and seed is None:
                probs.append((f"{p}.sampler.seed", f"seed is required for the randomized sampler {sk!r}"))
            for key in ("center", "velocity"):
                if key in smp and smp[key] is not None and not isinstance(smp[key], (int, float)):
                    need(len(smp[key]) == d, f"{p}.sampler.{key}", f"must have {d} components")
            if sk == "custom_table":
                pos, vel = smp.get("positions", []), smp.get("velocities", [])
                need(len(pos) == n and len(vel) == n, f"{p}.sampler.positions",
                     "positions and velocities must list n rows")
                need(all(len(r) == d for r in list(pos) + list(vel)), f"{p}.sampler.positions",
                     f"rows must have {d} components")
        else:
            prof = f.get("profile", {}) or {}
            need(prof.get("density", "bump") in DENSITIES, f"{p}.profile.density", f"must be one of {DENSITIES}")
            need(prof.get("halfwidth", 1.0) > 0, f"{p}.profile.halfwidth", "must be positive")
            vel = f.get("velocity_profile", {}) or {}
            need(vel.get("kind", "constant") in VELOCITY_PROFILES, f"{p}.velocity_profile.kind",
                 f"must be one of {VELOCITY_PROFILES}")
            need(vel.get("width", 1.0) > 0, f"{p}.velocity_profile.width", "must be positive")
    integ = {**_INTEGRATOR_DEFAULTS, **(cfg.get("integrator") or {})}
    try:
        IntegratorSpec(method=integ["method"], t_end=float(integ["t_end"]), dt=integ["dt"],
                       rtol=float(integ["rtol"]), atol=float(integ["atol"]), theta=float(integ["theta"]))
    except (ValueError, TypeError) as exc:
        probs.append(("integrator", str(exc)))
    samples = cfg.get("samples", {}) or {}
    if samples.get("times") is not None:
        ts = samples["times"]
        ok = all(isinstance(t, (int, float)) for t in ts) and list(ts) == sorted(ts)
        need(ok, "samples.times", "must be a sorted list of numbers")
        if ok and ts:
            need(ts[0] >= 0 and ts[-1] <= float(integ["t_end"]), "samples.times", "must lie in [0, t_end]")
    else:
        c = samples.get("count", 101)
        need(isinstance(c, int) and c >= 0, "samples.count", "must be a nonnegative integer")
    need(isinstance(cfg.get("budget_seconds", 60.0), (int, float)) and cfg.get("budget_seconds", 60.0) > 0,
         "budget_seconds", "must be positive")
    reduce = (cfg.get("upscale") or {}).get("reduce", [])
    need(all(isinstance(r, int) and 0 <= r < len(flocks) for r in reduce), "upscale.reduce",
         "must list valid flock indices")
    return probs


def _check_kernel(k, path, probs, bounded=False):
    if not isinstance(k, dict):
        probs.append((path, "must be a mapping"))
        return
    fam = k.get("family", "cucker_smale")
    if fam not in ("constant", "cucker_smale", "power_singular", "tabulated"):
        probs.append((f"{path}.family", f"unknown kernel family {fam!r}"))
        return
    try:
        spec = KernelSpec.from_dict(k)
    except (ValueError, TypeError) as exc:
        probs.append((path, str(exc)))
        return
    if bounded and spec.is_singular:
        probs.append((f"{path}.family", "a bounded kernel is required here"))


def normalize(cfg: dict) -> dict:
    """Validate a raw config and return its canonical, defaults-filled form."""
    probs = _check(cfg)
    if probs:
        raise ConfigError(probs)
    kind = cfg.get("kind", "particles")
    d = cfg.get("dimension", 1 if kind == "hydro" else 2)
    coupling = cfg.get("coupling", {}) or {}
    samples = cfg.get("samples", {}) or {}
    out = {
        "name": cfg["name"],
        "kind": kind,
        "dimension": d,
        "seed": cfg.get("seed"),
        "mode": cfg.get("mode", "alignment_only"),
        "allow_heterogeneous_attraction": bool(cfg.get("allow_heterogeneous_attraction", False)),
        "coupling": {"eps": float(coupling.get("eps", 0.0)),
                     "psi": _canonical_kernel(coupling.get("psi", {"family": "constant", "c0": 1.0}))},
        "flocks": [_normalize_flock(f, kind, d) for f in cfg["flocks"]],
        "integrator": {k: (float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v)
                       for k, v in {**_INTEGRATOR_DEFAULTS, **(cfg.get("integrator") or {})}.items()},
        "samples": {"times": None if samples.get("times") is None else [float(t) for t in samples["times"]],
                    "count": int(samples.get("count", 101))},
        "diagnostics": list(cfg.get("diagnostics", ["records"])),
        "output": {"dir": (cfg.get("output") or {}).get("dir", f"runs/{cfg['name']}"),
                   "trajectory": bool((cfg.get("output") or {}).get("trajectory", True))},
        "budget_seconds": float(cfg.get("budget_seconds", 60.0)),
        "description": str(cfg.get("description", "")),
        "upscale": {"reduce": list((cfg.get("upscale") or {}).get("reduce", [])),
                    "compare_full": bool((cfg.get("upscale") or {}).get("compare_full", False))},
        "hydro": {"allow_crossing": bool((cfg.get("hydro") or {}).get("allow_crossing", False))},
    }
    out["integrator"]["collision_guard"] = bool(out["integrator"]["collision_guard"])
    return out


def scenario_from_dict(cfg: dict) -> Scenario:
    return Scenario(normalize(copy.deepcopy(cfg)))


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file; preset names are accepted as well."""
    from .presets import preset

    p = Path(path)
    if not p.exists():
        try:
            return preset(str(path))
        except KeyError:
            raise ConfigError([("", f"no such file or preset: {path}")]) from None
    text = p.read_text()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "?"
        raise ConfigError([(where, f"parse error: {getattr(exc, 'problem', exc)}")]) from exc
    return scenario_from_dict(cfg)


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(s.config, sort_keys=True, default_flow_style=False)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(s))


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node: Any = cfg
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def with_overrides(s: Scenario, overrides: dict[str, Any]) -> Scenario:
    """Apply dotted-path overrides (``integrator.rtol``, ``flocks.0.n`` ...) and revalidate."""
    cfg = s.to_dict()
    for k, v in overrides.items():
        _set_path(cfg, k, v)
    return scenario_from_dict(cfg)


# --------------------------------------------------------------------------- sampling


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Philox counter-based generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def _lattice(n: int, d: int, spacing: float) -> np.ndarray:
    side = int(math.ceil(n ** (1.0 / d) - 1e-9))
    axes = [np.arange(side) * spacing] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)[:n]
    return pts - pts.mean(axis=0)


def sample_flock(fc: dict, d: int, seed: int | None, index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = fc["n"]
    smp = fc["sampler"]
    kind = smp["kind"]
    s = smp.get("seed", None)
    s = seed if s is None else s
    rng = rng_for(int(s), index) if s is not None else None
    if kind == "grid":
        c = np.array(smp["center"])
        y = _lattice(n, d, smp["spacing"])
        x = c + y
        v = np.array(smp["velocity"]) + smp["velocity_gradient"] * y
    elif kind == "gaussian_blob":
        x = np.array(smp["center"]) + smp["spread"] * rng.standard_normal((n, d))
        v = np.array(smp["velocity"]) + smp["velocity_spread"] * rng.standard_normal((n, d))
    elif kind == "two_cluster":
        half = n // 2
        axis = np.zeros(d)
        axis[0] = 1.0
        c = np.array(smp["center"])
        side = np.where(np.arange(n) < half, -1.0, 1.0)[:, None]
        x = c + side * axis * smp["separation"] / 2 + smp["spread"] * rng.standard_normal((n, d))
        v = (np.array(smp["velocity"]) - side * axis * smp["speed"]
             + smp["velocity_spread"] * rng.standard_normal((n, d)))
    else:
        x = np.array(smp["positions"], dtype=float).reshape(n, d)
        v = np.array(smp["velocities"], dtype=float).reshape(n, d)
    if fc["mass_law"] == "random":
        w = rng.uniform(0.5, 1.5, n)
        m = fc["mass"] * w / w.sum()
    else:
        m = np.full(n, fc["mass"] / n)
    return x, v, m


def build_state(s: Scenario) -> MultiFlockState:
    """Initial particle state for a ``particles`` scenario."""
    c = s.config
    if c["kind"] != "particles":
        raise ConfigError([("kind", "build_state needs a particles scenario")])
    flocks = []
    for a, fc in enumerate(c["flocks"]):
        x, v, m = sample_flock(fc, c["dimension"], c["seed"], a)
        pot = None if fc["potential"] is None else PotentialSpec.from_dict(fc["potential"])
        flocks.append(Flock(x=x, v=v, m=m, kernel=KernelSpec.from_dict(fc["kernel"]), lam=fc["lam"], potential=pot))
    return MultiFlockState(tuple(flocks), 0.0)


def density_profile(p: dict):
    c, h = p["center"], p["halfwidth"]
    kind = p["density"]
    if kind == "bump":
        return lambda x: np.where(np.abs(x - c) < h, 0.75 / h * (1 - ((x - c) / h) ** 2), 0.0)
    if kind == "uniform":
        return lambda x: np.where(np.abs(x - c) <= h, 0.5 / h, 0.0)
    # truncated gaussian of unit mass (approximately), support [c - h, c + h]
    sd = h / 3.0
    return lambda x: np.where(np.abs(x - c) <= h, np.exp(-0.5 * ((x - c) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
                              0.0)


def velocity_profile(p: dict, center: float):
    a, w, off = p["amplitude"], p["width"], p["offset"]
    kind = p["kind"]
    if kind == "constant":
        return lambda x: off + 0.0 * x
    if kind == "tanh":
        return lambda x: off + a * np.tanh((x - center) / w)
    if kind == "linear":
        return lambda x: off + a * (x - center) / w
    return lambda x: off + a * np.sin(np.pi * (x - center) / w)


def build_hydro_state(s: Scenario) -> HydroState:
    c = s.config
    if c["kind"] != "hydro":
        raise ConfigError([("kind", "build_hydro_state needs a hydro scenario")])
    flocks: list[HydroFlock1D] = []
    for fc in c["flocks"]:
        prof = fc["profile"]
        rho = density_profile(prof)
        scale = fc["mass"]
        grid = np.linspace(prof["center"] - 1.25 * prof["halfwidth"], prof["center"] + 1.25 * prof["halfwidth"],
                           fc["grid_points"])
        f = init_from_profiles(lambda x, r=rho: scale * r(x), velocity_profile(fc["velocity_profile"], prof["center"]),
                               fc["n"], grid, KernelSpec.from_dict(fc["kernel"]), fc["lam"])
        flocks.append(f)
    return HydroState(tuple(flocks), 0.0)

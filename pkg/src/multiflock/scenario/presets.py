"""Shipped scenarios covering the main regimes of the models."""

from __future__ import annotations

import copy

from .config import Scenario, scenario_from_dict

_CS = "cucker_smale"

_PRESETS: dict[str, dict] = {
    "two_islands": {
        "description": "large flock and small flock far apart; slow coupling between them",
        "dimension": 2, "seed": 20240601, "coupling": {"eps": 0.05, "psi": {"family": _CS, "exponent": 0.5}},
        "flocks": [
            {"n": 64, "kernel": {"family": _CS, "exponent": 0.5},
             "sampler": {"kind": "gaussian_blob", "center": [0, 0], "spread": 0.5, "velocity": [0, 0],
                         "velocity_spread": 0.3}},
            {"n": 8, "kernel": {"family": _CS, "exponent": 0.5},
             "sampler": {"kind": "gaussian_blob", "center": [10, 0], "spread": 0.3, "velocity": [0, 1],
                         "velocity_spread": 0.3}},
        ],
        "integrator": {"t_end": 40.0}, "samples": {"count": 81}, "budget_seconds": 30,
    },
    "fast_local": {
        "description": "decoupled flocks aligning at their own fast rates",
        "dimension": 2, "seed": 7, "coupling": {"eps": 0.0},
        "flocks": [
            {"n": 64, "kernel": {"family": _CS, "exponent": 0.5},
             "sampler": {"kind": "gaussian_blob", "center": [0, 0], "spread": 1.0, "velocity": [0, 0],
                         "velocity_spread": 0.5}},
        ],
        "integrator": {"t_end": 12.0}, "samples": {"count": 121}, "budget_seconds": 10,
    },
    "slow_global": {
        "description": "three flocks without internal communication aligning through the slow coupling",
        "dimension": 2, "seed": 11, "coupling": {"eps": 0.05, "psi": {"family": _CS, "exponent": 0.5}},
        "flocks": [
            {"n": 16, "kernel": {"family": "constant", "c0": 0.0},
             "sampler": {"kind": "gaussian_blob", "center": c, "spread": 0.2, "velocity": v,
                         "velocity_spread": 0.1}}
            for c, v in (([0, 0], [0.5, 0]), ([3, 0], [-0.5, 0.2]), ([1.5, 2.5], [0, -0.4]))
        ],
        "integrator": {"t_end": 80.0}, "samples": {"count": 161}, "budget_seconds": 10,
    },
    "attraction_2zone": {
        "description": "alignment plus two-zone attraction; diameter settles below the zero-zone radius",
        "dimension": 2, "seed": 3, "mode": "alignment_attraction", "coupling": {"eps": 0.0},
        "flocks": [
            {"n": 64, "kernel": {"family": _CS, "exponent": 0.5},
             "potential": {"L": 1.0, "Lprime": 1.5, "beta": 3.0, "a0": 1.0},
             "sampler": {"kind": "gaussian_blob", "center": [0, 0], "spread": 0.8, "velocity": [0, 0],
                         "velocity_spread": 0.5}},
        ],
        "integrator": {"t_end": 100.0}, "samples": {"count": 201}, "budget_seconds": 60,
    },
    "aggregation_quadratic": {
        "description": "quadratic potential without zero zone; exponential aggregation",
        "dimension": 2, "seed": 5, "mode": "alignment_attraction", "coupling": {"eps": 0.0},
        "flocks": [
            {"n": 32, "kernel": {"family": _CS, "exponent": 0.5},
             "potential": {"L": 0.0, "Lprime": 1.0, "beta": 2.0, "a0": 0.05},
             "sampler": {"kind": "gaussian_blob", "center": [0, 0], "spread": 1.0, "velocity": [0, 0],
                         "velocity_spread": 0.5}},
        ],
        "integrator": {"t_end": 60.0}, "samples": {"count": 121}, "budget_seconds": 30,
    },
    "singular_collision": {
        "description": "two clusters of one flock meeting head on under a singular kernel",
        "dimension": 2, "seed": 13, "coupling": {"eps": 0.0},
        "flocks": [
            {"n": 16, "kernel": {"family": "power_singular", "s": 0.5},
             "sampler": {"kind": "two_cluster", "center": [0, 0], "separation": 3.0, "spread": 0.3,
                         "speed": 3.0, "velocity_spread": 0.1}},
        ],
        "integrator": {"t_end": 20.0, "collision_guard": True}, "samples": {"count": 201}, "budget_seconds": 60,
    },
    "hydro_global": {
        "description": "1D hydrodynamic flock with expanding velocity; threshold quantity positive",
        "kind": "hydro", "dimension": 1, "coupling": {"eps": 0.0},
        "flocks": [
            {"n": 256, "kernel": {"family": _CS, "exponent": 1.0},
             "profile": {"density": "bump", "center": 0.0, "halfwidth": 1.0},
             "velocity_profile": {"kind": "tanh", "amplitude": 0.4, "width": 0.5}},
        ],
        "integrator": {"t_end": 50.0}, "samples": {"count": 201}, "budget_seconds": 30,
    },
    "hydro_blowup": {
        "description": "two 1D flocks; one starts compressive far below the blowup threshold",
        "kind": "hydro", "dimension": 1, "coupling": {"eps": 0.5, "psi": {"family": _CS, "exponent": 0.5}},
        "flocks": [
            {"n": 256, "kernel": {"family": _CS, "exponent": 1.0},
             "profile": {"density": "bump", "center": 0.0, "halfwidth": 1.0},
             "velocity_profile": {"kind": "tanh", "amplitude": -2.0, "width": 0.25}},
            {"n": 256, "kernel": {"family": _CS, "exponent": 1.0},
             "profile": {"density": "bump", "center": 6.0, "halfwidth": 1.0},
             "velocity_profile": {"kind": "constant", "offset": 0.5}},
        ],
        "hydro": {"allow_crossing": True},
        "integrator": {"t_end": 5.0}, "samples": {"count": 51}, "budget_seconds": 30,
    },
    "hybrid_upscale": {
        "description": "well separated flocks; the large one is replaced by its super-agent and the run "
                       "is compared with the agent-resolved coupling",
        "dimension": 2, "coupling": {"eps": 0.5, "psi": {"family": _CS, "exponent": 0.5}},
        "flocks": [
            {"n": 64, "kernel": {"family": _CS, "exponent": 0.5},
             "sampler": {"kind": "grid", "center": [0, 0], "spacing": 0.04, "velocity": [0, 0.5],
                         "velocity_gradient": 0.5}},
            {"n": 9, "kernel": {"family": _CS, "exponent": 0.5},
             "sampler": {"kind": "grid", "center": [10, 0], "spacing": 0.05, "velocity": [0, -0.5],
                         "velocity_gradient": 0.5}},
        ],
        "upscale": {"reduce": [0], "compare_full": True},
        "integrator": {"t_end": 10.0}, "samples": {"count": 51}, "budget_seconds": 30,
    },
}

# the hydro blowup preset doubles as the example for the indeterminate/blowup band
_ALIASES = {"blowup_band": "hydro_blowup"}


def preset_names() -> list[str]:
    return list(_PRESETS)


def preset(name: str) -> Scenario:
    key = _ALIASES.get(name, name)
    if key not in _PRESETS:
        raise KeyError(name)
    cfg = copy.deepcopy(_PRESETS[key])
    cfg["name"] = name
    cfg.setdefault("output", {"dir": f"runs/{name}"})
    return scenario_from_dict(cfg)


def preset_library() -> list[Scenario]:
    return [preset(n) for n in _PRESETS]

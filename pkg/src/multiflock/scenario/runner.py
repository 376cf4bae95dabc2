"""Run scenarios and write their artifacts.

Layout of a run directory::

    manifest.json          scenario, versions, event log, verdicts, status
    diagnostics.csv        one row per sample (particle scenarios)
    trajectory/t_00000.csv one snapshot per sample time
    profile.csv            final co-moving density/velocity grid (hydro scenarios)
"""

from __future__ import annotations

import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..diagnostics import records, write_diagnostics_csv
from ..dynamics import ModelParams
from ..errors import BlowupError, MultiflockError
from ..hydro1d import (detect_blowup, reconstruct_density, reconstruct_velocity, riccati_blowup_bound, run_hydro,
                       threshold_verdict, write_hydro_snapshot, write_profile_grid)
from ..integrate import EventLog, integrate, min_pair_distance
from ..kernels import evaluate_kernel
from ..state import MultiFlockState, macro_observables, read_snapshot, write_snapshot
from ..upscale import reduce_to_superagents, separation_report
from .config import Scenario, build_hydro_state, build_state, dump_scenario


@dataclass
class RunResult:
    status: int
    out_dir: Path
    manifest: dict = field(default_factory=dict)
    trajectory: list = field(default_factory=list)


def _versions() -> dict:
    import scipy
    import yaml

    return {"multiflock": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _clean(o):
    """Replace non-finite floats so the manifest stays strict JSON."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return o


def write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(_clean(manifest), sort_keys=True, indent=2, default=_json_default) + "\n")


def momentum_drift(traj: list[MultiFlockState]) -> float:
    """``max_t |V(t) - V(0)| / (1 + |V(0)|)`` for the global center of momentum."""
    if not traj:
        return 0.0
    V0 = macro_observables(traj[0]).velocity
    worst = max(float(np.linalg.norm(macro_observables(s).velocity - V0)) for s in traj)
    return worst / (1.0 + float(np.linalg.norm(V0)))


def _write_traj(out: Path, traj, writer) -> None:
    d = out / "trajectory"
    d.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(traj):
        with open(d / f"t_{k:05d}.csv", "w", newline="") as fh:
            writer(s, fh)


def run_scenario(s: Scenario, out_dir=None, write: bool = True) -> RunResult:
    """Run ``s`` and write its artifacts; solver failures give status 1 and are recorded."""
    out = Path(out_dir if out_dir is not None else s.config["output"]["dir"])
    if write:
        out.mkdir(parents=True, exist_ok=True)
    manifest = {"scenario": s.to_dict(), "versions": _versions(), "status": 0, "error": None, "verdicts": {}}
    t0 = time.perf_counter()
    if s.kind == "hydro":
        res = _run_hydro(s, out, manifest, write)
    else:
        res = _run_particles(s, out, manifest, write)
    manifest["wall_seconds"] = time.perf_counter() - t0
    manifest["within_budget"] = manifest["wall_seconds"] <= s.budget_seconds
    if write:
        (out / "scenario.yaml").write_text(dump_scenario(s))
        write_manifest(out / "manifest.json", manifest)
    return RunResult(manifest["status"], out, manifest, res)


def _run_particles(s: Scenario, out: Path, manifest: dict, write: bool):
    params = s.params
    ispec = s.integrator
    state0 = build_state(s)
    reduce = s.config["upscale"]["reduce"]
    if reduce:
        manifest["verdicts"]["separation"] = separation_report(state0, params).to_dict()
        state0 = reduce_to_superagents(state0, reduce, params=params)
    times = s.sample_times
    traj: list[MultiFlockState] = []
    log = EventLog()
    try:
        traj, log = integrate(state0, params, ispec, times)
    except BlowupError as exc:
        traj = list(exc.trajectory)
        log = exc.log if exc.log is not None else log
        manifest.update(status=1, error={"type": "BlowupError", "message": str(exc), "last_time": exc.last_time})
    except MultiflockError as exc:
        manifest.update(status=1, error={"type": type(exc).__name__, "message": str(exc),
                                         "time": getattr(exc, "time", None), "pair": getattr(exc, "pair", None)})
    manifest["event_log"] = log.to_dict()
    manifest["integrator"] = {k: getattr(ispec, k) for k in ispec.__dataclass_fields__}
    v = manifest["verdicts"]
    if traj:
        v["momentum_drift"] = momentum_drift(traj)
        recs = records(traj, params)
        v["energy_convention"] = recs[0].convention
        v["final"] = {"t": recs[-1].t, "D": recs[-1].D, "A": recs[-1].A,
                      "diameter": recs[-1].diameter.tolist(), "amplitude": recs[-1].amplitude.tolist()}
        A = np.array([r.A for r in recs])
        v["global_amplitude_nonincreasing"] = bool(np.all(np.diff(A) <= 1e-9 * (1 + A[0])))
        if any(f.kernel.is_singular for f in state0.flocks):
            v["min_pair_distance"] = [min(mp[a][0] for mp in map(min_pair_distance, traj))
                                      for a in range(state0.n_flocks)]
        if write:
            with open(out / "diagnostics.csv", "w", newline="") as fh:
                write_diagnostics_csv(recs, fh)
            if s.config["output"]["trajectory"]:
                _write_traj(out, traj, write_snapshot)
    if reduce and s.config["upscale"]["compare_full"] and manifest["status"] == 0 and traj:
        v["hybrid"] = hybrid_comparison(s, traj)
    return traj


def hybrid_comparison(s: Scenario, hybrid_traj: list[MultiFlockState]) -> dict:
    """Compare a reduced run with the agent-resolved run of the unreduced scenario.

    The discrepancy is the largest end-time velocity difference over retained
    agents and reduced flock means.  The predicted first-order scale is
    ``eps * M * psi(R) * ratio * spread * t_end`` with ``ratio`` the largest
    separation ratio, ``R`` the smallest center distance and ``spread`` the
    largest initial velocity gap between any agent and a foreign flock mean.
    """
    params = s.params
    full_params = replace(params, mode="resolved")
    state0 = build_state(s)
    reduce = s.config["upscale"]["reduce"]
    times = s.sample_times
    full, _ = integrate(state0, full_params, s.integrator, times)
    a_end, b_end = hybrid_traj[-1], full[-1]
    mh, mf = macro_observables(a_end), macro_observables(b_end)
    diffs = []
    for a in range(state0.n_flocks):
        if a in reduce:
            diffs.append(float(np.linalg.norm(mh.momenta[a] - mf.momenta[a])))
        else:
            diffs.append(float(np.abs(a_end.flocks[a].v - b_end.flocks[a].v).max()))
    rep = separation_report(state0, params)
    m0 = macro_observables(state0)
    ratio = max(p.ratio for p in rep.pairs)
    R = min(p.R for p in rep.pairs)
    spread = 0.0
    for a, f in enumerate(state0.flocks):
        for b in range(state0.n_flocks):
            if b != a:
                spread = max(spread, float(np.sqrt(((f.v - m0.momenta[b]) ** 2).sum(axis=1)).max()))
    t_end = s.integrator.t_end
    predicted = params.eps * m0.total_mass * float(evaluate_kernel(params.psi, R)) * ratio * spread * t_end
    disc = max(diffs)
    return {"discrepancy": disc, "predicted": predicted, "ratio": ratio,
            "within_factor": disc / predicted if predicted > 0 else math.inf}


def _run_hydro(s: Scenario, out: Path, manifest: dict, write: bool):
    params = s.params
    ispec = s.integrator
    st0 = build_hydro_state(s)
    verdict = threshold_verdict(st0, params)
    manifest["verdicts"]["threshold"] = dict(verdict.__dict__)
    M = st0.macro().total_mass
    psi0 = float(evaluate_kernel(params.psi, 0.0))
    manifest["verdicts"]["riccati_bound"] = riccati_blowup_bound(verdict.value, params.eps if len(st0.flocks) > 1
                                                                 else 0.0, M, psi0)
    run = None
    try:
        run = run_hydro(st0, params, ispec.t_end, s.sample_times or [0.0, ispec.t_end], rtol=ispec.rtol,
                        atol=ispec.atol, method=ispec.method, dt=ispec.dt,
                        allow_crossing=s.config["hydro"]["allow_crossing"])
    except MultiflockError as exc:
        manifest.update(status=1, error={"type": type(exc).__name__, "message": str(exc),
                                         "time": getattr(exc, "time", None)})
        manifest["event_log"] = EventLog().to_dict()
        return []
    manifest["event_log"] = run.log.to_dict()
    det = detect_blowup(run)
    manifest["verdicts"]["blowup"] = None if det is None else dict(det.__dict__)
    manifest["verdicts"]["crossing_time"] = run.crossing_time
    manifest["verdicts"]["min_e"] = float(run.history_min_e.min())
    states = run.states if s.sample_times else []
    if write and states:
        if s.config["output"]["trajectory"]:
            _write_traj(out, states, write_hydro_snapshot)
        if det is None:
            last = states[-1].flocks[0]
            grid = np.linspace(-1.5 * np.ptp(last.x), 1.5 * np.ptp(last.x), 401)
            with open(out / "profile.csv", "w", newline="") as fh:
                write_profile_grid(grid, reconstruct_density(last, grid), reconstruct_velocity(last, grid), fh)
    return states


def report_run(run_dir) -> dict:
    """Re-derive diagnostics from the stored trajectory of a particle run."""
    from .config import load_scenario

    run_dir = Path(run_dir)
    s = load_scenario(run_dir / "scenario.yaml")
    if s.kind != "particles":
        man = json.loads((run_dir / "manifest.json").read_text())
        return {"kind": "hydro", "verdicts": man.get("verdicts", {})}
    template = build_state(s)
    if s.config["upscale"]["reduce"]:
        template = reduce_to_superagents(template, s.config["upscale"]["reduce"], force=True)
    files = sorted((run_dir / "trajectory").glob("t_*.csv"))
    times = s.sample_times
    traj = []
    for k, f in enumerate(files):
        with open(f, newline="") as fh:
            traj.append(read_snapshot(fh, template, times[k] if k < len(times) else float(k)))
    recs = records(traj, s.params)
    with open(run_dir / "diagnostics_report.csv", "w", newline="") as fh:
        write_diagnostics_csv(recs, fh)
    return {"kind": "particles", "samples": len(recs), "momentum_drift": momentum_drift(traj),
            "final_D": recs[-1].D if recs else None, "final_A": recs[-1].A if recs else None}


def _sweep_worker(args):
    cfg, out_dir = args
    from .config import scenario_from_dict

    s = scenario_from_dict(cfg)
    r = run_scenario(s, out_dir)
    return {"out_dir": str(out_dir), "status": r.status, "verdicts": r.manifest.get("verdicts", {})}


def sweep(s: Scenario, grid: dict[str, list], out_dir, workers: int = 1) -> list[dict]:
    """Run the Cartesian product of parameter values; each combination gets its own directory."""
    import itertools
    from concurrent.futures import ProcessPoolExecutor

    from .config import with_overrides

    keys = list(grid)
    jobs = []
    for k, combo in enumerate(itertools.product(*(grid[key] for key in keys))):
        sub = with_overrides(s, dict(zip(keys, combo)))
        jobs.append((sub.to_dict(), Path(out_dir) / f"run_{k:03d}"))
    if workers <= 1:
        results = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_worker, jobs))
    for (cfg, _), r in zip(jobs, results):
        r["overrides"] = {k: v for k, v in zip(keys, [_get(cfg, k) for k in keys])}
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    write_manifest(Path(out_dir) / "sweep.json", {"runs": results})
    return results


def _get(cfg, dotted):
    node = cfg
    for k in dotted.split("."):
        node = node[int(k)] if isinstance(node, list) else node[k]
    return node

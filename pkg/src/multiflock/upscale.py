"""Far-field replacement of flocks by super-agents.

A flock seen from far away acts, to first order in ``r / R``, like a single
agent carrying its mass and momentum at its center.  This module measures that
error by direct summation, reports which flock pairs are separated enough for
the replacement, and performs it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dynamics import ModelParams
from .errors import KernelDomainError, PreconditionError
from .kernels import KernelSpec, evaluate_kernel
from .state import Flock, MultiFlockState, macro_observables, superagent_state

DEFAULT_THRESHOLD = 0.1


def flock_radius(f: Flock, center: np.ndarray | None = None) -> float:
    """Largest distance of an agent to the flock's center of mass."""
    c = (f.m @ f.x) / f.mass if center is None else center
    return float(np.sqrt(((f.x - c) ** 2).sum(axis=1)).max())


def farfield_weights(f: Flock, probe, kernel: KernelSpec) -> tuple[float, np.ndarray]:
    """Exact ``sum_i m_i phi(|x_i - y|)`` and ``sum_i m_i phi(|x_i - y|) v_i`` at ``probe``."""
    y = np.asarray(probe, dtype=float).reshape(-1)
    dist = np.sqrt(((f.x - y) ** 2).sum(axis=1))
    if kernel.is_singular:
        center = (f.m @ f.x) / f.mass
        if np.any(dist == 0) or np.linalg.norm(center - y) <= flock_radius(f, center):
            raise KernelDomainError("probe lies inside the flock for a singular kernel")
    w = f.m * evaluate_kernel(kernel, dist)
    return float(w.sum()), w @ f.v


def monopole_weights(f: Flock, anchor, kernel: KernelSpec) -> tuple[float, np.ndarray]:
    """Surrogates ``phi(|X - anchor|) M`` and ``phi(|X - anchor|) M V``."""
    X = (f.m @ f.x) / f.mass
    V = (f.m @ f.v) / f.mass
    k = float(evaluate_kernel(kernel, float(np.linalg.norm(X - np.asarray(anchor, float).reshape(-1)))))
    return k * f.mass, k * f.mass * V


def farfield_error(f: Flock, probe, kernel: KernelSpec, anchor=None) -> float:
    """``|exact - surrogate| / (phi(R) M)`` for the mass weight.

    ``anchor`` is where the surrogate is evaluated (the probing agent's own
    flock center in a super-agent reduction); it defaults to the probe itself.
    """
    anchor = probe if anchor is None else anchor
    exact, _ = farfield_weights(f, probe, kernel)
    sur, _ = monopole_weights(f, anchor, kernel)
    return abs(exact - sur) / sur if sur > 0 else abs(exact)


@dataclass
class PairSeparation:
    a: int
    b: int
    R: float
    r_a: float
    r_b: float
    ratio: float
    predicted_error: float
    mu_hat: float
    reducible: bool


@dataclass
class SeparationReport:
    pairs: list[PairSeparation] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    def pair(self, a: int, b: int) -> PairSeparation:
        a, b = min(a, b), max(a, b)
        for p in self.pairs:
            if (p.a, p.b) == (a, b):
                return p
        raise KeyError((a, b))

    def to_dict(self) -> dict:
        return {"threshold": self.threshold,
                "pairs": {f"{p.a}-{p.b}": {k: v for k, v in p.__dict__.items() if k not in ("a", "b")}
                          for p in self.pairs}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_json_float)


def _json_float(x):
    return float(x)


def separation_report(state: MultiFlockState, params: ModelParams | None = None, eta: float | None = None,
                      threshold: float = DEFAULT_THRESHOLD) -> SeparationReport:
    """Pairwise separation ratios ``max(r_a, r_b) / R`` and the first-order error scale ``r / R**(1+eta)``.

    ``eta`` defaults to the decay exponent of the inter-flock kernel.
    """
    if state.n_flocks < 2:
        raise PreconditionError("separation report needs at least two flocks")
    params = ModelParams() if params is None else params
    if eta is None:
        eta = params.psi.exponent if params.psi.family == "cucker_smale" else 0.0
    macro = macro_observables(state)
    radii = [flock_radius(f, macro.centers[a]) for a, f in enumerate(state.flocks)]
    pairs = []
    for a in range(state.n_flocks):
        for b in range(a + 1, state.n_flocks):
            R = float(np.linalg.norm(macro.centers[a] - macro.centers[b]))
            r = max(radii[a], radii[b])
            if R > 0:
                ratio = r / R
                pred = r / R ** (1.0 + eta)
            else:
                ratio = 0.0 if r == 0 else math.inf
                pred = 0.0 if r == 0 else math.inf
            phi = state.flocks[a].kernel
            psiR = float(evaluate_kernel(params.psi, R))
            phiR = float(evaluate_kernel(phi, R)) if (R > 0 or not phi.is_singular) else math.inf
            mu = phiR / psiR if psiR > 0 else math.inf
            pairs.append(PairSeparation(a, b, R, radii[a], radii[b], ratio, pred, mu, ratio <= threshold))
    return SeparationReport(pairs, threshold)


def reduce_to_superagents(state: MultiFlockState, which: Iterable[int], force: bool = False,
                          threshold: float = DEFAULT_THRESHOLD, params: ModelParams | None = None) -> MultiFlockState:
    """Replace the flocks in ``which`` by single agents ``(X, V)`` of mass ``M``.

    Each reduced flock must be separated from every retained flock by ratio
    ``<= threshold`` unless ``force`` is set.
    """
    which = sorted(set(which))
    if not force and state.n_flocks > 1 and which:
        rep = separation_report(state, params, threshold=threshold)
        keep = [a for a in range(state.n_flocks) if a not in which]
        for a in which:
            if state.flocks[a].n == 1:
                continue
            for b in keep:
                p = rep.pair(a, b)
                if not p.reducible:
                    raise PreconditionError(
                        f"flock {a} is not separated from flock {b} (ratio {p.ratio:.3g} > {threshold})")
    return superagent_state(state, which)


def higher_multipoles(state: MultiFlockState, which: Iterable[int], order: int = 1) -> MultiFlockState:
    """Extension point for multipole orders above the monopole; currently the monopole reduction."""
    return reduce_to_superagents(state, which, force=True)


def policy_reduce(state: MultiFlockState, params: ModelParams | None = None,
                  threshold: float = DEFAULT_THRESHOLD) -> tuple[MultiFlockState, list[int]]:
    """Reduce every flock that is separated from all others; returns the new state and the reduced ids."""
    if state.n_flocks < 2:
        return state, []
    rep = separation_report(state, params, threshold=threshold)
    chosen = [a for a in range(state.n_flocks) if state.flocks[a].n > 1
              and all(rep.pair(a, b).reducible for b in range(state.n_flocks) if b != a)]
    if not chosen:
        return state, []
    return superagent_state(state, chosen), chosen


def run_with_reduction_policy(state: MultiFlockState, params: ModelParams, ispec, sample_times: Sequence[float],
                              every: int = 1, threshold: float = DEFAULT_THRESHOLD):
    """Integrate while re-checking separation every ``every`` samples; reductions are irreversible.

    Trajectory states can change shape at reduction points.
    """
    from dataclasses import replace

    from .integrate import integrate

    sample_times = list(sample_times)
    traj = [state]
    reductions: list[tuple[float, list[int]]] = []
    cur = state
    i = 0
    logs = []
    while i < len(sample_times) - 1:
        cur, chosen = policy_reduce(cur, params, threshold)
        if chosen:
            reductions.append((cur.t, chosen))
        j = min(i + every, len(sample_times) - 1)
        seg = sample_times[i:j + 1]
        spec = replace(ispec, t_end=seg[-1])
        part, log = integrate(cur, params, spec, seg)
        logs.append(log)
        traj.extend(part[1:])
        cur = part[-1]
        i = j
    return traj, reductions, logs

"""Flocking functionals, energy bookkeeping, scalar envelopes and rate fits.

Energies are mass weighted; with masses ``1/N`` in a flock of total mass one
they reduce to the familiar ``1/N`` and ``1/N**2`` averages:

    K = 1/(2M) sum_i m_i |w_i|^2
    P = 1/(2M) sum_ij m_i m_j U(|y_i - y_j|)
    I = lam/(2M) sum_ij m_i m_j phi_ij |w_i - w_j|^2

With these normalizations ``dE/dt = -I - 2 eps R K`` holds exactly along the
flow, which is what :func:`energy_law_residual` checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .dynamics import ModelParams, damping_rates, kernel_matrix, pair_distances
from .errors import DomainError, NumericalError
from .kernels import KernelSpec, diameter_growth_exponent, evaluate_kernel, potential_value, tail_integral
from .state import Flock, MultiFlockState, macro_observables

# series values below this multiple of eps * initial value are treated as round-off floor
FLOOR_FACTOR = 1e3


def _max_pair(p: np.ndarray) -> float:
    if p.shape[0] < 2:
        return 0.0
    _, r = pair_distances(p)
    return float(r.max())


def diameter(points: np.ndarray) -> float:
    """Exact ``max_ij |p_i - p_j|``."""
    return _max_pair(np.asarray(points, dtype=float).reshape(len(points), -1))


@dataclass
class DiagnosticsRecord:
    t: float
    diameter: np.ndarray          # D_alpha
    amplitude: np.ndarray         # A_alpha
    kinetic: np.ndarray
    potential: np.ndarray
    dissipation: np.ndarray
    damping: np.ndarray           # R_alpha
    max_particle_energy: np.ndarray
    max_deviation: np.ndarray     # max_i |v_i - V_alpha|
    corrector: np.ndarray         # mass-weighted mean of y . w
    D: float
    A: float
    max_global_deviation: float
    convention: str = "unit_mass"

    @property
    def energy(self) -> np.ndarray:
        return self.kinetic + self.potential

    PER_FLOCK = ("diameter", "amplitude", "kinetic", "potential", "energy", "dissipation", "damping",
                 "max_particle_energy", "max_deviation", "corrector")
    GLOBAL = ("D", "A", "max_global_deviation")

    def header(self) -> list[str]:
        n = len(self.diameter)
        return ["t"] + [f"{k}_{a}" for k in self.PER_FLOCK for a in range(n)] + list(self.GLOBAL)

    def row(self) -> list[float]:
        out = [self.t]
        for k in self.PER_FLOCK:
            out.extend(float(x) for x in getattr(self, k))
        out.extend(float(getattr(self, k)) for k in self.GLOBAL)
        return out


def _unit_mass(f: Flock) -> bool:
    return bool(np.allclose(f.m, 1.0 / f.n, rtol=1e-12, atol=0.0))


def _flock_terms(f: Flock, y: np.ndarray, w: np.ndarray):
    M = f.mass
    K = 0.5 * float(f.m @ np.einsum("ij,ij->i", w, w)) / M
    if f.n < 2:
        return K, 0.0, 0.0, 0.5 * float(np.max(np.einsum("ij,ij->i", w, w))), 0.0, 0.0
    diff, r = pair_distances(y)
    mm = f.m[:, None] * f.m[None, :]
    W = kernel_matrix(f.kernel, r)
    dw = w[:, None, :] - w[None, :, :]
    I = 0.5 * f.lam * float((mm * W * np.einsum("ijk,ijk->ij", dw, dw)).sum()) / M
    if f.potential is not None:
        Umat = potential_value(f.potential, r)
        np.fill_diagonal(Umat, 0.0)
        P = 0.5 * float((mm * Umat).sum()) / M
        Ei = 0.5 * np.einsum("ij,ij->i", w, w) + Umat @ f.m
    else:
        P = 0.0
        Ei = 0.5 * np.einsum("ij,ij->i", w, w)
    _, rv = pair_distances(w)
    return K, P, I, float(Ei.max()), float(r.max()), float(rv.max())


def compute_record(state: MultiFlockState, params: ModelParams) -> DiagnosticsRecord:
    macro = macro_observables(state)
    A_n = state.n_flocks
    vals = {k: np.zeros(A_n) for k in ("D", "A", "K", "P", "I", "Einf", "dev", "corr")}
    V = macro.velocity
    gdev = 0.0
    for a, f in enumerate(state.flocks):
        y = f.x - macro.centers[a]
        w = f.v - macro.momenta[a]
        K, P, I, Einf, D, Amp = _flock_terms(f, y, w)
        vals["K"][a], vals["P"][a], vals["I"][a], vals["Einf"][a] = K, P, I, Einf
        vals["D"][a], vals["A"][a] = D, Amp
        nw = np.sqrt(np.einsum("ij,ij->i", w, w))
        vals["dev"][a] = float(nw.max())
        vals["corr"][a] = float(f.m @ np.einsum("ij,ij->i", y, w)) / f.mass
        g = f.v - V
        gdev = max(gdev, float(np.sqrt(np.einsum("ij,ij->i", g, g)).max()))
    R = damping_rates(macro, params.psi) if A_n > 1 else np.zeros(A_n)
    conv = "unit_mass" if all(_unit_mass(f) for f in state.flocks) else "mass_weighted"
    return DiagnosticsRecord(
        t=float(state.t), diameter=vals["D"], amplitude=vals["A"], kinetic=vals["K"], potential=vals["P"],
        dissipation=vals["I"], damping=R, max_particle_energy=vals["Einf"], max_deviation=vals["dev"],
        corrector=vals["corr"], D=_max_pair(macro.centers), A=_max_pair(macro.momenta),
        max_global_deviation=gdev, convention=conv)


def records(trajectory: Sequence[MultiFlockState], params: ModelParams) -> list[DiagnosticsRecord]:
    return [compute_record(s, params) for s in trajectory]


def write_diagnostics_csv(recs: Sequence[DiagnosticsRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if not recs:
        return
    w.writerow(recs[0].header())
    for r in recs:
        w.writerow([repr(float(x)) for x in r.row()])


def series(recs: Sequence[DiagnosticsRecord], name: str, flock: int | None = None) -> np.ndarray:
    if flock is None:
        return np.array([float(getattr(r, name)) for r in recs])
    return np.array([float(getattr(r, name)[flock]) for r in recs])


# --------------------------------------------------------------------------- energy law


def energy_law_residual(trajectory: Sequence[MultiFlockState], params: ModelParams,
                        recs: Sequence[DiagnosticsRecord] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Centered-difference residual of ``dE/dt + I + 2 eps R K``.

    Returns ``(interior_times, max over flocks of |residual|)``.
    """
    if len(trajectory) < 3:
        raise ValueError("energy_law_residual needs at least 3 samples")
    t = np.array([s.t for s in trajectory])
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("trajectory must be sampled at a uniform step")
    recs = records(trajectory, params) if recs is None else recs
    E = np.array([r.energy for r in recs])
    I = np.array([r.dissipation for r in recs])
    K = np.array([r.kinetic for r in recs])
    R = np.array([r.damping for r in recs])
    dE = (E[2:] - E[:-2]) / (t[2:] - t[:-2])[:, None]
    res = dE + I[1:-1] + 2.0 * params.eps * R[1:-1] * K[1:-1]
    return t[1:-1], np.abs(res).max(axis=1)


# --------------------------------------------------------------------------- ODI envelope


@dataclass
class Envelope:
    t: np.ndarray
    A: np.ndarray
    D: np.ndarray
    A_flock: np.ndarray   # (T, n_flocks)
    D_flock: np.ndarray


def odi_envelope(A0: float, D0: float, A_flock0: Sequence[float], D_flock0: Sequence[float],
                 masses: Sequence[float], lams: Sequence[float], kernels: Sequence[KernelSpec],
                 params: ModelParams, times: Sequence[float], rtol: float = 1e-11, atol: float = 1e-13) -> Envelope:
    """Integrate the equality version of the scalar amplitude/diameter system.

    Flock amplitudes are damped by ``lam M_a phi_a(D_a)`` and by the coupling to
    foreign mass, ``eps (M - M_a) psi(D)``; the global pair by ``eps M psi(D)``.
    """
    from .integrate import dopri_solve

    masses = np.asarray(masses, dtype=float)
    lams = np.asarray(lams, dtype=float)
    n = masses.size
    M = masses.sum()
    foreign = M - masses

    def f(t, z):
        A, D = z[0], z[1]
        Aa, Da = z[2:2 + n], z[2 + n:]
        psiD = evaluate_kernel(params.psi, max(D, 0.0))
        phis = np.array([evaluate_kernel(k, max(d, 0.0)) if not k.is_singular else
                         evaluate_kernel(k, max(d, 1e-300)) for k, d in zip(kernels, Da)])
        dA = -params.eps * M * psiD * A
        dAa = -(lams * masses * phis + params.eps * foreign * psiD) * Aa
        return np.concatenate([[dA, A], dAa, Aa])

    z0 = np.concatenate([[A0, D0], np.asarray(A_flock0, float), np.asarray(D_flock0, float)])
    times = np.asarray(times, dtype=float)
    res = dopri_solve(f, float(times[0]), z0, float(times[-1]), times, rtol, atol)
    Z = np.array(res.ys)
    return Envelope(np.array(res.ts), Z[:, 0], Z[:, 1], Z[:, 2:2 + n], Z[:, 2 + n:])


def envelope_from_record(rec: DiagnosticsRecord, state: MultiFlockState, params: ModelParams,
                         times: Sequence[float]) -> Envelope:
    macro = macro_observables(state)
    return odi_envelope(rec.A, rec.D, rec.amplitude, rec.diameter, macro.masses,
                        [f.lam for f in state.flocks], [f.kernel for f in state.flocks], params, times)


# --------------------------------------------------------------------------- flock bound


@dataclass(frozen=True)
class FlockBound:
    D_bar: float
    solvable: bool


def solve_flock_bound(kernel: KernelSpec, coupling: float, D0: float, A0: float) -> FlockBound:
    """Solve ``coupling * int_{D0}^{Dbar} kernel = A0`` for ``Dbar``."""
    if not coupling > 0:
        raise ValueError("coupling must be positive")
    if D0 < 0 or A0 < 0:
        raise ValueError("D0 and A0 must be nonnegative")
    if A0 == 0:
        return FlockBound(float(D0), True)
    if D0 == 0 and kernel.is_singular:
        # fat head: any positive amplitude is absorbed immediately
        D0 = 1e-300
    total = tail_integral(kernel, D0, math.inf)
    if not coupling * total > A0:
        return FlockBound(math.inf, False)

    def g(D):
        return coupling * tail_integral(kernel, D0, D) - A0 if D > D0 else -A0

    hi = D0 + max(1.0, D0)
    while g(hi) < 0:
        hi = D0 + 2.0 * (hi - D0)
        if hi > 1e300:
            raise NumericalError("could not bracket the flock bound")
    try:
        root, info = optimize.brentq(g, D0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500,
                                     full_output=True)
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(f"flock bound root finding failed: {exc}") from exc
    if not info.converged:
        raise NumericalError("flock bound root finding did not converge")
    return FlockBound(float(root), True)


def lyapunov_series(A: np.ndarray, D: np.ndarray, coupling: float, psi: KernelSpec) -> np.ndarray:
    """``A(t) + coupling * int_0^{D(t)} psi``; non-increasing along super-agent flows."""
    return np.array([a + (coupling * tail_integral(psi, 0.0, d) if d > 0 else 0.0) for a, d in zip(A, D)])


def asymptotic_rate_reference(eps: float, zeta: float) -> float:
    """Order of magnitude of the global rate for small ``eps`` (qualitative use only)."""
    if zeta < 1:
        return eps ** (1.0 / (1.0 - zeta))
    if zeta == 1:
        return eps * math.exp(-1.0 / eps)
    return 0.0


# --------------------------------------------------------------------------- fits


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    t0: float
    t1: float
    r2: float
    theory: float | None = None


def _window(t: np.ndarray, s: np.ndarray, window, floor_rel: float) -> np.ndarray:
    if window is not None:
        lo, hi = window
        return np.flatnonzero((t >= lo) & (t <= hi))
    keep = np.flatnonzero(s > FLOOR_FACTOR * np.finfo(float).eps * abs(s[0]) * floor_rel)
    if keep.size == 0:
        return keep
    # contiguous prefix above the floor, then its last 60%
    stop = keep[-1] if np.all(np.diff(keep) == 1) else keep[np.argmax(np.diff(keep) > 1)]
    idx = np.arange(0, stop + 1)
    start = int(math.floor(0.4 * idx.size))
    return idx[start:]


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, icpt = np.polyfit(x, y, 1)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - (slope * x + icpt)) ** 2).sum())
    if ss_tot == 0.0 or ss_res <= 1e-28 * max(1.0, ss_tot):
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return float(slope), r2


def fit_decay_rate(t, s, window=None, theory: float | None = None, floor_rel: float = 1.0) -> RateEstimate:
    """Exponential rate ``-d log s / dt`` by least squares on a window."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    idx = _window(t, s, window, floor_rel)
    if idx.size < 10:
        raise ValueError(f"need at least 10 samples in the fit window, got {idx.size}")
    sw = s[idx]
    if np.any(sw <= 0):
        raise DomainError("series must be positive on the fit window")
    slope, r2 = _linfit(t[idx], np.log(sw))
    return RateEstimate(-slope, float(t[idx[0]]), float(t[idx[-1]]), r2, theory)


def algebraic_decay_check(t, s, p: float, window=None) -> tuple[float, bool]:
    """Fit ``s ~ <t>**(-p_hat)``; passes when ``p_hat >= p - 0.15``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if window is None:
        idx = np.arange(int(math.floor(0.4 * t.size)), t.size)
    else:
        idx = np.flatnonzero((t >= window[0]) & (t <= window[1]))
    if idx.size < 10:
        raise ValueError("need at least 10 samples in the fit window")
    if np.any(s[idx] <= 0):
        raise DomainError("series must be positive on the fit window")
    slope, _ = _linfit(np.log(np.sqrt(1.0 + t[idx] ** 2)), np.log(s[idx]))
    p_hat = -slope
    return p_hat, bool(p_hat >= p - 0.15)


@dataclass(frozen=True)
class GrowthCheck:
    exponent: float
    bound: float
    passed: bool


def diameter_growth_check(t, D, beta: float, window=None) -> GrowthCheck:
    """Log-log growth exponent of a diameter series against the a priori bound for ``beta``."""
    t = np.asarray(t, dtype=float)
    D = np.asarray(D, dtype=float)
    if window is None:
        idx = np.arange(t.size // 2, t.size)
    else:
        idx = np.flatnonzero((t >= window[0]) & (t <= window[1]))
    slope, _ = _linfit(np.log(np.sqrt(1.0 + t[idx] ** 2)), np.log(np.maximum(D[idx], 1e-300)))
    bound = diameter_growth_exponent(beta)
    return GrowthCheck(slope, bound, bool(slope <= bound + 0.1))


# --------------------------------------------------------------------------- collision functional


def collision_functional(f: Flock) -> tuple[float, tuple[int, int]]:
    """``|v_i - v_j| + lam (m_i + m_j) int_{r_ij}^1 phi`` for the closest pair (signed integral).

    Returns the value and the pair.
    """
    _, r = pair_distances(f.x)
    iu = np.triu_indices(f.n, 1)
    k = int(np.argmin(r[iu]))
    i, j = int(iu[0][k]), int(iu[1][k])
    d = float(r[i, j])
    amp = float(np.linalg.norm(f.v[i] - f.v[j]))
    if d == 1.0:
        integ = 0.0
    elif d < 1.0:
        integ = tail_integral(f.kernel, d, 1.0)
    else:
        integ = -tail_integral(f.kernel, 1.0, d)
    return amp + f.lam * (f.m[i] + f.m[j]) * integ, (i, j)


def linear_slope(t, s) -> tuple[float, float]:
    """Least-squares slope and R^2 of ``s`` against ``t``."""
    return _linfit(np.asarray(t, float), np.asarray(s, float))

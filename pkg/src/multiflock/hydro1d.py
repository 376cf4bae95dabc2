"""1D multi-flock alignment hydrodynamics on Lagrangian particles.

Each flock is a set of ordered particles carrying position ``x``, velocity
``v``, density ``rho``, mass ``m`` and the threshold quantity
``e = u' + lam * (phi * rho)``.  Along particle paths

    x' = v
    v' = lam sum_j m_j phi_ij (v_j - v_i) + eps sum_b M_b psi(|X_a - X_b|) (V_b - v_i)
    e' = (eps R_a + e) (lam c_i - e),      c_i = sum_j m_j phi(|x_i - x_j|)
    rho' = -rho (e - lam c_i)

The convolution ``c_i`` includes the particle's own mass (midpoint rule).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .diagnostics import RateEstimate, fit_decay_rate, solve_flock_bound
from .dynamics import ModelParams
from .errors import DomainError, OrderingError, PreconditionError
from .integrate import EventLog, dopri_solve, rk4_solve
from .kernels import FAT_TAIL, KernelSpec, classify_tail, evaluate_kernel
from .state import MacroObservables

BLOWUP_LEVEL = -1e6
GLOBAL = "global_guaranteed"
BAND = "indeterminate_band"
BLOWUP = "blowup_guaranteed"


@dataclass(frozen=True)
class HydroFlock1D:
    x: np.ndarray
    v: np.ndarray
    e: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("cucker_smale", exponent=1.0))
    lam: float = 1.0

    def __post_init__(self):
        for name in ("x", "v", "e", "rho", "m"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if self.kernel.is_singular:
            raise PreconditionError("hydrodynamic solver supports bounded kernels only")

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def mass(self) -> float:
        return float(self.m.sum())

    def convolution(self) -> np.ndarray:
        """``sum_j m_j phi(|x_i - x_j|)`` including the self term."""
        return _kernel_pairs(self.kernel, self.x) @ self.m

    def velocity_gradient(self) -> np.ndarray:
        """``u'`` recovered from the transported quantity: ``e - lam (phi * rho)``."""
        return self.e - self.lam * self.convolution()


@dataclass(frozen=True)
class HydroState:
    flocks: tuple[HydroFlock1D, ...]
    t: float = 0.0

    def macro(self) -> MacroObservables:
        M = np.array([f.mass for f in self.flocks])
        X = np.array([[f.m @ f.x] for f in self.flocks]) / M[:, None]
        V = np.array([[f.m @ f.v] for f in self.flocks]) / M[:, None]
        return MacroObservables(M, X, V)

    @property
    def min_e(self) -> float:
        return float(min(f.e.min() for f in self.flocks))


def _kernel_pairs(kernel: KernelSpec, x: np.ndarray) -> np.ndarray:
    return evaluate_kernel(kernel, np.abs(x[:, None] - x[None, :]))


# --------------------------------------------------------------------------- initialization


def init_from_profiles(rho0: Callable, u0: Callable, n: int, grid: np.ndarray,
                       kernel: KernelSpec, lam: float = 1.0) -> HydroFlock1D:
    """Place ``n`` equal-mass particles at the mass quantiles of ``rho0`` sampled on ``grid``.

    ``u0'`` comes from centered differences on the grid and ``phi * rho0`` from
    the trapezoidal rule on the same grid.
    """
    grid = np.asarray(grid, dtype=float)
    rg = np.asarray(rho0(grid), dtype=float)
    if np.any(rg < 0):
        raise DomainError("initial density must be nonnegative")
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rg[1:] + rg[:-1]) * np.diff(grid))])
    M = float(cdf[-1])
    if not M > 0:
        raise DomainError("initial density has zero total mass")
    levels = (np.arange(n) + 0.5) / n * M
    # invert the CDF on its strictly increasing part
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    x = np.interp(levels, cdf[keep], grid[keep])
    ug = np.asarray(u0(grid), dtype=float) * np.ones_like(grid)
    du = np.gradient(ug, grid)
    conv = np.array([np.trapezoid(evaluate_kernel(kernel, np.abs(xi - grid)) * rg, grid) for xi in x])
    v = np.interp(x, grid, ug)
    e = np.interp(x, grid, du) + lam * conv
    rho = np.interp(x, grid, rg)
    return HydroFlock1D(x=x, v=v, e=e, rho=rho, m=np.full(n, M / n), kernel=kernel, lam=lam)


# --------------------------------------------------------------------------- right-hand side


class _Pack:
    def __init__(self, state: HydroState):
        self.template = state
        self.sizes = [f.n for f in state.flocks]
        self.offsets = np.concatenate([[0], np.cumsum([4 * n for n in self.sizes])]).astype(int)

    def pack(self, state: HydroState) -> np.ndarray:
        return np.concatenate([np.concatenate([f.x, f.v, f.e, f.rho]) for f in state.flocks])

    def split(self, y: np.ndarray):
        out = []
        for a, n in enumerate(self.sizes):
            blk = y[self.offsets[a]:self.offsets[a + 1]]
            out.append((blk[:n], blk[n:2 * n], blk[2 * n:3 * n], blk[3 * n:]))
        return out

    def state(self, y: np.ndarray, t: float) -> HydroState:
        y = np.array(y, dtype=float)
        flocks = tuple(replace(f, x=x, v=v, e=e, rho=r)
                       for f, (x, v, e, r) in zip(self.template.flocks, self.split(y)))
        return HydroState(flocks, t)


def _rhs_factory(pack: _Pack, params: ModelParams, form: str = "original"):
    flocks = pack.template.flocks
    masses = np.array([f.mass for f in flocks])

    def f(t, y):
        parts = pack.split(y)
        X = np.array([fl.m @ p[0] for fl, p in zip(flocks, parts)]) / masses
        V = np.array([fl.m @ p[1] for fl, p in zip(flocks, parts)]) / masses
        if len(flocks) > 1 and params.eps > 0:
            C = evaluate_kernel(params.psi, np.abs(X[:, None] - X[None, :])) * masses[None, :]
            np.fill_diagonal(C, 0.0)
        else:
            C = np.zeros((len(flocks), len(flocks)))
        R = C.sum(axis=1)
        out = []
        for a, (fl, (x, v, e, rho)) in enumerate(zip(flocks, parts)):
            W = _kernel_pairs(fl.kernel, x) * fl.m[None, :]
            c = W.sum(axis=1)
            acc = fl.lam * (W * (v[None, :] - v[:, None])).sum(axis=1)
            if params.eps > 0:
                if form == "original":
                    for b in range(len(flocks)):
                        if b != a and C[a, b] != 0.0:
                            acc = acc + params.eps * C[a, b] * (V[b] - v)
                else:
                    drift = params.eps * (C[a] @ (V - V[a]))
                    acc = acc - params.eps * R[a] * (v - V[a]) + drift
            lc = fl.lam * c
            de = (params.eps * R[a] + e) * (lc - e)
            drho = -rho * (e - lc)
            out.append(np.concatenate([v, acc, de, drho]))
        return np.concatenate(out)

    return f


def hydro_rhs(state: HydroState, params: ModelParams, form: str = "original") -> HydroState:
    """Time derivative of every particle field, returned in a HydroState container."""
    pack = _Pack(state)
    dy = _rhs_factory(pack, params, form)(state.t, pack.pack(state))
    return pack.state(dy, state.t)


def _ordering_violation(pack: _Pack, y: np.ndarray) -> tuple[int, int] | None:
    for a, (x, *_rest) in enumerate(pack.split(y)):
        bad = np.flatnonzero(np.diff(x) <= 0)
        if bad.size:
            return a, int(bad[0])
    return None


def step_hydro(state: HydroState, params: ModelParams, dt: float, form: str = "original") -> HydroState:
    """One classical RK4 step of length ``dt`` for all particle fields."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    pack = _Pack(state)
    f = _rhs_factory(pack, params, form)
    y = pack.pack(state)
    if _ordering_violation(pack, y):
        raise OrderingError("particle positions are not strictly increasing", state.t)
    t = state.t
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    y1 = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    hit = _ordering_violation(pack, y1)
    if hit:
        raise OrderingError(f"particles {hit[1]}, {hit[1] + 1} of flock {hit[0]} crossed", t + dt)
    return pack.state(y1, t + dt)


@dataclass
class HydroRun:
    states: list[HydroState]
    history_t: np.ndarray        # every accepted step
    history_min_e: np.ndarray
    log: EventLog
    blowup: bool = False
    crossing_time: float | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def run_hydro(state: HydroState, params: ModelParams, t_end: float, sample_times: Sequence[float] | None = None,
              rtol: float = 1e-8, atol: float = 1e-10, method: str = "rk45_adaptive", dt: float | None = None,
              form: str = "original", blowup_level: float = BLOWUP_LEVEL,
              allow_crossing: bool = False) -> HydroRun:
    """Integrate until ``t_end`` or until ``min e`` falls to ``blowup_level``.

    The last state reached is appended to the samples when the run stops early.
    Particle crossing raises :class:`OrderingError` unless ``allow_crossing``;
    then its time is recorded and the run continues, since the characteristic
    ODEs stay regular and ``e`` keeps following its Riccati law to blowup.
    """
    pack = _Pack(state)
    f = _rhs_factory(pack, params, form)
    y0 = pack.pack(state)
    if _ordering_violation(pack, y0):
        raise OrderingError("initial particle positions are not strictly increasing", state.t)
    sample_times = [state.t, t_end] if sample_times is None else list(sample_times)
    log = EventLog()
    hist_t = [state.t]
    hist_e = [state.min_e]
    e_idx = np.concatenate([np.arange(pack.offsets[a] + 2 * n, pack.offsets[a] + 3 * n)
                            for a, n in enumerate(pack.sizes)])

    crossing: list[float] = []

    def stop(t, y):
        if not crossing:
            hit = _ordering_violation(pack, y)
            if hit:
                if not allow_crossing:
                    raise OrderingError(f"particles {hit[1]}, {hit[1] + 1} of flock {hit[0]} crossed", t)
                crossing.append(t)
                log.add(t, "collision_near_miss", what="particle_crossing", flock=hit[0], pair=[hit[1], hit[1] + 1])
        me = float(y[e_idx].min())
        hist_t.append(t)
        hist_e.append(me)
        if me <= blowup_level:
            log.add(t, "blowup_suspected", min_e=me)
            return True
        return False

    if method == "rk4_fixed":
        res = rk4_solve(f, state.t, y0, t_end, sample_times, dt, stop=stop, log=log)
    else:
        # a Riccati blowup shrinks steps geometrically; allow them to get tiny
        res = dopri_solve(f, state.t, y0, t_end, sample_times, rtol, atol, stop=stop, log=log, h_min=1e-16)
    states = [pack.state(y, t) for t, y in zip(res.ts, res.ys)]
    if res.stopped and (not states or states[-1].t < res.t_last):
        states.append(pack.state(res.y_last, res.t_last))
    return HydroRun(states, np.array(hist_t), np.array(hist_e), log, blowup=res.stopped,
                    crossing_time=crossing[0] if crossing else None)


# --------------------------------------------------------------------------- thresholds


@dataclass
class ThresholdVerdict:
    classification: str
    witness: tuple[int, int]
    value: float
    floor: float                       # -eps M psi(0)
    improved_floor: float | None = None
    improved_classification: str | None = None
    D_bar: float | None = None


def _classify(value: float, floor: float) -> str:
    if value >= 0:
        return GLOBAL
    if value < floor:
        return BLOWUP
    return BAND


def threshold_verdict(state: HydroState, params: ModelParams) -> ThresholdVerdict:
    """Classify initial data by the sign of ``min e`` against the coupling floor ``-eps M psi(0)``.

    For fat-tailed ``psi`` the global-existence level improves to
    ``-eps M psi(Dbar)``, reported in ``improved_*``.
    """
    best = (math.inf, (0, 0))
    for a, f in enumerate(state.flocks):
        i = int(np.argmin(f.e))
        if f.e[i] < best[0]:
            best = (float(f.e[i]), (a, i))
    value, witness = best
    macro = state.macro()
    M = macro.total_mass
    multi = len(state.flocks) > 1 and params.eps > 0
    floor = -params.eps * M * float(evaluate_kernel(params.psi, 0.0)) if multi else 0.0
    verdict = ThresholdVerdict(_classify(value, floor), witness, value, floor)
    if multi and params.psi.family in ("constant", "cucker_smale") and classify_tail(params.psi) == FAT_TAIL:
        D0 = float(np.abs(macro.centers[:, 0, None] - macro.centers[None, :, 0]).max())
        A0 = float(np.abs(macro.momenta[:, 0, None] - macro.momenta[None, :, 0]).max())
        bound = solve_flock_bound(params.psi, params.eps * M, D0, A0)
        if bound.solvable:
            imp = -params.eps * M * float(evaluate_kernel(params.psi, bound.D_bar))
            verdict.D_bar = bound.D_bar
            verdict.improved_floor = imp
            verdict.improved_classification = GLOBAL if value >= imp else (
                BLOWUP if value < floor else BAND)
    return verdict


def riccati_blowup_bound(e0: float, eps: float, M: float, psi0: float) -> float:
    """Comparison bound ``1 / (|e0| - eps M psi(0))`` for the blowup time when ``e0 < -eps M psi(0)``.

    Follows from ``de/dt <= -c e**2`` with ``c = delta / (1 + delta)`` and
    ``|e0| = (1 + delta) eps M psi(0)``.
    """
    gap = abs(e0) - eps * M * psi0
    if not (e0 < 0 and gap > 0):
        return math.inf
    return 1.0 / gap


@dataclass
class BlowupDetection:
    crossing_time: float
    blowup_time: float


def detect_blowup(run: HydroRun, level: float = BLOWUP_LEVEL) -> BlowupDetection | None:
    """First time ``min e`` reaches ``level`` and a Riccati extrapolation of the blowup time.

    Near blowup ``1/e`` is close to linear in ``t``; the zero of the line
    through the last two recorded points estimates the blowup time.
    """
    t, e = run.history_t, run.history_min_e
    hit = np.flatnonzero(e <= level)
    if hit.size == 0:
        return None
    k = int(hit[0])
    if k == 0:
        return BlowupDetection(float(t[0]), float(t[0]))
    t1, t2 = t[k - 1], t[k]
    q1, q2 = 1.0 / e[k - 1], 1.0 / e[k]
    if q2 == q1:
        return BlowupDetection(float(t2), float(t2))
    tb = t2 - q2 * (t2 - t1) / (q2 - q1)
    return BlowupDetection(float(t2), float(max(tb, t2)))


# --------------------------------------------------------------------------- profiles


def spacing_density(f: HydroFlock1D) -> np.ndarray:
    """Density estimate from particle spacing, ``(m_{i-1} + 2 m_i + m_{i+1}) / (2 (x_{i+1} - x_{i-1}))`` inside."""
    x, m = f.x, f.m
    out = np.full(f.n, np.nan)
    out[1:-1] = (0.5 * m[:-2] + m[1:-1] + 0.5 * m[2:]) / (x[2:] - x[:-2])
    return out


def differenced_gradient(f: HydroFlock1D) -> np.ndarray:
    """``u'`` at interior particles from the particle velocities alone.

    Five-point nonuniform stencil (fourth order), shifted inward next to the
    ends; three-point centered differences when the flock has fewer than five
    particles.
    """
    x, v, n = f.x, f.v, f.n
    out = np.full(n, np.nan)
    if n < 3:
        return out
    if n < 5:
        h1 = x[1:-1] - x[:-2]
        h2 = x[2:] - x[1:-1]
        out[1:-1] = (h1 ** 2 * v[2:] - h2 ** 2 * v[:-2] + (h2 ** 2 - h1 ** 2) * v[1:-1]) / (h1 * h2 * (h1 + h2))
        return out
    i = np.arange(1, n - 1)
    start = np.clip(i - 2, 0, n - 5)
    idx = start[:, None] + np.arange(5)
    dx = x[idx] - x[i, None]
    # rows: powers 0..4; solving V^T w = e_1 gives the first-derivative weights
    V = dx[:, None, :] ** np.arange(5)[None, :, None]
    rhs = np.zeros((i.size, 5))
    rhs[:, 1] = 1.0
    w = np.linalg.solve(V, rhs[:, :, None])[:, :, 0]
    out[1:-1] = (w * v[idx]).sum(axis=1)
    return out


def transport_consistency(f: HydroFlock1D) -> float:
    """``max_i |e_i - (u'_i + lam c_i)| / (1 + |e_i|)`` over interior particles, ``u'`` by differencing."""
    du = differenced_gradient(f)
    res = np.abs(f.e - (du + f.lam * f.convolution())) / (1.0 + np.abs(f.e))
    return float(np.nanmax(res[1:-1]))


def reconstruct_density(f: HydroFlock1D, grid: np.ndarray, center: float | None = None) -> np.ndarray:
    """Piecewise-linear density through the particles (in the frame ``x - center``), scaled to the flock mass."""
    center = float(f.m @ f.x / f.mass) if center is None else center
    xs = f.x - center
    rho = np.interp(grid, xs, f.rho, left=0.0, right=0.0)
    total = np.trapezoid(rho, grid)
    return rho * (f.mass / total) if total > 0 else rho


def reconstruct_velocity(f: HydroFlock1D, grid: np.ndarray, center: float | None = None) -> np.ndarray:
    center = float(f.m @ f.x / f.mass) if center is None else center
    return np.interp(grid, f.x - center, f.v, left=np.nan, right=np.nan)


def second_derivative(f: HydroFlock1D) -> np.ndarray:
    """``u''`` between adjacent particles by differencing ``u'``."""
    du = f.velocity_gradient()
    return np.diff(du) / np.diff(f.x)


@dataclass
class ProfileConvergence:
    density_rate: RateEstimate
    gradient_rate: RateEstimate
    curvature_rate: RateEstimate
    grid: np.ndarray
    limit_profile: np.ndarray
    cauchy: np.ndarray
    sup_gradient: np.ndarray
    sup_curvature: np.ndarray
    times: np.ndarray


def _rate_or_nan(t, s, window) -> RateEstimate:
    # a series sitting at round-off (steady profile) has no meaningful rate
    if np.all(s[(t >= window[0]) & (t <= window[1])] > 0):
        try:
            return fit_decay_rate(t, s, window=window)
        except ValueError:
            pass
    return RateEstimate(math.nan, window[0], window[1], math.nan)


def profile_convergence(run: HydroRun, flock: int = 0, grid: np.ndarray | None = None,
                        window: tuple[float, float] | None = None) -> ProfileConvergence:
    """Cauchy differences of the co-moving density and decay of ``sup|u'|``, ``sup|u''|``."""
    if run.blowup or min(s.min_e for s in run.states) < -1e-8:
        raise PreconditionError("profile convergence needs a run in the global regime")
    states = run.states
    last = states[-1].flocks[flock]
    if grid is None:
        half = 1.5 * float(np.ptp(last.x)) + 1e-9
        grid = np.linspace(-half, half, 1201)
    profiles = np.array([reconstruct_density(s.flocks[flock], grid) for s in states])
    cauchy = np.abs(profiles - profiles[-1]).max(axis=1)
    sup_du = np.array([np.abs(s.flocks[flock].velocity_gradient()).max() for s in states])
    sup_ddu = np.array([np.abs(second_derivative(s.flocks[flock])).max() for s in states])
    t = run.times
    if window is None:
        # the Cauchy difference is forced to zero at t_end; stay clear of it
        window = (t[0] + 0.1 * (t[-1] - t[0]), t[0] + 0.7 * (t[-1] - t[0]))
    rate_rho = _rate_or_nan(t[:-1], cauchy[:-1], window)
    rate_du = _rate_or_nan(t, sup_du, window)
    rate_ddu = _rate_or_nan(t, sup_ddu, window)
    return ProfileConvergence(rate_rho, rate_du, rate_ddu, grid, profiles[-1], cauchy, sup_du, sup_ddu, t)


def macro_residual(state: HydroState, params: ModelParams) -> float:
    """Mismatch between particle-averaged accelerations and the super-agent law for ``V``."""
    der = hydro_rhs(state, params)
    macro = state.macro()
    dV = np.array([f.m @ d.v for f, d in zip(state.flocks, der.flocks)]) / macro.masses
    V = macro.momenta[:, 0]
    X = macro.centers[:, 0]
    if len(state.flocks) > 1:
        C = params.eps * evaluate_kernel(params.psi, np.abs(X[:, None] - X[None, :])) * macro.masses[None, :]
        np.fill_diagonal(C, 0.0)
        expect = (C * (V[None, :] - V[:, None])).sum(axis=1)
    else:
        expect = np.zeros(1)
    return float(np.abs(dV - expect).max())


# --------------------------------------------------------------------------- output


def write_hydro_snapshot(state: HydroState, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["flock_id", "particle_id", "m", "x", "v", "e", "rho"])
    for a, f in enumerate(state.flocks):
        for i in range(f.n):
            w.writerow([a, i] + [repr(float(z)) for z in (f.m[i], f.x[i], f.v[i], f.e[i], f.rho[i])])


def write_profile_grid(grid: np.ndarray, rho: np.ndarray, u: np.ndarray, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["x_grid", "rho", "u"])
    for row in zip(grid, rho, u):
        w.writerow([repr(float(z)) for z in row])

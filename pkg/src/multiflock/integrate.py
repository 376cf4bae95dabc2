"""Time integration of the multi-flock systems.

The solvers work on flat float vectors so the hydrodynamic module can reuse
them; :func:`integrate` packs a :class:`MultiFlockState` into ``[x..., v...]``.
Step control is the usual Dormand-Prince 5(4) pair with a max-norm error test.
Events (pair-distance guard, blowup bound) are checked after each candidate
step and handled by rejection, never by root finding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import ModelParams, pair_distances, rhs_master
from .errors import BlowupError, CollisionError
from .state import MultiFlockState, superagent_state

BLOWUP_BOUND = 1e12

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4


@dataclass(frozen=True)
class IntegratorSpec:
    method: str = "rk45_adaptive"
    t_end: float = 1.0
    dt: float | None = None
    rtol: float = 1e-8
    atol: float = 1e-10
    collision_guard: bool = False
    theta: float = 0.5
    h_min: float = 1e-13
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "rk45_adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "rk4_fixed" and not (self.dt and self.dt > 0):
            raise ValueError("rk4_fixed needs dt > 0")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")


@dataclass
class Event:
    time: float
    kind: str
    payload: dict = field(default_factory=dict)


@dataclass
class EventLog:
    events: list[Event] = field(default_factory=list)
    n_accepted: int = 0
    n_rejected: int = 0
    min_step: float = math.inf

    KINDS = ("collision_near_miss", "step_rejected", "blowup_suspected")

    def add(self, time: float, kind: str, **payload) -> None:
        if kind not in self.KINDS:
            raise ValueError(kind)
        if self.events and time < self.events[-1].time:
            time = self.events[-1].time
        self.events.append(Event(float(time), kind, payload))

    def to_dict(self) -> dict:
        return {
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "min_step": None if math.isinf(self.min_step) else self.min_step,
            # step rejections can be numerous; keep the manifest readable
            "events": [{"time": e.time, "kind": e.kind, **e.payload} for e in self.events[:1000]],
            "n_events": len(self.events),
        }


@dataclass
class SolveResult:
    ts: list[float]
    ys: list[np.ndarray]
    t_last: float
    y_last: np.ndarray
    stopped: bool = False


Guard = Callable[[float, np.ndarray, np.ndarray], "str | None"]
Stop = Callable[[float, np.ndarray], bool]


def _check_samples(t0: float, t_out: Sequence[float], t_end: float) -> np.ndarray:
    t_out = np.asarray(list(t_out), dtype=float)
    if t_out.size and (np.any(np.diff(t_out) < 0) or t_out[0] < t0 or t_out[-1] > t_end * (1 + 1e-12)):
        raise ValueError("sample times must be sorted and lie in [t0, t_end]")
    return t_out


def _bad(y: np.ndarray, bound: float) -> bool:
    return not np.all(np.isfinite(y)) or float(np.max(np.abs(y), initial=0.0)) > bound


def _initial_step(f, t0, y0, f0, rtol, atol, span):
    """Starting step from first and second derivative size (Hairer, Norsett & Wanner, II.4)."""
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.max(np.abs(y0) / scale, initial=0.0))
    d1 = float(np.max(np.abs(f0) / scale, initial=0.0))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = float(np.max(np.abs(f1 - f0) / scale, initial=0.0)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, 1e-3 * h0)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def dopri_solve(f: Callable[[float, np.ndarray], np.ndarray], t0: float, y0: np.ndarray,
                t_end: float, t_out: Sequence[float], rtol: float, atol: float,
                guard: Guard | None = None, stop: Stop | None = None, log: EventLog | None = None,
                h_min: float = 1e-13, max_steps: int = 5_000_000, bound: float = BLOWUP_BOUND) -> SolveResult:
    """Adaptive Dormand-Prince integration from ``t0`` to ``t_end``.

    Steps are shortened to land exactly on every entry of ``t_out``.  ``guard``
    sees ``(t, y_old, y_new)`` and returns a reason string to veto a step (the
    step is then halved).  ``stop`` ends the run early after an accepted step.
    """
    log = EventLog() if log is None else log
    t_out = _check_samples(t0, t_out, t_end)
    y = np.array(y0, dtype=float)
    t = float(t0)
    ts, ys = [], []
    k = 0
    while k < t_out.size and t_out[k] <= t:
        ts.append(float(t_out[k])); ys.append(y.copy()); k += 1
    if _bad(y, bound):
        raise BlowupError("initial state is non-finite or beyond the blowup bound", t, y, list(zip(ts, ys)), log)
    fy = f(t, y)
    h = _initial_step(f, t, y, fy, rtol, atol, t_end - t0)
    steps = 0
    while t < t_end:
        steps += 1
        if steps > max_steps:
            raise BlowupError(f"step budget {max_steps} exhausted", t, y, list(zip(ts, ys)), log)
        target = t_end if k >= t_out.size else min(t_out[k], t_end)
        h_try = min(h, target - t)
        landing = h_try >= target - t
        if landing:
            h_try = target - t
        K = [fy]
        for s in range(1, 7):
            ys_ = y + h_try * sum(a * K[j] for j, a in enumerate(_A[s]) if a != 0.0)
            K.append(f(t + _C[s] * h_try, ys_))
        y_new = ys_  # last stage is the 5th order solution (FSAL)
        err_vec = h_try * sum(e * K[j] for j, e in enumerate(_E) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale, initial=0.0))
        if not math.isfinite(err) or not np.all(np.isfinite(y_new)):
            log.n_rejected += 1
            h = 0.2 * h_try
            if h < h_min:
                log.add(t, "blowup_suspected", h=h)
                raise BlowupError("solution became non-finite", t, y, list(zip(ts, ys)), log)
            continue
        if err > 1.0:
            log.n_rejected += 1
            h = h_try * max(0.2, 0.9 * err ** -0.2)
            if h < h_min:
                raise BlowupError(f"step size fell below {h_min} at t={t}", t, y, list(zip(ts, ys)), log)
            continue
        if guard is not None:
            reason = guard(t, y, y_new)
            if reason is not None:
                log.n_rejected += 1
                log.add(t, "step_rejected", reason=reason, h=h_try)
                h = 0.5 * h_try
                if h < h_min:
                    raise CollisionError(f"collision guard exhausted the minimum step at t={t}: {reason}", time=t)
                continue
        if _bad(y_new, bound):
            log.add(t + h_try, "blowup_suspected", max_abs=float(np.nanmax(np.abs(y_new))))
            raise BlowupError(f"state exceeded {bound:g} or became non-finite after t={t}", t, y,
                              list(zip(ts, ys)), log)
        # accept
        log.n_accepted += 1
        if not landing:
            log.min_step = min(log.min_step, h_try)
        t = target if landing else t + h_try
        y = y_new
        fy = K[6]
        fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        if not landing or fac < 1.0:
            h = h_try * fac
        while k < t_out.size and t_out[k] <= t * (1 + 1e-15) + 1e-300:
            ts.append(float(t_out[k])); ys.append(y.copy()); k += 1
        if stop is not None and stop(t, y):
            return SolveResult(ts, ys, t, y, True)
    return SolveResult(ts, ys, t, y, False)


def rk4_solve(f: Callable[[float, np.ndarray], np.ndarray], t0: float, y0: np.ndarray, t_end: float,
              t_out: Sequence[float], dt: float, guard: Guard | None = None, stop: Stop | None = None,
              log: EventLog | None = None, h_min: float = 1e-13, bound: float = BLOWUP_BOUND) -> SolveResult:
    """Classical RK4 with step ``dt`` (shortened to hit sample times); the guard halves steps."""
    log = EventLog() if log is None else log
    t_out = _check_samples(t0, t_out, t_end)
    y = np.array(y0, dtype=float)
    t = float(t0)
    ts, ys = [], []
    k = 0
    while k < t_out.size and t_out[k] <= t:
        ts.append(float(t_out[k])); ys.append(y.copy()); k += 1
    h = dt
    while t < t_end:
        target = t_end if k >= t_out.size else min(t_out[k], t_end)
        # tolerate round-off so n*dt lands on grid points without a sliver step
        landing = h >= (target - t) * (1 - 1e-9)
        h_try = target - t if landing else h
        k1 = f(t, y)
        k2 = f(t + h_try / 2, y + h_try / 2 * k1)
        k3 = f(t + h_try / 2, y + h_try / 2 * k2)
        k4 = f(t + h_try, y + h_try * k3)
        y_new = y + h_try / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if guard is not None:
            reason = guard(t, y, y_new)
            if reason is not None:
                log.n_rejected += 1
                log.add(t, "step_rejected", reason=reason, h=h_try)
                h = 0.5 * h_try
                if h < h_min:
                    raise CollisionError(f"collision guard exhausted the minimum step at t={t}: {reason}", time=t)
                continue
        if _bad(y_new, bound):
            log.add(t + h_try, "blowup_suspected")
            raise BlowupError(f"state exceeded {bound:g} or became non-finite after t={t}", t, y,
                              list(zip(ts, ys)), log)
        log.n_accepted += 1
        log.min_step = min(log.min_step, h_try)
        t = target if landing else t + h_try
        y = y_new
        h = min(dt, 2.0 * h)
        while k < t_out.size and t_out[k] <= t * (1 + 1e-15) + 1e-300:
            ts.append(float(t_out[k])); ys.append(y.copy()); k += 1
        if stop is not None and stop(t, y):
            return SolveResult(ts, ys, t, y, True)
    return SolveResult(ts, ys, t, y, False)


# --------------------------------------------------------------------------- state packing


class Layout:
    """Packs a multi-flock state into ``[x_0, ..., x_{A-1}, v_0, ..., v_{A-1}]``."""

    def __init__(self, template: MultiFlockState):
        self.template = template
        self.d = template.dim
        sizes = [f.n * self.d for f in template.flocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.half = int(self.offsets[-1])

    def pack(self, xs, vs) -> np.ndarray:
        return np.concatenate([np.ravel(x) for x in xs] + [np.ravel(v) for v in vs])

    def pack_state(self, state: MultiFlockState) -> np.ndarray:
        return self.pack([f.x for f in state.flocks], [f.v for f in state.flocks])

    def unpack(self, y: np.ndarray):
        o, h, d = self.offsets, self.half, self.d
        xs = [y[o[a]:o[a + 1]].reshape(-1, d) for a in range(len(o) - 1)]
        vs = [y[h + o[a]:h + o[a + 1]].reshape(-1, d) for a in range(len(o) - 1)]
        return xs, vs

    def state(self, y: np.ndarray, t: float) -> MultiFlockState:
        xs, vs = self.unpack(np.array(y, dtype=float))
        return self.template.with_arrays(xs, vs, t)


def min_pair_distance(state: MultiFlockState) -> list[tuple[float, tuple[int, int] | None]]:
    """Per flock: exact minimum intra-flock pair distance and its pair (``inf`` for one agent)."""
    out = []
    for f in state.flocks:
        if f.n < 2:
            out.append((math.inf, None))
            continue
        _, r = pair_distances(f.x)
        iu = np.triu_indices(f.n, 1)
        idx = int(np.argmin(r[iu]))
        out.append((float(r[iu][idx]), (int(iu[0][idx]), int(iu[1][idx]))))
    return out


def _make_guard(layout: Layout, theta: float, singular_idx: list[int], log: EventLog) -> Guard:
    iu_cache = {}

    def guard(t, y_old, y_new):
        xo, _ = layout.unpack(y_old)
        xn, _ = layout.unpack(y_new)
        for a in singular_idx:
            n = xo[a].shape[0]
            if n < 2:
                continue
            iu = iu_cache.setdefault(n, np.triu_indices(n, 1))
            ro = pair_distances(xo[a])[1][iu]
            rn = pair_distances(xn[a])[1][iu]
            bad = rn < theta * ro
            if np.any(bad):
                p = int(np.argmax(bad))
                pair = (int(iu[0][p]), int(iu[1][p]))
                log.add(t, "collision_near_miss", flock=a, pair=list(pair),
                        before=float(ro[p]), after=float(rn[p]))
                return f"flock {a} pair {pair} closing faster than theta"
        return None

    return guard


def _prepare(state0: MultiFlockState, params: ModelParams) -> MultiFlockState:
    return superagent_state(state0) if params.mode == "superagent_only" else state0


def _state_rhs(layout: Layout, params: ModelParams):
    template = layout.template

    def f(t, y):
        xs, vs = layout.unpack(y)
        der = rhs_master(template.with_arrays(xs, vs, t), None, params)
        return layout.pack(der.dx, der.dv)

    return f


def integrate(state0: MultiFlockState, params: ModelParams, ispec: IntegratorSpec,
              sample_times: Sequence[float] | None = None) -> tuple[list[MultiFlockState], EventLog]:
    """Integrate ``state0`` and return the states at ``sample_times`` plus the event log.

    ``superagent_only`` integrates the one-agent-per-flock reduction of
    ``state0``.  Singular intra-flock kernels always switch the guard on.
    """
    state0 = _prepare(state0, params)
    t0 = float(state0.t)
    t_end = ispec.t_end
    if not t_end > t0:
        raise ValueError("t_end must exceed the initial time")
    sample_times = [t0, t_end] if sample_times is None else list(sample_times)
    layout = Layout(state0)
    log = EventLog()
    f = _state_rhs(layout, params)
    singular = [a for a, fl in enumerate(state0.flocks) if fl.kernel.is_singular]
    guard = _make_guard(layout, ispec.theta, singular, log) if (singular or ispec.collision_guard) else None
    y0 = layout.pack_state(state0)
    try:
        if ispec.method == "rk4_fixed":
            res = rk4_solve(f, t0, y0, t_end, sample_times, ispec.dt, guard=guard, log=log, h_min=ispec.h_min)
        else:
            res = dopri_solve(f, t0, y0, t_end, sample_times, ispec.rtol, ispec.atol, guard=guard, log=log,
                              h_min=ispec.h_min, max_steps=ispec.max_steps)
    except BlowupError as exc:
        exc.trajectory = [layout.state(y, t) for t, y in exc.trajectory]
        exc.last_state = layout.state(exc.last_state, exc.last_time)
        raise
    return [layout.state(y, t) for t, y in zip(res.ts, res.ys)], log


def reference_integrate(state0: MultiFlockState, params: ModelParams, dt_ref: float, t_end: float,
                        sample_times: Sequence[float] | None = None) -> list[MultiFlockState]:
    """Plain fixed-step RK4 oracle; deliberately shares nothing with the solvers above but the RHS."""
    if not dt_ref > 0:
        raise ValueError("dt_ref must be positive")
    state = _prepare(state0, params)
    sample_times = [state.t, t_end] if sample_times is None else sorted(sample_times)

    def acc(s: MultiFlockState):
        der = rhs_master(s, None, params)
        return list(der.dx), list(der.dv)

    def axpy(s, h, kx, kv):
        return s.with_arrays([f.x + h * a for f, a in zip(s.flocks, kx)],
                             [f.v + h * b for f, b in zip(s.flocks, kv)], s.t + h)

    out = []
    t = float(state.t)
    for ts in sample_times:
        n = int(math.ceil((ts - t) / dt_ref - 1e-9)) if ts > t else 0
        h = (ts - t) / n if n else 0.0
        for _ in range(n):
            x1, v1 = acc(state)
            s2 = axpy(state, h / 2, x1, v1); x2, v2 = acc(s2)
            s3 = axpy(state, h / 2, x2, v2); x3, v3 = acc(s3)
            s4 = axpy(state, h, x3, v3); x4, v4 = acc(s4)
            state = state.with_arrays(
                [f.x + h / 6 * (a + 2 * b + 2 * c + e) for f, a, b, c, e in zip(state.flocks, x1, x2, x3, x4)],
                [f.v + h / 6 * (a + 2 * b + 2 * c + e) for f, a, b, c, e in zip(state.flocks, v1, v2, v3, v4)],
                t + h)
            t += h
        t = float(ts)
        state = state.with_arrays([f.x for f in state.flocks], [f.v for f in state.flocks], t)
        out.append(state)
    return out

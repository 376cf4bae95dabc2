"""Multi-flock phase state, macroscopic observables and the shifted frame.

Positions and velocities of a flock are stored as ``(N, d)`` float arrays and
masses as an ``(N,)`` array.  States are treated as immutable snapshots;
``replace``/``with_arrays`` produce new ones.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .kernels import KernelSpec, PotentialSpec


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


@dataclass(frozen=True)
class Flock:
    x: np.ndarray
    v: np.ndarray
    m: np.ndarray
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("constant", c0=1.0))
    lam: float = 1.0
    potential: PotentialSpec | None = None

    def __post_init__(self):
        # 1D input is read as N agents on a line; content checks live in validate()
        object.__setattr__(self, "x", _as_points(self.x))
        object.__setattr__(self, "v", _as_points(self.v))
        object.__setattr__(self, "m", np.atleast_1d(np.asarray(self.m, dtype=float)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def mass(self) -> float:
        return float(self.m.sum())

    def with_arrays(self, x, v, m=None) -> "Flock":
        return replace(self, x=x, v=v, m=self.m if m is None else m)


@dataclass(frozen=True)
class MultiFlockState:
    flocks: tuple[Flock, ...]
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "flocks", tuple(self.flocks))

    @property
    def dim(self) -> int:
        return self.flocks[0].x.shape[1]

    @property
    def n_flocks(self) -> int:
        return len(self.flocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(f.n for f in self.flocks)

    def with_arrays(self, xs: Sequence[np.ndarray], vs: Sequence[np.ndarray], t: float) -> "MultiFlockState":
        return MultiFlockState(tuple(f.with_arrays(x, v) for f, x, v in zip(self.flocks, xs, vs)), t)

    def total_momentum(self) -> np.ndarray:
        return sum(f.m @ f.v for f in self.flocks)


@dataclass(frozen=True)
class MacroObservables:
    masses: np.ndarray      # (A,)
    centers: np.ndarray     # (A, d)
    momenta: np.ndarray     # (A, d) mean velocities V_alpha

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def velocity(self) -> np.ndarray:
        """Global center of momentum V."""
        return self.masses @ self.momenta / self.total_mass

    @property
    def center(self) -> np.ndarray:
        return self.masses @ self.centers / self.total_mass


@dataclass(frozen=True)
class ShiftedState:
    y: tuple[np.ndarray, ...]
    w: tuple[np.ndarray, ...]


def macro_observables(state: MultiFlockState) -> MacroObservables:
    masses = np.array([f.m.sum() for f in state.flocks])
    centers = np.array([f.m @ f.x for f in state.flocks]) / masses[:, None]
    momenta = np.array([f.m @ f.v for f in state.flocks]) / masses[:, None]
    return MacroObservables(masses, centers, momenta)


def to_shifted_frame(state: MultiFlockState, macro: MacroObservables | None = None) -> ShiftedState:
    macro = macro_observables(state) if macro is None else macro
    y = tuple(f.x - macro.centers[a] for a, f in enumerate(state.flocks))
    w = tuple(f.v - macro.momenta[a] for a, f in enumerate(state.flocks))
    return ShiftedState(y, w)


def from_shifted_frame(template: MultiFlockState, shifted: ShiftedState,
                       macro: MacroObservables) -> MultiFlockState:
    xs = [y + macro.centers[a] for a, y in enumerate(shifted.y)]
    vs = [w + macro.momenta[a] for a, w in enumerate(shifted.w)]
    return template.with_arrays(xs, vs, template.t)


def validate(state: MultiFlockState) -> list[str]:
    """List every violated invariant; empty when the state is well formed."""
    problems: list[str] = []
    if not state.flocks:
        return ["state: no flocks (cardinality)"]
    d = state.flocks[0].x.shape[1]
    for a, f in enumerate(state.flocks):
        n = f.x.shape[0]
        if f.x.ndim != 2 or f.v.ndim != 2 or f.m.ndim != 1:
            problems.append(f"flock {a}: array shapes malformed (layout)")
            continue
        if n < 1:
            problems.append(f"flock {a}: needs at least one agent (cardinality)")
        if f.v.shape[0] != n or f.m.shape[0] != n:
            problems.append(f"flock {a}: positions/velocities/masses lengths {n}, {f.v.shape[0]}, "
                            f"{f.m.shape[0]} differ (cardinality)")
        if f.x.shape[1] != d or f.v.shape[1] != d:
            problems.append(f"flock {a}: dimension differs from {d} (dimension)")
        for i in np.flatnonzero(~(f.m > 0)):
            problems.append(f"flock {a}, agent {int(i)}: mass {f.m[i]!r} not strictly positive (positivity)")
        for i in np.flatnonzero(~np.isfinite(f.m)):
            problems.append(f"flock {a}, agent {int(i)}: mass not finite (finiteness)")
        if f.x.shape == f.v.shape and not (np.all(np.isfinite(f.x)) and np.all(np.isfinite(f.v))):
            problems.append(f"flock {a}: non-finite position or velocity (finiteness)")
        if not f.lam > 0:
            problems.append(f"flock {a}: amplitude lambda must be positive (amplitude)")
    return problems


def superagent_state(state: MultiFlockState, which: Iterable[int] | None = None) -> MultiFlockState:
    """Replace the selected flocks (default: all) by single agents at (X, V) with mass M."""
    macro = macro_observables(state)
    chosen = set(range(state.n_flocks)) if which is None else set(which)
    flocks = []
    for a, f in enumerate(state.flocks):
        if a in chosen and f.n > 1:
            f = f.with_arrays(macro.centers[a][None, :].copy(), macro.momenta[a][None, :].copy(),
                              np.array([macro.masses[a]]))
        flocks.append(f)
    return MultiFlockState(tuple(flocks), state.t)


# --------------------------------------------------------------------------- snapshots

def snapshot_header(d: int) -> list[str]:
    return ["flock_id", "agent_id", "mass"] + [f"x{k}" for k in range(d)] + [f"v{k}" for k in range(d)]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_snapshot(state: MultiFlockState, fh) -> None:
    """Write one CSV record per agent in the fixed snapshot column order."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(snapshot_header(state.dim))
    for a, f in enumerate(state.flocks):
        for i in range(f.n):
            w.writerow([a, i, _fmt(f.m[i])] + [_fmt(c) for c in f.x[i]] + [_fmt(c) for c in f.v[i]])


def snapshot_to_string(state: MultiFlockState) -> str:
    buf = io.StringIO()
    write_snapshot(state, buf)
    return buf.getvalue()


def read_snapshot(fh, template: MultiFlockState, t: float = 0.0) -> MultiFlockState:
    """Parse a snapshot CSV; kernels, amplitudes and potentials come from ``template``."""
    rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = (len(header) - 3) // 2
    if header != snapshot_header(d):
        raise ValueError(f"unexpected snapshot header {header}")
    groups: dict[int, list[list[str]]] = {}
    for row in body:
        groups.setdefault(int(row[0]), []).append(row)
    flocks = []
    for a, f in enumerate(template.flocks):
        rs = sorted(groups.get(a, []), key=lambda r: int(r[1]))
        arr = np.array([[float(c) for c in r[2:]] for r in rs])
        flocks.append(f.with_arrays(arr[:, 1:1 + d], arr[:, 1 + d:], arr[:, 0]))
    return MultiFlockState(tuple(flocks), t)

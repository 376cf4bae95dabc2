"""Right-hand sides of the multi-flock systems.

All pairwise sums are formed as ``sum_j m_j phi_ij (v_j - v_i)`` over explicit
``(N, N, d)`` difference tensors and reduced along a fixed axis, so an
evaluation is bit-reproducible and exactly zero on aligned states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CollisionError, PreconditionError
from .kernels import KernelSpec, evaluate_kernel, potential_force_factor
from .state import Flock, MacroObservables, MultiFlockState, ShiftedState, macro_observables

MODES = ("alignment_only", "alignment_attraction", "superagent_only", "resolved")


@dataclass(frozen=True)
class ModelParams:
    """Inter-flock coupling and model variant.

    ``resolved`` keeps the inter-flock coupling at agent resolution
    (``eps * sum_k m_k psi(|x_i - x_k|) (v_k - v_i)`` over foreign agents); it is
    the microscopic reference that the macroscopic coupling approximates.
    """

    eps: float = 0.0
    psi: KernelSpec = field(default_factory=lambda: KernelSpec("constant", c0=1.0))
    mode: str = "alignment_only"
    allow_heterogeneous_attraction: bool = False

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.psi.is_singular:
            raise ValueError("inter-flock kernel psi must be bounded (power_singular rejected)")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class Derivative:
    dx: tuple[np.ndarray, ...]
    dv: tuple[np.ndarray, ...]
    dX: np.ndarray
    dV: np.ndarray


def pair_distances(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(diff, r)`` with ``diff[i, j] = x_i - x_j`` and ``r = |diff|``."""
    diff = x[:, None, :] - x[None, :, :]
    return diff, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_matrix(kernel: KernelSpec, r: np.ndarray, flock: int | None = None) -> np.ndarray:
    """Kernel on all pairs with the self-interaction diagonal set to zero."""
    n = r.shape[0]
    if kernel.is_singular:
        off = ~np.eye(n, dtype=bool)
        hit = (r == 0) & off
        if np.any(hit):
            i, j = (int(k) for k in np.argwhere(hit)[0])
            raise CollisionError(f"agents {i} and {j} of flock {flock} collided under a singular kernel",
                                 flock=flock, pair=(i, j))
        W = evaluate_kernel(kernel, np.where(off, r, 1.0))
    else:
        W = evaluate_kernel(kernel, r)
    np.fill_diagonal(W, 0.0)
    return W


def alignment_term(flock: Flock, flock_index: int | None = None, r: np.ndarray | None = None) -> np.ndarray:
    """``lam * sum_j m_j phi(|x_i - x_j|) (v_j - v_i)`` for every agent."""
    if flock.n == 1:
        return np.zeros_like(flock.v)
    if r is None:
        _, r = pair_distances(flock.x)
    W = kernel_matrix(flock.kernel, r, flock_index) * flock.m[None, :]
    dvel = flock.v[None, :, :] - flock.v[:, None, :]
    return flock.lam * (W[:, :, None] * dvel).sum(axis=1)


def _check_unit_mass(flock: Flock, index: int) -> None:
    if not np.allclose(flock.m, 1.0 / flock.n, rtol=1e-12, atol=0.0):
        raise PreconditionError(
            f"flock {index}: attraction mode needs masses 1/N (set allow_heterogeneous_attraction to override)")


def attraction_force(flock: Flock, diff: np.ndarray | None = None, r: np.ndarray | None = None) -> np.ndarray:
    """``F_i = -sum_j m_j U'(r_ij) (x_i - x_j) / r_ij``; equals the 1/N form under unit masses."""
    if flock.potential is None:
        raise PreconditionError("flock has no potential")
    if flock.n == 1:
        return np.zeros_like(flock.x)
    if diff is None or r is None:
        diff, r = pair_distances(flock.x)
    coef = potential_force_factor(flock.potential, r) * flock.m[None, :]
    np.fill_diagonal(coef, 0.0)
    return -(coef[:, :, None] * diff).sum(axis=1)


def coupling_weights(macro: MacroObservables, psi: KernelSpec) -> np.ndarray:
    """``C[a, b] = M_b psi(|X_a - X_b|)`` with a zero diagonal."""
    diff = macro.centers[:, None, :] - macro.centers[None, :, :]
    R = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    C = evaluate_kernel(psi, R) * macro.masses[None, :]
    np.fill_diagonal(C, 0.0)
    return C


def damping_rates(macro: MacroObservables, psi: KernelSpec) -> np.ndarray:
    """``R_a = sum_{b != a} M_b psi(|X_a - X_b|)``; zero for a single flock."""
    return coupling_weights(macro, psi).sum(axis=1)


def _intra(flock: Flock, a: int, params: ModelParams) -> np.ndarray:
    need_geom = params.mode == "alignment_attraction"
    if need_geom:
        diff, r = pair_distances(flock.x)
        acc = alignment_term(flock, a, r)
        if flock.potential is not None:
            if not params.allow_heterogeneous_attraction:
                _check_unit_mass(flock, a)
            acc = acc + attraction_force(flock, diff, r)
        return acc
    return alignment_term(flock, a)


def rhs_master(state: MultiFlockState, macro: MacroObservables | None = None,
               params: ModelParams = ModelParams()) -> Derivative:
    """Right-hand side of the master equation (with attraction in that mode)."""
    if params.mode == "resolved":
        return rhs_resolved(state, params)
    macro = macro_observables(state) if macro is None else macro
    C = params.eps * coupling_weights(macro, params.psi) if state.n_flocks > 1 else None
    dv = []
    for a, f in enumerate(state.flocks):
        acc = _intra(f, a, params)
        if C is not None and params.eps > 0:
            for b in range(state.n_flocks):
                if b != a and C[a, b] != 0.0:
                    acc = acc + C[a, b] * (macro.momenta[b][None, :] - f.v)
        dv.append(acc)
    dV = np.array([f.m @ acc for f, acc in zip(state.flocks, dv)]) / macro.masses[:, None]
    return Derivative(tuple(f.v for f in state.flocks), tuple(dv), macro.momenta.copy(), dV)


def rhs_resolved(state: MultiFlockState, params: ModelParams) -> Derivative:
    """Master equation with the inter-flock term summed agent by agent."""
    macro = macro_observables(state)
    dv = []
    for a, f in enumerate(state.flocks):
        acc = _intra(f, a, params)
        if params.eps > 0:
            for b, g in enumerate(state.flocks):
                if b == a:
                    continue
                diff = f.x[:, None, :] - g.x[None, :, :]
                r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
                W = evaluate_kernel(params.psi, r) * g.m[None, :]
                acc = acc + params.eps * (W[:, :, None] * (g.v[None, :, :] - f.v[:, None, :])).sum(axis=1)
        dv.append(acc)
    dV = np.array([f.m @ acc for f, acc in zip(state.flocks, dv)]) / macro.masses[:, None]
    return Derivative(tuple(f.v for f in state.flocks), tuple(dv), macro.momenta.copy(), dV)


def rhs_superagent(macro: MacroObservables, params: ModelParams) -> Derivative:
    """Flock-level system ``dX = V``, ``dV_a = eps sum_b M_b psi_ab (V_b - V_a)``."""
    if macro.masses.size == 1:
        return Derivative((), (), macro.momenta.copy(), np.zeros_like(macro.momenta))
    C = params.eps * coupling_weights(macro, params.psi)
    dvel = macro.momenta[None, :, :] - macro.momenta[:, None, :]
    dV = (C[:, :, None] * dvel).sum(axis=1)
    return Derivative((), (), macro.momenta.copy(), dV)


def rhs_shifted(shifted: ShiftedState, macro: MacroObservables, params: ModelParams,
                state: MultiFlockState) -> Derivative:
    """Shifted-frame system ``dw_i = lam sum_j m_j phi_ij (w_j - w_i) - eps R w_i (+ F_i)``.

    ``state`` supplies masses, kernels and amplitudes; kernels only see
    differences, so they are evaluated on ``y`` directly.
    """
    R = damping_rates(macro, params.psi) if macro.masses.size > 1 else np.zeros(macro.masses.size)
    dw = []
    for a, (f, y, w) in enumerate(zip(state.flocks, shifted.y, shifted.w)):
        g = f.with_arrays(y, w)
        acc = _intra(g, a, params)
        if params.eps > 0 and R[a] != 0.0:
            acc = acc - params.eps * R[a] * w
        dw.append(acc)
    return Derivative(tuple(shifted.w), tuple(dw), np.zeros_like(macro.centers), np.zeros_like(macro.momenta))


def derivative_to_arrays(der: Derivative) -> tuple[list[np.ndarray], list[np.ndarray]]:
    return list(der.dx), list(der.dv)

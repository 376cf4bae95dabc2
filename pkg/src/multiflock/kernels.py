"""Communication kernels and attraction potentials.

Kernels are radial, non-increasing weights ``phi(r) >= 0``.  Four families
are built in:

``constant``        ``phi(r) = c0``
``cucker_smale``    ``phi(r) = c0 * <r>**(-exponent)`` with ``<r> = sqrt(1 + r**2)``
``power_singular``  ``phi(r) = c0 * r**(-(1 + s))``, ``0 <= s < 2``
``tabulated``       piecewise-linear table, continued past its last node by a
                    Cucker-Smale type tail with the spec's ``exponent``

The potential family is the shifted power ``U(r) = a0 * ((r - L)_+)**beta``.
Everything here is a pure function of frozen specs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate as _quad
from scipy import special

from .errors import KernelDomainError, NumericalError, UnsupportedKernelError

FAMILIES = ("constant", "cucker_smale", "power_singular", "tabulated")

FAT_TAIL = "fat_tail"
THIN_TAIL = "thin_tail"
FAT_HEAD = "fat_head"
INTEGRABLE_HEAD = "integrable_head"

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    family: str = "cucker_smale"
    c0: float = 1.0
    exponent: float = 0.0
    cutoff: float | None = None
    table_r: tuple[float, ...] = field(default=())
    table_phi: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "constant":
            # c0 = 0 is the "no communication" kernel
            if self.c0 < 0:
                raise ValueError("constant kernel needs c0 >= 0")
        elif not self.c0 > 0:
            raise ValueError("kernel amplitude c0 must be positive")
        if self.exponent < 0:
            raise ValueError("kernel exponent must be nonnegative")
        if self.family == "power_singular" and not (0 <= self.exponent < 2):
            raise ValueError("power_singular needs 0 <= s < 2")
        if self.cutoff is not None and not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if self.family == "tabulated":
            r = np.asarray(self.table_r, dtype=float)
            p = np.asarray(self.table_phi, dtype=float)
            if r.size < 2 or r.size != p.size:
                raise ValueError("tabulated kernel needs matching tables of length >= 2")
            if r[0] != 0.0 or np.any(np.diff(r) <= 0):
                raise ValueError("table_r must start at 0 and be strictly increasing")
            if np.any(p < 0) or np.any(np.diff(p) > 0):
                raise ValueError("table_phi must be nonnegative and non-increasing")

    @property
    def s(self) -> float:
        """Singularity order of the power_singular family."""
        return self.exponent

    @property
    def is_singular(self) -> bool:
        return self.family == "power_singular"

    @property
    def sup(self) -> float:
        """sup_r phi(r); infinite for singular kernels."""
        if self.is_singular:
            return math.inf
        return float(evaluate_kernel(self, 0.0))

    def __call__(self, r):
        return evaluate_kernel(self, r)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"family": self.family, "c0": float(self.c0)}
        if self.family == "power_singular":
            out["s"] = float(self.exponent)
        elif self.family != "constant":
            out["exponent"] = float(self.exponent)
        if self.cutoff is not None:
            out["cutoff"] = float(self.cutoff)
        if self.family == "tabulated":
            out["table_r"] = [float(x) for x in self.table_r]
            out["table_phi"] = [float(x) for x in self.table_phi]
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "KernelSpec":
        family = d.get("family", "cucker_smale")
        exponent = d.get("s", d.get("exponent", 0.0)) if family == "power_singular" else d.get("exponent", 0.0)
        return cls(
            family=family,
            c0=float(d.get("c0", 1.0)),
            exponent=float(exponent),
            cutoff=None if d.get("cutoff") is None else float(d["cutoff"]),
            table_r=tuple(float(x) for x in d.get("table_r", ())),
            table_phi=tuple(float(x) for x in d.get("table_phi", ())),
        )


def constant(c0: float = 1.0) -> KernelSpec:
    return KernelSpec("constant", c0=c0)


def cucker_smale(exponent: float, c0: float = 1.0) -> KernelSpec:
    return KernelSpec("cucker_smale", c0=c0, exponent=exponent)


def power_singular(s: float, c0: float = 1.0) -> KernelSpec:
    return KernelSpec("power_singular", c0=c0, exponent=s)


def _bracket(r):
    return np.sqrt(1.0 + r * r)


def evaluate_kernel(spec: KernelSpec, r):
    """Evaluate ``phi(r)``; accepts scalars or arrays of nonnegative radii."""
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise KernelDomainError("kernel evaluated at negative radius")
    fam = spec.family
    if fam == "constant":
        out = np.full_like(r, spec.c0)
    elif fam == "cucker_smale":
        out = spec.c0 * (1.0 + r * r) ** (-0.5 * spec.exponent)
    elif fam == "power_singular":
        if np.any(r == 0):
            raise KernelDomainError("singular kernel evaluated at r = 0 (collision)")
        out = spec.c0 * r ** (-(1.0 + spec.exponent))
    else:
        tr = np.asarray(spec.table_r)
        tp = np.asarray(spec.table_phi)
        out = np.atleast_1d(spec.c0 * np.interp(r, tr, tp))
        r = np.atleast_1d(r)
        beyond = r > tr[-1]
        if np.any(beyond):
            tail = tp[-1] * (_bracket(r[beyond]) / _bracket(tr[-1])) ** (-spec.exponent)
            out[beyond] = spec.c0 * tail
    return float(out.reshape(-1)[0]) if scalar else out


def classify_tail(spec: KernelSpec) -> str:
    fam = spec.family
    if fam == "tabulated":
        raise UnsupportedKernelError("tail class of a tabulated kernel cannot be decided analytically")
    if fam == "constant":
        return FAT_TAIL if spec.c0 > 0 else THIN_TAIL
    if fam == "cucker_smale":
        return FAT_TAIL if spec.exponent <= 1 else THIN_TAIL
    return FAT_TAIL if spec.exponent == 0 else THIN_TAIL


def classify_head(spec: KernelSpec) -> str:
    return FAT_HEAD if spec.family == "power_singular" else INTEGRABLE_HEAD


def _cs_unit_integral(g: float, a: float, b: float) -> float:
    """int_a^b <r>^(-g) dr for 0 <= a < b <= inf."""
    if g == 0:
        return b - a
    if g == 1:
        return math.inf if math.isinf(b) else math.asinh(b) - math.asinh(a)
    if g == 2:
        return (math.pi / 2 if math.isinf(b) else math.atan(b)) - math.atan(a)
    if g > 1:
        # r = tan(theta) turns this into an incomplete beta with u = r^2 / (1 + r^2)
        p, q = 0.5, 0.5 * (g - 1.0)
        full = 0.5 * special.beta(p, q)

        def upper(x):  # int_x^inf
            if math.isinf(x):
                return 0.0
            return full * special.betaincc(p, q, x * x / (1.0 + x * x))

        return upper(a) - upper(b)
    if math.isinf(b):
        return math.inf

    def prim(x):
        return x * special.hyp2f1(0.5, 0.5 * g, 1.5, -x * x)

    return float(prim(b) - prim(a))


def tail_integral(spec: KernelSpec, a: float, b: float) -> float:
    """Return ``int_a^b phi(r) dr`` (``math.inf`` when it diverges)."""
    if not (0 <= a < b):
        raise ValueError("tail_integral needs 0 <= a < b")
    fam = spec.family
    c0 = spec.c0
    if fam == "constant":
        if c0 == 0:
            return 0.0
        return math.inf if math.isinf(b) else c0 * (b - a)
    if fam == "cucker_smale":
        return c0 * _cs_unit_integral(spec.exponent, a, b)
    if fam == "power_singular":
        s = spec.exponent
        if a == 0:
            return math.inf
        if s == 0:
            return math.inf if math.isinf(b) else c0 * math.log(b / a)
        return c0 * (a ** -s - (0.0 if math.isinf(b) else b ** -s)) / s
    return _tabulated_integral(spec, a, b)


def _tabulated_integral(spec: KernelSpec, a: float, b: float) -> float:
    r_last = spec.table_r[-1]
    total = 0.0
    lo, hi = a, min(b, r_last)
    if lo < hi:
        val, err, *rest = _quad.quad(lambda r: evaluate_kernel(spec, r), lo, hi,
                                     epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200,
                                     points=[p for p in spec.table_r if lo < p < hi][:100] or None,
                                     full_output=1)
        if len(rest) > 1 or err > max(QUAD_EPSABS, QUAD_EPSREL * abs(val)) * 10:
            raise NumericalError("quadrature of tabulated kernel did not converge", err)
        total += val
    if b > r_last:
        lo = max(a, r_last)
        scale = spec.c0 * spec.table_phi[-1] * _bracket(r_last) ** spec.exponent
        if scale == 0:
            return total
        total += scale * _cs_unit_integral(spec.exponent, lo, b)
    return total


# --------------------------------------------------------------------------- potentials


@dataclass(frozen=True)
class PotentialSpec:
    """``U(r) = a0 * ((r - L)_+)**beta`` with far-field radius ``Lprime``."""

    L: float = 1.0
    Lprime: float = 1.5
    beta: float = 3.0
    a0: float = 1.0
    family: str = "shifted_power"

    def __post_init__(self):
        if self.family != "shifted_power":
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.L < 0 or not self.Lprime > self.L:
            raise ValueError("potential needs 0 <= L < Lprime")
        if self.beta < 1:
            raise ValueError("potential growth exponent beta must be >= 1")
        if not self.a0 > 0:
            raise ValueError("a0 must be positive")

    @property
    def a1(self) -> float:
        return self.a0 * self.beta

    @property
    def a2(self) -> float:
        return self.a0 * self.beta * (self.beta - 1.0)

    @property
    def growth_lower(self) -> float:
        """Constant g with U(r) >= g * r**beta for r > Lprime."""
        return self.a0 * (1.0 - self.L / self.Lprime) ** self.beta

    @property
    def is_c2(self) -> bool:
        return self.beta > 2 or (self.beta == 2 and self.L == 0)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "L": float(self.L), "Lprime": float(self.Lprime),
                "beta": float(self.beta), "a0": float(self.a0)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PotentialSpec":
        return cls(L=float(d.get("L", 1.0)), Lprime=float(d.get("Lprime", 1.5)),
                   beta=float(d.get("beta", 3.0)), a0=float(d.get("a0", 1.0)),
                   family=d.get("family", "shifted_power"))


def quadratic(a0: float = 1.0, Lprime: float = 1.0) -> PotentialSpec:
    """Globally supported quadratic-touch potential ``a0 * r**2``."""
    return PotentialSpec(L=0.0, Lprime=Lprime, beta=2.0, a0=a0)


def evaluate_potential(spec: PotentialSpec, r):
    """Return ``(U, U', U'')`` at ``r``; all three vanish on ``[0, L]``."""
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    z = r - spec.L
    active = z > 0
    zp = np.where(active, z, 1.0)
    b = spec.beta
    U = np.where(active, spec.a0 * zp ** b, 0.0)
    dU = np.where(active, spec.a0 * b * zp ** (b - 1.0), 0.0)
    if b == 1:
        d2U = np.zeros_like(r)
    else:
        d2U = np.where(active, spec.a0 * b * (b - 1.0) * zp ** (b - 2.0), 0.0)
    if scalar:
        return float(U), float(dU), float(d2U)
    return U, dU, d2U


def potential_value(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    z = np.maximum(r - spec.L, 0.0)
    return spec.a0 * z ** spec.beta


def potential_force_factor(spec: PotentialSpec, r):
    """``U'(r) / r`` with the value 0 wherever ``r == 0`` (no direction)."""
    r = np.asarray(r, dtype=float)
    active = (r > spec.L) & (r > 0)
    z = np.where(active, r - spec.L, 1.0)
    safe = np.where(active, r, 1.0)
    return np.where(active, spec.a0 * spec.beta * z ** (spec.beta - 1.0) / safe, 0.0)


def admissible_kernel_exponent(beta: float) -> float:
    """Strict upper bound on the kernel decay exponent under attraction forcing."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if beta < 4.0 / 3.0:
        return 1.0
    if beta < 2.0:
        return 1.5 * beta - 1.0
    return 2.0


def diameter_growth_exponent(beta: float) -> float:
    """A priori growth exponent d in D(t) <~ <t>**d for the attraction model."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if beta < 4.0 / 3.0:
        return 1.0
    if beta < 2.0:
        return 2.0 / (3.0 * beta - 2.0)
    return 0.5

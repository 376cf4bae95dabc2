"""Hypothesis strategies for random multi-flock states."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from multiflock.kernels import KernelSpec, PotentialSpec
from multiflock.state import Flock, MultiFlockState

_finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def kernels(draw, singular: bool = False):
    fams = ["constant", "cucker_smale"] + (["power_singular"] if singular else [])
    fam = draw(st.sampled_from(fams))
    if fam == "constant":
        return KernelSpec("constant", c0=draw(st.floats(0.1, 2.0)))
    if fam == "cucker_smale":
        return KernelSpec("cucker_smale", c0=draw(st.floats(0.1, 2.0)), exponent=draw(st.floats(0.0, 3.0)))
    return KernelSpec("power_singular", c0=draw(st.floats(0.1, 2.0)), exponent=draw(st.floats(0.0, 1.5)))


@st.composite
def flocks(draw, d: int, unit_mass: bool = False, potential: bool = False, singular: bool = False):
    n = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    spread = draw(st.floats(0.1, 5.0))
    x = draw(st.floats(-10, 10, **_finite)) + spread * rng.standard_normal((n, d))
    v = draw(st.floats(-3, 3, **_finite)) + rng.standard_normal((n, d))
    m = np.full(n, 1.0 / n) if unit_mass else rng.uniform(0.1, 2.0, n)
    pot = None
    if potential:
        L = draw(st.floats(0.0, 1.0))
        pot = PotentialSpec(L=L, Lprime=L + 0.5, beta=draw(st.sampled_from([2.0, 3.0])) if L == 0 else 3.0,
                            a0=draw(st.floats(0.1, 1.0)))
    return Flock(x=x, v=v, m=m, kernel=draw(kernels(singular)), lam=draw(st.floats(0.1, 2.0)), potential=pot)


@st.composite
def multiflock_states(draw, max_flocks: int = 4, unit_mass: bool = False, potential: bool = False,
                      singular: bool = False):
    d = draw(st.integers(1, 3))
    A = draw(st.integers(1, max_flocks))
    fl = [draw(flocks(d, unit_mass, potential, singular)) for _ in range(A)]
    return MultiFlockState(fl, 0.0)

from __future__ import annotations

import io
import math

import numpy as np
import pytest

from multiflock.dynamics import ModelParams
from multiflock.errors import DomainError, OrderingError, PreconditionError
from multiflock.hydro1d import (BAND, BLOWUP, GLOBAL, HydroFlock1D, HydroState, detect_blowup, differenced_gradient,
                                hydro_rhs, init_from_profiles, macro_residual, profile_convergence,
                                reconstruct_density, riccati_blowup_bound, run_hydro, spacing_density, step_hydro,
                                threshold_verdict, transport_consistency, write_hydro_snapshot)
from multiflock.kernels import constant, cucker_smale, power_singular
from multiflock.scenario import build_hydro_state, preset

CS1 = cucker_smale(1.0)


def uniform01(x):
    return np.where((x >= 0) & (x <= 1), 1.0, 0.0)


def bump(x):
    return np.where(np.abs(x) < 1, 0.75 * (1 - x ** 2), 0.0)


def riccati(e0, a, b, t):
    # [DERIVED] e' = (e - a)(b - e) with constant a, b: u = (e - a)/(b - e) grows like exp((b - a) t)
    u = (e0 - a) / (b - e0) * np.exp((b - a) * t)
    return (a + b * u) / (1 + u)


def riccati_rho(rho0, e0, a, b, t):
    k = b - a
    u0 = (e0 - a) / (b - e0)
    return rho0 * np.exp(k * t) * (1 + u0) / (1 + u0 * np.exp(k * t))


def point_pair(e0, eps=0.4, lam=1.5, m=(0.7, 1.3), gap=2.0):
    """Two single-particle flocks moving together: every coefficient of the e-equation is frozen."""
    fl = tuple(HydroFlock1D(x=[x], v=[0.3], e=[e0], rho=[1.0], m=[mi], kernel=CS1, lam=lam)
               for x, mi in zip((0.0, gap), m))
    p = ModelParams(eps=eps, psi=cucker_smale(0.5))
    a = -eps * m[1] * (1 + gap ** 2) ** -0.25
    b = lam * m[0]
    return HydroState(fl), p, a, b


class TestInit:
    def test_quantiles(self):
        grid = np.linspace(-0.5, 1.5, 20001)
        f = init_from_profiles(uniform01, lambda x: 0 * x, 4, grid, CS1)
        np.testing.assert_allclose(f.x, [0.125, 0.375, 0.625, 0.875], atol=1e-4)
        # the trapezoid picks up half a grid cell at each jump
        np.testing.assert_allclose(f.m, 0.25, rtol=1e-3)
        assert np.all(f.m == f.m[0])

    def test_constant_velocity(self):
        grid = np.linspace(-1.5, 1.5, 3001)
        f = init_from_profiles(bump, lambda x: 0 * x + 0.7, 32, grid, CS1)
        np.testing.assert_allclose(f.v, 0.7, rtol=1e-15)
        assert np.all(f.e > 0)

    def test_constant_kernel(self):
        grid = np.linspace(-0.5, 1.5, 40001)
        f = init_from_profiles(uniform01, lambda x: 2 * x, 16, grid, constant(1.0), lam=1.0)
        # trapezoid on a grid that straddles the jumps: error of order the grid spacing
        np.testing.assert_allclose(f.e, 3.0, atol=1e-4)

    def test_zero_mass(self):
        with pytest.raises(DomainError):
            init_from_profiles(lambda x: 0 * x, lambda x: x, 4, np.linspace(0, 1, 11), CS1)

    def test_singular_kernel_refused(self):
        with pytest.raises(PreconditionError):
            HydroFlock1D(x=[0, 1], v=[0, 0], e=[0, 0], rho=[1, 1], m=[1, 1], kernel=power_singular(0.5))


class TestStep:
    def test_riccati_closed_form(self):
        st, p, a, b = point_pair(0.2)
        run = run_hydro(st, p, 3.0, [0.0, 1.0, 3.0], rtol=1e-11, atol=1e-13)
        for s in run.states:
            assert s.flocks[0].e[0] == pytest.approx(riccati(0.2, a, b, s.t), rel=1e-8)
            assert s.flocks[0].rho[0] == pytest.approx(riccati_rho(1.0, 0.2, a, b, s.t), rel=1e-8)

    def test_rk4_local_error_order(self):
        st, p, a, b = point_pair(0.2)
        errs = [abs(step_hydro(st, p, h).flocks[0].e[0] - riccati(0.2, a, b, h)) for h in (0.2, 0.1)]
        # local error of a fourth-order step scales as h^5
        assert 24 <= errs[0] / errs[1] <= 40

    def test_rigid_translation(self):
        x = np.linspace(0, 1, 9)
        f = HydroFlock1D(x=x, v=np.full(9, 0.5), e=np.full(9, 0.3), rho=np.ones(9), m=np.full(9, 1 / 9), kernel=CS1)
        out = step_hydro(HydroState((f,)), ModelParams(), 0.1).flocks[0]
        np.testing.assert_allclose(out.x, x + 0.05, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(out.v, f.v)

    def test_zero_e_invariant(self):
        grid = np.linspace(-1.5, 1.5, 3001)
        f = init_from_profiles(bump, lambda x: np.sin(x), 24, grid, CS1)
        f = HydroFlock1D(x=f.x, v=f.v, e=np.zeros(f.n), rho=f.rho, m=f.m, kernel=CS1)
        run = run_hydro(HydroState((f,)), ModelParams(), 2.0)
        assert np.all(run.states[-1].flocks[0].e == 0.0)

    def test_mass_constant(self):
        s = preset("hydro_global")
        st = build_hydro_state(s)
        run = run_hydro(st, s.params, 5.0, [0.0, 5.0])
        f0, f1 = run.states[0].flocks[0], run.states[-1].flocks[0]
        np.testing.assert_array_equal(f0.m, f1.m)
        grid = np.linspace(-3, 3, 6001)
        assert np.trapezoid(reconstruct_density(f1, grid), grid) == pytest.approx(f1.mass, rel=1e-6)

    def test_crossing_raises(self):
        f = HydroFlock1D(x=[0.0, 0.1], v=[1.0, -1.0], e=[-5.0, -5.0], rho=[1, 1], m=[0.5, 0.5], kernel=CS1, lam=1e-3)
        with pytest.raises(OrderingError):
            step_hydro(HydroState((f,)), ModelParams(), 0.2)
        with pytest.raises(ValueError):
            step_hydro(HydroState((f,)), ModelParams(), 0.0)

    def test_two_forms_agree(self):
        s = preset("hydro_blowup")
        st = build_hydro_state(s)
        a = hydro_rhs(st, s.params, "original")
        b = hydro_rhs(st, s.params, "shifted")
        for fa, fb in zip(a.flocks, b.flocks):
            np.testing.assert_allclose(fa.v, fb.v, rtol=0, atol=1e-13)
        ra = run_hydro(st, s.params, 0.05, [0.05], rtol=1e-10, atol=1e-12, form="original").states[-1]
        rb = run_hydro(st, s.params, 0.05, [0.05], rtol=1e-10, atol=1e-12, form="shifted").states[-1]
        for fa, fb in zip(ra.flocks, rb.flocks):
            np.testing.assert_allclose(fa.v, fb.v, rtol=0, atol=1e-8)
            np.testing.assert_allclose(fa.e, fb.e, rtol=1e-8, atol=1e-8)


class TestVerdict:
    def _state(self, e, n_flocks=2):
        return HydroState(tuple(HydroFlock1D(x=[4.0 * k, 4.0 * k + 1], v=[0, 0], e=[e, 1.0], rho=[1, 1],
                                             m=[0.25, 0.25], kernel=CS1) for k in range(n_flocks)))

    def test_increasing_velocity_global(self):
        grid = np.linspace(-1.5, 1.5, 3001)
        f = init_from_profiles(bump, lambda x: np.tanh(x), 32, grid, CS1)
        assert threshold_verdict(HydroState((f,)), ModelParams(eps=0.3, psi=CS1)).classification == GLOBAL

    def test_no_coupling_collapses_band(self):
        assert threshold_verdict(self._state(-0.01, 1), ModelParams()).classification == BLOWUP

    def test_band(self):
        v = threshold_verdict(self._state(-0.05), ModelParams(eps=0.1, psi=cucker_smale(2.0)))
        assert v.classification == BAND
        assert v.floor == pytest.approx(-0.1)
        assert v.witness == (0, 0)

    def test_below_floor(self):
        assert threshold_verdict(self._state(-0.2), ModelParams(eps=0.1, psi=CS1)).classification == BLOWUP

    def test_improved_floor_for_fat_tail(self):
        v = threshold_verdict(self._state(-0.05), ModelParams(eps=0.1, psi=cucker_smale(0.5)))
        assert v.improved_floor is not None and v.floor < v.improved_floor < 0
        assert v.D_bar >= 4.0


class TestBlowup:
    def test_riccati_bound(self):
        assert riccati_blowup_bound(-3.0, 1.0, 2.0, 1.0) == pytest.approx(1.0)
        assert riccati_blowup_bound(-1.0, 1.0, 2.0, 1.0) == math.inf
        assert riccati_blowup_bound(0.5, 0.0, 1.0, 1.0) == math.inf

    def test_blowup_within_comparison_bound(self):
        # [DERIVED] homogeneous data e0 = -(1 + delta) eps M psi(0), delta = 1/2
        eps, delta = 0.5, 0.5
        st, p, a, b = point_pair(0.0, eps=eps, m=(0.5, 0.5), gap=3.0)
        M, e0 = 1.0, -(1 + delta) * eps * 1.0
        st = HydroState(tuple(HydroFlock1D(x=f.x, v=f.v, e=[e0], rho=f.rho, m=f.m, kernel=f.kernel, lam=f.lam)
                              for f in st.flocks))
        run = run_hydro(st, p, 20.0)
        det = detect_blowup(run)
        bound = riccati_blowup_bound(e0, eps, M, 1.0)
        assert det is not None and det.blowup_time <= bound
        # exact blowup of the frozen-coefficient Riccati law
        u0 = (e0 - a) / (b - e0)
        assert det.blowup_time == pytest.approx(math.log(-1 / u0) / (b - a), rel=1e-4)

    def test_global_run_has_no_blowup(self):
        st, p, _, _ = point_pair(0.5)
        run = run_hydro(st, p, 10.0)
        assert detect_blowup(run) is None and not run.blowup

    def test_extrapolation(self):
        from multiflock.hydro1d import HydroRun
        from multiflock.integrate import EventLog
        t = np.array([0.0, 0.5, 0.9, 0.9999995])
        run = HydroRun([], t, -1.0 / (1.0 - t), EventLog(), blowup=True)
        det = detect_blowup(run)
        assert det.crossing_time == t[-1]
        assert det.blowup_time == pytest.approx(1.0, abs=1e-9)


class TestProfiles:
    def test_spacing_density_uniform(self):
        x = np.linspace(0, 1, 11)
        f = HydroFlock1D(x=x, v=np.zeros(11), e=np.ones(11), rho=np.ones(11), m=np.full(11, 0.1), kernel=CS1)
        np.testing.assert_allclose(spacing_density(f)[1:-1], 1.0, rtol=1e-14)

    def test_differenced_gradient_exact_for_quartics(self):
        x = np.sort(np.random.default_rng(0).uniform(0, 1, 12))
        v = 1 + 2 * x - x ** 3 + 0.5 * x ** 4
        f = HydroFlock1D(x=x, v=v, e=np.zeros(12), rho=np.ones(12), m=np.full(12, 1 / 12), kernel=CS1)
        np.testing.assert_allclose(differenced_gradient(f)[1:-1], (2 - 3 * x ** 2 + 2 * x ** 3)[1:-1], atol=1e-10)

    def test_translating_profile_is_steady(self):
        x = np.linspace(-1, 1, 33)
        base = HydroFlock1D(x=x, v=np.full(33, 0.4), e=np.zeros(33), rho=np.ones(33), m=np.full(33, 2 / 33),
                            kernel=CS1)
        # u' = 0 and e = lam phi*rho: the logistic law keeps e fixed and rho constant
        base = HydroFlock1D(x=x, v=base.v, e=base.convolution(), rho=base.rho, m=base.m, kernel=CS1)
        run = run_hydro(HydroState((base,)), ModelParams(), 5.0, np.linspace(0, 5, 11))
        pc = profile_convergence(run)
        assert pc.cauchy.max() <= 1e-12
        assert math.isnan(pc.density_rate.rate)

    def test_needs_global_run(self):
        st, p, _, _ = point_pair(-5.0, eps=0.0)
        run = run_hydro(st, p, 5.0)
        with pytest.raises(PreconditionError):
            profile_convergence(run)


@pytest.fixture(scope="module")
def run():
    s = preset("hydro_global")
    return s, run_hydro(build_hydro_state(s), s.params, 50.0, s.sample_times)


class TestGlobalPreset:
    def test_transport_consistency(self, run):
        _, r = run
        assert max(transport_consistency(st.flocks[0]) for st in r.states) <= 1e-4

    def test_spacing_density_cross_check(self, run):
        _, r = run
        for st in r.states:
            f = st.flocks[0]
            assert np.abs(spacing_density(f) - f.rho)[1:-1].max() <= 0.05 * f.rho.max()

    def test_macro_residual(self, run):
        s, r = run
        assert max(macro_residual(st, s.params) for st in r.states) <= 1e-6

    def test_e_upper_bound(self, run):
        _, r = run
        f0 = r.states[0].flocks[0]
        cap = max(f0.e.max(), f0.mass) * 1.05
        assert max(st.flocks[0].e.max() for st in r.states) <= cap

    def test_profile_rate_tracks_alignment_rate(self, run):
        _, r = run
        pc = profile_convergence(r)
        t = r.times
        amp = np.array([np.abs(st.flocks[0].v - st.macro().momenta[0, 0]).max() for st in r.states])
        from multiflock.diagnostics import fit_decay_rate
        align = fit_decay_rate(t, amp, window=(t[0] + 5, t[0] + 35)).rate
        assert pc.density_rate.rate > 0
        assert 0.5 <= pc.density_rate.rate / align <= 2.0


def test_blowup_preset_transport_until_crossing():
    s = preset("hydro_blowup")
    run = run_hydro(build_hydro_state(s), s.params, 5.0, s.sample_times, allow_crossing=True)
    assert run.blowup and run.crossing_time is not None
    before = [st for st in run.states if st.t < run.crossing_time]
    assert max(transport_consistency(f) for st in before for f in st.flocks) <= 1e-4


def test_snapshot_csv():
    f = HydroFlock1D(x=[0, 1], v=[0.5, 0.25], e=[1, 2], rho=[1, 1], m=[0.5, 0.5], kernel=CS1)
    buf = io.StringIO()
    write_hydro_snapshot(HydroState((f,)), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "flock_id,particle_id,m,x,v,e,rho"
    assert lines[2] == "0,1,0.5,1.0,0.25,2.0,1.0"

from __future__ import annotations

import math

import numpy as np
import pytest

from multiflock.dynamics import ModelParams
from multiflock.errors import BlowupError
from multiflock.integrate import (EventLog, IntegratorSpec, dopri_solve, integrate, min_pair_distance,
                                  reference_integrate, rk4_solve)
from multiflock.kernels import constant, cucker_smale, power_singular
from multiflock.state import Flock, MultiFlockState, macro_observables


def two_agent(lam=1.0):
    return MultiFlockState([Flock(x=[[0, 0], [1, 0]], v=[[-1, 0], [1, 0]], m=[0.5, 0.5], kernel=constant(1.0),
                                  lam=lam)])


def three_flocks(seed=5):
    rng = np.random.default_rng(seed)
    fl = [Flock(x=c + 0.5 * rng.normal(size=(6, 2)), v=rng.normal(size=(6, 2)), m=rng.uniform(0.5, 1.5, 6) / 6,
                kernel=cucker_smale(0.5)) for c in ([0, 0], [4, 0], [0, 4])]
    return MultiFlockState(fl)


def _dv(s):
    v = s.flocks[0].v
    return v[1] - v[0]


class TestTwoAgent:
    def test_closed_form(self):
        # [DERIVED] linear ODE d(dv)/dt = -lam (m1 + m2) dv with m1 + m2 = 1
        ts = np.linspace(0, 5, 51)
        traj, log = integrate(two_agent(), ModelParams(), IntegratorSpec(t_end=5.0), ts)
        for s in traj:
            exact = 2 * math.exp(-s.t)
            assert abs(_dv(s)[0] - exact) <= 1e-6 * exact
        at1 = traj[10]
        assert at1.t == 1.0
        assert _dv(at1)[0] == pytest.approx(0.7357589, abs=1e-6)
        assert log.n_accepted > 0

    def test_superagent_pair(self):
        s = MultiFlockState([Flock(x=[0.0], v=[1.0], m=[1.0]), Flock(x=[3.0], v=[-1.0], m=[1.0])])
        traj, _ = integrate(s, ModelParams(eps=1.0, psi=constant(1.0)), IntegratorSpec(t_end=2.0), [2.0])
        dV = traj[0].flocks[1].v[0, 0] - traj[0].flocks[0].v[0, 0]
        assert dV == pytest.approx(-2 * math.exp(-4.0), rel=1e-7)

    def test_uniform_translation(self):
        s = MultiFlockState([Flock(x=[[0, 0], [1, 2]], v=[[0.5, -0.25]] * 2, m=[1, 1], kernel=cucker_smale(1.0)),
                             Flock(x=[[5, 5]], v=[[0.5, -0.25]], m=[2])])
        traj, _ = integrate(s, ModelParams(eps=0.3, psi=cucker_smale(1.0)), IntegratorSpec(t_end=4.0), [4.0])
        end = traj[0]
        for f0, f1 in zip(s.flocks, end.flocks):
            np.testing.assert_allclose(f1.x, f0.x + 4.0 * f0.v, rtol=0, atol=1e-14)
            np.testing.assert_allclose(f1.v, f0.v, rtol=0, atol=1e-15)


class TestReference:
    def test_richardson_order_four(self):
        s = two_agent(lam=2.0)
        exact = 2 * math.exp(-2.0 * 1.0)
        errs = [abs(_dv(reference_integrate(s, ModelParams(), h, 1.0)[-1])[0] - exact) for h in (0.1, 0.05)]
        ratio = errs[0] / errs[1]
        assert 12 <= ratio <= 20

    def test_zero_velocity(self):
        s = MultiFlockState([Flock(x=[[0, 1], [2, 3]], v=np.zeros((2, 2)), m=[1, 1], kernel=cucker_smale(1.0))])
        out = reference_integrate(s, ModelParams(), 0.1, 1.0)[-1]
        np.testing.assert_array_equal(out.flocks[0].x, s.flocks[0].x)

    def test_agrees_with_adaptive(self):
        s = three_flocks()
        p = ModelParams(eps=0.2, psi=cucker_smale(1.0))
        traj, log = integrate(s, p, IntegratorSpec(t_end=3.0), [0.0, 3.0])
        ref = reference_integrate(s, p, log.min_step / 8, 3.0)[-1]
        diff = max(np.abs(a.v - b.v).max() for a, b in zip(traj[-1].flocks, ref.flocks))
        assert diff <= 1e-7


def test_fixed_and_adaptive_agree():
    s = three_flocks(6)
    p = ModelParams(eps=0.2, psi=cucker_smale(1.0))
    rtol = 1e-8
    a, _ = integrate(s, p, IntegratorSpec(t_end=2.0, rtol=rtol), [2.0])
    b, _ = integrate(s, p, IntegratorSpec(method="rk4_fixed", dt=2e-3, t_end=2.0), [2.0])
    scale = max(np.abs(f.v).max() for f in a[0].flocks)
    diff = max(np.abs(f.v - g.v).max() for f, g in zip(a[0].flocks, b[0].flocks))
    assert diff <= 10 * rtol * max(scale, 1.0)


def test_momentum_drift_small():
    s = three_flocks(7)
    p = ModelParams(eps=0.5, psi=cucker_smale(0.5))
    traj, _ = integrate(s, p, IntegratorSpec(t_end=10.0), np.linspace(0, 10, 11))
    V0 = macro_observables(traj[0]).velocity
    for st in traj:
        assert np.linalg.norm(macro_observables(st).velocity - V0) <= 1e-9 * (1 + np.linalg.norm(V0))


def test_maximum_principle_along_trajectory():
    s = three_flocks(8)
    p = ModelParams(eps=0.5, psi=cucker_smale(0.5))
    traj, _ = integrate(s, p, IntegratorSpec(t_end=5.0), np.linspace(0, 5, 101))
    mx = np.array([np.concatenate([f.v for f in st.flocks]).max(axis=0) for st in traj])
    assert np.all(np.diff(mx, axis=0) <= 1e-9)


def test_deterministic_replay():
    s = three_flocks(9)
    p = ModelParams(eps=0.5, psi=cucker_smale(0.5))
    a, _ = integrate(s, p, IntegratorSpec(t_end=2.0), [1.0, 2.0])
    b, _ = integrate(s, p, IntegratorSpec(t_end=2.0), [1.0, 2.0])
    for x, y in zip(a, b):
        for f, g in zip(x.flocks, y.flocks):
            assert f.x.tobytes() == g.x.tobytes() and f.v.tobytes() == g.v.tobytes()


def test_samples_land_exactly():
    ts = [0.0, 0.1, 0.35, 1.0]
    traj, _ = integrate(two_agent(), ModelParams(), IntegratorSpec(t_end=1.0), ts)
    assert [s.t for s in traj] == ts


def test_unsorted_samples_rejected():
    with pytest.raises(ValueError):
        integrate(two_agent(), ModelParams(), IntegratorSpec(t_end=1.0), [0.5, 0.1])


class TestMinPair:
    def test_line(self):
        s = MultiFlockState([Flock(x=[0, 1, 3], v=[0, 0, 0], m=[1, 1, 1])])
        assert min_pair_distance(s) == [(1.0, (0, 1))]

    def test_single(self):
        assert min_pair_distance(MultiFlockState([Flock(x=[2], v=[0], m=[1])]))[0][0] == math.inf

    def test_square(self):
        s = MultiFlockState([Flock(x=[[0, 0], [2, 0], [0, 2], [2, 2]], v=np.zeros((4, 2)), m=np.ones(4))])
        assert min_pair_distance(s)[0][0] == 2.0


def test_guard_rejects_fast_closing():
    s = MultiFlockState([Flock(x=[0.0, 1.0], v=[1.0, -1.0], m=[0.5, 0.5], kernel=power_singular(0.0), lam=1e-3)])
    traj, log = integrate(s, ModelParams(), IntegratorSpec(t_end=0.45, rtol=1e-3, atol=1e-3), [0.45])
    kinds = {e.kind for e in log.events}
    assert "collision_near_miss" in kinds and "step_rejected" in kinds
    times = [e.time for e in log.events]
    assert times == sorted(times)
    assert min_pair_distance(traj[-1])[0][0] > 0


def test_blowup_error_carries_last_state():
    f = lambda t, y: y * y
    with pytest.raises(BlowupError) as info:
        dopri_solve(f, 0.0, np.array([1.0]), 2.0, [0.0, 0.5, 2.0], 1e-8, 1e-10)
    exc = info.value
    assert exc.last_time < 1.0 + 1e-6
    assert np.isfinite(exc.last_state).all()
    assert len(exc.trajectory) == 2


def test_rk4_solver_order():
    f = lambda t, y: -y
    errs = []
    for h in (0.1, 0.05):
        res = rk4_solve(f, 0.0, np.array([1.0]), 1.0, [1.0], h)
        errs.append(abs(res.ys[-1][0] - math.exp(-1)))
    assert 12 <= errs[0] / errs[1] <= 20


def test_event_log_ordering():
    log = EventLog()
    log.add(1.0, "step_rejected")
    log.add(0.5, "step_rejected")
    assert [e.time for e in log.events] == [1.0, 1.0]
    with pytest.raises(ValueError):
        log.add(2.0, "unknown")


def test_superagent_mode():
    s = three_flocks(10)
    p = ModelParams(eps=0.5, psi=cucker_smale(0.5), mode="superagent_only")
    traj, _ = integrate(s, p, IntegratorSpec(t_end=1.0), [1.0])
    assert traj[0].sizes == (1, 1, 1)


@pytest.mark.parametrize("bad", [dict(method="euler"), dict(method="rk4_fixed"), dict(rtol=0.0),
                                 dict(theta=1.0), dict(t_end=0.0)])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        IntegratorSpec(**bad)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from nhdnls.errors import NumericalBlowup, StabilityError
from nhdnls.fields import Grid, GridField
from nhdnls.solvers import (
    inhomogeneous_integral,
    NlsProblem,
    evolve,
    evolve_ll,
    ll_energy,
    rhs_inhomogeneous,
    rhs_ll,
    rhs_standard,
    rhs_vortex,
    step,
    step_ll,
)


def soliton(grid, a=1.0, v=0.0, x0=None):
    x0 = grid.length / 2 if x0 is None else x0
    return GridField(a / np.cosh(a * (grid.x - x0)) * np.exp(0.5j * v * grid.x), grid)


def tanh_rho(grid, amp=0.1):
    return GridField(1 + amp * np.tanh(grid.x - grid.length / 2), grid, real_valued=True, aperiodic=True)


def test_zero_field_is_fixed():
    g = Grid(32, 10.0)
    z = GridField(np.zeros(32, dtype=complex), g)
    assert rhs_standard(z).max_abs() == 0


def test_plane_wave_rhs():
    g = Grid(64, 2 * np.pi)
    a, k, eta = 0.7, 3, 0.4
    q = GridField(a * np.exp(1j * k * g.x), g)
    want = 1j * (-(k**2) + 2 * eta * a**2) * q.values
    assert np.max(np.abs(rhs_standard(q, eta).values - want)) < 1e-11


def test_stationary_soliton_identity():
    g = Grid(256, 48.0)
    q = soliton(g)
    assert np.max(np.abs(rhs_standard(q, 1.0).values - 1j * q.values)) < 1e-8


def test_inhomogeneous_reduces_to_standard():
    g = Grid(128, 40.0)
    q = soliton(g, v=0.5)
    one = GridField(np.ones(128), g, real_valued=True)
    assert np.max(np.abs(rhs_inhomogeneous(q, one).values - rhs_standard(q, 1.0).values)) < 1e-14
    c = GridField(np.full(128, 1.7), g, real_valued=True)
    want = 1.7 * rhs_standard(q, 0.0).values + 1.7 * 2j * np.abs(q.values) ** 2 * q.values
    assert np.max(np.abs(rhs_inhomogeneous(q, c).values - want)) < 1e-12


def test_inhomogeneous_integral_against_adaptive_quadrature():
    g = Grid(256, 48.0)
    q = soliton(g)
    rho = tanh_rho(g)

    def integrand(s):
        return 0.1 / np.cosh(s - 24.0) ** 4

    idx = np.arange(0, 256, 16)
    oracle = np.array([quad(integrand, 0.0, g.x[i], epsabs=1e-14, limit=200)[0] for i in idx])
    got = inhomogeneous_integral(q, rho).real[idx]
    assert np.max(np.abs(got - oracle)) <= 1e-6
    spectral = inhomogeneous_integral(q, rho, quadrature="spectral").real[idx]
    assert np.max(np.abs(spectral - oracle)) <= 1e-10


def test_vortex_reduces_to_half_coefficient_nls():
    g = Grid(128, 40.0)
    q = soliton(g, v=0.3)
    got = rhs_vortex(q, 0.0, 0.0).values
    want = rhs_standard(q, 0.25).values
    assert np.max(np.abs(got - want)) < 1e-12


def test_vortex_uniform_state():
    g = Grid(16, 2 * np.pi)
    a, al, ap, A = 0.8, 0.1, 0.2, 0.3
    q = GridField(np.full(16, a * np.exp(0.4j)), g)
    want = (1j * A + (0.5j * (1 - ap) - al) * a**2) * q.values
    assert np.allclose(rhs_vortex(q, al, ap, drag=lambda t: A).values, want, atol=1e-13)


def test_vortex_integral_vanishes_for_real_q():
    g = Grid(64, 20.0)
    q = GridField(1 / np.cosh(g.x - 10) + 0j, g)
    with_int = rhs_vortex(q, 0.3, 0.0).values
    alpha_c = 1j + 0.3
    want = alpha_c * rhs_standard(q, 0.0).values / 1j + (0.5j - 0.3) * np.abs(q.values) ** 2 * q.values
    assert np.max(np.abs(with_int - want)) < 1e-10


def test_problem_rejects_foreign_parameters():
    g = Grid(16, 1.0)
    with pytest.raises(ValueError):
        NlsProblem("standard", g, alpha=0.1)
    with pytest.raises(ValueError):
        NlsProblem("vortex", g, alpha=1.5)
    with pytest.raises(ValueError):
        NlsProblem("inhomogeneous", g)


def test_stability_bound_is_hard_error():
    g = Grid(64, 20.0)
    prob = NlsProblem("standard", g)
    with pytest.raises(StabilityError):
        step(prob, soliton(g), 2 * prob.max_dt())


def test_splitstep_only_for_standard():
    g = Grid(64, 20.0)
    prob = NlsProblem("vortex", g, alpha=0.1)
    with pytest.raises(ValueError):
        step(prob, soliton(g), 1e-4, scheme="splitstep")


def test_blowup_is_reported():
    g = Grid(64, 20.0)
    prob = NlsProblem("standard", g)
    with pytest.raises(NumericalBlowup):
        evolve(prob, soliton(g, a=30.0), prob.max_dt(), 10 * prob.max_dt(), log_every=0)


def test_soliton_mass_over_1000_steps():
    g = Grid(256, 48.0)
    prob = NlsProblem("standard", g, eta=1.0)
    dt = prob.max_dt()
    _, log, _ = evolve(prob, soliton(g, v=0.5), dt, 1000 * dt, log_every=1000)
    assert abs(log.mass[-1] - log.mass[0]) / log.mass[0] <= 1e-10


def test_moving_soliton_against_exact_solution():
    g = Grid(256, 48.0)
    prob = NlsProblem("standard", g, eta=1.0, dealias=False)
    v, T = 1.0, 1.0
    dt = T / int(np.ceil(T / prob.max_dt()))
    q, _, _ = evolve(prob, soliton(g, v=v, x0=20.0), dt, T, log_every=0)
    x = g.x
    exact = np.exp(1j * (0.5 * v * x + (1 - v**2 / 4) * T)) / np.cosh(x - 20.0 - v * T)
    assert np.max(np.abs(q.values - exact)) < 1e-6


def test_splitstep_agrees_with_rk4():
    g = Grid(256, 48.0)
    prob = NlsProblem("standard", g, dealias=False)
    dt = prob.max_dt() / 4
    q1, _, _ = evolve(prob, soliton(g), dt, 200 * dt, log_every=0)
    q2, _, _ = evolve(prob, soliton(g), dt, 200 * dt, scheme="splitstep", log_every=0)
    assert np.max(np.abs(q1.values - q2.values)) < 1e-4


def test_rk4_order_ratio():
    g = Grid(64, 32.0)
    prob = NlsProblem("standard", g, eta=1.0, dealias=False)
    q0 = soliton(g)
    T = 2 * np.pi
    n0 = 4 * int(np.ceil(T / prob.max_dt()))
    runs = {n: evolve(prob, q0, T / n, T, log_every=0)[0].values for n in (n0, 2 * n0, 32 * n0)}
    e1 = np.max(np.abs(runs[n0] - runs[32 * n0]))
    e2 = np.max(np.abs(runs[2 * n0] - runs[32 * n0]))
    assert 12 <= e1 / e2 <= 20


def test_inhomogeneous_with_unit_rho_tracks_standard_per_step():
    g = Grid(128, 40.0)
    one = GridField(np.ones(128), g, real_valued=True)
    p1 = NlsProblem("inhomogeneous", g, rho=one)
    p2 = NlsProblem("standard", g, eta=1.0)
    q1 = q2 = soliton(g, v=0.5)
    for _ in range(20):
        q1, q2 = step(p1, q1, p1.max_dt()), step(p2, q2, p2.max_dt())
        assert np.max(np.abs(q1.values - q2.values)) <= 1e-12


def test_weighted_mass_is_the_inhomogeneous_invariant():
    g = Grid(256, 48.0)
    prob = NlsProblem("inhomogeneous", g, rho=tanh_rho(g))
    dt = prob.max_dt()
    _, log, _ = evolve(prob, soliton(g, v=0.5), dt, 1000 * dt, log_every=1000)
    w = log.weighted_mass
    assert abs(w[-1] - w[0]) / w[0] < 1e-8


def test_vortex_mass_strictly_decreasing():
    g = Grid(16, 2 * np.pi)
    prob = NlsProblem("vortex", g, alpha=0.1)
    q0 = GridField(np.ones(16, dtype=complex), g)
    _, log, _ = evolve(prob, q0, 0.01, 2.0, log_every=10)
    assert np.all(np.diff(log.mass) < 0)


def test_snapshots_and_monotone_log():
    g = Grid(32, 20.0)
    prob = NlsProblem("standard", g)
    dt = prob.max_dt()
    _, log, snaps = evolve(prob, soliton(g), dt, 10 * dt, snapshot_every=5, log_every=2)
    assert [round(t / dt) for t, _ in snaps] == [0, 5, 10]
    assert np.all(np.diff(log.t) > 0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 2 * np.pi), st.sampled_from(["standard", "inhomogeneous", "vortex"]))
def test_global_phase_commutes_with_step(theta, variant):
    g = Grid(64, 30.0)
    kw = {"standard": {}, "inhomogeneous": {"rho": tanh_rho(g)}, "vortex": {"alpha": 0.1, "alpha_prime": 0.05}}
    prob = NlsProblem(variant, g, **kw[variant])
    q = soliton(g, v=0.4)
    rot = GridField(np.exp(1j * theta) * q.values, g)
    a = step(prob, rot, prob.max_dt()).values
    b = np.exp(1j * theta) * step(prob, q, prob.max_dt()).values
    assert np.max(np.abs(a - b)) < 1e-12


def _texture(n, L):
    x = np.arange(n) * L / n
    th = 0.6 + 0.3 * np.sin(2 * np.pi * x / L)
    ph = 2 * np.pi * x / L
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)


def test_ll_constant_field_unchanged():
    v = np.tile([0.0, 0.6, 0.8], (32, 1))
    assert np.allclose(step_ll(v, 1e-4, 1.0), v)


def test_ll_rejects_non_unit():
    with pytest.raises(ValueError):
        rhs_ll(np.tile([0.0, 0.0, 1.1], (16, 1)), 1.0)


def test_ll_parallel_wave_is_stationary():
    g = Grid(64, 2 * np.pi)
    v = np.stack([np.sin(2 * g.x), np.zeros(64), np.cos(2 * g.x)], axis=1)
    assert np.max(np.abs(rhs_ll(v, g.length))) < 1e-11


def test_ll_transverse_wave_frequency():
    L, n, k, eps = 2 * np.pi, 64, 2, 1e-3
    x = np.arange(n) * L / n
    v = np.stack([eps * np.cos(k * x), eps * np.sin(k * x), np.ones(n)], axis=1)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    dt = 1e-3
    T = 0.5
    out, _ = evolve_ll(v, dt, T, L)
    phase = np.angle(np.sum((out[:, 0] + 1j * out[:, 1]) * np.exp(-1j * k * x)))
    omega = -phase / T
    assert abs(omega - k**2) / k**2 < 0.02


def test_ll_energy_drift_and_norm():
    L, n = 2 * np.pi, 64
    v = _texture(n, L)
    dt = 0.25 * (L / n) ** 2
    steps = int(np.ceil(10.0 / dt))
    out, energy = evolve_ll(v, 10.0 / steps, 10.0, L)
    assert abs(energy[-1] - energy[0]) / energy[0] < 1e-6
    assert np.max(np.abs(np.linalg.norm(out, axis=1) - 1)) <= 1e-14
    assert ll_energy(out, L) > 0

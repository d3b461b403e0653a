"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the report lines print without ``-s``.
"""

import numpy as np

from nhdnls import geometry as geo
from nhdnls import nhd
from nhdnls import spin_chain as sc
from nhdnls.cli import build_config, random_pair, run, stokes_oracle
from nhdnls.fields import Grid, GridField
from nhdnls.solvers import (
    NlsProblem,
    evolve,
    rhs_inhomogeneous,
    rhs_standard,
    rhs_vortex,
    step,
)
from nhdnls.su2_lax import build_nls_lax, nls_lax_time_derivative, zcc_residual

L = 48.0


def report(capsys, n, checks):
    """Print one line for criterion ``n`` and fail on any unmet check.

    ``checks`` is a list of ``(label, value, tol, ok)`` tuples.  Capture is
    suspended so the line shows under plain ``pytest -v``.
    """
    ok = all(c[3] for c in checks)
    detail = "; ".join(f"{label}={value:.3e} vs {tol}" for label, value, tol, _ in checks)
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    failed = [c[0] for c in checks if not c[3]]
    assert ok, f"criterion {n} failed: {failed}"


def soliton(g, a=1.0, v=0.0):
    return GridField(a / np.cosh(a * (g.x - g.length / 2)) * np.exp(0.5j * v * g.x), g)


def tanh_rho(g):
    return GridField(1 + 0.1 * np.tanh(g.x - g.length / 2), g, real_valued=True, aperiodic=True)


def _nls_zcc(n):
    g = Grid(n, L)
    q = soliton(g, v=1.0)
    A, B = build_nls_lax(q, 1.0, -1.0)
    r = zcc_residual(A, B, nls_lax_time_derivative(q, rhs_standard(q, eta=-1.0), 1.0))
    return max(r.order_norms().values()), q.max_abs()


def test_criterion_1_undeformed_integrability(capsys):
    r256, scale = _nls_zcc(256)
    r512, _ = _nls_zcc(512)
    ratio = r256 / max(r512, np.finfo(float).tiny)
    report(capsys, 1, [
        ("residual_N256", r256, "1e-8*max|q|", r256 <= 1e-8 * scale),
        ("refinement_ratio", ratio, ">=4", ratio >= 4),
    ])


def test_criterion_2_locality_obstruction(capsys):
    g = Grid(256, L)
    q = soliton(g, v=1.0)
    rho = tanh_rho(g)

    def order1(spec):
        d = nhd.deformed_zcc_orders(q, rho, -1.0, spec, lambda qq, t: rhs_inhomogeneous(qq, rho))
        return d["norms"][1], d["scale"][1]

    bare, scale = order1(nhd.DeformationSpec.empty())
    lifted, scale_f = order1(nhd.DeformationSpec.f_only())
    report(capsys, 2, [
        ("undeformed_order1", bare / scale, ">1e-3", bare > 1e-3 * scale),
        ("f_only_order1", lifted / scale_f, "1e-8", lifted <= 1e-8 * scale_f),
    ])


def test_criterion_3_hsc_closure(capsys):
    g = Grid(512, L)
    rng = np.random.default_rng(2024)
    eom, orders = 0.0, 0.0
    for _ in range(5):
        q, rho = random_pair(g, rng)
        spec = nhd.DeformationSpec.hsc()
        got = nhd.deformed_eom_rhs(q, rho, -1.0, spec)
        eom = max(eom, np.max(np.abs(got.values - rhs_inhomogeneous(q, rho).values)))
        d = nhd.deformed_zcc_orders(q, rho, -1.0, spec, lambda qq, t, rho=rho: rhs_inhomogeneous(qq, rho))
        for n in (0, 1):
            orders = max(orders, d["norms"][n] / d["scale"][n])
    report(capsys, 3, [
        ("eom_diff", eom, "1e-8", eom <= 1e-8),
        ("orders_0_1", orders, "1e-6*scale", orders <= 1e-6),
    ])


def test_criterion_4_constraint_calculus(capsys):
    g = Grid(256, L)
    p = GridField(0.8 / np.cosh(g.x - L / 2) * np.exp(0.25j * g.x), g)
    h3, hp, hm = nhd.integrate_r04(p, 1.0, 0.3 - 0.2j, 0.1 + 0.5j)
    r04 = max(r.max_abs() for r in nhd.constraint_residual_r04(p, 1.0, h3, hp, hm))
    r07 = nhd.constraint_residual_r07(p, h3, hp, hm).max_abs()
    c = nhd.casimir(h3, hp, hm).values
    spread = float(np.max(np.abs(c - c[0])))
    report(capsys, 4, [
        ("r04", r04, "1e-8", r04 <= 1e-8),
        ("r07", r07, "1e-6", r07 <= 1e-6),
        ("casimir_spread", spread, "1e-8", spread <= 1e-8),
    ])


def test_criterion_5_continuum_spectral_bound(capsys):
    ok_sets, ok_pattern, ok_pure = True, True, True
    for seed in range(5):
        rep = nhd.continuum_spectral_scan(seed=seed)
        ok_sets &= rep.eom_modifying == [-1, 0, 1]
        ok_pure &= rep.pure_constraint == [-3, -2, 2, 3]
        for n in (-3, -2, 2, 3):
            ok_pure &= all(c["verified"] for c in rep.entry(n)["constraint_structure"])
        src = rep.entry(1)["eom_source"]
        px = complex(*src["terms"]["p_x"]["coefficient_per_G"])
        ok_pattern &= src["kernel_of_upper_sector"] == ["sigma3"]
        ok_pattern &= abs(px + 0.5j) < 1e-8 and src["terms"]["p_x"]["misfit"] < 1e-8
        ok_pattern &= src["terms"]["p"]["misfit"] < 1e-8
    report(capsys, 5, [
        ("eom_set_exact", float(ok_sets), "bool", ok_sets),
        ("n1_source_pattern", float(ok_pattern), "bool", ok_pattern),
        ("pure_constraint_ge2", float(ok_pure), "bool", ok_pure),
    ])


def test_criterion_6_discrete_spectral_bound(capsys):
    ok_set, ok_cons = True, True
    for seed in range(3):
        rep = sc.discrete_spectral_scan(seed=seed)
        ok_set &= rep.eom_modifying == [0, 1]
        for e in rep.entries:
            if e["order"] in (0, 1):
                continue
            ok_cons &= e["classification"] == "pure_constraint"
            ok_cons &= bool(e["constraint_structure"]) and all(c["verified"] for c in e["constraint_structure"])
    report(capsys, 6, [
        ("eom_set_exact", float(ok_set), "bool", ok_set),
        ("constraints_emitted", float(ok_cons), "bool", ok_cons),
    ])


def test_criterion_7_vortex_closure(capsys):
    g = Grid(256, L)
    q = soliton(g, v=1.0)
    closure = 0.0
    for a, ap, A in ((0.1, 0.05, 0.0), (0.3, 0.2, 0.7)):
        ref = rhs_vortex(q, a, ap, drag=A).values
        got = nhd.deformed_eom_rhs(q, 1.0, -1.0, nhd.DeformationSpec.vortex_local(a, ap, drag=A))
        closure = max(closure, np.max(np.abs(got.values - ref)))

    gs = Grid(16, 2 * np.pi)
    prob = NlsProblem("vortex", gs, alpha=0.1)
    _, log, _ = evolve(prob, GridField(np.ones(16, dtype=complex), gs), 0.01, 10.0, log_every=1000)
    measured = log.mass[-1] / gs.length
    oracle = stokes_oracle(1.0, 0.1, 10.0)
    closed = 1.0 / (1 + 2 * 0.1 * 10.0)
    stokes = max(abs(measured - oracle) / oracle, abs(measured - closed) / closed)

    p_v = NlsProblem("vortex", g, alpha=0.0, alpha_prime=0.0)
    p_s = NlsProblem("standard", g, eta=0.25)
    dt = min(p_v.max_dt(), p_s.max_dt())
    q1 = q2 = q
    reduction = 0.0
    for _ in range(50):
        q1, q2 = step(p_v, q1, dt), step(p_s, q2, dt)
        reduction = max(reduction, np.max(np.abs(q1.values - q2.values)))
    report(capsys, 7, [
        ("closure_diff", closure, "1e-8", closure <= 1e-8),
        ("stokes_rel", stokes, "1e-4", stokes <= 1e-4),
        ("reduction_step_diff", reduction, "1e-10", reduction <= 1e-10),
    ])


def test_criterion_8_chain_vs_continuum(capsys):
    N, a, J = 256, 1.0, 1.0
    lattice = 0.0
    for mode in (8, 16, 32, 64):
        k = 2 * np.pi * mode / (N * a)
        w = sc.magnon_frequency(J, a, k)
        lattice = max(lattice, abs(sc.magnon_dispersion(J, a, k, N) - w) / w)
    cont = 0.0
    for mode in (2, 4, 8):
        k = 2 * np.pi * mode / (N * a)
        cont = max(cont, abs(sc.magnon_dispersion(J, a, k, N) - k**2) / k**2)
    aa = 0.1
    v = sc.random_unit_field(Grid(N, N * aa), np.random.default_rng(1), modes=2)
    angle = sc.chain_vs_continuum(sc.SpinLattice.homogeneous(v, 1 / aa**2, aa), 1.0, 1e-3)
    report(capsys, 8, [
        ("lattice_rel", lattice, "0.02", lattice <= 0.02),
        ("continuum_rel", cont, "0.05", cont <= 0.05),
        ("max_angle_rad", angle, "0.05", angle <= 0.05),
    ])


def test_criterion_9_hasimoto_machinery(capsys):
    g = Grid(128, 20.0)
    th = 2 * np.pi * g.x / g.length
    kap = GridField(1.0 + 0.3 * np.cos(th), g, real_valued=True)
    tau = GridField(2 * np.pi / g.length + 0.2 * np.sin(2 * th), g, real_valued=True)
    k2, t2, _ = geo.hasimoto_inverse(geo.hasimoto_forward(kap, tau))
    field_rt = max(np.max(np.abs(k2.values - kap.values)), np.max(np.abs(t2.values - tau.values)))

    u = 2 * np.pi * np.arange(256) / 256
    pts = np.stack([np.cos(u), np.sin(u) + 0.1 * np.sin(2 * u), 0.3 * np.sin(2 * u)], axis=1)
    fr = geo.frenet_from_curve(pts)
    rec = geo.frame_reconstruct(fr.kappa_field(), fr.tau_field(), fr.points[0], np.array([fr.t[0], fr.n[0], fr.b[0]]))
    fr2 = geo.frenet_from_curve(rec.points, period_shift=rec.period_shift)
    curve_rt = max(
        np.max(np.abs(rec.points - fr.points)),
        np.max(np.abs(fr2.kappa - fr.kappa)),
        np.max(np.abs(fr2.tau - fr.tau)),
    )

    ks, ts = geo.hasimoto_soliton(Grid(256, 40.0))
    cal = geo.calibrate_eta(ks, ts, 1.0, 0.005)

    speed_err, drift = 0.0, 0.0
    for R in (1.0, 2.0):
        c = geo.frenet_from_curve(geo.circle(R, 64))
        n = int(np.ceil(0.5 / geo.filament_max_dt(c)))
        _, log = geo.evolve_filament(c, geo.FilamentParams(), 0.5 / n, 0.5, log_every=n // 4)
        speed_err = max(speed_err, abs((log["cz"][-1] - log["cz"][0]) / 0.5 - 1 / R))
        drift = max(drift, max(abs(r - R) for r in log["radius"]))

    c = geo.frenet_from_curve(geo.circle(1.0, 64))
    n = int(np.ceil(0.5 / (0.5 * geo.filament_max_dt(c))))
    _, log = geo.evolve_filament(c, geo.FilamentParams(alpha=0.1), 0.5 / n, 0.5, log_every=20)
    shrinking = bool(np.all(np.diff(log["radius"]) < 0))

    report(capsys, 9, [
        ("field_roundtrip", field_rt, "1e-10", field_rt <= 1e-10),
        ("curve_roundtrip", curve_rt, "1e-6", curve_rt <= 1e-6),
        ("calibrated_eta", cal["calibrated_eta"], "recorded", True),
        ("ll_nls_diff", cal["max_abs_diff"], "1e-3", cal["max_abs_diff"] <= 1e-3),
        ("circle_speed_err", speed_err, "1e-8", speed_err <= 1e-8),
        ("radius_drift", drift, "1e-5", drift <= 1e-5),
        ("friction_shrinks", float(shrinking), "bool", shrinking),
    ])


def test_criterion_10_conservation_suite(capsys):
    g = Grid(256, L)
    drifts = {}
    for name, prob in (
        ("standard", NlsProblem("standard", g, eta=1.0)),
        ("inhomogeneous", NlsProblem("inhomogeneous", g, rho=tanh_rho(g))),
    ):
        dt = prob.max_dt()
        _, log, _ = evolve(prob, soliton(g, v=0.5), dt, 1000 * dt, log_every=1000)
        drifts[name] = abs(log.mass[-1] - log.mass[0]) / log.mass[0]

    gs = Grid(16, 2 * np.pi)
    _, log, _ = evolve(
        NlsProblem("vortex", gs, alpha=0.1), GridField(np.ones(16, dtype=complex), gs), 0.01, 2.0, log_every=10
    )
    decreasing = bool(np.all(np.diff(log.mass) < 0))

    v = sc.random_unit_field(Grid(64, 64.0), np.random.default_rng(0), modes=2)
    out, clog = sc.evolve_chain(sc.SpinLattice.homogeneous(v), 1e-3, 10.0, log_every=1000)
    norm = float(np.max(np.abs(np.linalg.norm(out.spins, axis=1) - 1)))
    e = np.array(clog["energy"])
    energy = abs(e[-1] - e[0]) / abs(e[0])
    report(capsys, 10, [
        ("mass_drift_standard", drifts["standard"], "1e-8", drifts["standard"] <= 1e-8),
        ("mass_drift_inhomogeneous", drifts["inhomogeneous"], "1e-8", drifts["inhomogeneous"] <= 1e-8),
        ("vortex_mass_decreasing", float(decreasing), "bool", decreasing),
        ("unit_spin", norm, "1e-12", norm <= 1e-12),
        ("chain_energy_drift", energy, "1e-6", energy <= 1e-6),
    ])


def test_criterion_11_determinism(tmp_path, capsys):
    configs = [
        ("simulate", {"problem": {"variant": "inls"}, "time": {"T_final": 0.5}}),
        ("nhd-scan", {}),
        ("hasimoto", {}),
        ("constraints", {}),
    ]
    mismatched = 0
    for sub, data in configs:
        outs = []
        for tag in "ab":
            d = tmp_path / f"{sub}-{tag}"
            run(build_config(sub, data), d)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        mismatched += outs[0] != outs[1]
    report(capsys, 11, [("mismatched_runs", float(mismatched), "0", mismatched == 0)])

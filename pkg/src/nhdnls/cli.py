"""Command-line experiment runner.

Every subcommand resolves a :class:`RunConfig` (defaults < JSON file < flags),
runs, and writes ``meta.json`` plus CSV artifacts into the output directory.
Exit status: 0 all tolerances met, 1 tolerance failure, 2 invalid config,
3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import __version__
from . import geometry as geo
from . import nhd
from . import solvers
from . import spin_chain as sc
from .errors import ConfigError, NumericalBlowup, StabilityError
from .fields import Grid, GridField, field_to_csv
from .su2_lax import MatrixGridField, build_ll_lax, ll_lax_time_derivative, spin_matrix, zcc_residual

EXIT_OK, EXIT_TOL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
ENV_OUTPUT = "NHDNLS_OUTPUT_DIR"
ENV_THREADS = "NHDNLS_THREADS"

SUBCOMMANDS = ("zcc-check", "simulate", "hasimoto", "nhd-closure", "nhd-scan", "constraints", "dispersion", "sweep")

TOP_KEYS = {"subcommand", "grid", "time", "problem", "deformation", "tolerances", "output", "seed", "sweep"}
GRID_KEYS = {"N", "L"}
TIME_KEYS = {"dt", "T_final", "snapshot_every"}

DEFAULTS = {
    "zcc-check": {
        "grid": {"N": 256, "L": 48.0},
        "problem": {"system": "nls", "rho": "const", "q": "soliton", "rho_value": 1.0},
        "deformation": {"f": False},
        "tolerances": {"zcc": 1e-8},
    },
    "simulate": {
        "grid": {"N": 256, "L": 48.0},
        "time": {"dt": None, "T_final": 1.0, "snapshot_every": 0},
        "problem": {
            "variant": "nls",
            "eta": 1.0,
            "alpha": 0.0,
            "alpha_prime": 0.0,
            "drag": 0.0,
            "rho": {"kind": "tanh", "amp": 0.1},
            "initial": {"kind": "soliton", "amplitude": 1.0, "velocity": 0.5},
            "scheme": "rk4",
            "J": 1.0,
            "a": 1.0,
            "radius": 1.0,
        },
        "tolerances": {
            "mass_drift": 1e-8,
            "stokes_rel": 1e-4,
            "ll_energy_drift": 1e-6,
            "chain_energy_drift": 1e-6,
            "unit_norm": 1e-12,
            "radius_drift": 1e-5,
        },
    },
    "hasimoto": {
        "grid": {"N": 256, "L": 40.0},
        "problem": {"mode": "roundtrip", "kappa_floor": 1e-8},
        "tolerances": {"field_roundtrip": 1e-10, "curve_roundtrip": 1e-6},
    },
    "nhd-closure": {
        "grid": {"N": 512, "L": 48.0},
        "problem": {"closure": "hsc", "samples": 5, "alpha": 0.1, "alpha_prime": 0.05, "drag": 0.0, "eta": -1.0},
        "tolerances": {"eom": 1e-8, "zcc": 1e-6},
    },
    "nhd-scan": {
        "grid": {"N": 64, "L": 6.283185307179586},
        "problem": {"kind": "continuum", "range": [-3, 3]},
        "tolerances": {},
    },
    "constraints": {
        "grid": {"N": 256, "L": 48.0},
        "problem": {"which": "all", "h0": [1.0, 0.3, -0.2, 0.1, 0.5]},
        "tolerances": {"r04": 1e-8, "r07": 1e-6, "casimir": 1e-8},
    },
    "dispersion": {
        "problem": {"J": 1.0, "a": 1.0, "n_sites": 256, "modes": [8, 32], "amplitude": 1e-3},
        "tolerances": {"lattice_rel": 0.02, "continuum_rel": 0.05, "continuum_ka_max": 0.19634954084936207},
    },
}

PROBLEM_KEYS = {
    "zcc-check": {"system", "rho", "q", "rho_value", "eta"},
    "simulate": {
        "variant", "eta", "alpha", "alpha_prime", "drag", "rho", "initial", "scheme", "J", "a", "radius",
    },
    "hasimoto": {"mode", "kappa_floor"},
    "nhd-closure": {"closure", "samples", "alpha", "alpha_prime", "drag", "eta"},
    "nhd-scan": {"kind", "range"},
    "constraints": {"which", "h0"},
    "dispersion": {"J", "a", "n_sites", "modes", "amplitude"},
}


# -- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    subcommand: str
    grid: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    deformation: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    seed: int = 0
    sweep: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "subcommand": self.subcommand,
            "grid": self.grid,
            "time": self.time,
            "problem": self.problem,
            "deformation": self.deformation,
            "tolerances": self.tolerances,
            "seed": self.seed,
            "sweep": self.sweep,
        }


def _deep_merge(base, extra, path=""):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("rho", "initial"):
            out[k] = _deep_merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(d, allowed, where):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def build_config(subcommand, data=None, overrides=None):
    """Validate and resolve a configuration; raises ConfigError on any problem."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    data = copy.deepcopy(data or {})
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(data, TOP_KEYS, "config")
    if data.get("subcommand", subcommand) != subcommand:
        raise ConfigError("config subcommand does not match the command line")
    if subcommand == "sweep":
        return _build_sweep(data, overrides)
    base = DEFAULTS[subcommand]
    merged = _deep_merge({k: v for k, v in base.items()}, {k: v for k, v in data.items() if k != "subcommand"})
    merged = _deep_merge(merged, overrides or {})
    for key in ("grid", "time", "problem", "deformation", "tolerances"):
        merged.setdefault(key, {})
        if not isinstance(merged[key], dict):
            raise ConfigError(f"{key} must be an object")
    _check_keys(merged["grid"], GRID_KEYS, "grid")
    _check_keys(merged["time"], TIME_KEYS, "time")
    _check_keys(merged["problem"], PROBLEM_KEYS[subcommand], "problem")
    _check_keys(merged["tolerances"], set(base.get("tolerances", {})), "tolerances")
    _check_keys(merged["deformation"], set(base.get("deformation", {})), "deformation")
    if "sweep" in merged and merged["sweep"]:
        raise ConfigError("sweep block only valid for the sweep subcommand")
    g = merged["grid"]
    if g:
        n = g.get("N")
        if not isinstance(n, int) or n < 8 or n & (n - 1):
            raise ConfigError("grid.N must be a power of two >= 8")
        if not isinstance(g.get("L"), (int, float)) or g["L"] <= 0:
            raise ConfigError("grid.L must be positive")
    for k, v in merged["tolerances"].items():
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"tolerance {k} must be positive")
    tm = merged["time"]
    if tm:
        if not isinstance(tm.get("T_final"), (int, float)) or tm["T_final"] <= 0:
            raise ConfigError("time.T_final must be positive")
        if tm.get("dt") is not None and (not isinstance(tm["dt"], (int, float)) or tm["dt"] <= 0):
            raise ConfigError("time.dt must be positive")
        if not isinstance(tm.get("snapshot_every", 0), int) or tm.get("snapshot_every", 0) < 0:
            raise ConfigError("time.snapshot_every must be a non-negative integer")
    seed = merged.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    _validate_problem(subcommand, merged["problem"])
    return RunConfig(
        subcommand=subcommand,
        grid=merged["grid"],
        time=merged["time"],
        problem=merged["problem"],
        deformation=merged["deformation"],
        tolerances=merged["tolerances"],
        output=merged.get("output"),
        seed=seed,
    )


def _validate_problem(sub, p):
    choices = {
        "zcc-check": [("system", ("nls", "ll")), ("rho", ("const", "tanh")), ("q", ("vacuum", "soliton"))],
        "simulate": [("variant", ("nls", "inls", "vortex", "ll", "chain", "filament")), ("scheme", ("rk4", "splitstep"))],
        "hasimoto": [("mode", ("forward", "inverse", "roundtrip"))],
        "nhd-closure": [("closure", ("hsc", "vortex", "vortex_local"))],
        "nhd-scan": [("kind", ("continuum", "discrete"))],
        "constraints": [("which", ("r04", "r07", "casimir", "all"))],
    }
    for key, allowed in choices.get(sub, []):
        if p.get(key) not in allowed:
            raise ConfigError(f"problem.{key} must be one of {allowed}, got {p.get(key)!r}")
    if sub == "nhd-scan":
        r = p.get("range")
        if not (isinstance(r, list) and len(r) == 2 and all(isinstance(v, int) for v in r) and r[0] <= r[1]):
            raise ConfigError("problem.range must be [lo, hi] integers with lo <= hi")
        if r[0] < nhd.SCAN_RANGE[0] or r[1] > nhd.SCAN_RANGE[1]:
            raise ConfigError(f"problem.range must lie within {list(nhd.SCAN_RANGE)}")
    if sub in ("simulate", "nhd-closure"):
        for k in ("alpha", "alpha_prime"):
            v = p.get(k, 0.0)
            if not isinstance(v, (int, float)) or not 0.0 <= v < 1.0:
                raise ConfigError(f"problem.{k} must lie in [0, 1)")
    if sub == "simulate":
        init = p.get("initial")
        if not isinstance(init, dict) or init.get("kind") not in ("soliton", "uniform", "plane_wave", "random"):
            raise ConfigError("problem.initial.kind must be soliton, uniform, plane_wave or random")
        _check_keys(init, {"kind", "amplitude", "velocity", "k", "center", "modes"}, "problem.initial")
        rho = p.get("rho")
        if not isinstance(rho, (int, float)):
            if not isinstance(rho, dict) or rho.get("kind") not in ("tanh", "const"):
                raise ConfigError("problem.rho must be a number or {kind: tanh|const, ...}")
            _check_keys(rho, {"kind", "amp", "value"}, "problem.rho")
    if sub == "dispersion":
        if not isinstance(p.get("modes"), list) or not all(isinstance(m, int) for m in p["modes"]):
            raise ConfigError("problem.modes must be a list of integers")
        if p.get("amplitude", 0) > sc.LINEAR_AMPLITUDE:
            raise ConfigError("problem.amplitude too large for the linear regime")


def _build_sweep(data, overrides):
    merged = _deep_merge(data, overrides or {})
    sw = merged.get("sweep") or {}
    _check_keys(sw, {"template", "parameters"}, "sweep")
    tmpl = sw.get("template")
    if not isinstance(tmpl, dict) or tmpl.get("subcommand") not in SUBCOMMANDS or tmpl.get("subcommand") == "sweep":
        raise ConfigError("sweep.template must be a config with a runnable subcommand")
    params = sw.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("sweep.parameters must map dotted paths to value lists")
    for k, v in params.items():
        if not isinstance(v, list):
            raise ConfigError(f"sweep values for {k} must be a list")
    build_config(tmpl["subcommand"], tmpl)
    return RunConfig(subcommand="sweep", output=merged.get("output"), seed=merged.get("seed", 0), sweep=sw)


# -- outcome bookkeeping ------------------------------------------------------


@dataclass
class Outcome:
    checks: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    status: int | None = None

    def check(self, name, value, tol, mode="le"):
        value = float(value)
        ok = value <= tol if mode == "le" else value > tol
        self.checks[name] = {"value": value, "tolerance": float(tol), "passed": bool(ok), "mode": mode}
        return ok

    def flag(self, name, ok, detail=None):
        self.checks[name] = {"passed": bool(ok), "detail": detail}

    @property
    def exit_code(self):
        if self.status is not None:
            return self.status
        return EXIT_OK if all(c["passed"] for c in self.checks.values()) else EXIT_TOL


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _long_series(series):
    """``{name: [values]}`` with a shared ``t`` key -> long-format rows."""
    t = series["t"]
    rows = []
    for name in sorted(k for k in series if k != "t"):
        vals = series[name]
        if len(vals) != len(t):
            continue
        rows += [(tt, name, v) for tt, v in zip(t, vals)]
    return _csv(["t", "quantity", "value"], rows)


# -- runners ------------------------------------------------------------------


def _grid(cfg):
    return Grid(int(cfg.grid["N"]), float(cfg.grid["L"]))


def _soliton(grid, amplitude=1.0, velocity=0.0, center=None):
    x0 = grid.origin + grid.length / 2 if center is None else center
    x = grid.x
    return GridField(amplitude / np.cosh(amplitude * (x - x0)) * np.exp(0.5j * velocity * x), grid)


def _initial(grid, init, rng):
    kind = init.get("kind")
    amp = float(init.get("amplitude", 1.0))
    if kind == "soliton":
        return _soliton(grid, amp, float(init.get("velocity", 0.0)), init.get("center"))
    if kind == "uniform":
        return GridField(np.full(grid.n, amp, dtype=complex), grid)
    if kind == "plane_wave":
        m = int(init.get("k", 1))
        return GridField(amp * np.exp(2j * np.pi * m * (grid.x - grid.origin) / grid.length), grid)
    modes = int(init.get("modes", 3))
    v = np.zeros(grid.n, dtype=complex)
    for m in range(-modes, modes + 1):
        v += (rng.normal() + 1j * rng.normal()) * np.exp(2j * np.pi * m * grid.x / grid.length) / (1 + abs(m))
    return GridField(amp * v / np.max(np.abs(v)), grid)


def _rho(grid, spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    if spec.get("kind") == "const":
        return float(spec.get("value", 1.0))
    amp = float(spec.get("amp", 0.1))
    return GridField(1.0 + amp * np.tanh(grid.x - grid.origin - grid.length / 2), grid, real_valued=True, aperiodic=True)


def _steps(t_final, dt, limit):
    if dt is None:
        n = int(np.ceil(t_final / limit - 1e-12))
        return t_final / n, n
    n = int(round(t_final / dt))
    if not np.isclose(n * dt, t_final, rtol=1e-10, atol=0):
        raise ConfigError("time.T_final must be a multiple of time.dt")
    return dt, n


def run_zcc_check(cfg, rng):
    p = cfg.problem
    grid = _grid(cfg)
    out = Outcome()
    tol = cfg.tolerances["zcc"]
    if p["system"] == "ll":
        x = grid.x
        th = 0.4 + 0.2 * np.sin(2 * np.pi * x / grid.length)
        ph = 2 * np.pi * x / grid.length
        vec = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)
        S = MatrixGridField(spin_matrix(vec), grid)
        U, V = build_ll_lax(S)
        st = solvers.ll_rhs_array(vec, grid.length)
        U_t = ll_lax_time_derivative(S, spin_matrix(st))
        res = zcc_residual(U, V, U_t)
        scale = 1.0
    else:
        rho_val = float(p.get("rho_value", 1.0))
        rho = rho_val if p["rho"] == "const" else _rho(grid, {"kind": "tanh", "amp": 0.1})
        eta = p.get("eta", -rho_val**2)
        q = _soliton(grid, 1.0, 0.5) if p["q"] == "soliton" else GridField(np.zeros(grid.n, dtype=complex), grid)
        if p["rho"] == "const":
            q_t = solvers.rhs_standard(q, eta=eta)
            spec = nhd.DeformationSpec.empty()
        else:
            q_t = solvers.rhs_inhomogeneous(q, rho)
            spec = nhd.DeformationSpec.f_only() if cfg.deformation.get("f") else nhd.DeformationSpec.empty()
        data = nhd.deformed_zcc_orders(q, rho, eta, spec, lambda qq, t: q_t)
        res = data["residual"]
        scale = max(float(np.max(np.abs(q.values))), 0.0)
        if p["rho"] == "tanh":
            out.notes.append("local coupling: only the order-1 sector is checked (order 0 carries the closure)")
            res_norms = {1: data["norms"].get(1, 0.0)}
            scale = max(data["scale"].get(1, 0.0), 1e-300)
    norms = res.order_norms() if p["system"] == "ll" or p["rho"] == "const" else res_norms
    rows = [(n, v, v / scale if scale else v) for n, v in sorted(norms.items())]
    out.files["residuals.csv"] = _csv(["order", "max_norm", "relative"], rows)
    worst = max(norms.values(), default=0.0)
    out.check("zcc_residual", worst, tol * scale if scale else tol)
    out.summary["max_residual"] = worst
    return out


def _simulate_nls(cfg, rng, out):
    p = cfg.problem
    grid = _grid(cfg)
    variant = p["variant"]
    if variant == "nls":
        prob = solvers.NlsProblem("standard", grid, eta=p["eta"])
    elif variant == "inls":
        prob = solvers.NlsProblem("inhomogeneous", grid, rho=_as_field(_rho(grid, p["rho"]), grid))
    else:
        prob = solvers.NlsProblem("vortex", grid, alpha=p["alpha"], alpha_prime=p["alpha_prime"], drag=p["drag"])
    q0 = _initial(grid, p["initial"], rng)
    dt, n = _steps(cfg.time["T_final"], cfg.time.get("dt"), prob.max_dt())
    snap = cfg.time.get("snapshot_every", 0)
    try:
        q, log, snaps = solvers.evolve(prob, q0, dt, n * dt, p.get("scheme", "rk4"), snap, max(1, n // 100))
    except NumericalBlowup as exc:
        out.status = EXIT_BLOWUP
        state = exc.state if exc.state is not None else q0.values
        out.files["diagnostic.csv"] = field_to_csv(GridField(np.nan_to_num(state), grid))
        out.notes.append(f"blow-up at step {exc.step}: {exc}")
        return
    series = log.as_dict()
    series.pop("snapshot_every")
    out.files["monitors.csv"] = _long_series(series)
    out.files["field.csv"] = field_to_csv(q)
    if snaps:
        rows = [(t, x, v.real, v.imag) for t, f in snaps for x, v in zip(grid.x, f.values)]
        out.files["snapshots.csv"] = _csv(["t", "x", "re", "im"], rows)
    m = np.array(log.mass)
    out.summary.update(dt=dt, steps=n, final_mass=m[-1])
    amp2 = np.array(log.mass) / grid.length
    tt = np.array(log.t)
    out.summary["decay_rate"] = float(np.polyfit(tt, 1.0 / amp2, 1)[0]) if np.all(amp2 > 0) else float("nan")
    tols = cfg.tolerances
    if variant == "nls":
        out.check("mass_drift", abs(m[-1] - m[0]) / m[0], tols["mass_drift"])
    elif variant == "inls":
        w = np.array(log.weighted_mass)
        out.check("weighted_mass_drift", abs(w[-1] - w[0]) / abs(w[0]), tols["mass_drift"])
        out.summary["plain_mass_drift"] = abs(m[-1] - m[0]) / m[0]
    else:
        a = prob.alpha
        if p["initial"]["kind"] == "uniform" and a > 0:
            a0 = float(p["initial"].get("amplitude", 1.0))
            oracle = stokes_oracle(a0, a, n * dt)
            got = float(np.mean(np.abs(q.values) ** 2))
            out.summary.update(stokes_oracle=oracle, stokes_measured=got)
            out.check("stokes_rel", abs(got - oracle) / oracle, tols["stokes_rel"])
        if a > 0:
            out.flag("mass_decreasing", bool(np.all(np.diff(m) < 0)))


def _as_field(rho, grid):
    if isinstance(rho, GridField):
        return rho
    return GridField(np.full(grid.n, rho), grid, real_valued=True)


def stokes_oracle(a0, alpha, t):
    """``|q|^2`` of a uniform state from ``d(a^2)/dt = -2 alpha a^4`` (numerical ODE)."""
    sol = solve_ivp(lambda _, y: [-2.0 * alpha * y[0] ** 2], (0.0, t), [a0**2], rtol=1e-12, atol=1e-14)
    return float(sol.y[0, -1])


def _simulate_ll(cfg, rng, out):
    grid = _grid(cfg)
    kap, tau = geo.hasimoto_soliton(grid)
    frame = geo.frame_reconstruct(kap, tau)
    dt, n = _steps(cfg.time["T_final"], cfg.time.get("dt"), solvers.ll_max_dt(grid.length, grid.n))
    vecs = frame.t.copy()
    energy = [solvers.ll_energy(vecs, grid.length)]
    ts = [0.0]
    every = max(1, n // 100)
    for i in range(1, n + 1):
        vecs = solvers.step_ll(vecs, dt, grid.length)
        if i % every == 0 or i == n:
            ts.append(i * dt)
            energy.append(solvers.ll_energy(vecs, grid.length))
    out.files["monitors.csv"] = _long_series({"t": ts, "energy": energy})
    out.files["field.csv"] = _csv(["s", "tx", "ty", "tz"], [(s, *v) for s, v in zip(grid.x, vecs)])
    out.check("ll_energy_drift", abs(energy[-1] - energy[0]) / energy[0], cfg.tolerances["ll_energy_drift"])
    out.check("unit_norm", np.max(np.abs(np.linalg.norm(vecs, axis=1) - 1.0)), cfg.tolerances["unit_norm"])
    out.summary.update(dt=dt, steps=n)


def _simulate_chain(cfg, rng, out):
    p = cfg.problem
    N = int(cfg.grid["N"])
    a = float(p["a"])
    J = float(p["J"])
    init = p["initial"]
    if init["kind"] == "plane_wave":
        k = 2 * np.pi * int(init.get("k", 1)) / (N * a)
        lat = sc.spin_wave(N, k, a, float(init.get("amplitude", 1e-3)), J)
    else:
        lat = sc.SpinLattice.homogeneous(sc.random_unit_field(Grid(N, N * a), rng, modes=2), J, a)
    dt = cfg.time.get("dt") or min(1e-3, sc.chain_max_dt(lat))
    _, n = _steps(cfg.time["T_final"], dt, None)
    lat, log = sc.evolve_chain(lat, dt, n * dt, log_every=max(1, n // 100))
    out.files["monitors.csv"] = _long_series(log)
    out.files["lattice.csv"] = sc.lattice_to_csv(lat)
    e = np.array(log["energy"])
    out.check("chain_energy_drift", abs(e[-1] - e[0]) / abs(e[0]), cfg.tolerances["chain_energy_drift"])
    out.check("unit_norm", np.max(np.abs(np.linalg.norm(lat.spins, axis=1) - 1.0)), cfg.tolerances["unit_norm"])
    out.notes.append("continuum coupling normalization rho(x_i) = rho_i a^2")
    out.summary.update(dt=dt, steps=n)


def _simulate_filament(cfg, rng, out):
    p = cfg.problem
    R = float(p["radius"])
    fp = geo.FilamentParams(p["alpha"], p["alpha_prime"])
    frame = geo.frenet_from_curve(geo.circle(R, int(cfg.grid["N"])))
    limit = geo.filament_max_dt(frame)
    if fp.alpha > 0:
        # the circle shrinks, so leave room for the shrinking arc-length step
        limit *= 0.5
    dt, n = _steps(cfg.time["T_final"], cfg.time.get("dt"), limit)
    frame, log = geo.evolve_filament(frame, fp, dt, n * dt, log_every=max(1, n // 100))
    out.files["monitors.csv"] = _long_series(log)
    out.files["curve.csv"] = geo.curve_to_csv(frame)
    r = np.array(log["radius"])
    if fp.alpha == 0:
        out.check("radius_drift", np.max(np.abs(r - R)), cfg.tolerances["radius_drift"])
        out.summary["translation_speed"] = (log["cz"][-1] - log["cz"][0]) / (n * dt)
    else:
        out.flag("radius_decreasing", bool(np.all(np.diff(r) < 0)))
    out.summary.update(dt=dt, steps=n, final_radius=r[-1])


def run_simulate(cfg, rng):
    out = Outcome()
    v = cfg.problem["variant"]
    if v in ("nls", "inls", "vortex"):
        _simulate_nls(cfg, rng, out)
    elif v == "ll":
        _simulate_ll(cfg, rng, out)
    elif v == "chain":
        _simulate_chain(cfg, rng, out)
    else:
        _simulate_filament(cfg, rng, out)
    return out


def run_hasimoto(cfg, rng):
    grid = _grid(cfg)
    out = Outcome()
    mode = cfg.problem["mode"]
    floor = cfg.problem["kappa_floor"]
    s = grid.x
    kap = GridField(1.0 + 0.3 * np.cos(2 * np.pi * s / grid.length), grid, real_valued=True)
    tau = GridField(2 * np.pi * 2 / grid.length + 0.2 * np.sin(4 * np.pi * s / grid.length), grid, real_valued=True)
    q = geo.hasimoto_forward(kap, tau)
    k2, t2, mask = geo.hasimoto_inverse(q, floor)
    rows = [(x, kv, tv, qv.real, qv.imag) for x, kv, tv, qv in zip(s, kap.values.real, tau.values.real, q.values)]
    out.files["hasimoto.csv"] = _csv(["s", "kappa", "tau", "re_q", "im_q"], rows)
    if mode in ("inverse", "roundtrip"):
        err = max(np.max(np.abs(k2.values - kap.values)), np.max(np.abs(t2.values - tau.values)[~mask]))
        out.check("field_roundtrip", err, cfg.tolerances["field_roundtrip"])
    if mode == "roundtrip":
        u = 2 * np.pi * np.arange(grid.n) / grid.n
        pts = np.stack([np.cos(u), np.sin(u) + 0.1 * np.sin(2 * u), 0.3 * np.sin(2 * u)], axis=1)
        fr = geo.frenet_from_curve(pts)
        rec = geo.frame_reconstruct(fr.kappa_field(), fr.tau_field(), fr.points[0], np.array([fr.t[0], fr.n[0], fr.b[0]]))
        fr2 = geo.frenet_from_curve(rec.points, period_shift=rec.period_shift)
        err = max(np.max(np.abs(fr2.kappa - fr.kappa)), np.max(np.abs(fr2.tau - fr.tau)))
        out.check("curve_roundtrip", err, cfg.tolerances["curve_roundtrip"])
        out.files["curve.csv"] = geo.curve_to_csv(fr)
    return out


def random_pair(grid, rng):
    """Smooth ``(q, rho)`` sample; q decays to machine precision inside the box."""
    x = grid.x
    c = rng.uniform(-0.3, 0.3, 4)
    amp = 1.0 + 0.3 * rng.uniform(-1, 1)
    q = GridField(amp / np.cosh(1.5 * (x - grid.length / 2 + rng.uniform(-2, 2))) * np.exp(1j * c[0] * x), grid)
    rho = GridField(
        1.0 + c[1] * np.tanh(x - grid.length / 2) + c[2] * np.exp(-((x - grid.length / 2 - c[3]) ** 2)),
        grid,
        real_valued=True,
        aperiodic=True,
    )
    return q, rho


def run_nhd_closure(cfg, rng):
    grid = _grid(cfg)
    p = cfg.problem
    out = Outcome()
    rows = []
    worst_eom, worst_zcc = 0.0, 0.0
    for i in range(int(p["samples"])):
        q, rho = random_pair(grid, rng)
        if p["closure"] == "hsc":
            spec = nhd.DeformationSpec.hsc()
            ref = solvers.rhs_inhomogeneous(q, rho)
            got = nhd.deformed_eom_rhs(q, rho, p["eta"], spec)
            data = nhd.deformed_zcc_orders(q, rho, p["eta"], spec, lambda qq, t: solvers.rhs_inhomogeneous(qq, rho))
            zcc = max(data["norms"][n] / max(data["scale"][n], 1e-300) for n in (0, 1))
            worst_zcc = max(worst_zcc, zcc)
            rows.append((i, "zcc_orders_0_1_relative", zcc))
            rows.append((i, "masked_fraction", data["masked_fraction"]))
        else:
            a, ap, A = p["alpha"], p["alpha_prime"], p["drag"]
            ref = solvers.rhs_vortex(q, a, ap, drag=A)
            if p["closure"] == "vortex_local":
                got = nhd.deformed_eom_rhs(q, 1.0, p["eta"], nhd.DeformationSpec.vortex_local(a, ap, drag=A))
            else:
                got = nhd.deformed_eom_rhs(q, 1.0, p["eta"], nhd.DeformationSpec.vortex(a, ap, drag=A))
                got = got + nhd.dispersion_gap(q, a, ap)
        err = float(np.max(np.abs(got.values - ref.values)))
        worst_eom = max(worst_eom, err)
        rows.append((i, "eom_max_diff", err))
    out.files["closure.csv"] = _csv(["sample", "quantity", "value"], rows)
    out.check("eom", worst_eom, cfg.tolerances["eom"])
    if p["closure"] == "hsc":
        out.check("zcc", worst_zcc, cfg.tolerances["zcc"])
    else:
        out.summary["rescaling"] = json.dumps(nhd.rescaling_report(p["alpha"], p["alpha_prime"]), sort_keys=True)
    spec_flag = {"hsc": "semiholonomic"}.get(p["closure"], "non_integrable")
    out.summary["integrability"] = spec_flag
    out.summary["max_eom_diff"] = worst_eom
    return out


def run_nhd_scan(cfg, rng):
    lo, hi = cfg.problem["range"]
    out = Outcome()
    grid = _grid(cfg)
    if cfg.problem["kind"] == "continuum":
        rep = nhd.continuum_spectral_scan(n_range=range(lo, hi + 1), seed=cfg.seed, grid=grid)
        expected = {-1, 0, 1}
    else:
        rep = sc.discrete_spectral_scan(n_range=range(lo, hi + 1), seed=cfg.seed, grid=Grid(max(grid.n, 256), grid.length))
        expected = {0, 1}
    got = set(rep.eom_modifying)
    want = sorted(expected & set(range(lo, hi + 1)))
    out.flag("eom_modifying_set", sorted(got) == want, {"got": sorted(got), "expected": want})
    verified = all(c["verified"] for e in rep.entries for c in e["constraint_structure"])
    out.flag("constraints_verified", verified)
    out.files["scan.json"] = rep.to_json() + "\n"
    out.files["scan.csv"] = _csv(
        ["order", "classification", "touches"],
        [(e["order"], e["classification"], " ".join(map(str, e["touches"]))) for e in rep.entries],
    )
    out.summary["eom_modifying"] = " ".join(map(str, rep.eom_modifying))
    for e in rep.entries:
        out.summary[f"class_{e['order']}"] = e["classification"]
    return out


def run_constraints(cfg, rng):
    grid = _grid(cfg)
    out = Outcome()
    which = cfg.problem["which"]
    h = cfg.problem["h0"]
    if len(h) != 5:
        raise ConfigError("problem.h0 must hold [h3, Re h+, Im h+, Re h-, Im h-]")
    p = GridField(0.8 / np.cosh(grid.x - grid.length / 2) * np.exp(0.25j * grid.x), grid)
    h3, hp, hm = nhd.integrate_r04(p, h[0], h[1] + 1j * h[2], h[3] + 1j * h[4])
    r = nhd.constraint_residual_r04(p, 1.0, h3, hp, hm)
    r04 = max(float(np.max(np.abs(v.values))) for v in r)
    r07 = float(np.max(np.abs(nhd.constraint_residual_r07(p, h3, hp, hm).values)))
    c = nhd.casimir(h3, hp, hm).values
    cas = float(np.max(np.abs(c - c[0])))
    if which in ("r04", "all"):
        out.check("r04", r04, cfg.tolerances["r04"])
    if which in ("r07", "all"):
        out.check("r07", r07, cfg.tolerances["r07"])
    if which in ("casimir", "all"):
        out.check("casimir", cas, cfg.tolerances["casimir"])
    rows = [(x, a.real, a.imag, b.real, b.imag, d.real, d.imag, e.real, e.imag)
            for x, a, b, d, e in zip(grid.x, h3.values, hp.values, hm.values, c)]
    out.files["constraints.csv"] = _csv(
        ["x", "re_h3", "im_h3", "re_hplus", "im_hplus", "re_hminus", "im_hminus", "re_casimir", "im_casimir"], rows
    )
    out.summary.update(r04=r04, r07=r07, casimir_variation=cas)
    return out


def run_dispersion(cfg, rng):
    p = cfg.problem
    out = Outcome()
    J, a, N = float(p["J"]), float(p["a"]), int(p["n_sites"])
    rows = []
    worst_lat, worst_cont = 0.0, 0.0
    for m in p["modes"]:
        k = 2 * np.pi * m / (N * a)
        w = sc.magnon_dispersion(J, a, k, N, p["amplitude"])
        theory = sc.magnon_frequency(J, a, k)
        cont = J * a * a * k * k
        rel = abs(w - theory) / theory if theory else abs(w)
        relc = abs(w - cont) / cont if cont else abs(w)
        rows.append((m, k, k * a, w, theory, cont, rel, relc))
        worst_lat = max(worst_lat, rel)
        if k * a <= cfg.tolerances["continuum_ka_max"] + 1e-12:
            worst_cont = max(worst_cont, relc)
    out.files["dispersion.csv"] = _csv(
        ["mode", "k", "ka", "omega_measured", "omega_lattice", "omega_continuum", "rel_lattice", "rel_continuum"], rows
    )
    out.check("lattice_rel", worst_lat, cfg.tolerances["lattice_rel"])
    out.check("continuum_rel", worst_cont, cfg.tolerances["continuum_rel"])
    return out


RUNNERS = {
    "zcc-check": run_zcc_check,
    "simulate": run_simulate,
    "hasimoto": run_hasimoto,
    "nhd-closure": run_nhd_closure,
    "nhd-scan": run_nhd_scan,
    "constraints": run_constraints,
    "dispersion": run_dispersion,
}


# -- execution ----------------------------------------------------------------


def _meta(cfg, out):
    return {
        "config": cfg.to_dict(),
        "library_version": __version__,
        "status": out.exit_code,
        "tolerance_outcomes": out.checks,
        "summary": out.summary,
        "notes": out.notes,
        "files": sorted(out.files),
    }


def _write(out_dir, files):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (out_dir / name).write_text(text)


def execute(cfg):
    """Run one configuration without touching the filesystem; returns an Outcome."""
    rng = np.random.default_rng(cfg.seed)
    try:
        out = RUNNERS[cfg.subcommand](cfg, rng)
    except NumericalBlowup as exc:
        out = Outcome(status=EXIT_BLOWUP, notes=[f"blow-up: {exc}"])
        if exc.state is not None:
            out.files["diagnostic.csv"] = _csv(["index", "value"], enumerate(np.ravel(np.abs(exc.state))))
    except (StabilityError, ConfigError) as exc:
        out = Outcome(status=EXIT_CONFIG, notes=[str(exc)])
    out.files["meta.json"] = json.dumps(_meta(cfg, out), indent=2, sort_keys=True, default=_fmt) + "\n"
    return out


def run(cfg, out_dir=None):
    """Run a configuration and write its artifacts; returns the exit status."""
    out_dir = out_dir or cfg.output or os.environ.get(ENV_OUTPUT) or os.path.join("runs", cfg.subcommand)
    if cfg.subcommand == "sweep":
        return run_sweep(cfg, out_dir)
    out = execute(cfg)
    _write(out_dir, out.files)
    return out.exit_code


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def _threads():
    raw = os.environ.get(ENV_THREADS)
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    if n < 1:
        raise ConfigError(f"{ENV_THREADS} must be positive")
    return n


def run_sweep(cfg, out_dir, threads=None):
    """Cartesian sweep over ``sweep.parameters``; one aggregated CSV row per run."""
    tmpl = cfg.sweep["template"]
    params = cfg.sweep.get("parameters", {})
    names = sorted(params)
    combos = list(itertools.product(*(params[n] for n in names))) if names else []
    if names and any(len(params[n]) == 0 for n in names):
        combos = []
    configs = []
    for combo in combos:
        data = copy.deepcopy(tmpl)
        for n, v in zip(names, combo):
            _set_path(data, n, v)
        data.setdefault("seed", cfg.seed)
        configs.append(data)

    def one(data):
        try:
            c = build_config(data["subcommand"], data)
        except ConfigError as exc:
            return Outcome(status=EXIT_CONFIG, notes=[str(exc)])
        return execute(c)

    with ThreadPoolExecutor(max_workers=threads or _threads()) as pool:
        results = list(pool.map(one, configs))
    keys = sorted({k for r in results for k in r.summary})
    header = ["index"] + names + ["status"] + keys
    rows = []
    for i, (combo, r) in enumerate(zip(combos, results)):
        rows.append([i, *[json.dumps(v) if isinstance(v, (list, dict)) else v for v in combo], r.exit_code]
                    + [r.summary.get(k, "") for k in keys])
    out_dir = Path(out_dir)
    files = {"sweep.csv": _csv(header, rows)}
    worst = max((r.exit_code for r in results), default=EXIT_OK)
    meta = {
        "config": cfg.to_dict(),
        "library_version": __version__,
        "status": worst,
        "runs": len(results),
        "child_status": [r.exit_code for r in results],
    }
    files["meta.json"] = json.dumps(meta, indent=2, sort_keys=True, default=_fmt) + "\n"
    _write(out_dir, files)
    return worst


# -- argument parsing ---------------------------------------------------------


def _range(text):
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError("range must look like LO..HI") from None
    return [lo, hi]


def build_parser():
    ap = argparse.ArgumentParser(prog="nhdnls", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, grid=True, time=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if grid:
            p.add_argument("--N", type=int)
            p.add_argument("--L", type=float)
        if time:
            p.add_argument("--dt", type=float)
            p.add_argument("--T", type=float, dest="T_final")
            p.add_argument("--snapshot-every", type=int)

    p = sub.add_parser("zcc-check", help="Lax-pair zero-curvature residuals")
    common(p)
    p.add_argument("system", nargs="?", choices=("nls", "ll"))
    p.add_argument("--rho", choices=("const", "tanh"))
    p.add_argument("--q", choices=("vacuum", "soliton"))
    p.add_argument("--with-f", action="store_true", help="apply the order-0 locality deformation")

    p = sub.add_parser("simulate", help="time evolution")
    common(p, time=True)
    p.add_argument("variant", nargs="?", choices=("nls", "inls", "vortex", "ll", "chain", "filament"))
    p.add_argument("--eta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-prime", type=float)
    p.add_argument("--drag", type=float)
    p.add_argument("--uniform", type=float, metavar="A0", help="uniform initial amplitude")
    p.add_argument("--soliton", type=float, metavar="A", help="soliton initial amplitude")
    p.add_argument("--scheme", choices=("rk4", "splitstep"))
    p.add_argument("--radius", type=float)

    p = sub.add_parser("hasimoto", help="Hasimoto map checks")
    common(p)
    p.add_argument("mode", nargs="?", choices=("forward", "inverse", "roundtrip"))

    p = sub.add_parser("nhd-closure", help="deformed EOM vs direct right-hand sides")
    common(p)
    p.add_argument("closure", nargs="?", choices=("hsc", "vortex", "vortex_local"))
    p.add_argument("--samples", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-prime", type=float)

    p = sub.add_parser("nhd-scan", help="spectral-order classification")
    common(p)
    p.add_argument("kind", nargs="?", choices=("continuum", "discrete"))
    p.add_argument("--range", type=_range, metavar="LO..HI")

    p = sub.add_parser("constraints", help="first-order constraint calculus")
    common(p)
    p.add_argument("which", nargs="?", choices=("r04", "r07", "casimir", "all"))

    p = sub.add_parser("dispersion", help="magnon dispersion of the chain")
    common(p, grid=False)
    p.add_argument("--J", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--modes", type=int, nargs="+")

    p = sub.add_parser("sweep", help="parameter sweep over a template config")
    common(p, grid=False)
    p.add_argument("--template", help="JSON config of the run to sweep")
    p.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="PATH=V1,V2",
        help="dotted path and comma-separated JSON values, or a JSON array",
    )
    return ap


def _overrides(args):
    ov = {"grid": {}, "time": {}, "problem": {}, "deformation": {}}
    for k in ("N", "L"):
        if getattr(args, k, None) is not None:
            ov["grid"][k] = getattr(args, k)
    for k in ("dt", "T_final", "snapshot_every"):
        if getattr(args, k, None) is not None:
            ov["time"][k] = getattr(args, k)
    pos = {"zcc-check": "system", "simulate": "variant", "hasimoto": "mode", "nhd-closure": "closure",
           "nhd-scan": "kind", "constraints": "which"}.get(args.subcommand)
    if pos and getattr(args, pos, None) is not None:
        ov["problem"][pos] = getattr(args, pos)
    for k in ("rho", "q", "eta", "alpha", "alpha_prime", "drag", "scheme", "radius", "samples", "range", "J", "a", "modes"):
        v = getattr(args, k, None)
        if v is not None:
            ov["problem"][k] = v
    if args.subcommand == "zcc-check" and args.with_f:
        ov["deformation"]["f"] = True
    if args.subcommand == "simulate":
        if args.uniform is not None:
            ov["problem"]["initial"] = {"kind": "uniform", "amplitude": args.uniform}
        elif args.soliton is not None:
            ov["problem"]["initial"] = {"kind": "soliton", "amplitude": args.soliton, "velocity": 0.5}
    if getattr(args, "seed", None) is not None:
        ov["seed"] = args.seed
    return {k: v for k, v in ov.items() if v != {}}


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _sweep_overrides(args):
    ov = {}
    if args.template:
        ov.setdefault("sweep", {})["template"] = _read_json(args.template)
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param expects PATH=V1,V2, got {item!r}")
        path, raw = item.split("=", 1)
        try:
            if raw.startswith("["):
                vals = json.loads(raw)
            else:
                vals = [] if raw == "" else [json.loads(v) for v in raw.split(",")]
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse values for {path}: {exc}") from None
        ov.setdefault("sweep", {}).setdefault("parameters", {})[path] = vals
    if args.seed is not None:
        ov["seed"] = args.seed
    return ov


def _normalize_argv(argv):
    # "--range -3..3" would otherwise parse the value as an option
    out = []
    it = iter(argv)
    for a in it:
        if a == "--range":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--range={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None):
    argv = _normalize_argv(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        data = _read_json(args.config) if args.config else {}
        if args.subcommand == "sweep":
            cfg = build_config("sweep", data, _sweep_overrides(args))
        else:
            cfg = build_config(args.subcommand, data, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        status = run(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    labels = {0: "ok", 1: "tolerance failure", 2: "invalid config", 3: "numerical blow-up"}
    print(f"{cfg.subcommand}: {labels.get(status, status)}")
    return status


if __name__ == "__main__":
    sys.exit(main())

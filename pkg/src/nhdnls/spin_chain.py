"""Classical Heisenberg chain with per-bond couplings.

Spins live on a periodic ring; bond ``i`` joins sites ``i`` and ``i+1`` with
coupling ``rho[i]``, so ``H = -sum_i rho_i S_i . S_{i+1}``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NumericalBlowup, StabilityError
from .fields import Grid, GridField, derivative
from .su2_lax import (
    LaurentMatrixField,
    MatrixGridField,
    check_unit_spin,
    commutator,
    order_support,
    spin_matrix,
    spin_vector,
)

UNIT_TOL = 1e-12
SLOW_VARIATION = 0.2
LINEAR_AMPLITUDE = 0.1


def _normalize(spins):
    return spins / np.linalg.norm(spins, axis=1, keepdims=True)


@dataclass(frozen=True)
class SpinLattice:
    """Periodic chain of unit spins; ``rho[i]`` couples sites ``i`` and ``i+1``."""

    spins: np.ndarray
    rho: np.ndarray
    a: float = 1.0

    def __post_init__(self):
        s = np.array(self.spins, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3 or s.shape[0] < 2:
            raise ValueError("spins must have shape (N, 3) with N >= 2")
        if not np.all(np.isfinite(s)):
            raise ValueError("spins contain NaN or Inf")
        norms = np.linalg.norm(s, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-length spin")
        rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (s.shape[0],)).copy()
        if not np.all(np.isfinite(rho)):
            raise ValueError("couplings must be finite")
        if self.a <= 0:
            raise ValueError("lattice spacing must be positive")
        s = s / norms[:, None]
        s.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "spins", s)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def homogeneous(cls, spins, J=1.0, a=1.0):
        spins = np.asarray(spins, dtype=float)
        return cls(spins, np.full(spins.shape[0], J), a)

    @property
    def n_sites(self):
        return self.spins.shape[0]

    @property
    def length(self):
        return self.n_sites * self.a

    @property
    def positions(self):
        return np.arange(self.n_sites) * self.a

    def with_spins(self, spins):
        return SpinLattice(spins, self.rho, self.a)


def _local_field(spins, rho):
    return np.roll(rho, 1)[:, None] * np.roll(spins, 1, axis=0) + rho[:, None] * np.roll(spins, -1, axis=0)


def chain_rhs_array(spins, rho):
    return np.cross(spins, _local_field(spins, rho))


def chain_rhs(lat):
    """``dS_i/dt = S_i x (rho_{i-1} S_{i-1} + rho_i S_{i+1})``."""
    return chain_rhs_array(lat.spins, lat.rho)


def chain_energy(lat):
    return float(-np.sum(lat.rho * np.einsum("ij,ij->i", lat.spins, np.roll(lat.spins, -1, axis=0))))


def total_spin(lat):
    return lat.spins.sum(axis=0)


def chain_max_dt(lat):
    top = float(np.max(np.abs(lat.rho)))
    return np.inf if top == 0 else 0.1 / top


def step_chain(lat, dt):
    """One RK4 step followed by per-site renormalization."""
    if dt <= 0:
        raise StabilityError("dt must be positive")
    if dt > chain_max_dt(lat) * (1 + 1e-12):
        raise StabilityError(f"dt={dt:g} exceeds 0.1/max|rho|={chain_max_dt(lat):g}")
    s, rho = lat.spins, lat.rho
    k1 = chain_rhs_array(s, rho)
    k2 = chain_rhs_array(s + 0.5 * dt * k1, rho)
    k3 = chain_rhs_array(s + 0.5 * dt * k2, rho)
    k4 = chain_rhs_array(s + dt * k3, rho)
    new = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowup("non-finite spins", state=s)
    return lat.with_spins(_normalize(new))


def evolve_chain(lat, dt, t_final, log_every=0):
    """Fixed-step run; returns the final lattice and ``{t, energy, Sx, Sy, Sz}`` series."""
    steps = int(round(t_final / dt))
    if not np.isclose(steps * dt, t_final, rtol=1e-10, atol=1e-14):
        raise ValueError("t_final must be an integer multiple of dt")
    log = {"t": [], "energy": [], "Sx": [], "Sy": [], "Sz": []}

    def record(t, cur):
        tot = total_spin(cur)
        log["t"].append(t)
        log["energy"].append(chain_energy(cur))
        for k, c in zip(("Sx", "Sy", "Sz"), tot):
            log[k].append(float(c))

    record(0.0, lat)
    for i in range(1, steps + 1):
        try:
            lat = step_chain(lat, dt)
        except NumericalBlowup as exc:
            raise NumericalBlowup(str(exc), step=i, t=i * dt, state=exc.state) from None
        if log_every and i % log_every == 0:
            record(i * dt, lat)
    if not log_every or steps % log_every:
        record(steps * dt, lat)
    return lat, log


def spin_wave(n_sites, k, a=1.0, amplitude=1e-3, J=1.0):
    """Small transverse wave ``(eps cos kx, eps sin kx, sqrt(1-eps^2))`` on a homogeneous ring."""
    x = np.arange(n_sites) * a
    c = np.sqrt(1.0 - amplitude**2)
    spins = np.stack([amplitude * np.cos(k * x), amplitude * np.sin(k * x), np.full(n_sites, c)], axis=1)
    return SpinLattice.homogeneous(spins, J, a)


def magnon_frequency(J, a, k):
    """Linear spin-wave frequency ``2J(1 - cos ka)``."""
    return 2.0 * J * (1.0 - np.cos(k * a))


def magnon_dispersion(J, a, k, n_sites=256, amplitude=1e-3, periods=1.0, samples=64):
    """Measure the precession frequency of a small spin wave of wavenumber ``k``.

    ``k`` must be a lattice mode ``2 pi m / (n_sites a)``.  The frequency is
    the slope of the unwrapped phase of the mode amplitude.
    """
    if amplitude > LINEAR_AMPLITUDE:
        raise ValueError(f"amplitude {amplitude} too large for the linear regime (max {LINEAR_AMPLITUDE})")
    m = k * n_sites * a / (2.0 * np.pi)
    if abs(m - round(m)) > 1e-9:
        raise ValueError("k is not commensurate with the ring")
    lat = spin_wave(n_sites, k, a, amplitude, J)
    guess = magnon_frequency(J, a, k)
    window = periods * 2.0 * np.pi / guess if guess > 1e-12 else 1.0
    dt = min(chain_max_dt(lat), window / (samples * 8))
    per = max(1, int(np.ceil(window / samples / dt)))
    x = lat.positions
    phase_ref = np.exp(-1j * k * x)
    ts, ph = [], []
    t = 0.0
    for _ in range(samples + 1):
        amp = np.sum((lat.spins[:, 0] + 1j * lat.spins[:, 1]) * phase_ref)
        ts.append(t)
        ph.append(np.angle(amp))
        for _ in range(per):
            lat = step_chain(lat, dt)
        t += per * dt
    slope = np.polyfit(np.array(ts), np.unwrap(np.array(ph)), 1)[0]
    return float(abs(slope))


# -- continuum embedding ------------------------------------------------------


def _pow2_at_least(n):
    return 1 << int(np.ceil(np.log2(max(n, 8))))


def coarse_grain(lat, n_grid=None, check=True):
    """Periodic cubic-spline interpolation of the spins onto a power-of-2 grid.

    Returns three real GridFields on ``Grid(n_grid, N a)``, renormalized to
    unit length.  Raises ValueError when neighbouring spins differ by more
    than 0.2 (the chain is not slowly varying).
    """
    s = lat.spins
    jump = float(np.max(np.linalg.norm(np.roll(s, -1, axis=0) - s, axis=1)))
    if check and jump > SLOW_VARIATION:
        raise ValueError(f"chain is not slowly varying (max neighbour jump {jump:.3f} > {SLOW_VARIATION})")
    n_grid = n_grid or _pow2_at_least(lat.n_sites)
    grid = Grid(n_grid, lat.length)
    xs = np.append(lat.positions, lat.length)
    ys = np.vstack([s, s[:1]])
    spline = CubicSpline(xs, ys, axis=0, bc_type="periodic")
    vals = _normalize(spline(grid.x))
    return tuple(GridField(vals[:, k], grid, real_valued=True) for k in range(3))


def sample_back(tfield, lat):
    """Evaluate a tangent field (three GridFields) at the lattice sites."""
    grid = tfield[0].grid
    xs = np.append(grid.x, grid.origin + grid.length)
    out = []
    for f in tfield:
        v = np.append(f.values.real, f.values[0].real)
        out.append(CubicSpline(xs, v, bc_type="periodic")(lat.positions))
    return _normalize(np.stack(out, axis=1))


def coupling_profile(lat, grid=None):
    """Continuum coupling ``rho(x_i) = rho_i a^2``, spline-interpolated."""
    grid = grid or Grid(_pow2_at_least(lat.n_sites), lat.length)
    xs = np.append(lat.positions, lat.length)
    ys = np.append(lat.rho, lat.rho[0]) * lat.a**2
    return GridField(CubicSpline(xs, ys, bc_type="periodic")(grid.x), grid, real_valued=True)


def angular_discrepancy(t1, t2):
    """Max angle between two unit-vector fields given as (N, 3) arrays."""
    dot = np.clip(np.einsum("ij,ij->i", t1, t2), -1.0, 1.0)
    cross = np.linalg.norm(np.cross(t1, t2), axis=1)
    return float(np.max(np.arctan2(cross, dot)))


def chain_vs_continuum(lat, t_final, dt):
    """Evolve the chain and its coarse-grained LL counterpart side by side.

    Needs a homogeneous chain with ``J a^2 = 1`` so both flows share a time
    unit.  Returns the max angle (rad) between the chain spins and the LL
    field sampled back at the sites after ``t_final``.
    """
    from .solvers import step_ll

    J = float(lat.rho[0])
    if not np.allclose(lat.rho, J) or not np.isclose(J * lat.a**2, 1.0):
        raise ValueError("needs a homogeneous chain with J a^2 = 1")
    steps = int(round(t_final / dt))
    comps = coarse_grain(lat)
    grid = comps[0].grid
    vecs = np.stack([c.values.real for c in comps], axis=1)
    for _ in range(steps):
        lat = step_chain(lat, dt)
        vecs = step_ll(vecs, dt, grid.length)
    back = sample_back(tuple(GridField(vecs[:, k], grid, real_valued=True) for k in range(3)), lat)
    return angular_discrepancy(lat.spins, back)


# -- lattice CSV --------------------------------------------------------------


def lattice_to_csv(lat, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "Sx", "Sy", "Sz", "rho_bond"])
    for i, (s, r) in enumerate(zip(lat.spins, lat.rho)):
        w.writerow([i] + [f"{v:.17g}" for v in s] + [f"{r:.17g}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def lattice_from_csv(source, a=1.0):
    text = source if "\n" in source else open(source).read()
    rows = list(csv.DictReader(io.StringIO(text)))
    spins = np.array([[float(r["Sx"]), float(r["Sy"]), float(r["Sz"])] for r in rows])
    rho = np.array([float(r["rho_bond"]) for r in rows])
    return SpinLattice(spins, rho, a)


# -- deformed continuum LL ----------------------------------------------------


@dataclass
class DiscreteDeformation:
    """``n -> alpha^(n)``: complex su(2) vectors ``(N, 3)`` with ``Lambda^(n) = alpha^(n) . sigma``."""

    terms: dict = field(default_factory=dict)

    def matrix(self, n, n_nodes):
        a = self.terms.get(n)
        if a is None:
            return np.zeros((n_nodes, 2, 2), dtype=complex)
        a = np.asarray(a, dtype=complex)
        if a.shape == (3,):
            a = np.broadcast_to(a, (n_nodes, 3))
        return spin_matrix(a)

    @classmethod
    def from_matrices(cls, mats):
        return cls({n: spin_vector(np.asarray(m)) for n, m in mats.items()})


def _comm(x, y):
    return x @ y - y @ x


def deformed_ll_rhs(S, d):
    """``(1/2i)[S, S_xx] + (1/2) Lambda^(1)_x - i [S, Lambda^(0)]``.

    Only orders 0 and 1 of ``d`` are read.
    """
    check_unit_spin(S, 1e-8)
    L = S.grid.length
    s = S.values
    sxx = derivative(s, L, 2)
    out = -0.5j * _comm(s, sxx)
    lam1 = d.matrix(1, S.grid.n)
    lam0 = d.matrix(0, S.grid.n)
    out = out + 0.5 * derivative(lam1, L, 1) - 1j * _comm(s, lam0)
    return MatrixGridField(out, S.grid)


def recursive_constraint_residual(S, d, n):
    """``Lambda^(n)_s - i [S, Lambda^(n-1)]``; absent orders count as zero."""
    N = S.grid.n
    lam_n = d.matrix(n, N)
    lam_prev = d.matrix(n - 1, N)
    return MatrixGridField(derivative(lam_n, S.grid.length, 1) - 1j * _comm(S.values, lam_prev), S.grid)


def random_unit_field(grid, rng, modes=3):
    """Smooth random periodic unit-vector field, shape (N, 3).

    Built from trigonometric polar and azimuthal angles, so the spectrum
    decays faster than any exponential and the field stays resolved.
    """
    th = 2.0 * np.pi * (grid.x - grid.origin) / grid.length
    theta = np.full(grid.n, 0.8)
    phi = np.zeros(grid.n)
    for m in range(1, modes + 1):
        c = rng.normal(size=4)
        theta += 0.3 * (c[0] * np.cos(m * th) + c[1] * np.sin(m * th)) / m
        phi += (c[2] * np.cos(m * th) + c[3] * np.sin(m * th)) / m
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=1)


def _random_su2(grid, rng, modes=3):
    x = grid.x
    out = np.zeros((grid.n, 3), dtype=complex)
    for m in range(modes + 1):
        th = 2.0 * np.pi * m * (x - grid.origin) / grid.length
        for k in range(3):
            a = rng.normal() + 1j * rng.normal()
            b = rng.normal() + 1j * rng.normal()
            out[:, k] += (a * np.cos(th) + b * np.sin(th)) / (1 + m)
    return out


def discrete_spectral_scan(S=None, n_range=range(-2, 4), seed=0, tol=1e-9, grid=None):
    """Classify LL-pair deformation orders ``n`` by where ``(i/2) lam^n Lambda`` lands.

    ``S`` is an (N, 3) unit-vector field or a MatrixGridField; a random
    smooth field is drawn when omitted.
    """
    from .nhd import ScanReport

    rng = np.random.default_rng(seed)
    if S is None:
        grid = grid or Grid(256, 2.0 * np.pi)
        svec = random_unit_field(grid, rng)
        smat = spin_matrix(svec)
    elif isinstance(S, MatrixGridField):
        grid = S.grid
        smat = S.values
    else:
        svec = np.asarray(S, dtype=float)
        grid = grid or Grid(svec.shape[0], 2.0 * np.pi)
        smat = spin_matrix(svec)
    L = grid.length
    sx = derivative(smat, L, 1)
    U = LaurentMatrixField({1: 1j * smat}, grid)
    V = LaurentMatrixField({1: -(sx @ smat), 2: 2j * smat}, grid)
    # generic tangent motion S_t = [S, W] keeps S^2 = I to first order
    w = spin_matrix(_random_su2(grid, rng))
    U_t = LaurentMatrixField({1: 1j * _comm(smat, w)}, grid)
    undeformed = U_t - V.x_derivative() + commutator(U, V)
    scale = max(U.max_norm(), V.max_norm(), U_t.max_norm(), 1.0)
    dynamical = sorted(order_support(undeformed, tol, scale))
    report = ScanReport(dynamical_sectors=dynamical, eom_order=sorted(order_support(U_t, tol, scale)), kind="discrete")
    for n in sorted(n_range):
        alpha = _random_su2(grid, rng)
        dV = LaurentMatrixField({n: 0.5j * spin_matrix(alpha)}, grid)
        contrib = commutator(U, dV) - dV.x_derivative()
        touches = sorted(order_support(contrib, tol, scale * max(dV.max_norm(), 1.0)))
        enters = bool(set(touches) & set(dynamical))
        entry = {
            "order": n,
            "touches": touches,
            "residual_norms": {str(k): v for k, v in contrib.order_norms().items()},
            "classification": "eom_modifying" if enters else ("pure_constraint" if touches else "inert"),
            "enters_eom": enters,
        }
        structure = []
        for m in touches:
            if m in dynamical:
                continue
            structure.append(_ll_constraint(grid, smat, m, rng))
        entry["constraint_structure"] = structure
        if enters:
            entry["eom_term"] = _ll_eom_term(grid, smat, n, alpha)
        else:
            entry["recursion_depth"] = int(min(abs(m - d) for m in touches for d in dynamical))
        report.entries.append(entry)
    return report


def _ll_constraint(grid, smat, m, rng):
    """Sector ``m`` equals ``-(i/2)(Lambda^(m)_s - i[S, Lambda^(m-1)])``; checked on random data."""
    a_m = spin_matrix(_random_su2(grid, rng))
    a_prev = spin_matrix(_random_su2(grid, rng))
    U = LaurentMatrixField({1: 1j * smat}, grid)
    dV = LaurentMatrixField({m: 0.5j * a_m, m - 1: 0.5j * a_prev}, grid)
    got = (commutator(U, dV) - dV.x_derivative()).coefficient(m)
    expect = -0.5j * (derivative(a_m, grid.length, 1) - 1j * _comm(smat, a_prev))
    err = float(np.max(np.abs(got - expect)))
    return {
        "sector": m,
        "form": f"Lambda^({m})_s - i[S, Lambda^({m - 1})] = 0",
        "couples_orders": [m - 1, m],
        "verified": err <= 1e-8 * max(1.0, float(np.max(np.abs(got)))),
        "verification_error": err,
    }


def _ll_eom_term(grid, smat, n, alpha):
    """Coefficient with which order ``n`` enters ``S_t`` (read from the order-1 row)."""
    lam = spin_matrix(alpha)
    U = LaurentMatrixField({1: 1j * smat}, grid)
    dV = LaurentMatrixField({n: 0.5j * lam}, grid)
    row = (commutator(U, dV) - dV.x_derivative()).coefficient(1)
    # the order-1 row is i S_t + ..., so the extra S_t is i * row
    extra = 1j * row
    if n == 0:
        basis, label = _comm(smat, lam), "[S, Lambda^(0)]"
    else:
        basis, label = derivative(lam, grid.length, 1), "Lambda^(1)_s"
    b = basis.ravel()
    c = complex(np.vdot(b, extra.ravel()) / np.vdot(b, b))
    mis = float(np.max(np.abs(extra - c * basis)))
    return {"term": label, "coefficient": [c.real, c.imag], "misfit": mis}

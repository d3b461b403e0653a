"""Method-of-lines integrators for the NLS family and the continuum spin equation.

All spatial derivatives are Fourier-spectral.  Time stepping is classical
RK4; a Strang split-step Fourier scheme is provided for the standard cubic
NLS as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalBlowup, StabilityError
from .fields import Grid, GridField, dealias, derivative

VARIANTS = ("standard", "inhomogeneous", "vortex", "deformed_r01", "deformed_rr1")

# RK4 is stable on the imaginary axis up to |z| = 2*sqrt(2); with
# k_max = pi/dx this bounds dt*|c|/dx^2 by 2*sqrt(2)/pi^2 ~ 0.287.
DEFAULT_CFL = 0.25


def as_callable(value):
    if value is None:
        return lambda t: 0.0
    if callable(value):
        return value
    return lambda t, _v=value: _v


def _values(f, n):
    if isinstance(f, GridField):
        return f.values
    return np.broadcast_to(np.asarray(f), (n,))


@dataclass
class NlsProblem:
    """One of the NLS-type equations together with its parameters.

    Only the parameters of the chosen ``variant`` may be set:

    * ``standard``: ``eta`` (constant or GridField)
    * ``inhomogeneous``: ``rho`` (GridField)
    * ``vortex``: ``alpha``, ``alpha_prime``, ``drag`` (A(t))
    * ``deformed_r01``: ``source_T``
    * ``deformed_rr1``: ``source_T``, ``source_G``
    """

    variant: str
    grid: Grid
    eta: object = None
    rho: GridField | None = None
    alpha: float | None = None
    alpha_prime: float | None = None
    drag: object = None
    source_T: object = None
    source_G: object = None
    lower_limit: str = "left"
    quadrature: str = "trapezoid"
    dealias: bool = True
    cfl: float = DEFAULT_CFL

    _PARAMS = {
        "standard": {"eta"},
        "inhomogeneous": {"rho"},
        "vortex": {"alpha", "alpha_prime", "drag"},
        "deformed_r01": {"source_T"},
        "deformed_rr1": {"source_T", "source_G"},
    }

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        allowed = self._PARAMS[self.variant]
        for name in ("eta", "rho", "alpha", "alpha_prime", "drag", "source_T", "source_G"):
            if getattr(self, name) is not None and name not in allowed:
                raise ValueError(f"parameter {name!r} does not belong to variant {self.variant!r}")
        if self.variant == "standard" and self.eta is None:
            self.eta = 1.0
        if self.variant == "inhomogeneous" and self.rho is None:
            raise ValueError("inhomogeneous variant needs rho")
        if self.variant == "vortex":
            self.alpha = 0.0 if self.alpha is None else float(self.alpha)
            self.alpha_prime = 0.0 if self.alpha_prime is None else float(self.alpha_prime)
            for v in (self.alpha, self.alpha_prime):
                if not 0.0 <= v < 1.0:
                    raise ValueError("friction coefficients must lie in [0, 1)")
        if self.rho is not None and self.rho.grid != self.grid:
            raise ValueError("rho lives on a different grid")

    def dispersion_scale(self):
        """Magnitude of the coefficient in front of q_xx."""
        if self.variant == "inhomogeneous":
            return float(np.max(np.abs(self.rho.values)))
        if self.variant == "vortex":
            return abs(1j * (1.0 - self.alpha_prime) + self.alpha)
        return 1.0

    def max_dt(self):
        return self.cfl * self.grid.dx**2 / self.dispersion_scale()


# -- right-hand sides ---------------------------------------------------------


def _nonlinear(values, on):
    return dealias(values) if on else values


def rhs_standard(q, eta=1.0, dealias=False):
    """``q_t = i q_xx + 2 i eta |q|^2 q``."""
    qv = q.values
    qxx = derivative(qv, q.length, 2, "spectral", q.aperiodic)
    nl = _nonlinear(2j * _values(eta, q.n) * np.abs(qv) ** 2 * qv, dealias)
    return GridField(1j * qxx + nl, q.grid)


def inhomogeneous_integral(q, rho, lower="left", quadrature="trapezoid"):
    """``int^x rho_x' |q|^2 dx'`` on the grid."""
    rho_x = derivative(_values(rho, q.n), q.length, 1, "spectral", _aperiodic(rho))
    return _cumulative(rho_x * np.abs(q.values) ** 2, q, lower, quadrature)


def _aperiodic(f):
    return isinstance(f, GridField) and f.aperiodic


def _cumulative(values, q, lower, quadrature):
    from .fields import cumint

    return cumint(GridField(values, q.grid), lower=lower, method=quadrature).values


def rhs_inhomogeneous(q, rho, lower="left", quadrature="trapezoid", dealias=False, require_real=False):
    """``q_t = i (rho q)_xx + 2 i rho q |q|^2 + 2 i q int^x rho_x' |q|^2``."""
    rv = _values(rho, q.n)
    if require_real and np.any(np.abs(np.imag(rv)) > 0):
        raise ValueError("rho must be real-valued")
    qv = q.values
    aper = q.aperiodic and _aperiodic(rho)
    lin = 1j * derivative(rv * qv, q.length, 2, "spectral", aper)
    integral = inhomogeneous_integral(q, rho, lower, quadrature)
    nl = _nonlinear(2j * rv * np.abs(qv) ** 2 * qv + 2j * qv * integral, dealias)
    return GridField(lin + nl, q.grid)


def vortex_integral(q, lower="left", quadrature="trapezoid"):
    """``int^x (q q*_x' - q* q_x') dx'`` (purely imaginary)."""
    qv = q.values
    qx = derivative(qv, q.length, 1, "spectral", q.aperiodic)
    return _cumulative(qv * np.conj(qx) - np.conj(qv) * qx, q, lower, quadrature)


def vortex_coefficients(alpha, alpha_prime):
    """``(dispersion, cubic)`` coefficients of the filament equation."""
    disp = 1j * (1.0 - alpha_prime) + alpha
    cubic = 0.5j * (1.0 - alpha_prime) - alpha
    return disp, cubic


def rhs_vortex(q, alpha, alpha_prime, drag=0.0, t=0.0, lower="left", quadrature="trapezoid", dealias=False):
    """Filament NLS with friction:

    ``q_t = i A q + {i(1-a') + a} q_xx + {(i/2)(1-a') - a} q|q|^2
    - (a/2) q int^x (q q*_x' - q* q_x')``.
    """
    disp, cubic = vortex_coefficients(alpha, alpha_prime)
    qv = q.values
    A = as_callable(drag)(t)
    qxx = derivative(qv, q.length, 2, "spectral", q.aperiodic)
    nl = cubic * np.abs(qv) ** 2 * qv
    if alpha != 0.0:
        nl = nl - 0.5 * alpha * qv * vortex_integral(q, lower, quadrature)
    return GridField(1j * A * qv + disp * qxx + _nonlinear(nl, dealias), q.grid)


def rhs_deformed_r01(p, source_T=0.0, t=0.0, dealias=False):
    """``i p_t + p_xx - 2 p|p|^2 = 2 T(t) p`` solved for ``p_t``."""
    pv = p.values
    T = as_callable(source_T)(t)
    pxx = derivative(pv, p.length, 2, "spectral", p.aperiodic)
    nl = _nonlinear(-2.0 * np.abs(pv) ** 2 * pv, dealias)
    return GridField(1j * (pxx + nl - 2.0 * T * pv), p.grid)


def rhs_deformed_rr1(p, source_T=0.0, source_G=0.0, t=0.0, dealias=False):
    """``i p_t + p_xx + 2 p|p|^2 = 2 T p - (i/2) G p_x`` solved for ``p_t``."""
    pv = p.values
    T = as_callable(source_T)(t)
    G = as_callable(source_G)(t)
    px = derivative(pv, p.length, 1, "spectral", p.aperiodic)
    pxx = derivative(pv, p.length, 2, "spectral", p.aperiodic)
    nl = _nonlinear(2.0 * np.abs(pv) ** 2 * pv, dealias)
    return GridField(1j * (pxx + nl - 2.0 * T * pv + 0.5j * G * px), p.grid)


def problem_rhs(problem, q, t=0.0):
    pr = problem
    if pr.variant == "standard":
        return rhs_standard(q, pr.eta, pr.dealias)
    if pr.variant == "inhomogeneous":
        return rhs_inhomogeneous(q, pr.rho, pr.lower_limit, pr.quadrature, pr.dealias)
    if pr.variant == "vortex":
        return rhs_vortex(q, pr.alpha, pr.alpha_prime, pr.drag, t, pr.lower_limit, pr.quadrature, pr.dealias)
    if pr.variant == "deformed_r01":
        return rhs_deformed_r01(q, pr.source_T, t, pr.dealias)
    return rhs_deformed_rr1(q, pr.source_T, pr.source_G, t, pr.dealias)


# -- time stepping ------------------------------------------------------------


def _check_finite(values, where, t=None, step=None):
    if not np.all(np.isfinite(values)):
        raise NumericalBlowup(f"non-finite values in {where}", step=step, t=t, state=values)


def _rk4(f, y, t, dt):
    k1 = f(y, t)
    k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y + dt * k3, t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _split_step(problem, qv, dt):
    grid = problem.grid
    eta = _values(problem.eta, grid.n)
    k = grid.wavenumbers
    half = np.exp(1j * eta * np.abs(qv) ** 2 * dt)
    qv = qv * half
    qv = np.fft.ifft(np.exp(-1j * k**2 * dt) * np.fft.fft(qv))
    return qv * np.exp(1j * eta * np.abs(qv) ** 2 * dt)


def step(problem, q, dt, scheme="rk4", t=0.0):
    """Advance ``q`` by one step of size ``dt``."""
    if scheme == "splitstep":
        if problem.variant != "standard":
            raise ValueError("split-step is only available for the standard variant")
        out = _split_step(problem, q.values, dt)
    elif scheme == "rk4":
        if dt > problem.max_dt() * (1 + 1e-12):
            raise StabilityError(f"dt={dt:g} exceeds the RK4 bound {problem.max_dt():g}")
        aper = q.aperiodic

        def f(v, s):
            _check_finite(v, "rk4 stage", t=s)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    return problem_rhs(problem, GridField(v, problem.grid, real_valued=False, aperiodic=aper), s).values
            except ValueError as exc:
                if "NaN or Inf" not in str(exc):
                    raise
                raise NumericalBlowup("non-finite right-hand side", t=s, state=v) from exc

        out = _rk4(f, q.values.astype(complex), t, dt)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    _check_finite(out, "step", t=t + dt)
    return GridField(out, problem.grid, real_valued=False, aperiodic=q.aperiodic)


@dataclass
class EvolutionLog:
    t: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy_proxy: list = field(default_factory=list)
    linf: list = field(default_factory=list)
    tail_mass: list = field(default_factory=list)
    weighted_mass: list = field(default_factory=list)
    snapshot_every: int = 0

    def record(self, t, q, problem):
        qv = q.values
        dx = q.dx
        a2 = np.abs(qv) ** 2
        if self.t and t < self.t[-1]:
            raise ValueError("log times must be monotone")
        qx = derivative(qv, q.length, 1, "spectral", q.aperiodic)
        eta = energy_eta(problem)
        edge = max(1, q.n // 16)
        self.t.append(float(t))
        self.mass.append(float(np.sum(a2) * dx))
        self.energy_proxy.append(float(np.sum(np.abs(qx) ** 2 - eta * a2**2) * dx))
        self.linf.append(float(np.max(np.abs(qv))))
        self.tail_mass.append(float((np.sum(a2[:edge]) + np.sum(a2[-edge:])) * dx))
        if problem.variant == "inhomogeneous":
            self.weighted_mass.append(float(np.sum(np.real(problem.rho.values) * a2) * dx))

    def as_dict(self):
        out = {
            "t": self.t,
            "mass": self.mass,
            "energy_proxy": self.energy_proxy,
            "linf": self.linf,
            "tail_mass": self.tail_mass,
            "snapshot_every": self.snapshot_every,
        }
        if self.weighted_mass:
            out["weighted_mass"] = self.weighted_mass
        return out


def energy_eta(problem):
    if problem.variant == "standard":
        return float(np.mean(np.real(_values(problem.eta, problem.grid.n))))
    if problem.variant == "inhomogeneous":
        return float(np.mean(np.real(problem.rho.values)))
    if problem.variant == "vortex":
        return 0.25 * (1.0 - problem.alpha_prime)
    if problem.variant == "deformed_r01":
        return -1.0
    return 1.0


def evolve(problem, q0, dt, t_final, scheme="rk4", snapshot_every=0, log_every=1, t0=0.0):
    """Integrate to ``t_final``; returns ``(q, log, snapshots)``.

    ``snapshots`` is a list of ``(t, GridField)`` taken every
    ``snapshot_every`` steps (0 disables them).
    """
    nsteps = int(round((t_final - t0) / dt))
    if nsteps < 0 or abs(t0 + nsteps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ValueError("t_final - t0 must be a non-negative multiple of dt")
    log = EvolutionLog(snapshot_every=snapshot_every)
    snaps = []
    q = q0
    log.record(t0, q, problem)
    if snapshot_every:
        snaps.append((t0, q))
    for i in range(1, nsteps + 1):
        t = t0 + (i - 1) * dt
        try:
            q = step(problem, q, dt, scheme, t)
        except NumericalBlowup as exc:
            exc.step = i
            raise
        tn = t0 + i * dt
        if log_every and (i % log_every == 0 or i == nsteps):
            log.record(tn, q, problem)
        if snapshot_every and i % snapshot_every == 0:
            snaps.append((tn, q))
    return q, log, snaps


# -- continuum Landau-Lifshitz ------------------------------------------------


def _as_vectors(tfield):
    if isinstance(tfield, np.ndarray):
        return tfield, None
    comps = list(tfield)
    return np.stack([c.values for c in comps], axis=-1), comps[0].grid


def _like(vecs, grid, template):
    if grid is None:
        return vecs
    return tuple(GridField(vecs[:, i], grid) for i in range(3))


def ll_rhs_array(vecs, length, method="spectral"):
    tss = derivative(vecs, length, 2, method)
    return np.cross(vecs, tss)


def rhs_ll(tfield, length=None, tol=1e-8):
    """``t x t_ss`` for a unit tangent field.

    ``tfield`` is either three real GridFields or an ``(N, 3)`` array (then
    ``length`` is required).
    """
    vecs, grid = _as_vectors(tfield)
    L = grid.length if grid is not None else length
    dev = np.max(np.abs(np.linalg.norm(vecs, axis=-1) - 1.0))
    if dev > tol:
        raise ValueError(f"tangent field is not unit length (deviation {dev:.3e})")
    return _like(ll_rhs_array(vecs, L), grid, tfield)


def _renormalize(vecs):
    return vecs / np.linalg.norm(vecs, axis=-1, keepdims=True)


def ll_max_dt(length, n, cfl=DEFAULT_CFL):
    return cfl * (length / n) ** 2


def step_ll(tfield, dt, length=None, cfl=DEFAULT_CFL):
    """One RK4 step of ``t_u = t x t_ss`` followed by renormalization."""
    vecs, grid = _as_vectors(tfield)
    L = grid.length if grid is not None else length
    n = vecs.shape[0]
    if dt > ll_max_dt(L, n, cfl) * (1 + 1e-12):
        raise StabilityError(f"dt={dt:g} exceeds the bound {ll_max_dt(L, n, cfl):g}")
    out = _rk4(lambda v, s: ll_rhs_array(v, L), vecs, 0.0, dt)
    _check_finite(out, "step_ll")
    return _like(_renormalize(out), grid, tfield)


def ll_energy(tfield, length=None):
    """``int |t_s|^2 ds``."""
    vecs, grid = _as_vectors(tfield)
    L = grid.length if grid is not None else length
    ts = derivative(vecs, L, 1)
    return float(np.sum(ts**2) * L / vecs.shape[0])


def evolve_ll(tfield, dt, t_final, length=None, cfl=DEFAULT_CFL):
    vecs, grid = _as_vectors(tfield)
    L = grid.length if grid is not None else length
    nsteps = int(round(t_final / dt))
    energy = [ll_energy(vecs, L)]
    for _ in range(nsteps):
        vecs = step_ll(vecs, dt, L, cfl)
        energy.append(ll_energy(vecs, L))
    return _like(vecs, grid, tfield), energy

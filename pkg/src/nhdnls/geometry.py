"""Space curves, the Hasimoto map and LIA filament motion with mutual friction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import NumericalBlowup, StabilityError
from .fields import Grid, GridField, antiderivative, derivative

FRAME_TOL = 1e-8
DEFAULT_KAPPA_MIN = 1e-8
MGS_EVERY = 16


@dataclass(frozen=True)
class FilamentParams:
    alpha: float = 0.0
    alpha_prime: float = 0.0
    U: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("alpha", "alpha_prime"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        u = np.asarray(self.U, dtype=float)
        if u.shape != (3,) or not np.all(np.isfinite(u)):
            raise ValueError("U must be a finite 3-vector")
        object.__setattr__(self, "U", tuple(float(c) for c in u))


@dataclass(frozen=True)
class CurveFrame:
    """Curve samples at uniform arc length with their Frenet data.

    ``transported`` marks nodes where the normal came from parallel
    transport because the curvature fell below the threshold.
    ``period_shift`` is ``r(L) - r(0)``: zero for a closed curve, the pitch
    vector for a screw-periodic one.
    """

    points: np.ndarray
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    ds: float
    transported: np.ndarray = None
    period_shift: np.ndarray = None

    def __post_init__(self):
        N = self.points.shape[0]
        if self.transported is None:
            object.__setattr__(self, "transported", np.zeros(N, dtype=bool))
        if self.period_shift is None:
            object.__setattr__(self, "period_shift", np.zeros(3))

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def length(self):
        return self.n_points * self.ds

    @property
    def s(self):
        return np.arange(self.n_points) * self.ds

    @property
    def grid(self):
        return Grid(self.n_points, self.length)

    @property
    def parallel_transport_used(self):
        return bool(np.any(self.transported))

    def orthonormality_error(self):
        t, n, b = self.t, self.n, self.b
        errs = [
            np.abs(np.linalg.norm(v, axis=1) - 1.0).max() for v in (t, n, b)
        ] + [
            np.abs(np.einsum("ij,ij->i", x, y)).max() for x, y in ((t, n), (t, b), (n, b))
        ] + [np.abs(np.cross(t, n) - b).max()]
        return float(max(errs))

    def kappa_field(self):
        return GridField(self.kappa, self.grid, real_valued=True)

    def tau_field(self):
        return GridField(self.tau, self.grid, real_valued=True)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# -- curve -> frame -----------------------------------------------------------


class _Fourier:
    """Trigonometric interpolant of periodic samples on ``u in [0, 2 pi)``."""

    def __init__(self, values):
        self.n = values.shape[0]
        self.c = np.fft.fft(values, axis=0) / self.n
        m = np.fft.fftfreq(self.n) * self.n
        if self.n % 2 == 0:
            # split the Nyquist term evenly so the interpolant stays real
            m[self.n // 2] = self.n // 2
            self.c[self.n // 2] *= 0.5
            m = np.append(m, -self.n // 2)
            self.c = np.concatenate([self.c, self.c[self.n // 2 : self.n // 2 + 1]], axis=0)
        self.m = m

    def __call__(self, u, order=0):
        ph = np.exp(1j * np.outer(u, self.m)) * (1j * self.m) ** order
        return (ph @ self.c).real


def _resample(points, n_out, shift):
    """Uniform-arc-length resampling of a closed (or screw-periodic) polygon of smooth samples."""
    N = points.shape[0]
    u = 2.0 * np.pi * np.arange(N) / N
    drift = np.outer(u / (2.0 * np.pi), shift)
    r = _Fourier(points - drift)
    lead = shift / (2.0 * np.pi)

    def dr(uu):
        return r(uu, 1) + lead

    speed = np.linalg.norm(dr(u), axis=1)
    s_of_u = antiderivative(speed, 2.0 * np.pi, "spectral")
    total = float(np.mean(speed) * 2.0 * np.pi)
    sp = _Fourier(s_of_u - np.mean(speed) * u)
    mean_speed = np.mean(speed)

    def s_at(uu):
        return sp(uu) + mean_speed * uu

    target = total * np.arange(n_out) / n_out
    uu = target / mean_speed
    for _ in range(50):
        err = s_at(uu) - s_at(np.zeros(1))[0] - target
        v = np.linalg.norm(dr(uu), axis=1)
        uu = uu - err / v
        if np.max(np.abs(err)) < 1e-14 * max(total, 1.0):
            break
    pts = r(uu) + np.outer(uu / (2.0 * np.pi), shift)
    return pts, total


def _frenet_uniform(pts, length, shift, kappa_min):
    N = pts.shape[0]
    s = np.arange(N) * length / N
    base = pts - np.outer(s / length, shift)
    d1 = derivative(base, length, 1) + shift / length
    d2 = derivative(base, length, 2)
    d3 = derivative(base, length, 3)
    t = _unit(d1)
    kappa = np.linalg.norm(np.cross(d1, d2), axis=1) / np.linalg.norm(d1, axis=1) ** 3
    nraw = d2 - np.einsum("ij,ij->i", d2, t)[:, None] * t
    nlen = np.linalg.norm(nraw, axis=1)
    transported = kappa < kappa_min
    n = np.zeros_like(t)
    good = ~transported
    n[good] = nraw[good] / nlen[good, None]
    if transported.all():
        seed = np.eye(3)[np.argmin(np.abs(t[0]))]
        n[0] = _unit(seed - np.dot(seed, t[0]) * t[0])
        start = 0
    elif transported.any():
        start = int(np.flatnonzero(good)[0])
    if transported.any():
        for k in range(1, N + 1):
            i = (start + k) % N
            if transported[i]:
                prev = n[(i - 1) % N]
                n[i] = _unit(prev - np.dot(prev, t[i]) * t[i])
    b = np.cross(t, n)
    cr = np.cross(d1, d2)
    tau = np.zeros(N)
    den = np.einsum("ij,ij->i", cr, cr)
    tau[good] = np.einsum("ij,ij->i", cr, d3)[good] / den[good]
    return CurveFrame(pts, t, n, b, kappa, tau, length / N, transported, np.asarray(shift, dtype=float))


def frenet_from_curve(points, n_out=None, period_shift=None, kappa_min=DEFAULT_KAPPA_MIN):
    """Frenet frame of a closed smooth curve given by ordered samples.

    The samples are resampled to uniform arc length with spectral
    interpolation; curvature and torsion then follow from spectral
    derivatives.  ``period_shift`` handles screw-periodic curves such as a
    helix: the sample after the last one is ``points[0] + period_shift``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain NaN or Inf")
    shift = np.zeros(3) if period_shift is None else np.asarray(period_shift, dtype=float)
    n_out = n_out or pts.shape[0]
    Grid(n_out, 1.0)
    uniform, total = _resample(pts, n_out, shift)
    return _frenet_uniform(uniform, total, shift, kappa_min)


# -- Hasimoto map -------------------------------------------------------------


def hasimoto_forward(kappa, tau):
    """``q = kappa exp(i int_0^s tau)`` with a spectral antiderivative.

    The result is flagged aperiodic unless the total twist is a multiple of
    ``2 pi``.
    """
    if np.any(kappa.values.real < -1e-14):
        raise ValueError("kappa must be non-negative")
    tv = tau.values.real
    phase = antiderivative(tv, tau.length, "spectral")
    twist = float(np.mean(tv) * tau.length)
    wraps = abs(twist / (2.0 * np.pi) - round(twist / (2.0 * np.pi))) < 1e-10
    q = kappa.values.real * np.exp(1j * phase)
    return GridField(q, kappa.grid, real_valued=False, aperiodic=not wraps)


def hasimoto_inverse(q, kappa_floor=1e-8):
    """``(kappa, tau, mask)`` with ``tau = Im(q* q_s)/|q|^2``; ``mask`` marks ``|q| < kappa_floor``."""
    qv = q.values
    kappa = np.abs(qv)
    qs = derivative(qv, q.length, 1, "spectral", q.aperiodic)
    mask = kappa < kappa_floor
    tau = np.zeros(q.n)
    tau[~mask] = np.imag(np.conj(qv[~mask]) * qs[~mask]) / kappa[~mask] ** 2
    return (
        GridField(kappa, q.grid, real_valued=True),
        GridField(tau, q.grid, real_valued=True),
        mask,
    )


def _mgs(frame):
    t = _unit(frame[0])
    n = frame[1] - np.dot(frame[1], t) * t
    n = _unit(n)
    b = frame[2] - np.dot(frame[2], t) * t - np.dot(frame[2], n) * n
    return np.array([t, n, _unit(b)])


def frame_reconstruct(kappa, tau, r0=None, frame0=None, substeps=4):
    """Integrate ``t' = kappa n, n' = -kappa t + tau b, b' = -tau n, r' = t``.

    RK4 along arc length with ``substeps`` per grid cell; curvature and
    torsion between nodes come from trigonometric interpolation.  The frame
    is re-orthonormalized by modified Gram-Schmidt every 16 steps.
    """
    grid = kappa.grid
    N = grid.n
    ds = grid.dx / substeps
    kf = _Fourier(kappa.values.real)
    tf = _Fourier(tau.values.real)
    scale = 2.0 * np.pi / grid.length
    fine = np.arange(N * substeps * 2 + 1) * ds / 2.0
    kap = kf(fine * scale)
    tor = tf(fine * scale)
    F = np.eye(3) if frame0 is None else np.asarray(frame0, dtype=float).copy()
    r = np.zeros(3) if r0 is None else np.asarray(r0, dtype=float).copy()

    def rhs(Fm, k, tq):
        t, n, b = Fm
        return np.array([k * n, -k * t + tq * b, -tq * n]), t

    pts = [r.copy()]
    frames = [F.copy()]
    total = N * substeps
    for i in range(total):
        k0, km, k1 = kap[2 * i], kap[2 * i + 1], kap[2 * i + 2]
        t0, tm, t1 = tor[2 * i], tor[2 * i + 1], tor[2 * i + 2]
        a1, v1 = rhs(F, k0, t0)
        a2, v2 = rhs(F + 0.5 * ds * a1, km, tm)
        a3, v3 = rhs(F + 0.5 * ds * a2, km, tm)
        a4, v4 = rhs(F + ds * a3, k1, t1)
        F = F + ds / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        r = r + ds / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
        if (i + 1) % MGS_EVERY == 0:
            F = _mgs(F)
        if (i + 1) % substeps == 0:
            pts.append(r.copy())
            frames.append(_mgs(F))
    if not np.all(np.isfinite(F)):
        raise NumericalBlowup("frame integration produced non-finite values")
    pts = np.array(pts)
    frames = np.array(frames)
    return CurveFrame(
        pts[:N],
        frames[:N, 0],
        frames[:N, 1],
        frames[:N, 2],
        kappa.values.real.copy(),
        tau.values.real.copy(),
        grid.dx,
        period_shift=pts[N] - pts[0],
    )


# -- filament dynamics --------------------------------------------------------


def filament_velocity(frame, p):
    """``v = kappa t x n + alpha t x (U - kappa t x n) - alpha' t x [t x (U - kappa t x n)]``."""
    t, n = frame.t, frame.n
    U = np.asarray(p.U, dtype=float)
    ktn = frame.kappa[:, None] * np.cross(t, n)
    rel = U[None, :] - ktn
    return ktn + p.alpha * np.cross(t, rel) - p.alpha_prime * np.cross(t, np.cross(t, rel))


def _check_self_intersection(points, ds, skip=3):
    N = points.shape[0]
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    idx = np.arange(N)
    gap = np.abs(idx[:, None] - idx[None, :])
    gap = np.minimum(gap, N - gap)
    close = (gap > skip) & (d < 0.5 * ds)
    if np.any(close):
        raise NumericalBlowup("filament self-intersection detected")


def filament_max_dt(frame, cfl=0.25):
    return cfl * frame.ds**2 / max(1.0, float(np.max(frame.kappa)))


def step_filament(frame, p, dt, cfl=0.25):
    """RK4 step of ``r_t = v`` followed by uniform arc-length reparameterization."""
    if dt <= 0:
        raise StabilityError("dt must be positive")
    limit = filament_max_dt(frame, cfl)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(f"dt={dt:g} exceeds {cfl}*ds^2/max(1,kappa_max)={limit:g}")
    shift = frame.period_shift
    r = frame.points

    def vel(pts):
        return _nodal_velocity(pts, p, shift)

    k1 = vel(r)
    k2 = vel(r + 0.5 * dt * k1)
    k3 = vel(r + 0.5 * dt * k2)
    k4 = vel(r + dt * k3)
    new = r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowup("non-finite filament points")
    out = frenet_from_curve(new, n_out=frame.n_points, period_shift=shift)
    _check_self_intersection(out.points, out.ds)
    return out


def _nodal_velocity(points, p, shift):
    """Velocity at the given nodes, with derivatives taken in the nodal parameter."""
    N = points.shape[0]
    u = 2.0 * np.pi * np.arange(N) / N
    base = points - np.outer(u / (2.0 * np.pi), shift)
    lead = shift / (2.0 * np.pi)
    d1 = derivative(base, 2.0 * np.pi, 1) + lead
    d2 = derivative(base, 2.0 * np.pi, 2)
    sp = np.linalg.norm(d1, axis=1)
    t = d1 / sp[:, None]
    # second arc-length derivative: (d2 - (d2.t) t) / |r_u|^2
    curv = (d2 - np.einsum("ij,ij->i", d2, t)[:, None] * t) / sp[:, None] ** 2
    kappa = np.linalg.norm(curv, axis=1)
    n = np.zeros_like(t)
    good = kappa >= DEFAULT_KAPPA_MIN
    n[good] = curv[good] / kappa[good, None]
    fr = CurveFrame(points, t, n, np.cross(t, n), kappa, np.zeros(N), 0.0)
    return filament_velocity(fr, p)


def evolve_filament(frame, p, dt, t_final, log_every=1, cfl=0.25):
    """Fixed-step filament run; logs time, length, centroid and mean radius about the centroid."""
    steps = int(round(t_final / dt))
    if not np.isclose(steps * dt, t_final, rtol=1e-10, atol=1e-14):
        raise ValueError("t_final must be an integer multiple of dt")
    log = {"t": [], "length": [], "cx": [], "cy": [], "cz": [], "radius": []}

    def record(t, fr):
        c = fr.points.mean(axis=0)
        log["t"].append(t)
        log["length"].append(fr.length)
        log["cx"].append(float(c[0]))
        log["cy"].append(float(c[1]))
        log["cz"].append(float(c[2]))
        log["radius"].append(float(np.mean(np.linalg.norm(fr.points - c, axis=1))))

    record(0.0, frame)
    for i in range(1, steps + 1):
        frame = step_filament(frame, p, dt, cfl)
        if log_every and i % log_every == 0:
            record(i * dt, frame)
    if not log_every or steps % log_every:
        record(steps * dt, frame)
    return frame, log


def circle(radius, n, center=(0.0, 0.0, 0.0)):
    th = 2.0 * np.pi * np.arange(n) / n
    pts = np.stack([radius * np.cos(th), radius * np.sin(th), np.zeros(n)], axis=1)
    return pts + np.asarray(center, dtype=float)


def helix(radius, pitch, n, turns=1):
    """``(R cos u, R sin u, h u)`` over ``turns`` full turns; returns ``(points, period_shift)``."""
    u = 2.0 * np.pi * turns * np.arange(n) / n
    pts = np.stack([radius * np.cos(u), radius * np.sin(u), pitch * u], axis=1)
    return pts, np.array([0.0, 0.0, 2.0 * np.pi * turns * pitch])


# -- LL / NLS correspondence ---------------------------------------------------

ETA_CANDIDATES = (0.25, 0.5, 1.0, -1.0)


def ll_nls_crosscheck(kappa, tau, t_final, dt, eta=0.25):
    """Evolve a curve's tangent by LL and its Hasimoto field by the standard NLS.

    Returns the L-infinity gap between ``|q|`` and ``|t_s|`` at ``t_final``
    and the relative drift of the LL energy.
    """
    from . import solvers

    grid = kappa.grid
    frame = frame_reconstruct(kappa, tau)
    tv, energy = solvers.evolve_ll(frame.t.copy(), dt, t_final, length=grid.length)
    kappa_ll = np.linalg.norm(derivative(tv, grid.length, 1), axis=1)
    q0 = hasimoto_forward(kappa, tau)
    problem = solvers.NlsProblem("standard", grid, eta=eta)
    q, _, _ = solvers.evolve(problem, q0, dt, t_final)
    return {
        "eta": eta,
        "t_final": t_final,
        "max_abs_diff": float(np.max(np.abs(np.abs(q.values) - kappa_ll))),
        "ll_energy_drift": abs(energy[-1] - energy[0]) / abs(energy[0]),
        "tangent_wrap_jump": float(np.linalg.norm(frame.t[0] - frame.t[-1])),
    }


def calibrate_eta(kappa, tau, t_final, dt, candidates=ETA_CANDIDATES):
    """Pick the NLS nonlinearity whose ``|q|`` tracks the LL curvature best."""
    runs = [ll_nls_crosscheck(kappa, tau, t_final, dt, eta) for eta in candidates]
    best = min(runs, key=lambda r: r["max_abs_diff"])
    return {"calibrated_eta": best["eta"], "max_abs_diff": best["max_abs_diff"], "runs": runs}


def hasimoto_soliton(grid, amplitude=1.0, tau0=None, center=None):
    """``kappa = 2a sech(a(s - s0))`` with constant torsion; ``tau0`` defaults to a whole number of turns."""
    s0 = grid.origin + grid.length / 2 if center is None else center
    if tau0 is None:
        tau0 = 2.0 * np.pi * 4 / grid.length
    kap = 2.0 * amplitude / np.cosh(amplitude * (grid.x - s0))
    return GridField(kap, grid, real_valued=True), GridField(np.full(grid.n, float(tau0)), grid, real_valued=True)


# -- CSV ----------------------------------------------------------------------


def curve_to_csv(frame, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "x", "y", "z", "kappa", "tau"])
    for s, pt, k, tq in zip(frame.s, frame.points, frame.kappa, frame.tau):
        w.writerow([f"{v:.17g}" for v in (s, *pt, k, tq)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def curve_from_csv(source):
    text = source if "\n" in source else open(source).read()
    rows = list(csv.DictReader(io.StringIO(text)))
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])

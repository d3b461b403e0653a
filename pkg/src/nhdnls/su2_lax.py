"""sl(2) matrix fields graded by powers of a formal spectral parameter.

A :class:`LaurentMatrixField` maps an integer order ``n`` to a field of 2x2
complex matrices, stored as an ``(N, 2, 2)`` array.  The spectral parameter
is never given a numerical value; products and commutators convolve the
orders exactly.

Basis: ``sigma3 = diag(1, -1)``, ``sigma_plus = e12``, ``sigma_minus = e21``,
so that ``[s3, s+-] = +-2 s+-`` and ``[s+, s-] = s3``.
"""

from __future__ import annotations

import numpy as np

from .errors import GridMismatchError
from .fields import GridField, derivative

IDENTITY = np.eye(2, dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA1 = SIGMA_PLUS + SIGMA_MINUS
SIGMA2 = -1j * SIGMA_PLUS + 1j * SIGMA_MINUS
PAULI = np.stack([SIGMA1, SIGMA2, SIGMA3])


def pauli_decompose(m):
    """Coefficients ``(c0, c3, cplus, cminus)`` of ``m`` in ``{I, s3, s+, s-}``.

    Works on a single matrix or on any ``(..., 2, 2)`` stack.
    """
    m = np.asarray(m)
    c0 = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    c3 = 0.5 * (m[..., 0, 0] - m[..., 1, 1])
    return c0, c3, m[..., 0, 1], m[..., 1, 0]


def recompose(c0, c3, cplus, cminus):
    c0, c3, cplus, cminus = np.broadcast_arrays(*(np.asarray(c, dtype=complex) for c in (c0, c3, cplus, cminus)))
    out = np.empty(c0.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c0 + c3
    out[..., 1, 1] = c0 - c3
    out[..., 0, 1] = cplus
    out[..., 1, 0] = cminus
    return out


def spin_matrix(vec):
    """``t . sigma`` for a ``(..., 3)`` array of vectors."""
    vec = np.asarray(vec)
    return np.einsum("...a,aij->...ij", vec.astype(complex), PAULI)


def spin_vector(mat):
    """Inverse of :func:`spin_matrix` (``t_a = tr(S sigma_a)/2``)."""
    return 0.5 * np.einsum("...ij,aji->...a", np.asarray(mat), PAULI)


def is_traceless(m, tol=1e-12):
    m = np.asarray(m)
    return bool(np.all(np.abs(m[..., 0, 0] + m[..., 1, 1]) <= tol))


def is_anti_hermitian(m, tol=1e-12):
    m = np.asarray(m)
    return bool(np.all(np.abs(m + np.conj(np.swapaxes(m, -1, -2))) <= tol))


def field_matrix(c3=0.0, cplus=0.0, cminus=0.0, c0=0.0, n=None):
    """Stack ``c0 I + c3 s3 + c+ s+ + c- s-`` from scalars, arrays or GridFields."""
    vals = [c.values if isinstance(c, GridField) else c for c in (c0, c3, cplus, cminus)]
    out = recompose(*vals)
    if n is not None and out.ndim == 2:
        out = np.broadcast_to(out, (n, 2, 2)).copy()
    return out


class MatrixGridField:
    """Per-node 2x2 complex matrices on a periodic grid."""

    def __init__(self, values, grid, aperiodic=False):
        v = np.asarray(values, dtype=complex)
        if v.shape == (2, 2):
            v = np.broadcast_to(v, (grid.n, 2, 2)).copy()
        if v.shape != (grid.n, 2, 2):
            raise ValueError(f"expected shape ({grid.n}, 2, 2), got {v.shape}")
        self.values = v
        self.grid = grid
        self.aperiodic = aperiodic

    @classmethod
    def from_vectors(cls, vec, grid):
        return cls(spin_matrix(vec), grid)

    def derivative(self, order=1, method="spectral"):
        return MatrixGridField(
            derivative(self.values, self.grid.length, order, method, self.aperiodic), self.grid
        )

    def squared(self):
        return MatrixGridField(self.values @ self.values, self.grid)

    def vectors(self):
        return spin_vector(self.values)


class LaurentMatrixField:
    """Finite Laurent series in the spectral parameter with matrix-field coefficients."""

    def __init__(self, terms, grid, aperiodic=False):
        self.grid = grid
        self.aperiodic = aperiodic
        self.terms = {}
        for n, v in terms.items():
            if isinstance(v, MatrixGridField):
                if v.grid != grid:
                    raise GridMismatchError("term grid differs from series grid")
                v = v.values
            v = np.asarray(v, dtype=complex)
            if v.shape == (2, 2):
                v = np.broadcast_to(v, (grid.n, 2, 2)).copy()
            if v.shape != (grid.n, 2, 2):
                raise ValueError(f"order {n}: expected ({grid.n}, 2, 2), got {v.shape}")
            self.terms[int(n)] = v

    @classmethod
    def zero(cls, grid):
        return cls({}, grid)

    def __repr__(self):
        return f"LaurentMatrixField(orders={self.orders()}, n={self.grid.n})"

    def orders(self):
        return sorted(self.terms)

    def coefficient(self, n):
        v = self.terms.get(n)
        return np.zeros((self.grid.n, 2, 2), dtype=complex) if v is None else v

    def _check(self, other):
        if not isinstance(other, LaurentMatrixField):
            raise TypeError("expected a LaurentMatrixField")
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} != {other.grid}")

    def __add__(self, other):
        self._check(other)
        terms = dict(self.terms)
        for n, v in other.terms.items():
            terms[n] = terms[n] + v if n in terms else v
        return LaurentMatrixField(terms, self.grid, self.aperiodic or other.aperiodic)

    def __neg__(self):
        return LaurentMatrixField({n: -v for n, v in self.terms.items()}, self.grid, self.aperiodic)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c):
        return LaurentMatrixField({n: c * v for n, v in self.terms.items()}, self.grid, self.aperiodic)

    def shift(self, k):
        """Multiply by ``lambda**k``."""
        return LaurentMatrixField({n + k: v for n, v in self.terms.items()}, self.grid, self.aperiodic)

    def __matmul__(self, other):
        self._check(other)
        out = {}
        for p, a in self.terms.items():
            for q, b in other.terms.items():
                prod = a @ b
                out[p + q] = out[p + q] + prod if p + q in out else prod
        return LaurentMatrixField(out, self.grid, self.aperiodic or other.aperiodic)

    def x_derivative(self, method="spectral"):
        return LaurentMatrixField(
            {n: derivative(v, self.grid.length, 1, method, self.aperiodic) for n, v in self.terms.items()},
            self.grid,
        )

    def order_norms(self):
        """Max-norm of the matrix entries for each stored order."""
        return {n: float(np.max(np.abs(v))) for n, v in sorted(self.terms.items())}

    def max_norm(self):
        return max(self.order_norms().values(), default=0.0)


def commutator(a, b):
    """Order-by-order ``[a, b]``; orders ``p+q`` collect every pair."""
    a._check(b)
    out = {}
    for p, x in a.terms.items():
        for q, y in b.terms.items():
            c = x @ y - y @ x
            out[p + q] = out[p + q] + c if p + q in out else c
    return LaurentMatrixField(out, a.grid, a.aperiodic or b.aperiodic)


def _vals(f, grid):
    if isinstance(f, GridField):
        if f.grid != grid:
            raise GridMismatchError("field grids differ")
        return f.values
    return np.broadcast_to(np.asarray(f, dtype=complex), (grid.n,))


def _aper(*fields):
    return any(isinstance(f, GridField) and f.aperiodic for f in fields)


def build_nls_lax(q, rho, eta, method="spectral"):
    """NLS Lax pair with coupling ``rho`` and nonlinearity ``eta``.

    ``A = -i lam s3 + rho* q* s+ + rho q s-`` and
    ``B = i(2 lam^2 - eta |q|^2) s3 - (2 lam rho* q* + i rho* q*_x) s+
    - (2 lam rho q - i rho q_x) s-``.
    """
    grid = q.grid
    qv = q.values
    rv = _vals(rho, grid)
    ev = _vals(eta, grid)
    qx = derivative(qv, grid.length, 1, method, q.aperiodic)
    p = rv * qv
    aper = _aper(q, rho, eta)
    A = LaurentMatrixField(
        {0: field_matrix(cplus=np.conj(p), cminus=p), 1: -1j * SIGMA3},
        grid,
        aper,
    )
    B = LaurentMatrixField(
        {
            0: field_matrix(
                c3=-1j * ev * np.abs(qv) ** 2,
                cplus=-1j * np.conj(rv) * np.conj(qx),
                cminus=1j * rv * qx,
            ),
            1: field_matrix(cplus=-2.0 * np.conj(p), cminus=-2.0 * p),
            2: 2j * SIGMA3,
        },
        grid,
        aper,
    )
    return A, B


def nls_lax_time_derivative(q, q_t, rho, rho_t=0.0):
    """``A_t`` by the chain rule over ``(q_t, rho_t)``; only order 0 depends on time."""
    grid = q.grid
    pt = _vals(rho_t, grid) * q.values + _vals(rho, grid) * _vals(q_t, grid)
    return LaurentMatrixField({0: field_matrix(cplus=np.conj(pt), cminus=pt)}, grid, _aper(q, rho))


def check_unit_spin(s, tol=1e-10):
    sq = s.values @ s.values
    err = float(np.max(np.abs(sq - IDENTITY)))
    if err > tol:
        raise ValueError(f"S^2 != I (max deviation {err:.3e})")


def build_ll_lax(s, method="spectral"):
    """Landau-Lifshitz pair ``U = i lam S``, ``V = 2i lam^2 S - lam S_x S``."""
    check_unit_spin(s)
    sx = derivative(s.values, s.grid.length, 1, method, s.aperiodic)
    U = LaurentMatrixField({1: 1j * s.values}, s.grid)
    V = LaurentMatrixField({1: -(sx @ s.values), 2: 2j * s.values}, s.grid)
    return U, V


def ll_lax_time_derivative(s, s_t):
    vals = s_t.values if isinstance(s_t, MatrixGridField) else np.asarray(s_t)
    return LaurentMatrixField({1: 1j * vals}, s.grid)


def zcc_residual(a, b, a_t, method="spectral"):
    """``A_t - B_x + [A, B]`` order by order."""
    a._check(b)
    a._check(a_t)
    return a_t - b.x_derivative(method) + commutator(a, b)


def zcc_terms(a, b, a_t, method="spectral"):
    """The three ZCC contributions separately, for scale estimates."""
    return {"A_t": a_t, "B_x": b.x_derivative(method), "[A,B]": commutator(a, b)}


def order_support(r, tol, scale=1.0):
    """Orders of ``r`` whose max-norm exceeds ``tol * scale``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return {n for n, v in r.order_norms().items() if v > tol * scale}


def random_laurent(grid, orders, rng, modes=4, traceless=True):
    """Smooth random series used by property tests and the order scanners."""
    x = grid.x
    terms = {}
    for n in orders:
        coeffs = []
        for _ in range(4):
            c = np.zeros(grid.n, dtype=complex)
            for m in range(modes):
                amp = rng.normal(size=2) @ np.array([1.0, 1j])
                c += amp * np.exp(2j * np.pi * (m - modes // 2) * (x - grid.origin) / grid.length) / (1 + m)
            coeffs.append(c)
        if traceless:
            coeffs[0] = 0.0
        terms[n] = recompose(*coeffs)
    return LaurentMatrixField(terms, grid)

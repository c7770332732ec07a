"""Dense linear algebra: one-sided Jacobi SVD, Cholesky and LU solves, PCG.

All routines work in float64 and are deterministic for a fixed input. The
inner loops live in :mod:`rpom.kernels`.
"""
import numpy as np

from . import kernels
from .errors import NoConvergence, NonFinite, NotSPD, ShapeMismatch, SingularSystem

SVD_TOL = 1e-15
SVD_MAX_SWEEPS = 60


def _as_matrix(A, name="A"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return A


def round_robin_schedule(n):
    """Tournament ordering: ``n - 1`` rounds of disjoint index pairs.

    Padded to an even count; pairs touching the pad index ``n`` are skipped
    by the kernels.
    """
    size = n + (n % 2)
    if size < 2:
        return np.zeros((0, 0, 2), dtype=np.int64)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        pairs = [(min(players[k], players[size - 1 - k]), max(players[k], players[size - 1 - k]))
                 for k in range(size // 2)]
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return np.ascontiguousarray(np.array(rounds, dtype=np.int64))


def _complete_orthonormal(U, good):
    """Replace the columns of ``U`` not flagged ``good`` by an orthonormal completion."""
    m = U.shape[0]
    basis = [U[:, k] for k in range(U.shape[1]) if good[k]]
    filled = U.copy()
    e = 0
    for k in range(U.shape[1]):
        if good[k]:
            continue
        while True:
            if e >= m:
                raise NoConvergence("could not complete orthonormal basis")
            v = np.zeros(m)
            v[e] = 1.0
            e += 1
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v /= nv
                break
        filled[:, k] = v
        basis.append(v)
    return filled


def _fix_signs(U, V):
    for k in range(U.shape[1]):
        idx = int(np.argmax(np.abs(U[:, k])))
        if U[idx, k] < 0.0:
            U[:, k] = -U[:, k]
            V[:, k] = -V[:, k]
    return U, V


def thin_svd(A, tol=SVD_TOL, max_sweeps=SVD_MAX_SWEEPS):
    """Thin singular value decomposition by one-sided (Hestenes) Jacobi.

    Parameters
    ----------
    A : (m, n) array_like
        Finite real matrix.
    tol : float
        Rotation threshold on the cosine between two working columns.
    max_sweeps : int
        Iteration budget; exceeding it raises :class:`NoConvergence`.

    Returns
    -------
    U : (m, r) ndarray
    sigma : (r,) ndarray, descending and nonnegative
    V : (n, r) ndarray

    with ``r = min(m, n)`` and ``A = U @ diag(sigma) @ V.T``. Each column of
    ``U`` is signed so its largest-magnitude entry is positive.
    """
    A = _as_matrix(A)
    m, n = A.shape
    transposed = n > m
    if transposed:
        A = A.T
        m, n = n, m
    # rows of G are the columns being orthogonalised
    G = np.array(A.T, order="C", copy=True)
    Vt = np.eye(n)
    schedule = round_robin_schedule(n)
    # columns at round-off level have noisy cosines and would rotate forever
    floor = max(m, n) * np.finfo(float).eps * np.sqrt(np.sum(G * G))
    for _ in range(max_sweeps):
        if kernels.jacobi_sweep(G, Vt, schedule, tol) == 0:
            break
        G[np.sqrt(np.einsum("ij,ij->i", G, G)) <= floor] = 0.0
    else:
        raise NoConvergence(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")

    sigma = np.sqrt(np.einsum("ij,ij->i", G, G))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    G = G[order]
    V = Vt[order].T
    cutoff = (sigma[0] if sigma.size else 0.0) * max(m, n) * np.finfo(float).eps
    good = sigma > cutoff
    U = np.zeros((m, n))
    U[:, good] = (G[good] / sigma[good, None]).T
    if not good.all():
        U = _complete_orthonormal(U, good)
        sigma = np.where(good, sigma, 0.0)
    U, V = _fix_signs(U, V)
    if transposed:
        # A^T = U S V^T  =>  A = V S U^T; re-apply the sign rule to the new U
        U, V = _fix_signs(V, U)
    return U, sigma, V


class Cholesky:
    """Cholesky factorisation of a symmetric positive-definite matrix."""

    def __init__(self, A, sym_tol=1e-12, pivot_tol=None):
        A = _as_matrix(A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ShapeMismatch(f"matrix must be square, got {A.shape}")
        scale = max(float(np.max(np.abs(A))), 1e-300)
        if np.max(np.abs(A - A.T)) > sym_tol * scale:
            raise NotSPD("matrix is not symmetric")
        if pivot_tol is None:
            pivot_tol = n * np.finfo(float).eps * scale
        L = np.ascontiguousarray(np.tril(A) + np.tril(A, -1).T)
        info = kernels.cholesky(L, pivot_tol)
        if info:
            raise NotSPD(f"non-positive pivot at index {info - 1}")
        self.L = L

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if not np.all(np.isfinite(b)):
            raise NonFinite("right-hand side contains NaN or Inf")
        if b.shape[0] != self.L.shape[0]:
            raise ShapeMismatch(f"rhs length {b.shape[0]} != {self.L.shape[0]}")
        if b.ndim == 1:
            return kernels.cho_solve(self.L, np.ascontiguousarray(b))
        return np.column_stack([kernels.cho_solve(self.L, np.ascontiguousarray(b[:, k]))
                                for k in range(b.shape[1])])


def solve_spd(A, b):
    """Solve ``A x = b`` for symmetric positive-definite ``A`` via Cholesky."""
    return Cholesky(A).solve(b)


class LU:
    """LU factorisation with partial pivoting for general square systems."""

    def __init__(self, A):
        A = _as_matrix(A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ShapeMismatch(f"matrix must be square, got {A.shape}")
        self.LU = np.ascontiguousarray(A.copy())
        self.piv = np.zeros(n, dtype=np.int64)
        info = kernels.lu_factor(self.LU, self.piv)
        if info:
            raise SingularSystem(f"zero pivot at column {info - 1}")
        d = np.abs(np.diag(self.LU))
        if d.min() <= n * np.finfo(float).eps * d.max():
            raise SingularSystem("matrix is numerically singular")

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.LU.shape[0]:
            raise ShapeMismatch(f"rhs length {b.shape[0]} != {self.LU.shape[0]}")
        if b.ndim == 1:
            return kernels.lu_solve(self.LU, self.piv, np.ascontiguousarray(b))
        return np.column_stack([kernels.lu_solve(self.LU, self.piv, np.ascontiguousarray(b[:, k]))
                                for k in range(b.shape[1])])


def solve_symmetric(A, b):
    """Cholesky when ``A`` is positive definite, otherwise pivoted LU."""
    try:
        return Cholesky(A).solve(b)
    except NotSPD:
        return LU(A).solve(b)


def pcg(apply_A, b, diag, x0=None, rtol=1e-10, max_iter=10000, project=None):
    """Jacobi-preconditioned conjugate gradients on a matrix-free operator.

    Stops when ``max|b - A x| <= rtol * max|b|``. ``project`` (optional) is
    applied to residuals and iterates, e.g. to remove the constant null
    space of a pure-Neumann operator. Returns ``(x, iterations)``.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if project is not None:
        b = project(b)
        x = project(x)
    bnorm = float(np.max(np.abs(b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    target = rtol * bnorm
    inv_d = 1.0 / diag
    it = 0
    # outer loop restarts from the true residual to guard against drift
    while it < max_iter:
        r = b - apply_A(x)
        if project is not None:
            r = project(r)
        if np.max(np.abs(r)) <= target:
            return x, it
        z = inv_d * r
        if project is not None:
            z = project(z)
        d = z.copy()
        rz = float(np.vdot(r, z))
        while it < max_iter:
            it += 1
            Ad = apply_A(d)
            dAd = float(np.vdot(d, Ad))
            if dAd <= 0.0:
                raise NoConvergence("operator is not positive definite on the search direction")
            a = rz / dAd
            x += a * d
            r -= a * Ad
            if np.max(np.abs(r)) <= 0.5 * target:
                break
            z = inv_d * r
            if project is not None:
                z = project(z)
            rz_new = float(np.vdot(r, z))
            d = z + (rz_new / rz) * d
            rz = rz_new
    raise NoConvergence(f"PCG missed tolerance {rtol:g} within {max_iter} iterations")

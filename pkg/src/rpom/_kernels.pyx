# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Signatures mirror ``rpom._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, log

cnp.import_array()


def jacobi_sweep(double[:, ::1] G, double[:, ::1] Vt, long[:, :, ::1] schedule,
                 double tol):
    """One round-robin sweep of one-sided Jacobi on the rows of ``G``.

    Rows ``i`` and ``j`` of ``G`` (and of ``Vt``) are rotated so that they
    become orthogonal. Returns the number of rotations applied.
    """
    cdef Py_ssize_t m = G.shape[1]
    cdef Py_ssize_t n = G.shape[0]
    cdef Py_ssize_t nv = Vt.shape[1]
    cdef Py_ssize_t rounds = schedule.shape[0]
    cdef Py_ssize_t npairs = schedule.shape[1]
    cdef Py_ssize_t r, q, k, i, j
    cdef double alpha, beta, gamma, zeta, t, c, s, gi, gj
    cdef long rotations = 0
    for r in range(rounds):
        for q in range(npairs):
            i = schedule[r, q, 0]
            j = schedule[r, q, 1]
            if i >= n or j >= n:
                continue
            alpha = 0.0
            beta = 0.0
            gamma = 0.0
            for k in range(m):
                gi = G[i, k]
                gj = G[j, k]
                alpha += gi * gi
                beta += gj * gj
                gamma += gi * gj
            if alpha == 0.0 or beta == 0.0:
                continue
            if fabs(gamma) <= tol * sqrt(alpha * beta):
                continue
            zeta = (beta - alpha) / (2.0 * gamma)
            if zeta >= 0.0:
                t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
            else:
                t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
            c = 1.0 / sqrt(1.0 + t * t)
            s = c * t
            for k in range(m):
                gi = G[i, k]
                gj = G[j, k]
                G[i, k] = c * gi - s * gj
                G[j, k] = s * gi + c * gj
            for k in range(nv):
                gi = Vt[i, k]
                gj = Vt[j, k]
                Vt[i, k] = c * gi - s * gj
                Vt[j, k] = s * gi + c * gj
            rotations += 1
    return rotations


def cholesky(double[:, ::1] A, double tol):
    """In-place lower Cholesky factor. Returns 0, or ``k + 1`` if pivot ``k`` fails."""
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc, d
    for j in range(n):
        acc = A[j, j]
        for k in range(j):
            acc -= A[j, k] * A[j, k]
        if not (acc > tol):
            return j + 1
        d = sqrt(acc)
        A[j, j] = d
        for i in range(j + 1, n):
            acc = A[i, j]
            for k in range(j):
                acc -= A[i, k] * A[j, k]
            A[i, j] = acc / d
    for i in range(n):
        for j in range(i + 1, n):
            A[i, j] = 0.0
    return 0


def cho_solve(double[:, ::1] L, double[::1] b):
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t i, k
    cdef double acc
    x_arr = np.empty(n)
    cdef double[::1] x = x_arr
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * x[k]
        x[i] = acc / L[i, i]
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return x_arr


def lu_factor(double[:, ::1] A, long[::1] piv):
    """In-place LU with partial pivoting. Returns 0, or ``k + 1`` on a zero pivot."""
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, j, k, p
    cdef double big, v, f
    for k in range(n):
        p = k
        big = fabs(A[k, k])
        for i in range(k + 1, n):
            v = fabs(A[i, k])
            if v > big:
                big = v
                p = i
        piv[k] = p
        if big == 0.0:
            return k + 1
        if p != k:
            for j in range(n):
                v = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = v
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k] = f
            if f != 0.0:
                for j in range(k + 1, n):
                    A[i, j] -= f * A[k, j]
    return 0


def lu_solve(double[:, ::1] LU, long[::1] piv, double[::1] b):
    cdef Py_ssize_t n = LU.shape[0]
    cdef Py_ssize_t i, k
    cdef double acc, v
    x_arr = np.array(b, dtype=np.float64, copy=True)
    cdef double[::1] x = x_arr
    for k in range(n):
        if piv[k] != k:
            v = x[k]
            x[k] = x[piv[k]]
            x[piv[k]] = v
    for i in range(n):
        acc = x[i]
        for k in range(i):
            acc -= LU[i, k] * x[k]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for k in range(i + 1, n):
            acc -= LU[i, k] * x[k]
        x[i] = acc / LU[i, i]
    return x_arr


def perplexity_search(double[:, ::1] D2, double target_bits, double tol,
                      long max_iter):
    """Row-wise bisection on the Gaussian precision to hit a target entropy.

    Returns ``(P, beta, entropy_bits, converged)`` where ``P`` holds the
    conditional probabilities p_{j|i} with a zero diagonal.
    """
    cdef Py_ssize_t n = D2.shape[0]
    cdef Py_ssize_t i, j, it
    cdef double beta, lo, hi, dmin, z, sd, h, ln2 = log(2.0)
    cdef bint ok, all_ok = True
    P_arr = np.zeros((n, n))
    beta_arr = np.empty(n)
    H_arr = np.empty(n)
    cdef double[:, ::1] P = P_arr
    cdef double[::1] betas = beta_arr
    cdef double[::1] Hs = H_arr
    for i in range(n):
        dmin = 1e300
        for j in range(n):
            if j != i and D2[i, j] < dmin:
                dmin = D2[i, j]
        beta = 1.0
        lo = -1.0
        hi = -1.0
        ok = False
        h = 0.0
        for it in range(max_iter):
            z = 0.0
            sd = 0.0
            for j in range(n):
                if j == i:
                    P[i, j] = 0.0
                    continue
                P[i, j] = exp(-beta * (D2[i, j] - dmin))
                z += P[i, j]
                sd += (D2[i, j] - dmin) * P[i, j]
            h = (log(z) + beta * sd / z) / ln2
            if fabs(h - target_bits) <= tol:
                ok = True
                break
            if h > target_bits:
                lo = beta
                beta = beta * 2.0 if hi < 0.0 else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta * 0.5 if lo < 0.0 else 0.5 * (beta + lo)
        for j in range(n):
            P[i, j] /= z
        betas[i] = beta
        Hs[i] = h
        if not ok:
            all_ok = False
    return P_arr, beta_arr, H_arr, all_ok


def upwind_advection(double[:, ::1] T, double[:, ::1] ux, double[:, ::1] uy,
                     double hx, double hy):
    """Conservative first-order upwind flux divergence of ``u T`` per cell.

    ``ux`` lives on vertical faces (ny, nx + 1), ``uy`` on horizontal faces
    (ny + 1, nx). Boundary faces are skipped (no-flow walls).
    """
    cdef Py_ssize_t ny = T.shape[0]
    cdef Py_ssize_t nx = T.shape[1]
    cdef Py_ssize_t i, j
    cdef double f, up
    out_arr = np.zeros((ny, nx))
    cdef double[:, ::1] out = out_arr
    for j in range(ny):
        for i in range(1, nx):
            f = ux[j, i]
            up = T[j, i - 1] if f > 0.0 else T[j, i]
            f = f * up / hx
            out[j, i - 1] += f
            out[j, i] -= f
    for j in range(1, ny):
        for i in range(nx):
            f = uy[j, i]
            up = T[j - 1, i] if f > 0.0 else T[j, i]
            f = f * up / hy
            out[j - 1, i] += f
            out[j, i] -= f
    return out_arr

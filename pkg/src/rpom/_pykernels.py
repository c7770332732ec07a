"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``.

Each function has the same signature and in-place semantics as its compiled
twin. Results agree to rounding (summation order differs), not bitwise.
"""
import math

import numpy as np


def jacobi_sweep(G, Vt, schedule, tol):
    n = G.shape[0]
    rotations = 0
    for rnd in schedule:
        keep = (rnd[:, 0] < n) & (rnd[:, 1] < n)
        I = rnd[keep, 0]
        J = rnd[keep, 1]
        if I.size == 0:
            continue
        gi = G[I]
        gj = G[J]
        alpha = np.einsum("ij,ij->i", gi, gi)
        beta = np.einsum("ij,ij->i", gj, gj)
        gamma = np.einsum("ij,ij->i", gi, gj)
        act = (alpha != 0.0) & (beta != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
        if not act.any():
            continue
        I, J = I[act], J[act]
        alpha, beta, gamma = alpha[act], beta[act], gamma[act]
        zeta = (beta - alpha) / (2.0 * gamma)
        t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
        c = 1.0 / np.sqrt(1.0 + t * t)
        s = (c * t)[:, None]
        c = c[:, None]
        gi, gj = G[I], G[J]
        G[I] = c * gi - s * gj
        G[J] = s * gi + c * gj
        vi, vj = Vt[I], Vt[J]
        Vt[I] = c * vi - s * vj
        Vt[J] = s * vi + c * vj
        rotations += int(I.size)
    return rotations


def cholesky(A, tol):
    n = A.shape[0]
    for j in range(n):
        acc = A[j, j] - A[j, :j] @ A[j, :j]
        if not acc > tol:
            return j + 1
        d = math.sqrt(acc)
        A[j, j] = d
        A[j + 1:, j] = (A[j + 1:, j] - A[j + 1:, :j] @ A[j, :j]) / d
    A[np.triu_indices(n, 1)] = 0.0
    return 0


def cho_solve(L, b):
    n = L.shape[0]
    x = np.empty(n)
    for i in range(n):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def lu_factor(A, piv):
    n = A.shape[0]
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        piv[k] = p
        if A[p, k] == 0.0:
            return k + 1
        if p != k:
            A[[k, p]] = A[[p, k]]
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return 0


def lu_solve(LU, piv, b):
    n = LU.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for k in range(n):
        p = piv[k]
        if p != k:
            x[k], x[p] = x[p], x[k]
    for i in range(n):
        x[i] -= LU[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - LU[i, i + 1:] @ x[i + 1:]) / LU[i, i]
    return x


def perplexity_search(D2, target_bits, tol, max_iter):
    n = D2.shape[0]
    P = np.zeros((n, n))
    betas = np.empty(n)
    H = np.empty(n)
    all_ok = True
    ln2 = math.log(2.0)
    for i in range(n):
        d = np.delete(D2[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, -1.0, -1.0
        ok = False
        for _ in range(max_iter):
            p = np.exp(-beta * d)
            z = p.sum()
            h = (math.log(z) + beta * (d @ p) / z) / ln2
            if abs(h - target_bits) <= tol:
                ok = True
                break
            if h > target_bits:
                lo = beta
                beta = beta * 2.0 if hi < 0.0 else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta * 0.5 if lo < 0.0 else 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p / z
        betas[i] = beta
        H[i] = h
        all_ok = all_ok and ok
    return P, betas, H, all_ok


def upwind_advection(T, ux, uy, hx, hy):
    ny, nx = T.shape
    out = np.zeros((ny, nx))
    f = ux[:, 1:nx]
    fx = f * np.where(f > 0.0, T[:, :-1], T[:, 1:]) / hx
    out[:, :-1] += fx
    out[:, 1:] -= fx
    f = uy[1:ny, :]
    fy = f * np.where(f > 0.0, T[:-1, :], T[1:, :]) / hy
    out[:-1, :] += fy
    out[1:, :] -= fy
    return out

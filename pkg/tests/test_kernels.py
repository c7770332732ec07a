"""The compiled and pure-Python kernels must agree to rounding."""
import numpy as np
import pytest

from rpom import kernels, linalg
from rpom._pykernels import jacobi_sweep as py_jacobi

needs_cython = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                  reason="compiled extension not built")


def test_backend_switch_round_trip():
    before = kernels.BACKEND
    kernels.use_backend("python")
    assert kernels.jacobi_sweep is py_jacobi
    kernels.use_backend(before)
    assert kernels.BACKEND == before
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


@needs_cython
def test_jacobi_sweep_parity(rng):
    G = rng.standard_normal((6, 20))
    sched = linalg.round_robin_schedule(6)
    out = []
    for name in ("cython", "python"):
        impl = kernels.implementation(name)
        g, v = G.copy(), np.eye(6)
        for _ in range(12):
            if impl.jacobi_sweep(g, v, sched, 1e-15) == 0:
                break
        out.append(np.sort(np.linalg.norm(g, axis=1)))
    np.testing.assert_allclose(out[0], out[1], rtol=1e-12)


@needs_cython
def test_factorisation_parity(rng):
    B = rng.standard_normal((7, 7))
    A = B @ B.T + 7 * np.eye(7)
    b = rng.standard_normal(7)
    res = {}
    for name in ("cython", "python"):
        impl = kernels.implementation(name)
        L = A.copy()
        assert impl.cholesky(L, 1e-12) == 0
        LU, piv = B.copy(), np.zeros(7, dtype=np.int64)
        assert impl.lu_factor(LU, piv) == 0
        res[name] = (impl.cho_solve(L, b), impl.lu_solve(LU, piv, b))
    for a, c in zip(res["cython"], res["python"]):
        np.testing.assert_allclose(a, c, rtol=1e-12)


@needs_cython
def test_perplexity_parity(rng):
    X = rng.standard_normal((15, 3))
    D2 = np.sum((X[:, None] - X[None]) ** 2, axis=-1)
    a = kernels.implementation("cython").perplexity_search(D2, np.log2(4.0), 1e-5, 200)
    b = kernels.implementation("python").perplexity_search(D2, np.log2(4.0), 1e-5, 200)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    assert a[3] and b[3]


@needs_cython
def test_upwind_parity(rng):
    T = rng.random((5, 6))
    ux, uy = rng.standard_normal((5, 7)), rng.standard_normal((6, 6))
    a = kernels.implementation("cython").upwind_advection(T, ux, uy, 0.1, 0.2)
    b = kernels.implementation("python").upwind_advection(T, ux, uy, 0.1, 0.2)
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_upwind_is_conservative(backend, rng):
    T = rng.random((6, 5))
    ux, uy = rng.standard_normal((6, 6)), rng.standard_normal((7, 5))
    div = kernels.upwind_advection(T, ux, uy, 0.2, 0.25)
    # interior fluxes cancel pairwise; wall faces are ignored
    assert abs(div.sum()) < 1e-12

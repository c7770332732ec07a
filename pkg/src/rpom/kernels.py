"""Backend selection for the hot loops.

The compiled extension ``rpom._kernels`` is used when it was built; otherwise
the numpy implementation in ``rpom._pykernels`` is loaded. Callers go through
this module's attributes so :func:`use_backend` takes effect everywhere.
"""
from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

NAMES = (
    "jacobi_sweep",
    "cholesky",
    "cho_solve",
    "lu_factor",
    "lu_solve",
    "perplexity_search",
    "upwind_advection",
)

BACKEND = None


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def implementation(name):
    """Return the module implementing backend ``name``."""
    if name == "cython":
        if _compiled is None:
            raise ImportError("rpom._kernels was not compiled")
        return _compiled
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    global BACKEND
    impl = implementation(name)
    for fn in NAMES:
        globals()[fn] = getattr(impl, fn)
    BACKEND = name


use_backend("cython" if _compiled is not None else "python")

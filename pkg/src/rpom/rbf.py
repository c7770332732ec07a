"""Radial basis function interpolation from scaled (t, mu) to latent codes."""
from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, NotSPD, ShapeMismatch, SingularSystem
from .linalg import LU, Cholesky
from .store import read_artifact, write_artifact

KERNELS = {
    "linear": lambda r: r,
    "cubic": lambda r: r * r * r,
}


def pairwise_distances(A, B):
    """Euclidean distances between the rows of ``A`` and ``B``."""
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass
class RbfModel:
    kernel: str
    centers: np.ndarray
    weights: np.ndarray
    lam: float = 0.0

    @property
    def phi(self):
        return KERNELS[self.kernel]

    def __call__(self, x):
        return eval_rbf(self, x)


def fit_rbf(centers, values, kernel="linear", lam=0.0):
    """Solve ``(Phi + lam I) W = Z`` with ``Phi_ij = phi(|x_i - x_j|)``.

    ``Phi`` is symmetric but generally indefinite for these kernels, so
    Cholesky is tried first and pivoted LU is the fallback. Duplicate
    centers with ``lam = 0`` raise :class:`SingularSystem`.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    X = np.asarray(centers, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    Z = np.asarray(values, dtype=np.float64)
    Z = Z[:, None] if Z.ndim == 1 else Z
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeMismatch(f"centers must be (K, d), got {X.shape}")
    if Z.shape[0] != X.shape[0]:
        raise ShapeMismatch(f"{Z.shape[0]} values for {X.shape[0]} centers")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
        raise NonFinite("centers or values contain NaN or Inf")
    A = KERNELS[kernel](pairwise_distances(X, X)) + lam * np.eye(len(X))
    if len(X) == 1 and A[0, 0] == 0.0:
        # phi(0) = 0 for both kernels, so a lone center cannot interpolate
        raise SingularSystem("single center with lam = 0 gives a zero system")
    try:
        W = Cholesky(A).solve(Z)
    except NotSPD:
        W = LU(A).solve(Z)
    return RbfModel(kernel, X.copy(), np.atleast_2d(W.reshape(len(X), -1)), float(lam))


def eval_rbf(model, x):
    """``z_q(x) = sum_i W_iq phi(|x - x_i|)`` for one point or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    d = model.centers.shape[1]
    # a 1-D array is one point when d > 1 and a batch of scalars when d == 1
    single = x.ndim == 0 or (x.ndim == 1 and d > 1)
    pts = x.reshape(-1, 1) if d == 1 and x.ndim <= 1 else np.atleast_2d(x)
    if pts.shape[1] != model.centers.shape[1]:
        raise ShapeMismatch(f"points have dimension {pts.shape[1]}, centers {model.centers.shape[1]}")
    out = model.phi(pairwise_distances(pts, model.centers)) @ model.weights
    return out[0] if single else out


def center_residuals(model, values):
    """Max-abs interpolation residual per center (the exported 'loss')."""
    Z = np.asarray(values, dtype=np.float64).reshape(len(model.centers), -1)
    return np.max(np.abs(eval_rbf(model, model.centers) - Z), axis=1)


def save_rbf(path, model, header=None):
    write_artifact(path, "rbf", {"kernel": model.kernel, "lam": model.lam, "extra": header or {}},
                   {"centers": model.centers, "weights": model.weights})


def load_rbf(path):
    h, a = read_artifact(path, "rbf")
    return RbfModel(h["kernel"], a["centers"], a["weights"], h["lam"]), h

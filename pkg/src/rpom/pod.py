"""Linear compression: nested POD, L2 projection and linear reconstruction.

The inner product is ``(u, v) = a * sum(u * v)`` with ``a`` the (uniform)
cell area, so modes come from a plain SVD of ``sqrt(a) * S`` rescaled by
``1 / sqrt(a)``.
"""
import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyData, RankDeficientWarning, ShapeMismatch
from .linalg import Cholesky, thin_svd
from .store import SnapshotSet, atomic_write_text, read_artifact, write_artifact


@dataclass
class ReducedBasis:
    """Orthonormal spatial modes stored column-wise in ``modes`` (N_h, N)."""

    modes: np.ndarray
    sigma: np.ndarray
    weight: float = 1.0
    n_int: int = 0
    shape: tuple = None
    provenance: dict = field(default_factory=dict)
    rank_deficient: bool = False

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        # (w_j, w_k), kept so projection stays correct for non-orthonormal modes
        self.gram = self.weight * (self.modes.T @ self.modes)
        self._chol = Cholesky(self.gram) if self.modes.shape[1] else None

    @property
    def n_modes(self):
        return self.modes.shape[1]

    @property
    def n_dof(self):
        return self.modes.shape[0]

    def inner(self, u, v):
        return self.weight * float(np.dot(np.ravel(u), np.ravel(v)))

    def truncate(self, n):
        return ReducedBasis(self.modes[:, :n].copy(), self.sigma[:n].copy(), self.weight,
                            self.n_int, self.shape, dict(self.provenance), self.rank_deficient)


def _snapshot_matrices(snapshots, cell_area=None):
    """List of ``(N_h, n_t)`` matrices plus the field shape and cell area."""
    if isinstance(snapshots, SnapshotSet):
        trajs = snapshots.select("train")
        return ([tr.T.reshape(tr.n_snapshots, -1).T for tr in trajs],
                snapshots.grid.shape, snapshots.grid.cell_area if cell_area is None else cell_area)
    mats = []
    shape = None
    for s in snapshots:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim == 3:
            shape = s.shape[1:]
        mats.append(s.reshape(s.shape[0], -1).T)
    return mats, shape, 1.0 if cell_area is None else cell_area


def _effective_rank(sigma, shape):
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.sum(sigma > sigma[0] * max(shape) * np.finfo(float).eps))


def _stage_two(snapshots, n_int, cell_area=None):
    mats, shape, area = _snapshot_matrices(snapshots, cell_area)
    if not mats:
        raise EmptyData("no training trajectories")
    n_dof = mats[0].shape[0]
    if any(m.shape[0] != n_dof for m in mats):
        raise ShapeMismatch("trajectories have different field sizes")
    if n_int < 1 or n_int > min(m.shape[1] for m in mats):
        raise ShapeMismatch(f"N_int={n_int} must lie in [1, min per-run snapshot count]")
    scale = np.sqrt(area)
    blocks = []
    for m in mats:
        U, s, _ = thin_svd(scale * m)
        blocks.append(U[:, :n_int] * s[:n_int])
    stacked = np.hstack(blocks)
    U, s, _ = thin_svd(stacked)
    return U, s, stacked.shape, shape, area


def nested_pod(snapshots, n_int, n=None, provenance=None, cell_area=None):
    """Two-stage POD: per-run temporal compression, then across runs.

    Parameters
    ----------
    snapshots : SnapshotSet or sequence of arrays
        A set (its train split is used) or per-run snapshot stacks shaped
        ``(n_t, ny, nx)`` or ``(n_t, N_h)``.
    n_int : int
        Modes kept per run, scaled by their singular values.
    n : int, optional
        Modes kept after the second stage; defaults to ``n_int``.
    cell_area : float, optional
        Inner-product weight; taken from the set's grid (or 1) by default.

    If fewer than ``n`` singular values are numerically nonzero, the
    achievable rank is returned with ``rank_deficient`` set and a
    :class:`RankDeficientWarning`.
    """
    n = n_int if n is None else n
    U, s, st_shape, shape, area = _stage_two(snapshots, n_int, cell_area)
    if n < 1 or n > st_shape[1]:
        raise ShapeMismatch(f"N={n} must lie in [1, N_int * M = {st_shape[1]}]")
    rank = _effective_rank(s, st_shape)
    deficient = rank < n
    if deficient:
        warnings.warn(f"only {rank} of {n} requested modes are nonzero", RankDeficientWarning, stacklevel=2)
        n = max(rank, 1) if rank else 0
    modes = U[:, :n] / np.sqrt(area)
    prov = {"n_runs": st_shape[1] // n_int}
    if provenance:
        prov.update(provenance)
    return ReducedBasis(modes, s[:n], area, n_int, tuple(shape) if shape else None, prov, deficient)


def standard_pod(snapshots, n, cell_area=None):
    """Single SVD of all snapshots at once (reference for nested POD)."""
    mats, shape, area = _snapshot_matrices(snapshots, cell_area)
    U, s, _ = thin_svd(np.sqrt(area) * np.hstack(mats))
    return ReducedBasis(U[:, :n] / np.sqrt(area), s[:n], area, 0, tuple(shape) if shape else None)


def normalized_eigenvalues(snapshots, n_int, cell_area=None):
    """Stage-two singular values squared, divided by the largest."""
    _, s, _, _, _ = _stage_two(snapshots, n_int, cell_area)
    lam = s * s
    return lam / lam[0] if lam[0] > 0 else lam


def _flat(basis, fields):
    f = np.asarray(fields, dtype=np.float64)
    if f.ndim >= 2 and basis.shape is not None and f.shape[-2:] == tuple(basis.shape):
        f = f.reshape(f.shape[:-2] + (-1,))
    if f.shape[-1] != basis.n_dof:
        raise ShapeMismatch(f"field has {f.shape[-1]} DOFs, basis has {basis.n_dof}")
    return f


def project_l2(basis, fields):
    """Coefficients solving ``G theta = ((f, w_k))_k`` for one or many fields."""
    f = _flat(basis, fields)
    rhs = basis.weight * (f @ basis.modes)
    if rhs.ndim == 1:
        return basis._chol.solve(rhs)
    flat = rhs.reshape(-1, basis.n_modes)
    return basis._chol.solve(flat.T).T.reshape(rhs.shape)


def reconstruct_linear(basis, theta, shaped=False):
    """``sum_k theta_k w_k``; ``theta`` may be batched along leading axes."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != basis.n_modes:
        raise ShapeMismatch(f"theta has {theta.shape[-1]} entries, basis has {basis.n_modes} modes")
    out = theta @ basis.modes.T
    if shaped and basis.shape is not None:
        out = out.reshape(theta.shape[:-1] + tuple(basis.shape))
    return out


def projection_error(basis, fields):
    """Mean squared residual norm ``||f - P f||^2`` over the given fields."""
    f = _flat(basis, fields).reshape(-1, basis.n_dof)
    r = f - reconstruct_linear(basis, project_l2(basis, f))
    return float(np.mean(basis.weight * np.einsum("ij,ij->i", r, r)))


# --------------------------------------------------------------------- I/O

def save_basis(basis, path):
    header = {
        "weight": basis.weight,
        "n_int": basis.n_int,
        "shape": list(basis.shape) if basis.shape else None,
        "provenance": basis.provenance,
        "rank_deficient": basis.rank_deficient,
    }
    write_artifact(path, "basis", header, {"modes": basis.modes, "sigma": basis.sigma})


def load_basis(path):
    h, a = read_artifact(path, "basis")
    return ReducedBasis(a["modes"], a["sigma"], h["weight"], h["n_int"],
                        tuple(h["shape"]) if h["shape"] else None, h["provenance"], h["rank_deficient"])


def write_eigen_csv(path, values):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "normalized_eigenvalue"])
    for k, v in enumerate(values, start=1):
        w.writerow([k, repr(float(v))])
    atomic_write_text(path, buf.getvalue())

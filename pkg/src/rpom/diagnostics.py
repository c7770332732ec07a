"""Two-dimensional embeddings of snapshot sets: PCA and exact t-SNE.

Both take snapshots as rows. Comparing the two pictures hints at whether a
linear subspace is adequate; no automatic decision is made here.
"""
import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyData, PerplexityInfeasible, ShapeMismatch
from .linalg import thin_svd
from .store import atomic_write_text

PERPLEXITY_TOL = 1e-4


@dataclass
class Embedding2D:
    points: np.ndarray
    labels: list
    times: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    explained: np.ndarray = None
    kl_history: list = None
    converged: bool = True

    @property
    def params_hash(self):
        blob = json.dumps(self.params, sort_keys=True).encode("utf-8")
        return hashlib.sha1(blob).hexdigest()[:12]


def _rows(X):
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    if X.shape[0] < 2:
        raise EmptyData("need at least two rows")
    return X


def _meta(n, labels, times):
    labels = list(labels) if labels is not None else [""] * n
    times = np.asarray(times, dtype=np.float64) if times is not None else np.full(n, np.nan)
    if len(labels) != n or times.shape != (n,):
        raise ShapeMismatch("labels/times must have one entry per row")
    return labels, times


def snapshot_rows(snapshots, split="test"):
    """Normalised, flattened snapshots of a split with run ids and timestamps."""
    X, labels, times = [], [], []
    for k in snapshots.indices(split):
        tr = snapshots.trajectories[k]
        X.append(snapshots.normalize_field(tr.T).reshape(tr.n_snapshots, -1))
        labels += [snapshots.run_ids[k]] * tr.n_snapshots
        times.append(tr.times)
    if not X:
        raise EmptyData(f"split {split!r} is empty")
    return np.concatenate(X), labels, np.concatenate(times)


def pca_embed(X, k=2, labels=None, times=None):
    """Scores on the leading ``k`` principal axes via :func:`thin_svd`.

    Components beyond the data rank are zero. ``explained`` holds the
    explained-variance ratio of every component (not just the first ``k``).
    """
    X = _rows(X)
    labels, times = _meta(len(X), labels, times)
    Xc = X - X.mean(axis=0)
    U, s, _ = thin_svd(Xc)
    r = min(k, s.size)
    scores = np.zeros((len(X), k))
    scores[:, :r] = U[:, :r] * s[:r]
    var = s * s
    total = var.sum()
    explained = var / total if total > 0 else np.zeros_like(var)
    return Embedding2D(scores, labels, times, "pca", {"k": k}, explained=explained)


def squared_distances(X):
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def conditional_probabilities(X, perplexity, tol=PERPLEXITY_TOL, max_iter=200):
    """Row-stochastic ``p_{j|i}`` whose entropies (bits) match ``log2(perplexity)``.

    Returns ``(P, entropies, all_converged)``.
    """
    D2 = np.ascontiguousarray(squared_distances(_rows(X)))
    P, _, H, ok = kernels.perplexity_search(D2, math.log2(perplexity), tol, max_iter)
    return P, H, bool(ok)


def _kl(P, Q):
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne_embed(X, perplexity=None, iterations=1000, seed=0, learning_rate=200.0,
               exaggeration=12.0, exaggeration_iters=250, adaptive=True, record_every=10,
               labels=None, times=None):
    """Exact O(n^2) t-SNE.

    ``perplexity=None`` uses 30, clamped to ``(n - 1) / 3``; an explicit value
    with ``n < 3 * perplexity`` or ``perplexity <= 1`` raises
    :class:`PerplexityInfeasible`. ``adaptive=False`` turns off the per-entry
    gains (plain momentum descent). The KL divergence against the true
    (unexaggerated) joint probabilities is recorded every ``record_every``
    iterations as ``(iteration, kl)``.
    """
    X = _rows(X)
    n = len(X)
    labels, times = _meta(n, labels, times)
    if perplexity is None:
        perplexity = min(30.0, (n - 1) / 3.0)
        if perplexity <= 1.0:
            raise PerplexityInfeasible(f"{n} rows are too few for t-SNE")
    elif perplexity <= 1.0 or n < 3 * perplexity:
        raise PerplexityInfeasible(f"perplexity {perplexity} needs more than 1 and at most n/3 = {n / 3:.3g}")
    Pc, _, ok = conditional_probabilities(X, perplexity)
    P = (Pc + Pc.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    step = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    for it in range(iterations):
        exag = exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        num = 1.0 / (1.0 + squared_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        if it % record_every == 0 or it == iterations - 1:
            history.append((it, _kl(P, Q)))
        if adaptive:
            same = np.sign(grad) == np.sign(step)
            gains = np.where(same, gains * 0.8, gains + 0.2)
            gains = np.maximum(gains, 0.01)
            step = momentum * step - learning_rate * gains * grad
        else:
            step = momentum * step - learning_rate * grad
        Y = Y + step
        Y = Y - Y.mean(axis=0)
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    history.append((iterations, _kl(P, np.maximum(num / num.sum(), 1e-12))))
    params = {"perplexity": perplexity, "iterations": iterations, "seed": seed,
              "learning_rate": learning_rate, "exaggeration": exaggeration,
              "exaggeration_iters": exaggeration_iters, "adaptive": adaptive}
    return Embedding2D(Y, labels, times, "tsne", params, kl_history=history, converged=ok)


def post_exaggeration_kl(embedding):
    """First and last recorded KL values after early exaggeration ended."""
    start = embedding.params["exaggeration_iters"]
    vals = [kl for it, kl in embedding.kl_history if it >= start]
    return vals[0], vals[-1]


def embedding_csv(embedding):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "t", "x", "y", "method", "params_hash"])
    h = embedding.params_hash
    for lab, t, (x, y) in zip(embedding.labels, embedding.times, embedding.points):
        w.writerow([lab, repr(float(t)), repr(float(x)), repr(float(y)), embedding.method, h])
    return buf.getvalue()


def export_embedding_csv(embedding, path):
    atomic_write_text(path, embedding_csv(embedding))


def read_embedding_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    return rows, pts

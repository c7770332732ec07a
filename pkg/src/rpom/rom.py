"""Reduced-order model assembly, online queries and evaluation metrics.

Both paths map scaled ``(t, mu)`` to a temperature field:

* linear: nested POD basis plus an MLP regressing the L2 coefficients;
* nonlinear: an autoencoder's decoder fed by an approximator (MLP or RBF)
  regressing the latent code.

Fields are normalised with the train-split bounds before compression and
denormalised on output.
"""
import csv
import io
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import neural, pod, rbf
from .errors import EmptySeries, ExtrapolationWarning, ShapeMismatch
from .fom import Grid, run_simulation
from .store import MinMaxScaler, atomic_write_text, denormalize, regrid_bilinear, stack_training_pairs

APPROXIMATORS = ("mlp", "rbf-linear", "rbf-cubic")
_LABELS = {"mlp": "ANN", "rbf-linear": "RBF-linear", "rbf-cubic": "RBF-cubic"}


@dataclass
class RomModel:
    kind: str
    input_scaler: MinMaxScaler
    field_lo: float
    field_hi: float
    grid: Grid
    basis: object = None
    regressor: object = None
    autoencoder: object = None
    approximator_kind: str = None
    approximator: object = None
    provenance: dict = field(default_factory=dict)

    @property
    def name(self):
        if self.kind == "linear":
            return f"POD {self.basis.n_modes} RB"
        return f"AE {self.autoencoder.latent} z: {_LABELS[self.approximator_kind]}"

    @property
    def ae_grid(self):
        S = self.autoencoder.side
        return Grid(S, S, self.grid.lx, self.grid.ly)


# ------------------------------------------------------------------ helpers

def _normalized_fields(snapshots, split):
    return [snapshots.normalize_field(tr.T) for tr in snapshots.select(split)]


def _to_ae_grid(fields, grid, side):
    if grid.shape == (side, side):
        return fields
    return regrid_bilinear(fields, grid, Grid(side, side, grid.lx, grid.ly))


def _from_ae_grid(fields, grid, side):
    if grid.shape == (side, side):
        return fields
    return regrid_bilinear(fields, Grid(side, side, grid.lx, grid.ly), grid)


def _fit_approximator(kind, X, Z, X_val, Z_val, config, lam=0.0):
    if kind == "mlp":
        reg, hist = neural.train_regressor(X, Z, X_val, Z_val, config)
        return reg, hist
    if kind in ("rbf-linear", "rbf-cubic"):
        return rbf.fit_rbf(X, Z, kind.split("-")[1], lam), None
    raise ValueError(f"unknown approximator {kind!r}; choose from {APPROXIMATORS}")


def _approximate(model, X):
    if model.kind == "linear":
        return model.regressor.predict(X)
    if model.approximator_kind == "mlp":
        return model.approximator.predict(X)
    return rbf.eval_rbf(model.approximator, X)


# ------------------------------------------------------------------- builds

def fit_linear_basis(snapshots, n_int, n=None):
    """Nested POD of the normalised train split with the grid's cell-area weight."""
    basis = pod.nested_pod(_normalized_fields(snapshots, "train"), n_int, n,
                           cell_area=snapshots.grid.cell_area, provenance={"split": "train"})
    basis.shape = snapshots.grid.shape
    return basis


def train_theta_regressor(snapshots, basis, train_config):
    """MLP from scaled ``(t, mu)`` to the L2 coefficients of each snapshot."""
    theta = {s: [pod.project_l2(basis, f) for f in _normalized_fields(snapshots, s)]
             for s in ("train", "validation")}
    tr = stack_training_pairs(snapshots, "train", theta["train"])
    va = stack_training_pairs(snapshots, "validation", theta["validation"])
    return neural.train_regressor(tr.inputs, tr.targets, va.inputs, va.targets, train_config)


def assemble_linear(snapshots, basis, regressor):
    return RomModel("linear", snapshots.input_scaler, snapshots.field_lo, snapshots.field_hi,
                    snapshots.grid, basis=basis, regressor=regressor,
                    provenance={"n_int": basis.n_int, "n": basis.n_modes})


def build_linear_rom(snapshots, n_int, n=None, train_config=None):
    """Nested POD, L2 projection of every snapshot, then an MLP on the coefficients.

    Returns ``(model, history)``.
    """
    basis = fit_linear_basis(snapshots, n_int, n)
    reg, hist = train_theta_regressor(snapshots, basis, train_config or neural.TrainConfig())
    return assemble_linear(snapshots, basis, reg), hist


def train_set_autoencoder(snapshots, ae_config, train_config):
    """Fit an autoencoder on the normalised train split (validated on the validation split)."""
    side = ae_config["side"]
    grid = snapshots.grid
    train = np.concatenate([_to_ae_grid(f, grid, side) for f in _normalized_fields(snapshots, "train")])
    val = np.concatenate([_to_ae_grid(f, grid, side) for f in _normalized_fields(snapshots, "validation")])
    return neural.train_autoencoder(train, val, ae_config, train_config)


def encode_split(ae, snapshots, split):
    """Latent trajectories ``z`` (one ``(n_t, Q)`` array per run) for a split."""
    return [neural.predict_batched(ae.encoder, ae._in(ae._as_batch(_to_ae_grid(f, snapshots.grid, ae.side))))
            for f in _normalized_fields(snapshots, split)]


def fit_latent_approximator(snapshots, ae, kind, train_config, lam=0.0):
    """Approximator from scaled ``(t, mu)`` to the latent codes of ``ae``."""
    z = {s: encode_split(ae, snapshots, s) for s in ("train", "validation")}
    tr = stack_training_pairs(snapshots, "train", z["train"])
    va = stack_training_pairs(snapshots, "validation", z["validation"])
    return _fit_approximator(kind, tr.inputs, tr.targets, va.inputs, va.targets, train_config, lam)


def assemble_nonlinear(snapshots, ae, kind, approximator, lam=0.0):
    return RomModel("nonlinear", snapshots.input_scaler, snapshots.field_lo, snapshots.field_hi,
                    snapshots.grid, autoencoder=ae, approximator_kind=kind,
                    approximator=approximator, provenance={"latent": ae.latent, "lam": lam})


def build_nonlinear_rom(snapshots, ae_config=None, approximator="mlp", ae_train_config=None,
                        train_config=None, ae=None, lam=0.0):
    """Autoencoder, latent codes of every training snapshot, then an approximator.

    Passing a trained ``ae`` skips autoencoder training, so the three
    approximator kinds can share one decoder. Returns ``(model, histories)``
    with histories keyed ``"ae"`` and ``"approximator"`` (``None`` when not
    trained here or not iterative).
    """
    histories = {"ae": None, "approximator": None}
    if ae is None:
        ae, histories["ae"] = train_set_autoencoder(snapshots, ae_config, ae_train_config or neural.TrainConfig())
    approx, histories["approximator"] = fit_latent_approximator(
        snapshots, ae, approximator, train_config or neural.TrainConfig(), lam)
    return assemble_nonlinear(snapshots, ae, approximator, approx, lam), histories


# ------------------------------------------------------------------- online

def scaled_inputs(model, t, mu):
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if mu.size != model.input_scaler.lo.size - 1:
        raise ShapeMismatch(f"mu has {mu.size} components, model expects {model.input_scaler.lo.size - 1}")
    X = model.input_scaler.transform(np.column_stack([t, np.tile(mu, (t.size, 1))]))
    return X


def predict_field(model, t, mu):
    """Denormalised temperature at time(s) ``t`` and parameter ``mu``.

    ``t`` is continuous; it need not be a stored timestamp. Queries outside
    the training box emit :class:`ExtrapolationWarning`. Returns
    ``(ny, nx)`` for scalar ``t`` and ``(len(t), ny, nx)`` otherwise.
    """
    scalar = np.ndim(t) == 0
    X = scaled_inputs(model, t, mu)
    if np.any(X < -1e-12) or np.any(X > 1 + 1e-12):
        warnings.warn("query lies outside the training box", ExtrapolationWarning, stacklevel=2)
    coeffs = _approximate(model, X)
    if model.kind == "linear":
        Y = pod.reconstruct_linear(model.basis, coeffs).reshape((-1,) + model.grid.shape)
    else:
        Y = _from_ae_grid(model.autoencoder.decode(coeffs), model.grid, model.autoencoder.side)
    out = denormalize(np.asarray(Y).reshape((-1,) + model.grid.shape), model.field_lo, model.field_hi)
    return out[0] if scalar else out


def predict_trajectory(model, traj):
    return predict_field(model, traj.times, traj.mu)


# ------------------------------------------------------------------ metrics

def diff_field(fom_field, rom_field):
    a = np.asarray(fom_field, dtype=np.float64)
    b = np.asarray(rom_field, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"field shapes differ: {a.shape} vs {b.shape}")
    return np.abs(a - b)


@dataclass
class TrajectoryMetrics:
    mse: float
    max_diff: float
    step_mse: np.ndarray
    step_max_diff: np.ndarray


def trajectory_metrics(model, traj):
    """Mean over steps of the per-step mean squared error, and the largest DIFF.

    ``model`` is a :class:`RomModel` or an array of predicted fields shaped
    like ``traj.T``.
    """
    pred = predict_trajectory(model, traj) if isinstance(model, RomModel) else np.asarray(model, dtype=np.float64)
    if traj.n_snapshots < 1:
        raise ShapeMismatch("trajectory has no snapshots")
    d = diff_field(traj.T, pred).reshape(traj.n_snapshots, -1)
    step_mse = np.mean(d * d, axis=1)
    step_max = d.max(axis=1)
    return TrajectoryMetrics(float(step_mse.mean()), float(step_max.max()), step_mse, step_max)


def moving_average_mse(series, window=50):
    """Trailing mean over the last ``min(window, k)`` entries at position ``k`` (1-based)."""
    s = np.asarray(series, dtype=np.float64)
    if s.size == 0:
        raise EmptySeries("empty series")
    if window < 1:
        raise ValueError("window must be at least 1")
    if window == 1:
        return s.copy()
    c = np.concatenate([[0.0], np.cumsum(s)])
    k = np.arange(1, s.size + 1)
    lo = np.maximum(k - window, 0)
    return (c[k] - c[lo]) / (k - lo)


def evaluate(model, snapshots, split="test", window=50):
    """Per-run metrics rows and a long-format per-step series for a split."""
    rows, series = [], []
    for k in snapshots.indices(split):
        tr = snapshots.trajectories[k]
        m = trajectory_metrics(model, tr)
        rid = snapshots.run_ids[k]
        rows.append({"run_id": rid, "mu": tr.mu.tolist(), "mse": m.mse, "max_diff": m.max_diff})
        avg = moving_average_mse(m.step_mse, window)
        for i, t in enumerate(tr.times):
            series.append({"run_id": rid, "step": i, "t": float(t), "mse": float(m.step_mse[i]),
                           "mse_moving_avg": float(avg[i]), "max_diff": float(m.step_max_diff[i])})
    return rows, series


def metrics_csv(rows, n_mu):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id"] + [f"mu_{k}" for k in range(n_mu)] + ["mse", "max_diff"])
    for r in rows:
        w.writerow([r["run_id"]] + [repr(float(v)) for v in r["mu"]] + [repr(r["mse"]), repr(r["max_diff"])])
    return buf.getvalue()


def series_csv(series):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "step", "t", "mse", "mse_moving_avg", "max_diff"])
    for r in series:
        w.writerow([r["run_id"], r["step"], repr(r["t"]), repr(r["mse"]), repr(r["mse_moving_avg"]),
                    repr(r["max_diff"])])
    return buf.getvalue()


# ----------------------------------------------------------------- speed-up

@dataclass
class SpeedupReport:
    fom_seconds: float
    rom_single_seconds: float
    rom_replay_seconds: float
    n_steps: int

    @property
    def single_ratio(self):
        return self.fom_seconds / self.rom_single_seconds

    @property
    def replay_ratio(self):
        return self.fom_seconds / self.rom_replay_seconds

    def to_csv(self):
        return ("fom_seconds,rom_single_seconds,rom_replay_seconds,n_steps,single_ratio,replay_ratio\n"
                f"{self.fom_seconds!r},{self.rom_single_seconds!r},{self.rom_replay_seconds!r},"
                f"{self.n_steps},{self.single_ratio!r},{self.replay_ratio!r}\n")


def benchmark_speedup(model, scenario, params, mu, repeats=20):
    """Wall-clock of one FOM trajectory against ROM queries at the same ``mu``.

    The single-query time is the median of ``repeats`` queries at the final
    time; the replay time answers every FOM timestamp one query at a time.
    """
    start = time.perf_counter()
    traj = run_simulation(scenario, params, mu)
    fom = time.perf_counter() - start
    t_end = float(traj.times[-1])
    laps = []
    for _ in range(repeats):
        start = time.perf_counter()
        predict_field(model, t_end, mu)
        laps.append(time.perf_counter() - start)
    start = time.perf_counter()
    for t in traj.times:
        predict_field(model, float(t), mu)
    replay = time.perf_counter() - start
    return SpeedupReport(fom, float(np.median(laps)), replay, traj.n_snapshots)


# ------------------------------------------------------------------ bundles

def save_rom(model, directory):
    """Write component checkpoints plus ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "kind": model.kind,
        "name": model.name,
        "input_scaler": model.input_scaler.to_dict(),
        "field_lo": model.field_lo,
        "field_hi": model.field_hi,
        "grid": [model.grid.nx, model.grid.ny, model.grid.lx, model.grid.ly],
        "approximator_kind": model.approximator_kind,
        "provenance": model.provenance,
    }
    if model.kind == "linear":
        pod.save_basis(model.basis, os.path.join(directory, "basis.prom"))
        neural.save_regressor(os.path.join(directory, "regressor.prom"), model.regressor)
    else:
        neural.save_model(os.path.join(directory, "autoencoder.prom"), model.autoencoder)
        path = os.path.join(directory, "approximator.prom")
        if model.approximator_kind == "mlp":
            neural.save_regressor(path, model.approximator)
        else:
            rbf.save_rbf(path, model.approximator)
    atomic_write_text(os.path.join(directory, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_rom(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        m = json.load(fh)
    nx, ny, lx, ly = m["grid"]
    model = RomModel(m["kind"], MinMaxScaler.from_dict(m["input_scaler"]), m["field_lo"], m["field_hi"],
                     Grid(int(nx), int(ny), lx, ly), approximator_kind=m["approximator_kind"],
                     provenance=m["provenance"])
    if model.kind == "linear":
        model.basis = pod.load_basis(os.path.join(directory, "basis.prom"))
        model.regressor, _ = neural.load_regressor(os.path.join(directory, "regressor.prom"))
    else:
        model.autoencoder, _ = neural.load_model(os.path.join(directory, "autoencoder.prom"))
        path = os.path.join(directory, "approximator.prom")
        if model.approximator_kind == "mlp":
            model.approximator, _ = neural.load_regressor(path)
        else:
            model.approximator, _ = rbf.load_rbf(path)
    return model

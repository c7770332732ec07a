"""Mini-batch training with best-validation checkpointing."""
import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import EmptyData, NonFinite, TrainError
from ..store import MinMaxScaler, atomic_write_text, read_artifact, write_artifact
from .models import MLP, build_model
from .optim import Adam, cosine_lr


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-3
    schedule: str = "constant"  # or "cosine"
    eta_min: float = 1e-6
    seed: int = 0
    early_stopping: bool = True
    max_steps: int = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "cosine" and not self.lr >= self.eta_min > 0:
            raise ValueError("cosine schedule needs lr >= eta_min > 0")


@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0

    @property
    def best_val(self):
        return self.val_loss[self.best_epoch] if self.best_epoch >= 0 else math.inf

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in zip(self.epoch, self.train_loss, self.val_loss, self.lr):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write_text(path, self.to_csv())


def mse(a, b):
    d = np.asarray(a) - np.asarray(b)
    return float(np.mean(d * d))


def predict_batched(model, X, batch=256):
    return np.concatenate([model.forward(X[i:i + batch]) for i in range(0, len(X), batch)])


def fit(model, X, Y, X_val, Y_val, config):
    """Minimise the mean squared error with mini-batch ADAM.

    The last incomplete batch is kept. Validation loss is measured in
    inference mode after every epoch; with ``early_stopping`` the model is
    left holding the parameters of the best validation epoch.

    Returns the :class:`History`. A non-finite loss raises
    :class:`TrainError` carrying the history so far.
    """
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    X_val, Y_val = np.asarray(X_val, dtype=np.float64), np.asarray(Y_val, dtype=np.float64)
    if len(X) == 0 or len(X_val) == 0:
        raise EmptyData("training and validation data must be nonempty")
    rng = np.random.default_rng(config.seed)
    opt = Adam()
    n = len(X)
    per_epoch = math.ceil(n / config.batch_size)
    step_f = config.epochs * per_epoch
    if config.max_steps is not None:
        step_f = min(step_f, config.max_steps)
    hist = History()
    best_state = None
    step = 0
    for epoch in range(config.epochs):
        if step >= step_f:
            break
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        lr = config.lr
        for start in range(0, n, config.batch_size):
            if step >= step_f:
                break
            idx = order[start:start + config.batch_size]
            lr = config.lr if config.schedule == "constant" else cosine_lr(step, step_f, config.eta_min, config.lr)
            model.zero_grad()
            pred = model.forward(X[idx], training=True)
            diff = pred - Y[idx].reshape(pred.shape)
            loss = float(np.mean(diff * diff))
            if not math.isfinite(loss):
                raise TrainError(f"non-finite training loss at step {step}", hist)
            model.backward(2.0 * diff / diff.size)
            try:
                opt.step(model.named_params(), lr)
            except NonFinite as err:
                raise TrainError(str(err), hist) from err
            total += loss * len(idx)
            seen += len(idx)
            step += 1
        pred_val = predict_batched(model, X_val)
        val = mse(pred_val, Y_val.reshape(pred_val.shape))
        if not math.isfinite(val):
            raise TrainError(f"non-finite validation loss at epoch {epoch}", hist)
        hist.epoch.append(epoch)
        hist.train_loss.append(total / max(seen, 1))
        hist.val_loss.append(val)
        hist.lr.append(lr)
        if val < hist.best_val:
            hist.best_epoch = len(hist.val_loss) - 1
            best_state = model.state_dict()
    hist.steps = step
    if config.early_stopping and best_state is not None:
        model.load_state_dict(best_state)
    model.optimizer = opt
    return hist


class Regressor:
    """MLP on scaled inputs whose targets are scaled per component to ``[0, 1]``."""

    def __init__(self, mlp, target_scaler):
        self.mlp = mlp
        self.target_scaler = target_scaler

    def predict(self, X):
        return self.target_scaler.inverse(self.mlp.forward(X))


def train_regressor(X, Y, X_val, Y_val, config, hidden=5, width=7):
    """Fit the tanh MLP to ``Y`` (rescaled with train-split bounds)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Y_val = np.atleast_2d(np.asarray(Y_val, dtype=np.float64))
    if len(Y) == 0 or len(Y_val) == 0:
        raise EmptyData("training and validation data must be nonempty")
    scaler = MinMaxScaler.fit(Y)
    mlp = MLP(np.shape(X)[1], Y.shape[1], hidden=hidden, width=width, seed=config.seed)
    hist = fit(mlp, X, scaler.transform(Y), X_val, scaler.transform(Y_val), config)
    return Regressor(mlp, scaler), hist


# ------------------------------------------------------------- checkpoints

def save_model(path, model, header=None, config=None, history=None, optimizer=None):
    head = {"model": model.config, "extra": header or {}}
    if config is not None:
        head["train"] = asdict(config)
    if history is not None:
        head["best_epoch"] = history.best_epoch
    arrays = dict(model.state_dict())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        head["adam_t"] = optimizer.t
    write_artifact(path, "model", head, arrays)


def load_model(path):
    head, arrays = read_artifact(path, "model")
    model = build_model(head["model"])
    model.load_state_dict(arrays)
    return model, head


def save_regressor(path, reg, header=None, config=None, history=None):
    extra = dict(header or {})
    extra["target_scaler"] = reg.target_scaler.to_dict()
    save_model(path, reg.mlp, extra, config, history)


def load_regressor(path):
    mlp, head = load_model(path)
    return Regressor(mlp, MinMaxScaler.from_dict(head["extra"]["target_scaler"])), head


def train_autoencoder(fields, val_fields, model_config, config):
    """Build an autoencoder from ``model_config`` and fit it to reproduce ``fields``.

    Fields are normalised ``(n, S, S)`` stacks; the loss is the mean squared
    reconstruction error.
    """
    fields = np.asarray(fields, dtype=np.float64)
    val_fields = np.asarray(val_fields, dtype=np.float64)
    if len(fields) == 0 or len(val_fields) == 0:
        raise EmptyData("training and validation fields must be nonempty")
    model = build_model(model_config)
    hist = fit(model, fields, fields, val_fields, val_fields, config)
    return model, hist

"""Snapshot persistence, dataset assembly, scaling and regridding.

Binary envelope (little endian)::

    b"PROM" | u32 version | u32 kind | payload | u32 crc32(everything before)

``kind`` 1 is a trajectory::

    u32 ny, u32 nx, f64 lx, f64 ly, u32 n_mu, f64[n_mu] mu,
    u32 n_t, f64[n_t] times, u32 field_mask (1=T, 2=p, 4=u),
    then per snapshot: T (ny*nx) [p (ny*nx)] [ux (ny*(nx+1)), uy ((ny+1)*nx)]

``kind`` 2 is a generic artifact: a JSON header followed by named arrays.
"""
import csv
import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadMagic, ChecksumMismatch, DomainMismatch, EmptySplit,
                     InsufficientRuns, ShapeMismatch, TruncatedFile, VersionMismatch)
from .fom import Grid, Trajectory

MAGIC = b"PROM"
VERSION = 1
KIND_TRAJECTORY = 1
KIND_ARTIFACT = 2
SPLITS = ("train", "validation", "test")

_F64 = np.dtype("<f8")
_I64 = np.dtype("<i8")


def atomic_write(path, data):
    """Write bytes to ``path`` through a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write(path, text.encode("utf-8"))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, count, dtype=_F64):
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).astype(dtype.newbyteorder("="))


def _seal(kind, payload):
    body = MAGIC + struct.pack("<II", VERSION, kind) + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _open(buf, kind):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a PROM file")
    if len(buf) < 16:
        raise TruncatedFile("file shorter than the envelope header")
    version, got_kind = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    if got_kind != kind:
        raise BadMagic(f"expected artifact kind {kind}, found {got_kind}")
    reader = _Reader(buf[:-4])
    reader.pos = 12
    return reader


def _check_crc(buf):
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("CRC32 mismatch")


# ------------------------------------------------------------- trajectories

def trajectory_bytes(traj):
    ny, nx = traj.grid.shape
    mask = 1 | (2 if traj.p is not None else 0) | (4 if traj.ux is not None else 0)
    out = io.BytesIO()
    out.write(struct.pack("<IIdd", ny, nx, traj.grid.lx, traj.grid.ly))
    mu = np.asarray(traj.mu, dtype=_F64)
    out.write(struct.pack("<I", mu.size))
    out.write(mu.tobytes())
    times = np.asarray(traj.times, dtype=_F64)
    out.write(struct.pack("<I", times.size))
    out.write(times.tobytes())
    out.write(struct.pack("<I", mask))
    for k in range(times.size):
        out.write(np.ascontiguousarray(traj.T[k], dtype=_F64).tobytes())
        if mask & 2:
            out.write(np.ascontiguousarray(traj.p[k], dtype=_F64).tobytes())
        if mask & 4:
            out.write(np.ascontiguousarray(traj.ux[k], dtype=_F64).tobytes())
            out.write(np.ascontiguousarray(traj.uy[k], dtype=_F64).tobytes())
    return _seal(KIND_TRAJECTORY, out.getvalue())


def write_trajectory(traj, path):
    atomic_write(path, trajectory_bytes(traj))


def trajectory_from_bytes(buf):
    reader = _open(buf, KIND_TRAJECTORY)
    ny, nx, lx, ly = reader.unpack("<IIdd")
    (n_mu,) = reader.unpack("<I")
    mu = reader.array(n_mu)
    (nt,) = reader.unpack("<I")
    times = reader.array(nt)
    (mask,) = reader.unpack("<I")
    T = np.empty((nt, ny, nx))
    p = np.empty((nt, ny, nx)) if mask & 2 else None
    ux = np.empty((nt, ny, nx + 1)) if mask & 4 else None
    uy = np.empty((nt, ny + 1, nx)) if mask & 4 else None
    for k in range(nt):
        T[k] = reader.array(ny * nx).reshape(ny, nx)
        if p is not None:
            p[k] = reader.array(ny * nx).reshape(ny, nx)
        if ux is not None:
            ux[k] = reader.array(ny * (nx + 1)).reshape(ny, nx + 1)
            uy[k] = reader.array((ny + 1) * nx).reshape(ny + 1, nx)
    if reader.pos != len(reader.buf):
        raise TruncatedFile("trailing bytes before checksum")
    _check_crc(buf)
    return Trajectory(mu=mu, times=times, T=T, grid=Grid(nx, ny, lx, ly), p=p, ux=ux, uy=uy)


def read_trajectory(path):
    with open(path, "rb") as fh:
        return trajectory_from_bytes(fh.read())


# ---------------------------------------------------------------- artifacts

def artifact_bytes(kind_name, header, arrays):
    """Serialise a JSON-able ``header`` and a dict of float/int arrays."""
    head = json.dumps({"kind": kind_name, **header}, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(struct.pack("<I", len(head)))
    out.write(head)
    out.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        is_int = np.issubdtype(a.dtype, np.integer)
        a = np.asarray(a, dtype=_I64 if is_int else _F64)
        key = name.encode("utf-8")
        out.write(struct.pack("<H", len(key)))
        out.write(key)
        out.write(struct.pack("<BI", 1 if is_int else 0, a.ndim))
        out.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.write(a.tobytes())
    return _seal(KIND_ARTIFACT, out.getvalue())


def write_artifact(path, kind_name, header, arrays):
    atomic_write(path, artifact_bytes(kind_name, header, arrays))


def read_artifact(path, kind_name=None):
    """Return ``(header, arrays)``; checks ``header['kind']`` when given."""
    with open(path, "rb") as fh:
        buf = fh.read()
    reader = _open(buf, KIND_ARTIFACT)
    (hlen,) = reader.unpack("<I")
    header = json.loads(reader.take(hlen).decode("utf-8"))
    (count,) = reader.unpack("<I")
    arrays = {}
    for _ in range(count):
        (klen,) = reader.unpack("<H")
        name = reader.take(klen).decode("utf-8")
        is_int, ndim = reader.unpack("<BI")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        dtype = _I64 if is_int else _F64
        arrays[name] = reader.array(int(np.prod(shape, dtype=np.int64)), dtype).reshape(shape)
    _check_crc(buf)
    if kind_name is not None and header.get("kind") != kind_name:
        raise BadMagic(f"expected a {kind_name!r} artifact, found {header.get('kind')!r}")
    return header, arrays


# ------------------------------------------------------------ normalisation

def normalize(x, lo, hi):
    """Map ``[lo, hi]`` affinely onto ``[0, 1]``; a degenerate range maps to 0."""
    x = np.asarray(x, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def denormalize(y, lo, hi):
    y = np.asarray(y, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return np.where(hi > lo, lo + y * (hi - lo), lo)


@dataclass
class MinMaxScaler:
    """Per-component affine map to ``[0, 1]``; columns flagged ``log`` use log10."""

    lo: np.ndarray
    hi: np.ndarray
    log: np.ndarray = None

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if self.log is None:
            self.log = np.zeros(self.lo.shape, dtype=bool)
        self.log = np.atleast_1d(np.asarray(self.log, dtype=bool))

    @classmethod
    def fit(cls, data, log=None):
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        log = np.zeros(data.shape[1], dtype=bool) if log is None else np.asarray(log, dtype=bool)
        warped = np.where(log, np.log10(np.where(log, data, 1.0)), data)
        return cls(warped.min(axis=0), warped.max(axis=0), log)

    def _warp(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(self.log, np.log10(np.where(self.log, x, 1.0)), x)

    def transform(self, x):
        return normalize(self._warp(x), self.lo, self.hi)

    def inverse(self, y):
        w = denormalize(y, self.lo, self.hi)
        return np.where(self.log, 10.0 ** np.where(self.log, w, 0.0), w)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "log": self.log.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"], d["log"])


# ------------------------------------------------------------------ dataset

@dataclass
class SnapshotSet:
    """Trajectories with split labels and train-split scaling bounds."""

    trajectories: list
    splits: list
    run_ids: list = None
    log_flags: np.ndarray = None
    field_lo: float = 0.0
    field_hi: float = 1.0
    input_scaler: MinMaxScaler = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.run_ids is None:
            self.run_ids = [f"run{k:04d}" for k in range(len(self.trajectories))]
        n_mu = self.trajectories[0].mu.size if self.trajectories else 0
        if self.log_flags is None:
            self.log_flags = np.zeros(n_mu, dtype=bool)
        self.log_flags = np.asarray(self.log_flags, dtype=bool)
        if self.input_scaler is None and "train" in self.splits:
            self.refresh_bounds()

    def refresh_bounds(self):
        """Recompute field and input bounds from the training split only."""
        train = self.select("train")
        if not train:
            raise EmptySplit("no training trajectories")
        self.field_lo = float(min(tr.T.min() for tr in train))
        self.field_hi = float(max(tr.T.max() for tr in train))
        t_all = np.concatenate([tr.times for tr in train])
        mu_all = np.stack([tr.mu for tr in train])
        lo = np.concatenate([[t_all.min()], self._warp_mu(mu_all).min(axis=0)])
        hi = np.concatenate([[t_all.max()], self._warp_mu(mu_all).max(axis=0)])
        self.input_scaler = MinMaxScaler(lo, hi, np.concatenate([[False], self.log_flags]))

    def _warp_mu(self, mu):
        return np.where(self.log_flags, np.log10(np.where(self.log_flags, mu, 1.0)), mu)

    @property
    def grid(self):
        return self.trajectories[0].grid

    def indices(self, split):
        return [k for k, s in enumerate(self.splits) if s == split]

    def select(self, split):
        return [self.trajectories[k] for k in self.indices(split)]

    def normalize_field(self, T):
        return normalize(T, self.field_lo, self.field_hi)

    def denormalize_field(self, Y):
        return denormalize(Y, self.field_lo, self.field_hi)

    def manifest_rows(self):
        rows = []
        for rid, tr, split in zip(self.run_ids, self.trajectories, self.splits):
            rows.append({"run_id": rid, "mu": tr.mu.tolist(), "split": split, "n_t": tr.n_snapshots})
        return rows


@dataclass
class TrainingPairs:
    """Stacked (time, parameter) inputs in ``[0, 1]`` and their targets.

    Row ``k`` belongs to trajectory ``traj[k]`` at snapshot ``step[k]``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    traj: np.ndarray
    step: np.ndarray
    scaler: MinMaxScaler

    def __len__(self):
        return self.inputs.shape[0]


def raw_inputs(trajectories):
    """Unscaled ``(t, mu...)`` rows for every snapshot of every trajectory."""
    rows = [np.column_stack([tr.times, np.tile(tr.mu, (tr.n_snapshots, 1))]) for tr in trajectories]
    return np.concatenate(rows)


def stack_training_pairs(snapshots, split="train", targets="full_field"):
    """One pair per (trajectory, snapshot) of ``split``.

    ``targets`` is ``"full_field"`` (normalised, flattened temperature) or a
    list of arrays, one ``(n_snapshots, q)`` latent array per trajectory of
    the split, in split order.
    """
    idx = snapshots.indices(split)
    if not idx:
        raise EmptySplit(f"split {split!r} is empty")
    trajs = [snapshots.trajectories[k] for k in idx]
    X = snapshots.input_scaler.transform(raw_inputs(trajs))
    if isinstance(targets, str):
        if targets != "full_field":
            raise ValueError(f"unknown target kind {targets!r}")
        Y = np.concatenate([snapshots.normalize_field(tr.T).reshape(tr.n_snapshots, -1) for tr in trajs])
    else:
        if len(targets) != len(trajs):
            raise ShapeMismatch(f"{len(targets)} latent arrays for {len(trajs)} trajectories")
        for tr, z in zip(trajs, targets):
            if len(z) != tr.n_snapshots:
                raise ShapeMismatch("latent array length does not match snapshot count")
        Y = np.concatenate([np.asarray(z, dtype=np.float64).reshape(len(z), -1) for z in targets])
    traj = np.concatenate([np.full(tr.n_snapshots, k) for k, tr in zip(idx, trajs)])
    step = np.concatenate([np.arange(tr.n_snapshots) for tr in trajs])
    return TrainingPairs(X, Y, traj, step, snapshots.input_scaler)


# -------------------------------------------------------------- regridding

def _lattice_weights(n_src, n_dst):
    s = np.linspace(0.0, n_src - 1.0, n_dst)
    i0 = np.clip(np.floor(s).astype(int), 0, max(n_src - 2, 0))
    f = s - i0
    if n_src == 1:
        return np.zeros(n_dst, dtype=int), np.zeros(n_dst), 0
    return i0, f, 1


def regrid_bilinear(values, grid_a, grid_b):
    """Bilinear resampling between structured grids over the same domain.

    Samples are treated as a node lattice spanning the closed domain
    (first and last samples on the walls), so the map never extrapolates:
    constants and affine fields are reproduced exactly and values stay within
    the source range. Leading axes of ``values`` are batch axes.
    """
    if not (np.isclose(grid_a.lx, grid_b.lx, rtol=1e-12) and np.isclose(grid_a.ly, grid_b.ly, rtol=1e-12)):
        raise DomainMismatch(f"domains differ: {grid_a.lx}x{grid_a.ly} vs {grid_b.lx}x{grid_b.ly}")
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2:] != grid_a.shape:
        raise ShapeMismatch(f"field shape {values.shape[-2:]} != grid {grid_a.shape}")
    ix, fx, dx = _lattice_weights(grid_a.nx, grid_b.nx)
    iy, fy, dy = _lattice_weights(grid_a.ny, grid_b.ny)
    rows = values[..., :, ix] * (1.0 - fx) + values[..., :, ix + dx] * fx
    return rows[..., iy, :] * (1.0 - fy)[:, None] + rows[..., iy + dy, :] * fy[:, None]


# ---------------------------------------------------------- parameter design

def _grid_counts(M, P):
    """Near-equal integer factorisation of ``M`` into ``P`` per-axis counts."""
    if P == 1:
        return [M]
    best = None
    for a in range(1, M + 1):
        if M % a:
            continue
        rest = _grid_counts(M // a, P - 1)
        counts = sorted([a] + rest, reverse=True)
        if best is None or counts[0] - counts[-1] < best[0] - best[-1]:
            best = counts
    return best


def equispaced_points(ranges, log_flags, M):
    """``M`` equispaced parameter vectors (tensor grid when ``P > 1``)."""
    ranges = np.atleast_2d(np.asarray(ranges, dtype=np.float64))
    P = ranges.shape[0]
    log_flags = np.zeros(P, dtype=bool) if log_flags is None else np.asarray(log_flags, dtype=bool)
    axes = []
    for (lo, hi), lg, n in zip(ranges, log_flags, _grid_counts(M, P)):
        if lg:
            axes.append(10.0 ** np.linspace(np.log10(lo), np.log10(hi), n) if n > 1 else np.array([10.0 ** np.log10(lo)]))
        else:
            axes.append(np.linspace(lo, hi, n) if n > 1 else np.array([lo]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def design_parameters(ranges, log_flags, M, M_v, M_t, seed):
    """Equispaced training parameters plus disjoint random validation/test draws.

    Returns ``(mu, splits)`` with ``mu`` of shape ``(M + M_v + M_t, P)``.
    """
    ranges = np.atleast_2d(np.asarray(ranges, dtype=np.float64))
    P = ranges.shape[0]
    log_flags = np.zeros(P, dtype=bool) if log_flags is None else np.asarray(log_flags, dtype=bool)
    train = equispaced_points(ranges, log_flags, M)
    rng = np.random.default_rng(seed)
    lo = np.where(log_flags, np.log10(ranges[:, 0]), ranges[:, 0])
    hi = np.where(log_flags, np.log10(ranges[:, 1]), ranges[:, 1])
    taken = {tuple(row) for row in train}
    extra = []
    while len(extra) < M_v + M_t:
        w = lo + (hi - lo) * rng.random(P)
        row = np.where(log_flags, 10.0 ** np.where(log_flags, w, 0.0), w)
        key = tuple(row)
        if key in taken:
            continue
        taken.add(key)
        extra.append(row)
    mu = np.vstack([train] + ([np.array(extra)] if extra else []))
    splits = ["train"] * M + ["validation"] * M_v + ["test"] * M_t
    return mu, splits


def split_set(trajectories, M, M_v, M_t, seed, ranges=None, log_flags=None, run_ids=None):
    """Assign train/validation/test labels and compute train-only bounds.

    Training runs are the ones closest to an equispaced grid over the
    parameter range (log-spaced for flagged components); validation and test
    runs are drawn with ``seed`` from the remaining runs whose parameters do
    not coincide with any training parameter. Leftover runs are ``"unused"``.
    """
    if M < 1 or M + M_v + M_t > len(trajectories):
        raise InsufficientRuns(f"need {M + M_v + M_t} runs, have {len(trajectories)}")
    mus = np.stack([np.atleast_1d(tr.mu) for tr in trajectories])
    P = mus.shape[1]
    log_flags = np.zeros(P, dtype=bool) if log_flags is None else np.asarray(log_flags, dtype=bool)
    if ranges is None:
        ranges = np.column_stack([mus.min(axis=0), mus.max(axis=0)])
    ranges = np.atleast_2d(np.asarray(ranges, dtype=np.float64))
    warp = lambda a: np.where(log_flags, np.log10(np.where(log_flags, a, 1.0)), a)
    lo, hi = warp(ranges[:, 0]), warp(ranges[:, 1])
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (warp(mus) - lo) / span
    targets = (warp(equispaced_points(ranges, log_flags, M)) - lo) / span

    splits = ["unused"] * len(trajectories)
    free = set(range(len(trajectories)))
    for target in targets:
        order = sorted(free, key=lambda k: (float(np.sum((scaled[k] - target) ** 2)), k))
        splits[order[0]] = "train"
        free.discard(order[0])
    train_keys = {tuple(mus[k]) for k in range(len(mus)) if splits[k] == "train"}
    candidates = sorted(k for k in free if tuple(mus[k]) not in train_keys)
    if len(candidates) < M_v + M_t:
        raise InsufficientRuns(f"only {len(candidates)} runs with parameters disjoint from training")
    rng = np.random.default_rng(seed)
    picked = [candidates[k] for k in rng.permutation(len(candidates))[:M_v + M_t]]
    for k in picked[:M_v]:
        splits[k] = "validation"
    for k in picked[M_v:]:
        splits[k] = "test"
    return SnapshotSet(list(trajectories), splits, run_ids=run_ids, log_flags=log_flags)


# ----------------------------------------------------------------- manifest

def write_manifest_csv(path, rows, n_mu):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id"] + [f"mu_{k}" for k in range(n_mu)] + ["split", "n_t", "file"])
    for row in rows:
        w.writerow([row["run_id"]] + [repr(float(v)) for v in row["mu"]]
                   + [row["split"], row["n_t"], row.get("file", "")])
    atomic_write_text(path, buf.getvalue())


def read_manifest_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            mu_keys = sorted((k for k in rec if k.startswith("mu_")), key=lambda k: int(k[3:]))
            rows.append({
                "run_id": rec["run_id"],
                "mu": [float(rec[k]) for k in mu_keys],
                "split": rec["split"],
                "n_t": int(rec["n_t"]),
                "file": rec.get("file", ""),
            })
    return rows

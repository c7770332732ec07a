"""Command-line pipeline: generate, split, train, build, predict, evaluate.

Every subcommand reads the same INI config (``--config`` or ``--preset``)
and writes its artifacts atomically under the configured directories.
Exit codes: 0 success, 2 config error, 3 data error, 4 training error,
5 I/O error. Failures print one ``error: code=... type=... message=...``
line to stderr.
"""
import argparse
import concurrent.futures
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__, diagnostics, fom, neural, pod, rbf, rom, store
from .config import PRESETS, load_config
from .errors import ConfigError, DataError, RpomError, TrainError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN, EXIT_IO = 0, 2, 3, 4, 5


# ------------------------------------------------------------ data helpers

def _runs_dir(cfg):
    return os.path.join(cfg.path("data_dir"), "runs")


def _read_rows(path):
    if not os.path.exists(path):
        raise DataError(f"missing {path}; run the earlier pipeline stages first")
    return store.read_manifest_csv(path)


def load_snapshot_set(cfg):
    """The split dataset written by ``split``, with train-only bounds."""
    rows = _read_rows(os.path.join(cfg.path("data_dir"), "splits.csv"))
    trajs = [store.read_trajectory(os.path.join(cfg.path("data_dir"), r["file"])) for r in rows]
    return store.SnapshotSet(trajs, [r["split"] for r in rows], [r["run_id"] for r in rows],
                             log_flags=cfg.log_flags)


def _simulate(args):
    scenario, params, mu = args
    return fom.run_simulation(scenario, params, mu)


def _model_path(cfg, name):
    return os.path.join(cfg.path("model_dir"), name)


def _report_path(cfg, name):
    os.makedirs(cfg.path("report_dir"), exist_ok=True)
    return os.path.join(cfg.path("report_dir"), name)


def _approximator_file(kind):
    return f"approximator-{kind}.prom"


def _bundle_dir(cfg):
    if cfg["model.path"] == "linear":
        return _model_path(cfg, "rom-linear")
    return _model_path(cfg, f"rom-nonlinear-{cfg['model.approximator']}")


def _n_modes(cfg):
    return cfg["model.n"] or None


def _parse_mu(text):
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"--mu must be comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------- commands

def cmd_generate(cfg, args):
    M, Mv, Mt = cfg.counts()
    mu, splits = store.design_parameters(cfg.ranges, cfg.log_flags, M, Mv, Mt, cfg.seed)
    scenario, params = cfg.scenario(), cfg.solver_params()
    jobs = [(scenario, params, m) for m in mu]
    workers = args.workers or cfg["run.workers"]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_simulate, jobs))
    else:
        trajs = [_simulate(j) for j in jobs]
    os.makedirs(_runs_dir(cfg), exist_ok=True)
    rows = []
    for k, (tr, split) in enumerate(zip(trajs, splits)):
        rel = os.path.join("runs", f"run{k:04d}.prom")
        store.write_trajectory(tr, os.path.join(cfg.path("data_dir"), rel))
        rows.append({"run_id": f"run{k:04d}", "mu": tr.mu.tolist(), "split": split,
                     "n_t": tr.n_snapshots, "file": rel})
    store.write_manifest_csv(os.path.join(cfg.path("data_dir"), "manifest.csv"), rows, mu.shape[1])
    return f"generated {len(rows)} runs"


def cmd_split(cfg, args):
    rows = _read_rows(os.path.join(cfg.path("data_dir"), "manifest.csv"))
    trajs = [store.read_trajectory(os.path.join(cfg.path("data_dir"), r["file"])) for r in rows]
    M, Mv, Mt = cfg.counts()
    ss = store.split_set(trajs, M, Mv, Mt, cfg.seed, cfg.ranges, cfg.log_flags,
                         run_ids=[r["run_id"] for r in rows])
    for row, split in zip(rows, ss.splits):
        row["split"] = split
    store.write_manifest_csv(os.path.join(cfg.path("data_dir"), "splits.csv"), rows, len(cfg.ranges))
    bounds = {"field_lo": ss.field_lo, "field_hi": ss.field_hi, "inputs": ss.input_scaler.to_dict()}
    store.atomic_write_text(os.path.join(cfg.path("data_dir"), "bounds.json"),
                            json.dumps(bounds, indent=2, sort_keys=True) + "\n")
    counts = {s: ss.splits.count(s) for s in store.SPLITS}
    return "split " + " ".join(f"{k}={v}" for k, v in counts.items())


def cmd_train_pod(cfg, args):
    ss = load_snapshot_set(cfg)
    basis = rom.fit_linear_basis(ss, cfg["model.n_int"], _n_modes(cfg))
    pod.save_basis(basis, _model_path(cfg, "basis.prom"))
    eig = pod.normalized_eigenvalues([ss.normalize_field(tr.T) for tr in ss.select("train")],
                                     cfg["model.n_int"], ss.grid.cell_area)
    pod.write_eigen_csv(_report_path(cfg, "eigenvalues.csv"), eig)
    return f"basis with {basis.n_modes} modes"


def cmd_train_ae(cfg, args):
    ss = load_snapshot_set(cfg)
    tc = cfg.train_config("train_ae")
    ae, hist = rom.train_set_autoencoder(ss, cfg.ae_config(), tc)
    neural.save_model(_model_path(cfg, "autoencoder.prom"), ae, config=tc, history=hist)
    hist.write_csv(_report_path(cfg, "ae_history.csv"))
    return f"autoencoder best validation loss {hist.best_val:.6g}"


def _load_component(path, loader):
    if not os.path.exists(path):
        raise DataError(f"missing {path}; run the earlier pipeline stages first")
    return loader(path)


def cmd_train_approximator(cfg, args):
    ss = load_snapshot_set(cfg)
    tc = cfg.train_config("train")
    if cfg["model.path"] == "linear":
        basis = _load_component(_model_path(cfg, "basis.prom"), pod.load_basis)
        reg, hist = rom.train_theta_regressor(ss, basis, tc)
        neural.save_regressor(_model_path(cfg, "regressor.prom"), reg, config=tc, history=hist)
        hist.write_csv(_report_path(cfg, "regressor_history.csv"))
        return f"coefficient regressor best validation loss {hist.best_val:.6g}"
    ae, _ = _load_component(_model_path(cfg, "autoencoder.prom"), neural.load_model)
    kind = cfg["model.approximator"]
    approx, hist = rom.fit_latent_approximator(ss, ae, kind, tc, cfg["model.rbf_lambda"])
    path = _model_path(cfg, _approximator_file(kind))
    if kind == "mlp":
        neural.save_regressor(path, approx, config=tc, history=hist)
        hist.write_csv(_report_path(cfg, "approximator_history.csv"))
        return f"latent regressor best validation loss {hist.best_val:.6g}"
    rbf.save_rbf(path, approx)
    z = np.concatenate(rom.encode_split(ae, ss, "train"))
    res = rbf.center_residuals(approx, z)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["center", "max_abs_residual"])
    for k, r in enumerate(res):
        w.writerow([k, repr(float(r))])
    store.atomic_write_text(_report_path(cfg, f"rbf_residuals-{kind}.csv"), buf.getvalue())
    return f"{kind} fitted on {len(res)} centers, max residual {res.max():.3g}"


def cmd_build_rom(cfg, args):
    ss = load_snapshot_set(cfg)
    if cfg["model.path"] == "linear":
        basis = _load_component(_model_path(cfg, "basis.prom"), pod.load_basis)
        reg, _ = _load_component(_model_path(cfg, "regressor.prom"), neural.load_regressor)
        model = rom.assemble_linear(ss, basis, reg)
    else:
        kind = cfg["model.approximator"]
        ae, _ = _load_component(_model_path(cfg, "autoencoder.prom"), neural.load_model)
        path = _model_path(cfg, _approximator_file(kind))
        loader = neural.load_regressor if kind == "mlp" else rbf.load_rbf
        approx, _ = _load_component(path, loader)
        model = rom.assemble_nonlinear(ss, ae, kind, approx, cfg["model.rbf_lambda"])
    rom.save_rom(model, _bundle_dir(cfg))
    return f"built {model.name}"


def _load_rom(cfg):
    d = _bundle_dir(cfg)
    if not os.path.exists(os.path.join(d, "manifest.json")):
        raise DataError(f"no ROM bundle in {d}; run build-rom first")
    return rom.load_rom(d)


def cmd_predict(cfg, args):
    model = _load_rom(cfg)
    if args.mu is None:
        raise ConfigError("predict needs --mu")
    mu = _parse_mu(args.mu)
    if args.times_file:
        try:
            with open(args.times_file) as fh:
                times = [float(line) for line in fh if line.strip()]
        except ValueError:
            raise DataError(f"{args.times_file} must hold one number per line") from None
    elif args.t is not None:
        times = [args.t]
    else:
        raise ConfigError("predict needs --t or --times-file")
    out_dir = args.out or os.path.join(cfg.path("report_dir"), "predictions")
    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"mu_{k}" for k in range(mu.size)] + ["file", "min", "max", "mean"])
    fields = rom.predict_field(model, np.array(times), mu)
    for k, (t, field) in enumerate(zip(times, fields)):
        name = f"field_{k:04d}.prom"
        store.write_artifact(os.path.join(out_dir, name), "field",
                             {"t": t, "mu": mu.tolist(), "model": model.name,
                              "grid": [model.grid.nx, model.grid.ny, model.grid.lx, model.grid.ly]},
                             {"T": field})
        w.writerow([repr(t)] + [repr(float(v)) for v in mu]
                   + [name, repr(float(field.min())), repr(float(field.max())), repr(float(field.mean()))])
    store.atomic_write_text(os.path.join(out_dir, "predictions.csv"), buf.getvalue())
    return f"wrote {len(times)} predicted fields to {out_dir}"


def cmd_evaluate(cfg, args):
    model = _load_rom(cfg)
    ss = load_snapshot_set(cfg)
    rows, series = rom.evaluate(model, ss, args.split)
    if not rows:
        raise DataError(f"split {args.split!r} is empty")
    tag = os.path.basename(_bundle_dir(cfg))
    store.atomic_write_text(_report_path(cfg, f"metrics-{tag}-{args.split}.csv"),
                            rom.metrics_csv(rows, len(cfg.ranges)))
    store.atomic_write_text(_report_path(cfg, f"metrics-{tag}-{args.split}-series.csv"), rom.series_csv(series))
    worst = max(r["mse"] for r in rows)
    return f"{model.name}: worst {args.split} MSE {worst:.6g}"


def cmd_diagnose(cfg, args):
    ss = load_snapshot_set(cfg)
    split = cfg["diagnostics.split"]
    X, labels, times = diagnostics.snapshot_rows(ss, split)
    emb = diagnostics.pca_embed(X, 2, labels, times)
    diagnostics.export_embedding_csv(emb, _report_path(cfg, "pca.csv"))
    perp = cfg["diagnostics.perplexity"] or None
    ts = diagnostics.tsne_embed(X, perp, cfg["diagnostics.iterations"], cfg.seed, labels=labels, times=times)
    diagnostics.export_embedding_csv(ts, _report_path(cfg, "tsne.csv"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "kl"])
    for it, kl in ts.kl_history:
        w.writerow([it, repr(kl)])
    store.atomic_write_text(_report_path(cfg, "tsne_kl.csv"), buf.getvalue())
    n_int = min(cfg["model.n_int"], min(tr.n_snapshots for tr in ss.select("train")))
    eig = pod.normalized_eigenvalues([ss.normalize_field(tr.T) for tr in ss.select("train")], n_int,
                                     ss.grid.cell_area)
    pod.write_eigen_csv(_report_path(cfg, "eigenvalues.csv"), eig)
    return f"embedded {len(X)} snapshots; PCA explains {emb.explained[:2].sum():.3f} in 2 components"


def cmd_benchmark(cfg, args):
    model = _load_rom(cfg)
    mu = _parse_mu(args.mu) if args.mu else cfg.ranges.mean(axis=1)
    rep = rom.benchmark_speedup(model, cfg.scenario(), cfg.solver_params(), mu, args.repeats)
    store.atomic_write_text(_report_path(cfg, f"speedup-{os.path.basename(_bundle_dir(cfg))}.csv"), rep.to_csv())
    return f"single-query speed-up {rep.single_ratio:.3g}x, replay {rep.replay_ratio:.3g}x"


COMMANDS = {
    "generate": (cmd_generate, "run the full-order solver for the designed parameters"),
    "split": (cmd_split, "assign train/validation/test labels and bounds"),
    "train-pod": (cmd_train_pod, "compute the nested POD basis"),
    "train-ae": (cmd_train_ae, "train the autoencoder"),
    "train-approximator": (cmd_train_approximator, "fit the (t, mu) -> coefficient map"),
    "build-rom": (cmd_build_rom, "bundle trained components into a ROM"),
    "predict": (cmd_predict, "query the ROM at given times and parameters"),
    "evaluate": (cmd_evaluate, "error metrics against held-out full-order runs"),
    "diagnose": (cmd_diagnose, "PCA / t-SNE embeddings and eigenvalue decay"),
    "benchmark": (cmd_benchmark, "wall-clock full-order run vs ROM queries"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rpom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rpom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="INI config file")
        src.add_argument("--preset", choices=PRESETS, help="built-in desk-scale preset")
        p.add_argument("--workdir", help="base directory for relative paths (default: config dir or cwd)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        if name == "generate":
            p.add_argument("--workers", type=int, default=0, help="parallel solver processes")
        if name == "predict":
            p.add_argument("--t", type=float, help="query time")
            p.add_argument("--times-file", help="file with one query time per line")
            p.add_argument("--mu", help="parameter vector, comma separated")
            p.add_argument("--out", help="output directory (default: <report_dir>/predictions)")
        if name == "evaluate":
            p.add_argument("--split", default="test", choices=store.SPLITS)
        if name == "benchmark":
            p.add_argument("--mu", help="parameter vector (default: range midpoint)")
            p.add_argument("--repeats", type=int, default=20)
    return parser


def exit_code(err):
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, TrainError):
        return EXIT_TRAIN
    if isinstance(err, RpomError):
        return EXIT_DATA
    if isinstance(err, OSError):
        return EXIT_IO
    raise err


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        base = args.workdir or (None if args.config else os.getcwd())
        cfg = load_config(args.config, args.preset, base, args.set)
        message = COMMANDS[args.command][0](cfg, args)
    except (RpomError, OSError) as err:
        code = exit_code(err)
        text = str(err).replace("\n", " ")
        print(f"error: code={code} type={type(err).__name__} message={text}", file=sys.stderr)
        return code
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

import csv
import os

import numpy as np
import pytest

from rpom import cli, rom, store
from rpom.config import PRESETS, load_config, parse_config
from rpom.errors import ConfigError

TINY = [
    "scenario.nx=16", "scenario.ny=16", "solver.t_end=0.005",
    "dataset.m_train=3", "dataset.m_validation=1", "dataset.m_test=2",
    "model.n_int=3", "model.n=3", "train.epochs=30",
    "autoencoder.side=16", "autoencoder.hidden=2", "autoencoder.latent=2", "autoencoder.dropout=0",
    "train_ae.epochs=1", "diagnostics.iterations=60",
]


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("RPOM_SEED", raising=False)


def run(workdir, command, *extra, sets=()):
    argv = [command, "--preset", "ex1_heated_side", "--workdir", str(workdir)]
    for s in TINY + list(sets):
        argv += ["--set", s]
    return cli.main(argv + list(extra))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    os.environ.pop("RPOM_SEED", None)
    wd = tmp_path_factory.mktemp("pipe")
    for cmd in ("generate", "split", "train-pod", "train-approximator", "build-rom"):
        assert run(wd, cmd) == 0, cmd
    return wd


# ------------------------------------------------------------------ config

def test_presets_load():
    for name in PRESETS:
        cfg = load_config(preset=name)
        assert len(cfg.ranges) == cfg.scenario().n_params
    cfg = load_config(preset="ex3_modified_elder")
    np.testing.assert_array_equal(cfg.log_flags, [False, True])
    np.testing.assert_array_equal(cfg.ranges, [[350, 450], [0.001, 100]])


def test_defaults_and_overrides():
    cfg = parse_config("", overrides=["solver.t_end=0.1", "train.schedule=cosine"])
    assert cfg["solver.t_end"] == 0.1 and cfg.solver_params().bdf_order == 4
    assert cfg.train_config().schedule == "cosine"
    assert cfg.counts() == (6, 2, 2)


def test_env_seed(monkeypatch):
    monkeypatch.setenv("RPOM_SEED", "17")
    assert parse_config("[run]\nseed = 3\n").seed == 17


@pytest.mark.parametrize("text, overrides", [
    ("[bogus]\nx = 1\n", ()),
    ("[run]\ncolour = red\n", ()),
    ("[scenario]\nnx = many\n", ()),
    ("[scenario]\nname = modified_elder\n", ()),
    ("[dataset]\nmu_ranges = 80:40\n", ()),
    ("[dataset]\nmu_ranges = 0:10\nmu_log = true\n", ()),
    ("[model]\napproximator = rbf-linear\n", ()),
    ("[train]\nschedule = cosine\neta_min = 0\n", ()),
    ("[solver]\ndt0 = 1\ndt_max = 0.1\n", ()),
    ("", ["nonsense"]),
    ("", ["run.unknown=1"]),
])
def test_config_errors(text, overrides):
    with pytest.raises(ConfigError):
        parse_config(text, overrides=overrides)


# --------------------------------------------------------------- pipeline

def test_generate_writes_runs_and_manifest(pipeline):
    rows = store.read_manifest_csv(pipeline / "data" / "manifest.csv")
    assert len(rows) == 6 and len(os.listdir(pipeline / "data" / "runs")) == 6
    splits = store.read_manifest_csv(pipeline / "data" / "splits.csv")
    assert sorted(r["split"] for r in splits) == ["test", "test", "train", "train", "train", "validation"]
    assert (pipeline / "reports" / "eigenvalues.csv").exists()
    assert (pipeline / "models" / "rom-linear" / "manifest.json").exists()


def test_generate_is_idempotent(pipeline):
    before = (pipeline / "data" / "runs" / "run0003.prom").read_bytes()
    assert run(pipeline, "generate") == 0
    assert (pipeline / "data" / "runs" / "run0003.prom").read_bytes() == before


def test_predict_matches_library(pipeline):
    out = pipeline / "pred"
    assert run(pipeline, "predict", "--t", "0.003", "--mu", "60", "--out", str(out)) == 0
    rows = list(csv.DictReader(open(out / "predictions.csv")))
    assert len(rows) == 1 and rows[0]["file"] == "field_0000.prom"
    _, arrays = store.read_artifact(out / "field_0000.prom", "field")
    model = rom.load_rom(pipeline / "models" / "rom-linear")
    assert np.array_equal(arrays["T"], rom.predict_field(model, np.array([0.003]), [60.0])[0])
    (pipeline / "times.txt").write_text("0.001\n0.002\n\n0.004\n")
    assert run(pipeline, "predict", "--times-file", str(pipeline / "times.txt"), "--mu", "55", "--out", str(out)) == 0
    assert len(list(csv.DictReader(open(out / "predictions.csv")))) == 3


def test_evaluate_matches_library(pipeline):
    assert run(pipeline, "evaluate", "--split", "test") == 0
    rows = list(csv.DictReader(open(pipeline / "reports" / "metrics-rom-linear-test.csv")))
    cfg = load_config(preset="ex1_heated_side", base_dir=str(pipeline), overrides=TINY)
    ss = cli.load_snapshot_set(cfg)
    model = rom.load_rom(pipeline / "models" / "rom-linear")
    expected = {ss.run_ids[k]: rom.trajectory_metrics(model, ss.trajectories[k]).mse for k in ss.indices("test")}
    assert {r["run_id"]: float(r["mse"]) for r in rows} == expected
    assert (pipeline / "reports" / "metrics-rom-linear-test-series.csv").exists()


def test_diagnose_and_benchmark(pipeline):
    assert run(pipeline, "diagnose") == 0
    for name in ("pca.csv", "tsne.csv", "tsne_kl.csv"):
        assert (pipeline / "reports" / name).exists()
    assert run(pipeline, "benchmark", "--repeats", "3") == 0
    text = (pipeline / "reports" / "speedup-rom-linear.csv").read_text().splitlines()
    assert len(text) == 2 and float(text[1].split(",")[4]) > 1


def test_nonlinear_path(pipeline):
    sets = ["model.path=nonlinear", "model.approximator=rbf-linear"]
    for cmd in ("train-ae", "train-approximator", "build-rom", "evaluate"):
        assert run(pipeline, cmd, sets=sets) == 0, cmd
    assert (pipeline / "reports" / "rbf_residuals-rbf-linear.csv").exists()
    assert (pipeline / "reports" / "metrics-rom-nonlinear-rbf-linear-test.csv").exists()


# -------------------------------------------------------------- exit codes

def test_exit_codes(tmp_path, pipeline, capsys):
    assert run(tmp_path, "train-pod") == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: code=3 type=DataError message=")
    assert run(tmp_path, "generate", sets=["solver.cfl=-1"]) == 2
    assert cli.main(["split", "--config", str(tmp_path / "missing.ini")]) == 2
    assert run(pipeline, "predict", "--t", "0.1") == 2
    assert run(pipeline, "predict", "--t", "0.1", "--mu", "sixty") == 2
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert run(pipeline, "train-pod", sets=[f"paths.report_dir={blocker}/reports"]) == 5
    assert run(pipeline, "train-approximator", sets=["train.lr=1e300", "train.epochs=3"]) == 4
    assert "type=TrainError" in capsys.readouterr().err

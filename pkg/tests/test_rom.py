import warnings

import numpy as np
import pytest

from rpom import fom, pod, rbf, rom, store
from rpom.errors import EmptySeries, ExtrapolationWarning, ShapeMismatch
from rpom.neural import TrainConfig

QUICK = TrainConfig(epochs=20, batch_size=16, lr=1e-2)


@pytest.fixture(scope="module")
def linear_model(small_set):
    model, hist = rom.build_linear_rom(small_set, 4, train_config=QUICK)
    return model


@pytest.fixture(scope="module")
def shared_ae(small_set):
    ae, hist = rom.train_set_autoencoder(
        small_set, {"kind": "conv_ae", "side": 16, "hidden": 2, "latent": 3, "dropout": 0.0},
        TrainConfig(epochs=2, batch_size=16, lr=3e-3, schedule="cosine"))
    return ae


def test_linear_pipeline_is_consistent(small_set, linear_model):
    tr = small_set.select("train")[0]
    X = rom.scaled_inputs(linear_model, tr.times, tr.mu)
    expected = store.denormalize(pod.reconstruct_linear(linear_model.basis, linear_model.regressor.predict(X)),
                                 small_set.field_lo, small_set.field_hi).reshape(tr.T.shape)
    np.testing.assert_allclose(rom.predict_trajectory(linear_model, tr), expected, atol=1e-14)
    assert linear_model.name == "POD 4 RB"


def test_linear_rank_one_data_is_exact():
    grid = fom.Grid(6, 5)
    shape = np.outer(np.linspace(0.0, 1, 5), np.linspace(1, 0.5, 6))  # zero row keeps field_lo = 0
    trs = []
    for k, mu in enumerate([40.0, 60.0, 80.0]):
        times = np.linspace(0, 0.1, 6)
        amp = mu / 80.0 * (1 + times)
        trs.append(fom.Trajectory(np.array([mu]), times, amp[:, None, None] * shape, grid))
    ss = store.SnapshotSet(trs, ["train", "validation", "test"])
    basis = rom.fit_linear_basis(ss, 1)
    for tr in trs:
        f = ss.normalize_field(tr.T)
        np.testing.assert_allclose(pod.reconstruct_linear(basis, pod.project_l2(basis, f), shaped=True),
                                   f, atol=1e-12)


def test_rbf_interpolates_latent_codes(small_set, shared_ae):
    model, _ = rom.build_nonlinear_rom(small_set, approximator="rbf-linear", ae=shared_ae)
    z = rom.encode_split(shared_ae, small_set, "train")
    pairs = store.stack_training_pairs(small_set, "train", z)
    np.testing.assert_allclose(rbf.eval_rbf(model.approximator, pairs.inputs), pairs.targets, atol=1e-8)
    tr = small_set.select("train")[1]
    f = small_set.normalize_field(tr.T)
    roundtrip = small_set.denormalize_field(shared_ae.forward(f))
    np.testing.assert_allclose(rom.predict_trajectory(model, tr), roundtrip, atol=1e-6)


def test_approximators_are_hot_swappable(small_set, shared_ae):
    models = [rom.build_nonlinear_rom(small_set, approximator=k, ae=shared_ae, train_config=QUICK)[0]
              for k in rom.APPROXIMATORS]
    assert all(m.autoencoder is shared_ae for m in models)
    assert [m.name for m in models] == ["AE 3 z: ANN", "AE 3 z: RBF-linear", "AE 3 z: RBF-cubic"]
    tr = small_set.select("test")[0]
    for m in models:
        assert np.all(np.isfinite(rom.trajectory_metrics(m, tr).mse))
    with pytest.raises(ValueError):
        rom.build_nonlinear_rom(small_set, approximator="kriging", ae=shared_ae)


def test_autoencoder_on_a_coarser_side(small_set):
    model, hist = rom.build_nonlinear_rom(
        small_set, {"kind": "mlp_ae", "side": 8, "latent": 2, "layers": 2, "width": 8},
        "rbf-cubic", TrainConfig(epochs=1, batch_size=32))
    out = rom.predict_field(model, 0.002, small_set.select("test")[0].mu)
    assert out.shape == small_set.grid.shape and np.all(np.isfinite(out))


def test_prediction_is_pure_and_sandwiched(small_set, linear_model):
    tr = small_set.select("train")[0]
    mu = tr.mu
    a = rom.predict_field(linear_model, 0.002, mu)
    b = rom.predict_field(linear_model, 0.002, mu)
    assert np.array_equal(a, b)
    k = tr.n_snapshots // 2
    t0, t1 = tr.times[k], tr.times[k + 1]
    lo, hi = rom.predict_field(linear_model, [t0, t1], mu)
    mid = rom.predict_field(linear_model, 0.5 * (t0 + t1), mu)
    spread = np.abs(hi - lo).max()
    assert np.all(mid >= np.minimum(lo, hi) - spread) and np.all(mid <= np.maximum(lo, hi) + spread)


def test_extrapolation_and_shape_errors(small_set, linear_model):
    with pytest.warns(ExtrapolationWarning):
        rom.predict_field(linear_model, 0.002, [500.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rom.predict_field(linear_model, 0.002, small_set.select("test")[0].mu)
    with pytest.raises(ShapeMismatch):
        rom.predict_field(linear_model, 0.002, [50.0, 1.0])


# ----------------------------------------------------------------- metrics

def test_diff_field(rng):
    a = rng.random((4, 4))
    assert np.all(rom.diff_field(a, a) == 0)
    np.testing.assert_allclose(rom.diff_field(a, a + 0.3), 0.3)
    b = rng.random((4, 4))
    np.testing.assert_array_equal(rom.diff_field(a, b), np.abs(a - b))
    with pytest.raises(ShapeMismatch):
        rom.diff_field(a, b[:3])


def toy_traj(T):
    T = np.asarray(T, dtype=float)
    return fom.Trajectory(np.array([1.0]), np.arange(len(T), dtype=float), T, fom.Grid(T.shape[2], T.shape[1]))


def test_trajectory_metrics_closed_forms(rng):
    tr = toy_traj(rng.random((3, 4, 4)))
    m = rom.trajectory_metrics(tr.T.copy(), tr)
    assert m.mse == 0.0 and m.max_diff == 0.0
    m = rom.trajectory_metrics(tr.T - 0.2, tr)
    assert m.mse == pytest.approx(0.04) and m.max_diff == pytest.approx(0.2)
    # two steps on a 1x2 grid: errors (1, 0) then (2, 2)
    tr = toy_traj(np.zeros((2, 1, 2)))
    m = rom.trajectory_metrics(np.array([[[1.0, 0.0]], [[2.0, -2.0]]]), tr)
    np.testing.assert_allclose(m.step_mse, [0.5, 4.0])
    assert m.mse == pytest.approx(2.25) and m.max_diff == 2.0


def test_moving_average():
    assert np.all(rom.moving_average_mse(np.full(10, 3.0)) == 3.0)
    s = np.arange(1.0, 101.0)
    np.testing.assert_array_equal(rom.moving_average_mse(s, 1), s)
    avg = rom.moving_average_mse(s, 50)
    assert avg[-1] == 75.5 and avg[0] == 1.0 and avg[9] == 5.5
    with pytest.raises(EmptySeries):
        rom.moving_average_mse([])


def test_evaluate_and_csv(small_set, linear_model):
    rows, series = rom.evaluate(linear_model, small_set, "test", window=3)
    assert len(rows) == 1 and len(series) == small_set.select("test")[0].n_snapshots
    text = rom.metrics_csv(rows, 1)
    assert text.splitlines()[0] == "run_id,mu_0,mse,max_diff"
    assert rom.series_csv(series).count("\n") == len(series) + 1


def test_speedup_ratios(small_set, linear_model):
    rep = rom.benchmark_speedup(linear_model, fom.heated_side(16, 16), fom.SolverParams(t_end=0.004), [60.0], repeats=5)
    assert rep.single_ratio > 1 and rep.single_ratio >= rep.replay_ratio
    assert rep.to_csv().startswith("fom_seconds,")


# ----------------------------------------------------------------- bundles

def test_bundles_round_trip(tmp_path, small_set, linear_model, shared_ae):
    nonlinear, _ = rom.build_nonlinear_rom(small_set, approximator="rbf-cubic", ae=shared_ae)
    mu = small_set.select("test")[0].mu
    for tag, model in (("lin", linear_model), ("nl", nonlinear)):
        rom.save_rom(model, tmp_path / tag)
        back = rom.load_rom(tmp_path / tag)
        assert back.name == model.name
        assert np.array_equal(rom.predict_field(back, [0.001, 0.003], mu), rom.predict_field(model, [0.001, 0.003], mu))

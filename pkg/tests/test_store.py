import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpom import fom, store
from rpom.errors import (BadMagic, ChecksumMismatch, DomainMismatch, EmptySplit,
                         InsufficientRuns, TruncatedFile, VersionMismatch)


def fake_traj(mu, times, grid=fom.Grid(4, 3), seed=0, full=False):
    rng = np.random.default_rng(seed)
    n = len(times)
    ny, nx = grid.shape
    return fom.Trajectory(
        mu=np.atleast_1d(np.asarray(mu, dtype=float)), times=np.asarray(times, dtype=float),
        T=rng.random((n, ny, nx)), grid=grid,
        p=rng.random((n, ny, nx)) if full else None,
        ux=rng.random((n, ny, nx + 1)) if full else None,
        uy=rng.random((n, ny + 1, nx)) if full else None)


def checksum(a):
    return zlib.crc32(np.ascontiguousarray(a).tobytes())


# ---------------------------------------------------------------- envelope

def test_one_step_round_trip_bitwise(tmp_path):
    tr = fake_traj([55.0], [0.0], full=True)
    store.write_trajectory(tr, tmp_path / "a.prom")
    back = store.read_trajectory(tmp_path / "a.prom")
    for name in ("mu", "times", "T", "p", "ux", "uy"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    assert back.grid == tr.grid


def test_three_trajectory_checksums(tmp_path):
    trs = [fake_traj([40.0 + k], np.linspace(0, 0.1, 3 + k), seed=k) for k in range(3)]
    for k, tr in enumerate(trs):
        store.write_trajectory(tr, tmp_path / f"r{k}.prom")
    for k, tr in enumerate(trs):
        back = store.read_trajectory(tmp_path / f"r{k}.prom")
        assert np.array_equal(back.times, tr.times)
        assert checksum(back.T) == checksum(tr.T)
        assert back.p is None and back.ux is None


def test_corruptions_are_detected(tmp_path):
    path = tmp_path / "a.prom"
    store.write_trajectory(fake_traj([1.0], [0.0, 1.0]), path)
    good = path.read_bytes()

    path.write_bytes(b"XROM" + good[4:])
    with pytest.raises(BadMagic):
        store.read_trajectory(path)
    path.write_bytes(good[:4] + (99).to_bytes(4, "little") + good[8:])
    with pytest.raises(VersionMismatch):
        store.read_trajectory(path)
    path.write_bytes(good[:len(good) // 2])
    with pytest.raises(TruncatedFile):
        store.read_trajectory(path)
    flipped = bytearray(good)
    flipped[40] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumMismatch):
        store.read_trajectory(path)
    with pytest.raises(FileNotFoundError):
        store.read_trajectory(tmp_path / "missing.prom")


def test_artifact_round_trip_and_kind_check(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3), "idx": np.array([3, 1], dtype=np.int64), "s": np.array(2.5)}
    store.write_artifact(tmp_path / "x.prom", "basis", {"n": 2, "note": "ok"}, arrays)
    header, back = store.read_artifact(tmp_path / "x.prom", "basis")
    assert header["n"] == 2 and header["note"] == "ok"
    for k, v in arrays.items():
        assert np.array_equal(back[k], v) and back[k].dtype.kind == v.dtype.kind
    with pytest.raises(BadMagic):
        store.read_artifact(tmp_path / "x.prom", "model")
    with pytest.raises(BadMagic):
        store.read_trajectory(tmp_path / "x.prom")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    store.atomic_write_text(tmp_path / "f.txt", "hello")
    store.atomic_write_text(tmp_path / "f.txt", "again")
    assert (tmp_path / "f.txt").read_text() == "again"
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


# ---------------------------------------------------------------- scaling

def test_normalize_endpoints_and_degenerate():
    assert store.normalize(2.0, 2.0, 6.0) == 0.0
    assert store.normalize(6.0, 2.0, 6.0) == 1.0
    assert np.all(store.normalize(np.full((3, 3), 4.0), 4.0, 4.0) == 0.0)
    assert np.all(store.denormalize(np.zeros(2), 4.0, 4.0) == 4.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 2 ** 31))
def test_normalize_round_trip(lo, span, seed):
    x = lo + span * np.random.default_rng(seed).random(20)
    back = store.denormalize(store.normalize(x, lo, lo + span), lo, lo + span)
    assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, abs(lo) + span)


def test_log_scaler_round_trip():
    data = np.array([[350.0, 0.001], [450.0, 100.0], [400.0, 1.0]])
    sc = store.MinMaxScaler.fit(data, log=[False, True])
    y = sc.transform(data)
    np.testing.assert_allclose(y, [[0.0, 0.0], [1.0, 1.0], [0.5, 0.6]], atol=1e-12)
    np.testing.assert_allclose(sc.inverse(y), data, rtol=1e-12)
    again = store.MinMaxScaler.from_dict(sc.to_dict())
    np.testing.assert_array_equal(again.transform(data), y)


# ------------------------------------------------------------------ pairs

def test_pair_count_and_time_scaling():
    trs = [fake_traj([40.0], [0.0, 0.05, 0.1]), fake_traj([80.0], [0.0, 0.02, 0.05, 0.1], seed=1)]
    ss = store.SnapshotSet(trs, ["train", "train"])
    pairs = store.stack_training_pairs(ss)
    assert len(pairs) == 7
    assert pairs.inputs[1, 0] == pytest.approx(0.5)  # t = 0.05 with bounds [0, 0.1]
    np.testing.assert_array_equal(pairs.inputs[[0, 3], 1], [0.0, 1.0])
    assert pairs.targets.shape == (7, 12)
    assert pairs.targets.min() >= 0.0 and pairs.targets.max() <= 1.0
    np.testing.assert_array_equal(pairs.step, [0, 1, 2, 0, 1, 2, 3])


def test_latent_targets_and_empty_split():
    trs = [fake_traj([40.0], [0.0, 0.1]), fake_traj([60.0], [0.0, 0.1], seed=1)]
    ss = store.SnapshotSet(trs, ["train", "validation"])
    z = [np.ones((2, 3))]
    assert store.stack_training_pairs(ss, "train", z).targets.shape == (2, 3)
    with pytest.raises(EmptySplit):
        store.stack_training_pairs(ss, "test")


def test_bounds_come_from_train_only():
    trs = [fake_traj([40.0], [0.0, 0.1]), fake_traj([90.0], [0.0, 0.3], seed=1)]
    trs[1].T[:] = 7.0
    ss = store.SnapshotSet(trs, ["train", "test"])
    assert ss.field_hi < 1.0
    np.testing.assert_array_equal(ss.input_scaler.hi, [0.1, 40.0])


def test_pairs_match_run_recount(small_set):
    pairs = store.stack_training_pairs(small_set, "train")
    assert len(pairs) == sum(tr.n_snapshots for tr in small_set.select("train"))


# ----------------------------------------------------------------- regrid

def lattice(grid, f):
    x = np.linspace(0.0, grid.lx, grid.nx)
    y = np.linspace(0.0, grid.ly, grid.ny)
    X, Y = np.meshgrid(x, y)
    return f(X, Y)


def test_regrid_constant_and_affine():
    a, b = fom.Grid(16, 16), fom.Grid(128, 128)
    assert np.all(store.regrid_bilinear(np.ones((16, 16)), a, b) == 1.0)
    f = lambda X, Y: X + 2 * Y
    a, b = fom.Grid(32, 16, 2.0, 1.0), fom.Grid(20, 20, 2.0, 1.0)
    np.testing.assert_allclose(store.regrid_bilinear(lattice(a, f), a, b), lattice(b, f), atol=1e-13)


def test_regrid_round_trip_and_bounds():
    a, b = fom.Grid(64, 64), fom.Grid(32, 32)
    f = lambda X, Y: np.sin(np.pi * X) * np.cos(np.pi * Y)
    src = lattice(a, f)
    back = store.regrid_bilinear(store.regrid_bilinear(src, a, b), b, a)
    assert np.abs(back - src).max() < 0.01
    noisy = np.random.default_rng(0).random((2, 64, 64))
    out = store.regrid_bilinear(noisy, a, fom.Grid(50, 70))
    assert out.shape == (2, 70, 50)
    assert out.min() >= noisy.min() and out.max() <= noisy.max()


def test_regrid_domain_mismatch():
    with pytest.raises(DomainMismatch):
        store.regrid_bilinear(np.zeros((8, 8)), fom.Grid(8, 8), fom.Grid(8, 8, 2.0, 1.0))


# ------------------------------------------------------------------ splits

def test_equispaced_linear_and_log():
    np.testing.assert_allclose(store.equispaced_points([[40, 80]], None, 5).ravel(), [40, 50, 60, 70, 80])
    pts = store.equispaced_points([[0.001, 100]], [True], 6).ravel()
    np.testing.assert_allclose(np.log10(pts), [-3, -2, -1, 0, 1, 2], atol=1e-12)


def test_split_set_equispaced_and_disjoint():
    mu, _ = store.design_parameters([[40, 80]], None, 5, 2, 2, seed=3)
    trs = [fake_traj(m, [0.0, 1.0], seed=k) for k, m in enumerate(mu)]
    ss = store.split_set(trs[::-1], 5, 2, 2, seed=3, ranges=[[40, 80]])
    train = sorted(float(t.mu[0]) for t in ss.select("train"))
    assert train == [40.0, 50.0, 60.0, 70.0, 80.0]
    test = {float(t.mu[0]) for t in ss.select("test")}
    val = {float(t.mu[0]) for t in ss.select("validation")}
    assert not (set(train) & test) and not (set(train) & val) and not (val & test)
    assert len(test) == 2 and len(val) == 2


def test_split_set_two_parameters_log_axis():
    mu, _ = store.design_parameters([[350, 450], [0.001, 100]], [False, True], 6, 1, 1, seed=0)
    trs = [fake_traj(m, [0.0, 1.0], seed=k) for k, m in enumerate(mu)]
    ss = store.split_set(trs, 6, 1, 1, seed=0, ranges=[[350, 450], [0.001, 100]], log_flags=[False, True])
    assert ss.splits.count("train") == 6
    ra2 = np.log10(sorted({float(t.mu[1]) for t in ss.select("train")}))
    np.testing.assert_allclose(np.diff(ra2), ra2[1] - ra2[0])


def test_split_set_insufficient_and_unused():
    trs = [fake_traj([40.0 + k], [0.0]) for k in range(4)]
    with pytest.raises(InsufficientRuns):
        store.split_set(trs, 3, 1, 1, seed=0)
    ss = store.split_set(trs + [fake_traj([50.0], [0.0])], 2, 1, 1, seed=0)
    assert ss.splits.count("unused") == 1


def test_design_is_seeded():
    a = store.design_parameters([[40, 80]], None, 3, 2, 2, seed=7)[0]
    b = store.design_parameters([[40, 80]], None, 3, 2, 2, seed=7)[0]
    assert np.array_equal(a, b)


def test_manifest_round_trip(tmp_path):
    rows = [{"run_id": "run0000", "mu": [0.1 + 0.2, 1e-3], "split": "train", "n_t": 5, "file": "runs/run0000.prom"}]
    store.write_manifest_csv(tmp_path / "m.csv", rows, 2)
    assert store.read_manifest_csv(tmp_path / "m.csv") == rows

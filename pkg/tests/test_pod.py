import warnings

import numpy as np
import pytest

from rpom import linalg, pod
from rpom.errors import RankDeficientWarning, ShapeMismatch


def runs(rng, M=3, n_t=5, n_dof=40):
    return [rng.standard_normal((n_t, n_dof)) for _ in range(M)]


def projector(modes, weight=1.0):
    return weight * modes @ modes.T


def test_rank_one_single_snapshot():
    s = np.array([3.0, 0.0, 4.0])
    basis = pod.nested_pod([s[None, :]], 1)
    np.testing.assert_allclose(basis.modes[:, 0], s / 5.0, atol=1e-15)
    assert basis.sigma[0] == pytest.approx(5.0)


def test_orthogonal_snapshots_span(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((10, 2)))
    a, b = 2.0 * Q[:, 0], 0.5 * Q[:, 1]
    basis = pod.nested_pod([a[None, :], b[None, :]], 1, 2)
    np.testing.assert_allclose(projector(basis.modes), Q @ Q.T, atol=1e-12)


def test_modes_orthonormal_and_sorted(rng):
    basis = pod.nested_pod(runs(rng), 4, 6)
    np.testing.assert_allclose(basis.gram, np.eye(6), atol=1e-10)
    assert np.all(np.diff(basis.sigma) <= 0)


def test_nested_equals_standard_without_truncation(rng):
    data = runs(rng, M=2, n_t=3)
    nested = pod.nested_pod(data, 3, 6)
    standard = pod.standard_pod(data, 6)
    fields = rng.standard_normal((7, 40))
    assert pod.projection_error(nested, fields) == pytest.approx(pod.projection_error(standard, fields), abs=1e-8)
    np.testing.assert_allclose(projector(nested.modes), projector(standard.modes), atol=1e-10)


def test_weighted_inner_product(small_set):
    basis = pod.nested_pod(small_set, 4)
    area = small_set.grid.cell_area
    assert basis.weight == area and basis.shape == small_set.grid.shape
    np.testing.assert_allclose(area * basis.modes.T @ basis.modes, np.eye(4), atol=1e-10)


def test_rank_deficiency_warns(rng):
    v = rng.standard_normal(12)
    data = [np.outer([1.0, 2.0, 3.0], v), np.outer([2.0, -1.0, 0.5], v)]
    with pytest.warns(RankDeficientWarning):
        basis = pod.nested_pod(data, 2, 3)
    assert basis.rank_deficient and basis.n_modes == 1


def test_bad_truncation_levels(rng):
    with pytest.raises(ShapeMismatch):
        pod.nested_pod(runs(rng, n_t=3), 4)
    with pytest.raises(ShapeMismatch):
        pod.nested_pod(runs(rng), 2, 7)


# -------------------------------------------------------------- projection

def test_project_basis_vector_and_orthogonal(rng):
    basis = pod.nested_pod(runs(rng), 3, 4)
    np.testing.assert_allclose(pod.project_l2(basis, basis.modes[:, 0]), [1, 0, 0, 0], atol=1e-12)
    f = rng.standard_normal(40)
    f -= basis.modes @ (basis.modes.T @ f)
    np.testing.assert_allclose(pod.project_l2(basis, f), 0.0, atol=1e-12)


def test_project_matches_gram_solve(rng):
    # deliberately non-orthonormal modes exercise the Gram path
    modes = rng.standard_normal((30, 3))
    basis = pod.ReducedBasis(modes, np.ones(3), weight=0.25)
    f = rng.standard_normal(30)
    G = 0.25 * modes.T @ modes
    expected = linalg.solve_spd(G, 0.25 * modes.T @ f)
    np.testing.assert_allclose(pod.project_l2(basis, f), expected, rtol=1e-12)
    batch = rng.standard_normal((2, 5, 30))
    assert pod.project_l2(basis, batch).shape == (2, 5, 3)


def test_reconstruct_and_idempotence(rng):
    basis = pod.nested_pod(runs(rng), 3, 5)
    np.testing.assert_allclose(pod.reconstruct_linear(basis, np.eye(5)[0]), basis.modes[:, 0])
    f = basis.modes @ rng.standard_normal(5)
    back = pod.reconstruct_linear(basis, pod.project_l2(basis, f))
    assert np.abs(back - f).max() <= 1e-10


def test_projection_is_optimal(rng):
    basis = pod.nested_pod(runs(rng), 3, 5)
    f = rng.standard_normal(40)
    best = np.linalg.norm(f - pod.reconstruct_linear(basis, pod.project_l2(basis, f)))
    for _ in range(200):
        c = pod.project_l2(basis, f) + 0.1 * rng.standard_normal(5)
        assert best <= np.linalg.norm(f - basis.modes @ c) + 1e-12


def test_shape_checks(rng):
    basis = pod.nested_pod(runs(rng), 3)
    with pytest.raises(ShapeMismatch):
        pod.project_l2(basis, np.zeros(39))
    with pytest.raises(ShapeMismatch):
        pod.reconstruct_linear(basis, np.zeros(4))


def test_shaped_reconstruction(small_set):
    basis = pod.nested_pod(small_set, 3)
    T = small_set.select("train")[0].T
    theta = pod.project_l2(basis, T)
    assert theta.shape == (T.shape[0], 3)
    assert pod.reconstruct_linear(basis, theta, shaped=True).shape == T.shape


# ------------------------------------------------------------- eigenvalues

def test_eigenvalues_rank_one(rng):
    v = rng.standard_normal(15)
    data = [np.outer([1.0, 2.0], v), np.outer([3.0, 1.0], v)]
    np.testing.assert_allclose(pod.normalized_eigenvalues(data, 2), [1, 0, 0, 0], atol=1e-14)


def test_eigenvalues_duplicates_and_decay(rng):
    data = runs(rng)
    base = pod.normalized_eigenvalues(data, 3)
    doubled = pod.normalized_eigenvalues([np.vstack([d, d]) for d in data], 3)
    np.testing.assert_allclose(doubled, base, rtol=1e-10, atol=1e-14)
    assert base[0] == 1.0 and np.all(np.diff(base) <= 0)


def test_basis_and_csv_io(tmp_path, small_set):
    basis = pod.nested_pod(small_set, 3, provenance={"seed": 0})
    pod.save_basis(basis, tmp_path / "b.prom")
    back = pod.load_basis(tmp_path / "b.prom")
    assert np.array_equal(back.modes, basis.modes) and back.shape == basis.shape
    assert back.provenance["seed"] == 0
    pod.write_eigen_csv(tmp_path / "e.csv", [1.0, 0.25])
    assert (tmp_path / "e.csv").read_text().splitlines() == ["index,normalized_eigenvalue", "1,1.0", "2,0.25"]

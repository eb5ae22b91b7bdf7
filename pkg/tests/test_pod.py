import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh
from sklearn.base import clone

from mfpod.errors import GridMismatchError, InvalidRankError, ShapeError
from mfpod.field_grid import GridField, build_grid
from mfpod.pod import (
    PODBasis,
    PODTransformer,
    assemble_snapshots,
    compute_pod,
    load_basis,
    project,
    reconstruct,
    reconstruction_error_curve,
    save_basis,
    select_rank,
)


def gram_singular_values(A):
    """Independent oracle: singular values from the eigenvalues of A A^T."""
    w = eigh(A @ A.T, eigvals_only=True)[::-1]
    return np.sqrt(np.clip(w, 0.0, None))


def test_assemble_preserves_row_order():
    g = build_grid(2, 2, domain=(0, 1, 0, 1), disc=(0.1, 0.1, 0.4))
    assert g.m_I == 1
    g2 = build_grid(2, 2, domain=(0, 1, 0, 1))
    m = assemble_snapshots([GridField(g2, [1, 2, 3, 4]), GridField(g2, [5, 6, 7, 8])])
    assert m.data.tolist() == [[1, 2, 3, 4], [5, 6, 7, 8]]
    assert assemble_snapshots([GridField(g2, [1, 2, 3, 4])]).shape == (1, 4)
    with pytest.raises(GridMismatchError):
        assemble_snapshots([GridField(g2, [1, 2, 3, 4]), GridField(g, [1.0])])


def test_rank_one_hand_svd():
    b = compute_pod(np.array([[1.0, 2.0], [2.0, 4.0]]), 1)
    assert np.allclose(b.singular_values, [5.0, 0.0], atol=1e-12)
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    assert np.allclose(b.reconstruct(b.project(A)), A, atol=1e-12)


def test_identity_and_orthogonal_rows():
    assert np.allclose(compute_pod(np.eye(2), 2).singular_values, [1, 1])
    A = np.array([[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
    b = compute_pod(A, 2)
    assert np.allclose(b.singular_values, [4, 3])
    # sign convention: largest-magnitude entry of every mode is nonnegative
    piv = np.abs(b.modes).argmax(axis=0)
    assert np.all(b.modes[piv, range(b.k)] >= 0)


def test_rank_out_of_range():
    A = np.ones((3, 5))
    for k in (0, 4):
        with pytest.raises(InvalidRankError):
            compute_pod(A, k)


def test_energy_rank_selection():
    assert select_rank(np.array([10.0, 1.0, 0.01]), 0.99) == 1
    assert select_rank(np.array([10.0, 1.0, 0.01]), 0.995) == 2
    assert select_rank(np.array([10.0, 1.0, 0.01]), 0.9999999) == 3
    b = compute_pod(np.diag([10.0, 1.0, 0.001]), None, energy_threshold=0.9999)
    assert b.k == 2


def test_projection_examples(rng):
    A = rng.normal(size=(6, 30))
    b = compute_pod(A, 4)
    assert np.allclose(b.modes.T @ b.modes, np.eye(4), atol=1e-10)
    assert np.allclose(project(b, 2.5 * b.modes[:, 1]), [0, 2.5, 0, 0], atol=1e-12)
    # a vector orthogonal to the retained modes
    v = rng.normal(size=30)
    v -= b.modes @ (b.modes.T @ v)
    assert np.allclose(project(b, v), 0, atol=1e-12)
    y = b.modes @ rng.normal(size=4)
    assert np.allclose(reconstruct(b, project(b, y)), y, atol=1e-10)
    with pytest.raises(ShapeError):
        project(b, np.ones(29))
    with pytest.raises(ShapeError):
        reconstruct(b, np.ones(3))


def test_reconstruct_is_idempotent_projection(rng):
    b = compute_pod(rng.normal(size=(5, 12)), 3)
    y = rng.normal(size=12)
    p1 = b.reconstruct(b.project(y))
    assert np.allclose(b.reconstruct(b.project(p1)), p1, atol=1e-12)
    z = rng.normal(size=3)
    assert np.allclose(b.project(b.reconstruct(z)), z, atol=1e-12)


def test_centering_and_zero_latent(rng):
    A = rng.normal(size=(6, 10)) + 7.0
    b = compute_pod(A, 2, center=True)
    assert np.allclose(b.mean, A.mean(axis=0))
    assert np.allclose(b.reconstruct(np.zeros(2)), b.mean)
    assert np.allclose(compute_pod(A, 2).reconstruct(np.zeros(2)), 0.0)


def test_rank_r_curve_hits_zero(rng):
    A = rng.normal(size=(8, 3)) @ rng.normal(size=(3, 20))
    curve = dict(reconstruction_error_curve(A, [1, 2, 3, 8]))
    assert curve[3] < 1e-10 and curve[8] <= curve[2]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_eckart_young_against_gram_oracle(N, m, seed):
    A = np.random.default_rng(seed).normal(size=(N, m))
    sv = gram_singular_values(A)[:min(N, m)]
    ks = list(range(1, min(N, m) + 1))
    curve = reconstruction_error_curve(A, ks)
    errs = [e for _, e in curve]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    for k, e in curve:
        assert abs(e * np.sqrt(N * m) - np.sqrt(np.sum(sv[k:] ** 2))) <= 1e-8
    assert np.allclose(compute_pod(A, 1).singular_values, sv, atol=1e-8)


def test_basis_round_trip(tmp_path, rng):
    g = build_grid(8, 8, disc=(0, 0, 1))
    A = rng.normal(size=(5, g.m_I))
    for center in (False, True):
        b = compute_pod(A, 3, center=center)
        b = PODBasis(b.modes, b.singular_values, b.mean, g)
        save_basis(b, tmp_path / "b.pod")
        back = load_basis(tmp_path / "b.pod")
        assert np.array_equal(back.modes, b.modes) and back.grid == g
        assert (back.mean is None) == (not center)


def test_transformer_api(rng):
    A = rng.normal(size=(10, 15))
    t = PODTransformer(n_components=4)
    Z = t.fit_transform(A)
    assert Z.shape == (10, 4) and t.n_components_ == 4
    assert np.allclose(t.inverse_transform(Z), A @ t.components_.T @ t.components_)
    assert clone(t).get_params() == {"n_components": 4, "energy_threshold": 0.9999,
                                     "center": False}
    assert PODTransformer(n_components=50).fit(A).n_components_ == 10

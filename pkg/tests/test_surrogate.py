import numpy as np
import pytest

from mfpod.doe import ESC_SPACE
from mfpod.errors import ConfigError, FileFormatError
from mfpod.kriging import KrigingConfig
from mfpod.surrogate import fit_field_surrogate, load_surrogate, save_surrogate

CFG = KrigingConfig(n_restarts=1)


def fit(ds, method, shared=True, k=5):
    lf = ds.lf_index[:40]
    hf = ds.hf_index[:15]
    kw = dict(grid=ds.grid, k=k, config=CFG, shared_theta=shared, bounds=ESC_SPACE.bounds)
    if method in ("LF", "MF"):
        kw.update(X_lf=ds.X[lf], Y_lf=ds.lf(lf))
    if method in ("HF", "MF"):
        kw.update(X_hf=ds.X[hf], Y_hf=ds.hf(hf))
    return fit_field_surrogate(method, **kw)


@pytest.mark.parametrize("method,shared", [("LF", True), ("HF", False), ("MF", True), ("MF", False)])
def test_round_trip(tmp_path, small_dataset, method, shared):
    sur = fit(small_dataset, method, shared)
    save_surrogate(sur, tmp_path / "s.json")
    back = load_surrogate(tmp_path / "s.json")
    X = small_dataset.X[50:55]
    assert back.method == method and back.k == sur.k
    assert np.allclose(back.predict_fields(X), sur.predict_fields(X), atol=1e-9)
    assert np.allclose(back.latent_jacobian(X[0]), sur.latent_jacobian(X[0]), atol=1e-8)


def test_field_is_latent_then_reconstruct(small_dataset):
    sur = fit(small_dataset, "MF")
    x = small_dataset.X[60]
    z = sur.predict_latent(x)
    assert np.array_equal(sur.predict_field(x).values, sur.basis.reconstruct(z)[0])


def test_training_point_error_bounded_by_pod_error(small_dataset):
    ds = small_dataset
    sur = fit(ds, "MF")
    for r in ds.hf_index[:15]:
        y = ds.hf([r])[0]
        field_err = np.sqrt(np.mean((sur.predict_field(ds.X[r]).values - y) ** 2))
        pod_err = np.sqrt(np.mean((sur.basis.reconstruct(sur.basis.project(y)) - y) ** 2))
        assert field_err <= pod_err + 1e-5


def test_bad_inputs(tmp_path, small_dataset):
    with pytest.raises(ConfigError):
        fit_field_surrogate("XF", X_hf=small_dataset.X[:3], Y_hf=small_dataset.hf([0, 1, 2]))
    (tmp_path / "s.json").write_text("{}")
    with pytest.raises(FileFormatError):
        load_surrogate(tmp_path / "s.json")
    with pytest.raises(FileFormatError):
        load_surrogate(tmp_path / "missing.json")

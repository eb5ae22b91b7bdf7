"""Field surrogates: a POD basis composed with a latent-space regressor.

``FieldSurrogate`` predicts whole grid fields, ``y(x) = z(x) @ V_k.T``,
where ``z`` comes from single-fidelity :class:`LatentKriging` or from
:class:`MultiFidelityKriging`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, FileFormatError
from .field_grid import GridField
from .kriging import KrigingConfig, LatentKriging, load_kriging, save_kriging
from .mf_kriging import LowFidelityTrend, MultiFidelityKriging, _FixedRhoDiscrepancy
from .pod import PODBasis, compute_pod, load_basis, save_basis

METHODS = ("LF", "HF", "MF")


class FieldSurrogate:
    def __init__(self, basis: PODBasis, latent_model, method: str):
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        self.basis = basis
        self.latent_model = latent_model
        self.method = method

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def grid(self):
        return self.basis.grid

    def predict_latent(self, X, return_var=False):
        return self.latent_model.predict(np.atleast_2d(X), return_var=return_var)

    def latent_jacobian(self, x) -> np.ndarray:
        """``d z / d x`` at one design, shape ``(k, n)``."""
        return self.latent_model.predict_gradient(np.atleast_2d(x))[0]

    def predict_fields(self, X) -> np.ndarray:
        """Flattened predicted fields, shape ``(M, m_I)``."""
        return self.basis.reconstruct(self.predict_latent(X))

    def predict_field(self, x) -> GridField:
        return GridField(self.grid, self.predict_fields(np.atleast_2d(x))[0])


def fit_field_surrogate(method, *, X_lf=None, Y_lf=None, X_hf=None, Y_hf=None, grid=None,
                        k=20, center=False, config: KrigingConfig | None = None,
                        shared_theta=False, bounds=None) -> FieldSurrogate:
    """Regridded snapshots in, field surrogate out.

    The POD basis is built from the training snapshots the method uses
    (LF only, HF only, or LF and HF stacked); ``k`` is clipped to the
    number of snapshots.
    """
    config = config or KrigingConfig()
    params = config.estimator_params()
    if method == "LF":
        X, Y = np.asarray(X_lf, float), np.asarray(Y_lf, float)
        snaps = Y
    elif method == "HF":
        X, Y = np.asarray(X_hf, float), np.asarray(Y_hf, float)
        snaps = Y
    elif method == "MF":
        snaps = np.vstack([Y_lf, Y_hf])
    else:
        raise ConfigError(f"method must be one of {METHODS}")
    k = min(int(k), *snaps.shape)
    basis = compute_pod(snaps, k, center=center)
    if grid is not None:
        basis = PODBasis(basis.modes, basis.singular_values, basis.mean, grid)
    if method == "MF":
        params.pop("trend")
        model = MultiFidelityKriging(shared_theta=shared_theta, bounds=bounds, **params)
        model.fit(X_lf, basis.project(Y_lf), X_hf, basis.project(Y_hf))
    else:
        model = LatentKriging(shared_theta=shared_theta, bounds=bounds, **params)
        model.fit(X, basis.project(Y))
    return FieldSurrogate(basis, model, method)


# --- persistence ------------------------------------------------------------

def save_surrogate(sur: FieldSurrogate, path) -> None:
    """Write a JSON manifest next to the basis and per-model binary files."""
    path = Path(path)
    stem = path.with_suffix("")

    def put(model, tag):
        p = stem.parent / f"{stem.name}.{tag}.krg"
        save_kriging(model, p)
        return p.name

    basis_file = stem.parent / f"{stem.name}.basis.pod"
    save_basis(sur.basis, basis_file)
    manifest = {"format": "mfpod-surrogate", "version": 1, "method": sur.method,
                "k": sur.k, "basis": basis_file.name}
    m = sur.latent_model
    if sur.method == "MF":
        lf = m.lf_model_
        manifest["shared_theta"] = bool(lf.shared_theta)
        manifest["rho"] = m.rho_.tolist()
        manifest["lf_models"] = [put(mm, f"lf{i}") for i, mm in enumerate(lf.models_)]
        manifest["bounds"] = m.bounds_.tolist()
        if m._shared_discrepancy is not None:
            manifest["shared_discrepancy"] = put(m._shared_discrepancy, "delta")
        else:
            disc = []
            for j, d in enumerate(m.discrepancy_models_):
                if isinstance(d, _FixedRhoDiscrepancy):
                    disc.append({"fixed_rho": float(d.rho), "file": put(d.delta, f"delta{j}")})
                else:
                    disc.append({"file": put(d, f"delta{j}")})
            manifest["discrepancy_models"] = disc
    else:
        manifest["shared_theta"] = bool(m.shared_theta)
        manifest["bounds"] = m.bounds_.tolist()
        manifest["models"] = [put(mm, f"m{i}") for i, mm in enumerate(m.models_)]
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _latent_from_models(models, shared, bounds, k):
    lk = LatentKriging(shared_theta=shared, bounds=bounds)
    lk.models_ = models
    lk.bounds_ = np.asarray(bounds, dtype=float)
    lk.n_outputs_ = k
    lk.n_features_in_ = models[0].n_features_in_
    return lk


def load_surrogate(path) -> FieldSurrogate:
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: cannot read surrogate manifest ({exc})") from None
    if man.get("format") != "mfpod-surrogate":
        raise FileFormatError(f"{path}: not a surrogate manifest")
    d = path.parent
    basis = load_basis(d / man["basis"])
    k = man["k"]
    if man["method"] != "MF":
        models = [load_kriging(d / f) for f in man["models"]]
        return FieldSurrogate(basis, _latent_from_models(models, man["shared_theta"],
                                                         man["bounds"], k), man["method"])
    lf_models = [load_kriging(d / f) for f in man["lf_models"]]
    lf = _latent_from_models(lf_models, man["shared_theta"], man["bounds"], k)
    mf = MultiFidelityKriging(shared_theta=man["shared_theta"])
    mf.lf_model_ = lf
    mf.bounds_ = np.asarray(man["bounds"], dtype=float)
    mf.n_outputs_ = k
    mf.n_features_in_ = lf.n_features_in_
    mf.rho_ = np.asarray(man["rho"], dtype=float)
    mf.rho_fallback_ = np.zeros(k, dtype=bool)
    if "shared_discrepancy" in man:
        mf._shared_discrepancy = load_kriging(d / man["shared_discrepancy"],
                                              trend=LowFidelityTrend(lf, None))
        mf.discrepancy_models_ = [None] * k
    else:
        mf._shared_discrepancy = None
        disc = []
        for j, entry in enumerate(man["discrepancy_models"]):
            if "fixed_rho" in entry:
                delta = load_kriging(d / entry["file"])
                disc.append(_FixedRhoDiscrepancy(entry["fixed_rho"], lf, j, delta))
            else:
                disc.append(load_kriging(d / entry["file"], trend=LowFidelityTrend(lf, j)))
        mf.discrepancy_models_ = disc
    return FieldSurrogate(basis, mf, "MF")

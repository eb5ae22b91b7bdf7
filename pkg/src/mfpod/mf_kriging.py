"""Two-step multi-fidelity kriging on latent coordinates.

For each latent dimension ``j`` the high-fidelity response is modelled as
``z_H_j(x) = rho_j * f_L_j(x) + delta_j(x)``. Step one fits ``f_L`` on the
low-fidelity data. Step two fits a universal-kriging model on the
high-fidelity data whose trend basis is ``[f_L_j(x), 1]``; its generalized
least-squares trend coefficients are ``rho_j`` and the discrepancy
intercept, and its Gaussian-process residual is ``delta_j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import NestedDesignError, ShapeError
from .kriging import KrigingConfig, KrigingRegressor, LatentKriging, TrendBasis

log = logging.getLogger(__name__)


class LowFidelityTrend(TrendBasis):
    """Trend basis ``[f_L(x), 1]`` built from a fitted low-fidelity model.

    ``column=None`` yields one basis block per latent dimension.
    """

    def __init__(self, lf_model: LatentKriging, column: int | None = None):
        self.lf_model = lf_model
        self.column = column

    def __call__(self, X):
        f = self.lf_model.predict(X)
        if self.column is not None:
            return np.column_stack([f[:, self.column], np.ones(len(X))])
        ones = np.ones_like(f)
        return np.stack([f, ones], axis=-1).transpose(1, 0, 2)

    def jacobian(self, X):
        g = self.lf_model.predict_gradient(X)  # (M, k, n)
        if self.column is not None:
            J = np.zeros((len(X), 2, X.shape[1]))
            J[:, 0, :] = g[:, self.column, :]
            return J
        J = np.zeros((g.shape[1], len(X), 2, X.shape[1]))
        J[:, :, 0, :] = g.transpose(1, 0, 2)
        return J


@dataclass
class FidelityDataset:
    """Nested two-fidelity latent data set.

    ``hf_subset_indices[i]`` is the row of ``X_L`` that coincides with
    ``X_H[i]``; it is filled in automatically when omitted.
    """

    X_L: np.ndarray
    Z_L: np.ndarray
    X_H: np.ndarray
    Z_H: np.ndarray
    hf_subset_indices: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.X_L = np.atleast_2d(np.asarray(self.X_L, dtype=float))
        self.X_H = np.atleast_2d(np.asarray(self.X_H, dtype=float))
        self.Z_L = np.asarray(self.Z_L, dtype=float).reshape(len(self.X_L), -1)
        self.Z_H = np.asarray(self.Z_H, dtype=float).reshape(len(self.X_H), -1)
        if self.Z_L.shape[1] != self.Z_H.shape[1]:
            raise ShapeError("LF and HF latent dimensions differ")
        N_L, N_H = len(self.X_L), len(self.X_H)
        if not N_L > N_H >= 2:
            raise NestedDesignError(f"need N_L > N_H >= 2, got N_L={N_L}, N_H={N_H}")
        if self.hf_subset_indices is None:
            self.hf_subset_indices = nested_indices(self.X_L, self.X_H)
        idx = np.asarray(self.hf_subset_indices, dtype=int)
        if len(idx) != N_H or not np.array_equal(self.X_L[idx], self.X_H):
            raise NestedDesignError("HF design is not a subset of the LF design")
        self.hf_subset_indices = idx


def nested_indices(X_L, X_H) -> np.ndarray:
    """Row of ``X_L`` equal to each row of ``X_H`` (exact match)."""
    lookup = {}
    for i, row in enumerate(np.asarray(X_L, dtype=float)):
        lookup.setdefault(row.tobytes(), i)
    out = []
    for row in np.asarray(X_H, dtype=float):
        i = lookup.get(row.tobytes())
        if i is None:
            raise NestedDesignError(f"HF point {row.tolist()} has no LF counterpart")
        out.append(i)
    return np.array(out, dtype=int)


class _FixedRhoDiscrepancy:
    """``rho * f_L(x) + delta(x)`` with ``rho`` fixed and ``delta`` fitted on residuals."""

    def __init__(self, rho, lf_model, column, delta):
        self.rho, self.lf_model, self.column, self.delta = rho, lf_model, column, delta

    def predict(self, X, return_var=False):
        f = self.lf_model.predict(X)[:, self.column]
        out = self.delta.predict(X, return_var=return_var)
        if return_var:
            return self.rho * f + out[0], out[1]
        return self.rho * f + out

    def predict_gradient(self, X):
        g = self.lf_model.predict_gradient(X)[:, self.column, :]
        return self.rho * g + self.delta.predict_gradient(X)


class MultiFidelityKriging(RegressorMixin, BaseEstimator):
    """Multi-fidelity kriging over a matrix of outputs.

    Parameters
    ----------
    kernel, theta_bounds, nugget, n_restarts, random_state, bounds
        Passed to every underlying :class:`KrigingRegressor`.
    shared_theta : bool, default=False
        Share length scales across output columns (one model per fidelity
        step instead of one per column).
    rho : float or None
        Force the scaling factor to this value for every column instead of
        estimating it.
    shared_rho : bool, default=False
        Estimate a single scaling factor for all columns by pooled least
        squares (per-column intercepts), then fit the discrepancies with
        that factor held fixed.
    require_nested : bool, default=True
        Reject high-fidelity points that are not in the low-fidelity design.
    """

    def __init__(self, kernel="squared_exponential", theta_bounds=(-2.0, 2.0), nugget=1e-10,
                 n_restarts=3, random_state=0, bounds=None, shared_theta=False, rho=None,
                 shared_rho=False, require_nested=True):
        self.kernel = kernel
        self.theta_bounds = theta_bounds
        self.nugget = nugget
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.bounds = bounds
        self.shared_theta = shared_theta
        self.rho = rho
        self.shared_rho = shared_rho
        self.require_nested = require_nested

    def _kriging(self, **over):
        params = dict(kernel=self.kernel, theta_bounds=self.theta_bounds, nugget=self.nugget,
                      n_restarts=self.n_restarts, random_state=self.random_state,
                      bounds=self.bounds_)
        params.update(over)
        return params

    def fit(self, X_lf, y_lf, X_hf, y_hf):
        X_lf, X_hf = check_array(X_lf), check_array(X_hf)
        Z_L = np.asarray(y_lf, dtype=float).reshape(len(X_lf), -1)
        Z_H = np.asarray(y_hf, dtype=float).reshape(len(X_hf), -1)
        if Z_L.shape[1] != Z_H.shape[1]:
            raise ShapeError("LF and HF outputs have different widths")
        if self.require_nested:
            if not len(X_lf) > len(X_hf) >= 2:
                raise NestedDesignError(
                    f"need N_L > N_H >= 2, got N_L={len(X_lf)}, N_H={len(X_hf)}")
            nested_indices(X_lf, X_hf)
        if self.bounds is None:
            allx = np.vstack([X_lf, X_hf])
            self.bounds_ = np.column_stack([allx.min(axis=0), allx.max(axis=0)])
        else:
            self.bounds_ = np.asarray(self.bounds, dtype=float).reshape(X_lf.shape[1], 2)
        k = Z_L.shape[1]
        self.n_outputs_ = k
        self.n_features_in_ = X_lf.shape[1]

        # step 1: low-fidelity surrogate
        self.lf_model_ = LatentKriging(shared_theta=self.shared_theta,
                                       **self._kriging()).fit(X_lf, Z_L)

        # step 2: scaling factor and discrepancy from HF data and LF predictions at X_H
        f_at_H = self.lf_model_.predict(X_hf)
        degenerate = np.ptp(f_at_H, axis=0) <= 1e-12 * np.maximum(np.abs(f_at_H).max(axis=0), 1.0)
        self.rho_fallback_ = degenerate.copy()
        if np.any(degenerate) and self.rho is None:
            log.warning("LF predictions constant at HF points for columns %s; using rho=1",
                        np.flatnonzero(degenerate).tolist())

        fixed = None
        if self.rho is not None:
            fixed = np.full(k, float(self.rho))
        elif self.shared_rho:
            fixed = np.full(k, _pooled_rho(f_at_H, Z_H))
        elif np.any(degenerate):
            fixed = np.where(degenerate, 1.0, np.nan)

        self.discrepancy_models_ = [None] * k
        rho = np.empty(k)
        free = np.ones(k, dtype=bool) if fixed is None else np.isnan(fixed)
        for j in np.flatnonzero(~free):
            resid = Z_H[:, j] - fixed[j] * f_at_H[:, j]
            delta = KrigingRegressor(trend="constant", **self._kriging()).fit(X_hf, resid)
            self.discrepancy_models_[j] = _FixedRhoDiscrepancy(fixed[j], self.lf_model_, j, delta)
            rho[j] = fixed[j]
        free_cols = np.flatnonzero(free)
        if len(free_cols) and self.shared_theta and len(free_cols) == k:
            disc = KrigingRegressor(trend=LowFidelityTrend(self.lf_model_, None),
                                    **self._kriging()).fit(X_hf, Z_H)
            self._shared_discrepancy = disc
            rho[:] = disc.beta_[:, 0]
        else:
            self._shared_discrepancy = None
            for j in free_cols:
                disc = KrigingRegressor(trend=LowFidelityTrend(self.lf_model_, j),
                                        **self._kriging()).fit(X_hf, Z_H[:, j])
                self.discrepancy_models_[j] = disc
                rho[j] = disc.beta_[0, 0]
        self.rho_ = rho
        return self

    def predict(self, X, return_var=False):
        """Latent mean ``(M, k)``; with ``return_var`` also the variance
        ``rho**2 * var_L + var_delta``."""
        check_is_fitted(self, "rho_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._shared_discrepancy is not None:
            out = self._shared_discrepancy.predict(X, return_var=return_var)
            mean, var_d = (out if return_var else (out, None))
            mean = mean.reshape(len(X), -1)
        else:
            outs = [m.predict(X, return_var=return_var) for m in self.discrepancy_models_]
            if return_var:
                mean = np.column_stack([o[0] for o in outs])
                var_d = np.column_stack([o[1] for o in outs])
            else:
                mean = np.column_stack(outs)
        if not return_var:
            return mean
        _, var_L = self.lf_model_.predict(X, return_var=True)
        var = self.rho_**2 * var_L + var_d.reshape(len(X), -1)
        return mean, np.maximum(var, 0.0)

    def predict_gradient(self, X):
        """Gradient of the latent mean, shape ``(M, k, n)``."""
        check_is_fitted(self, "rho_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._shared_discrepancy is not None:
            g = self._shared_discrepancy.predict_gradient(X)
            return g[:, None, :] if g.ndim == 2 else g
        return np.stack([m.predict_gradient(X) for m in self.discrepancy_models_], axis=1)

    def predict_lf(self, X, return_var=False):
        check_is_fitted(self, "rho_")
        return self.lf_model_.predict(X, return_var=return_var)


def _pooled_rho(F, Z):
    """Common slope of ``Z[:, j] ~ rho * F[:, j] + c_j`` by least squares."""
    Fc = F - F.mean(axis=0)
    Zc = Z - Z.mean(axis=0)
    den = (Fc**2).sum()
    return float((Fc * Zc).sum() / den) if den > 0 else 1.0


def fit_mf(data: FidelityDataset, config: KrigingConfig | None = None, **kwargs):
    """Fit a :class:`MultiFidelityKriging` model to a nested data set."""
    config = config or KrigingConfig()
    params = config.estimator_params()
    params.pop("trend")
    params.update(kwargs)
    return MultiFidelityKriging(**params).fit(data.X_L, data.Z_L, data.X_H, data.Z_H)


def predict_latent(model: MultiFidelityKriging, x):
    m, v = model.predict(np.atleast_2d(x), return_var=True)
    return m[0], v[0]

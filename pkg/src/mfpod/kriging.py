"""Universal kriging with anisotropic stationary kernels.

Inputs are mapped to the unit hypercube with stored bounds; outputs are
standardized internally. Length scales are found by maximizing the
concentrated log-likelihood with a multi-start compass search in log10 space.

Several output columns may be fitted at once; they then share one set of
length scales (one correlation matrix) while trend coefficients and process
variances stay per column.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConditioningError, FileFormatError, IllPosedDataError, InvalidInputError

KERNELS = ("squared_exponential", "matern52")
_SQRT5 = np.sqrt(5.0)
_MAX_NUGGET = 1e-4
_SIGMA2_FLOOR = 1e-300
_KRG_MAGIC = b"MFPODKR\x00"


# --- kernels ----------------------------------------------------------------

def _kernel_from_r2(r2, kernel):
    if kernel == "squared_exponential":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def _kernel_dr2_factor(r2, kernel):
    """``g`` such that ``d k / d u_d = -g * (u_d - v_d) / l_d**2``."""
    if kernel == "squared_exponential":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)


# --- trend bases -------------------------------------------------------------

class TrendBasis:
    """Regression basis evaluated on *raw* (un-normalized) inputs.

    Subclasses return values of shape ``(M, p)`` (shared by all outputs) or
    ``(q, M, p)`` (one basis per output column), and Jacobians of shape
    ``(M, p, n)`` or ``(q, M, p, n)``.
    """

    centered_outputs = False

    def __call__(self, X):
        raise NotImplementedError

    def jacobian(self, X):
        raise NotImplementedError


class _ConstantTrend(TrendBasis):
    centered_outputs = True

    def __call__(self, X):
        return np.ones((len(X), 1))

    def jacobian(self, X):
        return np.zeros((len(X), 1, X.shape[1]))


class _LinearTrend(TrendBasis):
    centered_outputs = True

    def __init__(self, lower, span):
        self.lower, self.span = lower, span

    def __call__(self, X):
        return np.column_stack([np.ones(len(X)), (X - self.lower) / self.span])

    def jacobian(self, X):
        n = X.shape[1]
        J = np.zeros((len(X), n + 1, n))
        J[:, 1:, :] = np.diag(1.0 / self.span)
        return J


def _as_qmp(F, q):
    F = np.asarray(F, dtype=float)
    if F.ndim == 2:
        F = F[None]
    if F.shape[0] not in (1, q):
        raise InvalidInputError(f"trend basis returned {F.shape[0]} blocks for {q} outputs")
    return F


# --- configuration ----------------------------------------------------------

@dataclass
class KrigingConfig:
    """Hyperparameter-search settings shared by the kriging models."""

    kernel: str = "squared_exponential"
    theta_bounds: tuple = (-2.0, 2.0)
    nugget: float = 1e-10
    trend: str = "constant"
    n_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.theta_bounds
        if not lo < hi:
            raise ValueError("theta_bounds must satisfy lower < upper")
        if self.nugget < 0:
            raise ValueError("nugget must be nonnegative")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")

    def estimator_params(self) -> dict:
        d = asdict(self)
        d["random_state"] = d.pop("seed")
        d["theta_bounds"] = tuple(d["theta_bounds"])
        return d


def compass_search(fun, x0, lower, upper, step=None, min_step=1e-2, max_evals=400):
    """Bound-constrained coordinate pattern search.

    Accepts only strict decreases of ``fun``; halves the step after a sweep
    without improvement. Returns ``(x, f, n_evals)``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    fx = fun(x)
    evals = 1
    step = 0.25 * (upper - lower) if step is None else np.full_like(x, step)
    while np.max(step) >= min_step and evals < max_evals:
        improved = False
        for d in range(len(x)):
            for sgn in (1.0, -1.0):
                trial = x.copy()
                trial[d] = np.clip(x[d] + sgn * step[d], lower[d], upper[d])
                if trial[d] == x[d]:
                    continue
                ft = fun(trial)
                evals += 1
                if ft < fx:
                    x, fx, improved = trial, ft, True
                    break
        if not improved:
            step = 0.5 * step
    return x, fx, evals


# --- estimator --------------------------------------------------------------

class KrigingRegressor(RegressorMixin, BaseEstimator):
    """Gaussian-process (kriging) regressor.

    Parameters
    ----------
    kernel : {"squared_exponential", "matern52"}
    theta_bounds : (float, float) or array of shape (n_features, 2)
        Search interval for log10 of each length scale, in normalized
        input units.
    nugget : float
        Diagonal regularization added to the correlation matrix. Escalated
        tenfold (up to 1e-4) if the Cholesky factorization fails.
    trend : {"constant", "linear"} or TrendBasis
    n_restarts : int
        Number of compass-search starts. The first starts at the centre of
        ``theta_bounds``, the rest are drawn uniformly.
    random_state : int
    bounds : array of shape (n_features, 2), optional
        Normalization box for the inputs. Defaults to the data range.
    theta : array of shape (n_features,), optional
        Fixed log10 length scales; disables the likelihood search.
    """

    def __init__(self, kernel="squared_exponential", theta_bounds=(-2.0, 2.0), nugget=1e-10,
                 trend="constant", n_restarts=3, random_state=0, bounds=None, theta=None):
        self.kernel = kernel
        self.theta_bounds = theta_bounds
        self.nugget = nugget
        self.trend = trend
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.bounds = bounds
        self.theta = theta

    # -- fitting --

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y, dtype=float)
        self._single_output = y.ndim == 1
        Y = y.reshape(len(y), -1)
        if len(Y) != len(X):
            raise InvalidInputError(f"X has {len(X)} rows, y has {len(Y)}")
        if not np.isfinite(Y).all():
            raise InvalidInputError("y contains non-finite values")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        X, Y = self._drop_duplicates(X, Y)
        if len(X) < 2:
            raise IllPosedDataError("kriging needs at least two distinct points")
        n = X.shape[1]

        if self.bounds is None:
            lo, hi = X.min(axis=0), X.max(axis=0)
        else:
            b = np.asarray(self.bounds, dtype=float).reshape(n, 2)
            lo, hi = b[:, 0], b[:, 1]
        span = np.where(hi > lo, hi - lo, 1.0)
        self.lower_, self.span_ = lo, span
        self.X_train_, self.y_train_ = X, Y
        self.n_features_in_ = n

        if isinstance(self.trend, TrendBasis):
            self._basis = self.trend
        elif self.trend == "constant":
            self._basis = _ConstantTrend()
        elif self.trend == "linear":
            self._basis = _LinearTrend(lo, span)
        else:
            raise ValueError(f"unknown trend {self.trend!r}")

        if self._basis.centered_outputs:
            self.y_mean_ = Y.mean(axis=0)
        else:
            self.y_mean_ = np.zeros(Y.shape[1])
        std = Y.std(axis=0)
        self.y_std_ = np.where(std > 0, std, 1.0)
        self._Ys = (Y - self.y_mean_) / self.y_std_
        self._U = (X - lo) / span
        self._F = _as_qmp(self._basis(X), Y.shape[1])
        self._d2 = np.stack([pdist(self._U[:, [d]], "sqeuclidean") for d in range(n)])

        tb = np.asarray(self.theta_bounds, dtype=float)
        tb = np.broadcast_to(tb, (n, 2)) if tb.ndim == 1 else tb.reshape(n, 2)
        self._tlo, self._thi = tb[:, 0].copy(), tb[:, 1].copy()

        if self.theta is not None:
            best = np.broadcast_to(np.asarray(self.theta, dtype=float), (n,)).copy()
        else:
            best = self._search()
        self._set_state(best)
        return self

    def _drop_duplicates(self, X, Y):
        pairs = cKDTree(X).query_pairs(1e-12, output_type="ndarray")
        if len(pairs) == 0:
            return X, Y
        scale = max(1.0, float(np.abs(Y).max()))
        diff = np.abs(Y[pairs[:, 0]] - Y[pairs[:, 1]]).max(axis=1)
        if np.any(diff > 1e-12 * scale):
            raise IllPosedDataError("duplicate input points with conflicting outputs")
        keep = np.ones(len(X), dtype=bool)
        keep[pairs.max(axis=1)] = False
        return X[keep], Y[keep]

    def _corr(self, log_theta):
        w = 10.0 ** (-2.0 * np.asarray(log_theta))
        R = squareform(_kernel_from_r2(w @ self._d2, self.kernel))
        np.fill_diagonal(R, 1.0)
        return R

    def _factor(self, R):
        nugget = float(self.nugget)
        idx = np.diag_indices_from(R)
        while True:
            Rn = R.copy()
            Rn[idx] += nugget
            try:
                return linalg.cholesky(Rn, lower=True, check_finite=False), nugget
            except linalg.LinAlgError:
                nugget = max(nugget * 10.0, 1e-14)
                if nugget > _MAX_NUGGET * (1 + 1e-9):
                    raise ConditioningError(
                        "correlation matrix not positive definite at max nugget") from None

    def _gls(self, L):
        N = L.shape[0]
        Yt = linalg.solve_triangular(L, self._Ys, lower=True, check_finite=False)
        q = self._Ys.shape[1]
        betas, sig2, qrs = [], [], []
        Ft_all = linalg.solve_triangular(
            L, self._F.reshape(-1, self._F.shape[-1]) if self._F.shape[0] == 1
            else np.concatenate(list(self._F), axis=1),
            lower=True, check_finite=False)
        p = self._F.shape[-1]
        for j in range(q):
            Ft = Ft_all if self._F.shape[0] == 1 else Ft_all[:, j * p:(j + 1) * p]
            Q, G = linalg.qr(Ft, mode="economic", check_finite=False)
            beta = linalg.lstsq(G, Q.T @ Yt[:, j], check_finite=False)[0]
            resid = Yt[:, j] - Ft @ beta
            betas.append(beta)
            sig2.append(max(resid @ resid / N, _SIGMA2_FLOOR))
            qrs.append((Ft, G))
        return np.array(betas), np.array(sig2), qrs

    def reduced_likelihood(self, log_theta) -> float:
        """Concentrated log-likelihood at the given log10 length scales.

        Returns ``-inf`` if the correlation matrix cannot be factorized.
        """
        check_is_fitted(self, "X_train_")
        try:
            L, _ = self._factor(self._corr(log_theta))
        except ConditioningError:
            return -np.inf
        _, sig2, _ = self._gls(L)
        N, q = self._Ys.shape
        return float(-0.5 * N * np.log(sig2).sum() - q * np.log(np.diag(L)).sum())

    def _search(self):
        rng = np.random.default_rng(self.random_state)
        starts = [0.5 * (self._tlo + self._thi)]
        for _ in range(int(self.n_restarts) - 1):
            starts.append(rng.uniform(self._tlo, self._thi))
        best, best_f = None, np.inf
        for s in starts:
            x, f, _ = compass_search(lambda t: -self.reduced_likelihood(t), s,
                                     self._tlo, self._thi)
            if f < best_f or best is None:
                best, best_f = x, f
        return best

    def _set_state(self, log_theta):
        self.log_theta_ = np.asarray(log_theta, dtype=float)
        self.theta_ = 10.0 ** self.log_theta_
        self._L, self.nugget_ = self._factor(self._corr(self.log_theta_))
        self._beta_s, self._sig2_s, qrs = self._gls(self._L)
        self._qr = qrs
        Fb = np.einsum("qmp,qp->mq", np.broadcast_to(self._F, (self._Ys.shape[1],) + self._F.shape[1:]),
                       self._beta_s)
        self._gamma = linalg.cho_solve((self._L, True), self._Ys - Fb, check_finite=False)
        # raw-unit trend coefficients; the intercept absorbs the output mean
        self.beta_ = self._beta_s * self.y_std_[:, None]
        if self._basis.centered_outputs:
            self.beta_[:, 0] += self.y_mean_
        self.process_variance_ = self._sig2_s * self.y_std_**2
        self.log_likelihood_ = float(
            -0.5 * len(self._Ys) * np.log(self._sig2_s).sum()
            - self._Ys.shape[1] * np.log(np.diag(self._L)).sum())

    # -- prediction --

    def _prep(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if not np.isfinite(X).all():
            raise InvalidInputError("prediction input contains non-finite values")
        return X

    def _cross(self, X):
        U = (X - self.lower_) / self.span_
        diff = U[:, None, :] - self._U[None, :, :]
        r2 = (diff**2) @ (10.0 ** (-2.0 * self.log_theta_))
        return U, diff, r2

    def _shape(self, a):
        return a[:, 0] if self._single_output else a

    def predict(self, X, return_var=False):
        """Posterior mean (and variance if ``return_var``)."""
        check_is_fitted(self, "_gamma")
        X = self._prep(X)
        _, _, r2 = self._cross(X)
        r = _kernel_from_r2(r2, self.kernel)
        # nugget effect: zero-lag covariance includes the nugget, so the
        # predictor is exact at the data points
        r[r2 == 0.0] += self.nugget_
        q = self._Ys.shape[1]
        F = np.broadcast_to(_as_qmp(self._basis(X), q), (q, len(X), self._F.shape[-1]))
        mean_s = np.einsum("qmp,qp->mq", F, self._beta_s) + r @ self._gamma
        mean = mean_s * self.y_std_ + self.y_mean_
        if not return_var:
            return self._shape(mean)
        rt = linalg.solve_triangular(self._L, r.T, lower=True, check_finite=False)
        base = 1.0 - (rt**2).sum(axis=0)
        var = np.empty_like(mean)
        for j, (Ft, G) in enumerate(self._qr):
            u = linalg.solve_triangular(G, Ft.T @ rt - F[j].T, trans="T", check_finite=False)
            var[:, j] = self._sig2_s[j] * (base + (u**2).sum(axis=0))
        var = np.maximum(var, 0.0) * self.y_std_**2
        return self._shape(mean), self._shape(var)

    def predict_gradient(self, X):
        """Gradient of the posterior mean with respect to raw inputs.

        Returns shape ``(M, n)`` for single-output models, ``(M, q, n)``
        otherwise.
        """
        check_is_fitted(self, "_gamma")
        X = self._prep(X)
        _, diff, r2 = self._cross(X)
        g = _kernel_dr2_factor(r2, self.kernel)
        w = 10.0 ** (-2.0 * self.log_theta_)
        # d r_i / d u = -g_i * diff_i * w
        dr = -(g[:, :, None] * diff) * w
        grad_u = np.einsum("mnd,nq->mqd", dr, self._gamma)
        grad = grad_u / self.span_
        q = self._Ys.shape[1]
        J = np.asarray(self._basis.jacobian(X), dtype=float)
        if J.ndim == 3:
            J = J[None]
        J = np.broadcast_to(J, (q,) + J.shape[1:])
        grad = grad + np.einsum("qmpd,qp->mqd", J, self._beta_s)
        grad = grad * self.y_std_[None, :, None]
        return grad[:, 0, :] if self._single_output else grad


def fit_kriging(X, y, config: KrigingConfig | None = None, **kwargs) -> KrigingRegressor:
    params = (config or KrigingConfig()).estimator_params()
    params.update(kwargs)
    return KrigingRegressor(**params).fit(X, y)


def predict(model: KrigingRegressor, x):
    """Mean and variance at a single point."""
    m, v = model.predict(np.atleast_2d(x), return_var=True)
    return m[0], v[0]


def predict_gradient(model: KrigingRegressor, x):
    return model.predict_gradient(np.atleast_2d(x))[0]


# --- persistence ------------------------------------------------------------

def save_kriging(model: KrigingRegressor, path) -> None:
    """Versioned binary container; the factorization is rebuilt on load."""
    check_is_fitted(model, "_gamma")
    trend = model.trend if isinstance(model.trend, str) else "custom"
    header = {
        "kernel": model.kernel,
        "trend": trend,
        "nugget": float(model.nugget_),
        "n_restarts": int(model.n_restarts),
        "random_state": model.random_state,
        "single_output": bool(model._single_output),
        "n": int(model.n_features_in_),
        "N": int(len(model.X_train_)),
        "q": int(model.y_train_.shape[1]),
        "p": int(model.beta_.shape[1]),
        "theta_bounds": np.asarray(model.theta_bounds, dtype=float).tolist(),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    arrays = [model.lower_, model.lower_ + model.span_, model.X_train_, model.y_train_,
              model.log_theta_, model.beta_, model.process_variance_]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    Path(path).write_bytes(_KRG_MAGIC + struct.pack("<IIQ", 1, 0, len(hb)) + hb + payload)


def load_kriging(path, trend: TrendBasis | None = None) -> KrigingRegressor:
    """Load a model written by :func:`save_kriging`.

    Models fitted with a custom trend basis need that basis passed back in.
    """
    buf = Path(path).read_bytes()
    if buf[:8] != _KRG_MAGIC:
        raise FileFormatError(f"{path}: not a kriging model file")
    version, _, hlen = struct.unpack_from("<IIQ", buf, 8)
    if version != 1:
        raise FileFormatError(f"{path}: unsupported version {version}")
    h = json.loads(buf[24:24 + hlen])
    off = 24 + hlen
    n, N, q, p = h["n"], h["N"], h["q"], h["p"]
    sizes = [n, n, N * n, N * q, n, q * p, q]
    arrs = []
    for s in sizes:
        arrs.append(np.frombuffer(buf, "<f8", s, off).copy())
        off += 8 * s
    lo, hi, X, Y, log_theta, beta, pv = arrs
    if h["trend"] == "custom":
        if trend is None:
            raise FileFormatError(f"{path}: model uses a custom trend basis; pass it to load")
        tr = trend
    else:
        tr = h["trend"]
    y = Y.reshape(N, q)
    model = KrigingRegressor(kernel=h["kernel"], theta_bounds=h["theta_bounds"],
                             nugget=h["nugget"], trend=tr, n_restarts=h["n_restarts"],
                             random_state=h["random_state"],
                             bounds=np.column_stack([lo, hi]), theta=log_theta)
    model.fit(X.reshape(N, n), y[:, 0] if h["single_output"] else y)
    if not np.allclose(model.beta_.ravel(), beta, rtol=1e-6, atol=1e-10):
        raise FileFormatError(f"{path}: stored trend coefficients do not match the refit")
    return model


class LatentKriging(RegressorMixin, BaseEstimator):
    """Kriging for a matrix of outputs (e.g. POD latent coordinates).

    With ``shared_theta=False`` each output column gets its own model and
    length scales; otherwise a single model with shared length scales is
    fitted to all columns at once.
    """

    def __init__(self, kernel="squared_exponential", theta_bounds=(-2.0, 2.0), nugget=1e-10,
                 trend="constant", n_restarts=3, random_state=0, bounds=None,
                 shared_theta=False):
        self.kernel = kernel
        self.theta_bounds = theta_bounds
        self.nugget = nugget
        self.trend = trend
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.bounds = bounds
        self.shared_theta = shared_theta

    def _make(self, **over):
        params = dict(kernel=self.kernel, theta_bounds=self.theta_bounds, nugget=self.nugget,
                      trend=self.trend, n_restarts=self.n_restarts,
                      random_state=self.random_state, bounds=self.bounds)
        params.update(over)
        return KrigingRegressor(**params)

    def fit(self, X, Y):
        X = check_array(X)
        Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
        if self.bounds is None:
            # all columns must normalize identically
            self.bounds_ = np.column_stack([X.min(axis=0), X.max(axis=0)])
        else:
            self.bounds_ = np.asarray(self.bounds, dtype=float).reshape(X.shape[1], 2)
        if self.shared_theta:
            self.models_ = [self._make(bounds=self.bounds_).fit(X, Y)]
        else:
            self.models_ = [self._make(bounds=self.bounds_).fit(X, Y[:, j])
                            for j in range(Y.shape[1])]
        self.n_outputs_ = Y.shape[1]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_var=False):
        check_is_fitted(self, "models_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        outs = [m.predict(X, return_var=return_var) for m in self.models_]
        if not return_var:
            return np.column_stack(outs)
        return (np.column_stack([o[0] for o in outs]), np.column_stack([o[1] for o in outs]))

    def predict_gradient(self, X):
        """Shape ``(M, n_outputs, n_features)``."""
        check_is_fitted(self, "models_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.shared_theta:
            g = self.models_[0].predict_gradient(X)
            return g[:, None, :] if g.ndim == 2 else g
        return np.stack([m.predict_gradient(X) for m in self.models_], axis=1)

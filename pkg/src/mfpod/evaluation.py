"""Field quantities of interest, validation error metrics, cost bookkeeping
and the hold-out convergence study."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridMismatchError, ShapeError, SizeError
from .field_grid import GridField

log = logging.getLogger(__name__)

REL_ERR_FLOOR = 1e-12
STUDY_COLUMNS = ("method", "n_lf", "n_hf", "cost", "avg_rmse",
                 "rel_err_max", "rel_err_mean", "rel_err_sigma")


@dataclass(frozen=True)
class QoiSummary:
    mean: float
    std: float
    max: float

    @property
    def three_sigma(self) -> float:
        return 3.0 * self.std


@dataclass(frozen=True)
class CostModel:
    """Average wall time of one LF and one HF evaluation, in seconds."""

    t_L: float = 44.27
    t_H: float = 919.4

    def __post_init__(self):
        if not (self.t_L > 0 and self.t_H > 0):
            raise ConfigError("evaluation times must be positive")

    @property
    def ratio(self) -> float:
        return self.t_H / self.t_L


def qoi(field: GridField | np.ndarray) -> QoiSummary:
    """Mean, population standard deviation and maximum over masked cells."""
    v = field.values if isinstance(field, GridField) else np.asarray(field, dtype=float)
    if v.size == 0:
        raise ShapeError("field has no cells")
    return QoiSummary(float(v.mean()), float(v.std()), float(v.max()))


def qoi_arrays(Y) -> dict:
    """Vectorized QoIs of a stack of flattened fields ``(M, m_I)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return {"max": Y.max(axis=1), "mean": Y.mean(axis=1), "sigma": Y.std(axis=1)}


def _as_matrix(fields):
    if isinstance(fields, np.ndarray):
        return np.atleast_2d(fields), None
    fields = list(fields)
    return np.vstack([f.values for f in fields]), (fields[0].grid if fields else None)


def rmse(predictions, truths) -> float:
    """Root of the mean (over fields) of the per-field mean squared error."""
    P, gp = _as_matrix(predictions)
    T, gt = _as_matrix(truths)
    if gp is not None and gt is not None and gp != gt:
        raise GridMismatchError("predictions and truths live on different grids")
    if P.shape != T.shape:
        raise ShapeError(f"shape mismatch {P.shape} vs {T.shape}")
    return float(np.sqrt(np.mean(np.mean((T - P) ** 2, axis=1))))


def relative_errors(pred_fields, true_fields) -> dict:
    """Average ``|q_hat - q| / |q|`` per QoI over a validation set."""
    qp, qt = qoi_arrays(pred_fields), qoi_arrays(true_fields)
    out = {}
    for name in ("max", "mean", "sigma"):
        den = np.abs(qt[name])
        if np.any(den < REL_ERR_FLOOR):
            log.warning("relative error for %s uses a floored denominator", name)
        out[name] = float(np.mean(np.abs(qp[name] - qt[name]) / np.maximum(den, REL_ERR_FLOOR)))
    return out


def equivalent_cost(n_L, n_H, cost: CostModel = CostModel()) -> float:
    """Data-generation cost in LF-evaluation equivalents (exact, unrounded)."""
    if n_L < 0 or n_H < 0:
        raise SizeError("evaluation counts must be nonnegative")
    return n_L + n_H * (cost.t_H / cost.t_L)


# --- convergence study ------------------------------------------------------

@dataclass
class StudyRow:
    method: str
    n_lf: int
    n_hf: int
    cost: float
    avg_rmse: float
    rel_err_max: float
    rel_err_mean: float
    rel_err_sigma: float
    rmse_per_repeat: list = field(default_factory=list)

    def as_csv_row(self):
        return [self.method, self.n_lf, self.n_hf, repr(float(self.cost)), repr(self.avg_rmse),
                repr(self.rel_err_max), repr(self.rel_err_mean), repr(self.rel_err_sigma)]


def validation_split(hf_index, n_val, seed) -> np.ndarray:
    """Hold-out HF rows, drawn once per study from the study seed."""
    hf_index = np.asarray(hf_index, dtype=int)
    if n_val > len(hf_index):
        raise SizeError(f"cannot hold out {n_val} of {len(hf_index)} HF points")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    return np.sort(rng.choice(hf_index, size=n_val, replace=False))


def draw_training(method, pools, size, n_lf_mf, rng):
    """Training rows for one repeat. Returns ``(lf_rows, hf_rows)``.

    For MF the LF rows are the HF rows (nested design) plus ``n_lf_mf``
    further LF-only rows.
    """
    lf_pool, hf_pool = pools
    if method == "LF":
        return np.sort(rng.choice(lf_pool, size, replace=False)), np.array([], dtype=int)
    if method == "HF":
        return np.array([], dtype=int), np.sort(rng.choice(hf_pool, size, replace=False))
    hf_rows = np.sort(rng.choice(hf_pool, size, replace=False))
    extra_pool = np.setdiff1d(lf_pool, hf_rows)
    extra = rng.choice(extra_pool, n_lf_mf, replace=False)
    return np.sort(np.concatenate([hf_rows, extra])), hf_rows


def study_counts(method, size, n_lf_mf):
    """``(n_lf, n_hf)`` evaluations consumed by one training set."""
    if method == "LF":
        return size, 0
    if method == "HF":
        return 0, size
    return size + n_lf_mf, size


def convergence_study(dataset, method, sizes, n_repeats=3, seed=0, *, n_val=30, n_lf_mf=100,
                      k=20, config=None, shared_theta=False, center=False, bounds=None):
    """Average validation error of one surrogate type over training sizes.

    ``sizes`` are LF counts for ``LF`` and HF counts for ``HF``/``MF``. The
    validation rows are excluded from every training draw and every draw
    within a study uses its own child of the study seed.
    """
    from .surrogate import fit_field_surrogate

    if method not in ("LF", "HF", "MF"):
        raise ConfigError(f"unknown method {method!r}")
    val = validation_split(dataset.hf_index, n_val, seed)
    lf_pool = np.setdiff1d(dataset.lf_index, val)
    hf_pool = np.setdiff1d(dataset.hf_index, val)
    # MF needs LF data at its HF rows
    if method == "MF":
        hf_pool = np.intersect1d(hf_pool, lf_pool)
    for s in sizes:
        need_lf = s if method == "LF" else (s + n_lf_mf if method == "MF" else 0)
        need_hf = 0 if method == "LF" else s
        if need_lf > len(lf_pool) or need_hf > len(hf_pool):
            raise SizeError(f"{method} size {s} needs {need_lf} LF / {need_hf} HF training "
                            f"points; pools hold {len(lf_pool)} / {len(hf_pool)}")
    truth = dataset.hf(val)
    Xv = dataset.X[val]
    children = np.random.SeedSequence(seed).spawn(1 + len(sizes))[1:]
    rows = []
    for s, child in zip(sizes, children):
        rmses, rel = [], []
        for r_seq in child.spawn(n_repeats):
            rng = np.random.default_rng(r_seq)
            lf_rows, hf_rows = draw_training(method, (lf_pool, hf_pool), s, n_lf_mf, rng)
            sur = fit_field_surrogate(
                method,
                X_lf=dataset.X[lf_rows] if len(lf_rows) else None,
                Y_lf=dataset.lf(lf_rows) if len(lf_rows) else None,
                X_hf=dataset.X[hf_rows] if len(hf_rows) else None,
                Y_hf=dataset.hf(hf_rows) if len(hf_rows) else None,
                grid=dataset.grid, k=k, config=config, shared_theta=shared_theta,
                center=center, bounds=bounds)
            pred = sur.predict_fields(Xv)
            rmses.append(rmse(pred, truth))
            rel.append(relative_errors(pred, truth))
            log.info("%s size=%d repeat=%d rmse=%.4g", method, s, len(rmses) - 1, rmses[-1])
        n_lf, n_hf = study_counts(method, s, n_lf_mf)
        rows.append(StudyRow(
            method, n_lf, n_hf, equivalent_cost(n_lf, n_hf, dataset.cost),
            float(np.mean(rmses)),
            float(np.mean([e["max"] for e in rel])),
            float(np.mean([e["mean"] for e in rel])),
            float(np.mean([e["sigma"] for e in rel])),
            rmses))
    return rows


def write_study_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv_row())


def read_study_csv(path) -> list[StudyRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != STUDY_COLUMNS:
            raise ConfigError(f"{path}: unexpected study columns {rd.fieldnames}")
        return [StudyRow(r["method"], int(r["n_lf"]), int(r["n_hf"]), float(r["cost"]),
                         float(r["avg_rmse"]), float(r["rel_err_max"]),
                         float(r["rel_err_mean"]), float(r["rel_err_sigma"])) for r in rd]


def interpolate_at_cost(rows, costs) -> np.ndarray:
    """Log-log interpolation of ``avg_rmse`` against cost; NaN outside range."""
    c = np.array([r.cost for r in rows])
    e = np.array([r.avg_rmse for r in rows])
    order = np.argsort(c)
    c, e = np.log(c[order]), np.log(e[order])
    q = np.log(np.asarray(costs, dtype=float))
    out = np.exp(np.interp(q, c, e))
    out[(q < c[0]) | (q > c[-1])] = np.nan
    return out


def matched_cost_reduction(mf_rows, hf_rows) -> np.ndarray:
    """Relative RMSE reduction of MF over HF at each MF cost inside the HF
    cost range (NaN elsewhere)."""
    hf_at = interpolate_at_cost(hf_rows, [r.cost for r in mf_rows])
    mf = np.array([r.avg_rmse for r in mf_rows])
    return 1.0 - mf / hf_at

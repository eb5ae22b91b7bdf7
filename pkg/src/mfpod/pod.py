"""Proper orthogonal decomposition of field snapshots.

Snapshots are stored row-wise (``N x m_I``), so the spatial modes are the
leading *right* singular vectors of the snapshot matrix. A field ``y`` maps to
latent coordinates ``z = (y - mean) @ V_k`` and back via ``z @ V_k.T + mean``;
``mean`` is zero unless centering was requested.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import EmptyInputError, FileFormatError, GridMismatchError, InvalidRankError, ShapeError
from .field_grid import GridField, StandardGrid, flatten, pack_grid_header, unpack_grid_header

_POD_MAGIC = b"MFPODPB\x00"


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    data: np.ndarray
    grid: StandardGrid | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float, ndmin=2)
        if data.ndim != 2 or data.shape[0] == 0:
            raise EmptyInputError("snapshot matrix needs at least one row")
        if self.grid is not None and data.shape[1] != self.grid.m_I:
            raise ShapeError(f"rows have length {data.shape[1]}, grid has m_I={self.grid.m_I}")
        if not np.isfinite(data).all():
            raise ShapeError("snapshot matrix contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class PODBasis:
    """Truncated POD basis.

    Attributes
    ----------
    modes : ndarray, shape (m_I, k)
        Orthonormal spatial modes ``V_k``.
    singular_values : ndarray
        All singular values of the (possibly centred) snapshot matrix,
        nonincreasing.
    mean : ndarray or None
        Centering vector, ``None`` for the uncentred decomposition.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    mean: np.ndarray | None = None
    grid: StandardGrid | None = field(default=None, repr=False)

    def __post_init__(self):
        modes = np.array(self.modes, dtype=float)
        sv = np.array(self.singular_values, dtype=float)
        for a in (modes, sv):
            a.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "singular_values", sv)
        if self.mean is not None:
            mean = np.array(self.mean, dtype=float)
            mean.setflags(write=False)
            object.__setattr__(self, "mean", mean)

    @property
    def k(self) -> int:
        return self.modes.shape[1]

    @property
    def m_I(self) -> int:
        return self.modes.shape[0]

    def project(self, y) -> np.ndarray:
        """Latent coordinates of one field (1-D) or a stack of fields (2-D)."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.m_I:
            raise ShapeError(f"field length {y.shape[-1]} != m_I={self.m_I}")
        if self.mean is not None:
            y = y - self.mean
        return y @ self.modes

    def reconstruct(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.k:
            raise ShapeError(f"latent length {z.shape[-1]} != k={self.k}")
        y = z @ self.modes.T
        if self.mean is not None:
            y = y + self.mean
        return y

    def energy(self) -> np.ndarray:
        """Cumulative energy fraction ``sum_{i<=j} s_i^2 / sum s_i^2``."""
        s2 = self.singular_values**2
        total = s2.sum()
        if total == 0:
            return np.ones_like(s2)
        return np.cumsum(s2) / total


def assemble_snapshots(fields) -> SnapshotMatrix:
    """Stack grid fields row-wise; all must share one grid."""
    fields = list(fields)
    if not fields:
        raise EmptyInputError("no fields to assemble")
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError("snapshots live on different grids")
    return SnapshotMatrix(np.vstack([flatten(f) for f in fields]), grid)


def _thin_svd(A):
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    V = vt.T
    # reproducible signs: largest-magnitude entry of each mode is nonnegative
    pivot = np.abs(V).argmax(axis=0)
    signs = np.where(V[pivot, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return s, V * signs


def select_rank(singular_values, threshold=0.9999) -> int:
    """Smallest k whose cumulative energy reaches ``threshold``."""
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0:
        return 1
    k = int(np.searchsorted(np.cumsum(s2) / total, threshold - 1e-15) + 1)
    return min(k, len(s2))


def compute_pod(snapshots, k=None, *, center=False, energy_threshold=0.9999) -> PODBasis:
    """Truncated POD basis of a snapshot matrix.

    ``k=None`` picks the smallest rank reaching ``energy_threshold``.
    """
    if not isinstance(snapshots, SnapshotMatrix):
        snapshots = SnapshotMatrix(snapshots)
    A = snapshots.data
    N, m = A.shape
    mean = A.mean(axis=0) if center else None
    s, V = _thin_svd(A - mean if center else A)
    if k is None:
        k = select_rank(s, energy_threshold)
    k = int(k)
    if not 1 <= k <= min(N, m):
        raise InvalidRankError(f"k={k} outside [1, {min(N, m)}]")
    return PODBasis(V[:, :k], s, mean, snapshots.grid)


def project(basis: PODBasis, y_prime) -> np.ndarray:
    return basis.project(y_prime)


def reconstruct(basis: PODBasis, z) -> np.ndarray:
    return basis.reconstruct(z)


def reconstruction_error_curve(snapshots, ks, *, center=False) -> list[tuple[int, float]]:
    """RMSE between snapshots and their rank-k POD reconstructions.

    The error averages squared differences over cells, then over snapshots,
    matching :func:`mfpod.evaluation.rmse`.
    """
    if not isinstance(snapshots, SnapshotMatrix):
        snapshots = SnapshotMatrix(snapshots)
    A = snapshots.data
    N, m = A.shape
    mean = A.mean(axis=0) if center else np.zeros(m)
    s, V = _thin_svd(A - mean)
    out = []
    for k in ks:
        k = int(k)
        if not 1 <= k <= min(N, m):
            raise InvalidRankError(f"k={k} outside [1, {min(N, m)}]")
        Vk = V[:, :k]
        resid = (A - mean) - ((A - mean) @ Vk) @ Vk.T
        out.append((k, float(np.sqrt(np.mean(resid**2)))))
    return out


class PODTransformer(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer wrapping :func:`compute_pod`.

    Parameters
    ----------
    n_components : int or None, default=20
        Number of retained modes; ``None`` selects by ``energy_threshold``.
        Clipped to ``min(n_samples, n_features)`` at fit time.
    energy_threshold : float, default=0.9999
    center : bool, default=False
        Subtract the snapshot mean before the SVD.
    """

    def __init__(self, n_components=20, energy_threshold=0.9999, center=False):
        self.n_components = n_components
        self.energy_threshold = energy_threshold
        self.center = center

    def fit(self, X, y=None):
        X = check_array(X)
        k = self.n_components
        if k is not None:
            k = min(int(k), *X.shape)
        self.basis_ = compute_pod(X, k, center=self.center,
                                  energy_threshold=self.energy_threshold)
        self.n_components_ = self.basis_.k
        self.singular_values_ = self.basis_.singular_values
        self.components_ = self.basis_.modes.T
        self.mean_ = self.basis_.mean
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return self.basis_.project(check_array(X))

    def inverse_transform(self, Z):
        check_is_fitted(self, "basis_")
        return self.basis_.reconstruct(check_array(Z))


# --- persistence ------------------------------------------------------------

def save_basis(basis: PODBasis, path) -> None:
    """Write a basis using the grid-field container plus a mode-count header."""
    if basis.grid is None:
        raise ShapeError("basis has no grid attached; cannot serialize")
    centered = basis.mean is not None
    head = pack_grid_header(basis.grid, _POD_MAGIC)
    head += struct.pack("<QQQ", basis.k, len(basis.singular_values), int(centered))
    parts = [basis.singular_values.astype("<f8").tobytes()]
    if centered:
        parts.append(basis.mean.astype("<f8").tobytes())
    parts.append(np.ascontiguousarray(basis.modes, dtype="<f8").tobytes())
    Path(path).write_bytes(head + b"".join(parts))


def load_basis(path) -> PODBasis:
    buf = Path(path).read_bytes()
    grid, off = unpack_grid_header(buf, _POD_MAGIC)
    k, ns, centered = struct.unpack_from("<QQQ", buf, off)
    off += 24
    expected = 8 * (ns + (grid.m_I if centered else 0) + grid.m_I * k)
    if len(buf) - off != expected:
        raise FileFormatError(f"{path}: payload size does not match header")
    sv = np.frombuffer(buf, "<f8", ns, off)
    off += 8 * ns
    mean = None
    if centered:
        mean = np.frombuffer(buf, "<f8", grid.m_I, off)
        off += 8 * grid.m_I
    modes = np.frombuffer(buf, "<f8", grid.m_I * k, off).reshape(grid.m_I, k)
    return PODBasis(modes, sv, mean, grid)


def as_grid_field(basis: PODBasis, y) -> GridField:
    if basis.grid is None:
        raise ShapeError("basis has no grid attached")
    return GridField(basis.grid, y)

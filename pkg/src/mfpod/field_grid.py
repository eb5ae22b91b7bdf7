"""Scattered field snapshots and their nearest-neighbour regridding onto a
masked Cartesian grid.

A :class:`StandardGrid` is an ``ny x nx`` array of cells over a rectangle.
Only cells whose centre lies inside the wafer disc are kept (the *mask*);
their count is ``m_I``. Field values on the grid are stored as a flat vector
of length ``m_I`` in row-major order over the masked cells (row index = y,
column index = x).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyInputError,
    FileFormatError,
    GridMismatchError,
    InvalidDomainError,
    ShapeError,
)

FIDELITIES = ("LF", "HF")

_GRID_MAGIC = b"MFPODGF\x00"
_FORMAT_VERSION = 1


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StandardGrid:
    """Masked Cartesian grid.

    ``mask`` has shape ``(ny, nx)``; ``mask[j, i]`` refers to the cell whose
    centre is ``(x_min + (i + 0.5) * dx, y_min + (j + 0.5) * dy)``.
    """

    nx: int
    ny: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidDomainError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not (np.isfinite([self.x_min, self.x_max, self.y_min, self.y_max]).all()):
            raise InvalidDomainError("grid bounds must be finite")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidDomainError("grid domain has zero or negative area")
        mask = _frozen(self.mask, dtype=bool)
        if mask.shape != (self.ny, self.nx):
            raise ShapeError(f"mask shape {mask.shape} != {(self.ny, self.nx)}")
        if not mask.any():
            raise InvalidDomainError("mask selects no cells")
        object.__setattr__(self, "mask", mask)

    @property
    def m_I(self) -> int:
        return int(self.mask.sum())

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Full ``(ny, nx)`` arrays of cell-centre coordinates."""
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(xs, ys)

    def masked_centers(self) -> np.ndarray:
        """``(m_I, 2)`` centres of the masked cells, in storage order."""
        X, Y = self.cell_centers()
        return np.column_stack([X[self.mask], Y[self.mask]])

    def __eq__(self, other):
        if not isinstance(other, StandardGrid):
            return NotImplemented
        return (
            (self.nx, self.ny) == (other.nx, other.ny)
            and self.bounds == other.bounds
            and np.array_equal(self.mask, other.mask)
        )

    def __hash__(self):
        return hash((self.nx, self.ny, self.bounds, self.mask.tobytes()))


@dataclass(frozen=True, eq=False)
class ScatteredField:
    """Field values on an arbitrary native mesh."""

    points: np.ndarray
    values: np.ndarray
    fidelity: str = "HF"

    def __post_init__(self):
        pts = _frozen(self.points)
        vals = _frozen(self.values).ravel()
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ShapeError(f"points must have shape (n, 2), got {pts.shape}")
        if len(pts) == 0:
            raise EmptyInputError("scattered field has no points")
        if len(pts) != len(vals):
            raise ShapeError(f"{len(pts)} points but {len(vals)} values")
        if not (np.isfinite(pts).all() and np.isfinite(vals).all()):
            raise InvalidDomainError("scattered field contains non-finite entries")
        if self.fidelity not in FIDELITIES:
            raise ValueError(f"fidelity must be one of {FIDELITIES}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class GridField:
    grid: StandardGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values).ravel()
        if len(vals) != self.grid.m_I:
            raise ShapeError(f"expected {self.grid.m_I} values, got {len(vals)}")
        if not np.isfinite(vals).all():
            raise InvalidDomainError("grid field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def to_image(self, fill=np.nan) -> np.ndarray:
        """Return an ``(ny, nx)`` array with ``fill`` outside the mask."""
        img = np.full((self.grid.ny, self.grid.nx), fill, dtype=float)
        img[self.grid.mask] = self.values
        return img

    @classmethod
    def from_image(cls, grid: StandardGrid, image) -> "GridField":
        image = np.asarray(image, dtype=float)
        if image.shape != (grid.ny, grid.nx):
            raise ShapeError(f"image shape {image.shape} != {(grid.ny, grid.nx)}")
        return cls(grid, image[grid.mask])

    def __eq__(self, other):
        if not isinstance(other, GridField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


def build_grid(nx, ny, domain=None, disc=None) -> StandardGrid:
    """Build a masked grid.

    Parameters
    ----------
    nx, ny : int
        Number of cells along x and y.
    domain : (x_min, x_max, y_min, y_max), optional
        Grid rectangle. Defaults to the tight bounding square of ``disc``.
    disc : (cx, cy, radius), optional
        Cells whose centre lies within ``radius`` of ``(cx, cy)`` are kept.
        If omitted every cell is kept.
    """
    if disc is not None:
        cx, cy, radius = (float(v) for v in disc)
        if not radius > 0:
            raise InvalidDomainError(f"disc radius must be positive, got {radius}")
        if domain is None:
            domain = (cx - radius, cx + radius, cy - radius, cy + radius)
    if domain is None:
        raise InvalidDomainError("either domain or disc must be given")
    x_min, x_max, y_min, y_max = (float(v) for v in domain)
    if not (x_min < x_max and y_min < y_max):
        raise InvalidDomainError("grid domain has zero or negative area")
    nx, ny = int(nx), int(ny)
    if nx < 2 or ny < 2:
        raise InvalidDomainError(f"grid needs nx, ny >= 2, got {nx}x{ny}")
    if disc is None:
        mask = np.ones((ny, nx), dtype=bool)
    else:
        xs = x_min + (np.arange(nx) + 0.5) * (x_max - x_min) / nx
        ys = y_min + (np.arange(ny) + 0.5) * (y_max - y_min) / ny
        X, Y = np.meshgrid(xs, ys)
        mask = np.hypot(X - cx, Y - cy) <= radius
    return StandardGrid(nx, ny, x_min, x_max, y_min, y_max, mask)


def nearest_indices(points, grid: StandardGrid) -> np.ndarray:
    """Index of the nearest scattered point for every masked cell.

    Ties between equidistant points resolve to the lowest point index.
    """
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        raise EmptyInputError("no scattered points to interpolate from")
    centers = grid.masked_centers()
    kk = min(4, len(points))
    dist, idx = cKDTree(points).query(centers, k=kk)
    if kk == 1:
        return idx.astype(np.intp)
    tied = dist == dist[:, :1]
    best = np.where(tied, idx, np.iinfo(np.intp).max).min(axis=1).astype(np.intp)
    if kk < len(points):
        # all returned neighbours tie: there may be more, fall back to brute force
        for row in np.flatnonzero(tied[:, -1]):
            d = np.sqrt(((points - centers[row]) ** 2).sum(axis=1))
            best[row] = np.flatnonzero(d == d.min())[0]
    return best


def interpolate_nearest(field: ScatteredField, grid: StandardGrid) -> GridField:
    """Regrid a scattered field by nearest-neighbour lookup."""
    if len(field.values) == 0:
        raise EmptyInputError("scattered field is empty")
    idx = nearest_indices(field.points, grid)
    return GridField(grid, field.values[idx])


def flatten(field: GridField) -> np.ndarray:
    return np.array(field.values, dtype=float)


def unflatten(grid: StandardGrid, vector) -> GridField:
    return GridField(grid, vector)


# --- file formats -----------------------------------------------------------

def read_scattered_csv(path, fidelity="HF") -> ScatteredField:
    """Read a ``x,y,value`` CSV file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().replace(" ", "")
        if header != "x,y,value":
            raise FileFormatError(f"{path}: expected header 'x,y,value', got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise EmptyInputError(f"{path}: no data rows")
    if data.shape[1] != 3:
        raise FileFormatError(f"{path}: expected 3 columns, got {data.shape[1]}")
    return ScatteredField(data[:, :2], data[:, 2], fidelity)


def write_scattered_csv(field: ScatteredField, path) -> None:
    data = np.column_stack([field.points, field.values])
    np.savetxt(path, data, delimiter=",", header="x,y,value", comments="", fmt="%.17g",
               encoding="utf-8")


def pack_grid_header(grid: StandardGrid, magic: bytes) -> bytes:
    head = magic + struct.pack("<II", _FORMAT_VERSION, 0)
    dims = struct.pack("<6d", grid.nx, grid.ny, *grid.bounds)
    return head + dims + np.packbits(grid.mask.ravel()).tobytes()


def unpack_grid_header(buf: bytes, magic: bytes) -> tuple[StandardGrid, int]:
    """Parse a grid header; return the grid and the offset of the payload."""
    if len(buf) < 64 or buf[:8] != magic:
        raise FileFormatError("bad magic number")
    version, _ = struct.unpack_from("<II", buf, 8)
    if version != _FORMAT_VERSION:
        raise FileFormatError(f"unsupported format version {version}")
    nx, ny, x0, x1, y0, y1 = struct.unpack_from("<6d", buf, 16)
    nx, ny = int(nx), int(ny)
    nbytes = (nx * ny + 7) // 8
    off = 64
    bits = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=off)
    mask = np.unpackbits(bits)[: nx * ny].astype(bool).reshape(ny, nx)
    return StandardGrid(nx, ny, x0, x1, y0, y1, mask), off + nbytes


def save_grid_field(field: GridField, path) -> None:
    payload = field.values.astype("<f8").tobytes()
    Path(path).write_bytes(pack_grid_header(field.grid, _GRID_MAGIC) + payload)


def load_grid_field(path) -> GridField:
    buf = Path(path).read_bytes()
    grid, off = unpack_grid_header(buf, _GRID_MAGIC)
    if len(buf) - off != 8 * grid.m_I:
        raise FileFormatError(f"{path}: payload size does not match grid")
    return GridField(grid, np.frombuffer(buf, dtype="<f8", offset=off))


def grid_to_dict(grid: StandardGrid, disc=None) -> dict:
    """JSON/TOML-friendly grid spec (mask is regenerated from ``disc``)."""
    d = {"nx": grid.nx, "ny": grid.ny, "domain": list(grid.bounds)}
    if disc is not None:
        d["disc"] = [float(v) for v in disc]
    return d


def grid_from_dict(spec: dict) -> StandardGrid:
    return build_grid(spec["nx"], spec["ny"], domain=spec.get("domain"), disc=spec.get("disc"))

"""Two-fidelity field data sets and their JSON manifest.

A manifest lists the design table, one field file per (design point,
fidelity), the cost model, the grid spec and the seeds used to produce the
data. Field files are either scattered ``x,y,value`` CSVs (before regridding)
or binary grid fields (after).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .doe import DesignSpace, read_doe_csv
from .errors import ConfigError, FileFormatError, GridMismatchError
from .evaluation import CostModel
from .field_grid import StandardGrid, grid_from_dict, load_grid_field

MANIFEST_FORMAT = "mfpod-dataset"


@dataclass
class FieldDataset:
    """Regridded snapshots at design points.

    ``lf_index``/``hf_index`` are the design rows that carry LF/HF data;
    ``lf_fields[i]`` belongs to design row ``lf_index[i]`` (likewise for HF).
    """

    X: np.ndarray
    grid: StandardGrid
    lf_index: np.ndarray
    lf_fields: np.ndarray
    hf_index: np.ndarray
    hf_fields: np.ndarray
    cost: CostModel = field(default_factory=CostModel)
    names: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.lf_index = np.asarray(self.lf_index, dtype=int)
        self.hf_index = np.asarray(self.hf_index, dtype=int)
        self.lf_fields = self._rows(self.lf_fields, len(self.lf_index))
        self.hf_fields = self._rows(self.hf_fields, len(self.hf_index))
        self._lf_pos = {int(i): p for p, i in enumerate(self.lf_index)}
        self._hf_pos = {int(i): p for p, i in enumerate(self.hf_index)}

    def _rows(self, fields, n):
        arr = np.asarray(fields, dtype=float)
        if arr.size == 0 and n == 0:
            return np.zeros((0, self.grid.m_I))
        arr = arr.reshape(n, -1)
        if arr.shape[1] != self.grid.m_I:
            raise GridMismatchError("field length does not match the grid")
        return arr

    def lf(self, rows) -> np.ndarray:
        return self.lf_fields[[self._lf_pos[int(r)] for r in rows]]

    def hf(self, rows) -> np.ndarray:
        return self.hf_fields[[self._hf_pos[int(r)] for r in rows]]


def write_manifest(path, *, design_table, space: DesignSpace, entries, cost: CostModel,
                   grid_spec: dict, seeds: dict, stage: str) -> None:
    """``entries``: list of dicts with ``index``, ``fidelity`` and ``path`` keys."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    man = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "stage": stage,
        "design_table": rel(design_table),
        "space": space.to_dict(),
        "cost_model": {"t_L": cost.t_L, "t_H": cost.t_H},
        "grid": grid_spec,
        "seeds": seeds,
        "fields": [{"index": int(e["index"]), "fidelity": e["fidelity"], "path": rel(e["path"])}
                   for e in entries],
    }
    path.write_text(json.dumps(man, indent=2, sort_keys=True))


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: cannot read manifest ({exc})") from None
    if man.get("format") != MANIFEST_FORMAT:
        raise FileFormatError(f"{path}: not a dataset manifest")
    base = path.parent
    man["design_table"] = str(base / man["design_table"])
    for e in man["fields"]:
        e["path"] = str(base / e["path"])
        if not Path(e["path"]).exists():
            raise FileFormatError(f"missing field file {e['path']}")
    return man


def load_dataset(path) -> FieldDataset:
    """Load a regridded data set from its manifest."""
    man = read_manifest(path)
    if man.get("stage") != "regridded":
        raise ConfigError(f"{path}: data set has not been regridded yet (run 'regrid')")
    space = DesignSpace.from_dict(man["space"])
    X, _ = read_doe_csv(man["design_table"], space)
    grid = grid_from_dict(man["grid"])
    lf, hf = [], []
    for e in sorted(man["fields"], key=lambda e: (e["fidelity"], e["index"])):
        gf = load_grid_field(e["path"])
        if gf.grid != grid:
            raise GridMismatchError(f"{e['path']} is on a different grid than the manifest")
        (lf if e["fidelity"] == "LF" else hf).append((e["index"], gf.values))
    cm = man["cost_model"]
    return FieldDataset(
        X=X, grid=grid,
        lf_index=np.array([i for i, _ in lf], dtype=int),
        lf_fields=np.array([v for _, v in lf]).reshape(len(lf), grid.m_I),
        hf_index=np.array([i for i, _ in hf], dtype=int),
        hf_fields=np.array([v for _, v in hf]).reshape(len(hf), grid.m_I),
        cost=CostModel(cm["t_L"], cm["t_H"]), names=space.names)

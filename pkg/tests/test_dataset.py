import json

import numpy as np
import pytest

from mfpod.dataset import FieldDataset, load_dataset, read_manifest, write_manifest
from mfpod.doe import ESC_SPACE, lhs, write_doe_csv
from mfpod.errors import ConfigError, FileFormatError, GridMismatchError
from mfpod.evaluation import CostModel
from mfpod.field_grid import GridField, build_grid, save_grid_field


def make(tmp_path, stage="regridded"):
    grid = build_grid(6, 6, disc=(0.0, 0.0, 1.0))
    X = lhs(ESC_SPACE, 4, seed=0)
    write_doe_csv(X, ESC_SPACE, tmp_path / "doe.csv")
    entries = []
    rng = np.random.default_rng(0)
    for i in range(4):
        for fid in (("LF", "HF") if i < 2 else ("LF",)):
            p = tmp_path / f"{fid}_{i}.gf"
            save_grid_field(GridField(grid, rng.normal(size=grid.m_I)), p)
            entries.append({"index": i, "fidelity": fid, "path": p})
    write_manifest(tmp_path / "m.json", design_table=tmp_path / "doe.csv", space=ESC_SPACE,
                   entries=entries, cost=CostModel(2.0, 10.0),
                   grid_spec={"nx": 6, "ny": 6, "domain": [-1, 1, -1, 1], "disc": [0, 0, 1]},
                   seeds={"doe": 0}, stage=stage)
    return X, grid


def test_manifest_round_trip(tmp_path):
    X, grid = make(tmp_path)
    ds = load_dataset(tmp_path / "m.json")
    assert np.array_equal(ds.X, X) and ds.grid == grid
    assert ds.lf_index.tolist() == [0, 1, 2, 3] and ds.hf_index.tolist() == [0, 1]
    assert ds.cost == CostModel(2.0, 10.0) and ds.names == ESC_SPACE.names
    man = json.loads((tmp_path / "m.json").read_text())
    assert man["fields"][0]["path"] == "LF_0.gf"  # stored relative to the manifest


def test_manifest_errors(tmp_path):
    make(tmp_path, stage="scattered")
    with pytest.raises(ConfigError):
        load_dataset(tmp_path / "m.json")
    (tmp_path / "HF_1.gf").unlink()
    with pytest.raises(FileFormatError):
        read_manifest(tmp_path / "m.json")
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(FileFormatError):
        read_manifest(tmp_path / "x.json")


def test_field_length_checked():
    grid = build_grid(4, 4, domain=(0, 1, 0, 1))
    with pytest.raises(GridMismatchError):
        FieldDataset(np.zeros((1, 7)), grid, [0], np.zeros((1, 3)), [], np.zeros((0, 16)))

"""Declarative run configuration (TOML) shared by the CLI subcommands.

Values come from built-in defaults, then the config file, then command-line
flags. ``dump_config`` writes the effective configuration back out so a run
can be reproduced from the archived file alone.
"""

from __future__ import annotations

import copy
from pathlib import Path

import tomli
import tomli_w

from .doe import ESC_SPACE, DesignSpace
from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "space": ESC_SPACE.to_dict(),
    "grid": {"nx": 100, "ny": 100, "radius": 150.0},
    "bench": {"n_hf_nodes": 90_000, "n_lf_nodes": 250_000, "alpha0": 1.4,
              "bias_amplitude": 0.8},
    "cost": {"t_L": 44.27, "t_H": 919.4},
    "kriging": {"kernel": "squared_exponential", "theta_bounds": [-2.0, 2.0],
                "nugget": 1e-10, "n_restarts": 2, "shared_theta": True},
    "pod": {"k": 20, "center": False},
    "study": {"n_doe": 900, "n_hf": 130, "n_val": 30, "n_repeats": 3, "n_lf_mf": 100,
              "methods": ["LF", "HF", "MF"],
              "lf_sizes": [20, 80, 200, 400, 800], "hf_sizes": [20, 40, 60, 80, 100],
              "mf_sizes": [20, 40, 60, 80, 100]},
    "optimize": {"mean": 17.0, "max": 21.5, "cr_sum": 10.0, "softmax_sharpness": 50.0,
                 "n_starts": 8, "opt_repeats": 3, "methods": ["LF", "HF", "MF"],
                 "lf_size": 400, "hf_size": 80, "mf_hf_size": 60, "mf_lf_size": 100},
    "paths": {},
}

# (section, key) -> (lower, upper) inclusive ranges for numeric fields
_RANGES = {
    ("grid", "nx"): (1, 10_000), ("grid", "ny"): (1, 10_000),
    ("grid", "radius"): (1e-12, float("inf")),
    ("bench", "n_hf_nodes"): (1, 10**8), ("bench", "n_lf_nodes"): (1, 10**8),
    ("bench", "alpha0"): (1e-12, float("inf")),
    ("cost", "t_L"): (1e-12, float("inf")), ("cost", "t_H"): (1e-12, float("inf")),
    ("kriging", "nugget"): (0.0, 1.0), ("kriging", "n_restarts"): (1, 1000),
    ("pod", "k"): (1, 10**6),
    ("study", "n_doe"): (1, 10**7), ("study", "n_hf"): (0, 10**7),
    ("study", "n_val"): (1, 10**6), ("study", "n_repeats"): (1, 1000),
    ("study", "n_lf_mf"): (0, 10**7),
    ("optimize", "mean"): (1e-12, float("inf")), ("optimize", "max"): (1e-12, float("inf")),
    ("optimize", "softmax_sharpness"): (1e-12, float("inf")),
    ("optimize", "n_starts"): (1, 10_000), ("optimize", "opt_repeats"): (0, 1000),
}


def _merge(base, over, where=""):
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key not in ("space", "paths"):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where}{key!r} must be a table")
            _merge(base[key], val, f"{where}{key}.")
        else:
            base[key] = val
    return base


def validate_config(cfg: dict) -> dict:
    for (sec, key), (lo, hi) in _RANGES.items():
        v = cfg[sec][key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not lo <= v <= hi:
            raise ConfigError(f"{sec}.{key} = {v!r} outside [{lo}, {hi}]")
    tb = cfg["kriging"]["theta_bounds"]
    if len(tb) != 2 or not tb[0] < tb[1]:
        raise ConfigError("kriging.theta_bounds must be [lower, upper] with lower < upper")
    DesignSpace.from_dict(cfg["space"])
    for name, p in cfg["paths"].items():
        if not Path(p).exists():
            raise ConfigError(f"paths.{name}: {p} does not exist")
    return cfg


def load_config(path=None, overrides=None) -> dict:
    """Defaults, updated by the TOML file at ``path`` and then ``overrides``
    (a nested dict of the same shape)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = Path(path).parent
        if "paths" in data:
            data["paths"] = {k: str(base / v) for k, v in data["paths"].items()}
        _merge(cfg, data)
    if overrides:
        _merge(cfg, overrides)
    return validate_config(cfg)


def dump_config(cfg: dict, path=None) -> str:
    text = tomli_w.dumps(cfg)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_space(path=None) -> DesignSpace:
    """Design space from a TOML file with ``[[variable]]`` tables (or from the
    ``space`` table of a run config); ESC space when ``path`` is None."""
    if path is None:
        return ESC_SPACE
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read design space {path}: {exc}") from None
    return DesignSpace.from_dict(data.get("space", data))


def problem_config(cfg: dict):
    from .synthetic_bench import DiscProblemConfig

    g, b, c = cfg["grid"], cfg["bench"], cfg["cost"]
    if g["nx"] != g["ny"]:
        raise ConfigError("the disc benchmark needs a square grid (nx == ny)")
    return DiscProblemConfig(radius=float(g["radius"]), grid_n=int(g["nx"]),
                             n_hf_nodes=int(b["n_hf_nodes"]), n_lf_nodes=int(b["n_lf_nodes"]),
                             seed=int(cfg["seed"]), alpha0=float(b["alpha0"]),
                             bias_amplitude=float(b["bias_amplitude"]),
                             t_L=float(c["t_L"]), t_H=float(c["t_H"]))


def kriging_config(cfg: dict):
    from .kriging import KrigingConfig

    k = cfg["kriging"]
    return KrigingConfig(kernel=k["kernel"], theta_bounds=tuple(k["theta_bounds"]),
                         nugget=float(k["nugget"]), n_restarts=int(k["n_restarts"]),
                         seed=int(cfg["seed"]))


def study_spec(cfg: dict):
    from .synthetic_bench import StudySpec

    s, o, k = cfg["study"], cfg["optimize"], cfg["kriging"]
    return StudySpec(
        n_doe=s["n_doe"], n_hf=s["n_hf"], n_val=s["n_val"], k=cfg["pod"]["k"],
        lf_sizes=tuple(s["lf_sizes"]), hf_sizes=tuple(s["hf_sizes"]),
        mf_sizes=tuple(s["mf_sizes"]), n_lf_mf=s["n_lf_mf"], n_repeats=s["n_repeats"],
        seed=cfg["seed"], kernel=k["kernel"], theta_bounds=tuple(k["theta_bounds"]),
        nugget=k["nugget"], n_restarts=k["n_restarts"], shared_theta=k["shared_theta"],
        methods=tuple(s["methods"]), opt_methods=tuple(o["methods"]),
        opt_repeats=o["opt_repeats"],
        opt_sizes={"LF": o["lf_size"], "HF": o["hf_size"], "MF": [o["mf_hf_size"], o["mf_lf_size"]]},
        n_starts=o["n_starts"], thresholds=thresholds(cfg))


def thresholds(cfg: dict) -> dict:
    o = cfg["optimize"]
    return {key: float(o[key]) for key in ("mean", "max", "cr_sum", "softmax_sharpness")}

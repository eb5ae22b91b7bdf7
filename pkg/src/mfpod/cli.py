"""Command-line pipeline: doe, simulate, regrid, pod, train, validate, study,
optimize, report (and benchmark, which chains everything on the synthetic
disc problem).

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure. Errors are reported as one ``mfpod: error: <kind>: <message>`` line
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, DataError, NumericalError, SizeError

log = logging.getLogger("mfpod")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config(args, overrides=None):
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    for key, val in (overrides or {}).items():
        if val is not None:
            over.setdefault(key[0], {})[key[1]] = val
    return cfgmod.load_config(getattr(args, "config", None), over)


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


# --- subcommands ------------------------------------------------------------

def cmd_doe(args):
    from .doe import lhs, write_doe_csv

    space = cfgmod.load_space(args.space)
    cfg = _config(args)
    X = lhs(space, args.n, cfg["seed"])
    write_doe_csv(X, space, args.out)
    log.info("wrote %d design points to %s", len(X), args.out)


def cmd_simulate(args):
    from .dataset import write_manifest
    from .doe import ESC_SPACE, read_doe_csv
    from .field_grid import write_scattered_csv
    from .synthetic_bench import hf_field, lf_field

    cfg = _config(args)
    pc = cfgmod.problem_config(cfg)
    X, names = read_doe_csv(args.doe, ESC_SPACE)
    n_hf = args.n_hf if args.n_hf is not None else min(cfg["study"]["n_hf"], len(X))
    if n_hf > len(X):
        raise SizeError(f"--n-hf {n_hf} exceeds the {len(X)} design points")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, x in enumerate(X):
        for fid, fun in (("LF", lf_field), ("HF", hf_field)):
            if fid == "HF" and i >= n_hf:
                continue
            p = out / f"{fid.lower()}_{i:05d}.csv"
            write_scattered_csv(fun(x, pc), p)
            entries.append({"index": i, "fidelity": fid, "path": p})
    write_manifest(out / "manifest.json", design_table=args.doe, space=ESC_SPACE, entries=entries,
                   cost=pc.cost, grid_spec=pc.grid_spec(), seeds={"mesh": pc.seed},
                   stage="scattered")


def cmd_regrid(args):
    from .dataset import read_manifest, write_manifest
    from .doe import DesignSpace
    from .evaluation import CostModel
    from .field_grid import grid_from_dict, interpolate_nearest, read_scattered_csv, save_grid_field

    man = read_manifest(args.data)
    grid_spec = man["grid"]
    if args.nx is not None:
        grid_spec = dict(grid_spec, nx=args.nx, ny=args.ny or args.nx)
    if args.no_mask:
        grid_spec = {key: v for key, v in grid_spec.items() if key != "disc"}
    grid = grid_from_dict(grid_spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in man["fields"]:
        sf = read_scattered_csv(e["path"], e["fidelity"])
        p = out / f"{e['fidelity'].lower()}_{e['index']:05d}.gf"
        save_grid_field(interpolate_nearest(sf, grid), p)
        entries.append({"index": e["index"], "fidelity": e["fidelity"], "path": p})
    cm = man["cost_model"]
    write_manifest(out / "manifest.json", design_table=man["design_table"],
                   space=DesignSpace.from_dict(man["space"]), entries=entries,
                   cost=CostModel(cm["t_L"], cm["t_H"]), grid_spec=grid_spec,
                   seeds=man.get("seeds", {}), stage="regridded")


def cmd_pod(args):
    from .dataset import load_dataset
    from .pod import PODBasis, compute_pod, reconstruction_error_curve, save_basis

    cfg = _config(args, {("pod", "k"): args.k})
    ds = load_dataset(args.data)
    Y = {"LF": ds.lf_fields, "HF": ds.hf_fields,
         "ALL": np.vstack([ds.lf_fields, ds.hf_fields])}[args.fidelity]
    if len(Y) == 0:
        raise SizeError(f"no {args.fidelity} snapshots in {args.data}")
    k = min(cfg["pod"]["k"], *Y.shape)
    b = compute_pod(Y, k, center=cfg["pod"]["center"])
    save_basis(PODBasis(b.modes, b.singular_values, b.mean, ds.grid), args.out)
    if args.curve:
        ks = sorted({min(i, min(Y.shape)) for i in (1, 2, 3, 5, 10, 20, 30, 40, 60, 80)})
        with open(args.curve, "w", encoding="utf-8") as fh:
            fh.write("k,rmse\n")
            for kk, e in reconstruction_error_curve(Y, ks, center=cfg["pod"]["center"]):
                fh.write(f"{kk},{e!r}\n")


def _training_rows(ds, method, n_lf, n_hf, holdout, seed):
    from .evaluation import draw_training, validation_split

    val = validation_split(ds.hf_index, holdout, seed) if holdout else np.array([], dtype=int)
    lf_pool = np.setdiff1d(ds.lf_index, val)
    hf_pool = np.setdiff1d(ds.hf_index, val)
    if method == "MF":
        hf_pool = np.intersect1d(hf_pool, lf_pool)
    size = n_lf if method == "LF" else n_hf
    extra = n_lf if method == "MF" else 0
    need_lf = size if method == "LF" else (size + extra if method == "MF" else 0)
    if (method != "LF" and size > len(hf_pool)) or need_lf > len(lf_pool):
        raise SizeError(f"{method} needs {need_lf} LF / {0 if method == 'LF' else size} HF "
                        f"training points; pools hold {len(lf_pool)} / {len(hf_pool)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    return draw_training(method, (lf_pool, hf_pool), size, extra, rng)


def cmd_train(args):
    from .dataset import load_dataset
    from .surrogate import fit_field_surrogate, save_surrogate

    cfg = _config(args, {("pod", "k"): args.k})
    ds = load_dataset(args.data)
    lf_rows, hf_rows = _training_rows(ds, args.method, args.n_lf, args.n_hf, args.holdout,
                                      cfg["seed"])
    space = cfgmod.DesignSpace.from_dict(cfg["space"])
    sur = fit_field_surrogate(
        args.method,
        X_lf=ds.X[lf_rows] if len(lf_rows) else None,
        Y_lf=ds.lf(lf_rows) if len(lf_rows) else None,
        X_hf=ds.X[hf_rows] if len(hf_rows) else None,
        Y_hf=ds.hf(hf_rows) if len(hf_rows) else None,
        grid=ds.grid, k=cfg["pod"]["k"], center=cfg["pod"]["center"],
        config=cfgmod.kriging_config(cfg), shared_theta=cfg["kriging"]["shared_theta"],
        bounds=space.bounds)
    save_surrogate(sur, args.out)


def cmd_validate(args):
    from .dataset import load_dataset
    from .evaluation import qoi_arrays, relative_errors, rmse, validation_split
    from .surrogate import load_surrogate

    cfg = _config(args)
    ds = load_dataset(args.data)
    sur = load_surrogate(args.model)
    if sur.grid != ds.grid:
        raise DataError("model and data set use different grids")
    n = args.holdout if args.holdout is not None else cfg["study"]["n_val"]
    val = validation_split(ds.hf_index, n, cfg["seed"])
    pred, truth = sur.predict_fields(ds.X[val]), ds.hf(val)
    qp, qt = qoi_arrays(pred), qoi_arrays(truth)
    _write_json({"method": sur.method, "n_validation": int(len(val)),
                 "validation_index": val.tolist(), "rmse": rmse(pred, truth),
                 "relative_errors": relative_errors(pred, truth),
                 "qoi_predicted": {k: v.tolist() for k, v in qp.items()},
                 "qoi_true": {k: v.tolist() for k, v in qt.items()}}, args.out)


def cmd_study(args):
    from .evaluation import convergence_study, write_study_csv
    from .synthetic_bench import pod_error_study, run_benchmark

    cfg = _config(args)
    spec = cfgmod.study_spec(cfg)
    if args.methods:
        spec.methods = tuple(args.methods)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        from .dataset import load_dataset

        ds = load_dataset(args.data)
        for m in spec.methods:
            sizes = {"LF": spec.lf_sizes, "HF": spec.hf_sizes, "MF": spec.mf_sizes}[m]
            rows = convergence_study(ds, m, sizes, spec.n_repeats, spec.seed, n_val=spec.n_val,
                                     n_lf_mf=spec.n_lf_mf, k=spec.k,
                                     config=spec.kriging_config(),
                                     shared_theta=spec.shared_theta,
                                     bounds=cfgmod.DesignSpace.from_dict(cfg["space"]).bounds)
            write_study_csv(rows, out / f"study_{m}.csv")
        with open(out / "pod_error.csv", "w", encoding="utf-8") as fh:
            fh.write("k,rmse\n")
            for k, e in pod_error_study(ds, spec.pod_ks):
                fh.write(f"{k},{e!r}\n")
    else:
        if not args.optimize:
            spec.opt_repeats = 0
        run_benchmark(cfgmod.problem_config(cfg), spec, out)
    cfgmod.dump_config(cfg, out / "config.toml")


def cmd_benchmark(args):
    args.data, args.optimize = None, True
    cmd_study(args)
    cmd_report(argparse.Namespace(study_dir=args.out_dir, out=None, dump_config=None,
                                  config=args.config, seed=args.seed))


def cmd_optimize(args):
    from .optimizer import build_esc_problem, multistart, write_trace_csv
    from .surrogate import load_surrogate
    from .synthetic_bench import reference_design

    cfg = _config(args, {("optimize", "n_starts"): args.starts})
    space = cfgmod.DesignSpace.from_dict(cfg["space"])
    sur = load_surrogate(args.surrogate)
    x_ref = reference_design(space)
    problem = build_esc_problem(sur, space, cfgmod.thresholds(cfg), x_ref=x_ref,
                                fd_step=1e-6 if args.fd_gradients else None)
    res = multistart(problem, cfg["optimize"]["n_starts"], cfg["seed"], x0=x_ref)
    out = res.to_dict(space.names)
    out["constraint_names"] = [c.name for c in problem.constraints]
    out["predicted_qois"] = {k: float(v) for k, v in problem.info["qois"](res.x_star).items()}
    out["reference"] = {"x": x_ref.tolist(),
                        "predicted_qois": {k: float(v) for k, v in
                                           problem.info["qois"](x_ref).items()}}
    if args.truth:
        from .synthetic_bench import DiscSimulator, validate_design

        sim = DiscSimulator(cfgmod.problem_config(cfg))
        th = cfgmod.thresholds(cfg)
        out["truth"] = validate_design(res.x_star, sim, th)
        out["reference"]["truth"] = validate_design(x_ref, sim, th)
        out["improvement"] = 1.0 - out["truth"]["sigma3"] / out["reference"]["truth"]["sigma3"]
    _write_json(out, args.out)
    if args.trace:
        write_trace_csv(res, space.names, args.trace)


REPORT_COLUMNS = ("method", "n_lf", "n_hf", "avg_data_generation_cost", "avg_rmse",
                  "avg_improvement", "n_feasible", "n_runs")


def cmd_report(args):
    from .evaluation import read_study_csv

    if args.dump_config:
        cfg = _config(args)
        if args.study_dir and (Path(args.study_dir) / "config.toml").exists() and not args.config:
            cfg = cfgmod.load_config(Path(args.study_dir) / "config.toml")
        cfgmod.dump_config(cfg, None if args.dump_config == "-" else args.dump_config)
        if args.dump_config == "-":
            print(cfgmod.dump_config(cfg), end="")
        if not args.study_dir:
            return
    if not args.study_dir:
        raise UsageError("report needs --study-dir (or --dump-config)")
    d = Path(args.study_dir)
    studies = {}
    for m in ("LF", "HF", "MF"):
        p = d / f"study_{m}.csv"
        if p.exists():
            studies[m] = read_study_csv(p)
    if not studies:
        raise DataError(f"{d}: no study_*.csv files")
    opt = None
    if (d / "optimization.json").exists():
        opt = json.loads((d / "optimization.json").read_text())
    rows = []
    for m, srows in studies.items():
        for r in srows:
            rows.append([m, r.n_lf, r.n_hf, round(r.cost), repr(r.avg_rmse), "", "", ""])
    if opt:
        for m in ("LF", "HF", "MF"):
            runs = [r for r in opt["runs"] if r["method"] == m]
            if runs:
                rows.append([f"{m}-opt", runs[0]["n_lf"], runs[0]["n_hf"],
                             round(float(np.mean([r["cost"] for r in runs]))), "",
                             repr(float(np.mean([r["improvement"] for r in runs]))),
                             sum(r["truth"]["violated"] == 0 for r in runs), len(runs)])
    out = Path(args.out) if args.out else d / "report.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    widths = [max(len(str(x)) for x in col) for col in zip(REPORT_COLUMNS, *rows)]
    for row in [REPORT_COLUMNS, *rows]:
        print("  ".join(str(x).ljust(wd) for x, wd in zip(row, widths)).rstrip())


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfpod", description="Multi-fidelity POD surrogate pipeline.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.set_defaults(func=fn)
        return sp

    sp = add("doe", cmd_doe, "Latin hypercube design table")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--space", help="TOML file with [[variable]] tables (default: ESC space)")
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, "evaluate the synthetic LF/HF generators on a DoE")
    sp.add_argument("--doe", required=True)
    sp.add_argument("--n-hf", type=int, help="HF evaluations at the first N design points")
    sp.add_argument("--out-dir", required=True)

    sp = add("regrid", cmd_regrid, "nearest-neighbour regrid scattered fields")
    sp.add_argument("--data", required=True, help="scattered-stage manifest")
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--no-mask", action="store_true", help="keep every grid cell (no disc mask)")
    sp.add_argument("--out-dir", required=True)

    sp = add("pod", cmd_pod, "POD basis of regridded snapshots")
    sp.add_argument("--data", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--fidelity", choices=("LF", "HF", "ALL"), default="HF")
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve", help="write the reconstruction-error curve CSV here")

    sp = add("train", cmd_train, "fit an LF, HF or MF field surrogate")
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", choices=("LF", "HF", "MF"), required=True)
    sp.add_argument("--n-hf", type=int, default=60)
    sp.add_argument("--n-lf", type=int, default=100,
                    help="LF training points (MF: LF points beyond the nested HF ones)")
    sp.add_argument("--holdout", type=int, default=0,
                    help="exclude this many seeded validation points from training")
    sp.add_argument("--k", type=int)
    sp.add_argument("--out", required=True)

    sp = add("validate", cmd_validate, "hold-out RMSE and QoI errors of a surrogate")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--holdout", type=int)
    sp.add_argument("--out", help="JSON output (default: stdout)")

    sp = add("study", cmd_study, "convergence studies (synthetic benchmark or --data)")
    sp.add_argument("--data", help="regridded manifest (default: generate the synthetic data)")
    sp.add_argument("--methods", nargs="+", choices=("LF", "HF", "MF"))
    sp.add_argument("--optimize", action="store_true",
                    help="also run the ESC optimization study (synthetic data only)")
    sp.add_argument("--out-dir", required=True)

    sp = add("benchmark", cmd_benchmark, "full synthetic benchmark with optimization and report")
    sp.add_argument("--methods", nargs="+", choices=("LF", "HF", "MF"))
    sp.add_argument("--out-dir", required=True)

    sp = add("optimize", cmd_optimize, "constrained ESC optimization on a surrogate")
    sp.add_argument("--surrogate", required=True)
    sp.add_argument("--starts", type=int)
    sp.add_argument("--fd-gradients", action="store_true",
                    help="central finite differences instead of analytic gradients")
    sp.add_argument("--truth", action="store_true",
                    help="validate the optimum against the synthetic ground truth")
    sp.add_argument("--out", help="JSON result (default: stdout)")
    sp.add_argument("--trace", help="CSV iterate trace of the winning start")

    sp = add("report", cmd_report, "summary table of a study directory")
    sp.add_argument("--study-dir")
    sp.add_argument("--out", help="report CSV (default: <study-dir>/report.csv)")
    sp.add_argument("--dump-config", help="write the effective config TOML here ('-' = stdout)")
    return p


def _fail(code, kind, msg):
    msg = " ".join(str(msg).split())
    print(f"mfpod: error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, type(exc).__name__, exc)
    except np.linalg.LinAlgError as exc:
        return _fail(EXIT_NUMERICAL, type(exc).__name__, exc)
    except (DataError, ConfigError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__, exc)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

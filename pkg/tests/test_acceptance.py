"""Acceptance criteria 1-9, each reported as one pass/fail line.

The synthetic benchmark (criteria 5-8) runs once per module at the desk
scale: a 900-point LHS with LF fields everywhere and HF fields on the first
130 points, 30 of which are held out for validation.
"""

import time

import numpy as np
import pytest
from scipy import linalg

from mfpod.cli import main
from mfpod.evaluation import equivalent_cost, matched_cost_reduction
from mfpod.kriging import KrigingRegressor
from mfpod.mf_kriging import MultiFidelityKriging
from mfpod.optimizer import Constraint, OptimizationProblem, kkt_residual, minimize_constrained
from mfpod.doe import DesignSpace
from mfpod.pod import compute_pod, reconstruction_error_curve
from mfpod.synthetic_bench import DiscProblemConfig, StudySpec, run_benchmark


@pytest.fixture(scope="module")
def benchmark():
    t0 = time.perf_counter()
    bundle = run_benchmark(DiscProblemConfig(), StudySpec())
    bundle["elapsed"] = time.perf_counter() - t0
    return bundle


def test_criterion_1_pod(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, monotone = 0.0, True
    for _ in range(50):
        N, m = rng.integers(1, 9, size=2)
        A = rng.normal(size=(N, m)) * rng.uniform(0.1, 10)
        # oracle: LAPACK gesvd (the library path uses gesdd)
        s = linalg.svd(A, compute_uv=False, lapack_driver="gesvd")
        ks = list(range(1, min(N, m) + 1))
        curve = reconstruction_error_curve(A, ks)
        errs = [e for _, e in curve]
        monotone &= all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        for k, e in curve:
            worst = max(worst, abs(e * np.sqrt(N * m) - np.sqrt(np.sum(s[k:] ** 2))))
        worst = max(worst, np.max(np.abs(compute_pod(A, 1).singular_values - s)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and monotone and dt < 5
    acceptance(1, ok, f"max error {worst:.1e}, monotone {monotone}, {dt:.2f} s")
    assert ok


def _random_model(rng):
    n = int(rng.integers(1, 8))
    N = int(rng.integers(6, 40))
    lo = rng.uniform(-5, 5, size=n)
    hi = lo + rng.uniform(0.5, 20, size=n)
    X = lo + rng.uniform(size=(N, n)) * (hi - lo)
    freq = rng.uniform(0.5, 3, size=n) / (hi - lo)
    y = np.sin(2 * np.pi * (X * freq).sum(axis=1) + rng.uniform(0, 6)) + 0.3 * ((X - lo) / (hi - lo)).sum(axis=1)
    y = y * rng.uniform(0.1, 100) + rng.uniform(-50, 50)
    m = KrigingRegressor(kernel=rng.choice(["squared_exponential", "matern52"]),
                         trend=rng.choice(["constant", "linear"]), n_restarts=2,
                         random_state=int(rng.integers(1000))).fit(X, y)
    return m, X, y, lo, hi


def test_criterion_2_kriging(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    interp_worst, strict_worst, excess_worst, pairs = 0.0, 0.0, 0.0, 0
    while pairs < 100:
        m, X, y, lo, hi = _random_model(rng)
        interp_worst = max(interp_worst, np.max(np.abs(m.predict(X) - y)))
        for _ in range(5):
            x = lo + rng.uniform(size=len(lo)) * (hi - lo)
            g = m.predict_gradient(x)[0]
            fd, noise = np.empty_like(g), np.empty_like(g)
            for d in range(len(x)):
                h = 1e-6 * m.span_[d]  # 1e-6 in normalized coordinates
                e = np.zeros(len(x))
                e[d] = h
                fp, fm = m.predict(x + e)[0], m.predict(x - e)[0]
                fd[d] = (fp - fm) / (2 * h)
                # rounding error of the difference quotient itself
                noise[d] = 4 * np.finfo(float).eps * max(abs(fp), abs(fm)) / (2 * h)
            scale = np.linalg.norm(fd)
            strict_worst = max(strict_worst, np.linalg.norm(g - fd) / scale)
            excess = np.linalg.norm(np.maximum(np.abs(g - fd) - noise, 0.0)) / scale
            excess_worst = max(excess_worst, excess)
            pairs += 1
    dt = time.perf_counter() - t0
    ok = interp_worst <= 1e-6 and excess_worst <= 1e-4 and dt < 30
    acceptance(2, ok, f"interpolation {interp_worst:.1e}, gradient rel {excess_worst:.1e} beyond "
                      f"FD rounding (raw {strict_worst:.1e}) over {pairs} pairs, {dt:.1f} s")
    assert ok


def test_criterion_3_rho(acceptance):
    t0 = time.perf_counter()
    worst_rho, worst_collapse = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        X_L = rng.uniform(size=(30, n))
        idx = rng.choice(30, 12, replace=False)
        Z_L = np.column_stack([np.sin(3 * X_L @ rng.normal(size=n)), (X_L ** 2) @ rng.normal(size=n)])
        c = rng.uniform(-3, 3)
        eps = rng.uniform(-1e-8, 1e-8, size=(12, 2))
        m = MultiFidelityKriging(n_restarts=1, random_state=seed).fit(X_L, Z_L, X_L[idx],
                                                                     c * Z_L[idx] + eps)
        worst_rho = max(worst_rho, np.max(np.abs(m.rho_ - c)))
        m1 = MultiFidelityKriging(n_restarts=1, random_state=seed).fit(X_L, Z_L, X_L[idx], Z_L[idx])
        Xt = rng.uniform(size=(20, n))
        worst_collapse = max(worst_collapse, np.max(np.abs(m1.predict(Xt) - m1.predict_lf(Xt))))
    dt = time.perf_counter() - t0
    ok = worst_rho <= 1e-4 and worst_collapse <= 1e-6 and dt < 60
    acceptance(3, ok, f"rho error {worst_rho:.1e}, collapse {worst_collapse:.1e}, {dt:.1f} s")
    assert ok


def test_criterion_4_cost(acceptance):
    a, b = equivalent_cost(0, 80), equivalent_cost(100, 60)
    ok = round(a) == 1661 and round(b) == 1346
    acceptance(4, ok, f"80 HF -> {a:.2f}, 100 LF + 60 HF -> {b:.2f}")
    assert ok


def _toy_results():
    line = DesignSpace(("x",), (-3.0,), (3.0,))
    p1 = OptimizationProblem(lambda x: x[0] ** 2, lambda x: 2 * x,
                             [Constraint(lambda x: 1 - x[0], lambda x: np.array([-1.0]))], line)
    box = DesignSpace(("x", "y"), (0.0, 0.0), (3.0, 3.0))
    p2 = OptimizationProblem(lambda z: (z[0] - 2) ** 2 + (z[1] - 1) ** 2,
                             lambda z: np.array([2 * (z[0] - 2), 2 * (z[1] - 1)]),
                             [Constraint(lambda z: z[0] + z[1] - 2, lambda z: np.array([1.0, 1.0]))],
                             box)
    r1 = minimize_constrained(p1, np.array([2.5]))
    r2 = minimize_constrained(p2, np.array([0.5, 0.5]))
    e1 = max(abs(r1.x_star[0] - 1), abs(r1.f_star - 1))
    e2 = max(np.max(np.abs(r2.x_star - [1.5, 0.5])), abs(r2.f_star - 0.5))
    k = max(kkt_residual(p1, r1.x_star)[0], kkt_residual(p2, r2.x_star)[0])
    return r1.converged and r2.converged, max(e1, e2), k


def test_criterion_5_optimizer(acceptance, benchmark):
    t0 = time.perf_counter()
    conv, err, kkt_toy = _toy_results()
    dt = time.perf_counter() - t0
    runs = benchmark["optimization"]["runs"]
    converged = [r for r in runs if r["result"]["converged"]]
    kkt_bench = max((r["result"]["kkt_residual"] for r in converged), default=0.0)
    ok = conv and err <= 1e-6 and kkt_toy <= 1e-5 and kkt_bench <= 1e-5 and dt < 10
    acceptance(5, ok, f"toy error {err:.1e}, toy KKT {kkt_toy:.1e}, benchmark KKT max "
                      f"{kkt_bench:.1e} over {len(converged)}/{len(runs)} converged runs, {dt:.2f} s")
    assert ok


def test_criterion_6_mf_gain(acceptance, benchmark):
    red = matched_cost_reduction(benchmark["study"]["MF"], benchmark["study"]["HF"])
    mean = float(np.nanmean(red))
    ok = mean >= 0.10
    acceptance(6, ok, f"mean matched-cost RMSE reduction {100 * mean:.1f} % over "
                      f"{int(np.isfinite(red).sum())} MF sizes, benchmark {benchmark['elapsed']:.0f} s")
    assert ok


def test_criterion_7_convergence(acceptance, benchmark):
    hf = [r.avg_rmse for r in benchmark["study"]["HF"]]
    lf800 = next(r.avg_rmse for r in benchmark["study"]["LF"] if r.n_lf == 800)
    mf60 = next(r.avg_rmse for r in benchmark["study"]["MF"] if r.n_hf == 60 and r.n_lf == 160)
    decreasing = all(b < a for a, b in zip(hf, hf[1:]))
    ok = decreasing and lf800 > mf60
    acceptance(7, ok, f"HF RMSE {[round(v, 4) for v in hf]}, LF@800 {lf800:.4f} vs "
                      f"MF@60+100 {mf60:.4f}")
    assert ok


def test_criterion_8_optimization(acceptance, benchmark):
    runs = [r for r in benchmark["optimization"]["runs"] if r["method"] == "MF"]
    feasible = sum(r["truth"]["violated"] == 0 for r in runs)
    imp = float(np.mean([r["improvement"] for r in runs]))
    ok = len(runs) == 3 and feasible >= 2 and imp >= 0.20
    acceptance(8, ok, f"{feasible}/{len(runs)} MF optima feasible on ground truth, "
                      f"average 3-sigma improvement {100 * imp:.1f} %")
    assert ok


STUDY_TOML = """\
seed = 11
[grid]
nx = 40
ny = 40
[bench]
n_hf_nodes = 8000
n_lf_nodes = 20000
[pod]
k = 8
[study]
n_doe = 120
n_hf = 40
n_val = 8
n_repeats = 2
n_lf_mf = 30
lf_sizes = [20, 60, 100]
hf_sizes = [10, 20, 30]
mf_sizes = [10, 20, 30]
[optimize]
n_starts = 3
opt_repeats = 2
lf_size = 60
hf_size = 30
mf_hf_size = 20
mf_lf_size = 30
"""


def test_criterion_9_determinism(acceptance, tmp_path):
    (tmp_path / "run.toml").write_text(STUDY_TOML)
    codes = [main(["study", "--config", str(tmp_path / "run.toml"), "--optimize",
                   "--out-dir", str(tmp_path / d)]) for d in ("a", "b")]
    a = sorted(p.name for p in (tmp_path / "a").iterdir())
    b = sorted(p.name for p in (tmp_path / "b").iterdir())
    same = a == b and all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                          for f in a)
    ok = codes == [0, 0] and same and len(a) > 0
    acceptance(9, ok, f"{len(a)} files compared, bit-identical {same}")
    assert ok

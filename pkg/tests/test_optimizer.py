import numpy as np
import pytest

from mfpod.doe import ESC_SPACE, DesignSpace
from mfpod.errors import ConfigError, InfeasibleStartError, InvalidStartError
from mfpod.optimizer import (
    Constraint,
    OptimizationProblem,
    build_esc_problem,
    esc_linear_constraints,
    kkt_residual,
    minimize_constrained,
    multistart,
    project_to_linear_feasible,
    write_trace_csv,
)


def quadratic_problem(scale=1.0, rhs=2.0):
    """min scale*((x-2)^2 + (y-1)^2) s.t. x + y <= rhs on [0, 3]^2."""
    space = DesignSpace(("x", "y"), (0.0, 0.0), (3.0, 3.0))
    return OptimizationProblem(
        lambda z: scale * ((z[0] - 2) ** 2 + (z[1] - 1) ** 2),
        lambda z: scale * np.array([2 * (z[0] - 2), 2 * (z[1] - 1)]),
        [Constraint(lambda z: z[0] + z[1] - rhs, lambda z: np.array([1.0, 1.0]), "sum", True)],
        space)


def test_active_lower_constraint():
    space = DesignSpace(("x",), (-3.0,), (3.0,))
    p = OptimizationProblem(lambda x: x[0] ** 2, lambda x: 2 * x,
                            [Constraint(lambda x: 1 - x[0], lambda x: np.array([-1.0]))], space)
    r = minimize_constrained(p, np.array([2.5]))
    assert r.converged and r.x_star[0] == pytest.approx(1.0, abs=1e-6)
    assert r.f_star == pytest.approx(1.0, abs=1e-6)
    assert r.multipliers[0] == pytest.approx(2.0, abs=1e-5)


def test_linear_constraint_hand_kkt():
    r = minimize_constrained(quadratic_problem(), np.array([0.5, 0.5]))
    assert r.converged
    assert np.allclose(r.x_star, [1.5, 0.5], atol=1e-6)
    assert r.f_star == pytest.approx(0.5, abs=1e-6)
    # hand multiplier: grad f = (-1, -1) = -lambda (1, 1)
    assert r.multipliers[0] == pytest.approx(1.0, abs=1e-5)
    assert r.kkt_residual <= 1e-5


def test_interior_optimum_leaves_constraint_inactive():
    r = minimize_constrained(quadratic_problem(rhs=5.0), np.array([0.2, 2.5]))
    assert r.converged and np.allclose(r.x_star, [2.0, 1.0], atol=1e-6)
    assert r.constraint_values[0] < 0 and r.multipliers[0] == 0.0


@pytest.mark.parametrize("scale", [1e-3, 0.5, 40.0, 1e3])
def test_scale_robustness(scale):
    base = minimize_constrained(quadratic_problem(), np.array([0.5, 0.5]))
    r = minimize_constrained(quadratic_problem(scale), np.array([0.5, 0.5]))
    assert np.allclose(r.x_star, base.x_star, atol=1e-5)


def test_merit_nonincreasing_and_trace(tmp_path):
    r = minimize_constrained(quadratic_problem(), np.array([3.0, 3.0]))
    merits = [t["merit"] for t in r.trace]
    assert all(b <= a + 1e-12 for a, b in zip(merits, merits[1:]))
    write_trace_csv(r, ("x", "y"), tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,x,y,f,max_violation,merit" and len(lines) == len(r.trace) + 1


def test_invalid_starts():
    p = quadratic_problem()
    with pytest.raises(InvalidStartError):
        minimize_constrained(p, np.array([4.0, 0.0]))
    bad = OptimizationProblem(lambda z: np.nan, lambda z: np.zeros(2), [], p.space)
    with pytest.raises(InvalidStartError):
        minimize_constrained(bad, np.array([1.0, 1.0]))
    with pytest.raises(ConfigError):
        minimize_constrained(p, np.array([1.0, 1.0]), tol=0.0)


def test_kkt_residual_detects_nonstationary_point():
    p = quadratic_problem()
    res, _ = kkt_residual(p, np.array([1.0, 0.5]))
    assert res > 0.1
    res, lam = kkt_residual(p, np.array([1.5, 0.5]))
    assert res < 1e-12 and lam[0] == pytest.approx(1.0)


def test_multistart_convex_and_single():
    p = quadratic_problem()
    one = multistart(p, n_starts=1, x0=np.array([0.5, 0.5]))
    single = minimize_constrained(p, np.array([0.5, 0.5]))
    assert np.array_equal(one.x_star, single.x_star)
    best = multistart(p, n_starts=6, seed=2)
    assert np.allclose(best.x_star, [1.5, 0.5], atol=1e-4)
    from mfpod.optimizer import feasible_starts
    for s in feasible_starts(p, 5, seed=2):
        assert np.allclose(minimize_constrained(p, s).x_star, [1.5, 0.5], atol=1e-4)


def test_multistart_without_feasible_start():
    p = quadratic_problem(rhs=-1.0)
    with pytest.raises(InfeasibleStartError):
        multistart(p, n_starts=3)
    with pytest.raises(ConfigError):
        multistart(p, n_starts=0)


def test_linear_constraints_and_projection():
    A, b, names = esc_linear_constraints(ESC_SPACE)
    x = project_to_linear_feasible(ESC_SPACE.center, (A, b), ESC_SPACE)
    assert np.all(A @ x <= b) and ESC_SPACE.contains(x)
    # the centre violates only F1 <= W2 - 2
    assert (A @ ESC_SPACE.center - b > 0).tolist() == [False, False, False, True]


def test_esc_problem_structure(small_surrogate):
    p = build_esc_problem(small_surrogate, ESC_SPACE)
    assert [c.name for c in p.constraints][:2] == ["mean-limit", "max-limit"]
    assert len(p.constraints) == 6
    x = p.info["x_ref"].copy()
    # violate only CR1 <= CR2
    x[0], x[1] = 0.06, 0.05
    q = p.info["qois"](x)
    g = p.constraint_values(x)
    lin = g[2:]
    assert (lin > 0).tolist() == [True, False, False, False]
    assert q["softmax"] >= q["max"]
    assert g[0] == pytest.approx(q["mean"] - 17.0) and g[1] == pytest.approx(q["softmax"] - 21.5)


def test_esc_analytic_gradients_match_fd(small_surrogate):
    p = build_esc_problem(small_surrogate, ESC_SPACE)
    pf = build_esc_problem(small_surrogate, ESC_SPACE, fd_step=1e-5)
    x = p.info["x_ref"]
    span = ESC_SPACE.bounds[:, 1] - ESC_SPACE.bounds[:, 0]
    ga, gf = p.gradient(x) * span, pf.gradient(x) * span
    assert np.allclose(ga, gf, rtol=1e-4, atol=1e-6 * np.abs(ga).max())
    Ja, Jf = p.constraint_jacobian(x) * span, pf.constraint_jacobian(x) * span
    assert np.allclose(Ja, Jf, rtol=1e-4, atol=1e-6 * np.abs(Ja).max())


def test_esc_thresholds_must_be_positive(small_surrogate):
    for key in ("mean", "max", "softmax_sharpness"):
        with pytest.raises(ConfigError):
            build_esc_problem(small_surrogate, ESC_SPACE, {key: 0.0})


def test_esc_multistart_beats_single(small_surrogate):
    p = build_esc_problem(small_surrogate, ESC_SPACE)
    single = minimize_constrained(p, p.info["x_ref"])
    best = multistart(p, n_starts=4, seed=0, x0=p.info["x_ref"])
    assert best.f_star <= single.f_star
    if best.converged:
        assert best.max_violation <= 1e-6 and best.kkt_residual <= 1e-5

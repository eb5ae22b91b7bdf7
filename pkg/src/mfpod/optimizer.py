"""Local constrained minimization of surrogate field QoIs.

``minimize_constrained`` wraps scipy's SLSQP (SQP with a BFGS Hessian and an
active-set least-squares QP subproblem). The problem is solved in unit-box
coordinates so that variables with very different physical ranges are
treated alike; results are reported in physical units. Optimality is checked
independently of the solver by a nonnegative least-squares multiplier fit on
the active constraints and bounds.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls
from scipy.special import logsumexp, softmax

from .doe import DesignSpace, lhs
from .errors import ConfigError, InfeasibleStartError, InvalidStartError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
KKT_TOL = 1e-5
ACTIVE_TOL = 1e-5


@dataclass
class Constraint:
    """Inequality ``fun(x) <= 0`` with gradient ``jac(x)``."""

    fun: callable
    jac: callable
    name: str = ""
    linear: bool = False


@dataclass
class OptimizationProblem:
    objective: callable
    gradient: callable
    constraints: list
    space: DesignSpace
    info: dict = field(default_factory=dict)

    def constraint_values(self, x) -> np.ndarray:
        return np.array([c.fun(x) for c in self.constraints], dtype=float)

    def constraint_jacobian(self, x) -> np.ndarray:
        n = self.space.n
        return np.array([c.jac(x) for c in self.constraints], dtype=float).reshape(-1, n)

    def max_violation(self, x) -> float:
        g = self.constraint_values(x)
        return float(max(0.0, g.max())) if g.size else 0.0


@dataclass
class OptResult:
    x_star: np.ndarray
    f_star: float
    constraint_values: np.ndarray
    converged: bool
    iterations: int
    kkt_residual: float
    message: str = ""
    multipliers: np.ndarray | None = None
    trace: list = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        g = self.constraint_values
        return float(max(0.0, g.max())) if g.size else 0.0

    def to_dict(self, names=None) -> dict:
        d = {"x_star": self.x_star.tolist(), "f_star": self.f_star,
             "constraint_values": self.constraint_values.tolist(),
             "converged": self.converged, "iterations": self.iterations,
             "kkt_residual": self.kkt_residual, "message": self.message}
        if names is not None:
            d["design"] = dict(zip(names, self.x_star.tolist()))
        return d


def kkt_residual(problem: OptimizationProblem, x, active_tol=ACTIVE_TOL):
    """Stationarity residual of the Lagrangian at ``x``.

    Multipliers are fitted by nonnegative least squares on the constraints
    with ``g_i >= -active_tol`` and on active bounds. The residual is the
    infinity norm of the Lagrangian gradient in unit-box coordinates,
    relative to ``max(1, |grad f|_inf)``. Returns ``(residual, multipliers)``
    with zero multipliers for inactive constraints.
    """
    space = problem.space
    x = np.asarray(x, dtype=float)
    span = np.array(space.upper) - np.array(space.lower)
    grad = np.asarray(problem.gradient(x), dtype=float) * span
    g = problem.constraint_values(x)
    G = problem.constraint_jacobian(x) * span
    act = np.flatnonzero(g >= -active_tol)
    u = space.to_unit(x)
    cols = [G[i] for i in act]
    for j in range(space.n):
        if u[j] <= active_tol:
            cols.append(-np.eye(space.n)[j])
        if u[j] >= 1.0 - active_tol:
            cols.append(np.eye(space.n)[j])
    lam = np.zeros(len(g))
    if cols:
        A = np.column_stack(cols)
        mu, _ = nnls(A, -grad)
        r = grad + A @ mu
        lam[act] = mu[:len(act)]
    else:
        r = grad
    return float(np.max(np.abs(r)) / max(1.0, np.max(np.abs(grad)))), lam


def _unit_wrappers(problem):
    space = problem.space
    lo = np.array(space.lower)
    span = np.array(space.upper) - lo

    def to_x(u):
        return lo + np.clip(u, 0.0, 1.0) * span

    cons = []
    for c in problem.constraints:
        # SLSQP wants c(u) >= 0
        cons.append({"type": "ineq",
                     "fun": lambda u, c=c: -float(c.fun(to_x(u))),
                     "jac": lambda u, c=c: -np.asarray(c.jac(to_x(u)), dtype=float) * span})
    return (to_x,
            lambda u: float(problem.objective(to_x(u))),
            lambda u: np.asarray(problem.gradient(to_x(u)), dtype=float) * span,
            cons)


def merit(f, g, penalty) -> float:
    """L1 exact-penalty merit ``f + penalty * sum(max(0, g))``."""
    return float(f + penalty * np.sum(np.maximum(np.asarray(g, dtype=float), 0.0)))


def minimize_constrained(problem: OptimizationProblem, x0, tol=1e-10, max_iter=200,
                         feas_tol=FEAS_TOL, kkt_tol=KKT_TOL) -> OptResult:
    """Local SQP solve from ``x0``.

    ``converged`` means the solver stopped normally, constraints hold to
    ``feas_tol`` and the independent KKT residual is below ``kkt_tol``.
    Otherwise the best feasible iterate seen is returned (or the final one
    when none was feasible).
    """
    if not tol > 0:
        raise ConfigError("tol must be positive")
    space = problem.space
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (space.n,) or not space.contains(x0, 1e-12):
        raise InvalidStartError(f"start {x0.tolist()} outside the bounds")
    f0 = problem.objective(x0)
    g0 = problem.constraint_values(x0)
    if not (np.isfinite(f0) and np.isfinite(g0).all()):
        raise InvalidStartError("objective or constraints are not finite at the start")

    to_x, fun, jac, cons = _unit_wrappers(problem)
    trace = [(x0.copy(), float(f0), g0)]

    def record(u):
        x = to_x(u)
        trace.append((x, float(problem.objective(x)), problem.constraint_values(x)))

    res = minimize(fun, space.to_unit(x0), jac=jac, method="SLSQP", bounds=[(0.0, 1.0)] * space.n,
                   constraints=cons, callback=record,
                   options={"ftol": tol, "maxiter": int(max_iter)})
    x = to_x(res.x)
    f = float(problem.objective(x))
    g = problem.constraint_values(x)
    if not np.allclose(trace[-1][0], x, rtol=0, atol=0):
        trace.append((x, f, g))
    viol = max(0.0, g.max()) if g.size else 0.0
    kkt, lam = kkt_residual(problem, x)
    converged = bool(res.success and viol <= feas_tol and kkt <= kkt_tol)
    if not converged:
        feas = [t for t in trace if (t[2].max() if t[2].size else 0.0) <= feas_tol]
        if feas:
            best = min(feas, key=lambda t: t[1])
            if best[1] < f or viol > feas_tol:
                x, f, g = best[0], best[1], best[2]
                kkt, lam = kkt_residual(problem, x)
    log.debug("SLSQP: %s (nit=%d, f=%.6g, kkt=%.2e)", res.message, res.nit, f, kkt)
    penalty = 10.0 * max(1.0, float(np.max(lam, initial=0.0)))
    rows = [{"iteration": i, "x": t[0].tolist(), "f": t[1],
             "max_violation": float(max(0.0, t[2].max())) if t[2].size else 0.0,
             "merit": merit(t[1], t[2], penalty)} for i, t in enumerate(trace)]
    return OptResult(x, f, g, converged, int(res.nit), kkt, str(res.message), lam, rows)


def _better(a: OptResult, b: OptResult, feas_tol=FEAS_TOL) -> bool:
    fa, fb = a.max_violation <= feas_tol, b.max_violation <= feas_tol
    if fa != fb:
        return fa
    if not fa:
        return a.max_violation < b.max_violation
    if a.f_star != b.f_star:
        return a.f_star < b.f_star
    return a.kkt_residual < b.kkt_residual


def feasible_starts(problem: OptimizationProblem, n, seed, max_batches=10) -> np.ndarray:
    """LHS points satisfying the linear constraints (all constraints when
    none are flagged linear)."""
    cons = [c for c in problem.constraints if c.linear] or problem.constraints
    found = []
    seeds = np.random.SeedSequence(seed).spawn(max_batches)
    for ss in seeds:
        X = lhs(problem.space, max(10 * n, 20), seed=np.random.default_rng(ss))
        for x in X:
            if all(c.fun(x) <= 0.0 for c in cons):
                found.append(x)
                if len(found) == n:
                    return np.array(found)
    return np.array(found).reshape(-1, problem.space.n)


def multistart(problem: OptimizationProblem, n_starts=8, seed=0, x0=None, **kw) -> OptResult:
    """Best of local solves from ``x0`` (if given) plus feasible LHS starts.

    ``n_starts`` counts ``x0``. The winner is the feasible result with the
    lowest objective, ties broken by the KKT residual.
    """
    if n_starts < 1:
        raise ConfigError("n_starts must be >= 1")
    starts = [] if x0 is None else [np.asarray(x0, dtype=float)]
    need = n_starts - len(starts)
    if need > 0:
        extra = feasible_starts(problem, need, seed)
        if len(extra) == 0 and not starts:
            raise InfeasibleStartError(
                f"no LHS point out of {10 * max(10 * need, 20)} satisfies the linear constraints")
        if len(extra) < need:
            log.warning("only %d of %d feasible starts found", len(extra), need)
        starts.extend(extra)
    best = None
    for i, s in enumerate(starts):
        r = minimize_constrained(problem, s, **kw)
        log.info("start %d: f=%.6g viol=%.2e kkt=%.2e", i, r.f_star, r.max_violation, r.kkt_residual)
        if best is None or _better(r, best):
            best = r
    return best


def write_trace_csv(result: OptResult, names, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *names, "f", "max_violation", "merit"])
        for t in result.trace:
            w.writerow([t["iteration"], *map(repr, t["x"]), repr(t["f"]),
                        repr(t["max_violation"]), repr(t["merit"])])


# --- ESC problem ------------------------------------------------------------

ESC_THRESHOLDS = {"mean": 17.0, "max": 21.5, "cr_sum": 10.0, "softmax_sharpness": 50.0}


def esc_linear_constraints(space: DesignSpace, cr_sum_rhs=10.0):
    """``(A, b, names)`` with rows ``A x <= b``: CR1 <= CR2,
    CR1 + CR2 <= rhs, W2 <= W1, F1 <= W2 - 2."""
    i = space.index
    n = space.n
    A = np.zeros((4, n))
    A[0, i("CR1")], A[0, i("CR2")] = 1.0, -1.0
    A[1, i("CR1")], A[1, i("CR2")] = 1.0, 1.0
    A[2, i("W2")], A[2, i("W1")] = 1.0, -1.0
    A[3, i("F1")], A[3, i("W2")] = 1.0, -1.0
    b = np.array([0.0, float(cr_sum_rhs), 0.0, -2.0])
    return A, b, ("CR1-CR2", "CR1+CR2-rhs", "W2-W1", "F1-W2+2")


def project_to_linear_feasible(x, constraints, space: DesignSpace) -> np.ndarray:
    """Closest point (unit-box distance) satisfying ``A x <= b`` and the bounds."""
    A, b = constraints[0], constraints[1]
    x = np.asarray(x, dtype=float)
    if np.all(A @ x <= b):
        return x.copy()
    lo = np.array(space.lower)
    span = np.array(space.upper) - lo
    u0 = space.to_unit(x)
    Au = A * span
    bu = b - A @ lo
    res = minimize(lambda u: 0.5 * np.sum((u - u0) ** 2), u0, jac=lambda u: u - u0,
                   method="SLSQP", bounds=[(0.0, 1.0)] * space.n,
                   constraints=[{"type": "ineq", "fun": lambda u: bu - Au @ u, "jac": lambda u: -Au}],
                   options={"ftol": 1e-14, "maxiter": 200})
    out = space.from_unit(np.clip(res.x, 0.0, 1.0))
    # push off solver roundoff so the point is strictly feasible
    for _ in range(50):
        viol = A @ out - b
        if np.all(viol <= 0):
            break
        k = int(np.argmax(viol))
        out = np.clip(out - A[k] * (viol[k] + 1e-12) / (A[k] @ A[k]), lo, lo + span)
    return out


class FieldQoIs:
    """Predicted-field QoIs and their design gradients with a one-point cache.

    ``beta`` is the soft-max sharpness in 1/deg C. Gradients are analytic
    through the latent Jacobian and the POD modes unless ``fd_step`` is set,
    in which case central differences with that step in unit-box coordinates
    are used.
    """

    def __init__(self, surrogate, space: DesignSpace, beta, fd_step=None):
        self.surrogate = surrogate
        self.space = space
        self.beta = float(beta)
        self.fd_step = fd_step
        self._V = surrogate.basis.modes
        self._x = None

    def _values(self, x):
        y = self.surrogate.predict_fields(np.atleast_2d(x))[0]
        return y, {"sigma3": 3.0 * y.std(), "mean": y.mean(),
                   "softmax": logsumexp(self.beta * y) / self.beta, "max": y.max()}

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self._x is not None and np.array_equal(x, self._x):
            return self._cache
        y, vals = self._values(x)
        if self.fd_step is None:
            dy = self._V @ self.surrogate.latent_jacobian(x)  # (m, n)
            m = len(y)
            d = y - y.mean()
            s = y.std()
            grads = {"mean": dy.mean(axis=0),
                     "sigma3": 3.0 * (d @ dy) / (m * s) if s > 0 else np.zeros(len(x)),
                     "softmax": softmax(self.beta * y) @ dy}
        else:
            span = np.array(self.space.upper) - np.array(self.space.lower)
            grads = {key: np.zeros(len(x)) for key in ("mean", "sigma3", "softmax")}
            for j in range(len(x)):
                e = np.zeros(len(x))
                e[j] = self.fd_step * span[j]
                vp, vm = self._values(x + e)[1], self._values(x - e)[1]
                for key in grads:
                    grads[key][j] = (vp[key] - vm[key]) / (2 * e[j])
        self._x, self._cache = x.copy(), (vals, grads)
        return self._cache


def build_esc_problem(surrogate, space: DesignSpace, thresholds=None, x_ref=None,
                      fd_step=None) -> OptimizationProblem:
    """Minimize predicted 3 sigma subject to mean/max limits and the four
    linear layout constraints.

    The max constraint uses a log-sum-exp soft-max over the masked cells
    whose sharpness is ``softmax_sharpness`` divided by the predicted field
    range at ``x_ref`` (default: the box centre projected onto the linear
    constraints). It is fixed for the whole problem so the constraint stays
    smooth, and it upper-bounds the true maximum.
    """
    th = dict(ESC_THRESHOLDS)
    th.update(thresholds or {})
    for key in ("mean", "max", "softmax_sharpness"):
        if not th[key] > 0:
            raise ConfigError(f"threshold {key!r} must be positive")
    A, b, lin_names = esc_linear_constraints(space, th["cr_sum"])
    if x_ref is None:
        x_ref = project_to_linear_feasible(space.center, (A, b), space)
    y_ref = surrogate.predict_fields(np.atleast_2d(x_ref))[0]
    rng = float(np.ptp(y_ref))
    if not rng > 0:
        raise ConfigError("predicted reference field is constant; cannot set soft-max sharpness")
    beta = th["softmax_sharpness"] / rng
    q = FieldQoIs(surrogate, space, beta, fd_step)

    cons = [
        Constraint(lambda x: q.evaluate(x)[0]["mean"] - th["mean"],
                   lambda x: q.evaluate(x)[1]["mean"], "mean-limit"),
        Constraint(lambda x: q.evaluate(x)[0]["softmax"] - th["max"],
                   lambda x: q.evaluate(x)[1]["softmax"], "max-limit"),
    ]
    for row, rhs, name in zip(A, b, lin_names):
        cons.append(Constraint(lambda x, r=row, c=rhs: float(r @ x - c),
                               lambda x, r=row: r.copy(), name, linear=True))
    return OptimizationProblem(
        objective=lambda x: q.evaluate(x)[0]["sigma3"],
        gradient=lambda x: q.evaluate(x)[1]["sigma3"],
        constraints=cons, space=space,
        info={"beta": beta, "x_ref": np.asarray(x_ref, dtype=float), "thresholds": th,
              "qois": lambda x: dict(q.evaluate(x)[0])})

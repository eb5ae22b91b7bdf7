"""Design spaces, Latin hypercube designs and nested high-fidelity subsets."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import qmc

from .errors import ConfigError, DesignDomainError, SizeError


@dataclass(frozen=True)
class DesignSpace:
    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        names, lo, hi = tuple(self.names), tuple(map(float, self.lower)), tuple(map(float, self.upper))
        if not (len(names) == len(lo) == len(hi)) or not names:
            raise ConfigError("design space needs matching, nonempty names/lower/upper")
        if any(not l < u for l, u in zip(lo, hi)):
            raise ConfigError("design space needs lower < upper in every dimension")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def bounds(self) -> np.ndarray:
        """``(n, 2)`` array of ``[lower, upper]`` rows."""
        return np.column_stack([self.lower, self.upper])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def index(self, name) -> int:
        return self.names.index(name)

    def contains(self, x, tol=0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.array(self.lower) - tol) and np.all(x <= np.array(self.upper) + tol))

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,) or not np.isfinite(x).all() or not self.contains(x, 1e-12):
            raise DesignDomainError(f"design {x.tolist()} outside the design space")
        return x

    def to_unit(self, X):
        return (np.asarray(X, dtype=float) - self.lower) / (np.array(self.upper) - self.lower)

    def from_unit(self, U):
        return np.array(self.lower) + np.asarray(U, dtype=float) * (np.array(self.upper) - self.lower)

    def to_dict(self) -> dict:
        return {"variable": [{"name": n, "lower": l, "upper": u}
                             for n, l, u in zip(self.names, self.lower, self.upper)]}

    @classmethod
    def from_dict(cls, d) -> "DesignSpace":
        try:
            rows = d["variable"]
            return cls(tuple(r["name"] for r in rows), tuple(r["lower"] for r in rows),
                       tuple(r["upper"] for r in rows))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed design space: {exc}") from None


# Electrostatic-chuck design variables: emboss contact ratios (dimensionless),
# coolant path heights/widths and outer fin height (mm).
ESC_SPACE = DesignSpace(
    ("CR1", "CR2", "H1", "H2", "W1", "W2", "F1"),
    (0.01, 0.01, 5.0, 1.0, 5.0, 5.0, 0.0),
    (0.1, 0.1, 19.5, 19.5, 8.0, 8.0, 10.0),
)


def lhs(space: DesignSpace, n_samples: int, seed=0) -> np.ndarray:
    """Latin hypercube design with uniformly random positions inside strata."""
    n_samples = int(n_samples)
    if n_samples < 1:
        raise SizeError("n_samples must be >= 1")
    U = qmc.LatinHypercube(space.n, scramble=True, rng=seed).random(n_samples)
    return space.from_unit(U)


def stratum_indices(X, space: DesignSpace) -> np.ndarray:
    """Stratum index of every sample in every dimension (for checking LHS)."""
    n = len(X)
    return np.minimum((space.to_unit(X) * n).astype(int), n - 1)


def min_pairwise_distance(points) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.inf
    return float(pdist(points).min())


def nested_subset(points, n_H: int, strategy="first-n", max_enumeration=20000) -> np.ndarray:
    """Indices of the high-fidelity subset of a design, sorted ascending.

    ``first-n`` returns ``0..n_H-1``. ``maximin`` maximizes the smallest
    pairwise distance of the subset: exactly by enumeration when the number
    of candidate subsets is at most ``max_enumeration``, otherwise by greedy
    farthest-point selection (seeded with the diameter pair) refined with
    single swaps. Ties go to the lowest indices.
    """
    points = np.asarray(points, dtype=float)
    N = len(points)
    n_H = int(n_H)
    if n_H > N:
        raise SizeError(f"cannot select {n_H} of {N} points")
    if n_H < 0:
        raise SizeError("n_H must be nonnegative")
    if strategy == "first-n":
        return np.arange(n_H)
    if strategy != "maximin":
        raise ConfigError(f"unknown subset strategy {strategy!r}")
    if n_H <= 1:
        return np.arange(n_H)
    D = squareform(pdist(points))
    if comb(N, n_H) <= max_enumeration:
        best, best_d = None, -1.0
        for c in combinations(range(N), n_H):
            d = D[np.ix_(c, c)][np.triu_indices(n_H, 1)].min()
            if d > best_d:
                best, best_d = c, d
        return np.array(best)
    i, j = np.unravel_index(np.argmax(D), D.shape)
    chosen = [min(i, j), max(i, j)]
    mind = np.minimum(D[chosen[0]], D[chosen[1]])
    while len(chosen) < n_H:
        mind[chosen] = -1.0
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, D[nxt])
    chosen = _swap_refine(D, chosen)
    return np.sort(np.array(chosen))


def _swap_refine(D, chosen, max_rounds=50):
    chosen = list(chosen)
    N = len(D)

    def score(c):
        sub = D[np.ix_(c, c)]
        return sub[np.triu_indices(len(c), 1)].min()

    cur = score(chosen)
    for _ in range(max_rounds):
        improved = False
        for a in range(len(chosen)):
            rest = chosen[:a] + chosen[a + 1:]
            outside = np.setdiff1d(np.arange(N), chosen)
            gain = D[np.ix_(outside, rest)].min(axis=1)
            b = int(np.argmax(gain))
            if gain[b] > cur:
                trial = rest + [int(outside[b])]
                s = score(trial)
                if s > cur:
                    chosen, cur, improved = trial, s, True
        if not improved:
            break
    return chosen


def write_doe_csv(X, space: DesignSpace, path) -> None:
    idx = np.arange(len(X))
    header = ",".join(("index",) + space.names)
    data = np.column_stack([idx, X])
    fmt = ["%d"] + ["%.17g"] * space.n
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt, encoding="utf-8")


def read_doe_csv(path, space: DesignSpace | None = None) -> tuple[np.ndarray, tuple]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[0] != "index":
        raise ConfigError(f"{path}: first DoE column must be 'index'")
    names = tuple(header[1:])
    if space is not None and names != space.names:
        raise ConfigError(f"{path}: columns {names} do not match design space {space.names}")
    order = np.argsort(data[:, 0], kind="stable")
    return data[order, 1:], names

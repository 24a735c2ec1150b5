"""Empirical measures, exact Wasserstein-2 and the truncation bound.

Measures live on coordinate vectors.  When a measure is said to live on a
Haar hierarchy the coordinates follow the flat pyramid layout of
:mod:`multires.wavelet`, so the coarse space of level ``j`` is the first
``coarse_dim(j)`` coordinates and the detail band ``U`` between levels
``j - 1`` and ``j`` is the slice ``[coarse_dim(j - 1), coarse_dim(j))``.
"""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .wavelet import HierarchySpec, coarse_dim

MAX_EXACT_POINTS = 256


class TransportError(ValueError):
    pass


class DimensionMismatchError(TransportError):
    pass


class UnsupportedModeError(TransportError):
    pass


class MalformedLayoutError(TransportError):
    pass


class InversePairError(TransportError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DimensionMismatchError("points must be a non-empty (n, d) array")
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatchError(
                f"{pts.shape[0]} points but {w.shape[0]} weights"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise TransportError("weights must be non-negative and sum to 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points):
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, point):
        return cls(np.atleast_2d(np.asarray(point, dtype=np.float64)), [1.0])

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.points.shape[0]

    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def merged(self):
        """Collapse coincident support points, summing their weights."""
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inverse.ravel(), self.weights)
        return EmpiricalMeasure(uniq, w / w.sum())

    def second_moment(self):
        return float(self.weights @ np.sum(self.points**2, axis=1))

    def to_dict(self):
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(d["points"], d["weights"])
        if "dim" in d and int(d["dim"]) != m.dim:
            raise DimensionMismatchError(f"declared dim {d['dim']} but points have {m.dim}")
        return m


@dataclass(frozen=True, eq=False)
class LinearMap:
    matrix: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionMismatchError("matrix must be two-dimensional")
        if not np.all(np.isfinite(a)):
            raise TransportError("matrix has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @property
    def d_in(self):
        return self.matrix.shape[1]

    @property
    def d_out(self):
        return self.matrix.shape[0]

    def apply(self, points):
        return np.asarray(points) @ self.matrix.T

    def compose(self, inner):
        """``self`` after ``inner``."""
        if inner.d_out != self.d_in:
            raise DimensionMismatchError("cannot compose maps of mismatched dimension")
        return LinearMap(self.matrix @ inner.matrix)


def same_measure(mu, nu, atol=0.0):
    """True when two measures agree as weighted multisets."""
    if mu.dim != nu.dim:
        return False
    a, b = mu.merged(), nu.merged()
    if a.size != b.size:
        return False
    return bool(
        np.allclose(a.points, b.points, rtol=0, atol=atol)
        and np.allclose(a.weights, b.weights, rtol=0, atol=1e-12)
    )


def _atom_counts(mu):
    """Integer multiplicities ``k_i`` and total ``N`` with ``w_i = k_i / N``."""
    fracs = [Fraction(float(w)).limit_denominator(MAX_EXACT_POINTS) for w in mu.weights]
    if any(abs(float(f) - w) > 1e-12 for f, w in zip(fracs, mu.weights)):
        raise UnsupportedModeError("weights are not multiples of 1/N for N <= 256")
    n = math.lcm(*(f.denominator for f in fracs))
    return [int(f * n) for f in fracs], n


def _expand(mu, n_total):
    counts, n = _atom_counts(mu)
    reps = [c * (n_total // n) for c in counts]
    return np.repeat(mu.points, reps, axis=0)


def wasserstein2(mu, nu):
    """Exact W2 between two finitely supported measures by optimal assignment.

    Both measures are expanded to uniform measures on the same number of
    atoms, which requires every weight to be a multiple of ``1/N`` with
    ``N <= 256``.  Equal-size uniform measures are the common case.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"dimensions {mu.dim} and {nu.dim} differ")
    if mu.is_uniform() and nu.is_uniform() and mu.size == nu.size:
        a, b = mu.points, nu.points
    else:
        _, na = _atom_counts(mu)
        _, nb = _atom_counts(nu)
        n = math.lcm(na, nb)
        if n > MAX_EXACT_POINTS:
            raise UnsupportedModeError(f"exact W2 needs {n} > {MAX_EXACT_POINTS} atoms")
        a, b = _expand(mu, n), _expand(nu, n)
    if a.shape[0] > MAX_EXACT_POINTS:
        raise UnsupportedModeError(f"exact W2 limited to {MAX_EXACT_POINTS} atoms")
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(max(float(cost[rows, cols].mean()), 0.0))


def pushforward(mu, linear_map):
    if linear_map.d_in != mu.dim:
        raise DimensionMismatchError(
            f"map expects dimension {linear_map.d_in}, measure has {mu.dim}"
        )
    return EmpiricalMeasure(linear_map.apply(mu.points), mu.weights)


def _layout_level(dim, ndim):
    base = 2 if ndim == 1 else 4
    level = round(math.log(dim, base)) if dim > 0 else -1
    if level < 0 or base**level != dim:
        raise MalformedLayoutError(f"dimension {dim} is not a {ndim}D pyramid layout")
    return level


def project_measure(mu, onto, ndim=1):
    """Zero every detail coordinate finer than level ``onto``."""
    level = _layout_level(mu.dim, ndim)
    if not 0 <= onto <= level:
        raise MalformedLayoutError(f"level {onto} outside [0, {level}]")
    pts = np.array(mu.points)
    pts[:, coarse_dim(onto, ndim) :] = 0.0
    return EmpiricalMeasure(pts, mu.weights)


def lipschitz_estimate(linear_map, rtol=1e-12, max_iter=100_000, seed=0):
    """Spectral norm by power iteration on ``A^T A``.

    The iterate's Rayleigh quotient approaches the top eigenvalue from below,
    so the estimate never overshoots the true norm by more than rounding.
    """
    a = np.asarray(linear_map.matrix if isinstance(linear_map, LinearMap) else linear_map)
    if not np.any(a):
        return 0.0
    v = np.random.default_rng(seed).normal(size=a.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector landed in the null space; restart off-axis
            v = np.ones(a.shape[1]) / math.sqrt(a.shape[1])
            continue
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return math.sqrt(max(float(v @ (a.T @ (a @ v))), lam, 0.0))


@dataclass
class TruncationReport:
    lhs_terms: list
    lhs_sum: float
    w2_squared: float
    coupling_cost: float
    lipschitz: list = field(default_factory=list)
    slack: float = 1e-9

    @property
    def holds(self):
        return self.lhs_sum <= self.w2_squared + self.slack

    def to_dict(self):
        return {
            "lhs_terms": list(self.lhs_terms),
            "lhs_sum": self.lhs_sum,
            "w2_squared": self.w2_squared,
            "coupling_cost": self.coupling_cost,
            "lipschitz": list(self.lipschitz),
            "holds": self.holds,
        }


def _as_matrix(m):
    return m.matrix if isinstance(m, LinearMap) else np.asarray(m, dtype=np.float64)


def truncation_gap(data, forwards, backwards, hierarchy=None, ndim=1, inverse_tol=1e-8):
    """Check discarded detail energy against the reconstruction W2.

    ``forwards[j - 1]`` and ``backwards[j - 1]`` act on the level-``j`` space
    (``coarse_dim(j)`` coordinates) for ``j = 1..J`` and must be inverse to
    each other.  The encoder path applies ``F_J``, keeps the coarse part,
    applies ``F_{J-1}`` and so on down to level 0; the decoder path embeds
    with zero detail and applies ``B_1, ..., B_J``.

    ``lhs_terms[j - 1]`` is the mean squared norm of the detail part dropped
    at level ``j`` divided by the squared Lipschitz constant of the linear
    map that produced it (``F_j`` after all coarser-projected higher levels).
    """
    J = _layout_level(data.dim, ndim)
    if len(forwards) != J or len(backwards) != J:
        raise DimensionMismatchError(f"need {J} forward and backward maps, got {len(forwards)}/{len(backwards)}")
    if hierarchy is not None:
        if not isinstance(hierarchy, HierarchySpec):
            hierarchy = HierarchySpec(tuple(hierarchy))
        if hierarchy.levels != J:
            raise DimensionMismatchError(f"hierarchy has {hierarchy.levels} levels, data has {J}")
    F = [_as_matrix(m) for m in forwards]
    B = [_as_matrix(m) for m in backwards]
    for j in range(1, J + 1):
        d = coarse_dim(j, ndim)
        if F[j - 1].shape != (d, d) or B[j - 1].shape != (d, d):
            raise DimensionMismatchError(f"level {j} maps must be {d}x{d}")
        err = np.max(np.abs(B[j - 1] @ F[j - 1] - np.eye(d)))
        if err > inverse_tol:
            raise InversePairError(f"B_{j} F_{j} deviates from identity by {err:.3g}")

    w = data.weights
    x = data.points
    path = np.eye(data.dim)
    terms, lips = [0.0] * J, [0.0] * J
    for j in range(J, 0, -1):
        keep = coarse_dim(j - 1, ndim)
        y = x @ F[j - 1].T
        path = F[j - 1] @ path
        dropped = float(w @ np.sum(y[:, keep:] ** 2, axis=1))
        lip = lipschitz_estimate(path)
        lips[j - 1] = lip
        terms[j - 1] = dropped / lip**2 if lip > 0 else 0.0
        x = y[:, :keep]
        path = path[:keep]

    r = x
    for j in range(1, J + 1):
        z = np.zeros((r.shape[0], coarse_dim(j, ndim)))
        z[:, : r.shape[1]] = r
        r = z @ B[j - 1].T

    coupling = float(w @ np.sum((r - data.points) ** 2, axis=1))
    w2 = wasserstein2(EmpiricalMeasure(r, w), data) ** 2
    return TruncationReport(
        lhs_terms=terms,
        lhs_sum=float(sum(terms)),
        w2_squared=w2,
        coupling_cost=coupling,
        lipschitz=lips,
    )


def load_measure(path):
    with open(path) as fh:
        return EmpiricalMeasure.from_dict(json.load(fh))


def save_measure(path, mu):
    with open(path, "w") as fh:
        json.dump(mu.to_dict(), fh)


def load_maps(path):
    """``{"forwards": [...], "backwards": [...], "times": [...]?}``."""
    with open(path) as fh:
        d = json.load(fh)
    fwd = [LinearMap(m) for m in d["forwards"]]
    if "backwards" in d:
        bwd = [LinearMap(m) for m in d["backwards"]]
    else:
        bwd = [LinearMap(np.linalg.inv(m.matrix)) for m in fwd]
    times = d.get("times")
    return fwd, bwd, (HierarchySpec(tuple(times)) if times is not None else None)

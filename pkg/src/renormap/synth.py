"""Synthetic mixtures of localized clusters with controlled separability."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import GenerationError, InputError
from .geometry import Dataset, pairwise_sq_dists

__all__ = ["SHAPES", "MixtureSpec", "SeparabilityReport", "cluster_radius", "separability",
           "place_centers", "sample_shape", "sample_weibull", "generate", "make_mixture"]

SHAPES = ("gaussian", "uniform-l2-ball", "uniform-l1-ball")

# fraction of gaussian mass inside the radius used as R for unbounded clusters
GAUSSIAN_MASS = 0.95


@dataclass
class MixtureSpec:
    """Mixture of ``n_star`` identical-shape clusters.

    ``variances`` are the per-cluster variances sigma*_c, i.e. the mean
    squared distance of a sample to its center (summed over coordinates).
    """

    centers: np.ndarray
    variances: np.ndarray
    shape: str = "gaussian"
    points_per_cluster: int = 30

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        k = self.centers.shape[0]
        v = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if v.size == 1:
            v = np.full(k, v[0])
        self.variances = v
        if self.shape not in SHAPES:
            raise InputError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if v.shape[0] != k:
            raise InputError(f"{v.shape[0]} variances for {k} centers")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise InputError("variances must be positive")
        if self.points_per_cluster < 1:
            raise InputError("points_per_cluster must be positive")
        if k > 1:
            d2 = pairwise_sq_dists(self.centers)
            if np.any(d2[np.triu_indices(k, 1)] == 0):
                raise InputError("centers must be pairwise distinct")

    @property
    def n_star(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["centers"] = self.centers.tolist()
        out["variances"] = self.variances.tolist()
        return out


@dataclass
class SeparabilityReport:
    d_min: float
    r_max: float
    eta: float
    well_separated: bool = field(init=False)

    def __post_init__(self):
        self.well_separated = self.eta > 1


def _ball_radius(shape, dim, variance):
    # uniform L2 ball: E|r|^2 = d R^2 / (d + 2)
    if shape == "uniform-l2-ball":
        return math.sqrt(variance * (dim + 2) / dim)
    # uniform L1 ball: E|r|^2 = 2 d R^2 / ((d + 1)(d + 2))
    if shape == "uniform-l1-ball":
        return math.sqrt(variance * (dim + 1) * (dim + 2) / (2 * dim))
    raise InputError(shape)


def cluster_radius(shape: str, dim: int, variance: float) -> float:
    """Radius R of one cluster.

    Balls use their support radius (the L1 ball's vertices sit at distance
    R from the center). Gaussians use the radius holding 95% of the mass,
    from the chi distribution with ``dim`` degrees of freedom.
    """
    if shape == "gaussian":
        return math.sqrt(variance / dim * stats.chi2.ppf(GAUSSIAN_MASS, dim))
    return _ball_radius(shape, dim, variance)


def separability(spec: MixtureSpec) -> SeparabilityReport:
    """eta = d_min / (2 R_max)."""
    if spec.n_star < 2:
        raise InputError("separability is undefined for a single cluster")
    d2 = pairwise_sq_dists(spec.centers)
    d_min = math.sqrt(float(d2[np.triu_indices(spec.n_star, 1)].min()))
    r_max = max(cluster_radius(spec.shape, spec.dim, v) for v in spec.variances)
    return SeparabilityReport(d_min, r_max, d_min / (2 * r_max))


def _min_distance(c):
    d2 = pairwise_sq_dists(c)
    return math.sqrt(float(d2[np.triu_indices(c.shape[0], 1)].min()))


def place_centers(n_star: int, dim: int, target_eta: float, seed=None, r_max: float = 1.0,
                  max_attempts: int = 200, tol: float = 0.02) -> np.ndarray:
    """Centers whose minimal distance gives ``eta`` within ``tol`` of the target.

    Candidate configurations are drawn uniformly in a cube; the cube edge is
    adjusted between attempts so the realised minimal distance lands near
    2 * target_eta * r_max, and a configuration is accepted once it is
    within the relative tolerance.
    """
    if not target_eta > 0:
        raise InputError("target_eta must be positive")
    if not tol > 0:
        raise InputError("tol must be positive")
    if n_star < 2:
        return np.zeros((max(n_star, 1), dim))
    rng = np.random.default_rng(seed)
    want = 2.0 * target_eta * r_max
    # rough initial edge: spread n_star points so typical spacing ~ 2x the target
    edge = 2.0 * want * n_star ** (1.0 / dim)
    for _ in range(max_attempts):
        c = rng.uniform(0.0, edge, size=(n_star, dim))
        got = _min_distance(c)
        if abs(got / want - 1.0) <= tol:
            return c - c.mean(axis=0)
        # rescaling a draw is the same as drawing in a rescaled cube; accept it
        # when the rescaled configuration meets the target exactly
        c *= want / got
        edge *= want / got
        got = _min_distance(c)
        if abs(got / want - 1.0) <= tol:
            return c - c.mean(axis=0)
    raise GenerationError(f"could not place {n_star} centers at eta={target_eta}")


def sample_shape(shape: str, n: int, dim: int, variance: float, rng) -> np.ndarray:
    """``n`` centered draws of one cluster shape with E|r|^2 = variance."""
    if shape == "gaussian":
        return rng.standard_normal((n, dim)) * math.sqrt(variance / dim)
    if shape == "uniform-l2-ball":
        r = _ball_radius(shape, dim, variance)
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * (r * rng.uniform(size=(n, 1)) ** (1.0 / dim))
    if shape == "uniform-l1-ball":
        r = _ball_radius(shape, dim, variance)
        # exponential spacings: first d coordinates of a uniform point on the
        # (d+1)-simplex fill the positive orthant of the unit L1 ball uniformly
        e = rng.exponential(size=(n, dim + 1))
        x = e[:, :dim] / e.sum(axis=1, keepdims=True)
        signs = rng.choice([-1.0, 1.0], size=(n, dim))
        return x * signs * r
    raise InputError(f"unknown shape {shape!r}")


def sample_weibull(n: int, dim: int, alpha: float, rng) -> np.ndarray:
    """Isotropic draws with P(|r|^2 > x) = exp(-alpha x^(d/2)).

    |r|^d is exponential with rate alpha and the direction is uniform.
    """
    if not alpha > 0:
        raise InputError("alpha must be positive")
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.exponential(1.0 / alpha, size=(n, 1)) ** (1.0 / dim)
    return g * r


def generate(spec: MixtureSpec, seed=None):
    """Sample the mixture. Returns the dataset and the generating labels."""
    rng = np.random.default_rng(seed)
    m = spec.points_per_cluster
    chunks, labels = [], []
    for c in range(spec.n_star):
        chunks.append(spec.centers[c] + sample_shape(spec.shape, m, spec.dim,
                                                     spec.variances[c], rng))
        labels.append(np.full(m, c))
    return Dataset(np.vstack(chunks)), np.concatenate(labels)


def make_mixture(n_star: int, dim: int, eta: float | None = None, shape: str = "gaussian",
                 variance: float = 1.0, points_per_cluster: int = 30, seed=None) -> MixtureSpec:
    """Spec with equal variances and centers placed for the requested eta."""
    if n_star == 1 or eta is None:
        centers = np.zeros((1, dim)) if n_star == 1 else None
        if centers is None:
            raise InputError("eta is required when n_star > 1")
    else:
        r = cluster_radius(shape, dim, variance)
        centers = place_centers(n_star, dim, eta, seed=seed, r_max=r)
    return MixtureSpec(centers, np.full(len(centers), variance), shape, points_per_cluster)


"""Hierarchical divide-and-conquer AP.

The data are shuffled once and cut into ``b**h`` leaf subsets. Every leaf
is clustered with plain AP, its exemplars become weighted points, and
groups of ``b`` sibling outputs are reclustered with weighted AP until a
single root clustering remains. Leaves sit at level ``h``, the root at 0.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import ClusteringResult, SolverConfig, solve
from .errors import InputError, PlanError
from .geometry import Dataset, SimilarityMatrix, build_similarity, pairwise_sq_dists
from .wap import weighted_similarity_arrays

__all__ = ["HiApPlan", "LevelReport", "plan", "cluster_hierarchical", "calibrate_preference",
           "partition", "single_exemplar_limit"]


@dataclass(frozen=True)
class HiApPlan:
    N: int
    K: int
    h: int
    b: int

    @property
    def n_leaves(self) -> int:
        return self.b ** self.h

    @property
    def subset_size(self) -> int:
        """Points per leaf, M = N / b^h (floor; sizes differ by at most one)."""
        return self.N // self.n_leaves

    @property
    def predicted_cost(self) -> float:
        """C(h) up to a constant: K^(h/(h+1)) N^((h+2)/(h+1))."""
        h = self.h
        return self.K ** (h / (h + 1)) * self.N ** ((h + 2) / (h + 1))

    @property
    def n_clusterings(self) -> int:
        if self.b == 1:
            return self.h + 1
        return (self.b ** (self.h + 1) - 1) // (self.b - 1)

    def to_dict(self) -> dict:
        return {"N": self.N, "K": self.K, "h": self.h, "b": self.b,
                "subset_size": self.subset_size, "n_clusterings": self.n_clusterings,
                "predicted_cost": self.predicted_cost}


@dataclass
class LevelReport:
    level: int
    clusterings_run: int
    points_in: int
    exemplars_out: int
    wall_time: float
    operations_estimate: float
    mass_out: float = 0.0
    preference: float = 0.0

    def to_dict(self, timing: bool = True) -> dict:
        out = {"level": self.level, "clusterings_run": self.clusterings_run,
               "points_in": self.points_in, "exemplars_out": self.exemplars_out,
               "operations_estimate": self.operations_estimate,
               "mass_out": self.mass_out, "preference": self.preference}
        if timing:
            out["wall_time"] = self.wall_time
        return out


def plan(N: int, K: int, h: int) -> HiApPlan:
    """Branching factor b = ceil((N/K)^(1/(h+1)))."""
    if N < 1 or K < 1 or h < 0:
        raise InputError(f"need N >= 1, K >= 1, h >= 0; got N={N}, K={K}, h={h}")
    if K > N:
        raise InputError(f"cap K={K} exceeds N={N}")
    ratio = N / K
    b = max(1, math.ceil(ratio ** (1.0 / (h + 1))))
    # floating error in the root, e.g. 1000 ** (1/3) = 10.000000000000002
    if b > 1 and (b - 1) ** (h + 1) >= ratio:
        b -= 1
    if b ** h > N:
        raise PlanError(f"{b ** h} leaves for {N} points: a leaf subset would be empty")
    return HiApPlan(N, K, h, b)


def partition(n: int, p: HiApPlan, seed) -> list[np.ndarray]:
    """Leaf index sets: one seeded shuffle, then contiguous near-equal chunks."""
    if p.N != n:
        raise InputError(f"plan is for N={p.N}, data has {n} points")
    if p.h == 0:
        return [np.arange(n)]
    perm = np.random.default_rng(seed).permutation(n)
    leaves = np.array_split(perm, p.n_leaves)
    if min(len(x) for x in leaves) == 0:
        raise PlanError("empty leaf subset")
    return leaves


def _level_similarity(points, weights, s):
    # uniform -s diagonal: a merged group keeps the member nearest its
    # weighted center of mass
    return SimilarityMatrix(weighted_similarity_arrays(
        points, weights, None, s, absorb_distortion=False))


def _n_exemplars(points, weights, s, cfg):
    return solve(_level_similarity(points, weights, s), cfg).n_clusters


def calibrate_preference(points, weights, K: int, cfg: SolverConfig | None = None,
                         steps: int = 30) -> float:
    """Smallest s (up to log-bisection resolution) giving at most K exemplars.

    The bracket grows upward by factors of 10 from a tiny fraction of the
    squared diameter. Very large penalties are never tried: damped AP can
    stall in a state where most points self-point when s dwarfs every
    distance.
    """
    cfg = cfg or SolverConfig()
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = points.shape[0]
    if n <= K:
        return float(max(1e-12, np.finfo(float).tiny))
    d2 = pairwise_sq_dists(points)
    scale = float(d2.max())
    if scale == 0.0:
        return 1.0
    lo = scale * 1e-6
    if _n_exemplars(points, weights, lo, cfg) <= K:
        return lo
    hi = lo * 10.0
    while _n_exemplars(points, weights, hi, cfg) > K:
        lo, hi = hi, hi * 10.0
        if hi > scale * float(weights.sum()) * 1e3:
            raise InputError(f"no penalty found giving at most {K} exemplars")
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        if _n_exemplars(points, weights, mid, cfg) <= K:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1.0 + 1e-3:
            break
    return hi


def _run_group(points, weights, s, cfg):
    t0 = time.perf_counter()
    res = solve(_level_similarity(points, weights, s), cfg)
    return res, time.perf_counter() - t0


def cluster_hierarchical(data: Dataset, p: HiApPlan, s_schedule=None,
                         cfg: SolverConfig | None = None, seed=0, threads: int = 1,
                         reassign_nearest: bool = False, mass_scaled: bool = False):
    """Run Hi-AP. Returns (ClusteringResult over the original points, level reports).

    ``s_schedule[l]`` is the preference at level l (root l = 0, leaves
    l = h); ``None`` calibrates each level on its first clustering so it
    yields at most K exemplars. The final assignment follows the exemplar
    chain unless ``reassign_nearest`` is set.

    With ``mass_scaled`` the schedule holds penalties per unit mass and each
    clustering uses ``s_schedule[l] * (total weight of its points)``; for
    roughly uniform data this keeps the exemplar count per clustering
    independent of the subset size.
    """
    cfg = cfg or SolverConfig()
    if s_schedule is not None:
        s_schedule = [float(x) for x in s_schedule]
        if len(s_schedule) != p.h + 1:
            raise InputError(f"s_schedule needs {p.h + 1} entries, got {len(s_schedule)}")
        if any(not (x > 0 and math.isfinite(x)) for x in s_schedule):
            raise InputError("preferences must be positive and finite")
    leaves = partition(data.n, p, seed)
    pts, w = data.points, data.weights

    if mass_scaled and s_schedule is None:
        raise InputError("mass_scaled needs an explicit s_schedule")
    if p.h == 0 and s_schedule is not None and not mass_scaled and np.all(w == 1.0):
        # no hierarchy: exactly the flat solver
        t0 = time.perf_counter()
        res = solve(build_similarity(data, s_schedule[0]), cfg)
        rep = LevelReport(0, 1, data.n, res.n_clusters, time.perf_counter() - t0,
                          float(data.n) ** 2 * res.iterations_run, float(w.sum()),
                          s_schedule[0])
        return res, [rep]

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    mapper = pool.map if pool is not None else map
    # groups: list of index arrays into the original data (current representatives)
    groups = leaves
    top = np.arange(data.n)           # current representative of each original point
    mass = w.copy()                   # mass carried by each representative
    delta = np.zeros(data.n)
    reports = []
    iterations = 0
    converged = True
    schedule_used = []
    try:
        for level in range(p.h, -1, -1):
            t0 = time.perf_counter()
            if s_schedule is None:
                g0 = groups[0]
                s = calibrate_preference(pts[g0], mass[g0], p.K, cfg)
            else:
                s = s_schedule[level]
            if mass_scaled:
                jobs = [(pts[g], mass[g], s * float(mass[g].sum()), cfg) for g in groups]
            else:
                jobs = [(pts[g], mass[g], s, cfg) for g in groups]
            # penalty actually charged by the first clustering of the level
            schedule_used.append(jobs[0][2])
            results = list(mapper(lambda a: _run_group(*a), jobs))
            ops = 0.0
            outs = []
            remap = np.arange(data.n)
            for g, (res, _) in zip(groups, results):
                iterations += res.iterations_run
                converged &= res.converged
                ops += float(len(g)) ** 2 * res.iterations_run
                loc = res.assignment
                d2 = ((pts[g] - pts[g[loc]]) ** 2).sum(axis=1)
                new_mass = np.bincount(loc, weights=mass[g], minlength=len(g))
                new_delta = np.bincount(loc, weights=delta[g] + mass[g] * d2, minlength=len(g))
                ex = res.exemplars
                mass[g[ex]] = new_mass[ex]
                delta[g[ex]] = new_delta[ex]
                # whatever g[k] represented now follows g[loc[k]]
                remap[g] = g[loc]
                outs.append(np.sort(g[ex]))
            top = remap[top]
            reports.append(LevelReport(level, len(groups), int(sum(len(g) for g in groups)),
                                       int(sum(len(o) for o in outs)),
                                       time.perf_counter() - t0, ops,
                                       float(mass[np.concatenate(outs)].sum()),
                                       schedule_used[-1]))
            if level > 0:
                n_next = p.b ** (level - 1)
                chunks = np.array_split(np.arange(len(outs)), n_next)
                groups = [np.concatenate([outs[i] for i in ch]) for ch in chunks]
    finally:
        if pool is not None:
            pool.shutdown()

    exemplars = np.unique(top)
    if reassign_nearest:
        d2 = pairwise_sq_dists(pts, pts[exemplars])
        top = exemplars[np.argmin(d2, axis=1)]
        top[exemplars] = exemplars
    dist = float((w * ((pts - pts[top]) ** 2).sum(axis=1)).sum())
    s_leaf = schedule_used[0]
    res = ClusteringResult(
        assignment=top, exemplars=exemplars, energy=dist + len(exemplars) * s_leaf,
        distortion=dist, iterations_run=iterations, converged=bool(converged))
    return res, reports


def single_exemplar_limit(points, p: HiApPlan, seed=0, weights=None) -> int:
    """Final exemplar of Hi-AP when every clustering keeps one exemplar.

    With a penalty large enough that each run yields a single exemplar,
    AP returns the member minimising sum_j w_j |r_j - r_c|^2, i.e. the
    member nearest the weighted center of mass. This evaluates that limit
    on the same partition as :func:`cluster_hierarchical` in O(N d).
    Returns the index of the final exemplar.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    leaves = partition(n, p, seed)
    order = np.concatenate(leaves)
    sizes = np.array([len(x) for x in leaves])
    idx = order
    x = pts[order]
    m = w[order]
    for level in range(p.h, -1, -1):
        starts = np.r_[0, np.cumsum(sizes)[:-1]]
        tot = np.add.reduceat(m, starts)
        com = np.add.reduceat(x * m[:, None], starts) / tot[:, None]
        gid = np.repeat(np.arange(len(sizes)), sizes)
        d2 = ((x - com[gid]) ** 2).sum(axis=1)
        # nearest to the center of mass, smallest original index on ties
        pick = np.lexsort((idx, d2, gid))[starts]
        idx, x, m = idx[pick], x[pick], tot
        if level > 0:
            sizes = np.array([len(c) for c in np.array_split(np.arange(len(idx)),
                                                            p.b ** (level - 1))])
    return int(idx[0])

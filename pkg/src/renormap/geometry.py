"""Point sets, weights and negative squared Euclidean similarities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = ["Dataset", "SimilarityMatrix", "squared_distance", "pairwise_sq_dists",
           "build_similarity"]


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """N points in R^d with positive per-point weights.

    ``points`` is stored as an (N, d) float64 array and ``weights`` as an
    (N,) array; both are read-only. Omitting ``weights`` gives unit weights.
    """

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError(f"points must be a non-empty (N, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("points contain non-finite coordinates")
        if self.weights is None:
            w = np.ones(pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise InputError(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InputError("weights must be finite and strictly positive")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.points[idx], self.weights[idx])


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Dense n x n similarities; entry (i, i) holds minus the penalty of i.

    Entries may be any finite reals, so adversarial matrices can be built
    directly for testing.
    """

    entries: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.entries, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
            raise InputError(f"similarity must be a non-empty square matrix, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InputError("similarity matrix has non-finite entries")
        object.__setattr__(self, "entries", _frozen(s))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def preferences(self) -> np.ndarray:
        """Per-point penalties s_i = -S(i, i)."""
        return -np.diag(self.entries)


def squared_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    return float(diff @ diff)


def pairwise_sq_dists(x, y=None) -> np.ndarray:
    """Squared Euclidean distances between rows of ``x`` and rows of ``y``.

    Computed from explicit differences rather than the expanded dot-product
    form, so identical points give exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = x if y is None else np.asarray(y, dtype=np.float64)
    if x.shape[1] != y.shape[1]:
        raise InputError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    out = np.zeros((x.shape[0], y.shape[0]))
    # overflow shows up as inf and is rejected by the callers
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(x.shape[1]):
            diff = x[:, k, None] - y[None, :, k]
            diff *= diff
            out += diff
    return out


def build_similarity(data: Dataset, preference: float) -> SimilarityMatrix:
    """Unweighted similarity: -|r_i - r_k|^2 off the diagonal, -s on it.

    Weights are ignored here; see :func:`renormap.wap.build_weighted_similarity`.
    """
    if not np.isfinite(preference) or preference <= 0:
        raise InputError(f"preference must be a positive real, got {preference!r}")
    s = -pairwise_sq_dists(data.points)
    np.fill_diagonal(s, -float(preference))
    return SimilarityMatrix(s)

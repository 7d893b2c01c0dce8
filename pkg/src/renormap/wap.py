"""Weighted AP: similarities and energies for aggregated points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import ClusteringResult
from .errors import InputError
from .geometry import Dataset, SimilarityMatrix, pairwise_sq_dists

__all__ = ["WeightedExemplar", "build_weighted_similarity", "weighted_similarity_arrays",
           "wap_energy", "aggregate", "exemplar_arrays"]


@dataclass(frozen=True, eq=False)
class WeightedExemplar:
    """A point standing for ``weight`` original samples.

    ``internal_distortion`` is the weighted squared distance of everything
    it absorbed to its position.
    """

    position: np.ndarray
    weight: float = 1.0
    internal_distortion: float = 0.0

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(-1)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        if not np.all(np.isfinite(pos)):
            raise InputError("exemplar position is not finite")
        if not self.weight > 0:
            raise InputError(f"exemplar weight must be positive, got {self.weight}")
        if not self.internal_distortion >= 0:
            raise InputError("internal distortion must be non-negative")


def exemplar_arrays(exemplars: Sequence[WeightedExemplar]):
    """Stack positions, weights and internal distortions into arrays."""
    if len(exemplars) == 0:
        raise InputError("no exemplars")
    dims = {e.position.shape[0] for e in exemplars}
    if len(dims) != 1:
        raise InputError(f"exemplar dimension mismatch: {sorted(dims)}")
    pos = np.vstack([e.position for e in exemplars])
    w = np.array([e.weight for e in exemplars], dtype=np.float64)
    delta = np.array([e.internal_distortion for e in exemplars], dtype=np.float64)
    return pos, w, delta


def weighted_similarity_arrays(points, weights, internal_distortion, preference,
                               scale_penalty=False, absorb_distortion=True) -> np.ndarray:
    """Array form of :func:`build_weighted_similarity`.

    Row ``c`` is multiplied by the mass ``n_c``, so S(c, i) = -n_c d^2(c, i)
    while S(i, c) keeps the weight of ``i``. The diagonal is

    ``-(s + delta_c)``   default, the summed self-similarity of what c absorbed
    ``-(n_c s + delta_c)`` with ``scale_penalty=True``
    and the ``delta_c`` term is dropped when ``absorb_distortion`` is false.
    """
    if not np.isfinite(preference) or preference <= 0:
        raise InputError(f"preference must be a positive real, got {preference!r}")
    w = np.asarray(weights, dtype=np.float64)
    S = pairwise_sq_dists(points)
    S *= -w[:, None]
    diag = preference * w if scale_penalty else np.full(w.shape, float(preference))
    if absorb_distortion:
        diag = diag + np.asarray(internal_distortion, dtype=np.float64)
    np.fill_diagonal(S, -diag)
    return S


def build_weighted_similarity(exemplars: Sequence[WeightedExemplar], preference: float,
                              scale_penalty: bool = False,
                              absorb_distortion: bool = True) -> SimilarityMatrix:
    pos, w, delta = exemplar_arrays(exemplars)
    return SimilarityMatrix(weighted_similarity_arrays(
        pos, w, delta, preference, scale_penalty, absorb_distortion))


def wap_energy(exemplars: Sequence[WeightedExemplar], assignment, s: float,
               volume: float = 1.0) -> float:
    """Rescaled cost (1/Z) sum_i w_i (d^2(i, c_i) + (n/V) s).

    ``n`` is the number of clusters and Z the total weight, so the value is
    the mean distortion per unit mass plus n s / V.
    """
    if not volume > 0:
        raise InputError(f"volume must be positive, got {volume}")
    pos, w, _ = exemplar_arrays(exemplars)
    c = np.asarray(assignment, dtype=np.intp)
    if c.shape[0] != pos.shape[0] or np.any(c < 0) or np.any(c >= pos.shape[0]):
        raise InputError("assignment inconsistent with exemplars")
    if np.any(c[c] != c):
        raise InputError("assignment is infeasible: a target does not point to itself")
    n_clusters = len(np.unique(c))
    d2 = ((pos - pos[c]) ** 2).sum(axis=1)
    return float((w * (d2 + n_clusters * s / volume)).sum() / w.sum())


def aggregate(result: ClusteringResult, data: Dataset,
              internal_distortion=None) -> list[WeightedExemplar]:
    """Collapse each cluster onto its exemplar.

    Weights add up; the new internal distortion is the weighted squared
    distance of the members to the exemplar plus whatever the members had
    already absorbed (``internal_distortion``, zero for raw samples).
    """
    c = np.asarray(result.assignment, dtype=np.intp)
    if c.shape[0] != data.n:
        raise InputError(f"assignment has {c.shape[0]} entries for {data.n} points")
    prior = np.zeros(data.n) if internal_distortion is None else np.asarray(
        internal_distortion, dtype=np.float64)
    d2 = ((data.points - data.points[c]) ** 2).sum(axis=1)
    out = []
    for mu in np.unique(c):
        if c[mu] != mu:
            raise InputError(f"exemplar {mu} does not point to itself")
        members = c == mu
        out.append(WeightedExemplar(
            data.points[mu],
            float(data.weights[members].sum()),
            float((data.weights[members] * d2[members]).sum() + prior[members].sum()),
        ))
    return out

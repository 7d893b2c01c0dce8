"""Min-sum affinity propagation with the soft-constraint parameter q.

Message layout: ``A[i, mu]`` holds the availability a_{mu->i} and
``R[i, mu]`` the responsibility r_{i->mu}. An infinite ``q`` selects the
hard constraint (every exemplar must point to itself); a finite ``q`` is the
charge paid per exemplar that does not.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericDivergenceError, SizeError
from .geometry import SimilarityMatrix

__all__ = ["SolverConfig", "Messages", "ClusteringResult", "solve", "energy",
           "brute_force_minimize", "extract_assignment", "update_messages", "HARD"]

HARD = -math.inf
_JITTER_SEED = 0x5EED


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``jitter`` adds seeded noise of relative size ``jitter * max|S|`` to a
    private copy of the similarities to lift exact degeneracies (duplicated
    points, symmetric configurations); energies are always evaluated on the
    unperturbed matrix. Set it to 0 to iterate on the exact input.

    ``refine`` enables the medoid pass of the reference AP code after
    extraction: each cluster's exemplar is moved to the member with the
    best total similarity from the cluster, then points are reassigned.
    """

    q: float = HARD
    damping: float = 0.5
    max_iterations: int = 1000
    stability_window: int = 50
    jitter: float = 1e-10
    refine: bool = True

    def __post_init__(self):
        if math.isnan(self.q):
            raise InputError("q must not be NaN")
        if not 0.0 <= self.damping < 1.0:
            raise InputError(f"damping must lie in [0, 1), got {self.damping}")
        if self.max_iterations < 1 or self.stability_window < 1:
            raise InputError("max_iterations and stability_window must be positive")
        if self.stability_window > self.max_iterations:
            raise InputError("stability_window exceeds max_iterations")
        if self.jitter < 0:
            raise InputError("jitter must be non-negative")

    @property
    def hard(self) -> bool:
        return math.isinf(self.q)


@dataclass
class Messages:
    availability: np.ndarray
    responsibility: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)), np.zeros((n, n)))


@dataclass
class ClusteringResult:
    assignment: np.ndarray
    exemplars: np.ndarray
    energy: float
    distortion: float
    iterations_run: int = 0
    converged: bool = True
    messages: Messages | None = field(default=None, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)


def _violations(c):
    n = len(c)
    targeted = np.zeros(n, dtype=bool)
    targeted[c] = True
    return int(np.count_nonzero(targeted & (c != np.arange(n))))


def energy(sim: SimilarityMatrix, assignment, q: float = HARD) -> float:
    """E[c] = -sum_i S(i, c_i) plus the constraint charges.

    Under the hard constraint any exemplar that does not point to itself
    makes the assignment infeasible and ``inf`` is returned; with finite
    ``q`` each such exemplar costs ``q``.
    """
    c = np.asarray(assignment, dtype=np.intp).reshape(-1)
    n = sim.n
    if c.shape[0] != n:
        raise InputError(f"assignment has {c.shape[0]} entries for {n} points")
    if np.any(c < 0) or np.any(c >= n):
        raise InputError("assignment index out of range")
    base = -float(sim.entries[np.arange(n), c].sum())
    v = _violations(c)
    if v == 0:
        return base
    if math.isinf(q):
        return math.inf
    return base + q * v


def _distortion(sim, c):
    off = c != np.arange(len(c))
    return -float(sim[np.nonzero(off)[0], c[off]].sum())


def _make_result(sim, c, q, iterations, converged, messages=None):
    c = np.asarray(c, dtype=np.intp)
    self_pointing = c == np.arange(len(c))
    exemplars = np.unique(c[self_pointing[c]])
    return ClusteringResult(
        assignment=c,
        exemplars=exemplars,
        energy=energy(sim, c, q),
        distortion=_distortion(sim.entries, c),
        iterations_run=iterations,
        converged=converged,
        messages=messages,
    )


def extract_assignment(S, A, R=None) -> np.ndarray:
    """Exemplar assignment from availabilities, with standard cleanup.

    Raw choice c_i = argmax_mu (S(i, mu) + a_{mu->i}); points whose choice
    does not point to itself are moved to their most similar self-pointing
    index. If no index points to itself the one with the largest
    a_{i->i} + r_{i->i} is made the single exemplar.
    """
    n = S.shape[0]
    raw = np.argmax(S + A, axis=1)
    ex = np.nonzero(raw == np.arange(n))[0]
    if ex.size == 0:
        diag = np.diag(A) + (np.diag(R) if R is not None else 0.0)
        ex = np.array([int(np.argmax(diag))])
    c = ex[np.argmax(S[:, ex], axis=1)]
    c[ex] = ex
    return c


def _prune_once(S, c):
    """Drop the exemplar whose removal lowers the energy most, if any does."""
    ex = np.unique(c)
    if ex.size < 2:
        return None
    rows = np.arange(len(c))
    sub = S[:, ex].copy()
    pos = np.searchsorted(ex, c)
    own = sub[rows, pos].copy()
    sub[rows, pos] = -np.inf
    # removing ex[k] sends each of its members to its best other exemplar
    delta = np.zeros(ex.size)
    np.add.at(delta, pos, own - sub.max(axis=1))
    k = int(np.argmin(delta))
    tol = 1e-12 * max(1.0, float(np.abs(own).sum()))
    if delta[k] >= -tol:
        return None
    keep = np.delete(ex, k)
    new = keep[np.argmax(S[:, keep], axis=1)]
    new[keep] = keep
    return new


def refine_exemplars(S, c, max_passes=50) -> np.ndarray:
    """Local descent on the hard-constraint energy after extraction.

    Alternates medoid updates with reassignment; when that is stable, an
    exemplar whose removal lowers the energy is dropped and the loop
    resumes. No step raises the energy.
    """
    c = np.asarray(c, dtype=np.intp).copy()
    for _ in range(max_passes):
        c = _medoid_pass(S, c)
        pruned = _prune_once(S, c)
        if pruned is None:
            break
        c = pruned
    return c


def _medoid_pass(S, c, max_passes=20):
    for _ in range(max_passes):
        ex = []
        for mu in np.unique(c):
            members = np.nonzero(c == mu)[0]
            # score(i) = S(i,i) + sum_{j != i} S(j,i) over the cluster
            block = S[np.ix_(members, members)]
            score = block.sum(axis=0)
            # near-equal scores are ties; keep the smallest index
            tol = 1e-12 * max(1.0, float(np.max(np.abs(score))))
            ex.append(members[int(np.argmax(score >= score.max() - tol))])
        ex = np.sort(np.asarray(ex, dtype=np.intp))
        new = ex[np.argmax(S[:, ex], axis=1)]
        new[ex] = ex
        if np.array_equal(new, c):
            break
        c = new
    return c


def _jittered(S, jitter):
    if jitter == 0.0:
        return S.copy()
    scale = float(np.max(np.abs(S)))
    if scale == 0.0:
        scale = 1.0
    rng = np.random.default_rng(_JITTER_SEED)
    return S + (jitter * scale) * rng.standard_normal(S.shape)


def _update(S, A, R, q, lam, AS, tmp):
    """One synchronous sweep, in place: all responsibilities, then all availabilities.

    ``AS`` and ``tmp`` are n x n work buffers. Returns the raw choice
    argmax_mu (S(i, mu) + a_{mu->i}) taken before the sweep and whether the
    new messages are finite.
    """
    n = S.shape[0]
    rows = np.arange(n)
    diag = (rows, rows)
    # responsibilities: r_{i->mu} = S(i,mu) - max_{nu != mu}(a_{nu->i} + S(i,nu))
    np.add(A, S, out=AS)
    top = np.argmax(AS, axis=1)
    first = AS[rows, top]
    AS[rows, top] = -np.inf
    second = np.max(AS, axis=1)
    np.subtract(S, first[:, None], out=tmp)
    tmp[rows, top] = S[rows, top] - second
    if lam:
        R *= lam
        tmp *= 1.0 - lam
        R += tmp
    else:
        R[...] = tmp

    # availabilities
    np.maximum(R, 0.0, out=tmp)
    colsum = tmp.sum(axis=0)
    rdiag = R[diag].copy()
    # sum over j != i of max(0, r_{j->mu}); for mu != i it includes j = mu
    np.subtract(colsum[None, :], tmp, out=tmp)
    own = tmp[diag].copy()
    if math.isinf(q):
        base = np.minimum(rdiag, 0.0)
        self_av = own
    else:
        base = np.maximum(-q, np.minimum(rdiag, 0.0))
        self_av = np.minimum(q, own)
    tmp += base[None, :]
    np.minimum(tmp, 0.0, out=tmp)
    tmp[diag] = self_av
    if lam:
        A *= lam
        tmp *= 1.0 - lam
        A += tmp
    else:
        A[...] = tmp

    finite = bool(np.isfinite(colsum).all() and np.isfinite(A[diag]).all()
                  and np.isfinite(first).all())
    return top, finite


def update_messages(S, messages: Messages, q: float = HARD, damping: float = 0.0) -> Messages:
    """One damped sweep of the message equations on the similarity array ``S``.

    Returns new messages; the input is left untouched.
    """
    S = np.asarray(S, dtype=np.float64)
    A = np.array(messages.availability, dtype=np.float64)
    R = np.array(messages.responsibility, dtype=np.float64)
    n = S.shape[0]
    if S.shape != (n, n) or A.shape != (n, n) or R.shape != (n, n):
        raise InputError("messages and similarities must be n x n")
    with np.errstate(over="ignore", invalid="ignore"):
        _, finite = _update(S, A, R, q, damping, np.empty((n, n)), np.empty((n, n)))
    if not finite:
        raise NumericDivergenceError(1)
    return Messages(A, R)


def solve(sim: SimilarityMatrix, cfg: SolverConfig | None = None,
          keep_messages: bool = False) -> ClusteringResult:
    """Run damped synchronous min-sum updates to a stable exemplar set.

    Each iteration updates all responsibilities from the current
    availabilities, then all availabilities from the new responsibilities.
    Convergence means the (non-empty) set of self-pointing indices has not
    changed for ``cfg.stability_window`` consecutive iterations.
    """
    cfg = cfg or SolverConfig()
    n = sim.n
    if n == 1:
        return _make_result(sim, [0], cfg.q, 0, True)

    S = _jittered(sim.entries, cfg.jitter)
    lam = cfg.damping
    q = cfg.q
    rows = np.arange(n)

    A = np.zeros((n, n))
    R = np.zeros((n, n))
    AS = np.empty((n, n))
    tmp = np.empty((n, n))

    last = None
    stable = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            top, finite = _update(S, A, R, q, lam, AS, tmp)
        if not finite:
            raise NumericDivergenceError(it)

        ex = top == rows
        if last is not None and np.array_equal(ex, last):
            stable += 1
        else:
            stable = 0
        last = ex
        if stable >= cfg.stability_window and ex.any():
            converged = True
            break

    if not (np.isfinite(A).all() and np.isfinite(R).all()):
        raise NumericDivergenceError(it)
    c = extract_assignment(S, A, R)
    if cfg.refine:
        c = refine_exemplars(sim.entries, c)
    msgs = Messages(A, R) if keep_messages else None
    return _make_result(sim, c, q, it, converged, msgs)


def _best_assignment(S, targets, q):
    """Exact minimiser over assignments whose targets lie in ``targets``."""
    t = np.asarray(targets)
    c = t[np.argmax(S[:, t], axis=1)]
    if math.isinf(q):
        c[t] = t
        return c
    for mu in t:
        others = t[t != mu]
        if others.size == 0:
            c[mu] = mu
            continue
        nu = others[np.argmax(S[mu, others])]
        c[mu] = mu if -S[mu, mu] <= -S[mu, nu] + q else nu
    return c


def brute_force_minimize(sim: SimilarityMatrix, q: float = HARD) -> ClusteringResult:
    """Exact minimiser of the energy by enumerating target sets (n <= 10).

    For the hard constraint the target set is the exemplar set and each
    other point joins its most similar exemplar. With finite ``q`` every
    target may instead pay ``q`` and point elsewhere in the set. Ties go to
    the lexicographically smallest exemplar set.
    """
    n = sim.n
    if n > 10:
        raise SizeError(f"brute force limited to n <= 10, got {n}")
    S = sim.entries
    best = None
    for size in range(1, n + 1):
        for targets in itertools.combinations(range(n), size):
            c = _best_assignment(S, targets, q)
            e = energy(sim, c, q)
            key = tuple(np.unique(c[c[c] == c]))
            if best is None:
                best = (e, key, c)
                continue
            tol = 1e-12 * max(1.0, abs(best[0]))
            if e < best[0] - tol or (abs(e - best[0]) <= tol and key < best[1]):
                best = (e, key, c)
    return _make_result(sim, best[2], q, 0, True)

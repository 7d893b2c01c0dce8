"""Distortion, radial histograms, extreme-value fits and Monte Carlo checks
of how exemplar statistics propagate through the hierarchy."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .engine import ClusteringResult
from .errors import EstimationError, InputError
from .geometry import Dataset
from .hiap import plan, single_exemplar_limit
from .rap import _fit_curvature, default_neighbours, estimate_shape_factor
from .synth import sample_shape, sample_weibull

__all__ = ["RadialHistogram", "WeibullFit", "distortion", "equal_mass_edges",
           "radial_distribution", "fit_weibull", "fit_gamma_radial", "kl_divergence",
           "RecurrenceTable", "recurrence_check", "exemplar_radii", "fig4_table",
           "fig6_table"]

DEFAULT_BINS = 64


@dataclass(frozen=True, eq=False)
class RadialHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=np.float64)
        c = np.asarray(self.counts, dtype=np.int64)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise InputError("bin edges must be strictly increasing")
        if c.shape != (e.size - 1,) or np.any(c < 0):
            raise InputError("counts must be one nonnegative integer per bin")
        if int(c.sum()) != int(self.total):
            raise InputError("counts do not sum to total")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "counts", c)

    @property
    def density(self) -> np.ndarray:
        """f(x) estimate per bin (counts / (total * width))."""
        return self.counts / (self.total * np.diff(self.bin_edges))

    @property
    def cdf(self) -> np.ndarray:
        """F at the right edge of every bin."""
        return np.cumsum(self.counts) / self.total


@dataclass(frozen=True)
class WeibullFit:
    alpha: float
    d_over_2: float
    goodness: float
    pvalue: float = float("nan")

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputError("alpha must be positive")

    def cdf(self, x):
        return -np.expm1(-self.alpha * np.asarray(x, dtype=np.float64) ** self.d_over_2)


def distortion(data: Dataset, result: ClusteringResult) -> float:
    """D(c) = sum_i w_i |r_i - r_{c_i}|^2."""
    c = np.asarray(result.assignment, dtype=np.intp)
    if c.shape[0] != data.n:
        raise InputError(f"assignment has {c.shape[0]} entries for {data.n} points")
    d2 = ((data.points - data.points[c]) ** 2).sum(axis=1)
    return float((data.weights * d2).sum())


def equal_mass_edges(samples, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Quantile edges of the pooled samples; repeated quantiles are merged."""
    if bins < 1:
        raise InputError(f"bins must be at least 1, got {bins}")
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InputError("no samples")
    e = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)))
    e[0] = min(e[0], 0.0)
    if e.size < 2:
        e = np.array([e[0], e[0] + max(1.0, abs(e[0]))])
    # make the top edge strictly exceed the largest sample
    e[-1] = np.nextafter(e[-1], np.inf)
    return e


def _histogram(x, edges):
    counts, _ = np.histogram(x, bins=edges)
    return RadialHistogram(edges, counts, int(counts.sum()))


def radial_distribution(exemplars, origin=None, bins: int = DEFAULT_BINS,
                        edges=None) -> RadialHistogram:
    """Histogram of x = |r - origin|^2, equal-mass bins unless ``edges`` given."""
    r = np.asarray(exemplars, dtype=np.float64)
    if r.ndim == 1:
        r = r[:, None]
    if r.shape[0] < 1:
        raise InputError("need at least one exemplar")
    if bins < 1:
        raise InputError(f"bins must be at least 1, got {bins}")
    o = np.zeros(r.shape[1]) if origin is None else np.asarray(origin, dtype=np.float64)
    x = ((r - o) ** 2).sum(axis=1)
    if edges is None:
        edges = equal_mass_edges(x, bins)
    edges = np.asarray(edges, dtype=np.float64)
    if x.min() < edges[0] or x.max() >= edges[-1]:
        raise InputError("samples fall outside the given edges")
    return _histogram(x, edges)


def _check_samples(samples):
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < 30:
        raise InputError(f"need at least 30 samples, got {x.size}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InputError("samples must be finite and nonnegative")
    if not np.any(x > 0):
        raise EstimationError("all samples are zero; the fit is degenerate")
    return x


def fit_weibull(samples, d: int) -> WeibullFit:
    """Maximum likelihood alpha for F(x) = 1 - exp(-alpha x^(d/2)).

    With the exponent fixed, alpha = n / sum x_i^(d/2). The KS statistic
    against the fitted law is reported as goodness.
    """
    if d < 1:
        raise InputError(f"dimension must be positive, got {d}")
    x = _check_samples(samples)
    k = d / 2.0
    alpha = x.size / float(np.sum(x ** k))
    ks = sps.kstest(x, lambda t: -np.expm1(-alpha * np.maximum(t, 0.0) ** k))
    return WeibullFit(alpha, k, float(ks.statistic), float(ks.pvalue))


def fit_gamma_radial(samples, d: int):
    """Moment fit of sigma for the center-of-mass law Gamma(d/2, scale 2 sigma/d).

    Returns (sigma, KS statistic).
    """
    if d < 1:
        raise InputError(f"dimension must be positive, got {d}")
    x = _check_samples(samples)
    sigma = float(x.mean())
    ks = sps.kstest(x, sps.gamma(d / 2.0, scale=2.0 * sigma / d).cdf)
    return sigma, float(ks.statistic)


def kl_divergence(p_hist: RadialHistogram, q_hist: RadialHistogram) -> float:
    """sum_k p_k log(p_k / q_k) with add-one smoothing, (c_k + 1) / (T + K).

    Adding one count per bin is the additive smoothing eps = 1/T of each
    empirical frequency, renormalised.
    """
    if p_hist.bin_edges.shape != q_hist.bin_edges.shape or not np.array_equal(
            p_hist.bin_edges, q_hist.bin_edges):
        raise InputError("histograms must share bin edges")
    k = p_hist.counts.size
    p = (p_hist.counts + 1.0) / (p_hist.total + k)
    q = (q_hist.counts + 1.0) / (q_hist.total + k)
    return max(0.0, float(np.sum(p * np.log(p / q))))


# -- exemplar selection Monte Carlo ----------------------------------------------

def _draw(shape, n, d, rng):
    if shape == "weibull":
        # unit variance: sigma = Gamma(1 + 2/d) alpha^(-2/d)
        alpha = math.gamma(1 + 2 / d) ** (d / 2)
        return sample_weibull(n, d, alpha, rng)
    return sample_shape(shape, n, d, 1.0, rng)


def _select(samples):
    """Per row block (R, M, d): the sample nearest the block's center of mass."""
    com = samples.mean(axis=1, keepdims=True)
    d2 = ((samples - com) ** 2).sum(axis=2)
    pick = np.argmin(d2, axis=1)
    return samples[np.arange(samples.shape[0]), pick]


@dataclass
class RecurrenceTable:
    """Per-level exemplar statistics from independent Monte Carlo chains.

    ``sigma[h, j]`` is the mean squared distance to the origin at level h in
    chain j, multiplied by M^(2h/d) so all levels share one scale, and
    ``omega[h, j]`` the estimated shape factor. Level 0 is the start law.
    """

    d: int
    M: int
    repetitions: int
    shape: str
    sigma: np.ndarray
    omega: np.ndarray

    @property
    def chains(self) -> int:
        return self.sigma.shape[1]

    @property
    def gamma(self) -> float:
        """M^(1 - 2/d)."""
        return self.M ** (1.0 - 2.0 / self.d)

    def rows(self):
        """(h, sigma mean, sigma se, omega mean, omega se); se is per single chain."""
        out = []
        for h in range(self.sigma.shape[0]):
            s, w = self.sigma[h], self.omega[h]
            out.append((h, float(s.mean()), float(_sd(s)), float(w.mean()), float(_sd(w))))
        return out

    def omega_residual(self, h: int):
        """omega^(h+1) - (1 + omega^(h) / M^(1-2/d)) per chain."""
        return self.omega[h + 1] - (1.0 + self.omega[h] / self.gamma)

    def sigma1_residual(self):
        """sigma^(1) - (sigma^(0)/omega^(0)) (1 + omega^(0)/M^(1-2/d)) per chain."""
        w0 = self.omega[0]
        return self.sigma[1] - self.sigma[0] / w0 * (1.0 + w0 / self.gamma)

    def check(self, residual, n_se: float = 3.0):
        """(mean residual, standard error of one chain, passes)."""
        r = np.asarray(residual)
        se = _sd(r)
        m = float(r.mean())
        return m, se, bool(abs(m) <= n_se * se)


def _sd(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x.std(ddof=1)) if x.size > 1 else float("nan")


def _directions(n, d, rng):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g


def _radial_sampler(radii, d):
    """Inverse-CDF sampler for an isotropic law given by sample radii.

    Inside the ball of the k nearest samples (k as in the shape-factor
    estimate) the law is the fitted profile t^(d-1) exp(-a t^2); outside
    it is the empirical law made continuous by interpolating the quantile
    function of u = r^d between order statistics. The core is where the
    next level draws its exemplars, and an empirical law has too few
    points there to resolve its density.
    """
    r = np.sort(np.asarray(radii, dtype=np.float64))
    n = r.size
    k = min(default_neighbours(n), n - 1)
    R = math.sqrt(0.5 * (r[k - 1] ** 2 + r[k] ** 2))
    a = _fit_curvature(r[:k] / R, d)
    t = np.linspace(0.0, 1.0, 4097)
    dens = t ** (d - 1) * np.exp(-a * t * t)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]))])
    cdf /= cdf[-1]
    core = k / n
    u_knots = np.concatenate([[R ** d], r[k:] ** d])
    p_knots = np.linspace(core, 1.0, u_knots.size)

    def draw(v):
        out = np.empty(v.size)
        inner = v < core
        out[inner] = R * np.interp(v[inner] / core, cdf, t)
        out[~inner] = np.interp(v[~inner], p_knots, u_knots) ** (1.0 / d)
        return out

    return draw


def _next_level(radii, n_out, M, d, rng, batch=20_000):
    """``n_out`` exemplars, each nearest the center of mass of M draws from
    the isotropic law of ``radii`` (see :func:`_radial_sampler`)."""
    draw = _radial_sampler(radii, d)
    out = np.empty((n_out, d))
    for lo in range(0, n_out, batch):
        n = min(batch, n_out - lo)
        r = draw(rng.random(n * M))
        x = _directions(n * M, d, rng) * r[:, None]
        out[lo:lo + n] = _select(x.reshape(n, M, d))
    return out


def _chain(d, M, h_max, repetitions, shape, seed, exact_omega0, pool):
    rng = np.random.default_rng(seed)
    sig = np.empty(h_max + 1)
    om = np.empty(h_max + 1)
    start = _draw(shape, repetitions, d, rng)
    sig[0] = float((start ** 2).sum(axis=1).mean())
    om[0] = exact_omega0 if exact_omega0 is not None else estimate_shape_factor(start).omega
    level = np.empty((pool, d))
    for lo in range(0, pool, 20_000):
        n = min(20_000, pool - lo)
        level[lo:lo + n] = _select(_draw(shape, n * M, d, rng).reshape(n, M, d))
    for h in range(1, h_max + 1):
        head = level[:repetitions]
        sig[h] = float((head ** 2).sum(axis=1).mean()) * M ** (2.0 * h / d)
        om[h] = estimate_shape_factor(head).omega
        if h < h_max:
            level = _next_level(np.sqrt((level ** 2).sum(axis=1)), pool, M, d, rng)
    return sig, om


def recurrence_check(d: int, M: int, h_max: int = 3, repetitions: int = 10_000,
                     shape: str = "gaussian", seed=0, chains: int = 10,
                     threads: int = 1, start_omega: float | None = None,
                     pool_factor: int = 10) -> RecurrenceTable:
    """Monte Carlo of repeated nearest-to-center-of-mass selection.

    Level 0 draws ``repetitions`` samples of the start law (unit variance).
    Level 1 selects, ``repetitions`` times, the sample nearest the center of
    mass among M fresh draws; every later level does the same with M draws
    from the empirical law of the previous level's exemplars. The laws are
    isotropic, so a draw is a radius from the radial law of a pool of
    ``pool_factor * repetitions`` exemplars (fitted profile in the core,
    empirical outside) with a uniform direction;
    the statistics use ``repetitions`` exemplars per level. Each of
    ``chains`` independent replicates gives one column of the table, so the
    spread across chains is the standard error of a single run.
    ``start_omega`` replaces the level-0 estimate by a known value.
    """
    if d <= 2:
        raise InputError(f"the recurrence holds for d > 2, got d={d}")
    if M < 30:
        raise InputError(f"need M >= 30, got {M}")
    if h_max < 1 or repetitions < 50 or chains < 1 or pool_factor < 1:
        raise InputError("need h_max >= 1, repetitions >= 50, chains >= 1")
    seeds = np.random.SeedSequence(seed).spawn(chains)

    def job(s):
        return _chain(d, M, h_max, repetitions, shape, s, start_omega,
                      pool_factor * repetitions)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(job, seeds))
    else:
        outs = [job(s) for s in seeds]
    sigma = np.stack([o[0] for o in outs], axis=1)
    omega = np.stack([o[1] for o in outs], axis=1)
    return RecurrenceTable(d, M, repetitions, shape, sigma, omega)


# -- hierarchy experiments ----------------------------------------------------------

def exemplar_radii(n_points: int, dim: int, h: int, repetitions: int, seed=0,
                   shape: str = "gaussian") -> np.ndarray:
    """Squared distance to the true center of the final Hi-AP exemplar.

    Each repetition draws ``n_points`` samples of one unit-variance cluster
    and runs the one-exemplar-per-clustering hierarchy of depth ``h``.
    """
    p = plan(n_points, 1, h)
    ss = np.random.SeedSequence(seed).spawn(repetitions)
    out = np.empty(repetitions)
    for i, s in enumerate(ss):
        rng = np.random.default_rng(s)
        x = _draw(shape, n_points, dim, rng)
        part_seed = int(rng.integers(2 ** 63))
        k = single_exemplar_limit(x, p, seed=part_seed)
        out[i] = float((x[k] ** 2).sum())
    return out


def fig4_table(dim: int, levels=(1, 2, 3), n_points: int = 100_000, repetitions: int = 1000,
               seed=0, bins: int = DEFAULT_BINS):
    """Radial exemplar laws per hierarchy depth on shared equal-mass bins.

    Returns (edges, {h: RadialHistogram}, {h: WeibullFit}, {h: radii}).
    """
    radii = {h: exemplar_radii(n_points, dim, h, repetitions, seed=(seed, h)) for h in levels}
    edges = equal_mass_edges(np.concatenate(list(radii.values())), bins)
    hists = {h: _histogram(r, edges) for h, r in radii.items()}
    fits = {h: fit_weibull(r, dim) for h, r in radii.items()}
    return edges, hists, fits, radii


def fig6_table(dims, levels=(2, 3, 6), n_points: int = 100_000, repetitions: int = 1000,
               seed=0):
    """sigma_ex^(h) / sigma_ex^(1) - 1 per dimension and depth."""
    rows = []
    for d in dims:
        base = exemplar_radii(n_points, d, 1, repetitions, seed=(seed, d, 1)).mean()
        for h in levels:
            s = exemplar_radii(n_points, d, h, repetitions, seed=(seed, d, h)).mean()
            rows.append((int(d), int(h), float(s / base - 1.0)))
    return rows

"""Command line: data generation, clustering, RAP scans, statistics, benchmark.

Exit codes: 0 success, 2 usage, 3 bad input, 4 numeric divergence,
5 rap-scan found no plateau.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .engine import HARD, SolverConfig, solve
from .errors import InputError, NumericDivergenceError, RenormapError
from .geometry import Dataset, build_similarity
from .hiap import HiApPlan, calibrate_preference, cluster_hierarchical, plan
from .rap import ShapeFactor, closed_form_shape_factor, estimate_shape_factor, rap_scan
from .stats import (fig4_table, fig6_table, fit_weibull, kl_divergence, radial_distribution,
                    recurrence_check, equal_mass_edges)
from .synth import generate, make_mixture, separability
from .wap import weighted_similarity_arrays
from .geometry import SimilarityMatrix


EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DIVERGENCE, EXIT_NO_PLATEAU = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# -- config handling ----------------------------------------------------------------

def _defaults(parser, args):
    """Effective config: parser defaults < --config file < explicit flags."""
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"config {args.config}: {exc.msg} at line {exc.lineno}") from exc
        if not isinstance(loaded, dict):
            raise InputError(f"config {args.config} must hold a JSON object")
        explicit = _explicit_flags(parser, args)
        for k, v in loaded.items():
            key = k.replace("-", "_")
            if key not in cfg:
                raise InputError(f"config {args.config}: unknown key {k!r}")
            if key not in explicit:
                cfg[key] = v
    return argparse.Namespace(**cfg, func=args.func)


def _explicit_flags(parser, args):
    """Destinations of the options that appear on the command line."""
    argv = getattr(args, "_argv", [])
    seen = set()
    for action in _all_actions(parser):
        if action.option_strings and any(
                a == o or a.startswith(o + "=") for a in argv for o in action.option_strings):
            seen.add(action.dest)
    return seen


def _all_actions(parser):
    out = list(parser._actions)
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for sub in a.choices.values():
                out.extend(_all_actions(sub))
    return out


def _solver_cfg(a):
    q = HARD if a.q is None else float(a.q)
    return SolverConfig(q=q, damping=a.damping, max_iterations=a.max_iterations,
                        stability_window=min(a.stability_window, a.max_iterations))


def _meta(a, command, **extra):
    eff = {k: v for k, v in sorted(vars(a).items())
           if k not in ("func", "_argv") and not k.startswith("_")}
    if "threads" in eff:
        eff["threads"] = _threads(a)
    out = {"command": command, "config": eff}
    out.update(extra)
    return out


def _threads(a):
    t = getattr(a, "threads", None)
    return max(1, int(t)) if t is not None else (os.cpu_count() or 1)


# -- gen -------------------------------------------------------------------------------

def cmd_gen(a):
    if not a.out:
        raise UsageError("gen needs --out")
    per = a.per_cluster
    if a.total is not None:
        if a.total % a.n_star:
            raise InputError(f"--total {a.total} is not a multiple of --n-star {a.n_star}")
        per = a.total // a.n_star
    spec = make_mixture(a.n_star, a.dim, a.eta, a.shape, a.variance, per, seed=a.seed)
    data, labels = generate(spec, seed=a.seed)
    side = {"spec": spec.to_dict(), "n_points": data.n, "seed": a.seed}
    if spec.n_star > 1:
        rep = separability(spec)
        side["separability"] = {"d_min": rep.d_min, "r_max": rep.r_max, "eta": rep.eta,
                                "well_separated": rep.well_separated}
    io.write_points(a.out, data.points, labels=labels, meta=_meta(a, "gen"))
    io.write_json(str(a.out) + ".json", side)
    return EXIT_OK


# -- cluster --------------------------------------------------------------------------

def _write_result(prefix, data, res, meta, extra):
    rows = ((i, int(c)) for i, c in enumerate(res.assignment))
    io.write_table(f"{prefix}.assign.csv", ["point_index", "exemplar_index"], rows, meta)
    ex_rows = []
    for mu in res.exemplars:
        members = res.assignment == mu
        ex_rows.append([int(mu)] + data.points[mu].tolist()
                       + [float(data.weights[members].sum())])
    header = ["exemplar_index"] + [f"x_{k + 1}" for k in range(data.dim)] + ["weight"]
    io.write_table(f"{prefix}.exemplars.csv", header, ex_rows, meta)
    summary = {"energy": res.energy, "distortion": res.distortion,
               "n_clusters": res.n_clusters, "iterations": res.iterations_run,
               "converged": res.converged}
    summary.update(extra)
    summary["meta"] = meta
    io.write_json(f"{prefix}.json", summary)


def cmd_cluster(a):
    data, delta, _, _ = io.read_points(a.input, a.weight_column)
    if a.s is None and a.algorithm != "hiap":
        raise UsageError(f"cluster {a.algorithm} needs --s")
    if a.algorithm == "scap" and a.q is None:
        raise UsageError("cluster scap needs --q")
    if a.algorithm != "scap" and a.q is not None:
        raise UsageError("--q only applies to scap")
    cfg = _solver_cfg(a)
    extra = {}
    if a.algorithm in ("ap", "scap"):
        res = solve(build_similarity(data, a.s), cfg)
    elif a.algorithm == "wap":
        S = weighted_similarity_arrays(data.points, data.weights,
                                       delta if delta is not None else np.zeros(data.n),
                                       a.s, scale_penalty=a.scale_penalty,
                                       absorb_distortion=not a.bare)
        res = solve(SimilarityMatrix(S), cfg)
    else:
        res, p, reports = _run_hiap(a, data, cfg)
        extra = {"plan": p.to_dict(),
                 "levels": [r.to_dict(timing=False) for r in reports]}
        lines = [io.dumps(r.to_dict(timing=False)) for r in reports]
        try:
            Path(f"{a.out_prefix}.levels.jsonl").write_text(
                "".join(x + "\n" for x in lines), encoding="utf-8", newline="\n")
        except OSError as exc:
            raise OSError(f"cannot write {a.out_prefix}.levels.jsonl: {exc.strerror}") from exc
    _write_result(a.out_prefix, data, res, _meta(a, f"cluster {a.algorithm}"), extra)
    return EXIT_OK


def _run_hiap(a, data, cfg):
    K = a.K if a.K is not None else max(1, data.n // 10)
    if a.branching is not None:
        # explicit branching factor overrides the planner
        if a.branching < 1 or a.branching ** a.levels > data.n:
            raise InputError(f"--branching {a.branching} gives empty leaves at depth {a.levels}")
        p = HiApPlan(data.n, K, a.levels, a.branching)
    else:
        p = plan(data.n, K, a.levels)
    if a.s_schedule is not None:
        try:
            schedule = [float(x) for x in a.s_schedule.split(",")]
        except ValueError:
            raise UsageError(f"--s-schedule must be comma-separated numbers, got {a.s_schedule!r}")
        if len(schedule) != a.levels + 1:
            raise UsageError(f"--s-schedule needs {a.levels + 1} values (root first)")
    elif a.s is not None:
        schedule = [a.s] * (a.levels + 1)
    else:
        schedule = None
    res, reports = cluster_hierarchical(data, p, schedule, cfg, seed=a.seed,
                                        threads=_threads(a),
                                        reassign_nearest=a.reassign_nearest)
    return res, p, reports


# -- rap-scan -------------------------------------------------------------------------

def _omega(a, data, labels):
    v = a.omega
    d = data.dim
    if v == "unity":
        return ShapeFactor.unity()
    if v == "auto":
        return estimate_shape_factor(data.points, labels)
    names = {"gaussian": "gaussian", "l1": "uniform-l1-ball", "l2": "uniform-l2-ball",
             "weibull": "weibull"}
    if v in names:
        return closed_form_shape_factor(names[v], d, a.omega_variant)
    try:
        return ShapeFactor(float(v), "user")
    except ValueError:
        raise UsageError(f"--omega must be auto, unity, gaussian, l1, l2 or a number, got {v!r}")


def cmd_rap_scan(a):
    data, _, labels, _ = io.read_points(a.input)
    if not (0 < a.s_min < a.s_max) or a.s_points < 2:
        raise UsageError("need 0 < --s-min < --s-max and --s-points >= 2")
    grid = np.geomspace(a.s_min, a.s_max, a.s_points)
    centers = None
    side = Path(str(a.input) + ".json")
    if side.exists():
        try:
            centers = np.asarray(json.loads(side.read_text())["spec"]["centers"])
        except (KeyError, json.JSONDecodeError):
            centers = None
    om = _omega(a, data, labels if a.omega == "auto" else None)
    res = rap_scan(data, grid, a.levels, a.subset_size, om, _solver_cfg(a), seed=a.seed,
                   centers=centers, threads=_threads(a))
    meta = _meta(a, "rap-scan", omega_first_level=om.omega, omega_source=om.source)
    rows = ((s, lev, n, err) for s, lev, n, _, _, err, _ in res.rows())
    io.write_table(a.out, ["s", "level", "n_clusters", "mean_error"], rows, meta)
    summary = res.summary()
    summary["totals"] = res.totals.tolist()
    summary["spread"] = res.spread.tolist()
    summary["misses"] = res.misses.tolist()
    summary["meta"] = meta
    io.write_json(str(a.out) + ".json", summary)
    if res.detected_s_star is None:
        print(f"rap-scan: {res.diagnostic}", file=sys.stderr)
        return EXIT_NO_PLATEAU
    return EXIT_OK


# -- bench ------------------------------------------------------------------------------

def bench_rows(n_grid, h_grid, K, seed, cfg, dim=2, timing=True, threads=1, pilot=1024):
    """Operations and wall time of Hi-AP on uniform data.

    The penalty is a rate per unit mass calibrated once on a pilot sample
    so a pilot-sized clustering yields K/2 exemplars; every clustering
    charges rate * (its mass), which keeps the exemplar count per
    clustering independent of the subset size.
    """
    x0 = np.random.default_rng([seed, 0]).uniform(size=(pilot, dim))
    s0 = calibrate_preference(x0, np.ones(pilot), max(1, K // 2), cfg)
    rate = s0 / pilot
    rows = []
    for h in h_grid:
        for n in n_grid:
            x = np.random.default_rng([seed, n]).uniform(size=(n, dim))
            p = plan(n, K, h)
            t0 = time.perf_counter()
            _, reps = cluster_hierarchical(Dataset(x), p, [rate] * (h + 1), cfg, seed=seed,
                                           threads=threads, mass_scaled=True)
            wall = time.perf_counter() - t0
            ops = sum(r.operations_estimate for r in reps)
            rows.append((n, h, wall if timing else None, ops))
    return rows, rate


def fit_slopes(rows):
    out = {}
    for h in sorted({r[1] for r in rows}):
        pts = [(r[0], r[3]) for r in rows if r[1] == h]
        if len(pts) < 2:
            continue
        xs = np.log([p[0] for p in pts])
        ys = np.log([p[1] for p in pts])
        out[h] = float(np.polyfit(xs, ys, 1)[0])
    return out


def cmd_bench(a):
    cfg = _solver_cfg(a)
    rows, rate = bench_rows(a.n_grid, a.h_grid, a.K, a.seed, cfg, a.dim, not a.no_timing,
                            _threads(a), a.pilot)
    slopes = fit_slopes(rows)
    meta = _meta(a, "bench", rate=rate, slopes={str(k): v for k, v in slopes.items()})
    header = ["N", "h", "wall_time", "operations_estimate", "slope"]
    io.write_table(a.out, header,
                   ((n, h, w, ops, slopes.get(h)) for n, h, w, ops in rows), meta)
    return EXIT_OK


# -- stats -----------------------------------------------------------------------------

def _read_samples(path):
    meta, header, arr = io.read_table(path)
    if "x" in header:
        return arr[:, header.index("x")]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if xcols:
        return (arr[:, xcols] ** 2).sum(axis=1)
    raise InputError(f"{path}: need an 'x' column or x_1 .. x_d columns")


def cmd_stats(a):
    meta = _meta(a, f"stats {a.stat}")
    if a.stat == "radial":
        data, _, _, _ = io.read_points(a.input)
        origin = None if a.origin is None else np.asarray(a.origin, dtype=np.float64)
        edges = None
        if a.reference:
            ref, _, _, _ = io.read_points(a.reference)
            o = np.zeros(data.dim) if origin is None else origin
            pooled = np.concatenate([((data.points - o) ** 2).sum(axis=1),
                                     ((ref.points - o) ** 2).sum(axis=1)])
            edges = equal_mass_edges(pooled, a.bins)
        h = radial_distribution(data.points, origin, a.bins, edges)
        rows = [(h.bin_edges[i], h.bin_edges[i + 1], int(h.counts[i]), h.density[i])
                for i in range(h.counts.size)]
        if a.reference:
            hr = radial_distribution(ref.points, origin, a.bins, edges)
            meta["kl"] = kl_divergence(h, hr)
        io.write_table(a.out, ["x_lo", "x_hi", "count", "density"], rows, meta)
    elif a.stat == "fit-weibull":
        x = _read_samples(a.input)
        f = fit_weibull(x, a.dim)
        io.write_table(a.out, ["alpha", "d_over_2", "ks", "pvalue", "n"],
                       [(f.alpha, f.d_over_2, f.goodness, f.pvalue, x.size)], meta)
    elif a.stat == "kl":
        p, _, _, _ = io.read_points(a.input)
        q, _, _, _ = io.read_points(a.reference)
        xp = (p.points ** 2).sum(axis=1)
        xq = (q.points ** 2).sum(axis=1)
        edges = equal_mass_edges(np.concatenate([xp, xq]), a.bins)
        kl = kl_divergence(radial_distribution(p.points, None, a.bins, edges),
                           radial_distribution(q.points, None, a.bins, edges))
        io.write_table(a.out, ["kl"], [(kl,)], meta)
    elif a.stat == "recurrence":
        t = recurrence_check(a.dim, a.m, a.h_max, a.reps, a.shape, seed=a.seed,
                             chains=a.chains, threads=_threads(a),
                             start_omega=1.0 if a.shape == "weibull" else None)
        rows = []
        for h, sm, sse, wm, wse in t.rows():
            pred = "" if h < 2 else 1.0 + float(t.omega[h - 1].mean()) / t.gamma
            rows.append((h, sm, sse, wm, wse, pred))
        meta["omega_checks"] = {str(h): list(t.check(t.omega_residual(h)))
                                for h in range(1, a.h_max)}
        meta["sigma1_check"] = list(t.check(t.sigma1_residual()))
        io.write_table(a.out, ["h", "sigma_hat", "sigma_se", "omega_hat", "omega_se",
                               "omega_predicted"], rows, meta)
    elif a.stat == "fig4":
        levels = tuple(range(1, a.levels + 1))
        edges, hists, fits, _ = fig4_table(a.dim, levels, a.n_points, a.reps, a.seed, a.bins)
        meta["alpha"] = {str(h): f.alpha for h, f in fits.items()}
        rows = []
        for i in range(edges.size - 1):
            rows.append([edges[i], edges[i + 1]] + [hists[h].density[i] for h in levels])
        io.write_table(a.out, ["x_lo", "x_hi"] + [f"f_h{h}" for h in levels], rows, meta)
    elif a.stat == "fig6":
        rows = fig6_table(a.dims, tuple(a.h_list), a.n_points, a.reps, a.seed)
        io.write_table(a.out, ["d", "h", "sigma_ratio_minus_one"], rows, meta)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def _solver_flags(p, q=False):
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--stability-window", type=int, default=50)
    if q:
        p.add_argument("--q", type=float, default=None,
                       help="soft-constraint charge (scap only)")


def build_parser():
    ap = argparse.ArgumentParser(prog="renormap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with flag values (flags win)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: available cores)")
        p.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen", help="sample a synthetic mixture")
    common(g)
    g.add_argument("--n-star", type=int, default=10)
    g.add_argument("--dim", type=int, default=5)
    g.add_argument("--eta", type=float, default=None)
    g.add_argument("--shape", default="gaussian",
                   choices=["gaussian", "uniform-l2-ball", "uniform-l1-ball"])
    g.add_argument("--variance", type=float, default=1.0)
    g.add_argument("--per-cluster", type=int, default=30)
    g.add_argument("--total", type=int, default=None)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("cluster", help="run ap, scap, wap or hiap")
    common(c)
    c.add_argument("algorithm", choices=["ap", "scap", "wap", "hiap"])
    c.add_argument("--input", required=True)
    c.add_argument("--out-prefix", required=True)
    c.add_argument("--s", type=float, default=None, help="penalty (minus self-similarity)")
    _solver_flags(c, q=True)
    c.add_argument("--levels", type=int, default=1, help="hiap depth h")
    c.add_argument("--K", "--cap", dest="K", type=int, default=None, help="hiap exemplar cap")
    c.add_argument("--branching", type=int, default=None,
                   help="hiap branching factor (default: from the planner)")
    c.add_argument("--s-schedule", default=None,
                   help="hiap penalties per level, root first: s0,s1,...")
    c.add_argument("--weight-column", action="store_true",
                   help="last input column holds point weights (headerless files)")
    c.add_argument("--reassign-nearest", action="store_true")
    c.add_argument("--scale-penalty", action="store_true",
                   help="wap: diagonal -(n_c s + delta_c)")
    c.add_argument("--bare", action="store_true", help="wap: leave delta_c out of the diagonal")
    c.set_defaults(func=cmd_cluster)

    r = sub.add_parser("rap-scan", help="scan penalties for the self-similar point")
    common(r)
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--s-min", type=float, required=True)
    r.add_argument("--s-max", type=float, required=True)
    r.add_argument("--s-points", type=int, default=25)
    r.add_argument("--levels", type=int, default=2)
    r.add_argument("--subset-size", type=int, default=300)
    r.add_argument("--omega", default="auto")
    r.add_argument("--omega-variant", choices=["exact", "printed"], default="exact")
    _solver_flags(r)
    r.set_defaults(func=cmd_rap_scan, q=None)

    b = sub.add_parser("bench", help="Hi-AP cost versus N")
    common(b)
    b.add_argument("--n-grid", type=int, nargs="+", default=[2 ** k for k in range(10, 14)])
    b.add_argument("--h-grid", type=int, nargs="+", default=[1])
    b.add_argument("--K", type=int, default=16)
    b.add_argument("--dim", type=int, default=2)
    b.add_argument("--pilot", type=int, default=1024,
                   help="size of the uniform sample used to calibrate the penalty rate")
    b.add_argument("--no-timing", action="store_true", help="leave wall_time empty")
    b.add_argument("--out", required=True)
    _solver_flags(b)
    b.set_defaults(func=cmd_bench, q=None, damping=0.9)

    s = sub.add_parser("stats", help="statistics and experiment drivers")
    s.add_argument("stat", choices=["radial", "fit-weibull", "kl", "recurrence", "fig4", "fig6"])
    common(s)
    s.add_argument("--input")
    s.add_argument("--reference")
    s.add_argument("--out", required=True)
    s.add_argument("--origin", type=float, nargs="+", default=None)
    s.add_argument("--bins", type=int, default=64)
    s.add_argument("--dim", type=int, default=5)
    s.add_argument("--dims", type=int, nargs="+", default=[2, 3, 5, 10])
    s.add_argument("--m", type=int, default=100)
    s.add_argument("--h-max", type=int, default=3)
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--chains", type=int, default=10)
    s.add_argument("--shape", default="gaussian",
                   choices=["gaussian", "uniform-l2-ball", "uniform-l1-ball", "weibull"])
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--h-list", type=int, nargs="+", default=[2, 3, 6])
    s.add_argument("--n-points", type=int, default=100_000)
    s.set_defaults(func=cmd_stats)
    return ap


_NEEDS_INPUT = {"radial": ("input",), "fit-weibull": ("input",), "kl": ("input", "reference")}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _defaults(parser, args)
        if args.command == "stats":
            for name in _NEEDS_INPUT.get(args.stat, ()):
                if not getattr(args, name):
                    raise UsageError(f"stats {args.stat} needs --{name}")
        return args.func(args)
    except UsageError as exc:
        print(f"renormap: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericDivergenceError as exc:
        print(f"renormap: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (InputError, RenormapError, OSError) as exc:
        print(f"renormap: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

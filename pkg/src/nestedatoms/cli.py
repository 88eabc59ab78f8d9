"""Command-line interface: simulate / fit / eval / prior / bound.

CSV contracts (all files carry a header row):
  x.csv       group_id,x1..xq           one row per group
  y.csv       group_id,y1..yp           one row per observation; rows of a
                                        group contiguous; first-appearance
                                        order defines the group index
  s labels    group_id,label            one row per group
  m labels    group_id,obs_idx,label    obs_idx 1-based within its group

Exit codes: 0 success, 2 malformed input file or unreadable path, 3 invalid
configuration, 4 numerical fault. The NAM_THREADS environment variable caps
the fit parallelism P.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import cavi, metrics, prior
from .core import CAM, NAM, Hyperparameters, NestedDataset
from .errors import (
    ConfigError,
    DataFormatError,
    NestedAtomsError,
    NumericalFault,
)
from .simulate import SimScenario, simulate

EXIT_PARSE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# CSV reading/writing


def _fmt(value):
    return repr(float(value))


def _open_rows(path):
    try:
        handle = open(path, newline="")
    except OSError as err:
        raise DataFormatError(f"{path}: cannot open ({err})") from err
    with handle:
        yield from enumerate(csv.reader(handle), start=1)


def _parse_floats(fields, path, line_no):
    try:
        return [float(f) for f in fields]
    except ValueError as err:
        raise DataFormatError(
            f"{path}:{line_no}: non-numeric field ({err})"
        ) from err


def _parse_int(field, path, line_no, what):
    try:
        return int(field)
    except ValueError as err:
        raise DataFormatError(
            f"{path}:{line_no}: {what} is not an integer: {field!r}"
        ) from err


def read_x_csv(path):
    """-> (group_ids, (J, q) array)."""
    ids, rows, width = [], [], None
    for line_no, fields in _open_rows(path):
        if line_no == 1:
            if not fields or fields[0] != "group_id":
                raise DataFormatError(
                    f"{path}:1: expected header starting with group_id"
                )
            width = len(fields) - 1
            if width < 1:
                raise DataFormatError(f"{path}:1: no coordinate columns")
            continue
        if len(fields) != width + 1:
            raise DataFormatError(
                f"{path}:{line_no}: expected {width + 1} fields, "
                f"got {len(fields)}"
            )
        ids.append(fields[0])
        rows.append(_parse_floats(fields[1:], path, line_no))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate group_id")
    return ids, np.asarray(rows)


def read_y_csv(path):
    """-> (group_ids in first-appearance order, list of (n_j, p) blocks)."""
    ids, blocks, width = [], [], None
    seen = set()
    current = None
    for line_no, fields in _open_rows(path):
        if line_no == 1:
            if not fields or fields[0] != "group_id":
                raise DataFormatError(
                    f"{path}:1: expected header starting with group_id"
                )
            width = len(fields) - 1
            if width < 1:
                raise DataFormatError(f"{path}:1: no coordinate columns")
            continue
        if len(fields) != width + 1:
            raise DataFormatError(
                f"{path}:{line_no}: expected {width + 1} fields, "
                f"got {len(fields)}"
            )
        gid = fields[0]
        if gid != current:
            if gid in seen:
                raise DataFormatError(
                    f"{path}:{line_no}: rows of group {gid!r} are not "
                    "contiguous"
                )
            seen.add(gid)
            ids.append(gid)
            blocks.append([])
            current = gid
        blocks[-1].append(_parse_floats(fields[1:], path, line_no))
    if not blocks:
        raise DataFormatError(f"{path}: no data rows")
    return ids, [np.asarray(b) for b in blocks]


def read_group_labels(path):
    """-> (group_ids, labels array)."""
    ids, labels = [], []
    for line_no, fields in _open_rows(path):
        if line_no == 1:
            if fields != ["group_id", "label"]:
                raise DataFormatError(
                    f"{path}:1: expected header group_id,label"
                )
            continue
        if len(fields) != 2:
            raise DataFormatError(
                f"{path}:{line_no}: expected 2 fields, got {len(fields)}"
            )
        ids.append(fields[0])
        labels.append(_parse_int(fields[1], path, line_no, "label"))
    if not ids:
        raise DataFormatError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate group_id")
    return ids, np.asarray(labels, dtype=np.int64)


def read_obs_labels(path):
    """-> (group_ids in first-appearance order, list of label arrays).

    obs_idx must run 1..n_j within each group, which catches misaligned or
    reordered prediction files early.
    """
    ids, blocks = [], []
    seen = set()
    current = None
    for line_no, fields in _open_rows(path):
        if line_no == 1:
            if fields != ["group_id", "obs_idx", "label"]:
                raise DataFormatError(
                    f"{path}:1: expected header group_id,obs_idx,label"
                )
            continue
        if len(fields) != 3:
            raise DataFormatError(
                f"{path}:{line_no}: expected 3 fields, got {len(fields)}"
            )
        gid = fields[0]
        obs_idx = _parse_int(fields[1], path, line_no, "obs_idx")
        label = _parse_int(fields[2], path, line_no, "label")
        if gid != current:
            if gid in seen:
                raise DataFormatError(
                    f"{path}:{line_no}: rows of group {gid!r} are not "
                    "contiguous"
                )
            seen.add(gid)
            ids.append(gid)
            blocks.append([])
            current = gid
        expected = len(blocks[-1]) + 1
        if obs_idx != expected:
            raise DataFormatError(
                f"{path}:{line_no}: obs_idx {obs_idx} out of order "
                f"(expected {expected})"
            )
        blocks[-1].append(label)
    if not ids:
        raise DataFormatError(f"{path}: no data rows")
    return ids, [np.asarray(b, dtype=np.int64) for b in blocks]


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as err:
        raise DataFormatError(f"{path}: cannot write ({err})") from err


def write_x_csv(path, group_ids, x):
    header = ["group_id"] + [f"x{i + 1}" for i in range(x.shape[1])]
    _write_csv(
        path, header,
        ([gid] + [_fmt(v) for v in row] for gid, row in zip(group_ids, x)),
    )


def write_y_csv(path, group_ids, blocks):
    width = blocks[0].shape[1]
    header = ["group_id"] + [f"y{i + 1}" for i in range(width)]

    def rows():
        for gid, block in zip(group_ids, blocks):
            for row in block:
                yield [gid] + [_fmt(v) for v in row]

    _write_csv(path, header, rows())


def write_group_labels(path, group_ids, labels):
    _write_csv(
        path, ["group_id", "label"],
        ([gid, int(lab)] for gid, lab in zip(group_ids, labels)),
    )


def write_obs_labels(path, group_ids, blocks):
    def rows():
        for gid, block in zip(group_ids, blocks):
            for idx, lab in enumerate(block, start=1):
                yield [gid, idx, int(lab)]

    _write_csv(path, ["group_id", "obs_idx", "label"], rows())


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    scenario = SimScenario(
        J=args.groups,
        n=args.obs_per_group,
        p=args.p,
        q=args.q,
        K_true=args.gc,
        L_true=args.oc,
        alpha_sim=args.alpha,
        beta_sim=args.beta,
        kernel="student-t" if args.kernel in ("t", "student-t") else args.kernel,
        df=args.df,
        omit_r=args.omit_r,
        seed=args.seed,
    )
    data, truth = simulate(scenario)
    os.makedirs(args.out, exist_ok=True)
    if data.x is not None:
        write_x_csv(os.path.join(args.out, "x.csv"), data.group_ids, data.x)
    write_y_csv(os.path.join(args.out, "y.csv"), data.group_ids, data.y)
    write_group_labels(
        os.path.join(args.out, "truth_s.csv"), data.group_ids, truth.S_true
    )
    write_obs_labels(
        os.path.join(args.out, "truth_m.csv"), data.group_ids, truth.M_true
    )
    print(
        f"wrote {data.n_groups} groups / {data.total_obs} observations "
        f"to {args.out}"
    )
    return 0


def _resolve_workers(requested):
    cap = os.environ.get("NAM_THREADS")
    if cap is None:
        return max(1, requested)
    try:
        cap = int(cap)
    except ValueError as err:
        raise ConfigError(f"NAM_THREADS is not an integer: {cap!r}") from err
    if cap < 1:
        raise ConfigError("NAM_THREADS must be at least 1")
    return max(1, min(requested, cap))


def cmd_fit(args):
    variant = args.variant.lower()
    ids_y, blocks = read_y_csv(args.y)
    x = None
    if args.x is not None:
        ids_x, x = read_x_csv(args.x)
        if ids_x != ids_y:
            raise DataFormatError(
                "group ids of x and y files disagree "
                f"(first mismatch near group {next(a for a, b in zip(ids_x, ids_y) if a != b)!r})"
                if any(a != b for a, b in zip(ids_x, ids_y))
                else "group counts of x and y files disagree"
            )
    if variant == NAM and x is None:
        raise ConfigError("variant nam requires --x")
    data = NestedDataset(y=blocks, x=x if variant == NAM else None,
                         group_ids=ids_y)

    hyper = Hyperparameters.defaults(
        p=data.p,
        q=data.q if variant == NAM else None,
        K=args.gc_trunc,
        L=args.oc_trunc,
        variant=variant,
    )
    hyper.a_alpha, hyper.b_alpha = args.a_alpha, args.b_alpha
    hyper.a_beta, hyper.b_beta = args.a_beta, args.b_beta
    config = cavi.CaviConfig(
        tol=args.tol,
        max_iter=args.max_iter,
        seed=args.seed,
        init=args.init,
        init_jitter=args.jitter,
    )
    workers = _resolve_workers(args.workers)

    start = time.perf_counter()
    summary = cavi.fit_restarts(
        data, hyper, config, n_restarts=args.restarts, n_workers=workers
    )
    total = time.perf_counter() - start
    best = summary.best

    os.makedirs(args.out, exist_ok=True)
    write_group_labels(
        os.path.join(args.out, "s_hat.csv"), data.group_ids, best.S_hat
    )
    write_obs_labels(
        os.path.join(args.out, "m_hat.csv"), data.group_ids, best.M_hat
    )
    _write_csv(
        os.path.join(args.out, "elbo_trace.csv"),
        ["iteration", "elbo"],
        ([i + 1, _fmt(v)] for i, v in enumerate(best.elbo_trace)),
    )

    boundary_gc = int(best.S_hat.max()) >= hyper.K
    boundary_oc = max(int(m.max()) for m in best.M_hat) >= hyper.L
    if boundary_gc:
        print(
            f"warning: group truncation boundary K={hyper.K} is occupied; "
            "consider re-running with a larger --gc-trunc",
            file=sys.stderr,
        )
    if boundary_oc:
        print(
            f"warning: observation truncation boundary L={hyper.L} is "
            "occupied; consider re-running with a larger --oc-trunc",
            file=sys.stderr,
        )
    if not best.converged:
        print(
            f"warning: best restart stopped at max_iter={config.max_iter} "
            "before meeting the tolerance",
            file=sys.stderr,
        )

    manifest = {
        "command": "fit",
        "variant": variant,
        "data": {
            "groups": data.n_groups,
            "total_obs": data.total_obs,
            "p": data.p,
            "q": data.q,
        },
        "hyper": {
            "K": hyper.K,
            "L": hyper.L,
            "a_alpha": hyper.a_alpha,
            "b_alpha": hyper.b_alpha,
            "a_beta": hyper.a_beta,
            "b_beta": hyper.b_beta,
            "lambda0_y": hyper.lambda0_y,
            "nu0_y": hyper.nu0_y,
            "lambda0_x": hyper.lambda0_x,
            "nu0_x": hyper.nu0_x,
        },
        "config": {
            "tol": config.tol,
            "max_iter": config.max_iter,
            "seed": config.seed,
            "init": config.init,
            "init_jitter": config.init_jitter,
        },
        "restarts": summary.n_restarts,
        "workers": workers,
        "restart_final_elbos": summary.final_elbos,
        "restart_converged": summary.converged,
        "restart_iterations": summary.iterations,
        "restart_errors": summary.errors,
        "selected_restart": summary.best_index,
        "best_elbo": best.elbo,
        "converged": best.converged,
        "iterations": best.iterations,
        "n_gc": best.n_gc,
        "n_oc": best.n_oc,
        "max_gc_index": best.max_gc_index,
        "max_oc_index": best.max_oc_index,
        "truncation_boundary_hit": {"gc": boundary_gc, "oc": boundary_oc},
        "timings": {
            "total_s": total,
            "per_restart_s": summary.wall_times,
        },
    }
    manifest_path = os.path.join(args.out, "manifest.json")
    with open(manifest_path, "w") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")
    print(
        f"best of {summary.n_restarts} restarts: ELBO {best.elbo:.6f} "
        f"(restart {summary.best_index}), {best.n_gc} group clusters, "
        f"{best.n_oc} observation clusters; results in {args.out}"
    )
    return 0


def cmd_eval(args):
    ids_ps, pred_s = read_group_labels(args.pred_s)
    ids_ts, true_s = read_group_labels(args.truth_s)
    ids_pm, pred_m = read_obs_labels(args.pred_m)
    ids_tm, true_m = read_obs_labels(args.truth_m)
    if ids_ps != ids_ts or ids_pm != ids_tm or ids_ps != ids_pm:
        raise DataFormatError(
            "group ids disagree across prediction/truth files"
        )
    for j, (pm, tm) in enumerate(zip(pred_m, true_m)):
        if pm.shape != tm.shape:
            raise DataFormatError(
                f"group {ids_pm[j]!r}: {pm.size} predicted observation "
                f"labels vs {tm.size} true"
            )

    per_group = metrics.per_group_oc_ari(pred_m, true_m)
    report = {
        "gc_ari": metrics.adjusted_rand_index(pred_s, true_s),
        "oc_ari_per_group_mean": float(per_group.mean()),
        "oc_ari_per_group_sd": float(per_group.std(ddof=1))
        if per_group.size > 1
        else 0.0,
        "overall_oc_ari": metrics.overall_oc_ari(pred_m, true_m),
        "n_gc_predicted": metrics.count_clusters(pred_s),
        "n_gc_true": metrics.count_clusters(true_s),
        "n_oc_predicted": metrics.count_clusters(np.concatenate(pred_m)),
        "n_oc_true": metrics.count_clusters(np.concatenate(true_m)),
        "groups": len(ids_ps),
    }
    text = json.dumps(report, indent=2)
    if args.out is not None:
        with open(args.out, "w") as handle:
            handle.write(text + "\n")
    print(text)
    return 0


def cmd_prior(args):
    spec = prior.PriorSpec(
        alpha=args.alpha, beta=args.beta, hx=args.hx, hy=args.hy
    )
    group_co, obs_co = prior.coclustering_probs(args.alpha, args.beta)
    report = {
        "closed_form": {
            "mean": prior.prior_mean(spec),
            "variance": prior.prior_variance(spec),
            "group_coclustering": group_co,
            "obs_coclustering": obs_co,
            "correlation": prior.prior_correlation(spec),
        }
    }
    if args.mc:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(args.seed))
        )
        est = prior.mc_prior_estimates(
            args.alpha, args.beta, args.hx, args.hy,
            n_draws=args.mc, rng=rng, trunc=args.trunc,
        )
        report["monte_carlo"] = {
            "n_draws": est["n_draws"],
            "truncation": args.trunc,
            **{
                key: {"estimate": val[0], "se": val[1]}
                for key, val in est.items()
                if key != "n_draws"
            },
        }
    print(json.dumps(report, indent=2))
    return 0


def cmd_bound(args):
    spec = prior.TruncationSpec(
        alpha=args.alpha, beta=args.beta, K=args.gc_trunc, L=args.oc_trunc,
        J=args.groups, N=args.total_obs,
    )
    report = {
        "epsilon": prior.truncation_bound(spec),
        "alpha": args.alpha,
        "beta": args.beta,
        "K": args.gc_trunc,
        "L": args.oc_trunc,
        "J": args.groups,
        "N": args.total_obs,
    }
    print(json.dumps(report, indent=2))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nam",
        description="Nested atoms mixture models: simulate, fit, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--groups", type=int, default=100)
    sim.add_argument("--obs-per-group", type=int, default=100)
    sim.add_argument("--p", type=int, default=2,
                     help="observation-level dimension")
    sim.add_argument("--q", type=int, default=2,
                     help="group-level dimension")
    sim.add_argument("--gc", type=int, default=4,
                     help="true number of group clusters")
    sim.add_argument("--oc", type=int, default=3,
                     help="true number of observation clusters")
    sim.add_argument("--alpha", type=float, default=None,
                     help="fixed group concentration (default: Gamma(25,1))")
    sim.add_argument("--beta", type=float, default=None,
                     help="fixed obs concentration (default: Gamma(25,1))")
    sim.add_argument("--kernel", choices=["gaussian", "t", "student-t"],
                     default="gaussian")
    sim.add_argument("--df", type=float, default=3.0,
                     help="degrees of freedom for the t kernel")
    sim.add_argument("--omit-r", type=int, default=0,
                     help="drop this many group-level coordinates")
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_simulate)

    fit_p = sub.add_parser("fit", help="run multi-restart inference")
    fit_p.add_argument("--x", help="group-level CSV (required for nam)")
    fit_p.add_argument("--y", required=True, help="observation CSV")
    fit_p.add_argument("--out", required=True, help="output directory")
    fit_p.add_argument("--variant", choices=[NAM, CAM], default=NAM)
    fit_p.add_argument("--gc-trunc", type=int, default=30,
                       help="group truncation level K")
    fit_p.add_argument("--oc-trunc", type=int, default=30,
                       help="observation truncation level L")
    fit_p.add_argument("--restarts", type=int, default=50)
    fit_p.add_argument("--workers", type=int, default=1,
                       help="parallel restarts (capped by NAM_THREADS)")
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.add_argument("--tol", type=float, default=1e-5)
    fit_p.add_argument("--max-iter", type=int, default=10000)
    fit_p.add_argument("--init",
                       choices=["perturbed-prior", "random-responsibility"],
                       default="perturbed-prior")
    fit_p.add_argument("--jitter", type=float, default=1.0,
                       help="scale of the initial atom-mean perturbation")
    fit_p.add_argument("--a-alpha", type=float, default=1.0)
    fit_p.add_argument("--b-alpha", type=float, default=1.0)
    fit_p.add_argument("--a-beta", type=float, default=1.0)
    fit_p.add_argument("--b-beta", type=float, default=1.0)
    fit_p.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="score predictions against truth")
    ev.add_argument("--pred-s", required=True)
    ev.add_argument("--pred-m", required=True)
    ev.add_argument("--truth-s", required=True)
    ev.add_argument("--truth-m", required=True)
    ev.add_argument("--out", help="also write the JSON report here")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("prior", help="closed-form prior summaries")
    pr.add_argument("--alpha", type=float, required=True)
    pr.add_argument("--beta", type=float, required=True)
    pr.add_argument("--hx", type=float, required=True)
    pr.add_argument("--hy", type=float, required=True)
    pr.add_argument("--mc", type=int, default=0,
                    help="verify with this many Monte-Carlo draws")
    pr.add_argument("--trunc", type=int, default=1000)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_prior)

    bd = sub.add_parser("bound", help="truncation error bound")
    bd.add_argument("--alpha", type=float, required=True)
    bd.add_argument("--beta", type=float, required=True)
    bd.add_argument("--gc-trunc", type=int, required=True)
    bd.add_argument("--oc-trunc", type=int, required=True)
    bd.add_argument("--groups", type=int, required=True)
    bd.add_argument("--total-obs", type=int, required=True)
    bd.set_defaults(func=cmd_bound)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFault as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except NestedAtomsError as err:  # pragma: no cover - safety net
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

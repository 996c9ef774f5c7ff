"""Command-line interface: estimate, select-r, infer, constrain, simulate, mc-check.

Every subcommand reads delimited input, writes delimited tables plus a
JSON summary into --output, and renders report figures next to them
unless --no-figures is given.  Exit codes: 0 success, 2 usage error,
3 data error, 4 numerical error.
"""

import argparse
import os
import sys

import numpy as np

from . import figures, io
from .constrained import build_restrictions, constrained_solve, parse_restriction_spec
from .errors import (
    DataError,
    InvalidParameterError,
    NumericalError,
    PanelFactorError,
)
from .estimators import estimate_apc, estimate_pc, estimate_rpc, suggest_gamma
from .factor_count import default_rmax, scree, select_r_regularized
from .inference import (
    ci_common,
    ci_factor,
    ci_loading,
    covariance_estimates,
    residual_matrix,
)
from .simulation import (
    DgpConfig,
    check_coverage,
    check_rate,
    check_selection,
    generate_panel,
)

_PENALTIES = ("p1", "p2", "p3")


# =========================================================================
# small parsers
# =========================================================================

def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise InvalidParameterError("expected comma-separated integers, got %r" % text)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise InvalidParameterError("expected comma-separated numbers, got %r" % text)


def _size_list(text):
    sizes = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.lower().split("x")
        if len(bits) != 2:
            raise InvalidParameterError("size %r is not of the form NxT" % part)
        try:
            sizes.append((int(bits[0]), int(bits[1])))
        except ValueError:
            raise InvalidParameterError("size %r is not of the form NxT" % part)
    return sizes


def _load_panel(args):
    return io.ingest_csv(args.input, transpose=args.transpose,
                         apply_standardization=not args.no_standardize)


def _say(msg):
    print(msg)


# =========================================================================
# subcommands
# =========================================================================

def cmd_estimate(args):
    panel = _load_panel(args)
    if args.estimator == "apc":
        fd = estimate_apc(panel, args.r)
    elif args.estimator == "pc":
        fd = estimate_pc(panel, args.r)
    else:
        gamma = args.gamma
        if gamma is None:
            gamma = suggest_gamma(panel, args.r)
            _say("using suggested gamma = %.6g" % gamma)
        fd = estimate_rpc(panel, args.r, gamma)
    paths = io.emit_report(fd, args.output, fmt=args.format, panel=panel)
    if not args.no_figures:
        kmax = min(min(panel.shape), max(10, 2 * args.r))
        paths["scree_figure"] = figures.scree_plot(
            scree(panel, kmax=kmax),
            os.path.join(args.output, "scree.png"), selected_r=args.r,
        )
        paths["factor_figure"] = figures.factor_series_plot(
            fd, os.path.join(args.output, "factors.png")
        )
    _say("fitted %s with r=%d; explained variance share %.4f"
         % (fd.flavor, fd.r, float(np.sum(fd.D2))))
    _say("wrote %s" % ", ".join(sorted(os.path.basename(p) for p in paths.values())))
    return 0


def cmd_select_r(args):
    panel = _load_panel(args)
    rmax = args.rmax
    if rmax is None:
        rmax = default_rmax(panel.n_units, panel.n_periods)
        _say("using rmax = %d" % rmax)
    names = _PENALTIES if args.penalty == "all" else (args.penalty,)
    results = {}
    for name in names:
        results[name] = select_r_regularized(panel, rmax=rmax,
                                             gamma=args.gamma,
                                             penalty_name=name)
        io.emit_report(results[name], args.output, fmt=args.format,
                       basename="rank-%s" % name)
        _say("penalty %s: selected r = %d" % (name, results[name].selected_r))
    if not args.no_figures:
        figures.criterion_plot(results,
                               os.path.join(args.output, "criterion.png"))
        first = results[names[0]]
        figures.scree_plot(first.ssr_values[:-1] - first.ssr_values[1:],
                           os.path.join(args.output, "scree.png"),
                           selected_r=first.selected_r)
    return 0


def cmd_infer(args):
    panel = _load_panel(args)
    T, N = panel.shape
    periods = _int_list(args.periods)
    units = _int_list(args.units)
    for t in periods:
        if not 0 <= t < T:
            raise InvalidParameterError("period %d outside [0, %d)" % (t, T))
    for i in units:
        if not 0 <= i < N:
            raise InvalidParameterError("unit %d outside [0, %d)" % (i, N))
    fd = estimate_apc(panel, args.r)
    resid = residual_matrix(panel, fd)
    cov = covariance_estimates(fd, resid, t_indices=periods, i_indices=units,
                               bandwidth=args.bandwidth)
    cis = [ci_factor(fd, cov, t, level=args.level) for t in periods]
    cis += [ci_loading(fd, cov, i, level=args.level) for i in units]
    cis += [ci_common(fd, cov, i, t, level=args.level)
            for i in units for t in periods]
    paths = io.emit_report(cis, args.output, fmt=args.format)
    if not args.no_figures:
        paths["figure"] = figures.interval_plot(
            cis, os.path.join(args.output, "intervals.png")
        )
    _say("built %d intervals at level %.2f (bandwidth %d)"
         % (len(cis), args.level, cov.hac_bandwidth))
    return 0


def cmd_constrain(args):
    panel = _load_panel(args)
    cs = None
    if args.restrictions is not None:
        try:
            with open(args.restrictions, "r") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError("cannot read %s: %s" % (args.restrictions, exc))
        primitives = parse_restriction_spec(text)
        cs = build_restrictions(primitives, panel.n_units, args.r)
        _say("compiled %d restriction rows" % cs.m)
    fit = constrained_solve(panel, args.r, args.gamma, cs=cs, tau=args.tau,
                            tol=args.tol, max_iter=args.max_iter)
    paths = io.emit_report(fit, args.output, fmt=args.format)
    if not args.no_figures:
        paths["figure"] = figures.objective_trace_plot(
            fit, os.path.join(args.output, "objective.png")
        )
    _say("converged in %d sweeps; objective %.8g; violation %.3g"
         % (fit.iterations, fit.objective_trace[-1], fit.constraint_violation))
    return 0


def cmd_simulate(args):
    cfg = DgpConfig(
        args.n_units, args.n_periods, args.r,
        factor_process=args.factor_process, rho_f=args.rho_f,
        loading_dist=args.loading_dist,
        error_cross_corr=args.cross_corr, error_serial_corr=args.serial_corr,
        noise_scale=args.noise_scale, weak_factors=args.weak_factors,
        seed=args.seed,
    )
    panel, F0, L0, e = generate_panel(cfg, args.replication)
    os.makedirs(args.output, exist_ok=True)
    io.write_matrix_csv(os.path.join(args.output, "panel.csv"), panel.X)
    io.write_matrix_csv(os.path.join(args.output, "true-factors.csv"), F0)
    io.write_matrix_csv(os.path.join(args.output, "true-loadings.csv"), L0)
    io.write_matrix_csv(os.path.join(args.output, "true-errors.csv"), e)
    echo = {
        "n_units": cfg.n_units, "n_periods": cfg.n_periods, "r": cfg.r,
        "factor_process": cfg.factor_process, "rho_f": cfg.rho_f,
        "loading_dist": cfg.loading_dist,
        "loading_mu": cfg.loading_mu, "loading_sigma": cfg.loading_sigma,
        "error_cross_corr": cfg.error_cross_corr,
        "error_serial_corr": cfg.error_serial_corr,
        "noise_scale": cfg.noise_scale, "weak_factors": cfg.weak_factors,
        "seed": cfg.seed, "replication": args.replication,
        "timestamp": io.timestamp(),
    }
    io.write_json(os.path.join(args.output, "dgp.json"), echo)
    _say("wrote %d x %d panel with r=%d to %s"
         % (cfg.n_periods, cfg.n_units, cfg.r, args.output))
    return 0


# =========================================================================
# Monte-Carlo configuration files
# =========================================================================

_DGP_KEYS = {
    "n_units": int, "n_periods": int, "r": int, "factor_process": str,
    "rho_f": float, "loading_dist": str, "loading_mu": "floats",
    "loading_sigma": "floats", "error_cross_corr": float,
    "error_serial_corr": float, "noise_scale": float, "weak_factors": int,
    "seed": int,
}
_ENGINE_KEYS = {
    "mode": str, "metric": str, "sizes": "sizes", "reps": int, "stat": str,
    "level": float, "target": str, "rmax": int, "penalties": "strs",
    "gammas": "floats", "bandwidth": int,
}


def read_config(path):
    """Parse a key = value file; '#' starts a comment."""
    try:
        with open(path, "r") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError("cannot read %s: %s" % (path, exc))
    out = {}
    for k, line in enumerate(lines):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(
                "config line %d: expected key = value, got %r" % (k + 1, line)
            )
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise InvalidParameterError("config line %d: duplicate key %r"
                                        % (k + 1, key))
        out[key] = value.strip()
    return out


def _convert(key, value, kind):
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind == "floats":
            return _float_list(value)
        if kind == "sizes":
            return _size_list(value)
        if kind == "strs":
            return [v.strip() for v in value.split(",") if v.strip()]
        return value
    except (ValueError, InvalidParameterError):
        raise InvalidParameterError("config key %r: bad value %r" % (key, value))


def cmd_mc_check(args):
    raw = read_config(args.config)
    known = {}
    for key, value in raw.items():
        if key in _DGP_KEYS:
            known[key] = _convert(key, value, _DGP_KEYS[key])
        elif key in _ENGINE_KEYS:
            known[key] = _convert(key, value, _ENGINE_KEYS[key])
        else:
            raise InvalidParameterError("unknown config key %r" % key)
    mode = known.pop("mode", None)
    if mode not in ("rate", "coverage", "selection"):
        raise InvalidParameterError(
            "config must set mode = rate | coverage | selection"
        )
    for key in ("n_units", "n_periods", "r"):
        if key not in known:
            raise InvalidParameterError("config must set %s" % key)
    cfg = DgpConfig(**{k: known.pop(k) for k in list(known)
                       if k in _DGP_KEYS})

    if mode == "rate":
        for key in ("metric", "sizes"):
            if key not in known:
                raise InvalidParameterError("rate mode needs %s" % key)
        report = check_rate(cfg, known["sizes"], known["metric"],
                            reps=known.get("reps", 200),
                            stat=known.get("stat", "mean"),
                            workers=args.workers)
        line = "slope %.3f (se %.3f) for %s" % (
            report.loglog_slope, report.slope_se, report.metric_name,
        ) if report.loglog_slope is not None else (
            "no slope reported (reps < 100)"
        )
        plot = figures.rate_plot
    elif mode == "coverage":
        if "target" not in known:
            raise InvalidParameterError("coverage mode needs target")
        report = check_coverage(cfg, known.get("level", 0.95),
                                known["target"],
                                reps=known.get("reps", 1000),
                                bandwidth=known.get("bandwidth"),
                                workers=args.workers)
        line = "empirical coverage %.3f at nominal %.2f" % (
            report.coverage, report.extra["level"],
        )
        plot = figures.coverage_plot
    else:
        if "rmax" not in known:
            raise InvalidParameterError("selection mode needs rmax")
        report = check_selection(cfg, known["rmax"],
                                 penalties=tuple(known.get("penalties",
                                                           _PENALTIES)),
                                 gammas=tuple(known.get("gammas", (0.0,))),
                                 reps=known.get("reps", 200),
                                 workers=args.workers)
        hits = {
            p: report.selection[p][min(report.selection[p])].get(cfg.r, 0.0)
            for p in report.selection
        }
        line = "P(selected = true r) at smallest gamma: " + ", ".join(
            "%s %.3f" % (p, hits[p]) for p in sorted(hits)
        )
        plot = figures.selection_plot

    paths = io.emit_report(report, args.output, fmt=args.format, basename=mode)
    if not args.no_figures:
        paths["figure"] = plot(report, os.path.join(args.output, mode + ".png"))
    _say(line)
    _say("wrote %s" % ", ".join(sorted(os.path.basename(p) for p in paths.values())))
    return 0


# =========================================================================
# parser assembly
# =========================================================================

def build_parser():
    parser = argparse.ArgumentParser(
        prog="panelfactor",
        description="Factor estimation, inference, and rank selection "
                    "for large panels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    out_opts = argparse.ArgumentParser(add_help=False)
    out_opts.add_argument("--output", required=True, help="output directory")
    out_opts.add_argument("--format", choices=("csv", "json"), default="csv")
    out_opts.add_argument("--no-figures", action="store_true",
                          help="skip rendering report figures")

    panel_opts = argparse.ArgumentParser(add_help=False)
    panel_opts.add_argument("--input", required=True, help="panel CSV path")
    panel_opts.add_argument("--no-standardize", action="store_true",
                            help="use the panel as-is")
    panel_opts.add_argument("--transpose", action="store_true",
                            help="input has units in rows")

    p = sub.add_parser("estimate", parents=[panel_opts, out_opts],
                       help="fit a factor decomposition")
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--estimator", choices=("apc", "pc", "rpc"), default="apc")
    p.add_argument("--gamma", type=float, default=None,
                   help="shrinkage threshold for rpc (default: suggested)")
    p.set_defaults(run=cmd_estimate)

    p = sub.add_parser("select-r", parents=[panel_opts, out_opts],
                       help="choose the number of factors")
    p.add_argument("--rmax", type=int, default=None)
    p.add_argument("--penalty", choices=_PENALTIES + ("all",), default="all")
    p.add_argument("--gamma", type=float, default=0.0,
                   help="shrinkage threshold for the regularized criterion")
    p.set_defaults(run=cmd_select_r)

    p = sub.add_parser("infer", parents=[panel_opts, out_opts],
                       help="confidence intervals for factors, loadings, "
                            "and common components")
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bandwidth", type=int, default=None,
                   help="lag window for the long-run variance")
    p.add_argument("--periods", default="0",
                   help="comma-separated period indices (0-based)")
    p.add_argument("--units", default="0",
                   help="comma-separated unit indices (0-based)")
    p.set_defaults(run=cmd_infer)

    p = sub.add_parser("constrain", parents=[panel_opts, out_opts],
                       help="restricted or penalized factor fit")
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=float("inf"),
                   help="restriction penalty weight; inf imposes exactly")
    p.add_argument("--restrictions", default=None,
                   help="file of restriction primitives")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(run=cmd_constrain)

    p = sub.add_parser("simulate", parents=[out_opts],
                       help="write one synthetic panel with its truth")
    p.add_argument("--n-units", type=int, required=True)
    p.add_argument("--n-periods", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--factor-process", choices=("iid-normal", "ar1"),
                   default="iid-normal")
    p.add_argument("--rho-f", type=float, default=0.0)
    p.add_argument("--loading-dist",
                   choices=("normal", "lower-triangular-normal"),
                   default="normal")
    p.add_argument("--serial-corr", type=float, default=0.0)
    p.add_argument("--cross-corr", type=float, default=0.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--weak-factors", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0)
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("mc-check", parents=[out_opts],
                       help="run a Monte-Carlo check from a config file")
    p.add_argument("--config", required=True,
                   help="key = value file; see the packaged examples")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel processes (results do not depend on this)")
    p.set_defaults(run=cmd_mc_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except InvalidParameterError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 2
    except DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 3
    except NumericalError as exc:
        print("numerical error: %s" % exc, file=sys.stderr)
        return 4
    except PanelFactorError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

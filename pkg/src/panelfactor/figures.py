"""Report figures rendered straight to files.

Every function takes fitted objects, draws one figure on the
non-interactive Agg backend, writes it to `path`, and returns the path.
The CLI calls these alongside the delimited output so a run leaves both
machine-readable tables and something a human can glance at.
"""

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

__all__ = [
    "scree_plot",
    "criterion_plot",
    "factor_series_plot",
    "interval_plot",
    "rate_plot",
    "coverage_plot",
    "selection_plot",
    "objective_trace_plot",
]

_DPI = 150


def _new_axes(width=6.0, height=4.0):
    fig = plt.figure(figsize=(width, height))
    ax = fig.add_subplot(1, 1, 1)
    ax.grid(alpha=0.3)
    return fig, ax


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def scree_plot(d2, path, selected_r=None):
    """Eigenvalue shares by component index, largest first."""
    d2 = np.asarray(d2, dtype=float)
    fig, ax = _new_axes()
    ks = np.arange(1, d2.size + 1)
    ax.plot(ks, d2, "o-", color="#2060a0")
    if selected_r:
        ax.axvline(selected_r, color="#a03030", linestyle="--",
                   label="selected r = %d" % selected_r)
        ax.legend()
    ax.set_xlabel("component")
    ax.set_ylabel("share of variance")
    ax.set_xticks(ks)
    return _finish(fig, path)


def criterion_plot(results, path):
    """Rank-selection criterion curves, one line per penalty."""
    if not isinstance(results, dict):
        results = {results.penalty_name: results}
    fig, ax = _new_axes()
    for name in sorted(results):
        res = results[name]
        crit = np.asarray(res.criterion_values, dtype=float)
        finite = np.isfinite(crit)
        ax.plot(res.k_grid[finite], crit[finite], "o-", label=name)
        ax.axvline(res.selected_r, linestyle=":", alpha=0.5)
    ax.set_xlabel("candidate rank k")
    ax.set_ylabel("criterion")
    ax.legend()
    return _finish(fig, path)


def factor_series_plot(fd, path, max_factors=4):
    """Fitted factor paths over time."""
    fig, ax = _new_axes(7.0, 4.0)
    shown = min(fd.r, max_factors)
    for j in range(shown):
        ax.plot(fd.F[:, j], label="factor %d" % (j + 1), linewidth=1.0)
    ax.set_xlabel("period")
    ax.set_ylabel("fitted factor")
    ax.legend()
    return _finish(fig, path)


def interval_plot(cis, path):
    """Centers with error bars for a list of confidence intervals."""
    fig, ax = _new_axes(7.0, 4.0)
    pos = 0
    labels = []
    for ci in cis:
        center = np.atleast_1d(np.asarray(ci.center, dtype=float))
        half = np.atleast_1d(np.asarray(ci.half_width, dtype=float))
        xs = np.arange(pos, pos + center.size)
        ax.errorbar(xs, center, yerr=half, fmt="o", capsize=3)
        labels.extend(
            ["%s %s" % (ci.target[0], ".".join(str(v) for v in ci.target[1:]))]
            + [""] * (center.size - 1)
        )
        pos += center.size
    ax.axhline(0.0, color="gray", linewidth=0.5)
    ax.set_xticks(np.arange(pos))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("estimate")
    return _finish(fig, path)


def rate_plot(report, path):
    """Metric against min(N, T) on log-log axes with the fitted slope."""
    sizes = sorted(report.per_size_results)
    x = np.array([min(s) for s in sizes], dtype=float)
    stat = report.extra.get("stat", "mean")
    y = np.array([report.per_size_results[s][stat] for s in sizes])
    fig, ax = _new_axes()
    ax.loglog(x, y, "o-", color="#2060a0", label=report.metric_name)
    if report.loglog_slope is not None:
        fit = y[0] * (x / x[0]) ** report.loglog_slope
        ax.loglog(x, fit, "--", color="#a03030",
                  label="slope %.2f" % report.loglog_slope)
    ax.set_xlabel("min(N, T)")
    ax.set_ylabel("%s of metric" % stat)
    ax.legend()
    return _finish(fig, path)


def coverage_plot(report, path):
    """Empirical against nominal coverage for one report."""
    fig, ax = _new_axes(4.0, 4.0)
    nominal = report.extra.get("level", 0.95)
    ax.bar([0], [report.coverage], width=0.5, color="#2060a0",
           label="empirical %.3f" % report.coverage)
    ax.axhline(nominal, color="#a03030", linestyle="--",
               label="nominal %.2f" % nominal)
    ax.set_xticks([0])
    ax.set_xticklabels([report.metric_name])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("coverage")
    ax.legend()
    return _finish(fig, path)


def selection_plot(report, path):
    """Selected-rank frequencies, grouped by penalty, one panel per gamma."""
    sel = report.selection
    gammas = sorted({g for by_g in sel.values() for g in by_g})
    fig, axes = plt.subplots(1, len(gammas), figsize=(4.0 * len(gammas), 3.5),
                             squeeze=False)
    ks = sorted({k for by_g in sel.values() for tab in by_g.values() for k in tab})
    width = 0.8 / max(len(sel), 1)
    for col, g in enumerate(gammas):
        ax = axes[0][col]
        ax.grid(alpha=0.3)
        for j, pname in enumerate(sorted(sel)):
            tab = sel[pname].get(g, {})
            xs = np.array(ks, dtype=float) + (j - (len(sel) - 1) / 2.0) * width
            ax.bar(xs, [tab.get(k, 0.0) for k in ks], width=width, label=pname)
        true_r = report.extra.get("true_r")
        if true_r is not None:
            ax.axvline(true_r, color="#a03030", linestyle="--", alpha=0.7)
        ax.set_title("gamma = %g" % g, fontsize=9)
        ax.set_xlabel("selected rank")
        ax.set_xticks(ks)
        if col == 0:
            ax.set_ylabel("frequency")
            ax.legend(fontsize=8)
    return _finish(fig, path)


def objective_trace_plot(fit, path):
    """Objective value after each alternating sweep."""
    fig, ax = _new_axes()
    trace = np.asarray(fit.objective_trace, dtype=float)
    ax.plot(np.arange(1, trace.size + 1), trace, "o-", color="#2060a0")
    ax.set_xlabel("sweep")
    ax.set_ylabel("objective")
    return _finish(fig, path)

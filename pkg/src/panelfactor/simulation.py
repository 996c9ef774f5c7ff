"""Synthetic panels and the Monte-Carlo engine for desk-scale checks.

The generator produces X = F0 Lambda0' + e with controllable factor
persistence, loading geometry, and error correlation in both dimensions.
Loadings are redrawn until their normalized cross-product is bounded away
from singular, so every generated panel carries a strong factor structure.

Three checking engines ride on top of the generator:

* :func:`check_rate` estimates how fast an error metric shrinks as the
  panel grows along a ladder of sizes, summarized by the slope of the
  metric against min(N, T) on log-log axes.  Squared estimation errors
  shrink proportionally to 1 / min(N, T), so their target slope is -1.
* :func:`check_coverage` measures empirical confidence-interval coverage
  against the rotation-adjusted truth of each replication.
* :func:`check_selection` tabulates how often the rank-selection criteria
  recover the true number of factors.

Every replication derives its own random stream from (seed, replication
index), so reports are reproducible and independent of how the work is
scheduled across processes.
"""

import math

import numpy as np
from joblib import Parallel, delayed

from .errors import InvalidParameterError, UnstableDgpError
from .estimators import as_panel, common_component, estimate_apc, standardize
from .factor_count import select_r_regularized
from .inference import ci_common, ci_factor, ci_loading, covariance_estimates, residual_matrix
from .rotations import rotation_matrix

__all__ = [
    "DgpConfig",
    "McReport",
    "RATE_METRICS",
    "derive_rng",
    "generate_panel",
    "check_rate",
    "check_coverage",
    "check_selection",
]

_FACTOR_PROCESSES = ("iid-normal", "ar1")
_LOADING_DISTS = ("normal", "lower-triangular-normal")
_MIN_LOADING_EIG = 0.1
_MAX_REDRAWS = 200
_MIXING_BAND = 10


# =========================================================================
# configuration
# =========================================================================

class DgpConfig:
    """Parameters of the synthetic panel generator.

    Parameters
    ----------
    n_units, n_periods : int
        Panel dimensions N and T.
    r : int
        Number of factors; 0 produces a pure-error panel.
    factor_process : str
        ``"iid-normal"`` or ``"ar1"`` (stationary, unit variance, with
        coefficient ``rho_f``).
    rho_f : float
        AR coefficient of the factor process, |rho_f| < 1.  Ignored for
        iid factors.
    loading_dist : str
        ``"normal"`` (entries mu + sigma * standard normal) or
        ``"lower-triangular-normal"`` (normal with the upper triangle of
        the leading r x r block zeroed).
    loading_mu, loading_sigma : float or (r,) array_like
        Location and scale of the loading distribution, per factor when a
        vector is given.
    error_cross_corr : float
        Cross-sectional mixing weight beta in [0, 1); unit i mixes nearby
        units with geometric weights inside a band of width 10, rows
        renormalized so variances stay at one.
    error_serial_corr : float
        AR(1) coefficient of the errors in [0, 1), stationary and unit
        variance.
    noise_scale : float
        Standard deviation of the error field.
    weak_factors : int
        How many trailing factors have their loadings shrunk by
        N^(-1/4); exploratory designs only.
    seed : int
        Base seed; replication b of any engine uses the stream derived
        from (seed, b).
    """

    def __init__(self, n_units, n_periods, r, factor_process="iid-normal",
                 rho_f=0.0, loading_dist="normal", loading_mu=0.0,
                 loading_sigma=1.0, error_cross_corr=0.0,
                 error_serial_corr=0.0, noise_scale=1.0, weak_factors=0,
                 seed=0):
        self.n_units = int(n_units)
        self.n_periods = int(n_periods)
        self.r = int(r)
        if self.n_units < 2 or self.n_periods < 2:
            raise InvalidParameterError("panel must be at least 2 x 2")
        if not 0 <= self.r <= min(self.n_units, self.n_periods):
            raise InvalidParameterError(
                "r=%d outside [0, %d]" % (self.r, min(self.n_units, self.n_periods))
            )
        if factor_process not in _FACTOR_PROCESSES:
            raise InvalidParameterError(
                "factor_process must be one of %r" % (_FACTOR_PROCESSES,)
            )
        if loading_dist not in _LOADING_DISTS:
            raise InvalidParameterError(
                "loading_dist must be one of %r" % (_LOADING_DISTS,)
            )
        self.factor_process = factor_process
        self.loading_dist = loading_dist
        self.rho_f = float(rho_f)
        if not abs(self.rho_f) < 1.0:
            raise InvalidParameterError("rho_f must satisfy |rho_f| < 1")
        self.error_cross_corr = float(error_cross_corr)
        self.error_serial_corr = float(error_serial_corr)
        for name in ("error_cross_corr", "error_serial_corr"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise InvalidParameterError("%s must be in [0, 1)" % name)
        self.noise_scale = float(noise_scale)
        if not (np.isfinite(self.noise_scale) and self.noise_scale >= 0.0):
            raise InvalidParameterError("noise_scale must be finite and >= 0")
        mu = np.atleast_1d(np.asarray(loading_mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(loading_sigma, dtype=float))
        for name, v in (("loading_mu", mu), ("loading_sigma", sigma)):
            if v.ndim != 1 or v.size not in (1, max(self.r, 1)):
                raise InvalidParameterError(
                    "%s must be a scalar or a length-r vector" % name
                )
            if not np.all(np.isfinite(v)):
                raise InvalidParameterError("%s must be finite" % name)
        if np.any(sigma < 0.0):
            raise InvalidParameterError("loading_sigma must be >= 0")
        self.loading_mu = mu
        self.loading_sigma = sigma
        self.weak_factors = int(weak_factors)
        if not 0 <= self.weak_factors <= self.r:
            raise InvalidParameterError("weak_factors must be in [0, r]")
        self.seed = int(seed)

    def resized(self, n_units, n_periods):
        """Copy of this configuration at another panel size."""
        return DgpConfig(
            n_units, n_periods, self.r,
            factor_process=self.factor_process, rho_f=self.rho_f,
            loading_dist=self.loading_dist, loading_mu=self.loading_mu,
            loading_sigma=self.loading_sigma,
            error_cross_corr=self.error_cross_corr,
            error_serial_corr=self.error_serial_corr,
            noise_scale=self.noise_scale, weak_factors=self.weak_factors,
            seed=self.seed,
        )


def derive_rng(seed, replication):
    """Random generator for one replication, stable across schedulers."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int(replication)])
    )


# =========================================================================
# panel generation
# =========================================================================

def _draw_factors(cfg, rng):
    T, r = cfg.n_periods, cfg.r
    W = rng.standard_normal((T, r))
    if cfg.factor_process == "iid-normal" or cfg.rho_f == 0.0 or r == 0:
        return W
    F = np.empty_like(W)
    F[0] = W[0]
    c = math.sqrt(1.0 - cfg.rho_f ** 2)
    for t in range(1, T):
        F[t] = cfg.rho_f * F[t - 1] + c * W[t]
    return F


def _draw_loadings(cfg, rng):
    N, r = cfg.n_units, cfg.r
    if r == 0:
        return np.zeros((N, 0))
    for _ in range(_MAX_REDRAWS):
        L = cfg.loading_mu + cfg.loading_sigma * rng.standard_normal((N, r))
        if cfg.loading_dist == "lower-triangular-normal":
            L = L.copy()
            for i in range(min(N, r)):
                L[i, i + 1:] = 0.0
        w = np.linalg.eigvalsh(L.T @ L / N)
        if w[0] >= _MIN_LOADING_EIG:
            if cfg.weak_factors:
                L = L.copy()
                L[:, r - cfg.weak_factors:] *= N ** -0.25
            return L
    raise UnstableDgpError(
        "could not draw loadings with smallest normalized eigenvalue >= %g "
        "in %d tries" % (_MIN_LOADING_EIG, _MAX_REDRAWS)
    )


def _draw_errors(cfg, rng):
    T, N = cfg.n_periods, cfg.n_units
    W = rng.standard_normal((T, N))
    rho = cfg.error_serial_corr
    if rho > 0.0:
        U = np.empty_like(W)
        U[0] = W[0]
        c = math.sqrt(1.0 - rho ** 2)
        for t in range(1, T):
            U[t] = rho * U[t - 1] + c * W[t]
        W = U
    beta = cfg.error_cross_corr
    if beta > 0.0:
        lag = np.abs(np.arange(N)[:, None] - np.arange(N)[None, :])
        M = np.where(lag <= _MIXING_BAND, beta ** lag, 0.0)
        M /= np.linalg.norm(M, axis=1, keepdims=True)
        W = W @ M.T
    return cfg.noise_scale * W


def generate_panel(cfg, replication=0):
    """Draw one synthetic panel.

    Returns
    -------
    panel : PanelData
        The raw panel X = F0 Lambda0' + e, not standardized.
    F0 : (T, r) ndarray
    Lambda0 : (N, r) ndarray
    e : (T, N) ndarray

    The same (cfg.seed, replication) pair always produces bitwise
    identical output.
    """
    rng = derive_rng(cfg.seed, replication)
    F0 = _draw_factors(cfg, rng)
    L0 = _draw_loadings(cfg, rng)
    e = _draw_errors(cfg, rng)
    X = F0 @ L0.T + e
    return as_panel(X), F0, L0, e


# =========================================================================
# replication metrics
# =========================================================================

def _need_factors(cfg):
    if cfg.r < 1:
        raise InvalidParameterError(
            "this metric needs at least one factor (r >= 1)"
        )


def _metric_factor_space(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    H = rotation_matrix(0, F0, L0, fd)
    G = fd.F - F0 @ H
    return float(np.sum(G * G) / cfg.n_periods)


def _metric_loading_space(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    H = rotation_matrix(0, F0, L0, fd)
    G = fd.Lambda - L0 @ np.linalg.inv(H).T
    return float(np.sum(G * G) / cfg.n_units)


def _metric_common(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    G = common_component(fd) - F0 @ L0.T
    return float(np.sum(G * G) / (cfg.n_units * cfg.n_periods))


def _metric_error_gram(cfg, panel, F0, L0, e):
    S = e @ e.T / (cfg.n_units * cfg.n_periods)
    return float(np.sum(S * S))


def _metric_factor_error_cov(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    M = F0.T @ e / (math.sqrt(cfg.n_units) * cfg.n_periods)
    return float(np.linalg.norm(M @ M.T))


def _metric_loading_error_cov(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    M = L0.T @ e.T / (cfg.n_units * math.sqrt(cfg.n_periods))
    return float(np.linalg.norm(M @ M.T))


def _rotation_gaps(cfg, panel, F0, L0):
    fd = estimate_apc(panel, cfg.r)
    H0 = rotation_matrix(0, F0, L0, fd)
    return [
        float(np.linalg.norm(rotation_matrix(ell, F0, L0, fd) - H0))
        for ell in (1, 2, 3, 4)
    ]


def _metric_rotation_agreement(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    return max(_rotation_gaps(cfg, panel, F0, L0))


def _make_rotation_metric(ell):
    def metric(cfg, panel, F0, L0, e):
        _need_factors(cfg)
        fd = estimate_apc(panel, cfg.r)
        H0 = rotation_matrix(0, F0, L0, fd)
        H = rotation_matrix(ell, F0, L0, fd)
        return float(np.linalg.norm(H - H0))
    return metric


def _metric_factor_gap_projection(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    H = rotation_matrix(0, F0, L0, fd)
    M = F0.T @ (fd.F - F0 @ H) / cfg.n_periods
    return float(np.linalg.norm(M))


def _metric_loading_gap_projection(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    H = rotation_matrix(0, F0, L0, fd)
    M = L0.T @ (fd.Lambda - L0 @ np.linalg.inv(H).T) / cfg.n_units
    return float(np.linalg.norm(M))


def _metric_factor_gap_error_corr(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    H = rotation_matrix(0, F0, L0, fd)
    M = (fd.F - F0 @ H).T @ e / cfg.n_periods
    return float(np.mean(np.linalg.norm(M, axis=0)))


def _metric_loading_gap_error_corr(cfg, panel, F0, L0, e):
    _need_factors(cfg)
    fd = estimate_apc(panel, cfg.r)
    H = rotation_matrix(0, F0, L0, fd)
    M = e @ (fd.Lambda - L0 @ np.linalg.inv(H).T) / cfg.n_units
    return float(np.mean(np.linalg.norm(M, axis=1)))


RATE_METRICS = {
    "factor-space-error": _metric_factor_space,
    "loading-space-error": _metric_loading_space,
    "common-error": _metric_common,
    "error-gram-norm": _metric_error_gram,
    "factor-error-covariance": _metric_factor_error_cov,
    "loading-error-covariance": _metric_loading_error_cov,
    "rotation-agreement": _metric_rotation_agreement,
    "rotation-agreement-1": _make_rotation_metric(1),
    "rotation-agreement-2": _make_rotation_metric(2),
    "rotation-agreement-3": _make_rotation_metric(3),
    "rotation-agreement-4": _make_rotation_metric(4),
    "factor-gap-projection": _metric_factor_gap_projection,
    "loading-gap-projection": _metric_loading_gap_projection,
    "factor-gap-error-correlation": _metric_factor_gap_error_corr,
    "loading-gap-error-correlation": _metric_loading_gap_error_corr,
}


# =========================================================================
# report container
# =========================================================================

class McReport:
    """Aggregated output of one Monte-Carlo engine run.

    Attributes
    ----------
    metric_name : str
    replications : int
        Replications per configuration.
    per_size_results : dict
        (N, T) -> {"mean", "median", "sd"} of the metric.
    loglog_slope, slope_se : float or None
        Slope of log(statistic) against log(min(N, T)) and its standard
        error; None when fewer than 100 replications back the estimate.
    coverage : float or None
        Empirical coverage, coverage engine only.
    selection : dict or None
        penalty -> gamma -> {k: frequency}, selection engine only.
    extra : dict
        Engine-specific scalars (nominal level, mean interval width, ...).
    """

    def __init__(self, metric_name, replications, per_size_results,
                 loglog_slope=None, slope_se=None, coverage=None,
                 selection=None, extra=None):
        self.metric_name = str(metric_name)
        self.replications = int(replications)
        self.per_size_results = dict(per_size_results)
        if self.replications < 100 and (
            loglog_slope is not None or coverage is not None
        ):
            raise InvalidParameterError(
                "slopes and coverage need at least 100 replications"
            )
        self.loglog_slope = None if loglog_slope is None else float(loglog_slope)
        self.slope_se = None if slope_se is None else float(slope_se)
        self.coverage = None if coverage is None else float(coverage)
        self.selection = selection
        self.extra = dict(extra) if extra else {}

    def to_dict(self):
        """JSON-friendly view; size keys become 'NxT' strings."""
        out = {
            "metric_name": self.metric_name,
            "replications": self.replications,
            "per_size_results": {
                "%dx%d" % key: dict(val)
                for key, val in self.per_size_results.items()
            },
            "loglog_slope": self.loglog_slope,
            "slope_se": self.slope_se,
            "coverage": self.coverage,
        }
        if self.selection is not None:
            out["selection"] = {
                str(p): {"%g" % g: {str(k): v for k, v in table.items()}
                         for g, table in by_gamma.items()}
                for p, by_gamma in self.selection.items()
            }
        if self.extra:
            out["extra"] = dict(self.extra)
        return out


def _mc_map(task, reps, workers):
    if workers is None or workers == 1:
        return [task(b) for b in range(reps)]
    return Parallel(n_jobs=int(workers))(delayed(task)(b) for b in range(reps))


def _summaries(values):
    v = np.asarray(values, dtype=float)
    return {
        "mean": float(np.mean(v)),
        "median": float(np.median(v)),
        "sd": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
    }


def _slope(sizes, stats):
    x = np.log([min(n, t) for n, t in sizes])
    y = np.log(stats)
    xc = x - x.mean()
    slope = float(xc @ y / (xc @ xc))
    resid = y - y.mean() - slope * xc
    dof = len(x) - 2
    se = float(np.sqrt((resid @ resid) / dof / (xc @ xc))) if dof > 0 else float("nan")
    return slope, se


# =========================================================================
# engines
# =========================================================================

def check_rate(cfg, sizes, metric, reps, stat="mean", workers=None):
    """Estimate the shrink rate of a metric along a ladder of panel sizes.

    Parameters
    ----------
    cfg : DgpConfig
        Template; its size fields are replaced by each rung.
    sizes : sequence of (N, T)
        At least three rungs with strictly growing min(N, T).
    metric : str
        Key into :data:`RATE_METRICS`.
    reps : int
    stat : str
        ``"mean"`` or ``"median"``: the per-size statistic whose log is
        regressed on log(min(N, T)).
    workers : int or None
        Parallel processes; None runs serially.  The report does not
        depend on this value.

    Returns
    -------
    McReport
        With ``loglog_slope`` set when ``reps >= 100``.
    """
    if metric not in RATE_METRICS:
        raise InvalidParameterError(
            "unknown metric %r; choose from %s" % (metric, sorted(RATE_METRICS))
        )
    if stat not in ("mean", "median"):
        raise InvalidParameterError("stat must be 'mean' or 'median'")
    sizes = [(int(n), int(t)) for n, t in sizes]
    if len(sizes) < 3:
        raise InvalidParameterError("need at least three ladder rungs")
    deltas = [min(n, t) for n, t in sizes]
    if any(b <= a for a, b in zip(deltas[:-1], deltas[1:])):
        raise InvalidParameterError("min(N, T) must grow strictly along the ladder")
    if reps < 1:
        raise InvalidParameterError("reps must be positive")
    fn = RATE_METRICS[metric]

    per_size = {}
    stat_values = []
    for n, t in sizes:
        sized = cfg.resized(n, t)

        def one(b, sized=sized):
            return fn(sized, *generate_panel(sized, b))

        values = np.asarray(_mc_map(one, reps, workers), dtype=float)
        bad = ~np.isfinite(values)
        if np.mean(bad) > 0.01:
            raise UnstableDgpError(
                "%.1f%% non-finite %s values at %d x %d"
                % (100.0 * np.mean(bad), metric, n, t)
            )
        values = values[~bad]
        per_size[(n, t)] = _summaries(values)
        stat_values.append(per_size[(n, t)][stat])

    slope = se = None
    if reps >= 100:
        slope, se = _slope(sizes, stat_values)
    return McReport(metric, reps, per_size, loglog_slope=slope, slope_se=se,
                    extra={"stat": stat})


def _coverage_one(cfg, level, target, bandwidth, b):
    panel, F0, L0, e = generate_panel(cfg, b)
    fd = estimate_apc(panel, cfg.r)
    resid = residual_matrix(panel, fd)
    if target == "factor":
        cov = covariance_estimates(fd, resid, t_indices=[0], i_indices=[],
                                   bandwidth=bandwidth)
        ci = ci_factor(fd, cov, 0, level=level)
        truth = rotation_matrix(4, F0, L0, fd).T @ F0[0]
        hits = ci.covers(truth)
        width = float(np.mean(ci.half_width))
        return float(np.mean(hits)), width
    if target == "loading":
        cov = covariance_estimates(fd, resid, t_indices=[], i_indices=[0],
                                   bandwidth=bandwidth)
        ci = ci_loading(fd, cov, 0, level=level)
        H3 = rotation_matrix(3, F0, L0, fd)
        truth = np.linalg.solve(H3, L0[0])
        hits = ci.covers(truth)
        width = float(np.mean(ci.half_width))
        return float(np.mean(hits)), width
    cov = covariance_estimates(fd, resid, t_indices=[0], i_indices=[0],
                               bandwidth=bandwidth)
    ci = ci_common(fd, cov, 0, 0, level=level)
    truth = float(F0[0] @ L0[0])
    return float(ci.covers(truth)), float(ci.half_width)


def check_coverage(cfg, level, target, reps, bandwidth=None, workers=None):
    """Empirical coverage of the plug-in confidence intervals.

    Each replication fits the panel, builds the interval for one factor
    period, one unit's loadings, or one common-component cell, and checks
    it against that replication's own truth.  Factor and loading truths
    are carried through the rotation the estimator implicitly applies, so
    no sign or order alignment is ever needed; the common component needs
    no adjustment at all.

    Parameters
    ----------
    cfg : DgpConfig
    level : float
        Nominal coverage in (0, 1).
    target : str
        ``"factor"``, ``"loading"``, or ``"common"``.
    reps : int
        At least 500 for a meaningful rate.
    bandwidth : int, optional
        Passed through to the long-run variance estimator.
    workers : int or None

    Returns
    -------
    McReport
        ``coverage`` holds the empirical rate, ``extra["mean_width"]`` the
        average interval half-width.
    """
    if target not in ("factor", "loading", "common"):
        raise InvalidParameterError(
            "target must be 'factor', 'loading', or 'common'"
        )
    if not 0.0 < level < 1.0:
        raise InvalidParameterError("level must be in (0, 1)")
    if reps < 500:
        raise InvalidParameterError("coverage needs at least 500 replications")
    if cfg.r < 1:
        raise InvalidParameterError("coverage needs at least one factor")

    def one(b):
        return _coverage_one(cfg, level, target, bandwidth, b)

    results = _mc_map(one, reps, workers)
    hits = np.asarray([h for h, _ in results], dtype=float)
    widths = np.asarray([w for _, w in results], dtype=float)
    bad = ~np.isfinite(hits) | ~np.isfinite(widths)
    if np.mean(bad) > 0.01:
        raise UnstableDgpError(
            "%.1f%% unusable replications in coverage run" % (100.0 * np.mean(bad))
        )
    hits, widths = hits[~bad], widths[~bad]
    key = (cfg.n_units, cfg.n_periods)
    report = McReport(
        "coverage-%s" % target,
        reps,
        {key: _summaries(widths)},
        coverage=float(np.mean(hits)),
        extra={"level": float(level), "mean_width": float(np.mean(widths))},
    )
    return report


def check_selection(cfg, rmax, penalties=("p1", "p2", "p3"), gammas=(0.0,),
                    reps=200, workers=None):
    """Frequency of each selected rank per penalty and threshold.

    Every replication draws a panel, standardizes it, and runs the
    rank-selection criterion once per (penalty, gamma) pair; the pairs all
    see the same panel.  The report's ``selection`` table maps penalty ->
    gamma -> selected rank -> frequency.
    """
    if rmax < max(cfg.r, 1):
        raise InvalidParameterError(
            "rmax=%d below the true rank %d" % (rmax, cfg.r)
        )
    gammas = [float(g) for g in gammas]
    for name in penalties:
        if name not in ("p1", "p2", "p3"):
            raise InvalidParameterError("unknown penalty %r" % name)
    if reps < 1:
        raise InvalidParameterError("reps must be positive")

    def one(b):
        panel, _, _, _ = generate_panel(cfg, b)
        std = standardize(panel.X)
        out = {}
        for pname in penalties:
            for g in gammas:
                res = select_r_regularized(std, rmax=rmax, gamma=g,
                                           penalty_name=pname)
                out[(pname, g)] = res.selected_r
        return out

    picks = _mc_map(one, reps, workers)
    table = {
        pname: {g: {} for g in gammas} for pname in penalties
    }
    pooled = []
    for out in picks:
        for (pname, g), k in out.items():
            cell = table[pname][g]
            cell[k] = cell.get(k, 0) + 1
            pooled.append(k)
    for pname in penalties:
        for g in gammas:
            cell = table[pname][g]
            for k in list(cell):
                cell[k] = cell[k] / reps
    key = (cfg.n_units, cfg.n_periods)
    return McReport("selection", reps, {key: _summaries(pooled)},
                    selection=table,
                    extra={"rmax": int(rmax), "true_r": int(cfg.r)})

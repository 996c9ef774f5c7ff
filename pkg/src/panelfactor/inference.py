"""Feasible asymptotic inference for factors, loadings, and fitted values.

The sampling error of a spectral factor fit has a sandwich structure whose
pieces are all estimable from the fit itself:

* cross-sectional score variance ``Gamma_t``: weighted outer products of
  the fitted loadings with squared residuals at period t, optionally with
  within-cluster cross terms;
* time-series score variance ``Phi_i``: Bartlett-kernel long-run variance
  of the factor-times-residual series of unit i (bandwidth 0 collapses to
  the plain outer-product sum);
* the per-target confidence intervals built from them.  Interval widths
  for a fitted common value combine the two scalars ``W_lambda`` and
  ``W_f``, which are invariant to the rotation chosen for the fit.

All functions take a fitted decomposition plus the residual matrix
``E = X - F Lambda'`` in the same units as the fit.
"""

import math

import numpy as np
from scipy.stats import norm as _norm

from .errors import (
    DataError,
    InvalidParameterError,
    NumericalError,
)

__all__ = [
    "CovarianceEstimates",
    "ConfidenceInterval",
    "default_bandwidth",
    "estimate_gamma_t",
    "estimate_phi_i",
    "covariance_estimates",
    "ci_factor",
    "ci_loading",
    "ci_common",
    "residual_matrix",
]

_GAMMA_METHODS = ("cs-independent", "cs-clustered")


def default_bandwidth(T):
    """Bartlett bandwidth rule ``floor(4 * (T/100)^(2/9))``."""
    if T < 1:
        raise InvalidParameterError("T must be positive")
    return int(math.floor(4.0 * (T / 100.0) ** (2.0 / 9.0)))


def residual_matrix(panel, fd):
    """Residuals ``X - F Lambda'`` for a fit of the same panel."""
    if fd.F.shape[0] != panel.shape[0] or fd.Lambda.shape[0] != panel.shape[1]:
        raise DataError("fit does not match panel shape")
    return panel.X - fd.F @ fd.Lambda.T


def _check_resid(fd, resid):
    resid = np.asarray(resid, dtype=float)
    T, N = fd.F.shape[0], fd.Lambda.shape[0]
    if resid.shape != (T, N):
        raise DataError("residuals must be %s, got %s" % ((T, N), resid.shape))
    if not np.all(np.isfinite(resid)):
        raise DataError("residuals contain non-finite entries")
    return resid


def _psd_guard(M, what, tol=1e-8):
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    scale = max(abs(w[-1]), 1.0)
    if w[0] < -tol * scale:
        raise NumericalError("%s is not positive semidefinite" % what)
    return M


# =========================================================================
# score variance estimators
# =========================================================================

def estimate_gamma_t(fd, resid, t, method="cs-independent", clusters=None):
    """Cross-sectional score variance at period t.

    ``cs-independent`` returns ``(1/N) sum_i L_i L_i' e_it^2``; the
    clustered variant adds all within-cluster cross terms, which keeps the
    estimate positive semidefinite by construction.

    Parameters
    ----------
    fd : FactorDecomposition
    resid : (T, N) ndarray
        Residuals in the units of the fit.
    t : int
    method : str
        ``"cs-independent"`` or ``"cs-clustered"``.
    clusters : (N,) array-like, required for the clustered method
        Cluster label per unit; any hashable labels.

    Returns
    -------
    (r, r) ndarray
    """
    resid = _check_resid(fd, resid)
    T, N = resid.shape
    if not 0 <= t < T:
        raise InvalidParameterError("t=%d outside [0, %d)" % (t, T))
    if method not in _GAMMA_METHODS:
        raise InvalidParameterError("unknown method %r" % method)
    L = fd.Lambda
    e_t = resid[t, :]
    if method == "cs-independent":
        G = (L * e_t[:, None] ** 2).T @ L / N
    else:
        if clusters is None:
            raise InvalidParameterError("cs-clustered needs cluster labels")
        labels = np.asarray(clusters)
        if labels.shape != (N,):
            raise InvalidParameterError("clusters must have one label per unit")
        G = np.zeros((fd.r, fd.r))
        for g in np.unique(labels):
            s = (L[labels == g].T * e_t[labels == g]).sum(axis=1)
            G += np.outer(s, s)
        G /= N
    return _psd_guard(G, "Gamma_t")


def estimate_phi_i(fd, resid, i, bandwidth=None, method="ts-hac"):
    """Long-run variance of the scaled score series of unit i.

    Bartlett-kernel estimator on ``u_t = F_t e_it``:
    ``Phi = Omega_0 + sum_{j=1..B} (1 - j/(B+1)) (Omega_j + Omega_j')``
    with ``Omega_j = (1/T) sum_{t>j} u_t u_{t-j}'``.  Bandwidth 0 keeps
    only ``Omega_0``; ``None`` applies :func:`default_bandwidth`.

    Returns
    -------
    (r, r) ndarray
    """
    resid = _check_resid(fd, resid)
    T, N = resid.shape
    if not 0 <= i < N:
        raise InvalidParameterError("i=%d outside [0, %d)" % (i, N))
    if method != "ts-hac":
        raise InvalidParameterError("unknown method %r" % method)
    if bandwidth is None:
        bandwidth = default_bandwidth(T)
    bandwidth = int(bandwidth)
    if bandwidth < 0 or bandwidth >= T:
        raise InvalidParameterError(
            "bandwidth=%d outside [0, %d)" % (bandwidth, T)
        )
    U = fd.F * resid[:, i][:, None]
    Phi = U.T @ U / T
    for j in range(1, bandwidth + 1):
        w = 1.0 - j / (bandwidth + 1.0)
        Om = U[j:].T @ U[:-j] / T
        Phi = Phi + w * (Om + Om.T)
    return _psd_guard(Phi, "Phi_i")


class CovarianceEstimates:
    """Batch of score-variance matrices for selected periods and units.

    Attributes
    ----------
    Gamma_t : dict of int -> (r, r) ndarray
    Phi_i : dict of int -> (r, r) ndarray
    gamma_method : str
    hac_bandwidth : int
    """

    def __init__(self, Gamma_t, Phi_i, gamma_method, hac_bandwidth):
        self.Gamma_t = dict(Gamma_t)
        self.Phi_i = dict(Phi_i)
        self.gamma_method = gamma_method
        self.hac_bandwidth = int(hac_bandwidth)


def covariance_estimates(fd, resid, t_indices=None, i_indices=None,
                         gamma_method="cs-independent", bandwidth=None,
                         clusters=None):
    """Compute Gamma_t and Phi_i for the requested index sets.

    ``None`` for either index set means all periods (respectively units).
    """
    resid = _check_resid(fd, resid)
    T, N = resid.shape
    if t_indices is None:
        t_indices = range(T)
    if i_indices is None:
        i_indices = range(N)
    if bandwidth is None:
        bandwidth = default_bandwidth(T)
    G = {
        int(t): estimate_gamma_t(fd, resid, int(t), method=gamma_method,
                                 clusters=clusters)
        for t in t_indices
    }
    P = {
        int(i): estimate_phi_i(fd, resid, int(i), bandwidth=bandwidth)
        for i in i_indices
    }
    return CovarianceEstimates(G, P, gamma_method, bandwidth)


# =========================================================================
# confidence intervals
# =========================================================================

class ConfidenceInterval:
    """Symmetric normal confidence interval for one target.

    ``target`` is ``("factor", t)``, ``("loading", i)``, or
    ``("common", i, t)``.  ``center`` and ``half_width`` are vectors of
    length r for the first two targets and scalars for the third, where
    the rotation-invariant variance pieces ``w_lambda`` and ``w_f`` are
    also recorded.
    """

    def __init__(self, center, half_width, level, target,
                 w_lambda=None, w_f=None):
        self.center = center
        self.half_width = half_width
        self.level = float(level)
        self.target = target
        self.w_lambda = w_lambda
        self.w_f = w_f

    @property
    def lower(self):
        return self.center - self.half_width

    @property
    def upper(self):
        return self.center + self.half_width

    def covers(self, truth):
        """Boolean (vector) indicator of the interval containing `truth`."""
        return np.abs(np.asarray(truth) - self.center) <= self.half_width


def _zvalue(level):
    if not 0.0 < level < 1.0:
        raise InvalidParameterError("level must be in (0, 1), got %r" % level)
    return float(_norm.ppf(0.5 * (1.0 + level)))


def _sandwich(outer, inner):
    # inv(outer) @ inner @ inv(outer), solved rather than inverted
    tmp = np.linalg.solve(outer, inner)
    return np.linalg.solve(outer, tmp.T).T


def ci_factor(fd, cov, t, level=0.95):
    """Confidence interval for the period-t factor vector.

    Variance is the plug-in sandwich
    ``inv(L'L/N) Gamma_t inv(L'L/N) / N``; the interval is per coordinate.
    """
    if t not in cov.Gamma_t:
        raise InvalidParameterError("Gamma_t not available for t=%d" % t)
    N = fd.Lambda.shape[0]
    B = fd.Lambda.T @ fd.Lambda / N
    avar = _sandwich(B, cov.Gamma_t[t]) / N
    hw = _zvalue(level) * np.sqrt(np.clip(np.diag(avar), 0.0, None))
    return ConfidenceInterval(fd.F[t, :].copy(), hw, level, ("factor", int(t)))


def ci_loading(fd, cov, i, level=0.95):
    """Confidence interval for the loadings of unit i.

    Variance is ``inv(F'F/T) Phi_i inv(F'F/T) / T``; for an APC fit the
    outer factor is the identity and this is just ``Phi_i / T``.
    """
    if i not in cov.Phi_i:
        raise InvalidParameterError("Phi_i not available for i=%d" % i)
    T = fd.F.shape[0]
    A = fd.F.T @ fd.F / T
    avar = _sandwich(A, cov.Phi_i[i]) / T
    hw = _zvalue(level) * np.sqrt(np.clip(np.diag(avar), 0.0, None))
    return ConfidenceInterval(fd.Lambda[i, :].copy(), hw, level, ("loading", int(i)))


def ci_common(fd, cov, i, t, level=0.95):
    """Confidence interval for the fitted common value at (i, t).

    Width combines the two invariant scalars:
    ``W_lambda = L_i' inv(L'L/N) Gamma_t inv(L'L/N) L_i`` and
    ``W_f = F_t' inv(F'F/T) Phi_i inv(F'F/T) F_t``, as
    ``z * sqrt(W_lambda / N + W_f / T)``.
    """
    if t not in cov.Gamma_t:
        raise InvalidParameterError("Gamma_t not available for t=%d" % t)
    if i not in cov.Phi_i:
        raise InvalidParameterError("Phi_i not available for i=%d" % i)
    T, N = fd.F.shape[0], fd.Lambda.shape[0]
    B = fd.Lambda.T @ fd.Lambda / N
    A = fd.F.T @ fd.F / T
    li = fd.Lambda[i, :]
    ft = fd.F[t, :]
    w_lam = float(li @ _sandwich(B, cov.Gamma_t[t]) @ li)
    w_f = float(ft @ _sandwich(A, cov.Phi_i[i]) @ ft)
    if w_lam < -1e-10 or w_f < -1e-10:
        raise NumericalError("negative variance scalar")
    w_lam, w_f = max(w_lam, 0.0), max(w_f, 0.0)
    hw = _zvalue(level) * math.sqrt(w_lam / N + w_f / T)
    center = float(ft @ li)
    return ConfidenceInterval(center, hw, level, ("common", int(i), int(t)),
                              w_lambda=w_lam, w_f=w_f)

"""Information-criterion selection of the number of factors.

For a standardized panel the residual share after k principal components is
``ssr_k = 1 - sum_{j<=k} d_j^2``, computable from the spectrum alone.  The
criterion ``log(ssr_k) + k * g(N, T)`` is minimized over k in 0..rmax for
one of three standard penalty schedules.  A regularized variant replaces
each ``d_j^2`` with ``max(d_j - gamma, 0)^2``, which never lowers the
selected rank and damps borderline marginal components.

Two numerical guards make exact low-rank panels behave: the residual share
is floored at 1e-12 before the log, and once it hits that floor every
larger k is priced at +inf so rounding noise in an identically-zero tail
cannot pull the argmin upward.
"""

import numpy as np

from .errors import InvalidParameterError
from .estimators import PanelData
from .linalg import normalize_panel

__all__ = [
    "ICResult",
    "PENALTIES",
    "SSR_FLOOR",
    "penalty",
    "default_rmax",
    "scree",
    "select_r_ic",
    "select_r_regularized",
    "penalty_gap",
]

PENALTIES = ("p1", "p2", "p3")

# Floor applied to the residual share before taking logs.
SSR_FLOOR = 1e-12


def penalty(name, n_units, n_periods):
    """Penalty-per-factor g(N, T) for the named schedule.

    With ``m = min(N, T)``:

    * p1: ``(N+T)/(N*T) * log(N*T / (N+T))``
    * p2: ``(N+T)/(N*T) * log(m)``
    * p3: ``log(m) / m``

    All three vanish as both dimensions grow while ``min(N,T) * g``
    diverges, the combination that makes the criterion consistent.
    """
    if name not in PENALTIES:
        raise InvalidParameterError("unknown penalty %r" % name)
    N, T = int(n_units), int(n_periods)
    if N < 2 or T < 2:
        raise InvalidParameterError("need N, T >= 2")
    m = min(N, T)
    if name == "p1":
        return (N + T) / (N * T) * np.log(N * T / (N + T))
    if name == "p2":
        return (N + T) / (N * T) * np.log(m)
    return np.log(m) / m


def default_rmax(n_units, n_periods):
    """Default search cap ``min(8, floor(min(N,T)/10) + 1)``."""
    return int(min(8, min(n_units, n_periods) // 10 + 1))


def scree(panel, kmax=None):
    """Top squared singular values of Z = X / sqrt(N*T), descending.

    Computed from the smaller Gram matrix; tiny negative eigenvalues from
    rounding are clipped to zero.
    """
    if not isinstance(panel, PanelData):
        raise InvalidParameterError("scree expects a PanelData")
    T, N = panel.shape
    m = min(T, N)
    if kmax is None:
        kmax = m
    if not 1 <= kmax <= m:
        raise InvalidParameterError("kmax=%d outside [1, %d]" % (kmax, m))
    Z = normalize_panel(panel.X)
    G = Z.T @ Z if N <= T else Z @ Z.T
    w = np.linalg.eigvalsh(G)[::-1]
    return np.clip(w[:kmax], 0.0, None)


class ICResult:
    """Criterion table from one selection run.

    Attributes
    ----------
    k_grid : (rmax+1,) ndarray of int
        Candidate ranks 0..rmax.
    criterion_values : (rmax+1,) ndarray
        ``log(max(ssr_k, floor)) + k * g``; +inf past the exact-rank
        guard.
    ssr_values : (rmax+1,) ndarray
        Residual shares before flooring (clipped below at 0).
    selected_r : int
        Argmin of the criterion; ties go to the smallest k.
    penalty_name : str
    penalty_value : float
    gamma : float
        0 for the plain criterion.
    n_units, n_periods : int
    """

    def __init__(self, k_grid, criterion_values, ssr_values, selected_r,
                 penalty_name, penalty_value, gamma, n_units, n_periods):
        self.k_grid = k_grid
        self.criterion_values = criterion_values
        self.ssr_values = ssr_values
        self.selected_r = int(selected_r)
        self.penalty_name = penalty_name
        self.penalty_value = float(penalty_value)
        self.gamma = float(gamma)
        self.n_units = int(n_units)
        self.n_periods = int(n_periods)


def _criterion_table(d2, n_units, n_periods, rmax, gamma, penalty_name):
    # shared computation for the plain and regularized criteria; gamma=0
    # reproduces the plain path bit for bit
    g = penalty(penalty_name, n_units, n_periods)
    d = np.sqrt(np.clip(d2[:rmax], 0.0, None))
    explained = np.concatenate(([0.0], np.cumsum(np.maximum(d - gamma, 0.0) ** 2)))
    ssr = np.clip(1.0 - explained, 0.0, None)
    k = np.arange(rmax + 1)
    crit = np.log(np.maximum(ssr, SSR_FLOOR)) + k * g
    floored = np.flatnonzero(ssr <= SSR_FLOOR)
    if floored.size:
        # exact-rank guard: past the first floored k the spectrum carries
        # no information, so larger ranks must never win on noise
        crit[floored[0] + 1:] = np.inf
    selected = int(np.argmin(crit))
    return ICResult(k, crit, ssr, selected, penalty_name, g, gamma,
                    n_units, n_periods)


def select_r_ic(panel, rmax=None, penalty_name="p1"):
    """Select the factor count by the plain information criterion.

    Parameters
    ----------
    panel : PanelData
        Must be standardized; the residual-share identity the criterion is
        built on needs unit-variance columns.
    rmax : int, optional
        Search cap, defaults to :func:`default_rmax`; must leave at least
        one spare dimension (rmax <= min(N, T) - 1).
    penalty_name : str
        One of ``"p1"``, ``"p2"``, ``"p3"``.

    Returns
    -------
    ICResult
    """
    return select_r_regularized(panel, rmax=rmax, gamma=0.0,
                                penalty_name=penalty_name)


def select_r_regularized(panel, rmax=None, gamma=0.0, penalty_name="p1"):
    """Selection with soft-thresholded explained shares.

    ``gamma=0`` is identical to :func:`select_r_ic` (same code path).  The
    selected rank is nonincreasing in gamma.
    """
    if not isinstance(panel, PanelData):
        raise InvalidParameterError("selection expects a PanelData")
    if not panel.standardized:
        raise InvalidParameterError(
            "selection requires a standardized panel (unit-variance columns)"
        )
    if gamma < 0.0 or not np.isfinite(gamma):
        raise InvalidParameterError("gamma must be finite and >= 0")
    T, N = panel.shape
    if rmax is None:
        rmax = default_rmax(N, T)
    if not 1 <= rmax <= min(N, T) - 1:
        raise InvalidParameterError(
            "rmax=%d outside [1, %d]" % (rmax, min(N, T) - 1)
        )
    d2 = scree(panel, kmax=rmax)
    return _criterion_table(d2, N, T, rmax, gamma, penalty_name)


def penalty_gap(ic_plain, ic_reg):
    """Additive wedge the threshold drives between the two criteria.

    Per k this is ``(ssr_reg_k - ssr_plain_k) / ssr_reg_k``, the first
    order term of ``criterion_reg - criterion_plain``; it is zero at k=0,
    nonnegative everywhere, and identically zero when the regularized run
    used gamma=0.
    """
    if ic_plain.gamma != 0.0:
        raise InvalidParameterError("first argument must be a gamma=0 run")
    if (ic_plain.n_units, ic_plain.n_periods) != (ic_reg.n_units, ic_reg.n_periods):
        raise InvalidParameterError("criterion runs are from different panels")
    if ic_plain.k_grid.shape != ic_reg.k_grid.shape:
        raise InvalidParameterError("criterion runs use different rmax")
    num = ic_reg.ssr_values - ic_plain.ssr_values
    den = np.maximum(ic_reg.ssr_values, SSR_FLOOR)
    gap = num / den
    return np.clip(gap, 0.0, None)

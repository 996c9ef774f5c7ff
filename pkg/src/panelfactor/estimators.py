"""Principal-components estimators for large approximate factor models.

A T x N panel X (rows are time periods, columns are units) is modelled as a
rank-r common component plus an idiosyncratic part.  All estimators work on
the rescaled matrix Z = X / sqrt(N*T) and differ only in how the singular
values are split between the factor and loading blocks:

* APC: factors are sqrt(T) times the left singular vectors, loadings absorb
  the full singular values.  Factor columns are orthonormal after division
  by sqrt(T); the loading cross-product is diagonal.
* PC: the singular values are split symmetrically, so both cross-products
  equal diag(d).
* RPC: PC with soft-thresholded singular values max(d - gamma, 0); the
  solution of the rank-constrained ridge objective.

An alternating least squares route to the APC solution is provided as well;
it converges to the same common component from random starts.
"""

import numpy as np

from .errors import (
    DataError,
    DegenerateSpectrumError,
    DegenerateSystemError,
    InvalidParameterError,
    NonConvergenceError,
)
from .linalg import RANK_TOL, normalize_panel, svt, truncated_svd

__all__ = [
    "PanelData",
    "FactorDecomposition",
    "standardize",
    "as_panel",
    "estimate_apc",
    "estimate_pc",
    "estimate_rpc",
    "als_solve",
    "common_component",
    "ssr",
    "suggest_gamma",
    "apc_pc_relation",
]


# =========================================================================
# panel container
# =========================================================================

class PanelData:
    """Immutable T x N data panel with its standardization record.

    Attributes
    ----------
    X : (T, N) ndarray
        The panel as used by the estimators (already standardized when
        ``standardized`` is True).
    standardized : bool
        Whether columns were demeaned and scaled to unit variance.
    column_means, column_sds : (N,) ndarray
        The statistics removed from the raw data; zeros and ones when no
        standardization was applied.
    names : tuple of str, optional
        Unit (column) names, if the source file carried a header.
    """

    def __init__(self, X, standardized, column_means, column_sds, names=None):
        X = np.array(X, dtype=float)
        if X.ndim != 2:
            raise DataError("panel must be 2-d")
        if not np.all(np.isfinite(X)):
            raise DataError("panel contains non-finite entries")
        if X.shape[0] < 2 or X.shape[1] < 2:
            raise DataError(
                "panel must be at least 2 x 2, got %d x %d" % X.shape
            )
        self.X = X
        self.standardized = bool(standardized)
        self.column_means = np.array(column_means, dtype=float)
        self.column_sds = np.array(column_sds, dtype=float)
        if self.column_means.shape != (X.shape[1],) or self.column_sds.shape != (
            X.shape[1],
        ):
            raise DataError("column statistics do not match panel width")
        self.names = tuple(names) if names is not None else None
        if self.names is not None and len(self.names) != X.shape[1]:
            raise DataError("got %d names for %d columns" % (len(self.names), X.shape[1]))
        for a in (self.X, self.column_means, self.column_sds):
            a.setflags(write=False)

    @property
    def shape(self):
        return self.X.shape

    @property
    def n_periods(self):
        return self.X.shape[0]

    @property
    def n_units(self):
        return self.X.shape[1]

    def unstandardize(self, M):
        """Map a matrix in standardized units back to the original scale."""
        M = np.asarray(M, dtype=float)
        if M.shape != self.X.shape:
            raise DataError("matrix shape %s does not match panel %s" % (M.shape, self.X.shape))
        return M * self.column_sds + self.column_means


def standardize(X, names=None):
    """Demean each column and scale it to unit variance.

    The scale is the population standard deviation (divisor T, not T-1):
    that is the convention under which the squared singular values of
    Z = X / sqrt(N*T) sum to one, which the rank-selection criteria rely
    on.

    Parameters
    ----------
    X : (T, N) ndarray
    names : sequence of str, optional

    Returns
    -------
    PanelData
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("panel must be 2-d")
    if not np.all(np.isfinite(X)):
        raise DataError("panel contains non-finite entries")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    dead = sd <= 0.0
    if np.any(dead):
        raise DataError(
            "column %d has zero variance and cannot be standardized"
            % int(np.flatnonzero(dead)[0])
        )
    return PanelData((X - mu) / sd, True, mu, sd, names=names)


def as_panel(X, names=None):
    """Wrap a matrix as a PanelData without transforming it.

    Columns that already happen to be standardized (mean within 1e-10 of
    zero, population sd within 1e-8 of one) are recognized and the flag is
    set accordingly, so downstream checks that require standardization
    still work on externally prepared data.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("panel must be 2-d")
    if not np.all(np.isfinite(X)):
        raise DataError("panel contains non-finite entries")
    already = bool(
        np.all(np.abs(X.mean(axis=0)) <= 1e-10)
        and np.all(np.abs(X.std(axis=0) - 1.0) <= 1e-8)
    )
    N = X.shape[1]
    return PanelData(X, already, np.zeros(N), np.ones(N), names=names)


# =========================================================================
# decomposition container
# =========================================================================

class FactorDecomposition:
    """Fitted factors and loadings from one of the spectral estimators.

    Attributes
    ----------
    F : (T, r) ndarray
        Estimated factors.
    Lambda : (N, r) ndarray
        Estimated loadings.
    D2 : (r,) ndarray
        Squared singular values of Z = X / sqrt(N*T) (the eigenvalues of
        ZZ'), unthresholded for every flavor.
    flavor : str
        One of ``"apc"``, ``"pc"``, ``"rpc"``.
    gamma : float or None
        Threshold used, RPC only.
    r : int
    """

    FLAVORS = ("apc", "pc", "rpc")

    def __init__(self, F, Lambda, D2, flavor, r, gamma=None):
        if flavor not in self.FLAVORS:
            raise InvalidParameterError("unknown flavor %r" % flavor)
        self.F = F
        self.Lambda = Lambda
        self.D2 = D2
        self.flavor = flavor
        self.gamma = gamma
        self.r = int(r)
        for a in (self.F, self.Lambda, self.D2):
            a.setflags(write=False)

    @property
    def shape(self):
        return (self.F.shape[0], self.Lambda.shape[0])


def _check_rank(panel, r):
    T, N = panel.shape
    if not 1 <= r <= min(T, N):
        raise InvalidParameterError(
            "r=%d outside [1, %d] for a %d x %d panel" % (r, min(T, N), T, N)
        )


# =========================================================================
# spectral estimators
# =========================================================================

def estimate_apc(panel, r):
    """Asymptotic principal components fit of rank r.

    Factors are sqrt(T) times the top left singular vectors of Z, loadings
    are sqrt(N) times the right singular vectors scaled by the singular
    values.  Under this normalization F'F/T is the identity and
    Lambda'Lambda/N is diag(D2).

    Parameters
    ----------
    panel : PanelData
    r : int

    Returns
    -------
    FactorDecomposition
    """
    _check_rank(panel, r)
    T, N = panel.shape
    s = truncated_svd(normalize_panel(panel.X), r)
    F = np.sqrt(T) * s.U
    Lam = np.sqrt(N) * (s.V * s.D)
    return FactorDecomposition(F, Lam, s.D ** 2, "apc", r)


def estimate_pc(panel, r):
    """Symmetric principal-components fit: both blocks carry sqrt(d).

    Under this normalization F'F/T and Lambda'Lambda/N both equal diag(d),
    the singular values of Z.
    """
    _check_rank(panel, r)
    T, N = panel.shape
    s = truncated_svd(normalize_panel(panel.X), r)
    rootd = np.sqrt(s.D)
    F = np.sqrt(T) * (s.U * rootd)
    Lam = np.sqrt(N) * (s.V * rootd)
    return FactorDecomposition(F, Lam, s.D ** 2, "pc", r)


def estimate_rpc(panel, r, gamma):
    """Regularized PC fit: singular values soft-thresholded at gamma.

    Solves the rank-r ridge objective
    ``0.5 * (||Z - F L'||^2 + gamma ||F||^2 + gamma ||L||^2)`` up to the
    usual rescaling of F by sqrt(T) and of the loadings by sqrt(N).
    ``gamma=0`` reproduces the PC fit exactly; gamma at or above the top
    singular value drives both blocks to zero.
    """
    _check_rank(panel, r)
    if gamma < 0.0 or not np.isfinite(gamma):
        raise InvalidParameterError("gamma must be finite and >= 0, got %r" % gamma)
    T, N = panel.shape
    s = truncated_svd(normalize_panel(panel.X), r)
    dg = svt(s.D, gamma).D_gamma
    rootdg = np.sqrt(dg)
    F = np.sqrt(T) * (s.U * rootdg)
    Lam = np.sqrt(N) * (s.V * rootdg)
    return FactorDecomposition(F, Lam, s.D ** 2, "rpc", r, gamma=float(gamma))


def suggest_gamma(panel, r):
    """The (r+1)-th singular value of Z, a natural threshold scale.

    Returns 0.0 when r already exhausts min(N, T).
    """
    _check_rank(panel, r)
    T, N = panel.shape
    if r == min(T, N):
        return 0.0
    s = truncated_svd(normalize_panel(panel.X), r + 1)
    return float(s.D[-1])


def apc_pc_relation(fd):
    """Recover the PC pair from an APC fit via F d^(1/2), Lambda d^(-1/2).

    Raises
    ------
    DegenerateSpectrumError
        If any retained singular value is numerically zero, in which case
        the loading-side relation involves a division by zero.  (The PC
        estimator itself is still defined in that case; only this
        conversion is not.)
    """
    if fd.flavor != "apc":
        raise InvalidParameterError("relation starts from an APC fit")
    d = np.sqrt(fd.D2)
    scale = d[0] if d.size and d[0] > 0 else 1.0
    if np.any(d <= RANK_TOL * scale):
        raise DegenerateSpectrumError(
            "zero singular value among the first %d; cannot rescale loadings" % fd.r
        )
    rootd = np.sqrt(d)
    return fd.F * rootd, fd.Lambda / rootd


# =========================================================================
# alternating least squares
# =========================================================================

def als_solve(panel, r, tol=1e-9, max_iter=1000, seed=0):
    """Reach the APC solution by alternating least squares.

    Starting from r random orthonormalized factor columns, alternates the
    loading regression ``Lambda' = F'X/T`` with the factor regression
    ``F = X Lambda (Lambda'Lambda)^-1``, re-orthonormalizing F each sweep.
    Convergence is declared when the relative change in mean squared
    residual falls below ``tol``.  On exit the factors are rotated onto
    the principal axes of the loadings so the output satisfies the same
    normalization as :func:`estimate_apc`.

    Parameters
    ----------
    panel : PanelData
    r : int
    tol : float
        Relative SSR change threshold.
    max_iter : int
    seed : int
        Seed for the random start.  Different seeds reach the same common
        component.

    Returns
    -------
    FactorDecomposition
        With flavor ``"apc"``.

    Raises
    ------
    NonConvergenceError
        If ``max_iter`` sweeps pass without meeting ``tol``; the last
        iterate rides along on the exception as ``result``.
    """
    _check_rank(panel, r)
    if tol <= 0.0:
        raise InvalidParameterError("tol must be positive")
    X = panel.X
    T, N = panel.shape

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((T, r)))
    F = np.sqrt(T) * Q

    msq = float(np.mean(X * X))
    prev = np.inf
    Lam = None
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        # loadings given F (F'F/T = I after re-orthonormalization)
        Lam = X.T @ F / T
        # factors given loadings
        G = Lam.T @ Lam
        try:
            F = np.linalg.solve(G, Lam.T @ X.T).T
        except np.linalg.LinAlgError:
            raise DegenerateSystemError(
                "loading cross-product singular at sweep %d" % it
            ) from None
        Q, _ = np.linalg.qr(F)
        F = np.sqrt(T) * Q
        cur = float(np.sum((X - F @ (X.T @ F / T).T) ** 2) / (N * T))
        if cur <= 1e-14 * max(msq, 1e-300):
            converged = True
            break
        if np.isfinite(prev) and abs(prev - cur) <= tol * max(prev, 1e-300):
            converged = True
            break
        prev = cur

    Lam = X.T @ F / T
    # rotate onto principal axes: makes Lambda'Lambda/N diagonal while
    # keeping F'F/T = I and the common component unchanged
    w, W = np.linalg.eigh(Lam.T @ Lam / N)
    order = np.argsort(-w, kind="stable")
    w, W = w[order], W[:, order]
    F = F @ W
    Lam = Lam @ W
    for j in range(r):
        i = int(np.argmax(np.abs(F[:, j])))
        if F[i, j] < 0.0:
            F[:, j] = -F[:, j]
            Lam[:, j] = -Lam[:, j]
    out = FactorDecomposition(F, Lam, np.clip(w, 0.0, None), "apc", r)
    if not converged:
        raise NonConvergenceError(
            "ALS did not converge in %d sweeps" % max_iter, result=out
        )
    return out


# =========================================================================
# derived quantities
# =========================================================================

def common_component(fd):
    """Fitted common component ``F @ Lambda'`` in data units."""
    return fd.F @ fd.Lambda.T


def ssr(panel, fd):
    """Mean squared residual ``||X - F Lambda'||_F^2 / (N*T)``.

    For an APC or PC fit on a standardized panel this equals
    ``1 - sum(D2[:r])`` up to floating-point error.
    """
    T, N = panel.shape
    if fd.F.shape[0] != T or fd.Lambda.shape[0] != N:
        raise DataError(
            "fit of shape %s does not match panel %s" % (fd.shape, (T, N))
        )
    R = panel.X - fd.F @ fd.Lambda.T
    return float(np.sum(R * R) / (N * T))

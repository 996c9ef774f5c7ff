"""Rotation matrices linking estimated factors to the truth, and their limit.

Spectral factor estimates are only identified up to an invertible r x r
rotation: the fitted factors estimate ``F0 @ H`` for a data-dependent H, and
the loadings estimate ``Lambda0 @ inv(H)'``.  This module computes the five
standard candidates for H, which agree asymptotically but differ in finite
samples, and the analytic limit Q they all converge to (up to sign).

Conventions: H indices 0 through 4 follow the order

* H0: baseline, ``(L0'L0/N) (F0'F~/T) inv(diag(D2))``
* H1: ``(L0'L0) inv(L~'L0)``
* H2: ``inv(F0'F0) (F0'F~)``
* H3: ``inv(F~'F0/T)``
* H4: ``(L0'L~/N) inv(diag(D2))``

where F~, L~ are an APC fit and D2 its squared singular values.
"""

import numpy as np

from .errors import (
    DataError,
    DegenerateGeometryError,
    InvalidParameterError,
    NonDistinctEigenvaluesError,
)

__all__ = [
    "RotationSet",
    "QLimit",
    "rotation_matrix",
    "rotation_set",
    "q_analytic",
    "q_empirical",
    "align_signs",
]

_RCOND_MIN = 1e-12


# =========================================================================
# helpers
# =========================================================================

def _check_inputs(F0, Lambda0, fd):
    F0 = np.asarray(F0, dtype=float)
    L0 = np.asarray(Lambda0, dtype=float)
    if fd.flavor != "apc":
        raise InvalidParameterError("rotations are defined for APC fits")
    r = fd.r
    if F0.ndim != 2 or F0.shape != (fd.F.shape[0], r):
        raise DataError("F0 must be %s, got %s" % ((fd.F.shape[0], r), F0.shape))
    if L0.ndim != 2 or L0.shape != (fd.Lambda.shape[0], r):
        raise DataError(
            "Lambda0 must be %s, got %s" % ((fd.Lambda.shape[0], r), L0.shape)
        )
    return F0, L0


def _rcond(A):
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def _rms_scale(M):
    # largest root-mean-square column magnitude; the natural size of the
    # entries a cross-product of M with something similar should have
    return float(np.sqrt(np.max(np.sum(M * M, axis=0)) / M.shape[0]))


def _inv_or_degenerate(A, scale, what):
    # `scale` is the size the entries of A would have were the geometry
    # healthy; judging the smallest singular value against A's own norm
    # would wave through a uniformly tiny cross-product (e.g. estimates
    # orthogonal to the truth, where A is all noise).
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= _RCOND_MIN * max(scale, 1e-300):
        raise DegenerateGeometryError(
            "%s is numerically singular relative to its inputs" % what
        )
    return np.linalg.inv(A)


def _d2_inv(fd):
    scale = fd.D2[0] if fd.D2.size and fd.D2[0] > 0 else 1.0
    if np.any(fd.D2 <= _RCOND_MIN * scale):
        raise DegenerateGeometryError("zero squared singular value in the fit")
    return 1.0 / fd.D2


def align_signs(fd, F0):
    """Flip factor and loading column signs so diag(F0' F~) > 0.

    Returns a new decomposition of the same flavor; the common component is
    unchanged.  Useful before comparing an estimate against a known truth.
    """
    F0 = np.asarray(F0, dtype=float)
    if F0.shape != fd.F.shape:
        raise DataError("F0 shape %s does not match fit %s" % (F0.shape, fd.F.shape))
    signs = np.where(np.sum(F0 * fd.F, axis=0) < 0.0, -1.0, 1.0)
    # circular import avoided: rebuild through the class of the input
    return type(fd)(fd.F * signs, fd.Lambda * signs, fd.D2.copy(), fd.flavor,
                    fd.r, gamma=fd.gamma)


# =========================================================================
# rotation matrices
# =========================================================================

def rotation_matrix(ell, F0, Lambda0, fd):
    """One of the five rotation matrices tying an APC fit to the truth.

    Parameters
    ----------
    ell : int
        Which candidate, 0 through 4 (see module docstring).
    F0 : (T, r) ndarray
        True factors.
    Lambda0 : (N, r) ndarray
        True loadings.
    fd : FactorDecomposition
        An APC fit of the same panel at the same rank.

    Returns
    -------
    (r, r) ndarray

    Raises
    ------
    DegenerateGeometryError
        If a cross-product that must be inverted is numerically singular,
        for example when the estimated factors are orthogonal to the truth.
    """
    if ell not in (0, 1, 2, 3, 4):
        raise InvalidParameterError("ell must be in 0..4, got %r" % ell)
    F0, L0 = _check_inputs(F0, Lambda0, fd)
    T = F0.shape[0]
    N = L0.shape[0]
    Ft, Lt = fd.F, fd.Lambda

    if ell == 0:
        return (L0.T @ L0 / N) @ (F0.T @ Ft / T) * _d2_inv(fd)
    if ell == 1:
        scale = N * _rms_scale(Lt) * _rms_scale(L0)
        return (L0.T @ L0) @ _inv_or_degenerate(Lt.T @ L0, scale, "L~'L0")
    if ell == 2:
        scale = T * _rms_scale(F0) ** 2
        return _inv_or_degenerate(F0.T @ F0, scale, "F0'F0") @ (F0.T @ Ft)
    if ell == 3:
        scale = _rms_scale(Ft) * _rms_scale(F0)
        return _inv_or_degenerate(Ft.T @ F0 / T, scale, "F~'F0/T")
    return (L0.T @ Lt / N) * _d2_inv(fd)


class RotationSet:
    """All five rotation matrices for one fit, plus their spread.

    Attributes
    ----------
    H : tuple of five (r, r) ndarrays
    max_pairwise_dev : float
        ``max_l ||H_l - H_0||_F``, a finite-sample gauge of how far the
        candidates are from their common limit.
    """

    def __init__(self, H, max_pairwise_dev):
        self.H = tuple(H)
        self.max_pairwise_dev = float(max_pairwise_dev)

    def __getitem__(self, ell):
        return self.H[ell]


def rotation_set(F0, Lambda0, fd):
    """Compute all five rotation matrices at once.

    Each candidate is checked to be invertible (rcond at least 1e-12).
    """
    H = [rotation_matrix(ell, F0, Lambda0, fd) for ell in range(5)]
    for ell, Hl in enumerate(H):
        if _rcond(Hl) < _RCOND_MIN:
            raise DegenerateGeometryError("H%d is numerically singular" % ell)
    dev = max(np.linalg.norm(Hl - H[0]) for Hl in H[1:])
    return RotationSet(H, dev)


# =========================================================================
# the limit Q
# =========================================================================

class QLimit:
    """Asymptotic rotation limit built from population second moments.

    Attributes
    ----------
    Q : (r, r) ndarray
        The limit ``diag(d_r) Upsilon' Sigma_Lambda^(-1/2)``.
    D2_r : (r,) ndarray
        Eigenvalues of ``Sigma_Lambda^(1/2) Sigma_F Sigma_Lambda^(1/2)``,
        descending; the limits of the squared singular values.
    Upsilon : (r, r) ndarray
        The corresponding orthonormal eigenvectors.
    Sigma_F, Sigma_Lambda : (r, r) ndarray
        The inputs, symmetrized.
    """

    def __init__(self, Q, D2_r, Upsilon, Sigma_F, Sigma_Lambda):
        self.Q = Q
        self.D2_r = D2_r
        self.Upsilon = Upsilon
        self.Sigma_F = Sigma_F
        self.Sigma_Lambda = Sigma_Lambda


def _sym_check(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidParameterError("%s must be square" % name)
    scale = max(1.0, float(np.max(np.abs(A))))
    if float(np.max(np.abs(A - A.T))) > 1e-10 * scale:
        raise InvalidParameterError("%s must be symmetric" % name)
    return 0.5 * (A + A.T)


def _spd_sqrt(A, name):
    w, V = np.linalg.eigh(A)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise InvalidParameterError("%s must be positive definite" % name)
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def q_analytic(Sigma_F, Sigma_Lambda):
    """Analytic rotation limit from the two population second moments.

    Forms ``Sigma = Sigma_Lambda^(1/2) Sigma_F Sigma_Lambda^(1/2)``, takes
    its eigendecomposition ``Upsilon diag(D2_r) Upsilon'`` (eigenvalues
    must be distinct), and returns
    ``Q = diag(sqrt(D2_r)) Upsilon' Sigma_Lambda^(-1/2)``.

    The two defining identities,
    ``Q' inv(diag(D2_r)) Q = inv(Sigma_Lambda)`` and
    ``Q inv(Sigma_F) Q' = I``, hold by construction and are what the
    feasible inference formulas lean on.

    Raises
    ------
    NonDistinctEigenvaluesError
        If two eigenvalues of Sigma are within 1e-8 relative, in which
        case the eigenbasis (and hence Q) is not uniquely ordered.
    """
    SF = _sym_check(Sigma_F, "Sigma_F")
    SL = _sym_check(Sigma_Lambda, "Sigma_Lambda")
    if SF.shape != SL.shape:
        raise InvalidParameterError("Sigma_F and Sigma_Lambda must share shape")
    half, inv_half = _spd_sqrt(SL, "Sigma_Lambda")
    # Sigma_F only needs to be PSD for the construction, but a singular
    # Sigma_F collapses an eigenvalue to zero and trips the tie check.
    Sigma = half @ SF @ half
    w, V = np.linalg.eigh(Sigma)
    w, V = w[::-1], np.ascontiguousarray(V[:, ::-1])
    gaps = -np.diff(w)
    if w.size > 1 and np.any(gaps < 1e-8 * max(w[0], 1e-300)):
        raise NonDistinctEigenvaluesError(
            "eigenvalue gap below 1e-8 relative; Q is not identified"
        )
    # deterministic eigenvector signs, same convention as the SVD
    for j in range(V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0.0:
            V[:, j] = -V[:, j]
    Q = (np.sqrt(w)[:, None] * V.T) @ inv_half
    return QLimit(Q, w, V, SF, SL)


def q_empirical(F0, fd):
    """Finite-sample counterpart of Q: ``F~' F0 / T``.

    Converges to :func:`q_analytic`'s Q (up to row signs tied to the sign
    indeterminacy of the fitted factors) as both panel dimensions grow.
    Equals ``inv(H3)`` by definition.
    """
    F0 = np.asarray(F0, dtype=float)
    if F0.shape != fd.F.shape:
        raise DataError("F0 shape %s does not match fit %s" % (F0.shape, fd.F.shape))
    return fd.F.T @ F0 / F0.shape[0]

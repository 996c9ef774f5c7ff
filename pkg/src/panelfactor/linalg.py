"""Dense linear-algebra kernel used by every estimator in the package.

Provides panel rescaling, a deterministic truncated SVD built on the smaller
Gram matrix, singular-value soft-thresholding, and a slow but self-contained
Jacobi eigen-solver kept around as an independent cross-check for the fast
path.
"""

import numpy as np

from .errors import (
    DataError,
    InvalidParameterError,
    NumericalError,
)

__all__ = [
    "SvdResult",
    "ThresholdedSpectrum",
    "normalize_panel",
    "truncated_svd",
    "svt",
    "dense_eigen_oracle",
    "RANK_TOL",
]

# Relative cutoff below which a singular value is treated as exactly zero
# for rank decisions (relative to the largest singular value).
RANK_TOL = 1e-12

# Largest matrix the Jacobi oracle will accept.  It is O(n^3) per sweep and
# meant for verification, not production work.
_ORACLE_MAX_DIM = 500


# =========================================================================
# result containers
# =========================================================================

class SvdResult:
    """Rank-k truncated SVD, ``Z ~ U @ diag(D) @ V.T``.

    Attributes
    ----------
    U : (T, k) ndarray
        Left singular vectors, orthonormal columns.
    D : (k,) ndarray
        Singular values, nonincreasing and nonnegative.
    V : (N, k) ndarray
        Right singular vectors, orthonormal columns.
    k : int
        Number of retained singular triplets.
    """

    def __init__(self, U, D, V, k):
        self.U = U
        self.D = D
        self.V = V
        self.k = int(k)
        for a in (self.U, self.D, self.V):
            a.setflags(write=False)

    def reconstruct(self):
        """Best rank-k approximation ``U @ diag(D) @ V.T``."""
        return (self.U * self.D) @ self.V.T


class ThresholdedSpectrum:
    """Soft-thresholded singular values ``max(D - gamma, 0)``."""

    def __init__(self, D_gamma, gamma):
        self.D_gamma = D_gamma
        self.gamma = float(gamma)
        self.D_gamma.setflags(write=False)

    @property
    def rank(self):
        """Number of entries still strictly positive after thresholding."""
        return int(np.sum(self.D_gamma > 0.0))


# =========================================================================
# panel rescaling
# =========================================================================

def normalize_panel(X):
    """Rescale a T x N panel to Z = X / sqrt(N*T).

    This is the scaling under which the squared singular values of Z sum
    to mean-square of the data; for a column-standardized panel that sum
    is 1 up to floating-point error.

    Parameters
    ----------
    X : (T, N) ndarray
        Data panel, rows indexing time.

    Returns
    -------
    (T, N) ndarray
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("panel must be a 2-d array, got ndim=%d" % X.ndim)
    if not np.all(np.isfinite(X)):
        raise DataError("panel contains non-finite entries")
    T, N = X.shape
    if T < 2 or N < 2:
        raise DataError("panel must be at least 2 x 2, got %d x %d" % (T, N))
    return X / np.sqrt(N * T)


# =========================================================================
# truncated SVD via the smaller Gram matrix
# =========================================================================

def _sign_align(U, V):
    # Fix column signs: the entry of largest magnitude in each column of U
    # is made positive, and V is flipped in tandem so U D V' is unchanged.
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0.0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]
    return U, V


def _complete_orthonormal(B, count):
    # Deterministically extend the orthonormal columns of B (n x m) by
    # `count` further orthonormal columns, drawn from the canonical basis.
    n = B.shape[0]
    cols = [B[:, j] for j in range(B.shape[1])]
    added = []
    for i in range(n):
        if len(added) == count:
            break
        v = np.zeros(n)
        v[i] = 1.0
        for u in cols:
            v = v - np.dot(u, v) * u
        nrm = np.linalg.norm(v)
        if nrm > 0.5:
            v = v / nrm
            cols.append(v)
            added.append(v)
    if len(added) < count:
        raise NumericalError("could not complete an orthonormal basis")
    return np.column_stack(added)


def _paired_vectors(Z, W, d):
    # Given right (or left) singular vectors W of Z and singular values d,
    # recover the matching vectors on the other side as Z W / d.  Working
    # through the Gram matrix floors true zeros at about sqrt(eps) times
    # the top singular value, so magnitude alone cannot tell a tiny
    # singular value from a noise one; a pairing whose result is far from
    # unit length exposes the noise case.  Those columns get an exact zero
    # singular value and a deterministic orthonormal filler that adds
    # nothing to the reconstruction.
    scale = d[0] if d.size and d[0] > 0.0 else 1.0
    live = d > RANK_TOL * scale
    P = np.zeros((Z.shape[0], W.shape[1]))
    if np.any(live):
        P[:, live] = (Z @ W[:, live]) / d[live]
    healthy = live & (np.linalg.norm(P, axis=0) > 0.5)
    d = np.where(healthy, d, 0.0)
    n_dead = int(np.sum(~healthy))
    if n_dead:
        P[:, ~healthy] = _complete_orthonormal(P[:, healthy], n_dead)
    return P, d


def truncated_svd(Z, k):
    """Top-k singular triplets of Z, computed from the smaller Gram matrix.

    Works through ``Z'Z`` when N <= T and ``ZZ'`` otherwise, so the eigen
    problem is always min(N, T) x min(N, T).  Output is deterministic:
    column signs follow the largest-magnitude-entry convention, and tied
    singular values keep the order the eigen routine produced.

    Parameters
    ----------
    Z : (T, N) ndarray
    k : int
        Number of triplets, 1 <= k <= min(T, N).

    Returns
    -------
    SvdResult
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise DataError("expected a 2-d array, got ndim=%d" % Z.ndim)
    if not np.all(np.isfinite(Z)):
        raise DataError("matrix contains non-finite entries")
    T, N = Z.shape
    if not 1 <= k <= min(T, N):
        raise InvalidParameterError(
            "k=%d outside [1, %d] for a %d x %d matrix" % (k, min(T, N), T, N)
        )

    if N <= T:
        w, Vfull = np.linalg.eigh(Z.T @ Z)
        w = w[::-1][:k]
        V = np.ascontiguousarray(Vfull[:, ::-1][:, :k])
        d = np.sqrt(np.clip(w, 0.0, None))
        U, d = _paired_vectors(Z, V, d)
    else:
        w, Ufull = np.linalg.eigh(Z @ Z.T)
        w = w[::-1][:k]
        U = np.ascontiguousarray(Ufull[:, ::-1][:, :k])
        d = np.sqrt(np.clip(w, 0.0, None))
        V, d = _paired_vectors(Z.T, U, d)

    U, V = _sign_align(U, V)
    return SvdResult(U=U, D=d, V=V, k=k)


# =========================================================================
# singular value soft-thresholding
# =========================================================================

def svt(D, gamma):
    """Soft-threshold a singular value vector: ``max(D - gamma, 0)``.

    Parameters
    ----------
    D : (k,) ndarray
        Nonincreasing, nonnegative singular values.
    gamma : float
        Threshold, >= 0.  ``gamma=0`` returns D unchanged; gamma at or
        above ``D[0]`` zeroes everything.

    Returns
    -------
    ThresholdedSpectrum
    """
    D = np.asarray(D, dtype=float)
    if D.ndim != 1:
        raise InvalidParameterError("D must be 1-d")
    if gamma < 0.0 or not np.isfinite(gamma):
        raise InvalidParameterError("gamma must be finite and >= 0, got %r" % gamma)
    if D.size and (np.any(D < 0.0) or np.any(np.diff(D) > 1e-12 * max(1.0, D[0]))):
        raise InvalidParameterError("D must be nonincreasing and nonnegative")
    return ThresholdedSpectrum(np.maximum(D - gamma, 0.0), gamma)


# =========================================================================
# Jacobi eigen oracle
# =========================================================================

def dense_eigen_oracle(S, max_sweeps=100):
    """Full symmetric eigendecomposition by cyclic Jacobi sweeps.

    Independent of the LAPACK path used by :func:`truncated_svd`; exists so
    the fast route can be verified against a from-scratch method.  Cost is
    O(n^3) per sweep, only sensible for n up to a few hundred.

    Parameters
    ----------
    S : (n, n) ndarray
        Symmetric matrix (checked to 1e-12 relative).
    max_sweeps : int
        Cap on full sweeps before giving up.

    Returns
    -------
    (w, V) : ((n,) ndarray, (n, n) ndarray)
        Eigenvalues in nonincreasing order and matching orthonormal
        eigenvectors, ``S ~ V @ diag(w) @ V.T``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError("oracle expects a square matrix")
    n = S.shape[0]
    if n > _ORACLE_MAX_DIM:
        raise InvalidParameterError(
            "oracle limited to n <= %d, got n=%d" % (_ORACLE_MAX_DIM, n)
        )
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if float(np.max(np.abs(S - S.T))) > 1e-12 * scale:
        raise DataError("matrix is not symmetric within tolerance")

    A = 0.5 * (S + S.T)
    V = np.eye(n)
    fro = np.linalg.norm(A)
    if fro == 0.0:
        return np.zeros(n), V
    stop = 1e-14 * fro

    converged = False
    for _ in range(max_sweeps):
        # Measure the off-diagonal mass directly: the subtraction form
        # sum(A*A) - sum(diag^2) cancels catastrophically near convergence
        # and cannot resolve values below sqrt(eps) * fro.
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off <= stop:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-16 * fro:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J' A J with the rotation in the (p, q) plane
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        converged = False
    if not converged:
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off > stop:
            raise NumericalError(
                "Jacobi sweeps failed to converge (off-diagonal %.3e)" % off
            )

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(V[:, order])

"""Factor estimation under linear restrictions on the loadings.

Restrictions are linear equations R vec(Lambda) = phi on the vectorized
loading matrix, where vec stacks the columns of Lambda (column-major): the
entry in row i, column j of an N x r loading matrix sits at position
(j-1)*N + i, counting from one.  Typical restrictions fix single entries,
equate entries, zero out blocks, or force a loading column to be constant
across a group of units.

Estimation minimizes

    0.5 ||Z - F L'||^2 + 0.5 gamma (||F||^2 + ||L||^2)
        + 0.5 tau ||R vec(L) - phi||^2

over (F, L) by block-coordinate descent, where Z = X / sqrt(N*T).  The
F-step is a ridge regression and is unaffected by the restrictions.  The
L-step is either the penalized linear solve (finite tau, restrictions held
softly) or the exact restricted-ridge correction of the unrestricted
solution (tau infinite, restrictions held exactly).  Iterating the two
steps from the soft-thresholded spectral fit drives the objective down
monotonically.

Restrictions are stated in the units of the reported loading matrix (the
sqrt(N)-scaled convention every estimator here returns); the conversion to
the internal Z scale happens inside :func:`constrained_solve`.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse import csr_array, issparse

from .errors import (
    DataError,
    DegenerateSystemError,
    InfeasibleConstraintsError,
    InvalidParameterError,
    NonConvergenceError,
    NumericalError,
)
from .linalg import normalize_panel, svt, truncated_svd

__all__ = [
    "ConstraintSystem",
    "ConstrainedFit",
    "vec_position",
    "build_restrictions",
    "parse_restriction_spec",
    "f_update",
    "lambda_update_penalized",
    "lambda_restrict_exact",
    "constrained_solve",
]

_RANK_TOL = 1e-10
# beyond this many independent restrictions the Woodbury route stops paying
# for itself and a dense solve of the full (N*r) x (N*r) system is used
_DENSE_FRACTION = 0.25


def vec_position(i, j, n_units):
    """0-based vec index of loading entry (i, j), both 1-based."""
    return (j - 1) * n_units + (i - 1)


def _vec(M):
    return M.reshape(-1, order="F")


def _unvec(v, n_units, n_factors):
    return v.reshape((n_units, n_factors), order="F")


# =========================================================================
# constraint system
# =========================================================================

class ConstraintSystem:
    """A set of m independent linear restrictions R vec(Lambda) = phi.

    Attributes
    ----------
    R : (m, N*r) sparse matrix (CSR)
        Restriction coefficients in column-major vec order.
    phi : (m,) ndarray
        Right-hand sides.
    m : int
        Number of restrictions.
    n_units, n_factors : int
        Dimensions of the loading matrix the system applies to.

    R must have full row rank (checked within 1e-10) and m must stay below
    N*r, otherwise the restrictions determine the loadings outright and
    there is nothing left to estimate.
    """

    def __init__(self, R, phi, n_units, n_factors):
        n_units = int(n_units)
        n_factors = int(n_factors)
        if n_units < 1 or n_factors < 1:
            raise InvalidParameterError("loading dimensions must be positive")
        if issparse(R):
            R = csr_array(R)
        else:
            R = csr_array(np.atleast_2d(np.asarray(R, dtype=float)))
        phi = np.array(phi, dtype=float).reshape(-1)
        m, p = R.shape
        if p != n_units * n_factors:
            raise InvalidParameterError(
                "R has %d columns but vec(Lambda) has length %d"
                % (p, n_units * n_factors)
            )
        if phi.shape != (m,):
            raise InvalidParameterError(
                "phi has length %d for %d restrictions" % (phi.size, m)
            )
        if m > 0 and not np.all(np.isfinite(R.data)):
            raise DataError("restriction coefficients contain non-finite entries")
        if not np.all(np.isfinite(phi)):
            raise DataError("restriction targets contain non-finite entries")
        if m >= n_units * n_factors:
            raise InvalidParameterError(
                "%d restrictions fully determine a %d x %d loading matrix"
                % (m, n_units, n_factors)
            )
        if m > 0:
            dense = R.toarray()
            s = np.linalg.svd(dense, compute_uv=False)
            if s[-1] <= _RANK_TOL * max(1.0, s[0]):
                raise InvalidParameterError(
                    "restriction rows are linearly dependent; build the "
                    "system through build_restrictions to drop redundancy"
                )
        self.R = R
        self.phi = phi
        self.m = m
        self.n_units = n_units
        self.n_factors = n_factors
        self.phi.setflags(write=False)

    @property
    def shape(self):
        return (self.n_units, self.n_factors)

    def violation(self, Lambda):
        """Euclidean norm of R vec(Lambda) - phi."""
        Lambda = np.asarray(Lambda, dtype=float)
        if Lambda.shape != self.shape:
            raise InvalidParameterError(
                "loading matrix %s does not match system %s"
                % (Lambda.shape, self.shape)
            )
        if self.m == 0:
            return 0.0
        return float(np.linalg.norm(self.R @ _vec(Lambda) - self.phi))


# =========================================================================
# restriction building
# =========================================================================

def parse_restriction_spec(text):
    """Parse a restriction block, one primitive per line, into tuples.

    Recognized lines (indices 1-based, ``#`` starts a comment):

    * ``fix i j value``            -- entry (i, j) equals value
    * ``eq i1 j1 i2 j2``           -- entries (i1, j1) and (i2, j2) equal
    * ``zeroblock i1 i2 j1 j2``    -- all entries in rows i1..i2, columns
      j1..j2 equal zero (ranges inclusive)
    * ``homog j i1 i2 [i3 ...]``   -- the loading on factor j is the same
      for every listed unit

    Returns the list of primitives accepted by :func:`build_restrictions`.
    Raises DataError naming the offending line on malformed input.
    """
    prims = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].lower()
        args = parts[1:]
        try:
            if kind == "fix":
                if len(args) != 3:
                    raise ValueError("expected 'fix i j value'")
                prims.append(("fix", int(args[0]), int(args[1]), float(args[2])))
            elif kind == "eq":
                if len(args) != 4:
                    raise ValueError("expected 'eq i1 j1 i2 j2'")
                prims.append(("eq",) + tuple(int(a) for a in args))
            elif kind == "zeroblock":
                if len(args) != 4:
                    raise ValueError("expected 'zeroblock i1 i2 j1 j2'")
                prims.append(("zeroblock",) + tuple(int(a) for a in args))
            elif kind == "homog":
                if len(args) < 3:
                    raise ValueError("expected 'homog j i1 i2 [i3 ...]'")
                prims.append(
                    ("homog", int(args[0]), tuple(int(a) for a in args[1:]))
                )
            else:
                raise ValueError("unknown restriction kind %r" % kind)
        except ValueError as exc:
            raise DataError("restriction line %d: %s" % (lineno, exc)) from None
    return prims


def _check_unit(i, n_units):
    if not 1 <= i <= n_units:
        raise InvalidParameterError(
            "unit index %d outside [1, %d]" % (i, n_units)
        )


def _check_factor(j, n_factors):
    if not 1 <= j <= n_factors:
        raise InvalidParameterError(
            "factor index %d outside [1, %d]" % (j, n_factors)
        )


def build_restrictions(primitives, n_units, n_factors):
    """Assemble primitives into a ConstraintSystem.

    Parameters
    ----------
    primitives : sequence of tuples
        As produced by :func:`parse_restriction_spec`: ``("fix", i, j, v)``,
        ``("eq", i1, j1, i2, j2)``, ``("zeroblock", i1, i2, j1, j2)`` or
        ``("homog", j, (i1, i2, ...))``, indices 1-based.
    n_units, n_factors : int
        Dimensions of the loading matrix being restricted.

    Returns
    -------
    ConstraintSystem
        With redundant rows removed.  An empty primitive list yields an
        m=0 system, which downstream solvers treat as unconstrained.

    Raises
    ------
    InfeasibleConstraintsError
        If the restrictions contradict each other (the augmented system has
        higher rank than the coefficient rows alone).
    InvalidParameterError
        On out-of-range indices or malformed primitives.
    """
    n_units = int(n_units)
    n_factors = int(n_factors)
    p = n_units * n_factors
    rows = []
    rhs = []

    def _entry_row(i, j, value):
        row = np.zeros(p)
        row[vec_position(i, j, n_units)] = 1.0
        rows.append(row)
        rhs.append(float(value))

    for prim in primitives:
        kind = prim[0]
        if kind == "fix":
            _, i, j, v = prim
            _check_unit(i, n_units)
            _check_factor(j, n_factors)
            if not np.isfinite(v):
                raise InvalidParameterError("fix target must be finite")
            _entry_row(i, j, v)
        elif kind == "eq":
            _, i1, j1, i2, j2 = prim
            for i in (i1, i2):
                _check_unit(i, n_units)
            for j in (j1, j2):
                _check_factor(j, n_factors)
            row = np.zeros(p)
            row[vec_position(i1, j1, n_units)] += 1.0
            row[vec_position(i2, j2, n_units)] -= 1.0
            rows.append(row)
            rhs.append(0.0)
        elif kind == "zeroblock":
            _, i1, i2, j1, j2 = prim
            for i in (i1, i2):
                _check_unit(i, n_units)
            for j in (j1, j2):
                _check_factor(j, n_factors)
            if i2 < i1 or j2 < j1:
                raise InvalidParameterError("zeroblock ranges must be nonempty")
            for j in range(j1, j2 + 1):
                for i in range(i1, i2 + 1):
                    _entry_row(i, j, 0.0)
        elif kind == "homog":
            _, j, units = prim
            _check_factor(j, n_factors)
            units = tuple(units)
            if len(units) < 2:
                raise InvalidParameterError(
                    "homogeneity needs at least two units"
                )
            for i in units:
                _check_unit(i, n_units)
            for a, b in zip(units[:-1], units[1:]):
                row = np.zeros(p)
                row[vec_position(a, j, n_units)] += 1.0
                row[vec_position(b, j, n_units)] -= 1.0
                rows.append(row)
                rhs.append(0.0)
        else:
            raise InvalidParameterError("unknown restriction kind %r" % (kind,))

    if not rows:
        return ConstraintSystem(np.zeros((0, p)), np.zeros(0), n_units, n_factors)

    R = np.array(rows)
    phi = np.array(rhs)

    # contradiction check: a solution exists iff appending phi does not
    # raise the rank
    s_R = np.linalg.svd(R, compute_uv=False)
    aug = np.column_stack([R, phi])
    s_aug = np.linalg.svd(aug, compute_uv=False)
    rank_R = int(np.sum(s_R > _RANK_TOL * max(1.0, s_R[0])))
    rank_aug = int(np.sum(s_aug > _RANK_TOL * max(1.0, s_aug[0])))
    if rank_aug > rank_R:
        raise InfeasibleConstraintsError(
            "restrictions are contradictory: no loading matrix satisfies "
            "all %d of them" % len(rows)
        )

    # drop redundant rows, keeping earliest occurrences; twice-through
    # Gram-Schmidt so near-parallel rows are classified reliably
    basis = []
    keep = []
    for k, row in enumerate(R):
        res = row.copy()
        for _ in range(2):
            for q in basis:
                res -= (q @ res) * q
        if np.linalg.norm(res) > _RANK_TOL * max(1.0, np.linalg.norm(row)):
            basis.append(res / np.linalg.norm(res))
            keep.append(k)
    if not keep:
        return ConstraintSystem(np.zeros((0, p)), np.zeros(0), n_units, n_factors)
    return ConstraintSystem(R[keep], phi[keep], n_units, n_factors)


# =========================================================================
# block updates
# =========================================================================

def _check_gamma(gamma):
    if not np.isfinite(gamma) or gamma < 0.0:
        raise InvalidParameterError("gamma must be finite and >= 0, got %r" % gamma)


def _gram_plus_ridge(M, gamma, what):
    """M'M + gamma*I with a positive-definiteness check."""
    B = M.T @ M + gamma * np.eye(M.shape[1])
    w = np.linalg.eigvalsh(B)
    if w[0] <= 1e-12 * max(w[-1], 0.0):
        raise DegenerateSystemError(
            "%s cross-product singular at gamma=%g; the update system has "
            "no unique solution" % (what, gamma)
        )
    return B


def f_update(Z, Lambda, gamma):
    """Ridge regression of the panel on the loadings: Z L (L'L + gamma I)^-1.

    This is the exact minimizer of the objective over F for fixed loadings;
    restrictions on the loadings never alter it.

    Raises
    ------
    DegenerateSystemError
        At gamma=0 with rank-deficient loadings.
    """
    Z = np.asarray(Z, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    _check_gamma(gamma)
    if Z.ndim != 2 or Lambda.ndim != 2 or Z.shape[1] != Lambda.shape[0]:
        raise InvalidParameterError(
            "panel %s and loadings %s do not conform"
            % (Z.shape, Lambda.shape)
        )
    B = _gram_plus_ridge(Lambda, gamma, "loading")
    return cho_solve(cho_factor(B), (Z @ Lambda).T).T


def _kron_inverse_rt(cho_B, R, n_units, n_factors):
    """Columns of ((B kron I_N))^-1 R' for a sparse restriction matrix R.

    Applying the inverse of B kron I_N to a vector is an unvec, a solve
    against B on the right, and a re-vec; done row by row of R since the
    number of restrictions is small on this path.
    """
    Rd = R.toarray()
    m = Rd.shape[0]
    K = np.empty((n_units * n_factors, m))
    for k in range(m):
        V = _unvec(Rd[k], n_units, n_factors)
        K[:, k] = _vec(cho_solve(cho_B, V.T).T)
    return K


def lambda_update_penalized(Z, F, gamma, tau, cs=None):
    """Exact minimizer over the loadings with the restriction penalty.

    Solves ((F'F + gamma I) kron I_N + tau R'R) vec(L) = vec(Z'F) + tau R'phi.
    With tau=0 or no restrictions this is the plain ridge update, solved
    column-block-wise.  Otherwise the Kronecker-plus-low-rank structure is
    exploited through the Woodbury identity whenever the number of
    restrictions is small relative to N*r; past that point the system is
    assembled and solved densely.

    Parameters
    ----------
    Z : (T, N) ndarray
    F : (T, r) ndarray
    gamma : float
    tau : float
        Finite and >= 0.  The exact-restriction limit has its own routine,
        :func:`lambda_restrict_exact`.
    cs : ConstraintSystem, optional

    Returns
    -------
    (N, r) ndarray
    """
    Z = np.asarray(Z, dtype=float)
    F = np.asarray(F, dtype=float)
    _check_gamma(gamma)
    if not np.isfinite(tau) or tau < 0.0:
        raise InvalidParameterError(
            "tau must be finite and >= 0 here; use lambda_restrict_exact "
            "for exact restrictions"
        )
    if Z.ndim != 2 or F.ndim != 2 or Z.shape[0] != F.shape[0]:
        raise InvalidParameterError(
            "panel %s and factors %s do not conform" % (Z.shape, F.shape)
        )
    N = Z.shape[1]
    r = F.shape[1]
    B = _gram_plus_ridge(F, gamma, "factor")
    C = Z.T @ F
    if cs is None or cs.m == 0 or tau == 0.0:
        return cho_solve(cho_factor(B), C.T).T
    if cs.shape != (N, r):
        raise InvalidParameterError(
            "constraint system built for %s, loadings are %s"
            % (cs.shape, (N, r))
        )
    b = _vec(C) + tau * (cs.R.T @ cs.phi)
    if cs.m > _DENSE_FRACTION * N * r:
        A = np.kron(B, np.eye(N)) + tau * (cs.R.T @ cs.R).toarray()
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise DegenerateSystemError(
                "penalized loading system singular"
            ) from None
        return _unvec(x, N, r)
    cho_B = cho_factor(B)
    Ainv_b = _vec(cho_solve(cho_B, _unvec(b, N, r).T).T)
    K = _kron_inverse_rt(cho_B, cs.R, N, r)
    S = np.eye(cs.m) / tau + cs.R @ K
    try:
        coef = np.linalg.solve(S, cs.R @ Ainv_b)
    except np.linalg.LinAlgError:
        raise DegenerateSystemError("penalized loading system singular") from None
    return _unvec(Ainv_b - K @ coef, N, r)


def lambda_restrict_exact(Lambda0, F, gamma, cs):
    """Impose R vec(L) = phi exactly on an unrestricted ridge solution.

    The restricted minimizer is the unrestricted one minus a correction in
    the metric of the ridge Hessian (F'F + gamma I) kron I_N:

        vec(L) = vec(L0) - K (R K)^-1 (R vec(L0) - phi),   K = H^-1 R'.

    If L0 already satisfies the restrictions the correction vanishes and
    L0 is returned unchanged.  The output satisfies the restrictions to
    near machine precision regardless of L0.

    Raises
    ------
    InfeasibleConstraintsError
        If the m x m matrix R K is numerically singular, which means the
        restriction geometry is degenerate for this factor configuration.
    """
    Lambda0 = np.asarray(Lambda0, dtype=float)
    F = np.asarray(F, dtype=float)
    _check_gamma(gamma)
    if cs is None or cs.m == 0:
        return Lambda0.copy()
    if Lambda0.shape != cs.shape:
        raise InvalidParameterError(
            "loadings %s do not match constraint system %s"
            % (Lambda0.shape, cs.shape)
        )
    if F.ndim != 2 or F.shape[1] != cs.n_factors:
        raise InvalidParameterError(
            "factors %s do not match constraint system %s"
            % (F.shape, cs.shape)
        )
    N, r = cs.shape
    B = _gram_plus_ridge(F, gamma, "factor")
    cho_B = cho_factor(B)
    K = _kron_inverse_rt(cho_B, cs.R, N, r)
    M = cs.R @ K
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    if w[0] <= 1e-12 * max(w[-1], 0.0):
        raise InfeasibleConstraintsError(
            "restriction geometry degenerate: R H^-1 R' is numerically "
            "singular"
        )
    resid = cs.R @ _vec(Lambda0) - cs.phi
    correction = K @ np.linalg.solve(M, resid)
    return _unvec(_vec(Lambda0) - correction, N, r)


# =========================================================================
# joint solve
# =========================================================================

class ConstrainedFit:
    """Converged restricted fit.

    Attributes
    ----------
    F : (T, r) ndarray
    Lambda : (N, r) ndarray
        In panel units (common component is ``F @ Lambda.T``).  With
        restrictions present, neither cross-product is diagonal in general.
    gamma : float
    tau : float
        The penalty weight actually used; ``inf`` means the restrictions
        were imposed exactly, ``0`` that none were active.
    iterations : int
        Number of full sweeps performed.
    objective_trace : ndarray
        Objective value after each sweep, internally scaled; nonincreasing.
    constraint_violation : float
        ``||R vec(Lambda) - phi||`` in panel units.
    """

    def __init__(self, F, Lambda, gamma, tau, iterations, objective_trace,
                 constraint_violation):
        F = np.asarray(F, dtype=float)
        Lambda = np.asarray(Lambda, dtype=float)
        trace = np.asarray(objective_trace, dtype=float).reshape(-1)
        if F.ndim != 2 or Lambda.ndim != 2 or F.shape[1] != Lambda.shape[1]:
            raise InvalidParameterError(
                "factors %s and loadings %s do not conform"
                % (F.shape, Lambda.shape)
            )
        increases = np.diff(trace) - 1e-10 * (1.0 + np.abs(trace[:-1]))
        if trace.size >= 2 and np.any(increases > 0.0):
            raise NumericalError(
                "objective trace increased at sweep %d"
                % (int(np.argmax(increases > 0.0)) + 2)
            )
        violation = float(constraint_violation)
        if np.isinf(tau) and violation > 1e-8:
            raise NumericalError(
                "exact-restriction fit reports violation %g" % violation
            )
        self.F = F
        self.Lambda = Lambda
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.iterations = int(iterations)
        self.objective_trace = trace
        self.constraint_violation = violation
        for a in (self.F, self.Lambda, self.objective_trace):
            a.setflags(write=False)

    @property
    def shape(self):
        return (self.F.shape[0], self.Lambda.shape[0])

    @property
    def r(self):
        return self.F.shape[1]


def _objective(Z, F, L, gamma, tau, cs):
    fit = Z - F @ L.T
    val = 0.5 * float(np.sum(fit * fit))
    val += 0.5 * gamma * (float(np.sum(F * F)) + float(np.sum(L * L)))
    if cs is not None and cs.m > 0 and np.isfinite(tau) and tau > 0.0:
        gap = cs.R @ _vec(L) - cs.phi
        val += 0.5 * tau * float(gap @ gap)
    return val


def constrained_solve(panel, r, gamma, cs=None, tau=np.inf, tol=1e-8,
                      max_iter=500):
    """Fit r factors under linear loading restrictions.

    Starts from the soft-thresholded spectral fit and alternates the ridge
    factor update with a loading update until the relative objective change
    drops below ``tol``.  With ``tau=inf`` (the default) the restrictions
    hold exactly at every sweep; with finite ``tau`` they are penalized and
    the violation shrinks as ``tau`` grows.  Without restrictions the
    routine reduces to the iterated ridge pair, whose fixed point is the
    soft-thresholded spectral solution itself.

    Parameters
    ----------
    panel : PanelData
    r : int
    gamma : float
        Ridge weight, shared with any spectral fit being refined.
    cs : ConstraintSystem, optional
        Restrictions in panel units.  ``None`` or an m=0 system means
        unconstrained.
    tau : float
        Penalty weight; ``inf`` for exact imposition.
    tol : float
    max_iter : int

    Returns
    -------
    ConstrainedFit

    Raises
    ------
    NonConvergenceError
        After ``max_iter`` sweeps without meeting ``tol``; the last iterate
        is attached as ``result``.
    """
    _check_gamma(gamma)
    if not tau >= 0.0:
        raise InvalidParameterError("tau must be >= 0 or inf, got %r" % tau)
    if tol <= 0.0:
        raise InvalidParameterError("tol must be positive")
    if max_iter < 2:
        raise InvalidParameterError("need at least two sweeps to compare")
    T, N = panel.shape
    if not 1 <= r <= min(T, N):
        raise InvalidParameterError(
            "r=%d outside [1, %d] for a %d x %d panel" % (r, min(T, N), T, N)
        )
    if cs is not None and cs.shape != (N, r):
        raise InvalidParameterError(
            "constraint system built for %s, problem is %s"
            % (cs.shape, (N, r))
        )

    m = 0 if cs is None else cs.m
    tau_eff = tau if m else 0.0
    exact = bool(np.isinf(tau_eff))
    Z = normalize_panel(panel.X)

    # restrictions arrive in panel units where loadings carry a sqrt(N);
    # rescale the targets once so the whole iteration can live on Z
    cs_z = None
    if m and tau_eff > 0.0:
        cs_z = ConstraintSystem(cs.R, cs.phi / np.sqrt(N), N, r)

    s = truncated_svd(Z, r)
    root = np.sqrt(svt(s.D, gamma).D_gamma)
    F = s.U * root
    L = s.V * root

    trace = []
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        F = f_update(Z, L, gamma)
        if cs_z is None:
            L = lambda_update_penalized(Z, F, gamma, 0.0)
        elif exact:
            L0 = lambda_update_penalized(Z, F, gamma, 0.0)
            L = lambda_restrict_exact(L0, F, gamma, cs_z)
        else:
            L = lambda_update_penalized(Z, F, gamma, tau_eff, cs_z)
        trace.append(_objective(Z, F, L, gamma, tau_eff, cs_z))
        if len(trace) >= 2 and abs(trace[-2] - trace[-1]) <= tol * max(
            abs(trace[-2]), 1e-300
        ):
            converged = True
            break

    F_out = np.sqrt(T) * F
    L_out = np.sqrt(N) * L
    violation = cs.violation(L_out) if m else 0.0
    fit = ConstrainedFit(
        F_out, L_out, gamma, tau_eff, iterations, np.array(trace), violation
    )
    if not converged:
        raise NonConvergenceError(
            "restricted solve did not converge in %d sweeps" % max_iter,
            result=fit,
        )
    return fit

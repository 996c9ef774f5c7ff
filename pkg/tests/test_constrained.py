"""Tests for estimation under linear loading restrictions.

The reference implementations here are deliberately naive: the penalized
loading update is checked against a dense solve of the full (N*r) x (N*r)
system, and the exact-restriction formula against the KKT system of the
equality-constrained quadratic program.  Neither oracle shares code with
the library routines.
"""

import numpy as np
import pytest

from panelfactor.constrained import (
    ConstrainedFit,
    ConstraintSystem,
    build_restrictions,
    constrained_solve,
    f_update,
    lambda_restrict_exact,
    lambda_update_penalized,
    parse_restriction_spec,
    vec_position,
)
from panelfactor.errors import (
    DataError,
    DegenerateSystemError,
    InfeasibleConstraintsError,
    InvalidParameterError,
    NonConvergenceError,
    NumericalError,
)
from panelfactor.estimators import as_panel, common_component, estimate_rpc


# =========================================================================
# oracles
# =========================================================================

def kron_ridge_hessian(F, gamma, n_units):
    B = F.T @ F + gamma * np.eye(F.shape[1])
    return np.kron(B, np.eye(n_units))


def dense_penalized_oracle(Z, F, gamma, tau, R, phi):
    """Assemble and solve the full penalized system, no structure used."""
    N = Z.shape[1]
    r = F.shape[1]
    H = kron_ridge_hessian(F, gamma, N) + tau * R.T @ R
    b = (Z.T @ F).reshape(-1, order="F") + tau * R.T @ phi
    return np.linalg.solve(H, b).reshape((N, r), order="F")


def kkt_restricted_oracle(Lambda0, F, gamma, R, phi):
    """Solve the equality-constrained quadratic through its KKT system."""
    N, r = Lambda0.shape
    H = kron_ridge_hessian(F, gamma, N)
    b = H @ Lambda0.reshape(-1, order="F")
    m = R.shape[0]
    kkt = np.block([[H, R.T], [R, np.zeros((m, m))]])
    sol = np.linalg.solve(kkt, np.concatenate([b, phi]))
    return sol[: N * r].reshape((N, r), order="F")


def random_system(rng, n_units, n_factors, m):
    R = rng.standard_normal((m, n_units * n_factors))
    phi = rng.standard_normal(m)
    return ConstraintSystem(R, phi, n_units, n_factors)


# =========================================================================
# vec order and system construction
# =========================================================================

class TestConstraintSystem:
    def test_vec_position_is_column_major(self):
        # N=3: column 1 occupies positions 0..2, column 2 positions 3..5
        assert vec_position(1, 1, 3) == 0
        assert vec_position(3, 1, 3) == 2
        assert vec_position(1, 2, 3) == 3
        assert vec_position(2, 2, 3) == 4

    def test_violation_measures_the_gap(self):
        cs = build_restrictions([("fix", 1, 1, 2.0)], 3, 2)
        L = np.zeros((3, 2))
        assert cs.violation(L) == pytest.approx(2.0)
        L = np.array([[2.0, 0.0], [5.0, 1.0], [-3.0, 2.0]])
        assert cs.violation(L) == pytest.approx(0.0)

    def test_rejects_dependent_rows(self):
        R = np.zeros((2, 6))
        R[0, 0] = 1.0
        R[1, 0] = 2.0
        with pytest.raises(InvalidParameterError):
            ConstraintSystem(R, np.zeros(2), 3, 2)

    def test_rejects_fully_determining_system(self):
        rng = np.random.default_rng(41)
        R = rng.standard_normal((6, 6))
        with pytest.raises(InvalidParameterError):
            ConstraintSystem(R, np.zeros(6), 3, 2)

    def test_rejects_mismatched_phi(self):
        with pytest.raises(InvalidParameterError):
            ConstraintSystem(np.eye(2, 6), np.zeros(3), 3, 2)

    def test_empty_system_is_allowed(self):
        cs = build_restrictions([], 4, 2)
        assert cs.m == 0
        assert cs.violation(np.ones((4, 2))) == 0.0


class TestBuildRestrictions:
    def test_fix_entry_builds_a_selector_row(self):
        cs = build_restrictions([("fix", 1, 1, 1.0)], 3, 2)
        assert cs.m == 1
        row = cs.R.toarray()[0]
        expected = np.zeros(6)
        expected[0] = 1.0
        assert np.array_equal(row, expected)
        assert np.array_equal(cs.phi, [1.0])

    def test_lower_triangular_for_two_factors_is_one_row(self):
        # only the (1, 2) entry sits above the diagonal
        cs = build_restrictions([("zeroblock", 1, 1, 2, 2)], 4, 2)
        assert cs.m == 1
        assert cs.R.toarray()[0, vec_position(1, 2, 4)] == 1.0
        assert cs.phi[0] == 0.0

    def test_equality_chain_loses_the_redundant_row(self):
        prims = [
            ("eq", 1, 1, 2, 1),
            ("eq", 2, 1, 3, 1),
            ("eq", 1, 1, 3, 1),  # implied by the first two
        ]
        cs = build_restrictions(prims, 3, 2)
        assert cs.m == 2, "chain closure should be dropped by the rank pass"

    def test_homogeneous_group_equates_consecutive_units(self):
        cs = build_restrictions([("homog", 2, (1, 2, 4))], 4, 2)
        assert cs.m == 2
        R = cs.R.toarray()
        assert R[0, vec_position(1, 2, 4)] == 1.0
        assert R[0, vec_position(2, 2, 4)] == -1.0
        assert R[1, vec_position(2, 2, 4)] == 1.0
        assert R[1, vec_position(4, 2, 4)] == -1.0

    def test_contradiction_is_infeasible(self):
        prims = [("fix", 1, 1, 1.0), ("fix", 1, 1, 2.0)]
        with pytest.raises(InfeasibleConstraintsError):
            build_restrictions(prims, 3, 2)

    def test_indirect_contradiction_is_infeasible(self):
        prims = [
            ("eq", 1, 1, 2, 1),
            ("fix", 1, 1, 1.0),
            ("fix", 2, 1, 3.0),
        ]
        with pytest.raises(InfeasibleConstraintsError):
            build_restrictions(prims, 3, 2)

    def test_out_of_range_indices_rejected(self):
        with pytest.raises(InvalidParameterError):
            build_restrictions([("fix", 4, 1, 0.0)], 3, 2)
        with pytest.raises(InvalidParameterError):
            build_restrictions([("fix", 1, 3, 0.0)], 3, 2)
        with pytest.raises(InvalidParameterError):
            build_restrictions([("zeroblock", 2, 1, 1, 1)], 3, 2)
        with pytest.raises(InvalidParameterError):
            build_restrictions([("homog", 1, (2,))], 3, 2)


class TestParseRestrictionSpec:
    def test_full_block_round_trips(self):
        text = """
        # pin down the first unit
        fix 1 1 1.0
        fix 1 2 0.0   # and its second loading
        eq 2 1 3 1
        zeroblock 1 2 2 2
        homog 2 4 5 6
        """
        prims = parse_restriction_spec(text)
        assert prims == [
            ("fix", 1, 1, 1.0),
            ("fix", 1, 2, 0.0),
            ("eq", 2, 1, 3, 1),
            ("zeroblock", 1, 2, 2, 2),
            ("homog", 2, (4, 5, 6)),
        ]

    def test_malformed_line_reports_its_number(self):
        text = "fix 1 1 1.0\nfix 2 two 0.0\n"
        with pytest.raises(DataError, match="line 2"):
            parse_restriction_spec(text)

    def test_unknown_kind_rejected(self):
        with pytest.raises(DataError, match="line 1"):
            parse_restriction_spec("pin 1 1 0.0")

    def test_wrong_arity_rejected(self):
        with pytest.raises(DataError, match="line 1"):
            parse_restriction_spec("eq 1 1 2")


# =========================================================================
# block updates
# =========================================================================

class TestFUpdate:
    def test_orthonormal_loadings_give_plain_projection(self):
        rng = np.random.default_rng(50)
        Z = rng.standard_normal((8, 5))
        Q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        F = f_update(Z, Q, 0.0)
        assert np.allclose(F, Z @ Q, atol=1e-12)

    def test_zero_loadings_give_zero_factors(self):
        Z = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(f_update(Z, np.zeros((3, 2)), 0.7), np.zeros((4, 2)))

    def test_matches_normal_equation_oracle(self):
        rng = np.random.default_rng(51)
        for _ in range(20):
            Z = rng.standard_normal((9, 6))
            L = rng.standard_normal((6, 3))
            gamma = float(rng.uniform(0.0, 0.5))
            F = f_update(Z, L, gamma)
            B = L.T @ L + gamma * np.eye(3)
            expected = np.linalg.solve(B, L.T @ Z.T).T
            assert np.allclose(F, expected, atol=1e-10), "ridge solve drifted"

    def test_rank_deficient_loadings_without_ridge_fail(self):
        Z = np.ones((5, 4))
        L = np.ones((4, 2))  # rank one
        with pytest.raises(DegenerateSystemError):
            f_update(Z, L, 0.0)


class TestLambdaUpdatePenalized:
    def test_tau_zero_is_the_ridge_estimator(self):
        rng = np.random.default_rng(60)
        Z = rng.standard_normal((10, 6))
        F = rng.standard_normal((10, 2))
        out = lambda_update_penalized(Z, F, 0.3, 0.0)
        expected = dense_penalized_oracle(Z, F, 0.3, 0.0, np.zeros((0, 12)), np.zeros(0))
        assert np.allclose(out, expected, atol=1e-10)

    def test_woodbury_route_matches_dense_oracle(self):
        rng = np.random.default_rng(61)
        for _ in range(10):
            Z = rng.standard_normal((10, 6))
            F = rng.standard_normal((10, 2))
            cs = random_system(rng, 6, 2, 3)  # m=3 stays on the Woodbury path
            out = lambda_update_penalized(Z, F, 0.2, 5.0, cs)
            expected = dense_penalized_oracle(Z, F, 0.2, 5.0, cs.R.toarray(), cs.phi)
            assert np.allclose(out, expected, atol=1e-9), "Woodbury route drifted"

    def test_dense_route_matches_dense_oracle(self):
        rng = np.random.default_rng(62)
        Z = rng.standard_normal((10, 6))
        F = rng.standard_normal((10, 2))
        cs = random_system(rng, 6, 2, 7)  # m=7 > N*r/4 forces the dense path
        out = lambda_update_penalized(Z, F, 0.2, 5.0, cs)
        expected = dense_penalized_oracle(Z, F, 0.2, 5.0, cs.R.toarray(), cs.phi)
        assert np.allclose(out, expected, atol=1e-9)

    def test_zero_tau_with_system_equals_no_system(self):
        rng = np.random.default_rng(63)
        Z = rng.standard_normal((10, 6))
        F = rng.standard_normal((10, 2))
        cs = random_system(rng, 6, 2, 3)
        with_sys = lambda_update_penalized(Z, F, 0.1, 0.0, cs)
        without = lambda_update_penalized(Z, F, 0.1, 0.0)
        assert np.array_equal(with_sys, without)

    def test_infinite_tau_is_rejected_here(self):
        Z = np.zeros((4, 3))
        F = np.ones((4, 1))
        with pytest.raises(InvalidParameterError):
            lambda_update_penalized(Z, F, 0.1, np.inf)


class TestLambdaRestrictExact:
    def test_matches_kkt_oracle(self):
        rng = np.random.default_rng(70)
        for _ in range(20):
            F = rng.standard_normal((12, 2))
            L0 = rng.standard_normal((5, 2))
            cs = random_system(rng, 5, 2, 2)
            out = lambda_restrict_exact(L0, F, 0.25, cs)
            expected = kkt_restricted_oracle(L0, F, 0.25, cs.R.toarray(), cs.phi)
            assert np.allclose(out, expected, atol=1e-9), "KKT oracle disagrees"

    def test_restrictions_hold_on_random_systems(self):
        rng = np.random.default_rng(71)
        for _ in range(50):
            n_units = int(rng.integers(3, 9))
            r = int(rng.integers(1, 4))
            m = int(rng.integers(1, n_units * r))
            F = rng.standard_normal((10, r))
            L0 = rng.standard_normal((n_units, r))
            cs = random_system(rng, n_units, r, m)
            out = lambda_restrict_exact(L0, F, 0.1, cs)
            assert cs.violation(out) <= 1e-10, "restriction not satisfied"

    def test_selector_with_spherical_hessian_zeroes_one_entry(self):
        # with F'F + gamma I = c I the correction is a plain orthogonal
        # projection, so a selector row zeroes its entry and touches nothing
        # else; the scale c cancels
        rng = np.random.default_rng(72)
        Q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        F = 2.0 * Q  # F'F = 4 I
        L0 = rng.standard_normal((5, 2))
        cs = build_restrictions([("fix", 2, 1, 0.0)], 5, 2)
        out = lambda_restrict_exact(L0, F, 0.5, cs)
        pos = (1, 0)
        assert out[pos] == pytest.approx(0.0, abs=1e-14)
        mask = np.ones((5, 2), dtype=bool)
        mask[pos] = False
        assert np.array_equal(out[mask], L0[mask]), "off-target entries moved"

    def test_feasible_input_is_returned_unchanged(self):
        rng = np.random.default_rng(73)
        F = rng.standard_normal((8, 2))
        L0 = rng.standard_normal((4, 2))
        cs = build_restrictions([("fix", 1, 1, float(L0[0, 0]))], 4, 2)
        out = lambda_restrict_exact(L0, F, 0.3, cs)
        assert np.allclose(out, L0, atol=1e-12)

    def test_degenerate_geometry_is_flagged(self):
        # rows parallel to within 1e-7 clear the system's 1e-10 rank check,
        # but squaring in the middle matrix drops the small direction to
        # 1e-14, which is singular in the relative sense
        R = np.zeros((2, 6))
        R[0, 0] = 1.0
        R[1, 0] = 1.0
        R[1, 1] = 1e-7
        cs = ConstraintSystem(R, np.zeros(2), 3, 2)
        L0 = np.ones((3, 2))
        F = np.zeros((4, 2))  # Hessian is the identity at gamma = 1
        with pytest.raises(InfeasibleConstraintsError):
            lambda_restrict_exact(L0, F, 1.0, cs)

    def test_empty_system_is_identity(self):
        rng = np.random.default_rng(74)
        L0 = rng.standard_normal((4, 2))
        out = lambda_restrict_exact(L0, rng.standard_normal((6, 2)), 0.1, None)
        assert np.array_equal(out, L0)


# =========================================================================
# joint solve
# =========================================================================

def factor_panel(rng, T, N, r, noise=1.0, Lambda=None):
    F = rng.standard_normal((T, r))
    if Lambda is None:
        Lambda = rng.standard_normal((N, r))
    X = F @ Lambda.T + noise * rng.standard_normal((T, N))
    return as_panel(X), F @ Lambda.T


class TestConstrainedSolve:
    def test_unconstrained_matches_spectral_ridge_fit(self):
        rng = np.random.default_rng(80)
        panel, _ = factor_panel(rng, 40, 30, 2, noise=0.3)
        gamma = 0.05
        fit = constrained_solve(panel, 2, gamma, cs=None)
        spectral = estimate_rpc(panel, 2, gamma)
        C_it = common_component(fit)
        C_sp = common_component(spectral)
        rel = np.linalg.norm(C_it - C_sp) / np.linalg.norm(C_sp)
        assert rel <= 1e-6, "iterated ridge left the spectral fixed point"
        assert fit.tau == 0.0
        assert fit.constraint_violation == 0.0

    def test_exact_mode_pins_the_first_row(self):
        rng = np.random.default_rng(81)
        panel, _ = factor_panel(rng, 50, 20, 2, noise=0.5)
        cs = build_restrictions(
            [("fix", 1, 1, 1.0), ("fix", 1, 2, 0.0)], 20, 2
        )
        fit = constrained_solve(panel, 2, 0.02, cs=cs, tau=np.inf)
        assert fit.Lambda[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert fit.Lambda[0, 1] == pytest.approx(0.0, abs=1e-9)
        assert fit.constraint_violation <= 1e-8
        assert np.all(np.diff(fit.objective_trace)
                      <= 1e-10 * (1.0 + np.abs(fit.objective_trace[:-1])))

    def test_finite_tau_violation_shrinks_along_the_grid(self):
        rng = np.random.default_rng(82)
        panel, _ = factor_panel(rng, 40, 15, 2, noise=0.4)
        # pin an entry far from where the unrestricted optimum wants it
        cs = build_restrictions([("fix", 3, 1, 4.0)], 15, 2)
        violations = []
        for tau in (0.0, 1.0, 10.0, 100.0, 1000.0):
            fit = constrained_solve(panel, 2, 0.02, cs=cs, tau=tau)
            violations.append(fit.constraint_violation)
        assert violations[0] > 0.1, "unrestricted optimum should violate"
        assert all(
            a > b for a, b in zip(violations[:-1], violations[1:])
        ), "violation not strictly decreasing in tau: %r" % violations

    def test_compatible_zero_pattern_recovers_the_component(self):
        rng = np.random.default_rng(83)
        Lam0 = rng.standard_normal((20, 2))
        Lam0[0, 1] = 0.0  # truth satisfies the restriction
        panel, C0 = factor_panel(rng, 60, 20, 2, noise=0.3, Lambda=Lam0)
        cs = build_restrictions([("zeroblock", 1, 1, 2, 2)], 20, 2)
        free = constrained_solve(panel, 2, 0.01, cs=None)
        tied = constrained_solve(panel, 2, 0.01, cs=cs, tau=np.inf)
        err_free = np.linalg.norm(common_component(free) - C0)
        err_tied = np.linalg.norm(common_component(tied) - C0)
        assert tied.constraint_violation <= 1e-8
        assert err_tied <= 1.25 * err_free, (
            "a restriction the truth satisfies should not hurt: %g vs %g"
            % (err_tied, err_free)
        )

    def test_homogeneous_group_comes_out_equal(self):
        rng = np.random.default_rng(84)
        panel, _ = factor_panel(rng, 50, 12, 2, noise=0.5)
        cs = build_restrictions([("homog", 1, (2, 5, 9))], 12, 2)
        fit = constrained_solve(panel, 2, 0.02, cs=cs, tau=np.inf)
        vals = fit.Lambda[[1, 4, 8], 0]
        assert np.ptp(vals) <= 1e-9, "group loadings differ: %r" % vals

    def test_cross_products_stay_symmetric_psd_under_restrictions(self):
        rng = np.random.default_rng(85)
        panel, _ = factor_panel(rng, 40, 16, 2, noise=0.4)
        cs = build_restrictions([("fix", 1, 1, 1.0), ("eq", 2, 1, 3, 1)], 16, 2)
        fit = constrained_solve(panel, 2, 0.02, cs=cs, tau=np.inf)
        for G in (fit.F.T @ fit.F, fit.Lambda.T @ fit.Lambda):
            assert np.allclose(G, G.T, atol=1e-10)
            assert np.all(np.linalg.eigvalsh(G) >= -1e-10)

    def test_nonconvergence_carries_the_last_iterate(self):
        rng = np.random.default_rng(86)
        panel, _ = factor_panel(rng, 30, 12, 2, noise=0.8)
        cs = build_restrictions([("fix", 2, 1, 3.0)], 12, 2)
        with pytest.raises(NonConvergenceError) as info:
            constrained_solve(
                panel, 2, 0.05, cs=cs, tau=50.0, tol=1e-16, max_iter=2
            )
        fit = info.value.result
        assert isinstance(fit, ConstrainedFit)
        assert fit.iterations == 2
        assert fit.objective_trace.shape == (2,)

    def test_trace_increase_is_rejected_by_the_container(self):
        with pytest.raises(NumericalError):
            ConstrainedFit(
                np.ones((4, 1)),
                np.ones((3, 1)),
                0.1,
                0.0,
                2,
                [1.0, 2.0],
                0.0,
            )

    def test_parameter_validation(self):
        rng = np.random.default_rng(87)
        panel, _ = factor_panel(rng, 20, 10, 2, noise=0.5)
        with pytest.raises(InvalidParameterError):
            constrained_solve(panel, 0, 0.1)
        with pytest.raises(InvalidParameterError):
            constrained_solve(panel, 2, -0.1)
        with pytest.raises(InvalidParameterError):
            constrained_solve(panel, 2, 0.1, tau=-1.0)
        with pytest.raises(InvalidParameterError):
            constrained_solve(panel, 2, 0.1, tol=0.0)
        cs = build_restrictions([("fix", 1, 1, 0.0)], 9, 2)
        with pytest.raises(InvalidParameterError):
            constrained_solve(panel, 2, 0.1, cs=cs)

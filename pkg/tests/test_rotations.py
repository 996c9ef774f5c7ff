"""Rotation-matrix and limit tests."""

import numpy as np
import pytest

from panelfactor.errors import (
    DegenerateGeometryError,
    InvalidParameterError,
    NonDistinctEigenvaluesError,
)
from panelfactor.estimators import as_panel, estimate_apc
from panelfactor.rotations import (
    align_signs,
    q_analytic,
    q_empirical,
    rotation_matrix,
    rotation_set,
)


def noiseless_fit(rng, t, n, r):
    F0 = rng.standard_normal((t, r))
    L0 = rng.standard_normal((n, r))
    p = as_panel(F0 @ L0.T)
    return F0, L0, estimate_apc(p, r)


class TestRotationMatrices:
    def test_all_five_agree_on_noiseless_panel(self):
        rng = np.random.default_rng(110)
        F0, L0, fd = noiseless_fit(rng, 40, 25, 3)
        H = [rotation_matrix(ell, F0, L0, fd) for ell in range(5)]
        for ell in range(1, 5):
            assert np.max(np.abs(H[ell] - H[0])) < 1e-9, "H%d != H0" % ell

    def test_rotation_reproduces_estimate_exactly_when_noiseless(self):
        # With an exact rank-r panel the fitted factors live in the span of
        # the truth, so F~ = F0 H and L~ = L0 inv(H)' hold exactly.
        rng = np.random.default_rng(111)
        F0, L0, fd = noiseless_fit(rng, 30, 20, 2)
        for ell in range(5):
            H = rotation_matrix(ell, F0, L0, fd)
            assert np.max(np.abs(fd.F - F0 @ H)) < 1e-9
            assert np.max(np.abs(fd.Lambda - L0 @ np.linalg.inv(H).T)) < 1e-9

    def test_identity_recovery_under_canonical_normalization(self):
        # truth already in APC form: orthonormal factors, diagonal loading
        # cross-product with distinct entries; every H is a signed identity
        rng = np.random.default_rng(112)
        t, n, r = 60, 40, 3
        F0 = np.sqrt(t) * np.linalg.qr(rng.standard_normal((t, r)))[0]
        W = np.linalg.qr(rng.standard_normal((n, r)))[0]
        L0 = np.sqrt(n) * W * np.array([1.5, 1.0, 0.5])
        fd = estimate_apc(as_panel(F0 @ L0.T), r)
        for ell in range(5):
            H = rotation_matrix(ell, F0, L0, fd)
            assert np.max(np.abs(np.abs(H) - np.eye(r))) < 1e-8, "H%d" % ell

    def test_set_collects_all_and_measures_spread(self):
        rng = np.random.default_rng(113)
        F0, L0, fd = noiseless_fit(rng, 30, 20, 2)
        rs = rotation_set(F0, L0, fd)
        assert len(rs.H) == 5
        assert rs.max_pairwise_dev < 1e-9
        assert np.array_equal(rs[3], rs.H[3])

    def test_noisy_panel_keeps_candidates_close(self):
        rng = np.random.default_rng(114)
        F0 = rng.standard_normal((200, 2))
        L0 = rng.standard_normal((150, 2))
        X = F0 @ L0.T + 0.5 * rng.standard_normal((200, 150))
        fd = estimate_apc(as_panel(X), 2)
        rs = rotation_set(F0, L0, fd)
        assert rs.max_pairwise_dev < 0.2, "candidates drifted apart badly"

    def test_orthogonal_truth_raises_degenerate_geometry(self):
        rng = np.random.default_rng(115)
        t, n = 20, 12
        F0 = rng.standard_normal((t, 1))
        u = rng.standard_normal((t, 1))
        u = u - F0 @ (F0.T @ u) / (F0.T @ F0)  # orthogonal to the truth
        v = rng.standard_normal((n, 1))
        fd = estimate_apc(as_panel(u @ v.T), 1)
        L0 = rng.standard_normal((n, 1))
        with pytest.raises(DegenerateGeometryError):
            rotation_matrix(3, F0, L0, fd)

    def test_bad_ell_and_shapes(self):
        rng = np.random.default_rng(116)
        F0, L0, fd = noiseless_fit(rng, 10, 8, 2)
        with pytest.raises(InvalidParameterError):
            rotation_matrix(5, F0, L0, fd)
        with pytest.raises(Exception):
            rotation_matrix(0, F0[:, :1], L0, fd)


class TestQLimit:
    def test_scalar_case_by_hand(self):
        q = q_analytic(np.array([[4.0]]), np.array([[9.0]]))
        assert abs(q.Q[0, 0] - 2.0) < 1e-12
        assert abs(q.D2_r[0] - 36.0) < 1e-12

    def test_diagonal_case_gives_identity(self):
        q = q_analytic(np.eye(2), np.diag([4.0, 1.0]))
        assert np.max(np.abs(q.Q - np.eye(2))) < 1e-12
        assert np.allclose(q.D2_r, [4.0, 1.0], atol=1e-12)

    def test_defining_identities_hold(self):
        rng = np.random.default_rng(120)
        for r in (1, 2, 3, 4):
            for _ in range(25):
                A = rng.standard_normal((r, r + 2))
                B = rng.standard_normal((r, r + 2))
                SF = A @ A.T / (r + 2) + 0.1 * np.eye(r)
                SL = B @ B.T / (r + 2) + 0.1 * np.eye(r)
                try:
                    q = q_analytic(SF, SL)
                except NonDistinctEigenvaluesError:
                    continue
                lhs1 = q.Q.T @ np.diag(1.0 / q.D2_r) @ q.Q
                assert np.max(np.abs(lhs1 - np.linalg.inv(SL))) < 1e-9
                lhs2 = q.Q @ np.linalg.inv(SF) @ q.Q.T
                assert np.max(np.abs(lhs2 - np.eye(r))) < 1e-9

    def test_reconstruction_from_parts(self):
        rng = np.random.default_rng(121)
        A = rng.standard_normal((3, 6))
        B = rng.standard_normal((3, 6))
        q = q_analytic(A @ A.T / 6 + 0.2 * np.eye(3), B @ B.T / 6 + 0.2 * np.eye(3))
        w, V = np.linalg.eigh(q.Sigma_Lambda)
        inv_half = (V / np.sqrt(w)) @ V.T
        rebuilt = np.diag(np.sqrt(q.D2_r)) @ q.Upsilon.T @ inv_half
        assert np.max(np.abs(rebuilt - q.Q)) < 1e-10

    def test_tied_eigenvalues_rejected(self):
        with pytest.raises(NonDistinctEigenvaluesError):
            q_analytic(np.eye(2), np.eye(2))
        with pytest.raises(NonDistinctEigenvaluesError):
            q_analytic(np.eye(3), np.diag([2.0, 2.0, 1.0]))

    def test_rejects_asymmetric_or_indefinite(self):
        with pytest.raises(InvalidParameterError):
            q_analytic(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))
        with pytest.raises(InvalidParameterError):
            q_analytic(np.eye(2), np.diag([1.0, -0.5]))


class TestQEmpirical:
    def test_equals_inverse_h3(self):
        rng = np.random.default_rng(130)
        F0, L0, fd = noiseless_fit(rng, 25, 18, 2)
        H3 = rotation_matrix(3, F0, L0, fd)
        assert np.max(np.abs(q_empirical(F0, fd) - np.linalg.inv(H3))) < 1e-10


class TestAlignSigns:
    def test_alignment_flips_to_positive_diagonal(self):
        rng = np.random.default_rng(140)
        F0, L0, fd = noiseless_fit(rng, 30, 20, 3)
        aligned = align_signs(fd, F0)
        assert np.all(np.sum(F0 * aligned.F, axis=0) > 0)
        # common component untouched
        assert np.max(np.abs(aligned.F @ aligned.Lambda.T - fd.F @ fd.Lambda.T)) < 1e-12

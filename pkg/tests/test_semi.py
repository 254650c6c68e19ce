"""Steering-informed extraction pieces: the minimum-variance constrained
filter, the steering-nulling reduction, the reduced-system updates, the
background completion, and the block-determinant identity they rely on.
"""

import numpy as np
import pytest

from conftest import random_complex, random_demix, random_hpd
from ivex.linalg import SingularMatrix, mh
from ivex.updates import (
    lcmv_residual,
    lcmv_update,
    oc_residual,
    semi_ive_update,
    semi_noise_completion,
    semi_reduction,
)


def _unit_steering(rng, num_freqs, num_chan, num_known):
    a = random_complex(rng, num_freqs, num_chan, num_known)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


class TestLcmvUpdate:
    def test_identity_covariance_canonical_steering(self):
        demix = np.zeros((1, 2, 2), dtype=complex)
        steering = np.array([[1.0], [0.0]], dtype=complex)[None]
        lcmv_update(demix, np.eye(2, dtype=complex)[None], steering, 0)
        np.testing.assert_allclose(demix[0, :, 0], [1.0, 0.0], atol=1e-12)

    def test_diagonal_covariance(self):
        demix = np.zeros((1, 2, 2), dtype=complex)
        steering = np.array([[1.0], [0.0]], dtype=complex)[None]
        lcmv_update(demix, np.diag([1.0, 2.0]).astype(complex)[None], steering, 0)
        np.testing.assert_allclose(demix[0, :, 0], [1.0, 0.0], atol=1e-12)

    def test_constraint_rows(self):
        rng = np.random.default_rng(0)
        num_freqs, m, num_known = 4, 4, 2
        steering = _unit_steering(rng, num_freqs, m, num_known)
        demix = random_demix(rng, num_freqs, m)
        cov = random_hpd(rng, m, stack=(num_freqs,))
        for i in range(num_known):
            lcmv_update(demix, cov, steering, i)
        assert lcmv_residual(demix, steering, num_known) <= 1e-10

    def test_minimizes_quadratic_over_feasible_set(self):
        rng = np.random.default_rng(1)
        m, num_known = 4, 2
        steering = _unit_steering(rng, 1, m, num_known)
        cov = random_hpd(rng, m, stack=(1,))
        demix = np.zeros((1, m, m), dtype=complex)
        lcmv_update(demix, cov, steering, 0)
        w = demix[0, :, 0]
        base = float((np.conj(w) @ cov[0] @ w).real)
        # candidates that keep the constraint: w + (I - P_A) g
        a = steering[0]
        proj = a @ np.linalg.solve(mh(a) @ a, mh(a))
        perp = np.eye(m) - proj
        for _ in range(1000):
            g = random_complex(rng, m)
            cand = w + perp @ g
            value = float((np.conj(cand) @ cov[0] @ cand).real)
            assert value >= base - 1e-10 * abs(base)


class TestSemiReduction:
    def test_canonical_steering(self):
        steering = np.array([[1.0], [0.0]], dtype=complex)[None]
        basis, kept = semi_reduction(steering)
        assert kept == (1,)
        np.testing.assert_allclose(basis[0], [[0.0], [1.0]], atol=1e-12)

    def test_nulls_steering_columns(self):
        rng = np.random.default_rng(2)
        num_freqs, m, num_known = 5, 4, 2
        steering = _unit_steering(rng, num_freqs, m, num_known)
        basis, _ = semi_reduction(steering)
        assert basis.shape == (num_freqs, m, m - num_known)
        assert np.abs(mh(basis) @ steering).max() <= 1e-10
        # full column rank
        sv = np.linalg.svd(basis, compute_uv=False)
        assert sv[:, -1].min() > 1e-8

    def test_pivot_fallback_for_degenerate_channels(self):
        # steering along the last channel makes the default bordered matrix
        # singular; the row-pivoting fallback must pick other channels
        num_freqs, m = 3, 3
        steering = np.zeros((num_freqs, m, 1), dtype=complex)
        steering[:, 2, 0] = 1.0
        basis, kept = semi_reduction(steering)
        assert 2 not in kept
        assert np.abs(mh(basis) @ steering).max() <= 1e-10


class TestSemiIveUpdate:
    def test_single_free_source_diagonal_pencil(self):
        # M=3, one known steering e1, one free source: the barred problem is
        # the single-target pencil; with V_bar_K=I and V_bar_z=diag(4,1) the
        # winning direction is the first reduced coordinate, lifted to e2.
        steering = np.zeros((1, 3, 1), dtype=complex)
        steering[:, 0, 0] = 1.0
        basis, _ = semi_reduction(steering)
        demix = np.zeros((1, 3, 3), dtype=complex)
        reduced = -np.eye(2, dtype=complex)[None].copy()
        source_bar = np.eye(2, dtype=complex)[None]
        noise_bar = np.diag([4.0, 1.0]).astype(complex)[None]
        semi_ive_update(demix, reduced, basis, source_bar, noise_bar,
                        index=1, num_known=1, num_free_sources=1, exact=True)
        np.testing.assert_allclose(np.abs(demix[0, :, 1]), [0.0, 1.0, 0.0],
                                   atol=1e-10)
        assert np.abs(np.conj(demix[0, :, 1]) @ steering[0]).max() <= 1e-9

    def test_lifted_column_stays_in_nulling_subspace(self):
        rng = np.random.default_rng(3)
        num_freqs, m, k, num_known = 4, 5, 3, 1
        num_free = k - num_known
        steering = _unit_steering(rng, num_freqs, m, num_known)
        basis, _ = semi_reduction(steering)
        dim = m - num_known
        demix = random_demix(rng, num_freqs, m)
        reduced = random_demix(rng, num_freqs, dim)
        noise_bar = random_hpd(rng, dim, stack=(num_freqs,))
        for index in range(num_known, k):
            source_bar = random_hpd(rng, dim, stack=(num_freqs,))
            semi_ive_update(demix, reduced, basis, source_bar, noise_bar,
                            index, num_known, num_free, exact=True)
            w = demix[:, :, index]
            # nulls every known steering vector
            assert np.abs(np.einsum("fm,fml->fl", np.conj(w), steering)).max() <= 1e-9
            # and is exactly the lift of the reduced column
            bar = index - num_known
            lifted = (basis @ reduced[:, :, bar, None])[..., 0]
            np.testing.assert_allclose(w, lifted, atol=1e-12)
            # unit quadratic norm in the reduced metric
            u = reduced[:, :, bar]
            quad = np.einsum("fm,fmn,fn->f", np.conj(u), source_bar, u).real
            np.testing.assert_allclose(quad, 1.0, atol=1e-10)


class TestSemiNoiseCompletion:
    def test_identity_barred_system(self):
        steering = np.zeros((1, 3, 1), dtype=complex)
        steering[:, 0, 0] = 1.0
        basis, _ = semi_reduction(steering)
        demix = np.zeros((1, 3, 3), dtype=complex)
        reduced = np.eye(2, dtype=complex)[None].copy()
        noise_bar = np.eye(2, dtype=complex)[None]
        semi_noise_completion(demix, reduced, basis, noise_bar,
                              num_free_sources=1, num_sources=2)
        # barred background is [0; -1], lifted through basis = [e2, e3]
        np.testing.assert_allclose(demix[0, :, 2], [0.0, 0.0, -1.0], atol=1e-12)

    def test_residuals_random_instance(self):
        rng = np.random.default_rng(4)
        num_freqs, m, k, num_known = 3, 5, 2, 1
        num_free = k - num_known
        steering = _unit_steering(rng, num_freqs, m, num_known)
        basis, _ = semi_reduction(steering)
        dim = m - num_known
        demix = random_demix(rng, num_freqs, m)
        reduced = random_demix(rng, num_freqs, dim)
        noise_bar = random_hpd(rng, dim, stack=(num_freqs,))
        semi_noise_completion(demix, reduced, basis, noise_bar, num_free, k)
        wz = demix[:, :, k:]
        # background nulls the known steering vectors ...
        assert np.abs(mh(wz) @ steering).max() <= 1e-9
        # ... and the barred orthogonality constraint holds
        assert oc_residual(reduced, noise_bar, num_free) <= 1e-8

    def test_all_sources_known_edge(self):
        # L = K: no barred sources; the completion falls back to the lifted
        # negative-identity convention
        rng = np.random.default_rng(5)
        num_freqs, m, k = 2, 4, 2
        steering = _unit_steering(rng, num_freqs, m, k)
        basis, _ = semi_reduction(steering)
        demix = random_demix(rng, num_freqs, m)
        reduced = np.zeros((num_freqs, m - k, m - k), dtype=complex)
        noise_bar = random_hpd(rng, m - k, stack=(num_freqs,))
        semi_noise_completion(demix, reduced, basis, noise_bar,
                              num_free_sources=0, num_sources=k)
        np.testing.assert_allclose(demix[:, :, k:], -basis, atol=1e-12)
        assert np.abs(mh(demix[:, :, k:]) @ steering).max() <= 1e-9


class TestBlockDeterminantIdentity:
    """|det W|^2 = det(A^H A)^-1 * det(W2^H W2) whenever W1^H A = I and
    W2^H A = 0 — the identity behind scoring the steering-constrained system.
    """

    @staticmethod
    def _instance(rng, m, num_known):
        a = random_complex(rng, m, num_known)
        proj = a @ np.linalg.solve(mh(a) @ a, mh(a))
        perp = np.eye(m) - proj
        w1 = a @ np.linalg.inv(mh(a) @ a) + perp @ random_complex(rng, m, num_known)
        w2 = perp @ random_complex(rng, m, m - num_known)
        return a, np.concatenate([w1, w2], axis=1), w2

    @pytest.mark.parametrize("m,num_known", [(3, 1), (4, 2), (5, 3)])
    def test_random_instances(self, m, num_known):
        rng = np.random.default_rng(100 + m)
        for _ in range(20):
            a, w, w2 = self._instance(rng, m, num_known)
            lhs = abs(np.linalg.det(w)) ** 2
            rhs = np.linalg.det(mh(w2) @ w2).real / np.linalg.det(mh(a) @ a).real
            np.testing.assert_allclose(lhs, rhs, rtol=1e-9)

    def test_hypotheses_hold_for_generated_instances(self):
        rng = np.random.default_rng(6)
        a, w, w2 = self._instance(rng, 4, 2)
        np.testing.assert_allclose(mh(w[:, :2]) @ a, np.eye(2), atol=1e-12)
        assert np.abs(mh(w2) @ a).max() <= 1e-12

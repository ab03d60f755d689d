"""Tests for the dense linear-algebra kernels.

The matrix-equation solvers are checked against independent oracles:
Kronecker-product vectorization for Lyapunov and Sylvester equations,
composite Simpson quadrature for the discretized noise covariance, and
closed-form scalar solutions for the Riccati equation.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from lfmcontrol import numlin
from lfmcontrol.errors import (
    ConvergenceError,
    SpectrumOverlapError,
    StabilityError,
    StabilizabilityError,
)


def random_stable(rng, n, margin=0.5):
    """Random matrix shifted to have spectral abscissa <= -margin."""
    a = rng.standard_normal((n, n))
    shift = np.linalg.eigvals(a).real.max() + margin
    return a - shift * np.eye(n)


def lyapunov_kron(f, q):
    """Oracle: solve F P + P F.T + Q = 0 by vectorization (row-major vec)."""
    n = f.shape[0]
    eye = np.eye(n)
    lhs = np.kron(f, eye) + np.kron(eye, f)
    p = np.linalg.solve(lhs, -q.reshape(-1))
    return p.reshape(n, n)


def sylvester_kron(a, b, c):
    """Oracle: solve A X - X B = C by vectorization (row-major vec)."""
    n, m = c.shape
    lhs = np.kron(a, np.eye(m)) - np.kron(np.eye(n), b.T)
    return np.linalg.solve(lhs, c.reshape(-1)).reshape(n, m)


def simpson_noise_covariance(a, l, q, dt, panels=2000):
    """Oracle: Qd = int_0^dt expm(A s) L Q L.T expm(A s).T ds by Simpson."""
    lql = l @ q @ l.T
    s_grid = np.linspace(0.0, dt, 2 * panels + 1)
    vals = np.array(
        [numlin.expm(a * s) @ lql @ numlin.expm(a * s).T for s in s_grid]
    )
    h = dt / (2 * panels)
    w = np.ones(len(s_grid))
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (h / 3.0) * np.tensordot(w, vals, axes=1)


class TestExpm:
    def test_zero_gives_identity(self):
        assert_allclose(numlin.expm(np.zeros((3, 3))), np.eye(3), atol=1e-15)

    def test_diagonal(self):
        d = np.diag([-1.0, 0.5, 2.0])
        assert_allclose(numlin.expm(d), np.diag(np.exp(np.diag(d))), rtol=1e-13)

    def test_nilpotent_closed_form(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert_allclose(numlin.expm(a), np.array([[1.0, 1.0], [0.0, 1.0]]), atol=1e-15)

    def test_inverse_property(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = rng.standard_normal((4, 4))
            a *= 5.0 / max(np.linalg.norm(a), 5.0)
            prod = numlin.expm(a) @ numlin.expm(-a)
            assert_allclose(prod, np.eye(4), atol=1e-12)

    def test_semigroup_property(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((5, 5))
        a *= 3.0 / np.linalg.norm(a)
        assert_allclose(
            numlin.expm(2.0 * a),
            numlin.expm(a) @ numlin.expm(a),
            rtol=1e-11,
            atol=1e-13,
        )

    def test_block_triangular_preserved(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((6, 6))
        a[3:, :3] = 0.0
        e = numlin.expm(a)
        assert np.abs(e[3:, :3]).max() <= 1e-12 * np.abs(e).max()

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            numlin.expm(np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            numlin.expm(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestVanLoan:
    def test_scalar_closed_form(self):
        # dx = -x dt + dw with q = 2: Ad = e^-1, Qd = q (1 - e^-2) / 2
        ad, qd = numlin.van_loan_discretize(-1.0, 1.0, 2.0, 1.0)
        assert_allclose(ad, [[np.exp(-1.0)]], rtol=1e-12)
        assert_allclose(qd, [[1.0 - np.exp(-2.0)]], rtol=1e-12)

    def test_integrator_with_noise(self):
        # A = 0: Qd = q dt exactly
        ad, qd = numlin.van_loan_discretize(0.0, 1.0, 3.0, 0.25)
        assert_allclose(ad, [[1.0]], atol=1e-15)
        assert_allclose(qd, [[0.75]], rtol=1e-13)

    def test_matches_simpson_quadrature(self):
        rng = np.random.default_rng(21)
        a = random_stable(rng, 3)
        l = rng.standard_normal((3, 2))
        q = np.diag([0.7, 1.3])
        ad, qd = numlin.van_loan_discretize(a, l, q, 0.3)
        assert_allclose(ad, numlin.expm(a * 0.3), rtol=1e-12)
        oracle = simpson_noise_covariance(a, l, q, 0.3)
        assert_allclose(qd, oracle, atol=1e-8)

    def test_qd_symmetric_psd_random(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            n = rng.integers(1, 6)
            a = rng.standard_normal((n, n))
            l = rng.standard_normal((n, max(1, n - 1)))
            q = np.eye(max(1, n - 1)) * rng.uniform(0.1, 2.0)
            _, qd = numlin.van_loan_discretize(a, l, q, rng.uniform(0.01, 0.5))
            assert_allclose(qd, qd.T, atol=1e-12)
            assert np.linalg.eigvalsh(qd).min() >= -1e-9 * max(
                1.0, np.abs(np.linalg.eigvalsh(qd)).max()
            )

    def test_small_dt_linearization(self):
        # Qd ~ L Q L.T dt for dt -> 0
        rng = np.random.default_rng(23)
        a = rng.standard_normal((3, 3))
        l = rng.standard_normal((3, 1))
        q = np.array([[2.0]])
        dt = 1e-6
        _, qd = numlin.van_loan_discretize(a, l, q, dt)
        assert_allclose(qd, l @ q @ l.T * dt, rtol=1e-4)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            numlin.van_loan_discretize(-1.0, 1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            numlin.van_loan_discretize(-1.0, 1.0, 1.0, -0.1)

    def test_rejects_indefinite_q(self):
        with pytest.raises(ValueError):
            numlin.van_loan_discretize(-1.0, 1.0, -2.0, 0.1)


class TestLyapunov:
    def test_scalar(self):
        # -2 p - 2 p ... f p + p f + q = 0 with f = -1, q = 4 -> p = 2
        p = numlin.solve_lyapunov(np.array([[-1.0]]), np.array([[4.0]]))
        assert_allclose(p, [[2.0]], rtol=1e-12)

    def test_matches_kronecker_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(8):
            n = rng.integers(2, 7)
            f = random_stable(rng, n)
            q0 = rng.standard_normal((n, n))
            q = q0 @ q0.T
            p = numlin.solve_lyapunov(f, q)
            assert_allclose(p, lyapunov_kron(f, q), rtol=1e-8, atol=1e-10)

    def test_psd_for_psd_q(self):
        rng = np.random.default_rng(32)
        f = random_stable(rng, 5)
        q0 = rng.standard_normal((5, 3))
        p = numlin.solve_lyapunov(f, q0 @ q0.T)
        assert np.linalg.eigvalsh(p).min() >= -1e-10

    def test_rejects_unstable_f(self):
        with pytest.raises(StabilityError):
            numlin.solve_lyapunov(np.array([[0.5]]), np.array([[1.0]]))
        with pytest.raises(StabilityError):
            numlin.solve_lyapunov(np.zeros((2, 2)), np.eye(2))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            numlin.solve_lyapunov(-np.eye(3), np.eye(2))


class TestSylvester:
    def test_matches_kronecker_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(8):
            n = rng.integers(2, 6)
            m = rng.integers(2, 6)
            a = random_stable(rng, n, margin=1.0)
            b = -random_stable(rng, m, margin=1.0)  # spectra on opposite sides
            c = rng.standard_normal((n, m))
            x = numlin.solve_sylvester(a, b, c)
            assert_allclose(x, sylvester_kron(a, b, c), rtol=1e-8, atol=1e-10)

    def test_diagonal_closed_form(self):
        a = np.diag([-1.0, -2.0])
        b = np.diag([1.0, 3.0])
        c = np.ones((2, 2))
        x = numlin.solve_sylvester(a, b, c)
        expected = 1.0 / (np.array([[-1.0], [-2.0]]) - np.array([[1.0, 3.0]]))
        assert_allclose(x, expected, rtol=1e-12)

    def test_detects_spectrum_overlap(self):
        a = np.diag([-1.0, 2.0])
        b = np.diag([2.0, 5.0])
        with pytest.raises(SpectrumOverlapError, match="2"):
            numlin.solve_sylvester(a, b, np.ones((2, 2)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            numlin.solve_sylvester(-np.eye(2), np.eye(3), np.ones((3, 2)))


class TestCare:
    def test_scalar_stable_plant(self):
        # a = 0, m = 1, uinv = 1, xg = 1: p^2 = 1, stabilizing root p = 1
        p = numlin.solve_care(0.0, 1.0, 1.0, 1.0)
        assert_allclose(p, [[1.0]], atol=1e-8)

    def test_scalar_unstable_plant(self):
        # a = 1: p^2 - 2p - 1 = 0, stabilizing root 1 + sqrt(2)
        p = numlin.solve_care(1.0, 1.0, 1.0, 1.0)
        assert_allclose(p, [[1.0 + np.sqrt(2.0)]], atol=1e-8)

    def test_spring_model_residual_and_stability(self):
        af = np.array([[0.0, 1.0], [-1.0, -0.1]])
        mf = np.array([[0.0], [1.0]])
        xg = np.diag([1.0, 0.0])
        uinv = np.array([[1.0]])
        p = numlin.solve_care(af, mf, uinv, xg)
        res = -af.T @ p - p @ af + p @ mf @ uinv @ mf.T @ p - xg
        assert np.linalg.norm(res, "fro") <= 1e-8 * (1.0 + np.linalg.norm(xg))
        cl = np.linalg.eigvals(af - mf @ uinv @ mf.T @ p)
        assert cl.real.max() < 0.0

    def test_random_instances_stabilizing(self):
        rng = np.random.default_rng(51)
        for _ in range(6):
            n = rng.integers(2, 5)
            a = rng.standard_normal((n, n))
            m = rng.standard_normal((n, 1))
            x0 = rng.standard_normal((n, n))
            xg = x0 @ x0.T + 0.1 * np.eye(n)
            p = numlin.solve_care(a, m, np.array([[1.0]]), xg)
            s = m @ m.T
            res = -a.T @ p - p @ a + p @ s @ p - xg
            assert np.linalg.norm(res, "fro") <= 1e-8 * (1.0 + np.linalg.norm(xg))
            assert np.linalg.eigvals(a - s @ p).real.max() < 0.0
            assert np.linalg.eigvalsh(p).min() >= -1e-8 * np.abs(
                np.linalg.eigvalsh(p)
            ).max()

    def test_rejects_unstabilizable_pair(self):
        # second state unstable and unreachable
        a = np.diag([-1.0, 0.3])
        m = np.array([[1.0], [0.0]])
        with pytest.raises(StabilizabilityError):
            numlin.solve_care(a, m, 1.0, np.eye(2))

    def test_zero_cost_stable_plant(self):
        p = numlin.solve_care(np.array([[-2.0]]), 1.0, 1.0, 0.0)
        assert_allclose(p, [[0.0]], atol=1e-10)


class TestNumericalRank:
    def test_full_rank_identity(self):
        assert numlin.numerical_rank(np.eye(4)) == 4

    def test_zero_matrix(self):
        assert numlin.numerical_rank(np.zeros((3, 5))) == 0

    def test_near_rank_deficiency_threshold(self):
        a = np.diag([1.0, 1e-6, 1e-12])
        assert numlin.numerical_rank(a, rel_tol=1e-9) == 2
        assert numlin.numerical_rank(a, rel_tol=1e-13) == 3

    def test_outer_product_rank_one(self):
        rng = np.random.default_rng(61)
        u = rng.standard_normal(5)
        v = rng.standard_normal(7)
        assert numlin.numerical_rank(np.outer(u, v)) == 1

    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            numlin.numerical_rank(np.eye(2), rel_tol=0.0)
        with pytest.raises(ValueError):
            numlin.numerical_rank(np.eye(2), rel_tol=1.5)

    def test_complex_input(self):
        a = np.array([[1.0 + 1.0j, 0.0], [0.0, 0.0]])
        assert numlin.numerical_rank(a) == 1


class TestSymmetricPsdCheck:
    def test_accepts_and_symmetrizes(self):
        p = np.array([[2.0, 1.0 + 1e-13], [1.0, 2.0]])
        out = numlin.check_symmetric_psd(p, "P")
        assert_allclose(out, out.T, atol=0.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            numlin.check_symmetric_psd(np.array([[1.0, 0.5], [0.0, 1.0]]), "P")

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError, match="PSD"):
            numlin.check_symmetric_psd(np.diag([1.0, -0.5]), "P")


class TestPbhHelpers:
    def test_stabilizable_chain(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        m = np.array([[0.0], [1.0]])
        assert numlin.unstabilizable_modes(a, m) == []

    def test_detects_unreachable_unstable_mode(self):
        a = np.diag([1.0, -1.0])
        m = np.array([[0.0], [1.0]])
        bad = numlin.unstabilizable_modes(a, m)
        assert len(bad) == 1
        assert_allclose(bad[0], 1.0)

    def test_undetectable_mode(self):
        a = np.diag([0.5, -2.0])
        c = np.array([[0.0, 1.0]])
        bad = numlin.undetectable_modes(a, c)
        assert len(bad) == 1
        assert_allclose(bad[0], 0.5)

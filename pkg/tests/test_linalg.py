import math

import numpy as np
import pytest
import scipy.linalg

from mitlearn.errors import (
    DimensionMismatchError,
    NoConvergenceError,
    NotHurwitzError,
    NotStabilizingError,
)
from mitlearn.linalg import (
    StabilityMargin,
    care_hamiltonian,
    is_hurwitz,
    kleinman_iterate,
    log_norm_2,
    smat,
    solve_lyapunov,
    stabilizing_gain,
    svec,
    svec_reduce_columns,
    unvec,
    vec,
)


def random_hurwitz(rng, n):
    A = rng.standard_normal((n, n))
    shift = max(np.linalg.eigvals(A).real.max(), 0.0) + 1.0
    return A - shift * np.eye(n)


# ---------------------------------------------------------------- lyapunov


def test_lyapunov_identity_loop():
    P = solve_lyapunov(-np.eye(2), np.eye(2))
    np.testing.assert_allclose(P, 0.5 * np.eye(2), atol=1e-12)


def test_lyapunov_decoupled_diagonal():
    P = solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2))
    np.testing.assert_allclose(P, np.diag([0.5, 0.25]), atol=1e-12)


def test_lyapunov_matches_quadrature_oracle():
    # independent oracle: P = int_0^inf expm(A^T t) Q expm(A t) dt by
    # composite Simpson on a fine grid; the margin-1 shift makes the
    # integrand tail at T=20 far below 1e-12
    rng = np.random.default_rng(42)
    A = random_hurwitz(rng, 4)
    Q = np.eye(4)
    dt, T = 0.002, 20.0
    steps = round(T / dt)
    E_dt = scipy.linalg.expm(A * dt)
    P_quad = np.zeros((4, 4))
    Ek = np.eye(4)
    fs = []
    for _ in range(steps + 1):
        fs.append(Ek.T @ Q @ Ek)
        Ek = Ek @ E_dt
    w = np.empty(steps + 1)
    w[0::2] = 2 * dt / 3
    w[1::2] = 4 * dt / 3
    w[0] = w[-1] = dt / 3
    for wi, fi in zip(w, fs):
        P_quad += wi * fi
    P = solve_lyapunov(A, Q)
    np.testing.assert_allclose(P, P_quad, atol=1e-8)


def test_lyapunov_residual_and_psd():
    rng = np.random.default_rng(7)
    for _ in range(10):
        A = random_hurwitz(rng, 5)
        G = rng.standard_normal((5, 5))
        Q = G @ G.T + 0.1 * np.eye(5)
        P = solve_lyapunov(A, Q)
        resid = np.linalg.norm(A.T @ P + P @ A + Q, "fro")
        assert resid < 1e-10 * (1 + np.linalg.norm(Q, "fro"))
        assert np.linalg.eigvalsh(P).min() >= -1e-12


def test_lyapunov_rejects_unstable():
    with pytest.raises(NotHurwitzError):
        solve_lyapunov(np.eye(2), np.eye(2))


def test_lyapunov_rejects_nonsymmetric_q():
    with pytest.raises(DimensionMismatchError):
        solve_lyapunov(-np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]))


# ---------------------------------------------------------------- kleinman


def test_kleinman_scalar_closed_form():
    a, b, q, r = 0.0, 1.0, 1.0, 1.0
    P, K, trace = kleinman_iterate(
        np.array([[a]]), np.array([[b]]), np.array([[q]]), np.array([[r]]),
        K0=np.array([[1.0]]))
    expected_p = (a * r + math.sqrt((a * r) ** 2 + b * b * q * r)) / (b * b)
    assert P[0, 0] == pytest.approx(expected_p, abs=1e-12)
    assert K[0, 0] == pytest.approx(expected_p * b / r, abs=1e-12)


def test_kleinman_decoupled_two_axes():
    P, K, _ = kleinman_iterate(-np.eye(2), np.eye(2), np.eye(2), np.eye(2),
                               K0=np.zeros((2, 2)))
    expected = (math.sqrt(2.0) - 1.0) * np.eye(2)
    np.testing.assert_allclose(P, expected, atol=1e-10)
    np.testing.assert_allclose(K, expected, atol=1e-10)


def test_kleinman_agrees_with_hamiltonian_oracle_on_lane_mode(lane_aug, lane_weights):
    Q, R1t = lane_weights
    mo = lane_aug[1]
    K0 = stabilizing_gain(mo.A_aug, mo.B_aug)
    P, K, _ = kleinman_iterate(mo.A_aug, mo.B_aug, Q, R1t, K0)
    resid = np.linalg.norm(
        mo.A_aug.T @ P + P @ mo.A_aug + Q
        - P @ mo.B_aug @ np.linalg.solve(R1t, mo.B_aug.T) @ P, "fro")
    assert resid < 1e-8
    P_oracle = care_hamiltonian(mo.A_aug, mo.B_aug, Q, R1t)
    assert np.linalg.norm(P - P_oracle) / np.linalg.norm(P_oracle) < 1e-6


def test_kleinman_trace_monotone_and_stabilizing(lane_aug, lane_weights):
    Q, R1t = lane_weights
    mo = lane_aug[2]
    K0 = stabilizing_gain(mo.A_aug, mo.B_aug)
    _, _, trace = kleinman_iterate(mo.A_aug, mo.B_aug, Q, R1t, K0)
    for prev, cur in zip(trace, trace[1:]):
        assert np.linalg.eigvalsh(prev.P - cur.P).min() >= -1e-10
    for step in trace:
        assert is_hurwitz(mo.A_aug - mo.B_aug @ step.K)


def test_kleinman_rejects_destabilizing_start():
    with pytest.raises(NotStabilizingError):
        kleinman_iterate(np.array([[1.0]]), np.array([[1.0]]),
                         np.eye(1), np.eye(1), K0=np.array([[0.0]]))


def test_kleinman_budget_exhaustion():
    with pytest.raises(NoConvergenceError):
        kleinman_iterate(np.array([[0.0]]), np.array([[1.0]]),
                         np.eye(1), np.eye(1), K0=np.array([[5.0]]),
                         tol=1e-30, max_iter=2)


# ---------------------------------------------------------------- log norm


def test_log_norm_basics():
    assert log_norm_2(-np.eye(3)) == pytest.approx(-1.0)
    assert log_norm_2(np.array([[0.0, 1.0], [-1.0, 0.0]])) == pytest.approx(0.0, abs=1e-14)
    assert log_norm_2(np.array([[-1.0, 2.0], [0.0, -1.0]])) == pytest.approx(0.0, abs=1e-14)


def test_log_norm_subadditive():
    rng = np.random.default_rng(3)
    for _ in range(50):
        X = rng.standard_normal((4, 4))
        Y = rng.standard_normal((4, 4))
        assert log_norm_2(X + Y) <= log_norm_2(X) + np.linalg.norm(Y, 2) + 1e-12


def test_log_norm_certifies_hurwitz():
    rng = np.random.default_rng(5)
    M = random_hurwitz(rng, 4)
    M = M - (log_norm_2(M) + 0.5) * np.eye(4)  # force mu2 < 0
    assert log_norm_2(M) < 0
    assert is_hurwitz(M)


def test_stability_margin_fields():
    sm = StabilityMargin.of(-2.0 * np.eye(2))
    assert sm.mu2 == pytest.approx(-2.0)
    assert sm.gamma == pytest.approx(2.0)
    sm = StabilityMargin.of(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert sm.gamma == 0.0


# ---------------------------------------------------------------- vec/svec


def test_vec_stacks_columns():
    np.testing.assert_array_equal(vec(np.array([[1.0, 3.0], [2.0, 4.0]])),
                                  [1.0, 2.0, 3.0, 4.0])


def test_svec_upper_triangle():
    np.testing.assert_array_equal(svec(np.eye(2)), [1.0, 0.0, 1.0])


def test_svec_smat_round_trip():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((5, 5))
    M = M + M.T
    np.testing.assert_allclose(smat(svec(M), 5), M, atol=1e-14)


def test_kron_vec_identity():
    X = np.eye(2)
    Y = np.array([[1.0, 2.0], [3.0, 4.0]])
    Z = np.eye(2)
    np.testing.assert_array_equal(np.kron(Z.T, X) @ vec(Y), vec(Y))
    rng = np.random.default_rng(2)
    X = rng.standard_normal((3, 2))
    Y = rng.standard_normal((2, 4))
    Z = rng.standard_normal((4, 3))
    np.testing.assert_allclose(np.kron(Z.T, X) @ vec(Y), vec(X @ Y @ Z), atol=1e-12)


def test_svec_reduce_columns_matches_full():
    rng = np.random.default_rng(9)
    rows = rng.standard_normal((6, 4))
    full = np.array([np.kron(r, r) for r in rows])
    reduced = svec_reduce_columns(full, 4)
    P = rng.standard_normal((4, 4))
    P = P + P.T
    np.testing.assert_allclose(reduced @ svec(P), full @ vec(P), atol=1e-12)


def test_unvec_shape_guard():
    with pytest.raises(DimensionMismatchError):
        unvec(np.arange(5.0), 2, 3)


# ---------------------------------------------------------------- stabilize


def test_bass_gain_stabilizes_random_pairs():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = rng.integers(2, 6)
        m = rng.integers(1, 3)
        A = rng.standard_normal((n, n)) + np.eye(n)  # mostly unstable
        B = rng.standard_normal((n, m))
        K = stabilizing_gain(A, B)
        assert is_hurwitz(A - B @ K)


def test_care_hamiltonian_matches_scipy():
    rng = np.random.default_rng(13)
    for _ in range(5):
        n = rng.integers(2, 5)
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, 1))
        Q = np.eye(n)
        R = np.eye(1)
        P = care_hamiltonian(A, B, Q, R)
        P_ref = scipy.linalg.solve_continuous_are(A, B, Q, R)
        np.testing.assert_allclose(P, P_ref, atol=1e-8 * (1 + np.linalg.norm(P_ref)))

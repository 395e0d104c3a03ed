"""Dense linear-algebra primitives and the model-based control-synthesis oracle.

Everything here operates on plain ``numpy`` arrays.  Symmetric matrices are
validated with :func:`check_symmetric` rather than wrapped in a class; gains
are ``(m, q)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    NoConvergenceError,
    NotHurwitzError,
    NotStabilizableError,
    NotStabilizingError,
    SingularSystemError,
)

# Eigenvalues with real part above this are treated as unstable (guards
# against marginal numerical cases).
HURWITZ_MARGIN = -1e-9

SYM_RTOL = 1e-12


def check_symmetric(M, rtol=SYM_RTOL, name="matrix"):
    """Validate that ``M`` is square and symmetric to relative tolerance."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > rtol * scale * 10:
        raise DimensionMismatchError(f"{name} is not symmetric")
    return M


def symmetrize(M):
    return (M + M.T) / 2.0


def is_positive_definite(M):
    try:
        np.linalg.cholesky(symmetrize(np.asarray(M, dtype=float)))
        return True
    except np.linalg.LinAlgError:
        return False


def is_hurwitz(M, margin=HURWITZ_MARGIN):
    """True iff every eigenvalue of ``M`` has real part below ``margin``."""
    return bool(np.linalg.eigvals(np.asarray(M, dtype=float)).real.max() < margin)


def log_norm_2(M):
    """Logarithmic norm induced by the Euclidean norm.

    Returns the largest eigenvalue of the symmetric part ``(M + M^T)/2``.
    A negative value certifies that ``M`` is Hurwitz.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"log_norm_2 needs a square matrix, got {M.shape}")
    return float(np.linalg.eigvalsh((M + M.T) / 2.0).max())


@dataclass(frozen=True)
class StabilityMargin:
    """Euclidean log-norm margin of a closed-loop matrix.

    ``gamma`` is the certified decay rate: ``-mu2`` when the log norm is
    negative, else 0 (no Euclidean certificate).
    """

    mu2: float
    gamma: float

    @classmethod
    def of(cls, M):
        mu2 = log_norm_2(M)
        return cls(mu2=mu2, gamma=-mu2 if mu2 < 0 else 0.0)


def vec(M):
    """Stack the columns of ``M`` into a single vector."""
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def unvec(v, rows, cols):
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise DimensionMismatchError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def svec(M):
    """Upper-triangular entries of a symmetric matrix, row-major.

    ``svec(I_2) == (1, 0, 1)``.
    """
    M = check_symmetric(M, name="svec input")
    return M[np.triu_indices(M.shape[0])].copy()


def smat(v, q):
    """Inverse of :func:`svec`: rebuild the symmetric ``q x q`` matrix."""
    v = np.asarray(v, dtype=float)
    if v.size != q * (q + 1) // 2:
        raise DimensionMismatchError(f"svec of a {q}x{q} matrix has {q*(q+1)//2} entries, got {v.size}")
    M = np.zeros((q, q))
    M[np.triu_indices(q)] = v
    return M + M.T - np.diag(np.diag(M))


def svec_reduce_columns(K_full, q):
    """Merge the duplicate Kronecker columns of a ``(p, q*q)`` matrix.

    Column ``j*q + i`` of the input corresponds to the ``(i, j)`` entry of a
    ``q x q`` matrix in ``vec`` order.  For a symmetric unknown the ``(i, j)``
    and ``(j, i)`` columns multiply the same parameter, so they are summed;
    the result has ``q(q+1)/2`` columns in :func:`svec` order and satisfies
    ``reduced @ svec(P) == full @ vec(P)`` for symmetric ``P``.
    """
    K_full = np.atleast_2d(np.asarray(K_full, dtype=float))
    if K_full.shape[1] != q * q:
        raise DimensionMismatchError(f"expected {q*q} columns, got {K_full.shape[1]}")
    out = np.empty((K_full.shape[0], q * (q + 1) // 2))
    idx = 0
    for i in range(q):
        for j in range(i, q):
            col = K_full[:, j * q + i]
            if i != j:
                col = col + K_full[:, i * q + j]
            out[:, idx] = col
            idx += 1
    return out


def solve_lyapunov(Acl, Q):
    """Solve ``Acl^T P + P Acl + Q = 0`` for symmetric ``P``.

    Uses the Kronecker-form linear system; fine for the small dimensions in
    scope (q <= ~20).  ``Acl`` must be Hurwitz and ``Q`` symmetric.
    """
    Acl = np.asarray(Acl, dtype=float)
    Q = check_symmetric(Q, name="Q")
    n = Acl.shape[0]
    if Acl.shape != (n, n) or Q.shape != (n, n):
        raise DimensionMismatchError(f"shape mismatch: Acl {Acl.shape}, Q {Q.shape}")
    if not is_hurwitz(Acl):
        raise NotHurwitzError("Acl has an eigenvalue with nonnegative real part")
    eye = np.eye(n)
    G = np.kron(eye, Acl.T) + np.kron(Acl.T, eye)
    try:
        p = np.linalg.solve(G, -vec(Q))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("Kronecker-form Lyapunov system is singular") from exc
    P = symmetrize(unvec(p, n, n))
    resid = np.linalg.norm(Acl.T @ P + P @ Acl + Q, "fro")
    if resid > 1e-10 * (1.0 + np.linalg.norm(Q, "fro")):
        raise SingularSystemError(f"Lyapunov residual {resid:.3e} too large; system near-singular")
    return P


def controllable(A, B, tol=1e-9):
    """Kalman rank test on the controllability matrix."""
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    M = np.hstack(blocks)
    return np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())) == A.shape[0]


def stabilizable(A, B):
    """PBH test: rank [A - lam I, B] = n for every eigenvalue with Re >= 0."""
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= HURWITZ_MARGIN:
            M = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(M) < n:
                return False
    return True


def stabilizing_gain(A, B, beta=None):
    """Return a gain K with ``A - BK`` Hurwitz (Bass' method).

    Solves ``(A + beta I) W + W (A + beta I)^T = 2 B B^T`` with ``beta``
    beyond the spectrum and sets ``K = B^T W^{-1}``; then
    ``(A-BK) W + W (A-BK)^T = -2 beta W`` certifies stability.  Requires a
    controllable pair.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != A.shape[0]:
        raise DimensionMismatchError(f"A is {A.shape}, B is {B.shape}")
    if not controllable(A, B):
        raise NotStabilizableError("Bass stabilization needs a controllable pair")
    if beta is None:
        beta = float(np.linalg.norm(A, "fro")) + 1.0
    n = A.shape[0]
    # solve_lyapunov is stated for X^T P + P X + Q = 0; pass X = -(A+beta I)^T.
    W = solve_lyapunov(-(A + beta * np.eye(n)).T, 2.0 * B @ B.T)
    try:
        K = np.linalg.solve(W, B).T
    except np.linalg.LinAlgError as exc:
        raise NotStabilizableError("Bass Gramian is singular") from exc
    if not is_hurwitz(A - B @ K):
        raise NotStabilizableError("Bass gain failed to stabilize")
    return K


@dataclass(frozen=True)
class KleinmanStep:
    """One policy-evaluation/improvement step of the Kleinman iteration."""

    k: int
    P: np.ndarray
    K: np.ndarray
    dP: float  # ||P^k - P^{k-1}||_F, inf at k = 0


def kleinman_iterate(A, B, Q, R, K0, tol=1e-10, max_iter=50):
    """Newton/policy iteration for the continuous-time ARE.

    Starting from a stabilizing gain ``K0``, alternates the Lyapunov
    policy-evaluation solve with the gain update ``K = R^{-1} B^T P`` until
    the ARE residual drops below ``tol``.  Returns ``(P, K, trace)`` where
    ``trace`` is the list of :class:`KleinmanStep`.  The iterates decrease
    monotonically toward the stabilizing ARE solution.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = check_symmetric(Q, name="Q")
    R = check_symmetric(R, name="R")
    K = np.atleast_2d(np.asarray(K0, dtype=float))
    if K.shape != (B.shape[1], A.shape[0]):
        raise DimensionMismatchError(f"K0 must be {(B.shape[1], A.shape[0])}, got {K.shape}")
    if not is_positive_definite(R):
        raise NotStabilizingError("R must be positive definite")
    if not is_hurwitz(A - B @ K):
        raise NotStabilizingError("K0 does not stabilize (A, B)")

    Rinv_Bt = np.linalg.solve(R, B.T)
    trace: list[KleinmanStep] = []
    P_prev = None
    for k in range(max_iter):
        P = solve_lyapunov(A - B @ K, Q + K.T @ R @ K)
        dP = float("inf") if P_prev is None else float(np.linalg.norm(P - P_prev, "fro"))
        K = Rinv_Bt @ P
        trace.append(KleinmanStep(k=k, P=P, K=K.copy(), dP=dP))
        resid = np.linalg.norm(A.T @ P + P @ A + Q - P @ B @ Rinv_Bt @ P, "fro")
        if resid < tol:
            return P, K, trace
        P_prev = P
    raise NoConvergenceError(
        f"Kleinman iteration did not reach tol={tol} in {max_iter} steps",
        trace=trace,
    )


def care_hamiltonian(A, B, Q, R):
    """Independent CARE oracle via the stable invariant subspace of the
    Hamiltonian matrix (ordered real Schur decomposition).

    Kept as a separate code path from :func:`kleinman_iterate` so
    data-driven results are never validated against themselves.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = check_symmetric(Q, name="Q")
    R = check_symmetric(R, name="R")
    n = A.shape[0]
    S = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -S], [-Q, -A.T]])
    T, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NotStabilizableError(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    Z1 = Z[:n, :n]
    Z2 = Z[n:, :n]
    try:
        P = np.linalg.solve(Z1.T, Z2.T).T
    except np.linalg.LinAlgError as exc:
        raise NotStabilizableError("stable subspace is not a graph over the state space") from exc
    return symmetrize(P)

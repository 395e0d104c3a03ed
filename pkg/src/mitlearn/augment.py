"""PI augmentation of a plant mode and the delayed incremental variables.

Appending the integral of the regulated-output error lets the controller
reach the correct steady state without knowing the mode's equilibrium; the
delayed differences then cancel the unknown constant disturbance from the
learning data.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatchError,
    InsufficientHistoryError,
    NotHurwitzError,
    SingularClosedLoopError,
)
from .game import PlantMode


@dataclass(frozen=True)
class OutputReference:
    """Regulated-output data: selector ``C``, injection ``E``, known reference.

    ``E`` specifies how the integral state feeds back into the plant
    dynamics.  When not given it defaults to ``-C^T`` (negative-feedback
    injection); scenarios may override it, including with zeros for a pure
    controller-side integrator.
    """

    C: np.ndarray
    x_d_ref: np.ndarray
    E: np.ndarray | None = None

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        object.__setattr__(self, "C", C)
        if np.linalg.matrix_rank(C) < C.shape[0]:
            raise DimensionMismatchError("C must have full row rank")
        x_d = np.asarray(self.x_d_ref, dtype=float).reshape(-1)
        if x_d.size != C.shape[0]:
            raise DimensionMismatchError(
                f"x_d_ref has {x_d.size} entries but C selects {C.shape[0]} outputs")
        object.__setattr__(self, "x_d_ref", x_d)
        E = -C.T if self.E is None else np.atleast_2d(np.asarray(self.E, dtype=float))
        if E.shape != (C.shape[1], C.shape[0]):
            raise DimensionMismatchError(f"E must be {C.shape[1]}x{C.shape[0]}, got {E.shape}")
        object.__setattr__(self, "E", E)

    @property
    def s(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.C.shape[1]


@dataclass(frozen=True)
class AugmentedMode:
    """PI-augmented mode: block drift [[A, E], [C, 0]], input [B1; 0]."""

    mode_id: int
    A_aug: np.ndarray
    B_aug: np.ndarray
    d_bar: np.ndarray
    n: int
    s: int
    label: str = "cooperative"

    def __post_init__(self):
        q = self.n + self.s
        A = np.asarray(self.A_aug, dtype=float)
        B = np.atleast_2d(np.asarray(self.B_aug, dtype=float))
        d = np.asarray(self.d_bar, dtype=float).reshape(-1)
        if A.shape != (q, q) or B.shape[0] != q or d.size != q:
            raise DimensionMismatchError(
                f"augmented mode {self.mode_id}: A {A.shape}, B {B.shape}, d {d.size}, q={q}")
        # the lower blocks are structural: integrator rows [C, 0] and zero input
        if np.abs(A[self.n:, self.n:]).max(initial=0.0) > 1e-12:
            raise DimensionMismatchError("integrator block of A_aug must be zero")
        if np.abs(B[self.n:, :]).max(initial=0.0) > 1e-12:
            raise DimensionMismatchError("integrator rows of B_aug must be zero")
        object.__setattr__(self, "A_aug", A)
        object.__setattr__(self, "B_aug", B)
        object.__setattr__(self, "d_bar", d)

    @property
    def q(self):
        return self.n + self.s

    @property
    def m(self):
        return self.B_aug.shape[1]


def augment(mode: PlantMode, ref: OutputReference) -> AugmentedMode:
    """Build the augmented mode (A, B, d) from a plant mode and reference.

    The integral state obeys ``z' = C x - x_d_ref``, so the augmented
    disturbance is ``[d_sigma; -x_d_ref]``.
    """
    if ref.n != mode.n:
        raise DimensionMismatchError(f"C has {ref.n} columns but the mode has {mode.n} states")
    n, s = mode.n, ref.s
    A_aug = np.block([
        [mode.A_sigma, ref.E],
        [ref.C, np.zeros((s, s))],
    ])
    B_aug = np.vstack([mode.B1, np.zeros((s, mode.m))])
    d_bar = np.concatenate([mode.d_sigma, -ref.x_d_ref])
    return AugmentedMode(
        mode_id=mode.mode_id, A_aug=A_aug, B_aug=B_aug, d_bar=d_bar,
        n=n, s=s, label=mode.label,
    )


def equilibrium(aug: AugmentedMode, K) -> np.ndarray:
    """Closed-loop equilibrium ``xi_r = -(A - B K)^{-1} d_bar``.

    Requires a stabilizing gain.  The integrator rows force the regulated
    output of the equilibrium to equal the known reference exactly.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Acl = aug.A_aug - aug.B_aug @ K
    if not linalg.is_hurwitz(Acl):
        raise NotHurwitzError(f"gain does not stabilize mode {aug.mode_id}")
    try:
        xi_r = np.linalg.solve(Acl, -aug.d_bar)
    except np.linalg.LinAlgError as exc:
        raise SingularClosedLoopError("closed-loop matrix is singular") from exc
    resid = np.linalg.norm(Acl @ xi_r + aug.d_bar)
    if resid > 1e-10 * (1.0 + np.linalg.norm(aug.d_bar)):
        raise SingularClosedLoopError(f"equilibrium residual {resid:.3e}")
    return xi_r


@dataclass
class DelayBuffer:
    """Sliding window of (t, xi, u) samples on a uniform grid.

    Single-writer: the simulator pushes one sample per step and reads
    increments on the same thread.  ``tau`` must be an integer multiple of
    ``step`` so that ``t - tau`` always lands exactly on the grid.
    """

    step: float
    tau: float
    extra: int = 0  # samples kept beyond the delay horizon
    _lag: int = field(init=False)
    _t0: float = field(init=False, default=None)
    _count: int = field(init=False, default=0)
    _window: deque = field(init=False)

    def __post_init__(self):
        if self.step <= 0 or self.tau <= 0:
            raise DimensionMismatchError("step and tau must be positive")
        lag = self.tau / self.step
        if abs(lag - round(lag)) > 1e-9:
            raise DimensionMismatchError(
                f"tau={self.tau} is not an integer multiple of step={self.step}")
        self._lag = round(lag)
        self._window = deque(maxlen=self._lag + 1 + self.extra)

    def push(self, t, xi, u):
        if self._t0 is None:
            self._t0 = float(t)
        else:
            expected = self._t0 + self._count * self.step
            if abs(t - expected) > 1e-9:
                raise InsufficientHistoryError(
                    f"sample at t={t} breaks the uniform grid (expected {expected})")
        self._window.append((float(t), np.array(xi, dtype=float), np.atleast_1d(np.array(u, dtype=float))))
        self._count += 1

    def _index(self, t):
        i = (t - self._t0) / self.step
        if abs(i - round(i)) > 1e-6:
            raise InsufficientHistoryError(f"t={t} is not on the sample grid")
        return round(i)

    def incremental(self, t):
        """Delayed differences (xi(t) - xi(t-tau), u(t) - u(t-tau))."""
        if self._t0 is None:
            raise InsufficientHistoryError("buffer is empty")
        i = self._index(t)
        j = i - self._lag
        first_kept = self._count - len(self._window)
        if j < first_kept or i >= self._count:
            raise InsufficientHistoryError(
                f"need samples at t={t} and t-tau={t - self.tau}; "
                f"buffer spans [{self._t0 + first_kept * self.step:g}, "
                f"{self._t0 + (self._count - 1) * self.step:g}]")
        _, xi_now, u_now = self._window[i - first_kept]
        _, xi_then, u_then = self._window[j - first_kept]
        return xi_now - xi_then, u_now - u_then

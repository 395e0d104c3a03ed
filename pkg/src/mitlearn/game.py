"""Ground-truth insider behaviors from the two-player LQ team game.

Builds the team-optimal solution, the insider's adversarial best response,
and the switched plant modes seen by the decision maker (DM).  Modes can
also be loaded verbatim from scenario files; this module covers the
synthesized path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import linalg
from .errors import (
    DimensionMismatchError,
    NotStabilizableError,
    ScenarioValidationError,
)

MODE_LABELS = ("cooperative", "selfish", "adversarial")


@dataclass(frozen=True)
class TeamGameSpec:
    """Nominal two-player cooperative model and shared quadratic cost."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    Qc: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    x_c_ref: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        object.__setattr__(self, "A", A)
        for name in ("B1", "B2"):
            B = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if B.shape[0] != A.shape[0]:
                raise DimensionMismatchError(f"{name} must have {A.shape[0]} rows, got {B.shape}")
            object.__setattr__(self, name, B)
        for name in ("Qc", "R1", "R2"):
            M = linalg.check_symmetric(getattr(self, name), name=name)
            if not linalg.is_positive_definite(M):
                raise NotStabilizableError(f"{name} must be positive definite")
            object.__setattr__(self, name, M)
        object.__setattr__(self, "x_c_ref", np.asarray(self.x_c_ref, dtype=float).reshape(-1))
        if self.x_c_ref.size != A.shape[0]:
            raise DimensionMismatchError("x_c_ref has wrong length")
        if not linalg.stabilizable(A, np.hstack([self.B1, self.B2])):
            raise NotStabilizableError("(A, [B1 B2]) is not stabilizable")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B1.shape[1]


@dataclass(frozen=True)
class InsiderObjective:
    """Private cost the insider actually minimizes.

    ``rho_discipline`` penalizes visible deviation from the cooperative
    input; larger values mean more concealed behavior.
    """

    Qa: np.ndarray
    R2_tilde: np.ndarray
    rho_discipline: float
    x_a_ref: np.ndarray

    def __post_init__(self):
        for name in ("Qa", "R2_tilde"):
            M = linalg.check_symmetric(getattr(self, name), name=name)
            if not linalg.is_positive_definite(M):
                raise NotStabilizableError(f"{name} must be positive definite")
            object.__setattr__(self, name, M)
        if not self.rho_discipline > 0:
            raise ScenarioValidationError([f"rho_discipline must be > 0, got {self.rho_discipline}"])
        object.__setattr__(self, "x_a_ref", np.asarray(self.x_a_ref, dtype=float).reshape(-1))


@dataclass(frozen=True)
class PlantMode:
    """One insider behavioral mode as seen by the DM: dx = A x + B1 u + d."""

    mode_id: int
    A_sigma: np.ndarray
    B1: np.ndarray
    d_sigma: np.ndarray
    label: str = "cooperative"

    def __post_init__(self):
        A = np.asarray(self.A_sigma, dtype=float)
        B = np.atleast_2d(np.asarray(self.B1, dtype=float))
        d = np.asarray(self.d_sigma, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatchError(f"A_sigma must be square, got {A.shape}")
        if B.shape[0] != A.shape[0] or d.size != A.shape[0]:
            raise DimensionMismatchError(
                f"mode {self.mode_id}: A is {A.shape}, B1 is {B.shape}, d has {d.size} entries")
        if self.label not in MODE_LABELS:
            raise ScenarioValidationError([f"mode {self.mode_id}: unknown label {self.label!r}"])
        object.__setattr__(self, "A_sigma", A)
        object.__setattr__(self, "B1", B)
        object.__setattr__(self, "d_sigma", d)

    @property
    def n(self):
        return self.A_sigma.shape[0]

    @property
    def m(self):
        return self.B1.shape[1]


@dataclass(frozen=True)
class SwitchingSignal:
    """Piecewise-constant insider mode sequence with a dwell-time floor."""

    events: tuple  # ((t_j, mode_id), ...)
    dwell_min: float

    def __post_init__(self):
        events = tuple((float(t), int(mid)) for t, mid in self.events)
        object.__setattr__(self, "events", events)
        problems = []
        if not events:
            problems.append("switching signal needs at least one event")
        elif abs(events[0][0]) > 1e-12:
            problems.append(f"first event must be at t=0, got t={events[0][0]}")
        if self.dwell_min <= 0:
            problems.append(f"dwell_min must be positive, got {self.dwell_min}")
        for (ta, ma), (tb, mb) in zip(events, events[1:]):
            if tb <= ta:
                problems.append(f"events out of order: t={ta} (mode {ma}) then t={tb} (mode {mb})")
            elif tb - ta < self.dwell_min - 1e-12:
                problems.append(
                    f"gap {tb - ta:g}s between t={ta:g} and t={tb:g} violates dwell_min={self.dwell_min:g}")
        if problems:
            raise ScenarioValidationError(problems)

    def mode_at(self, t):
        mid = self.events[0][1]
        for tj, mj in self.events:
            if t >= tj - 1e-12:
                mid = mj
            else:
                break
        return mid

    def switch_times(self):
        return [tj for tj, _ in self.events[1:]]


@dataclass(frozen=True)
class TeamSolution:
    """Joint-ARE solution with both players' feedback laws u_i = -K_i x - k_i."""

    P_star: np.ndarray
    K1: np.ndarray
    k1: np.ndarray
    K2: np.ndarray
    k2: np.ndarray


def team_optimal_solution(spec: TeamGameSpec, tol=1e-10) -> TeamSolution:
    """Solve the joint ARE for the cooperative game.

    ``P*`` solves the ARE on (A, [B1 B2]) with block-diagonal input weight;
    the individual gains follow as ``K_i = R_i^{-1} B_i^T P*`` and the bias
    terms as ``k_i = -K_i x_c_ref``.
    """
    B = np.hstack([spec.B1, spec.B2])
    R = scipy.linalg.block_diag(spec.R1, spec.R2)
    K0 = linalg.stabilizing_gain(spec.A, B)
    P_star, _, _ = linalg.kleinman_iterate(spec.A, B, spec.Qc, R, K0, tol=tol)
    K1 = np.linalg.solve(spec.R1, spec.B1.T @ P_star)
    K2 = np.linalg.solve(spec.R2, spec.B2.T @ P_star)
    return TeamSolution(
        P_star=P_star,
        K1=K1,
        k1=-K1 @ spec.x_c_ref,
        K2=K2,
        k2=-K2 @ spec.x_c_ref,
    )


@dataclass(frozen=True)
class InsiderResponse:
    """Best-response law u2 = -K2 x - k2 and its Riccati certificate P2."""

    K2: np.ndarray
    k2: np.ndarray
    P2: np.ndarray


def insider_best_response(
    spec: TeamGameSpec,
    obj: InsiderObjective,
    K1: np.ndarray,
    K2_team: np.ndarray,
    tol=1e-10,
) -> InsiderResponse:
    """Insider's optimal feedback against the DM's frozen team policy.

    The insider cost couples the input to the cooperative input through the
    discipline term, giving a cross-weighted ARE on the shifted plant
    ``A - B1 K1``.  The cross term ``N = rho K2_team^T`` is eliminated by the
    standard substitution (shift the drift by ``B2 Rbar^{-1} N^T`` and deflate
    the state weight), after which the equation is a plain ARE solved by the
    Kleinman oracle.  The returned pair satisfies
    ``K2 = (R2_tilde + rho I)^{-1} (B2^T P2 + rho K2_team)``.
    """
    rho = obj.rho_discipline
    A0 = spec.A - spec.B1 @ np.atleast_2d(K1)
    B2 = spec.B2
    if not linalg.stabilizable(A0, B2):
        raise NotStabilizableError("(A - B1 K1, B2) is not stabilizable")
    m2 = B2.shape[1]
    Rbar = obj.R2_tilde + rho * np.eye(m2)
    K2_team = np.atleast_2d(K2_team)
    # cross-term elimination: N = rho K2_team^T
    Rbar_inv_K2 = np.linalg.solve(Rbar, K2_team)
    A_shift = A0 - rho * B2 @ Rbar_inv_K2
    Q_shift = linalg.symmetrize(obj.Qa + rho * K2_team.T @ obj.R2_tilde @ Rbar_inv_K2)
    # the large-rho cooperative limit gives a stabilizing start when the team
    # closed loop is stable: total gain K2_team <-> shifted gain below
    K_start = np.linalg.solve(Rbar, obj.R2_tilde @ K2_team)
    if not linalg.is_hurwitz(A_shift - B2 @ K_start):
        K_start = linalg.stabilizing_gain(A_shift, B2)
    P2, _, _ = linalg.kleinman_iterate(A_shift, B2, Q_shift, Rbar, K_start, tol=tol)
    K2 = np.linalg.solve(Rbar, B2.T @ P2 + rho * K2_team)
    k2 = -K2 @ obj.x_a_ref
    return InsiderResponse(K2=K2, k2=k2, P2=P2)


def insider_are_residual(spec, obj, K1, K2_team, P2):
    """Frobenius residual of the insider ARE at ``P2`` (for validation)."""
    rho = obj.rho_discipline
    A0 = spec.A - spec.B1 @ np.atleast_2d(K1)
    B2 = spec.B2
    K2_team = np.atleast_2d(K2_team)
    Rbar = obj.R2_tilde + rho * np.eye(B2.shape[1])
    G = P2 @ B2 + rho * K2_team.T
    res = (
        A0.T @ P2 + P2 @ A0 + obj.Qa + rho * K2_team.T @ K2_team
        - G @ np.linalg.solve(Rbar, G.T)
    )
    return float(np.linalg.norm(res, "fro"))


def build_plant_mode(spec: TeamGameSpec, K2_dia, k2_dia, mode_id, label) -> PlantMode:
    """Fold the insider's feedback into the drift seen by the DM.

    With ``u2 = -K2 x - k2`` the DM faces ``dx = (A - B2 K2) x + B1 u1 - B2 k2``,
    so the mode disturbance is ``d = -B2 k2``.
    """
    K2_dia = np.atleast_2d(np.asarray(K2_dia, dtype=float))
    k2_dia = np.asarray(k2_dia, dtype=float).reshape(-1)
    if K2_dia.shape != (spec.B2.shape[1], spec.n):
        raise DimensionMismatchError(f"K2 must be {(spec.B2.shape[1], spec.n)}, got {K2_dia.shape}")
    if k2_dia.size != spec.B2.shape[1]:
        raise DimensionMismatchError(f"k2 must have {spec.B2.shape[1]} entries, got {k2_dia.size}")
    return PlantMode(
        mode_id=mode_id,
        A_sigma=spec.A - spec.B2 @ K2_dia,
        B1=spec.B1,
        d_sigma=-spec.B2 @ k2_dia,
        label=label,
    )

"""Off-policy policy iteration and the periodic learning schedule.

One batch of delayed incremental data supports every iteration: the unknown
pair (P, K_next) enters a linear system whose left block multiplies svec(P)
and whose right block multiplies vec(K_next).  The periodic scheduler
alternates data collection under the current gain plus probing noise with
post-learning execution of the freshly learned gain, blind to the insider's
switching signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .augment import AugmentedMode, equilibrium
from .errors import (
    DimensionMismatchError,
    NoConvergenceError,
    RankDeficientError,
)
from .game import SwitchingSignal
from .simulate import (
    DataBatch,
    ExplorationNoise,
    SimConfig,
    TrajectoryLog,
    _rk4_span,
    collect_batch,
)


@dataclass(frozen=True)
class PolicyIterate:
    """One evaluation/improvement step: cost matrix, next gain, step residual."""

    P: np.ndarray
    K: np.ndarray
    k_index: int
    residual: float  # ||P^k - P^{k-1}||_F, inf at the first step


@dataclass(frozen=True)
class LearnerConfig:
    """Tolerances and timing of the periodic off-policy learner."""

    tau: float = 0.1
    delta_tau: float = 0.02
    eps: float = 1e-6
    max_policy_iters: int = 50
    inter_learning_interval: float = 10.0
    rank_tol: float = 1e-8
    p_min: int = 0          # 0 -> use the rank minimum q(q+1)/2 + m q
    p_max: int = 100
    learn_until: float | None = None  # no phase starts at/after this time
    quadrature: str = "simpson"

    def required_rank(self, q, m):
        return q * (q + 1) // 2 + m * q

    def effective_p_min(self, q, m):
        req = self.required_rank(q, m)
        p = self.p_min if self.p_min else req
        if p < req:
            raise DimensionMismatchError(
                f"p_min={p} is below the rank minimum {req}")
        return p


@dataclass(frozen=True)
class RankCheck:
    ok: bool
    rank: int
    required: int


def rank_ok(batch: DataBatch, rank_tol=1e-8) -> RankCheck:
    """Excitation test: numerical rank of [Ixx-reduced | Ixu].

    The duplicate Kronecker columns of ``Ixx`` are merged first, so full
    column rank equals ``q(q+1)/2 + m q`` exactly when the data determine a
    unique symmetric-P solution.
    """
    required = batch.q * (batch.q + 1) // 2 + batch.m * batch.q
    if batch.p == 0:
        return RankCheck(ok=False, rank=0, required=required)
    reduced = linalg.svec_reduce_columns(batch.Ixx, batch.q)
    sv = np.linalg.svd(np.hstack([reduced, batch.Ixu]), compute_uv=False)
    rank = int((sv > rank_tol * sv[0]).sum()) if sv[0] > 0 else 0
    return RankCheck(ok=rank == required, rank=rank, required=required)


def assemble(batch: DataBatch, K_k, Q, R1_tilde):
    """Build the linear system Theta [svec(P); vec(K_next)] = Xi for gain K_k."""
    K_k = np.atleast_2d(np.asarray(K_k, dtype=float))
    q, m = batch.q, batch.m
    if K_k.shape != (m, q):
        raise DimensionMismatchError(f"gain must be {m}x{q}, got {K_k.shape}")
    Q = linalg.check_symmetric(Q, name="Q")
    R1_tilde = linalg.check_symmetric(R1_tilde, name="R1_tilde")
    if Q.shape != (q, q) or R1_tilde.shape != (m, m):
        raise DimensionMismatchError("weight dimensions do not match the batch")
    eye_q = np.eye(q)
    K_block = (
        -2.0 * batch.Ixx @ np.kron(eye_q, K_k.T @ R1_tilde)
        - 2.0 * batch.Ixu @ np.kron(eye_q, R1_tilde)
    )
    Theta = np.hstack([batch.delta_xx, K_block])
    Qk = Q + K_k.T @ R1_tilde @ K_k
    Xi = -batch.Ixx @ linalg.vec(Qk)
    return Theta, Xi


def _solve_iterate(Theta, Xi, q, m, rank_tol):
    # column equilibration so the rank threshold measures genuine angular
    # deficiency, not the scale gap between the svec(P) and vec(K) blocks
    scale = np.linalg.norm(Theta, axis=0)
    scale[scale == 0.0] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(Theta / scale, Xi, rcond=rank_tol)
    ncols = Theta.shape[1]
    if rank < ncols:
        raise RankDeficientError(
            f"least-squares system rank {rank} < {ncols} columns",
            rank=int(rank), required=ncols)
    sol = sol / scale
    d1 = q * (q + 1) // 2
    P = linalg.smat(sol[:d1], q)
    K = linalg.unvec(sol[d1:], m, q)
    return P, K


def policy_iteration(batch: DataBatch, K0, cfg: LearnerConfig, Q, R1_tilde):
    """Iterate policy evaluation/improvement on one data batch.

    Returns the list of :class:`PolicyIterate`; the last entry holds the
    converged pair.  Raises :class:`RankDeficientError` when the excitation
    condition fails and :class:`NoConvergenceError` when the residual stays
    above ``cfg.eps``.
    """
    check = rank_ok(batch, cfg.rank_tol)
    if not check.ok:
        raise RankDeficientError(
            f"batch rank {check.rank} < required {check.required}",
            rank=check.rank, required=check.required)
    K = np.atleast_2d(np.asarray(K0, dtype=float))
    iterates: list[PolicyIterate] = []
    P_prev = None
    for k in range(cfg.max_policy_iters):
        Theta, Xi = assemble(batch, K, Q, R1_tilde)
        P, K_next = _solve_iterate(Theta, Xi, batch.q, batch.m, cfg.rank_tol)
        residual = float("inf") if P_prev is None else float(np.linalg.norm(P - P_prev, "fro"))
        iterates.append(PolicyIterate(P=P, K=K_next, k_index=k, residual=residual))
        if residual < cfg.eps:
            return iterates
        P_prev = P
        K = K_next
    raise NoConvergenceError(
        f"policy iteration stalled above eps={cfg.eps} "
        f"(last residual {iterates[-1].residual:.3e})",
        trace=[it.residual for it in iterates])


# --------------------------------------------------------------------------
# periodic schedule
# --------------------------------------------------------------------------

WARM_START = "warm_start"
COLLECTING = "collecting"
ITERATING = "iterating"
POST_LEARNING = "post_learning"


@dataclass
class ScheduleState:
    """Live bookkeeping of the periodic learner."""

    phase: str
    t_next: float
    current_gain: np.ndarray
    learned_gains: list = field(default_factory=list)  # (time, K, P)


@dataclass(frozen=True)
class PhaseRecord:
    """One completed learning phase (or a skipped one when rank never held)."""

    index: int
    t_start: float
    t_collect_start: float
    t_end: float
    p_windows: int
    achieved_rank: int
    iterates: tuple
    updated: bool
    K_before: np.ndarray
    K_after: np.ndarray

    @property
    def zeta(self):
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ScheduleSegment:
    phase: str
    t_start: float
    t_end: float
    gain: np.ndarray


@dataclass
class ScheduleResult:
    log: TrajectoryLog
    phases: list
    segments: list
    K_final: np.ndarray


def run_schedule(modes, signal: SwitchingSignal, K_init, Q, R1_tilde,
                 noise: ExplorationNoise, sim_cfg: SimConfig,
                 cfg: LearnerConfig) -> ScheduleResult:
    """Run the periodic off-policy mitigation loop against the switched plant.

    Each cycle: warm start and data collection under ``u = -K xi + e`` until
    the rank condition holds (never before ``p_min`` windows), one in-place
    policy-iteration solve, then noise-free execution of the learned gain for
    the inter-learning interval.  The learned gain seeds the next cycle.  The
    insider's switches are invisible here; collection windows that straddle
    one produce mixed-mode rows that are consumed blindly.

    If the rank condition still fails after ``p_max`` windows (an unexcited
    plant cannot be identified), the phase is recorded with
    ``updated=False``, the current gain is kept, and the cadence continues.
    """
    lin = {mid: mo for mid, mo in dict(modes).items()}
    some = next(iter(lin.values()))
    q = some.A_aug.shape[0] if isinstance(some, AugmentedMode) else some.A.shape[0]
    h = sim_cfg.step
    N = sim_cfg.n_steps()
    x0 = np.asarray(sim_cfg.initial_state, dtype=float).reshape(-1)
    if x0.size != q:
        raise DimensionMismatchError(f"initial state has {x0.size} entries, expected {q}")
    K_cur = np.atleast_2d(np.asarray(K_init, dtype=float))
    m = K_cur.shape[0]
    Q = linalg.check_symmetric(Q, name="Q")
    R1_tilde = linalg.check_symmetric(R1_tilde, name="R1_tilde")

    n_warm = round(sim_cfg.warm_start / h)
    lag = round(cfg.tau / h)
    w = round(cfg.delta_tau / h)
    if sim_cfg.warm_start + 1e-12 < cfg.tau:
        raise DimensionMismatchError("warm_start must be at least tau")
    p_min = cfg.effective_p_min(q, m)
    n_post = round(cfg.inter_learning_interval / h)

    sys = {mid: (mo.A_aug, mo.B_aug, mo.d_bar) if isinstance(mo, AugmentedMode)
           else (mo.A, mo.B, mo.d) for mid, mo in lin.items()}

    e_half = noise.sample_half_grid(m, N, h)

    ts = np.arange(N + 1) * h
    xi = np.empty((N + 1, q))
    u = np.empty((N + 1, m))
    mode_col = np.empty(N + 1, dtype=int)
    xi[0] = x0
    u[0] = -(K_cur @ x0) + e_half[0]
    mode_col[0] = signal.mode_at(0.0)

    switch_idx = sorted({min(N, max(0, int(np.ceil(tj / h - 1e-9))))
                         for tj in signal.switch_times()})

    def integrate(a, b, noisy):
        """Advance from sample a to b under the current gain; fill log rows.

        Splits at mode switches.  Writes xi and u on (a, b]; the sample at a
        was written by the previous chunk, so at a law change the log keeps
        the left limit of the input — exactly the value any collection
        window ending at a consumed.
        """
        pieces = [a] + [si for si in switch_idx if a < si < b] + [b]
        for lo, hi in zip(pieces, pieces[1:]):
            mid = signal.mode_at(ts[lo])
            A, B, d = sys[mid]
            M = A - B @ K_cur
            nh = e_half[2 * lo:2 * hi + 1] if noisy else np.zeros((2 * (hi - lo) + 1, m))
            xi[lo + 1:hi + 1] = _rk4_span(M, d, B, xi[lo], nh, h, sim_cfg.blowup, ts[lo])
            u[lo + 1:hi + 1] = -(xi[lo + 1:hi + 1] @ K_cur.T) + (
                e_half[2 * lo + 2:2 * hi + 1:2] if noisy else 0.0)
            mode_col[lo + 1:hi + 1] = mid
        for si in switch_idx:
            if a < si <= b:
                mode_col[si] = signal.mode_at(ts[si])

    state = ScheduleState(phase=WARM_START, t_next=0.0, current_gain=K_cur)
    phases: list[PhaseRecord] = []
    segments: list[ScheduleSegment] = []
    i = 0
    phase_idx = 0
    while i < N:
        # ---- learning phase: warm start + windowed collection ----
        t_start = ts[i]
        state.phase = WARM_START
        a_warm_end = min(N, i + n_warm)
        integrate(i, a_warm_end, noisy=True)
        segments.append(ScheduleSegment(WARM_START, t_start, ts[a_warm_end], K_cur.copy()))
        if a_warm_end == N:
            break
        i = a_warm_end
        t_collect = ts[i]
        state.phase = COLLECTING
        p = 0
        batch = None
        achieved = 0
        updated = False
        iterates = ()
        K_before = K_cur.copy()
        while True:
            if i + w > N:
                break  # horizon ends mid-collection; no update
            integrate(i, i + w, noisy=True)
            i += w
            p += 1
            if p >= p_min:
                view = TrajectoryLog(t=ts[:i + 1], xi=xi[:i + 1], u=u[:i + 1],
                                     mode=mode_col[:i + 1])
                batch = collect_batch(view, t_collect, cfg.tau, cfg.delta_tau, p,
                                      quadrature=cfg.quadrature)
                check = rank_ok(batch, cfg.rank_tol)
                achieved = check.rank
                if check.ok:
                    try:
                        iterates = tuple(policy_iteration(batch, K_cur, cfg, Q, R1_tilde))
                        updated = True
                        break
                    except RankDeficientError:
                        pass  # solve-level near-deficiency: collect more data
                if p >= cfg.p_max:
                    break  # unexcited plant: keep the current gain
        segments.append(ScheduleSegment(COLLECTING, t_collect, ts[i], K_before))
        state.phase = ITERATING
        segments.append(ScheduleSegment(ITERATING, ts[i], ts[i], K_before))
        if updated:
            K_cur = iterates[-1].K
            state.learned_gains.append((ts[i], K_cur, iterates[-1].P))
        state.current_gain = K_cur
        phases.append(PhaseRecord(
            index=phase_idx, t_start=t_start, t_collect_start=t_collect,
            t_end=ts[i], p_windows=p, achieved_rank=achieved,
            iterates=iterates, updated=updated,
            K_before=K_before, K_after=K_cur.copy()))
        phase_idx += 1
        if i >= N:
            break
        # ---- post-learning execution ----
        state.phase = POST_LEARNING
        zeta = ts[i] - t_start
        state.t_next = state.t_next + zeta + cfg.inter_learning_interval
        post_end = min(N, i + n_post)
        t_post = ts[i]
        integrate(i, post_end, noisy=False)
        i = post_end
        if i < N and (cfg.learn_until is None or ts[i] < cfg.learn_until):
            segments.append(ScheduleSegment(POST_LEARNING, t_post, ts[i], K_cur.copy()))
            continue
        # horizon reached or learning disabled: hold the gain to the end
        if i < N:
            integrate(i, N, noisy=False)
        segments.append(ScheduleSegment(POST_LEARNING, t_post, ts[N], K_cur.copy()))
        i = N
    log = TrajectoryLog(t=ts, xi=xi, u=u, mode=mode_col)
    return ScheduleResult(log=log, phases=phases, segments=segments, K_final=K_cur.copy())


# --------------------------------------------------------------------------
# analysis operations (oracle side; not available to the in-loop learner)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DwellFeasibility:
    """Dwell-time feasibility of the learning cadence: the inter-learning
    interval must leave
    room for one full learning cycle plus the contraction margin inside the
    shortest dwell interval."""

    omega_min: float
    gamma_min: float
    nu: float
    zeta_max: float
    delta_T: float
    feasible: bool
    margin: float


def dwell_feasibility(gamma_min, nu, zeta_max, omega_min, delta_T) -> DwellFeasibility:
    """Evaluate delta_T < omega_min - ln(2 nu)/gamma_min - 2 zeta_max."""
    if gamma_min <= 0:
        raise ValueError(f"gamma_min must be positive, got {gamma_min}")
    if nu < 1:
        raise ValueError(f"nu must be >= 1, got {nu}")
    if zeta_max < 0 or omega_min <= 0:
        raise ValueError("zeta_max must be >= 0 and omega_min > 0")
    rhs = omega_min - math.log(2.0 * nu) / gamma_min - 2.0 * zeta_max
    margin = rhs - delta_T
    return DwellFeasibility(
        omega_min=omega_min, gamma_min=gamma_min, nu=nu, zeta_max=zeta_max,
        delta_T=delta_T, feasible=margin > 0, margin=margin)


@dataclass(frozen=True)
class MixedModeReport:
    """Hurwitz-preservation diagnostics for one mode transition."""

    mu2_prev_optimal: float
    mu2_mixed: float
    perturbation_norm: float
    hypothesis1_holds: bool   # ||Delta_j|| < gamma_j
    mixed_hurwitz: bool
    gain_distance: float | None
    gain_bound: float
    hypothesis2_holds: bool | None  # ||K_hat - K_star|| < (gamma_j - rho_j)/B_bar
    rho_j: float
    gamma_j: float
    b_bar: float


def mixed_mode_safety_check(K_prev_star, prev_mode: AugmentedMode,
                            next_mode: AugmentedMode, rho_j, gamma_j, b_bar,
                            K_hat_next=None) -> MixedModeReport:
    """Check the stability-handoff hypotheses between consecutive modes.

    Reports the log norm of the mixed closed loop (previous optimal gain on
    the next mode), the switching perturbation norm, and whether the two
    sufficient conditions hold: perturbation below the margin, and candidate
    gain within ``(gamma_j - rho_j)/b_bar`` of the previous optimum.
    """
    K_prev_star = np.atleast_2d(np.asarray(K_prev_star, dtype=float))
    A_prev_cl = prev_mode.A_aug - prev_mode.B_aug @ K_prev_star
    A_mixed = next_mode.A_aug - next_mode.B_aug @ K_prev_star
    delta = (next_mode.A_aug - prev_mode.A_aug) - (next_mode.B_aug - prev_mode.B_aug) @ K_prev_star
    pert = float(np.linalg.norm(delta, 2))
    gain_distance = None
    hyp2 = None
    if K_hat_next is not None:
        gain_distance = float(np.linalg.norm(
            np.atleast_2d(np.asarray(K_hat_next, dtype=float)) - K_prev_star, 2))
        hyp2 = bool(rho_j < gamma_j and gain_distance < (gamma_j - rho_j) / b_bar)
    return MixedModeReport(
        mu2_prev_optimal=linalg.log_norm_2(A_prev_cl),
        mu2_mixed=linalg.log_norm_2(A_mixed),
        perturbation_norm=pert,
        hypothesis1_holds=bool(pert < gamma_j),
        mixed_hurwitz=linalg.is_hurwitz(A_mixed),
        gain_distance=gain_distance,
        gain_bound=float((gamma_j - rho_j) / b_bar),
        hypothesis2_holds=hyp2,
        rho_j=rho_j,
        gamma_j=gamma_j,
        b_bar=b_bar,
    )


def certified_decay_rate(P, Q_closed):
    """Guaranteed exponential rate of V = e^T P e along the optimal loop.

    From the closed-loop Lyapunov identity, dV/dt = -e^T Q_closed e with
    ``Q_closed = Q + K*^T R K*``, giving
    V(t) <= exp(-2 gamma (t-s)) V(s) with
    gamma = lambda_min(Q_closed) / (2 lambda_max(P)).  Used in place of the
    Euclidean log-norm margin, which is nonpositive for the systems in scope.
    """
    lam_q = float(np.linalg.eigvalsh(linalg.symmetrize(Q_closed)).min())
    lam_p = float(np.linalg.eigvalsh(linalg.symmetrize(P)).max())
    return lam_q / (2.0 * lam_p)


@dataclass(frozen=True)
class ContractionConstants:
    """Switched-Lyapunov contraction constants from oracle solutions."""

    nu: float
    gamma_min: float
    delta_min: float
    rho: float              # contraction factor 2 nu exp(-2 gamma_min delta_min)
    lam_min: float
    lam_max: float
    delta_r: float          # largest reference jump between consecutive modes
    c1: float
    c2: float
    alpha: float


def contraction_constants(oracle, mode_sequence, delta_min) -> ContractionConstants:
    """Evaluate the switched-Lyapunov contraction constants.

    ``oracle`` maps mode_id -> (P, K, xi_r, gamma); ``mode_sequence`` is the
    visited mode order; ``delta_min`` the measured shortest effective dwell.
    """
    Ps = [oracle[mid][0] for mid in mode_sequence]
    nu = max(
        float(np.linalg.eigvals(np.linalg.solve(Pi, Pj)).real.max())
        for Pi in Ps for Pj in Ps)
    gamma_min = min(oracle[mid][3] for mid in mode_sequence)
    lam_min = min(float(np.linalg.eigvalsh(P).min()) for P in Ps)
    lam_max = max(float(np.linalg.eigvalsh(P).max()) for P in Ps)
    refs = [oracle[mid][2] for mid in mode_sequence]
    jumps = [float(np.linalg.norm(a - b)) for a, b in zip(refs, refs[1:])]
    delta_r = max(jumps) if jumps else 0.0
    rho = 2.0 * nu * math.exp(-2.0 * gamma_min * delta_min)
    c1 = math.sqrt(lam_max / lam_min)
    if rho < 1.0:
        alpha = -math.log(rho) / (2.0 * delta_min)
        c2 = math.sqrt(2.0 * lam_max / lam_min) * delta_r / math.sqrt(1.0 - rho)
    else:
        alpha = 0.0
        c2 = float("inf")
    return ContractionConstants(
        nu=nu, gamma_min=gamma_min, delta_min=delta_min, rho=rho,
        lam_min=lam_min, lam_max=lam_max, delta_r=delta_r,
        c1=c1, c2=c2, alpha=alpha)


def oracle_solutions(modes, Q, R1_tilde, tol=1e-10):
    """Model-based reference solutions per mode: (P*, K*, xi_r, gamma)."""
    out = {}
    for mid, mo in dict(modes).items():
        A, B = mo.A_aug, mo.B_aug
        K0 = linalg.stabilizing_gain(A, B)
        P, K, _ = linalg.kleinman_iterate(A, B, Q, R1_tilde, K0, tol=tol)
        xi_r = equilibrium(mo, K)
        gamma = certified_decay_rate(P, Q + K.T @ R1_tilde @ K)
        out[mid] = (P, K, xi_r, gamma)
    return out

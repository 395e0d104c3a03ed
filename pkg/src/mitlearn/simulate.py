"""Fixed-step simulation of the switched plant and learning-data collection.

The integrator is classical fourth-order Runge-Kutta with the feedback law
evaluated inside the stages, so the logged input is the continuous-time law
sampled on the grid.  One run is strictly sequential; independent runs are
safe to parallelize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentedMode
from .errors import (
    DimensionMismatchError,
    DivergenceError,
    InsufficientHistoryError,
    WindowOverrunError,
)
from .game import PlantMode, SwitchingSignal


@dataclass(frozen=True)
class ExplorationNoise:
    """Sum-of-sinusoids probing signal with frequencies drawn once per run."""

    num_terms: int = 100
    freq_low: float = -50.0
    freq_high: float = 50.0
    amplitude: float = 1.0
    seed: int = 0

    def frequencies(self, m):
        """Frequency table, one row per input channel; deterministic in seed."""
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.freq_low, self.freq_high, size=(m, self.num_terms))

    def sample_half_grid(self, m, n_steps, step, t0=0.0):
        """Noise at the 2*n_steps+1 half-grid points used by the RK4 stages."""
        freqs = self.frequencies(m)
        times = t0 + np.arange(2 * n_steps + 1) * (step / 2.0)
        out = np.empty((times.size, m))
        chunk = max(1, 2_000_000 // max(1, self.num_terms))
        for lo in range(0, times.size, chunk):
            hi = min(lo + chunk, times.size)
            # (chunk, m, num_terms) sines summed over the last axis
            out[lo:hi] = self.amplitude * np.sin(
                times[lo:hi, None, None] * freqs[None, :, :]).sum(axis=2)
        return out


@dataclass(frozen=True)
class SimConfig:
    """Grid and horizon for one run.  ``warm_start`` is the lead-in each
    learning phase runs before its first collection window (paper default
    2*tau)."""

    step: float = 0.001
    t_end: float = 10.0
    initial_state: np.ndarray = None
    warm_start: float = 0.2
    blowup: float = 1e9

    def __post_init__(self):
        if self.step <= 0:
            raise DimensionMismatchError("step must be positive")
        if self.initial_state is not None:
            object.__setattr__(
                self, "initial_state", np.asarray(self.initial_state, dtype=float).reshape(-1))

    def n_steps(self):
        return round(self.t_end / self.step)


@dataclass(frozen=True)
class LinearMode:
    """Switched-linear currency of the simulator: dx = A x + B u + d."""

    mode_id: int
    A: np.ndarray
    B: np.ndarray
    d: np.ndarray


def as_linear_mode(mode):
    if isinstance(mode, LinearMode):
        return mode
    if isinstance(mode, AugmentedMode):
        return LinearMode(mode.mode_id, mode.A_aug, mode.B_aug, mode.d_bar)
    if isinstance(mode, PlantMode):
        return LinearMode(mode.mode_id, mode.A_sigma, mode.B1, mode.d_sigma)
    raise DimensionMismatchError(f"cannot interpret {type(mode).__name__} as a linear mode")


@dataclass(frozen=True)
class GainSchedule:
    """Piecewise-constant affine feedback u = -K x + bias."""

    pieces: tuple  # ((t_start, K, bias), ...)

    @classmethod
    def constant(cls, K, bias=None):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        b = np.zeros(K.shape[0]) if bias is None else np.asarray(bias, dtype=float).reshape(-1)
        return cls(pieces=((0.0, K, b),))

    def __post_init__(self):
        pieces = []
        for t0, K, b in self.pieces:
            K = np.atleast_2d(np.asarray(K, dtype=float))
            b = np.zeros(K.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(-1)
            pieces.append((float(t0), K, b))
        pieces.sort(key=lambda p: p[0])
        object.__setattr__(self, "pieces", tuple(pieces))

    def at(self, t):
        K, b = self.pieces[0][1], self.pieces[0][2]
        for t0, Kp, bp in self.pieces:
            if t >= t0 - 1e-12:
                K, b = Kp, bp
            else:
                break
        return K, b


@dataclass
class TrajectoryLog:
    """Uniform-grid record of one run: state, applied input, active mode."""

    t: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    mode: np.ndarray

    @property
    def step(self):
        return float(self.t[1] - self.t[0])

    @property
    def q(self):
        return self.xi.shape[1]

    @property
    def m(self):
        return self.u.shape[1]

    def index_of(self, time):
        i = (time - self.t[0]) / self.step
        if abs(i - round(i)) > 1e-6:
            raise InsufficientHistoryError(f"t={time} is not on the log grid")
        i = round(i)
        if not 0 <= i < len(self.t):
            raise InsufficientHistoryError(f"t={time} is outside the log")
        return i

    def to_csv(self, path):
        header = (
            ["t"]
            + [f"xi_{i+1}" for i in range(self.q)]
            + [f"u_{i+1}" for i in range(self.m)]
            + ["mode"]
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self.t)):
                row = [f"{self.t[i]:.17g}"]
                row += [f"{v:.17g}" for v in self.xi[i]]
                row += [f"{v:.17g}" for v in self.u[i]]
                row.append(str(int(self.mode[i])))
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            q = sum(1 for h in header if h.startswith("xi_"))
            m = sum(1 for h in header if h.startswith("u_"))
            data = np.loadtxt(fh, delimiter=",")
        data = np.atleast_2d(data)
        return cls(
            t=data[:, 0],
            xi=data[:, 1:1 + q],
            u=data[:, 1 + q:1 + q + m],
            mode=data[:, -1].astype(int),
        )


def _rk4_span(M, c, B, x0, noise_half, h, blowup, t0):
    """Integrate dx = M x + c + B e(t) over len(noise_half)//2 steps.

    ``noise_half`` holds e at the half-grid (2*steps+1 rows); classical RK4
    stages sample it at t, t+h/2, t+h.  Returns the states after each step.
    """
    steps = (len(noise_half) - 1) // 2
    out = np.empty((steps, x0.size))
    x = x0
    for i in range(steps):
        e1 = noise_half[2 * i]
        e2 = noise_half[2 * i + 1]
        e3 = noise_half[2 * i + 2]
        k1 = M @ x + c + B @ e1
        k2 = M @ (x + (h / 2.0) * k1) + c + B @ e2
        k3 = M @ (x + (h / 2.0) * k2) + c + B @ e2
        k4 = M @ (x + h * k3) + c + B @ e3
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.abs(x).max() > blowup:
            raise DivergenceError(
                f"state norm exceeded blow-up bound {blowup:g} at t={t0 + (i + 1) * h:g}",
                t=t0 + (i + 1) * h)
        out[i] = x
    return out


def simulate(modes, signal: SwitchingSignal, controller, cfg: SimConfig,
             noise: ExplorationNoise | None = None) -> TrajectoryLog:
    """Run the switched plant under a fixed gain schedule.

    ``modes`` maps mode ids to :class:`AugmentedMode` / :class:`PlantMode` /
    :class:`LinearMode`; ``controller`` is a :class:`GainSchedule` or a bare
    gain matrix.  When ``noise`` is given, the probing signal is added to
    every input channel for the entire run.  Mode switches take effect at the
    first grid point at or after the event time; the state is continuous
    across them.
    """
    lin = {mid: as_linear_mode(mo) for mid, mo in dict(modes).items()}
    if not isinstance(controller, GainSchedule):
        controller = GainSchedule.constant(controller)
    h = cfg.step
    N = cfg.n_steps()
    x0 = np.asarray(cfg.initial_state, dtype=float).reshape(-1)
    dim = x0.size
    some = next(iter(lin.values()))
    m = some.B.shape[1]
    for mo in lin.values():
        if mo.A.shape != (dim, dim) or mo.B.shape != (dim, m) or mo.d.size != dim:
            raise DimensionMismatchError(
                f"mode {mo.mode_id}: expected A {dim}x{dim}, B {dim}x{m}")

    ts = np.arange(N + 1) * h
    if noise is not None:
        e_half = noise.sample_half_grid(m, N, h)
    else:
        e_half = np.zeros((2 * N + 1, m))

    # segment boundaries: mode switches and gain-schedule changes, snapped to grid
    cut = {0, N}
    for tj in signal.switch_times():
        cut.add(min(N, max(0, int(np.ceil(tj / h - 1e-9)))))
    for t0, _, _ in controller.pieces:
        cut.add(min(N, max(0, int(np.ceil(t0 / h - 1e-9)))))
    bounds = sorted(cut)

    xi = np.empty((N + 1, dim))
    u = np.empty((N + 1, m))
    mode_col = np.empty(N + 1, dtype=int)
    xi[0] = x0
    K0, b0 = controller.at(0.0)
    u[0] = -(K0 @ x0) + b0 + e_half[0]
    mode_col[0] = signal.mode_at(0.0)
    for a, b in zip(bounds, bounds[1:]):
        t_a = ts[a]
        mo = lin[signal.mode_at(t_a)]
        K, bias = controller.at(t_a)
        if K.shape != (m, dim):
            raise DimensionMismatchError(f"gain must be {m}x{dim}, got {K.shape}")
        M = mo.A - mo.B @ K
        c = mo.d + mo.B @ bias
        # u is written on (a, b]: at a law change the log keeps the left
        # limit of the input, matching what any data window ending at a used.
        xi[a + 1:b + 1] = _rk4_span(
            M, c, mo.B, xi[a], e_half[2 * a:2 * b + 1], h, cfg.blowup, t_a)
        u[a + 1:b + 1] = -(xi[a + 1:b + 1] @ K.T) + bias + e_half[2 * a + 2:2 * b + 1:2]
        mode_col[a + 1:b + 1] = mo.mode_id
    for tj in signal.switch_times():
        si = min(N, max(0, int(np.ceil(tj / h - 1e-9))))
        mode_col[si] = signal.mode_at(ts[si])
    return TrajectoryLog(t=ts, xi=xi, u=u, mode=mode_col)


@dataclass(frozen=True)
class DataBatch:
    """Learning-data matrices accumulated over ``p`` windows.

    ``delta_xx`` holds the svec-reduced end-point differences of the delayed
    state Kronecker square (duplicate off-diagonal columns merged), ``Ixx``
    and ``Ixu`` the window integrals of the full Kronecker products.
    """

    p: int
    delta_xx: np.ndarray  # (p, q(q+1)/2)
    Ixx: np.ndarray       # (p, q*q)
    Ixu: np.ndarray       # (p, q*m)
    windows: tuple        # ((start, end), ...)
    q: int
    m: int

    @classmethod
    def empty(cls, q, m):
        return cls(p=0, delta_xx=np.zeros((0, q * (q + 1) // 2)),
                   Ixx=np.zeros((0, q * q)), Ixu=np.zeros((0, q * m)),
                   windows=(), q=q, m=m)


def _quad_weights(n_samples, h, rule):
    if rule == "trapezoid":
        w = np.full(n_samples, h)
        w[0] = w[-1] = h / 2.0
        return w
    if rule == "simpson":
        if n_samples % 2 == 0:
            raise DimensionMismatchError(
                "simpson needs an even number of intervals per window")
        w = np.empty(n_samples)
        w[0::2] = 2.0 * h / 3.0
        w[1::2] = 4.0 * h / 3.0
        w[0] = w[-1] = h / 3.0
        return w
    raise DimensionMismatchError(f"unknown quadrature rule {rule!r}")


def _steps_of(interval, h, name):
    k = interval / h
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise DimensionMismatchError(
            f"{name}={interval} must be a positive integer multiple of step={h}")
    return round(k)


def collect_batch(log: TrajectoryLog, window_start, tau, delta_tau, p_target,
                  quadrature="simpson") -> DataBatch:
    """Assemble the learning-data matrices from a logged segment.

    Windows of length ``delta_tau`` tile the segment starting at
    ``window_start`` with stride ``delta_tau``; each contributes one row.
    The delayed differences need ``tau`` of history before the first window.
    """
    h = log.step
    lag = _steps_of(tau, h, "tau")
    w = _steps_of(delta_tau, h, "delta_tau")
    if p_target < 1:
        raise WindowOverrunError("p_target must be at least 1")
    a0 = log.index_of(window_start)
    if a0 - lag < 0:
        raise InsufficientHistoryError(
            f"first window at t={window_start} needs history back to t={window_start - tau}")
    end_idx = a0 + p_target * w
    if end_idx > len(log.t) - 1:
        raise WindowOverrunError(
            f"{p_target} windows of {delta_tau}s from t={window_start} overrun the log")

    q, m = log.q, log.m
    lo, hi = a0 - lag, end_idx
    dxi = log.xi[lo + lag:hi + 1] - log.xi[lo:hi + 1 - lag]   # Delta xi at [a0 .. end]
    du = log.u[lo + lag:hi + 1] - log.u[lo:hi + 1 - lag]
    weights = _quad_weights(w + 1, h, quadrature)

    iu = np.triu_indices(q)
    delta_rows = np.empty((p_target, q * (q + 1) // 2))
    Ixx_rows = np.empty((p_target, q * q))
    Ixu_rows = np.empty((p_target, q * m))
    windows = []
    for i in range(p_target):
        a = i * w
        b = a + w
        seg_x = dxi[a:b + 1]
        seg_u = du[a:b + 1]
        kron_xx = (seg_x[:, :, None] * seg_x[:, None, :]).reshape(w + 1, -1)
        kron_xu = (seg_x[:, :, None] * seg_u[:, None, :]).reshape(w + 1, -1)
        Ixx_rows[i] = weights @ kron_xx
        Ixu_rows[i] = weights @ kron_xu
        end_outer = np.outer(seg_x[-1], seg_x[-1]) - np.outer(seg_x[0], seg_x[0])
        reduced = end_outer + end_outer.T - np.diag(np.diag(end_outer))
        delta_rows[i] = reduced[iu]
        windows.append((log.t[a0 + a], log.t[a0 + b]))
    return DataBatch(p=p_target, delta_xx=delta_rows, Ixx=Ixx_rows, Ixu=Ixu_rows,
                     windows=tuple(windows), q=q, m=m)

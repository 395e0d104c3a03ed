"""Experiment orchestration: run a scenario, persist artifacts, analyze them.

`run` executes the periodic learning schedule plus the comparison policies
and writes everything to disk; `analyze` is a pure function of those
artifacts (plus the scenario and its oracle) and recomputes every reported
number from them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np

from . import learner as ln
from .augment import augment
from .errors import InfeasibleScheduleError, MissingArtifactsError
from .scenario import Scenario
from .simulate import GainSchedule, TrajectoryLog, simulate

OPTIMAL_GAIN_RTOL = 5e-2  # a gain this close to the oracle counts as converged


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if not math.isfinite(f) else f
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sha256(path):
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def augmented_modes(scenario: Scenario):
    return {mid: augment(mode, scenario.reference) for mid, mode in scenario.modes.items()}


def initial_gain(scenario: Scenario):
    """Synthesize the DM's starting gain from the nominal cooperative model.

    The nominal model is the one piece of dynamics the DM legitimately
    knows, so the model-based oracle is fair game here.
    """
    nominal_aug = augment(scenario.nominal, scenario.reference)
    sol = ln.oracle_solutions({0: nominal_aug}, scenario.Q, scenario.R1_tilde)
    P, K, xi_r, _ = sol[0]
    return K, xi_r


def initial_state(scenario: Scenario):
    K0, xi_r_nom = initial_gain(scenario)
    if isinstance(scenario.integrator_init, str):  # "nominal"
        z0 = xi_r_nom[scenario.n:]
    else:
        z0 = np.asarray(scenario.integrator_init, dtype=float)
    return np.concatenate([scenario.x_phys0, z0]), K0


def dwell_check(scenario: Scenario, oracle=None):
    """Evaluate the dwell-time feasibility bound with oracle margins.

    Uses the declared worst-case learning duration (warm start plus ``p_max``
    windows).  Returns None for single-mode scenarios or when the oracle is
    disabled; raises :class:`InfeasibleScheduleError` in strict mode.
    """
    if not scenario.oracle_enabled or len(scenario.modes) < 2:
        return None
    if oracle is None:
        oracle = ln.oracle_solutions(augmented_modes(scenario), scenario.Q,
                                     scenario.R1_tilde)
    zeta_bound = scenario.sim.warm_start + scenario.learner.p_max * scenario.learner.delta_tau
    gamma_min = min(g for (_, _, _, g) in oracle.values())
    nu = ln.contraction_constants(oracle, sorted(oracle), delta_min=1.0).nu
    dw = ln.dwell_feasibility(
        gamma_min=gamma_min, nu=nu, zeta_max=zeta_bound,
        omega_min=scenario.signal.dwell_min,
        delta_T=scenario.learner.inter_learning_interval)
    if scenario.strict_dwell and not dw.feasible:
        raise InfeasibleScheduleError(
            f"inter-learning interval {dw.delta_T}s violates the dwell bound "
            f"(margin {dw.margin:.3f}s)")
    return dw


def run(scenario: Scenario, seed=None, out_dir="out") -> dict:
    """Execute the scenario and write artifacts; returns the run report."""
    t_wall = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    noise = scenario.noise
    if seed is not None:
        noise = dataclasses.replace(noise, seed=int(seed))
    x0, K_init = initial_state(scenario)
    sim_cfg = dataclasses.replace(scenario.sim, initial_state=x0)
    aug = augmented_modes(scenario)

    oracle = None
    if scenario.oracle_enabled:
        oracle = ln.oracle_solutions(aug, scenario.Q, scenario.R1_tilde)

    dw = dwell_check(scenario, oracle)
    dwell_report = dataclasses.asdict(dw) if dw is not None else None

    result = ln.run_schedule(
        aug, scenario.signal, K_init, scenario.Q, scenario.R1_tilde,
        noise, sim_cfg, scenario.learner)
    result.log.to_csv(out / "trajectory.csv")

    # comparison curves: first regulated output under frozen policies
    C = scenario.reference.C
    y_learned = result.log.xi[:, :scenario.n] @ C[0]
    init_log = simulate(aug, scenario.signal, GainSchedule.constant(K_init),
                        sim_cfg, noise=None)
    y_initial = init_log.xi[:, :scenario.n] @ C[0]
    y_coop = None
    if scenario.comparison_cooperative is not None:
        Kc, bc = scenario.comparison_cooperative
        raw_cfg = dataclasses.replace(sim_cfg, initial_state=scenario.x_phys0)
        coop_log = simulate(scenario.modes, scenario.signal,
                            GainSchedule.constant(Kc, bc), raw_cfg, noise=None)
        y_coop = coop_log.xi @ C[0]
    with open(out / "comparison.csv", "w", encoding="utf-8") as fh:
        cols = ["t", "y_learned", "y_initial"] + (["y_cooperative"] if y_coop is not None else [])
        fh.write(",".join(cols) + "\n")
        for i in range(len(result.log.t)):
            row = [f"{result.log.t[i]:.17g}", f"{y_learned[i]:.17g}", f"{y_initial[i]:.17g}"]
            if y_coop is not None:
                row.append(f"{y_coop[i]:.17g}")
            fh.write(",".join(row) + "\n")

    _write_json(out / "gain_history.json", {
        "phases": [{
            "index": ph.index,
            "t_start": ph.t_start,
            "t_collect_start": ph.t_collect_start,
            "t_end": ph.t_end,
            "p_windows": ph.p_windows,
            "achieved_rank": ph.achieved_rank,
            "updated": ph.updated,
            "K_before": ph.K_before,
            "K_after": ph.K_after,
            "iterates": [{"k": it.k_index, "P": np.asarray(it.P).ravel(),
                          "K": np.asarray(it.K).ravel(), "residual": it.residual}
                         for it in ph.iterates],
        } for ph in result.phases],
    })
    _write_json(out / "schedule.json", [
        {"phase": seg.phase, "t_start": seg.t_start, "t_end": seg.t_end, "gain": seg.gain}
        for seg in result.segments
    ])

    # ------- report -------
    log = result.log
    phase_rows = []
    for ph in result.phases:
        data_mode = int(log.mode[log.index_of(ph.t_end)])
        row = {
            "index": ph.index, "t_start": ph.t_start, "t_end": ph.t_end,
            "zeta": ph.zeta, "p_windows": ph.p_windows,
            "achieved_rank": ph.achieved_rank, "updated": ph.updated,
            "iterations": len(ph.iterates),
            "final_residual": (ph.iterates[-1].residual if ph.iterates else None),
            "data_mode": data_mode,
        }
        if oracle is not None and ph.updated:
            Kstar = oracle[data_mode][1]
            row["gain_error_vs_oracle"] = float(
                np.linalg.norm(ph.K_after - Kstar) / np.linalg.norm(Kstar))
        phase_rows.append(row)

    y = y_learned
    h = log.step
    tail = max(1, round(2.0 / h))
    report = {
        "scenario": scenario.name,
        "seed": int(noise.seed),
        "q": scenario.q,
        "m": scenario.m,
        "phases": phase_rows,
        "tracking": {
            "steady_output": float(np.mean(y[-tail:])),
            "output_reference": float(scenario.reference.x_d_ref[0]),
            "output_min": float(y.min()),
            "output_max": float(y.max()),
        },
        "dwell": dwell_report,
        "zeta_max_measured": max((ph.zeta for ph in result.phases), default=0.0),
        "runtime_seconds": time.perf_counter() - t_wall,
        "artifacts": {
            "trajectory_csv": "trajectory.csv",
            "trajectory_sha256": _sha256(out / "trajectory.csv"),
            "comparison_csv": "comparison.csv",
            "gain_history": "gain_history.json",
            "schedule": "schedule.json",
        },
    }
    _write_json(out / "report.json", report)
    return report


# --------------------------------------------------------------------------
# analysis
# --------------------------------------------------------------------------


def _load_artifacts(run_dir):
    run_dir = Path(run_dir)
    needed = ["trajectory.csv", "gain_history.json", "schedule.json"]
    missing = [nm for nm in needed if not (run_dir / nm).is_file()]
    if missing:
        raise MissingArtifactsError(f"missing artifacts in {run_dir}: {', '.join(missing)}")
    log = TrajectoryLog.from_csv(run_dir / "trajectory.csv")
    with open(run_dir / "gain_history.json", encoding="utf-8") as fh:
        gains = json.load(fh)
    with open(run_dir / "schedule.json", encoding="utf-8") as fh:
        schedule = json.load(fh)
    return log, gains, schedule


def _fit_envelope(ts, err):
    """Log-linear fit of the decreasing envelope of an error signal.

    Returns (c1_fit, alpha_fit): err_env(t) ~= c1 * exp(-alpha t) over the
    fitted span, using the running max from the right so isolated dips do
    not fake a fast rate.
    """
    env = np.maximum.accumulate(err[::-1])[::-1]
    mask = env > 0
    if mask.sum() < 2:
        return 0.0, 0.0
    A = np.vstack([ts[mask], np.ones(mask.sum())]).T
    coef, *_ = np.linalg.lstsq(A, np.log(env[mask]), rcond=None)
    return float(np.exp(coef[1])), float(-coef[0])


def analyze(scenario: Scenario, run_dir, slack=0.05) -> dict:
    """Oracle-side analysis of a finished run (requires true matrices)."""
    log, gains, schedule = _load_artifacts(run_dir)
    aug = augmented_modes(scenario)
    oracle = ln.oracle_solutions(aug, scenario.Q, scenario.R1_tilde)
    h = log.step
    ts = log.t

    # per-phase gain error against the mode active when the batch closed
    gain_errors = []
    for ph in gains["phases"]:
        if not ph["updated"]:
            continue
        data_mode = int(log.mode[log.index_of(ph["t_end"])])
        Kstar = oracle[data_mode][1]
        K_after = np.asarray(ph["K_after"], dtype=float)
        gain_errors.append({
            "phase": ph["index"],
            "t_end": ph["t_end"],
            "mode": data_mode,
            "rel_error": float(np.linalg.norm(K_after - Kstar) / np.linalg.norm(Kstar)),
        })

    # tracking error against the active oracle reference
    refs = {mid: oracle[mid][2] for mid in oracle}
    err = np.empty(len(ts))
    for i in range(len(ts)):
        err[i] = np.linalg.norm(log.xi[i] - refs[int(log.mode[i])])

    # effective dwell: first instant in each interval with a near-optimal gain
    switch_times = scenario.signal.switch_times()
    interval_edges = [0.0] + switch_times + [float(ts[-1])]
    seq = [scenario.signal.mode_at(t0 + 1e-9) for t0 in interval_edges[:-1]]
    s_times = {}
    gain_at = [(seg["t_start"], np.asarray(seg["gain"], dtype=float)) for seg in schedule]
    for j, (t0, t1) in enumerate(zip(interval_edges[:-1], interval_edges[1:])):
        Kstar = oracle[seq[j]][1]
        for t_seg, K_seg in gain_at:
            t_eff = max(t_seg, t0)
            if t_eff >= t1:
                continue
            nxt = [tv for tv, _ in gain_at if tv > t_seg]
            seg_end = min(nxt[0] if nxt else float(ts[-1]), t1)
            if seg_end <= t0:
                continue
            if np.linalg.norm(K_seg - Kstar) / np.linalg.norm(Kstar) < OPTIMAL_GAIN_RTOL:
                s_times[j] = t_eff
                break

    deltas = [interval_edges[j + 1] - s_times[j] for j in range(len(seq)) if j in s_times]
    contraction = None
    v_recursion = []
    if len(seq) > 1 and deltas:
        cc = ln.contraction_constants(oracle, seq, delta_min=min(deltas))
        bound = cc.c1 * np.exp(-cc.alpha * ts) * err[0] + cc.c2
        ratio = err / bound
        contraction = {
            "nu": cc.nu, "gamma_min": cc.gamma_min, "delta_min": cc.delta_min,
            "rho": cc.rho, "c1": cc.c1, "c2": cc.c2, "alpha": cc.alpha,
            "delta_r": cc.delta_r,
            "pointwise_ok": bool(np.all(ratio <= 1.0 + slack)),
            "worst_ratio": float(ratio.max()),
            "slack": slack,
        }
        for j, tj in enumerate(switch_times):
            i_switch = log.index_of(round(tj / h) * h)
            i_prev = log.index_of(round(interval_edges[j] / h) * h)
            P_prev = oracle[seq[j]][0]
            P_next = oracle[seq[j + 1]][0]
            e_prev = log.xi[i_prev] - refs[seq[j]]
            e_next = log.xi[i_switch] - refs[seq[j + 1]]
            V_prev = float(e_prev @ P_prev @ e_prev)
            V_next = float(e_next @ P_next @ e_next)
            c_r = 2.0 * float(np.linalg.eigvalsh(P_next).max()) * float(
                np.linalg.norm(refs[seq[j]] - refs[seq[j + 1]])) ** 2
            rhs = cc.rho * V_prev + c_r
            v_recursion.append({
                "t_switch": float(tj), "V_next": V_next, "V_prev": V_prev,
                "c_r": c_r, "bound": rhs, "ok": bool(V_next <= (1.0 + slack) * rhs),
            })

    # After the final switch the trajectory must contract onto its
    # own limit (the learned-gain equilibrium; its offset from the oracle
    # reference is reported separately as equilibrium_bias).  Without any
    # switch the whole run is the "final" interval.
    tJ = switch_times[-1] if switch_times else 0.0
    iJ = log.index_of(round(tJ / h) * h)
    tail = max(1, round(1.0 / h))
    xi_inf = log.xi[-tail:].mean(axis=0)
    e_own = np.linalg.norm(log.xi - xi_inf, axis=1)
    start = s_times.get(len(seq) - 1)
    alpha_fit = 0.0
    if start is not None:
        i0 = log.index_of(round(start / h) * h)
        _, alpha_fit = _fit_envelope(ts[i0:-tail] - ts[i0], e_own[i0:-tail])
    final_convergence = {
        "t_J": float(tJ),
        "error_at_tJ": float(e_own[iJ]),
        "terminal_error": float(e_own[-1]),
        "terminal_ratio": float(e_own[-1] / e_own[iJ]) if e_own[iJ] > 0 else 0.0,
        "alpha_fitted": alpha_fit,
        "equilibrium_bias": float(np.linalg.norm(xi_inf - refs[seq[-1]])),
    }

    c1_env, alpha_env = _fit_envelope(ts, err)

    mixed = []
    for j in range(len(seq) - 1):
        prev_mid, next_mid = seq[j], seq[j + 1]
        gamma_j = oracle[prev_mid][3]
        K_hat = None
        for ge in gain_errors:
            if ge["t_end"] > switch_times[j]:
                for ph in gains["phases"]:
                    if ph["index"] == ge["phase"]:
                        K_hat = np.asarray(ph["K_after"], dtype=float)
                break
        rep = ln.mixed_mode_safety_check(
            oracle[prev_mid][1], aug[prev_mid], aug[next_mid],
            rho_j=float(np.linalg.norm(
                (aug[next_mid].A_aug - aug[prev_mid].A_aug)
                - (aug[next_mid].B_aug - aug[prev_mid].B_aug) @ oracle[prev_mid][1], 2)),
            gamma_j=gamma_j, b_bar=float(np.linalg.norm(aug[next_mid].B_aug, 2)),
            K_hat_next=K_hat)
        mixed.append({"from_mode": prev_mid, "to_mode": next_mid,
                      **dataclasses.asdict(rep)})

    analysis = {
        "scenario": scenario.name,
        "gain_errors": gain_errors,
        "contraction_bound": contraction,
        "v_recursion": v_recursion,
        "final_convergence": final_convergence,
        "fitted_envelope": {"c1": c1_env, "alpha": alpha_env},
        "mixed_mode": mixed,
        "oracle_gains": {str(mid): oracle[mid][1] for mid in oracle},
        "oracle_references": {str(mid): oracle[mid][2] for mid in oracle},
    }
    _write_json(Path(run_dir) / "analysis.json", analysis)
    return analysis

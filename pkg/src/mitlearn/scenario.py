"""Scenario files: TOML ingestion, validation, and bundled examples.

A scenario pins everything a run needs: plant modes (raw matrices or
game-synthesis inputs), the output reference, the switching signal, solver
weights, learner timing, and the exploration noise.  Validation gathers
every violated invariant before failing.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import OutputReference
from .errors import ScenarioParseError, ScenarioValidationError
from .game import (
    InsiderObjective,
    PlantMode,
    SwitchingSignal,
    TeamGameSpec,
    build_plant_mode,
    insider_best_response,
    team_optimal_solution,
)
from .learner import LearnerConfig
from .simulate import ExplorationNoise, SimConfig


@dataclass(frozen=True)
class Scenario:
    """Fully validated experiment description."""

    name: str
    n: int
    s: int
    m: int
    modes: dict
    reference: OutputReference
    signal: SwitchingSignal
    sim: SimConfig
    learner: LearnerConfig
    noise: ExplorationNoise
    Q: np.ndarray
    R1_tilde: np.ndarray
    nominal: PlantMode
    x_phys0: np.ndarray
    integrator_init: object  # "nominal" or an s-vector
    comparison_cooperative: tuple | None  # (K_raw, bias)
    oracle_enabled: bool
    strict_dwell: bool = False

    @property
    def q(self):
        return self.n + self.s


def _matrix(value, what, problems, rows=None, cols=None):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        problems.append(f"{what}: not a numeric matrix")
        return None
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        problems.append(f"{what}: expected a matrix (list of rows)")
        return None
    if rows is not None and M.shape[0] != rows:
        problems.append(f"{what}: expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        problems.append(f"{what}: expected {cols} columns, got {M.shape[1]}")
    return M


def _vector(value, what, problems, size=None):
    try:
        v = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        problems.append(f"{what}: not a numeric vector")
        return None
    if size is not None and v.size != size:
        problems.append(f"{what}: expected {size} entries, got {v.size}")
    return v


def _weight(value, dim, what, problems):
    if value in ("identity", None):
        return np.eye(dim)
    M = _matrix(value, what, problems, rows=dim, cols=dim)
    if M is None:
        return np.eye(dim)
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(M).max(initial=1.0)):
        problems.append(f"{what}: must be symmetric")
        return np.eye(dim)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        problems.append(f"{what}: must be positive definite")
    return M


def _synthesize_modes(game_tbl, mode_tbls):
    """Game-spec construction path for modes carrying an [mode.N.objective]."""
    spec = TeamGameSpec(
        A=game_tbl["A"], B1=game_tbl["B1"], B2=game_tbl["B2"],
        Qc=game_tbl["Qc"], R1=game_tbl["R1"], R2=game_tbl["R2"],
        x_c_ref=game_tbl["x_c_ref"],
    )
    team = team_optimal_solution(spec)
    modes = {}
    for mid, tbl in mode_tbls.items():
        label = tbl.get("label", "cooperative")
        if "objective" in tbl:
            o = tbl["objective"]
            obj = InsiderObjective(
                Qa=o["Qa"], R2_tilde=o["R2_tilde"],
                rho_discipline=o["rho"], x_a_ref=o["x_a_ref"])
            resp = insider_best_response(spec, obj, team.K1, team.K2)
            modes[mid] = build_plant_mode(spec, resp.K2, resp.k2, mid, label)
        else:
            # cooperative insider: plays its share of the team policy
            modes[mid] = build_plant_mode(spec, team.K2, team.k2, mid, label)
    return modes


def load_scenario(path, strict_dwell=False) -> Scenario:
    """Parse and validate a scenario file.

    Raises :class:`ScenarioParseError` on malformed TOML (message carries
    the line/column) and :class:`ScenarioValidationError` listing every
    violated invariant otherwise.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return build_scenario(doc, name=doc.get("name", path.stem), strict_dwell=strict_dwell)


def build_scenario(doc: dict, name=None, strict_dwell=False) -> Scenario:
    problems: list[str] = []

    dims = doc.get("dimensions", {})
    n = int(dims.get("n", 0))
    s = int(dims.get("s", 0))
    m = int(dims.get("m", 0))
    if n < 1 or s < 1 or m < 1:
        problems.append(f"[dimensions] must give n, s, m >= 1 (got n={n}, s={s}, m={m})")
        raise ScenarioValidationError(problems)
    q = n + s

    plant = doc.get("plant", {})
    B1_default = None
    if "B1" in plant:
        B1_default = _matrix(plant["B1"], "[plant].B1", problems, rows=n, cols=m)

    mode_tbls = {}
    for key, tbl in doc.get("mode", {}).items():
        try:
            mid = int(key)
        except ValueError:
            problems.append(f"[mode.{key}]: mode ids must be integers")
            continue
        mode_tbls[mid] = tbl
    if not mode_tbls:
        problems.append("no [mode.N] sections found")
        raise ScenarioValidationError(problems)

    modes = {}
    if "game" in doc:
        try:
            modes = _synthesize_modes(dict(doc["game"]), mode_tbls)
        except Exception as exc:  # noqa: BLE001 - collected into the report
            problems.append(f"[game] synthesis failed: {exc}")
    else:
        for mid, tbl in sorted(mode_tbls.items()):
            A = _matrix(tbl.get("A"), f"[mode.{mid}].A", problems, rows=n, cols=n)
            d = _vector(tbl.get("d"), f"[mode.{mid}].d", problems, size=n)
            B1 = B1_default
            if "B1" in tbl:
                B1 = _matrix(tbl["B1"], f"[mode.{mid}].B1", problems, rows=n, cols=m)
            if B1 is None:
                problems.append(f"[mode.{mid}]: no B1 given and no [plant].B1 default")
            if A is None or d is None or B1 is None:
                continue
            try:
                modes[mid] = PlantMode(mode_id=mid, A_sigma=A, B1=B1, d_sigma=d,
                                       label=tbl.get("label", "cooperative"))
            except Exception as exc:  # noqa: BLE001
                problems.append(f"[mode.{mid}]: {exc}")

    ref_tbl = doc.get("reference", {})
    reference = None
    C = _matrix(ref_tbl.get("C"), "[reference].C", problems, rows=s, cols=n)
    x_d = _vector(ref_tbl.get("x_d_ref"), "[reference].x_d_ref", problems, size=s)
    E = None
    if "E" in ref_tbl:
        E = _matrix(ref_tbl["E"], "[reference].E", problems, rows=n, cols=s)
    if C is not None and x_d is not None:
        try:
            reference = OutputReference(C=C, x_d_ref=x_d, E=E)
        except Exception as exc:  # noqa: BLE001
            problems.append(f"[reference]: {exc}")

    sw = doc.get("switching", {})
    signal = None
    events = sw.get("events")
    if not events:
        problems.append("[switching].events missing")
    else:
        for ev in events:
            if len(ev) == 2 and int(ev[1]) not in modes and not problems:
                problems.append(f"[switching]: event references unknown mode {int(ev[1])}")
        try:
            signal = SwitchingSignal(
                events=tuple((float(t), int(mid)) for t, mid in events),
                dwell_min=float(sw.get("dwell_min", 1.0)))
        except ScenarioValidationError as exc:
            problems.extend(exc.problems)
        except (TypeError, ValueError) as exc:
            problems.append(f"[switching]: {exc}")

    sim_tbl = doc.get("sim", {})
    step = float(sim_tbl.get("step", 0.001))
    t_end = float(sim_tbl.get("t_end", 10.0))
    warm = float(sim_tbl.get("warm_start", 0.2))
    x_phys0 = _vector(sim_tbl.get("initial_state"), "[sim].initial_state", problems, size=n)
    integ_init = sim_tbl.get("integrator_init", "nominal")
    if integ_init != "nominal":
        integ_init = _vector(integ_init, "[sim].integrator_init", problems, size=s)
    sim = SimConfig(step=step, t_end=t_end, initial_state=None, warm_start=warm,
                    blowup=float(sim_tbl.get("blowup", 1e9)))

    w_tbl = doc.get("weights", {})
    Q = _weight(w_tbl.get("Q", "identity"), q, "[weights].Q", problems)
    R1t = _weight(w_tbl.get("R1_tilde", "identity"), m, "[weights].R1_tilde", problems)

    l_tbl = doc.get("learner", {})
    learner = LearnerConfig(
        tau=float(l_tbl.get("tau", 0.1)),
        delta_tau=float(l_tbl.get("delta_tau", 0.02)),
        eps=float(l_tbl.get("eps", 1e-6)),
        max_policy_iters=int(l_tbl.get("max_policy_iters", 50)),
        inter_learning_interval=float(l_tbl.get("inter_learning_interval", 10.0)),
        rank_tol=float(l_tbl.get("rank_tol", 1e-8)),
        p_min=int(l_tbl.get("p_min", 0)),
        p_max=int(l_tbl.get("p_max", 100)),
        learn_until=(float(l_tbl["learn_until"]) if "learn_until" in l_tbl else None),
        quadrature=str(l_tbl.get("quadrature", "simpson")),
    )

    n_tbl = doc.get("noise", {})
    noise = ExplorationNoise(
        num_terms=int(n_tbl.get("num_terms", 100)),
        freq_low=float(n_tbl.get("freq_low", -50.0)),
        freq_high=float(n_tbl.get("freq_high", 50.0)),
        amplitude=float(n_tbl.get("amplitude", 1.0)),
        seed=int(n_tbl.get("seed", 0)),
    )

    nominal = None
    nom_tbl = doc.get("nominal", {})
    if "mode" in nom_tbl:
        mid = int(nom_tbl["mode"])
        if mid in modes:
            nominal = modes[mid]
        else:
            problems.append(f"[nominal].mode references unknown mode {mid}")
    elif nom_tbl:
        A = _matrix(nom_tbl.get("A"), "[nominal].A", problems, rows=n, cols=n)
        d = _vector(nom_tbl.get("d"), "[nominal].d", problems, size=n)
        B1 = B1_default
        if "B1" in nom_tbl:
            B1 = _matrix(nom_tbl["B1"], "[nominal].B1", problems, rows=n, cols=m)
        if A is not None and d is not None and B1 is not None:
            nominal = PlantMode(mode_id=0, A_sigma=A, B1=B1, d_sigma=d, label="cooperative")
    else:
        problems.append("[nominal] section missing (the DM's known cooperative model)")

    comparison = None
    cmp_tbl = doc.get("comparison", {}).get("cooperative")
    if cmp_tbl:
        Kc = _matrix(cmp_tbl.get("K"), "[comparison.cooperative].K", problems, rows=m, cols=n)
        bc = _vector(cmp_tbl.get("bias", [0.0] * m), "[comparison.cooperative].bias",
                     problems, size=m)
        if Kc is not None and bc is not None:
            comparison = (Kc, bc)

    # timing coherence
    for interval, label in ((learner.tau, "tau"), (learner.delta_tau, "delta_tau"),
                            (warm, "warm_start")):
        k = interval / step
        if abs(k - round(k)) > 1e-9:
            problems.append(f"{label}={interval} is not an integer multiple of step={step}")
    if learner.quadrature == "simpson" and round(learner.delta_tau / step) % 2 == 1:
        problems.append("delta_tau must span an even number of steps for simpson quadrature")
    if warm + 1e-12 < learner.tau:
        problems.append(f"warm_start={warm} must be at least tau={learner.tau}")
    if t_end <= 0:
        problems.append(f"t_end must be positive, got {t_end}")
    req = q * (q + 1) // 2 + m * q
    if learner.p_min and learner.p_min < req:
        problems.append(f"p_min={learner.p_min} below the rank minimum {req}")

    if problems:
        raise ScenarioValidationError(problems)

    return Scenario(
        name=name or "scenario", n=n, s=s, m=m, modes=modes, reference=reference,
        signal=signal, sim=sim, learner=learner, noise=noise, Q=Q, R1_tilde=R1t,
        nominal=nominal, x_phys0=x_phys0, integrator_init=integ_init,
        comparison_cooperative=comparison,
        oracle_enabled=bool(doc.get("oracle", {}).get("enabled", True)),
        strict_dwell=strict_dwell,
    )


def bundled_scenario_names():
    pkg = resources.files("mitlearn") / "scenarios"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".toml"))


def bundled_scenario_path(name) -> Path:
    pkg = resources.files("mitlearn") / "scenarios"
    p = pkg / f"{name}.toml"
    if not p.is_file():
        raise ScenarioParseError(
            f"no bundled scenario {name!r}; available: {', '.join(bundled_scenario_names())}")
    return Path(str(p))

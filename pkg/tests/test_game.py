import math

import numpy as np
import pytest

from mitlearn.errors import DimensionMismatchError, ScenarioValidationError
from mitlearn.game import (
    InsiderObjective,
    PlantMode,
    SwitchingSignal,
    TeamGameSpec,
    build_plant_mode,
    insider_are_residual,
    insider_best_response,
    team_optimal_solution,
)
from mitlearn.linalg import care_hamiltonian, is_hurwitz
from mitlearn.simulate import GainSchedule, LinearMode, SimConfig, simulate


def scalar_spec(x_ref=0.0):
    return TeamGameSpec(A=[[0.0]], B1=[[1.0]], B2=[[1.0]], Qc=[[1.0]],
                        R1=[[1.0]], R2=[[1.0]], x_c_ref=[x_ref])


def double_integrator_spec():
    return TeamGameSpec(
        A=[[0.0, 1.0], [0.0, 0.0]], B1=[[0.0], [1.0]], B2=[[0.0], [1.0]],
        Qc=np.eye(2), R1=[[1.0]], R2=[[1.0]], x_c_ref=[0.0, 0.0])


# ------------------------------------------------------------- team optimum


def test_team_solution_scalar_closed_form():
    # joint ARE 1 - 2 P^2 = 0 on the scalar game
    sol = team_optimal_solution(scalar_spec())
    assert sol.P_star[0, 0] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-9)
    assert sol.K1[0, 0] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-9)
    assert sol.K2[0, 0] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-9)
    assert sol.k1[0] == 0.0 and sol.k2[0] == 0.0


def test_team_solution_zero_reference_means_zero_bias():
    sol = team_optimal_solution(double_integrator_spec())
    np.testing.assert_array_equal(sol.k1, [0.0])
    np.testing.assert_array_equal(sol.k2, [0.0])


def test_team_solution_against_care_oracle():
    spec = double_integrator_spec()
    sol = team_optimal_solution(spec)
    B = np.hstack([spec.B1, spec.B2])
    P_ref = care_hamiltonian(spec.A, B, spec.Qc, np.eye(2))
    assert np.linalg.norm(sol.P_star - P_ref) / np.linalg.norm(P_ref) < 1e-6
    # closed loop Hurwitz and the gain identities hold as written
    Acl = spec.A - spec.B1 @ sol.K1 - spec.B2 @ sol.K2
    assert is_hurwitz(Acl)
    np.testing.assert_allclose(sol.K1, np.linalg.solve(spec.R1, spec.B1.T @ sol.P_star),
                               atol=1e-12)
    resid = (spec.A.T @ sol.P_star + sol.P_star @ spec.A + spec.Qc
             - sol.P_star @ B @ B.T @ sol.P_star)
    assert np.linalg.norm(resid, "fro") < 1e-8


def _quadrature_cost(k1, k2, x0=1.0, horizon=20.0, step=0.002):
    """Independent cost oracle: simulate and integrate the stage cost."""
    mode = LinearMode(mode_id=0, A=np.array([[0.0]]),
                      B=np.array([[1.0, 1.0]]), d=np.zeros(1))
    K = np.array([[k1], [k2]])
    sig = SwitchingSignal(events=((0.0, 0),), dwell_min=horizon)
    cfg = SimConfig(step=step, t_end=horizon, initial_state=[x0])
    log = simulate({0: mode}, sig, GainSchedule.constant(K), cfg)
    stage = log.xi[:, 0] ** 2 + log.u[:, 0] ** 2 + log.u[:, 1] ** 2
    return float(np.trapezoid(stage, dx=step))


def test_team_solution_beats_perturbed_policies():
    # no unilateral or joint deviation among sampled stabilizing pairs
    # improves the quadrature cost
    sol = team_optimal_solution(scalar_spec())
    k_opt = sol.K1[0, 0]
    best = _quadrature_cost(k_opt, k_opt)
    assert best == pytest.approx(sol.P_star[0, 0], rel=1e-3)
    rng = np.random.default_rng(21)
    tried = 0
    while tried < 20:
        k1 = k_opt + rng.uniform(-0.3, 0.3)
        k2 = k_opt + rng.uniform(-0.3, 0.3)
        if -(k1 + k2) >= -1e-3:  # keep only stabilizing pairs
            continue
        tried += 1
        assert _quadrature_cost(k1, k2) >= best - 1e-9


# ----------------------------------------------------------- best response


def test_large_discipline_recovers_cooperative_policy():
    spec = double_integrator_spec()
    sol = team_optimal_solution(spec)
    obj = InsiderObjective(Qa=spec.Qc, R2_tilde=[[1.0]], rho_discipline=1e8,
                           x_a_ref=[0.0, 0.0])
    resp = insider_best_response(spec, obj, sol.K1, sol.K2)
    assert np.linalg.norm(resp.K2 - sol.K2) / np.linalg.norm(sol.K2) < 1e-3


def test_insider_response_scalar_against_direct_are_roots():
    spec = scalar_spec()
    sol = team_optimal_solution(spec)
    rho = 1.0
    obj = InsiderObjective(Qa=[[1.0]], R2_tilde=[[1.0]], rho_discipline=rho,
                           x_a_ref=[0.0])
    resp = insider_best_response(spec, obj, sol.K1, sol.K2)
    # brute-force root of the scalar cross-term ARE:
    # 2 a0 p + qa + rho k2*^2 - (p + rho k2*)^2 / (r2t + rho) = 0
    a0 = -sol.K1[0, 0]
    k2s = sol.K2[0, 0]
    rbar = 1.0 + rho
    coeffs = [-1.0 / rbar,
              2.0 * a0 - 2.0 * rho * k2s / rbar,
              1.0 + rho * k2s ** 2 - (rho * k2s) ** 2 / rbar]
    roots = np.roots(coeffs)
    stable = [p for p in roots.real
              if a0 - (p + rho * k2s) / rbar < 0 and abs(p.imag if hasattr(p, "imag") else 0) < 1e-12]
    p_direct = max(stable)
    assert resp.P2[0, 0] == pytest.approx(p_direct, abs=1e-8)
    k_direct = (p_direct + rho * k2s) / rbar
    assert resp.K2[0, 0] == pytest.approx(k_direct, abs=1e-8)


def test_insider_response_zero_reference_zero_bias():
    spec = double_integrator_spec()
    sol = team_optimal_solution(spec)
    obj = InsiderObjective(Qa=np.eye(2), R2_tilde=[[1.0]], rho_discipline=2.0,
                           x_a_ref=[0.0, 0.0])
    resp = insider_best_response(spec, obj, sol.K1, sol.K2)
    np.testing.assert_array_equal(resp.k2, [0.0])


def test_insider_response_satisfies_displayed_are_and_gain_formula():
    spec = double_integrator_spec()
    sol = team_optimal_solution(spec)
    rho = 0.7
    obj = InsiderObjective(Qa=np.diag([2.0, 1.0]), R2_tilde=[[0.5]],
                           rho_discipline=rho, x_a_ref=[1.0, 0.0])
    resp = insider_best_response(spec, obj, sol.K1, sol.K2)
    assert insider_are_residual(spec, obj, sol.K1, sol.K2, resp.P2) < 1e-8
    Rbar = obj.R2_tilde + rho * np.eye(1)
    K_expected = np.linalg.solve(Rbar, spec.B2.T @ resp.P2 + rho * sol.K2)
    np.testing.assert_allclose(resp.K2, K_expected, atol=1e-12)
    np.testing.assert_allclose(resp.k2, -(resp.K2 @ obj.x_a_ref), atol=1e-12)
    # the response stabilizes the shifted plant
    assert is_hurwitz(spec.A - spec.B1 @ sol.K1 - spec.B2 @ resp.K2)


# --------------------------------------------------------------- plant mode


def test_build_plant_mode_passthrough_when_insider_idle():
    spec = double_integrator_spec()
    mode = build_plant_mode(spec, np.zeros((1, 2)), np.zeros(1), 1, "cooperative")
    np.testing.assert_array_equal(mode.A_sigma, spec.A)
    np.testing.assert_array_equal(mode.d_sigma, np.zeros(2))


def test_build_plant_mode_sign_convention():
    spec = double_integrator_spec()
    K2 = np.array([[0.3, 0.1]])
    k2 = np.array([2.0])
    mode = build_plant_mode(spec, K2, k2, 2, "selfish")
    np.testing.assert_allclose(mode.A_sigma, spec.A - spec.B2 @ K2)
    np.testing.assert_allclose(mode.d_sigma, -(spec.B2 @ k2))


def test_plant_mode_dimension_guard():
    with pytest.raises(DimensionMismatchError):
        PlantMode(mode_id=1, A_sigma=np.eye(3), B1=np.ones((2, 1)),
                  d_sigma=np.zeros(3))


# ---------------------------------------------------------------- switching


def test_switching_signal_mode_lookup():
    sig = SwitchingSignal(events=((0.0, 1), (24.0, 2), (48.0, 3)), dwell_min=24.0)
    assert sig.mode_at(0.0) == 1
    assert sig.mode_at(23.999) == 1
    assert sig.mode_at(24.0) == 2
    assert sig.mode_at(100.0) == 3
    assert sig.switch_times() == [24.0, 48.0]


def test_switching_signal_rejects_out_of_order_events():
    with pytest.raises(ScenarioValidationError) as err:
        SwitchingSignal(events=((0.0, 1), (30.0, 2), (24.0, 3)), dwell_min=1.0)
    assert any("out of order" in p and "t=30" in p and "t=24" in p
               for p in err.value.problems)


def test_switching_signal_rejects_dwell_violation():
    with pytest.raises(ScenarioValidationError) as err:
        SwitchingSignal(events=((0.0, 1), (10.0, 2)), dwell_min=24.0)
    assert any("dwell" in p for p in err.value.problems)


def test_switching_signal_requires_time_origin():
    with pytest.raises(ScenarioValidationError):
        SwitchingSignal(events=((5.0, 1),), dwell_min=1.0)

import math

import numpy as np
import pytest

from llgfem import fem
from llgfem.integrators import (
    FixedPointError,
    MidpointConfig,
    Problem,
    SimulationError,
    SolverConfig,
    bdf2_step,
    evaluate_interpolant,
    initial_step,
    midpoint_step,
    run_simulation,
    tps_step,
)
from llgfem.linsolve import LinearSolveConfig
from llgfem.mesh import build_structured_mesh
from llgfem.problems import blowup_problem, radial_field_problem

from oracles import UNIT_SQUARE, nodal_modulus_sq


@pytest.fixture(scope="module")
def radial_run():
    """Radial problem, 64-triangle mesh, tau = 1e-2, T = 0.3 (BDF2 and TPS)."""
    mesh = build_structured_mesh(UNIT_SQUARE, 2, "crisscross")
    problem = Problem.from_benchmark(radial_field_problem(), mesh)
    out = {}
    for scheme in ("BDF2", "TPS"):
        cfg = SolverConfig(alpha=0.25, lambda_sq=0.01, T=0.3, N=30, scheme=scheme)
        out[scheme] = run_simulation(problem, cfg)
    return out


def _equilibrium(level=1, scheme="BDF2", N=4):
    mesh = build_structured_mesh(UNIT_SQUARE, level)
    m0 = np.tile([0.0, 0.0, 1.0], (mesh.n_vertices, 1))
    cfg = SolverConfig(alpha=0.5, lambda_sq=1.0, T=0.4, N=N, scheme=scheme)
    return mesh, m0, cfg


# --------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": 0.0},
        {"lambda_sq": -1.0},
        {"T": 0.0},
        {"N": 0},
        {"N": 2.5},
        {"N": 1, "scheme": "BDF2"},
        {"scheme": "RK4"},
        {"tps_field": "previous"},
    ],
)
def test_solver_config_validation(kwargs):
    base = dict(alpha=0.25, lambda_sq=1.0, T=1.0, N=4)
    base.update(kwargs)
    with pytest.raises(ValueError):
        SolverConfig(**base)


def test_tau_and_for_problem():
    cfg = SolverConfig.for_problem(blowup_problem(), 30, scheme="TPS")
    assert cfg.tau == pytest.approx(0.01)
    assert (cfg.alpha, cfg.lambda_sq, cfg.T) == (0.25, 1.0, 0.3)


def test_problem_normalizes_initial_datum():
    mesh = build_structured_mesh(UNIT_SQUARE, 1)
    prob = Problem(mesh, lambda p: np.tile([0.0, 3.0, 4.0], (len(p), 1)))
    np.testing.assert_allclose(prob.m0, np.tile([0.0, 0.6, 0.8], (mesh.n_vertices, 1)), atol=1e-15)
    assert np.abs(np.linalg.norm(prob.m0, axis=1) - 1).max() <= 1e-12
    np.testing.assert_array_equal(prob.field_at(0.3), 0.0)


# ---------------------------------------------------------- equilibrium


def test_initial_step_equilibrium():
    mesh, m0, cfg = _equilibrium()
    v0, m1 = initial_step(mesh, m0, np.zeros_like(m0), cfg)
    np.testing.assert_array_equal(v0, 0.0)
    np.testing.assert_array_equal(m1, m0)


def test_bdf2_step_equilibrium_continuation():
    mesh, m0, cfg = _equilibrium()
    v, m2 = bdf2_step(mesh, m0, m0, np.zeros_like(m0), cfg)
    np.testing.assert_array_equal(v, 0.0)
    np.testing.assert_allclose(m2, m0, atol=1e-15)


def test_tps_step_equilibrium():
    mesh, m0, cfg = _equilibrium(scheme="TPS")
    v, m1 = tps_step(mesh, m0, np.zeros_like(m0), cfg)
    np.testing.assert_array_equal(v, 0.0)
    np.testing.assert_array_equal(m1, m0)


def test_midpoint_step_equilibrium_one_sweep():
    mesh, m0, cfg = _equilibrium(scheme="MID")
    m1, iters = midpoint_step(mesh, m0, np.zeros_like(m0), cfg)
    assert iters == 1
    np.testing.assert_allclose(m1, m0, atol=1e-15)


def test_tps_single_step_equilibrium_trajectory():
    mesh, m0, _ = _equilibrium()
    cfg = SolverConfig(alpha=0.5, lambda_sq=1.0, T=0.1, N=1, scheme="TPS")
    traj = run_simulation(Problem(mesh, m0), cfg)
    assert np.array_equal(traj.state(0), traj.state(1))


def test_equilibrium_observables_vanish():
    mesh, m0, cfg = _equilibrium(N=5)
    traj = run_simulation(Problem(mesh, m0), cfg)
    s = traj.summary()
    assert s["eta0"] == 0.0 and s["eta_n"] == 0.0 and s["cfl_C"] == 0.0
    assert s["max_energy_identity_residual"] == 0.0
    assert all(r["energy"] == 0.0 for r in traj.records)


# ---------------------------------------------------- BDF2 identities


def test_bdf2_update_is_exact(radial_run):
    traj = radial_run["BDF2"]
    tau = traj.tau
    for j in range(1, traj.N):
        expected = (4.0 / 3.0) * traj.state(j) - (1.0 / 3.0) * traj.state(j - 1) + (2.0 / 3.0) * tau * traj.velocity(j)
        assert np.array_equal(traj.state(j + 1), expected)
    assert np.array_equal(traj.state(1), traj.state(0) + tau * traj.velocity(0))


def test_difference_quotient_identities(radial_run):
    traj = radial_run["BDF2"]
    tau = traj.tau
    scale = max(np.abs(traj.state(j)).max() for j in range(traj.N + 1)) / tau
    dt = [None] + [(traj.state(j) - traj.state(j - 1)) / tau for j in range(1, traj.N + 1)]
    assert np.abs(traj.velocity(0) - dt[1]).max() <= 1e-13 * scale
    for j in range(1, traj.N):
        res = np.abs(2 * traj.velocity(j) - 3 * dt[j + 1] + dt[j]).max()
        assert res <= 1e-13 * scale


def test_velocity_in_predictor_tangent_space(radial_run):
    traj = radial_run["BDF2"]
    for j in range(traj.N):
        anchor = traj.predictor(j + 1)
        v = traj.velocity(j)
        dots = np.abs(np.sum(v * anchor, axis=1)).max()
        assert dots <= 1e-12 * max(1e-300, (np.linalg.norm(v, axis=1) * np.linalg.norm(anchor, axis=1)).max())


def test_constraint_law_recomputed(radial_run):
    # |m^n|^2 - 1 = 3/2 (1 - 3^-n) tau^2 |v0|^2 + 3/2 tau^4 sum_{i=2}^n (1 - 3^-(n+1-i)) |d_t^2 m^i|^2
    traj = radial_run["BDF2"]
    tau = traj.tau
    v0 = nodal_modulus_sq(traj.velocity(0))
    d2 = {i: nodal_modulus_sq((traj.state(i) - 2 * traj.state(i - 1) + traj.state(i - 2)) / tau**2) for i in range(2, traj.N + 1)}
    worst = 0.0
    for n in range(1, traj.N + 1):
        rhs = 1.5 * (1 - 3.0**-n) * tau**2 * v0
        for i in range(2, n + 1):
            rhs = rhs + 1.5 * tau**4 * (1 - 3.0 ** -(n + 1 - i)) * d2[i]
        worst = max(worst, np.abs(nodal_modulus_sq(traj.state(n)) - 1 - rhs).max())
    assert worst <= 1e-10
    assert traj.summary()["max_constraint_law_residual"] <= 1e-10


def test_constraint_step_recursion(radial_run):
    traj = radial_run["BDF2"]
    tau = traj.tau
    for j in range(1, traj.N):
        lhs = 1.5 * nodal_modulus_sq(traj.state(j + 1)) - 2 * nodal_modulus_sq(traj.state(j)) + 0.5 * nodal_modulus_sq(traj.state(j - 1))
        d2 = traj.state(j + 1) - 2 * traj.state(j) + traj.state(j - 1)
        assert np.abs(lhs - 1.5 * nodal_modulus_sq(d2)).max() < 1e-12


@pytest.mark.parametrize("scheme", ["BDF2", "TPS"])
def test_nodal_modulus_nondecreasing(radial_run, scheme):
    traj = radial_run[scheme]
    prev = nodal_modulus_sq(traj.state(0))
    for j in range(1, traj.N + 1):
        cur = nodal_modulus_sq(traj.state(j))
        assert np.all(cur >= prev - 1e-14)
        assert np.sqrt(cur).min() >= 1 - 1e-12
        prev = cur


def test_first_step_energy_bound(radial_run):
    traj = radial_run["BDF2"]
    mesh, tau, lam, alpha = traj.mesh, traj.tau, traj.lambda_sq, traj.alpha
    M, K = fem.mass_matrix(mesh), fem.stiffness_matrix(mesh)

    def q(A, a):
        return float(np.sum(a * (A @ a)))

    v0 = traj.velocity(0)
    lhs = lam * q(K, traj.state(1)) + tau * alpha * q(M, v0) + tau**2 * lam * q(K, v0)
    rhs = lam * q(K, traj.state(0)) + tau / alpha * q(M, traj.rhs_field(0))
    assert lhs <= rhs


def test_energy_identity_online_and_recomputed(radial_run):
    from llgfem.observables import energy_identity_residual

    traj = radial_run["BDF2"]
    for n in (1, 2, traj.N // 2, traj.N):
        rec = traj.records[n]["energy_identity_residual"]
        again = energy_identity_residual(traj, n)
        assert abs(rec) <= 1e-8 and abs(again) <= 1e-8
        assert again == pytest.approx(rec, abs=1e-12)


def test_bound_validators_clean(radial_run):
    assert radial_run["BDF2"].monitor.bound_violations == []


# ----------------------------------------------------------------- TPS


def test_tps_pythagoras(radial_run):
    traj = radial_run["TPS"]
    tau = traj.tau
    for j in range(traj.N):
        lhs = nodal_modulus_sq(traj.state(j + 1))
        rhs = nodal_modulus_sq(traj.state(j)) + tau**2 * nodal_modulus_sq(traj.velocity(j))
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-14)
        assert np.array_equal(traj.state(j + 1), traj.state(j) + tau * traj.velocity(j))
    assert traj.summary()["max_tps_growth_residual"] <= 1e-14


def test_tps_energy_identity(radial_run):
    traj = radial_run["TPS"]
    assert max(abs(r["energy_identity_residual"]) for r in traj.records) <= 1e-8


def test_tps_field_flag_selects_sample_time():
    mesh = build_structured_mesh(UNIT_SQUARE, 1)
    prob = Problem(mesh, lambda p: np.tile([0.0, 1.0, 0.0], (len(p), 1)), lambda p, t: np.tile([t, 0.0, 0.0], (len(p), 1)))
    for flag, expected in (("next", 0.2), ("current", 0.1)):
        cfg = SolverConfig(alpha=1.0, lambda_sq=1.0, T=0.3, N=3, scheme="TPS", tps_field=flag)
        traj = run_simulation(prob, cfg)
        assert traj.rhs_field(1)[0, 0] == pytest.approx(expected)
        assert max(abs(r["energy_identity_residual"]) for r in traj.records) <= 1e-10


# ----------------------------------------------------------------- MID


def test_midpoint_conserves_nodal_modulus():
    bench = blowup_problem()
    mesh = build_structured_mesh(bench.domain, 2)
    cfg = SolverConfig.for_problem(bench, 10, T=0.01, scheme="MID")
    traj = run_simulation(Problem.from_benchmark(bench, mesh), cfg)
    for j in range(traj.N + 1):
        np.testing.assert_allclose(np.linalg.norm(traj.state(j), axis=1), 1.0, atol=1e-9)
    energies = [r["energy"] for r in traj.records]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert max(traj.fp_iterations) <= cfg.midpoint.fp_max_iterations


def test_midpoint_failure_raises():
    bench = blowup_problem()
    mesh = build_structured_mesh(bench.domain, 3)
    cfg = SolverConfig.for_problem(bench, 1, T=0.5, scheme="MID", midpoint=MidpointConfig(1e-10, 5))
    m0 = Problem.from_benchmark(bench, mesh).m0
    with pytest.raises(FixedPointError) as info:
        midpoint_step(mesh, m0, np.zeros_like(m0), cfg)
    assert info.value.iterations <= 5


# ------------------------------------------------------- run and errors


def test_simulation_error_carries_step():
    mesh = build_structured_mesh(UNIT_SQUARE, 2)
    prob = Problem.from_benchmark(radial_field_problem(), mesh)
    lin = LinearSolveConfig(method="iterative-krylov", max_iterations=1, restart=1, rel_tolerance=1e-14)
    cfg = SolverConfig(alpha=0.25, lambda_sq=0.01, T=0.1, N=4, linear=lin)
    with pytest.raises(SimulationError) as info:
        run_simulation(prob, cfg)
    assert info.value.step == 1


def test_degenerate_predictor_surfaces_as_simulation_error():
    mesh = build_structured_mesh(UNIT_SQUARE, 0)
    m = np.tile([0.0, 0.0, 1.0], (mesh.n_vertices, 1))
    cfg = SolverConfig(alpha=1.0, lambda_sq=1.0, T=1.0, N=2)
    from llgfem.tangent import DegenerateAnchorError

    # 2 m - m_prev vanishes when m_prev = 2 m
    with pytest.raises(DegenerateAnchorError):
        bdf2_step(mesh, 2 * m, m, np.zeros_like(m), cfg)


def test_keep_states_false_prunes():
    mesh = build_structured_mesh(UNIT_SQUARE, 1)
    prob = Problem.from_benchmark(radial_field_problem(), mesh)
    cfg = SolverConfig(alpha=0.25, lambda_sq=0.01, T=0.1, N=10)
    full = run_simulation(prob, cfg)
    lean = run_simulation(prob, cfg, keep_states=False)
    assert np.array_equal(full.final_state, lean.final_state)
    assert len(lean._states) <= 4
    with pytest.raises(KeyError):
        lean.state(3)
    assert len(lean.records) == cfg.N + 1
    assert [r["energy"] for r in lean.records] == [r["energy"] for r in full.records]


def test_callback_sees_every_step():
    mesh = build_structured_mesh(UNIT_SQUARE, 1)
    prob = Problem.from_benchmark(radial_field_problem(), mesh)
    seen = []
    run_simulation(prob, SolverConfig(alpha=0.25, lambda_sq=0.01, T=0.1, N=5), callback=lambda j, m, rec: seen.append(j))
    assert seen == [1, 2, 3, 4, 5]


def test_radial_energy_decays():
    # f constant in time: the discrete energy decreases on the 64-triangle mesh
    mesh = build_structured_mesh(UNIT_SQUARE, 2, "crisscross")
    prob = Problem.from_benchmark(radial_field_problem(), mesh)
    traj = run_simulation(prob, SolverConfig(alpha=0.25, lambda_sq=0.01, T=1.0, N=250), keep_states=False)
    e = [r["energy"] for r in traj.records]
    assert all(b <= a for a, b in zip(e, e[1:]))


def test_blowup_seminorm_interior_peak():
    bench = blowup_problem()
    mesh = build_structured_mesh(bench.domain, 4)
    N = int(round(bench.T / (mesh.h / 10)))
    traj = run_simulation(Problem.from_benchmark(bench, mesh), SolverConfig.for_problem(bench, N), keep_states=False)
    w = [r["w1inf_semi"] for r in traj.records]
    k = int(np.argmax(w))
    assert 0 < k < len(w) - 1
    assert w[k] > w[0] and w[k] > w[-1]


# ---------------------------------------------------------- interpolants


def test_interpolants(radial_run):
    traj = radial_run["BDF2"]
    tau = traj.tau
    for j in (0, 3, traj.N):
        assert np.array_equal(evaluate_interpolant(traj, "linear", j * tau), traj.state(j))
    mid = evaluate_interpolant(traj, "linear", 3.5 * tau)
    np.testing.assert_allclose(mid, 0.5 * (traj.state(3) + traj.state(4)), atol=1e-15)
    assert np.array_equal(evaluate_interpolant(traj, "hat_plus", 0.5 * tau), traj.state(0))
    assert np.array_equal(evaluate_interpolant(traj, "hat_plus", 0.0), traj.state(0))
    np.testing.assert_array_equal(evaluate_interpolant(traj, "hat_plus", 2.5 * tau), 2 * traj.state(2) - traj.state(1))
    assert np.array_equal(evaluate_interpolant(traj, "minus", 2.5 * tau), traj.state(2))
    assert np.array_equal(evaluate_interpolant(traj, "plus", 2.5 * tau), traj.state(3))
    assert np.array_equal(evaluate_interpolant(traj, "plus", traj.T), traj.state(traj.N))
    assert np.array_equal(evaluate_interpolant(traj, "v_minus", 2.5 * tau), traj.velocity(2))
    with pytest.raises(ValueError):
        evaluate_interpolant(traj, "linear", traj.T + 0.1)
    with pytest.raises(ValueError):
        evaluate_interpolant(traj, "linear", -0.1)
    with pytest.raises(ValueError):
        evaluate_interpolant(traj, "cubic", 0.0)


def test_times(radial_run):
    traj = radial_run["TPS"]
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(traj.T)
    assert len(traj.times) == traj.N + 1
    assert math.isnan(traj.records[0]["v_norm_sq"])

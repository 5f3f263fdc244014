"""Property-based checks of the structural invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llgfem import fem
from llgfem.experiments import time_grid
from llgfem.integrators import Problem, SolverConfig, run_simulation
from llgfem.mesh import build_structured_mesh
from llgfem.observables import eoc
from llgfem.problems import PROBLEMS, get_problem
from llgfem.tangent import build_tangent_frame, solve_in_tangent_space

from oracles import kkt_tangent_solve, monomial_integral

PROPS = settings(max_examples=40, deadline=None)
SLOW = settings(max_examples=12, deadline=None)

patterns = st.sampled_from(["diagonal", "crisscross"])
seeds = st.integers(0, 2**32 - 1)
lengths = st.floats(0.1, 10.0)


@st.composite
def squares(draw):
    x0 = draw(st.floats(-5, 5))
    y0 = draw(st.floats(-5, 5))
    side = draw(lengths)
    return (x0, y0), (x0 + side, y0 + side)


def _random_unit(rng, n):
    return fem.normalize_nodal(rng.standard_normal((n, 3)))


@PROPS
@given(squares(), st.integers(0, 3), patterns)
def test_mass_spd_and_partition_of_unity(domain, level, pattern):
    mesh = build_structured_mesh(domain, level, pattern)
    M = fem.mass_matrix(mesh).toarray()
    (x0, y0), (x1, y1) = domain
    area = (x1 - x0) * (y1 - y0)
    one = np.ones(mesh.n_vertices)
    assert one @ M @ one == pytest.approx(area, rel=1e-12)
    np.testing.assert_allclose(M, M.T, atol=1e-15 * area)
    assert np.linalg.eigvalsh(M).min() > 0
    K = fem.stiffness_matrix(mesh)
    assert np.abs(K @ one).max() < 1e-12 * max(1.0, abs(K).max())


@PROPS
@given(st.integers(0, 2), patterns, seeds)
def test_cross_form_is_skew(level, pattern, seed):
    mesh = build_structured_mesh(((0, 0), (1, 1)), level, pattern)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((mesh.n_vertices, 3))
    B = fem.assemble_cross_form(mesh, w).toarray()
    assert np.abs(B + B.T).max() <= 1e-15 * max(1.0, np.abs(B).max()) * 10
    u = rng.standard_normal(3 * mesh.n_vertices)
    assert abs(u @ B @ u) <= 1e-13 * max(1.0, np.abs(B).max()) * (u @ u)


@PROPS
@given(seeds, st.integers(1, 60), st.floats(1e-3, 1e3))
def test_tangent_frames_orthonormal(seed, n, scale):
    anchor = scale * np.random.default_rng(seed).standard_normal((n, 3))
    frame = build_tangent_frame(anchor)
    a = anchor / np.linalg.norm(anchor, axis=1)[:, None]
    Q = np.stack([a, frame.t1, frame.t2], axis=2)
    np.testing.assert_allclose(np.einsum("nij,nik->njk", Q, Q), np.broadcast_to(np.eye(3), Q.shape), atol=1e-14)


@SLOW
@given(st.integers(0, 1), patterns, seeds, st.floats(0.05, 2.0), st.floats(1e-4, 1.0))
def test_reduced_solve_matches_kkt(level, pattern, seed, alpha, c):
    mesh = build_structured_mesh(((0, 0), (1, 1)), level, pattern)
    rng = np.random.default_rng(seed)
    anchor = rng.standard_normal((mesh.n_vertices, 3))
    A = (
        alpha * fem.vector_operator(fem.mass_matrix(mesh))
        + fem.assemble_cross_form(mesh, anchor)
        + c * fem.vector_operator(fem.stiffness_matrix(mesh))
    ).tocsr()
    b = rng.standard_normal(3 * mesh.n_vertices)
    v = solve_in_tangent_space(build_tangent_frame(anchor), A, b)
    ref = kkt_tangent_solve(anchor, A.toarray(), b)
    assert np.abs(v - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


@PROPS
@given(st.sampled_from(["STRANG_FIX_4", "DUNAVANT_6", "CENTROID"]), st.data())
def test_quadrature_exact_up_to_degree(name, data):
    rule = getattr(fem, name)
    a = data.draw(st.integers(0, rule.degree))
    b = data.draw(st.integers(0, rule.degree - a))
    got = rule.integrate(lambda x, y: x**a * y**b)
    assert got == pytest.approx(monomial_integral(a, b), rel=1e-12, abs=1e-15)
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-12)


@PROPS
@given(st.floats(1e-8, 1e2), st.floats(-3, 5), st.floats(1.1, 8.0))
def test_eoc_recovers_power_law(e0, p, ratio):
    h = [1.0, 1.0 / ratio, 1.0 / ratio**2]
    errs = [e0 * x**p for x in h]
    assert eoc(list(zip(h, errs))) == pytest.approx([p, p], abs=1e-9)


@PROPS
@given(st.floats(1e-3, 10.0), st.floats(1e-3, 10.0))
def test_time_grid_invariants(T, tau):
    if tau > T:
        return
    n_fit, t_fit = time_grid(T, tau, "fit")
    assert t_fit == T and T / n_fit <= tau * (1 + 1e-9)
    assert n_fit == 1 or T / (n_fit - 1) > tau * (1 - 1e-9)
    n_tr, t_tr = time_grid(T, tau, "truncate")
    assert t_tr <= T * (1 + 1e-9) and t_tr + tau > T * (1 - 1e-9)
    n_nr, t_nr = time_grid(T, tau, "nearest")
    assert abs(t_nr - T) <= 0.5 * tau * (1 + 1e-8)
    assert n_tr <= n_nr <= n_fit


@PROPS
@given(st.sampled_from(sorted(PROBLEMS)), seeds)
def test_initial_data_unit_length(name, seed):
    bench = get_problem(name)
    (x0, y0), (x1, y1) = bench.domain
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(x0, x1, 500), rng.uniform(y0, y1, 500)])
    assert np.abs(np.linalg.norm(bench.m0(pts), axis=1) - 1.0).max() <= 1e-12


def _random_run(seed, scheme, N, level):
    rng = np.random.default_rng(seed)
    mesh = build_structured_mesh(((0, 0), (1, 1)), level, "crisscross")
    m0 = _random_unit(rng, mesh.n_vertices)
    h = rng.standard_normal(3)
    f = lambda p, t: np.tile(h, (len(p), 1))
    alpha = rng.uniform(0.1, 1.0)
    lam = 10.0 ** rng.uniform(-2, 0)
    tau = 10.0 ** rng.uniform(-3, -1.5)
    cfg = SolverConfig(alpha=alpha, lambda_sq=lam, T=N * tau, N=N, scheme=scheme)
    return run_simulation(Problem(mesh, m0, f, time_dependent=False), cfg)


@SLOW
@given(seeds, st.integers(1, 6), st.integers(0, 1))
def test_tps_pythagoras(seed, N, level):
    traj = _random_run(seed, "TPS", N, level)
    for j in range(N):
        m, v, m_next = traj.state(j), traj.velocity(j), traj.state(j + 1)
        assert np.abs(np.sum(m * v, axis=1)).max() <= 1e-12 * max(1.0, np.abs(v).max())
        growth = np.sum(m_next**2, axis=1) - np.sum(m**2, axis=1) - traj.tau**2 * np.sum(v * v, axis=1)
        assert np.abs(growth).max() <= 1e-12
        assert np.all(np.sum(m_next**2, axis=1) >= 1.0 - 1e-12)


@SLOW
@given(seeds, st.integers(2, 7), st.integers(0, 1))
def test_bdf2_constraint_law(seed, N, level):
    traj = _random_run(seed, "BDF2", N, level)
    tau = traj.tau
    v0 = traj.velocity(0)
    v0_sq = np.sum(v0 * v0, axis=1)
    # recursion: |m^{n+1}|^2 - 1 in terms of the second differences, evaluated from scratch
    for n in range(2, N + 1):
        m = [traj.state(j) for j in range(n + 1)]
        d2 = [m[j] - 2 * m[j - 1] + m[j - 2] for j in range(2, n + 1)]
        mhat = [2 * m[j - 1] - m[j - 2] for j in range(2, n + 1)]
        v = [(3 * m[j] - 4 * m[j - 1] + m[j - 2]) / (2 * tau) for j in range(2, n + 1)]
        for vj, aj in zip(v, mhat):
            assert np.abs(np.sum(vj * aj, axis=1)).max() <= 1e-9 * max(1.0, np.abs(vj).max())
        # orthogonality to the predictor gives 3 e_j - 4 e_{j-1} + e_{j-2} = 3 |d2_j|^2, e_j = |m^j|^2 - 1
        e = [np.sum(x**2, axis=1) - 1.0 for x in m]
        for j in range(2, n + 1):
            lhs = 3 * e[j] - 4 * e[j - 1] + e[j - 2]
            rhs = 3 * np.sum(d2[j - 2] ** 2, axis=1)
            assert np.abs(lhs - rhs).max() <= 1e-10
    assert traj.monitor.max_constraint_residual <= 1e-10
    assert not traj.monitor.bound_violations
    np.testing.assert_allclose(np.sum(traj.state(1) ** 2, axis=1) - 1.0, tau**2 * v0_sq, atol=1e-12)

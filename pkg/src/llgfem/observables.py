"""Energies, identity residuals, CFL indicators and convergence orders."""

from __future__ import annotations

import math

import numpy as np

from . import fem
from .mesh import Mesh

__all__ = [
    "BOUND_C1",
    "BOUND_C2",
    "BOUND_C3",
    "GAMMA_MINUS",
    "GAMMA_PLUS",
    "total_energy",
    "StepMonitor",
    "energy_identity_residual",
    "cfl_indicator",
    "regularity_diagnostics",
    "error_vs_reference",
    "prolong",
    "eoc",
]

BOUND_C1 = math.sqrt(1.0 / 5.0)
BOUND_C2 = math.sqrt(9.0 / 7.0)
BOUND_C3 = math.sqrt(18.0 / 7.0)
GAMMA_MINUS = (3.0 - 2.0 * math.sqrt(2.0)) / 4.0
GAMMA_PLUS = (3.0 + 2.0 * math.sqrt(2.0)) / 4.0


def _kq(K, a, b=None):
    b = a if b is None else b
    return float(np.sum(a * (K @ b)))


def total_energy(mesh: Mesh, m, f, lambda_sq: float) -> float:
    """Exchange plus Zeeman energy ``lambda_sq/2 |grad m|^2 - (f, m)``."""
    m = fem.check_field(mesh, m, "m")
    f = fem.check_field(mesh, f, "f")
    K = fem.stiffness_matrix(mesh)
    M = fem.mass_matrix(mesh)
    return 0.5 * lambda_sq * _kq(K, m) - _kq(M, f, m)


class StepMonitor:
    """Online bookkeeping of the observables and identities along a run.

    The monitor keeps running sums so that every identity can be checked at
    every step without storing the trajectory.
    """

    def __init__(self, mesh: Mesh, *, alpha, lambda_sq, tau, scheme, m0, f0):
        self.mesh = mesh
        self.alpha = alpha
        self.lambda_sq = lambda_sq
        self.tau = tau
        self.scheme = scheme
        self.M = fem.mass_matrix(mesh)
        self.K = fem.stiffness_matrix(mesh)
        self.grad_sq = [_kq(self.K, m0)]
        self.energy0 = total_energy(mesh, m0, f0, lambda_sq)
        self.scale = max(1.0, abs(self.energy0))
        self.sum_v = 0.0  # sum ||v^j||^2
        self.sum_gv = 0.0  # sum ||grad v^j||^2
        self.sum_v_from1 = 0.0
        self.sum_dt = 0.0  # sum ||d_t m^{j+1}||^2
        self.sum_gdt = 0.0
        self.sum_d2 = 0.0  # sum ||m^{i} - 2 m^{i-1} + m^{i-2}||^2, i >= 2
        self.sum_gd2 = 0.0
        self.sum_fv = 0.0  # sum <f, v^j>
        self.sum_f_from1 = 0.0  # sum_{j>=1} ||f^{j+1}||^2
        self.v0_sq = math.nan
        self.gv0_sq = math.nan
        self.f1_sq = math.nan
        self.v0_nodal = None
        self.nodal_p = np.zeros(mesh.n_vertices)
        self.nodal_q = np.zeros(mesh.n_vertices)
        self.max_constraint_residual = 0.0
        self.max_quotient_residual = 0.0
        self.max_tps_growth_residual = 0.0
        self.max_energy_residual = 0.0
        self.bound_violations: list[str] = []
        self.records = [self._record(0, m0, f0, v=None)]
        self.records[0]["energy_identity_residual"] = 0.0

    def _record(self, n, m, f, v):
        norms = fem.field_norms(self.mesh, m)
        dev = fem.constraint_deviation(self.mesh, m)
        return {
            "j": n,
            "t": n * self.tau,
            "energy": total_energy(self.mesh, m, f, self.lambda_sq),
            "h1_semi": norms["h1_semi"],
            "w1inf_semi": norms["w1inf_semi"],
            "linf_nodal": norms["linf_nodal"],
            "min_nodal": float(np.linalg.norm(m, axis=1).min()),
            "nodal_l1_dev": dev["nodal_l1"],
            "quad_l1_dev": dev["quadrature_l1"],
            "v_norm_sq": math.nan if v is None else _kq(self.M, v),
        }

    def update(self, n, m_prevprev, m_prev, m_new, v, f_rhs, f_new):
        """Account for step ``n-1 -> n``.

        ``v`` is the velocity computed in that step (``None`` for MID),
        ``f_rhs`` the applied field used on its right-hand side and ``f_new``
        the field at ``t_n`` used for the energy.
        """
        tau, lam = self.tau, self.lambda_sq
        M, K = self.M, self.K
        dm = m_new - m_prev
        self.grad_sq.append(_kq(K, m_new))
        self.sum_dt += _kq(M, dm) / tau**2
        self.sum_gdt += _kq(K, dm) / tau**2
        if m_prevprev is not None:
            d2 = m_new - 2.0 * m_prev + m_prevprev
            self.sum_d2 += _kq(M, d2)
            self.sum_gd2 += _kq(K, d2)
            d2_nodal = np.sum(d2 * d2, axis=1)
            self.nodal_p = (self.nodal_p + d2_nodal) / 3.0
            self.nodal_q += d2_nodal
        if v is not None:
            vv, gv = _kq(M, v), _kq(K, v)
            self.sum_v += vv
            self.sum_gv += gv
            self.sum_fv += _kq(M, f_rhs, v)
            if n == 1:
                self.v0_sq, self.gv0_sq = vv, gv
                self.f1_sq = _kq(M, f_rhs)
                self.v0_nodal = np.sum(v * v, axis=1)
            else:
                self.sum_v_from1 += vv
                self.sum_f_from1 += _kq(M, f_rhs)

        rec = self._record(n, m_new, f_new, v)
        g = self.grad_sq
        rec["eta0"] = g[1] - g[0]
        rec["eta_n"] = g[n - 1] - g[n]
        rec["cfl_C"] = math.hypot(rec["eta0"], rec["eta_n"])
        rec["v0_norm_sq"] = self.v0_sq
        rec["d2_sum"] = self.sum_d2 / tau**2
        rec["regularity_bound"] = g[n] + tau * self.sum_v + self.sum_gd2

        if self.scheme == "BDF2":
            lhs = (
                self.alpha * tau * self.sum_v
                + 0.5 * lam * g[n]
                + 0.5 * lam * _kq(K, dm)
                + 0.25 * lam * self.sum_gd2
            )
            rhs = 0.5 * lam * g[0] + tau * self.sum_fv + 0.25 * lam * (rec["eta0"] + rec["eta_n"])
            rec["energy_identity_residual"] = (lhs - rhs) / self.scale
            self._check_bdf2(n, m_prevprev, m_prev, m_new, v, rec)
        elif self.scheme == "TPS":
            lhs = 0.5 * lam * g[n] + self.alpha * tau * self.sum_v + 0.5 * lam * tau**2 * self.sum_gv
            rhs = 0.5 * lam * g[0] + tau * self.sum_fv
            rec["energy_identity_residual"] = (lhs - rhs) / self.scale
            growth = np.sum(m_new**2, axis=1) - np.sum(m_prev**2, axis=1) - tau**2 * np.sum(v * v, axis=1)
            self.max_tps_growth_residual = max(self.max_tps_growth_residual, float(np.abs(growth).max()))
        else:
            rec["energy_identity_residual"] = math.nan
        if np.isfinite(rec["energy_identity_residual"]):
            self.max_energy_residual = max(self.max_energy_residual, abs(rec["energy_identity_residual"]))
        self.records.append(rec)
        return rec

    def _check_bdf2(self, n, m_prevprev, m_prev, m_new, v, rec):
        tau, lam, alpha = self.tau, self.lambda_sq, self.alpha
        g = self.grad_sq
        # nodal constraint law
        law = (
            np.sum(m_new**2, axis=1)
            - 1.0
            - 1.5 * (1.0 - 3.0**-n) * tau**2 * self.v0_nodal
            - 1.5 * (self.nodal_q - self.nodal_p)
        )
        rec["constraint_law_residual"] = float(np.abs(law).max())
        self.max_constraint_residual = max(self.max_constraint_residual, rec["constraint_law_residual"])

        # algebraic identities between v and the difference quotients
        # the difference quotients lose digits in proportion to |m| / tau
        scale = max(float(np.abs(v).max()), float(np.abs(m_new).max()) / tau)
        if m_prevprev is None:
            res = np.abs(v - (m_new - m_prev) / tau).max()
        else:
            res = np.abs(2.0 * v - 3.0 * (m_new - m_prev) / tau + (m_prev - m_prevprev) / tau).max()
        rec["quotient_residual"] = float(res) / scale
        self.max_quotient_residual = max(self.max_quotient_residual, rec["quotient_residual"])

        slack = 1e-10
        checks = {}
        v_sum, g_sum = tau * self.sum_v, tau * self.sum_gv
        checks["norm_equiv_l2"] = (
            BOUND_C1**2 * v_sum <= tau * self.sum_dt * (1 + slack) + 1e-300
            and tau * self.sum_dt <= BOUND_C2**2 * v_sum * (1 + slack) + 1e-300
        )
        checks["norm_equiv_grad"] = (
            BOUND_C1**2 * g_sum <= tau * self.sum_gdt * (1 + slack) + 1e-300
            and tau * self.sum_gdt <= BOUND_C2**2 * g_sum * (1 + slack) + 1e-300
        )
        # tau * sum ||d_t^2 m||^2 = sum ||second difference||^2 / tau^3
        checks["inverse_l2"] = self.sum_d2 / tau**3 <= BOUND_C3**2 / tau**2 * v_sum * (1 + slack) + 1e-300
        checks["inverse_grad"] = self.sum_gd2 / tau**3 <= BOUND_C3**2 / tau**2 * g_sum * (1 + slack) + 1e-300
        if n == 1:
            lhs = lam * g[1] + tau * alpha * self.v0_sq + tau**2 * lam * self.gv0_sq
            rhs = lam * g[0] + tau / alpha * self.f1_sq
        else:
            lhs = (
                lam * GAMMA_MINUS * (g[n] + g[n - 1])
                + 0.5 * alpha * tau * self.sum_v_from1
                + 0.25 * lam * self.sum_gd2
            )
            rhs = lam * GAMMA_PLUS * (g[0] + g[1]) + tau / (2 * alpha) * self.sum_f_from1
        checks["energy_estimate"] = lhs <= rhs * (1 + slack) + 1e-14
        for name, ok in checks.items():
            if not ok:
                self.bound_violations.append(f"step {n}: {name}")


def energy_identity_residual(traj, n: int) -> float:
    """Residual of the discrete energy identity at step ``n``, recomputed from stored states.

    Normalized by ``max(1, |E(m^0, f^0)|)`` like the online record.
    """
    if traj.scheme != "BDF2":
        raise ValueError("the BDF2 energy identity applies to BDF2 trajectories only")
    if not 1 <= n <= traj.N:
        raise ValueError("n must satisfy 1 <= n <= N")
    mesh = traj.mesh
    M, K = fem.mass_matrix(mesh), fem.stiffness_matrix(mesh)
    lam, tau, alpha = traj.lambda_sq, traj.tau, traj.alpha
    m = [traj.state(j) for j in range(n + 1)]
    v = [traj.velocity(j) for j in range(n)]
    g = [_kq(K, mj) for mj in m]
    lhs = alpha * tau * sum(_kq(M, vj) for vj in v)
    lhs += 0.5 * lam * g[n] + 0.5 * lam * _kq(K, m[n] - m[n - 1])
    lhs += 0.25 * lam * sum(_kq(K, m[j + 1] - 2 * m[j] + m[j - 1]) for j in range(1, n))
    fsum = sum(_kq(M, traj.rhs_field(j), v[j]) for j in range(n))
    eta0, eta_n = g[1] - g[0], g[n - 1] - g[n]
    rhs = 0.5 * lam * g[0] + tau * fsum + 0.25 * lam * (eta0 + eta_n)
    e0 = total_energy(mesh, m[0], traj.field_at(0.0), lam)
    return (lhs - rhs) / max(1.0, abs(e0))


def cfl_indicator(traj, n: int | None = None) -> dict:
    """``eta0``, ``eta_n`` and ``C = sqrt(eta0^2 + eta_n^2)`` from the gradient energies."""
    n = traj.N if n is None else n
    if n < 1:
        raise ValueError("n must be >= 1")
    g = traj.grad_sq
    eta0 = g[1] - g[0]
    eta_n = g[n - 1] - g[n]
    return {"eta0": eta0, "eta_n": eta_n, "C": math.hypot(eta0, eta_n)}


def regularity_diagnostics(traj, n: int | None = None) -> dict:
    """``||v^0||^2`` and ``tau^2 sum_{j=2}^n ||d_t^2 m^j||^2``."""
    n = traj.N if n is None else n
    if n < 2:
        raise ValueError("n must be >= 2")
    rec = traj.records[n]
    return {"v0_norm_sq": rec["v0_norm_sq"], "d2_sum": rec["d2_sum"]}


def _locate(coarse: Mesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric coordinates of ``points`` in ``coarse``."""
    p = coarse.vertices[coarse.triangles]  # (nt, 3, 2)
    tri_idx = np.full(len(points), -1)
    bary = np.zeros((len(points), 3))
    best = np.full(len(points), -np.inf)
    # chunk over triangles; meshes here are small enough for a dense search
    for start in range(0, coarse.n_triangles, 512):
        q = p[start : start + 512]
        a, b, c = q[:, 0], q[:, 1], q[:, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        dx = points[:, None, 0] - a[None, :, 0]
        dy = points[:, None, 1] - a[None, :, 1]
        l1 = (dx * (c[None, :, 1] - a[None, :, 1]) - dy * (c[None, :, 0] - a[None, :, 0])) / det
        l2 = (dy * (b[None, :, 0] - a[None, :, 0]) - dx * (b[None, :, 1] - a[None, :, 1])) / det
        l0 = 1.0 - l1 - l2
        score = np.minimum(np.minimum(l0, l1), l2)
        k = np.argmax(score, axis=1)
        s = score[np.arange(len(points)), k]
        better = s > best
        best[better] = s[better]
        tri_idx[better] = start + k[better]
        bary[better] = np.column_stack(
            [l0[better, k[better]], l1[better, k[better]], l2[better, k[better]]]
        )
    if np.any(best < -1e-10):
        raise ValueError("fine mesh is not contained in the coarse mesh")
    return tri_idx, bary


def error_vs_reference(traj, reference, norm: str = "h1_final") -> float:
    """Distance between a trajectory and a reference.

    ``reference`` is either another trajectory (same mesh, or a nested finer
    mesh onto which ``traj`` is prolonged; time steps must divide each
    other) or a callable ``exact(points, t)`` evaluated at the nodes.
    ``norm`` is one of ``l2_final``, ``h1_final``, ``l2_max``, ``h1_max``;
    ``h1`` denotes the full H1 norm.
    """
    kind, _, which = norm.partition("_")
    if kind not in ("l2", "h1") or which not in ("final", "max"):
        raise ValueError(f"unknown norm {norm!r}")
    steps = [traj.N] if which == "final" else range(1, traj.N + 1)

    if callable(reference):
        mesh = traj.mesh

        def diff(j):
            return traj.state(j) - fem.interpolate_nodal(reference, mesh, j * traj.tau)
    else:
        ratio = traj.tau / reference.tau
        stride = int(round(ratio))
        if abs(ratio - stride) > 1e-9 * ratio or stride < 1:
            raise ValueError("reference time step must divide the trajectory time step")
        if abs(traj.T - reference.T) > 1e-12 * max(1.0, traj.T):
            raise ValueError("trajectories cover different time intervals")
        if traj.mesh is reference.mesh or (
            traj.mesh.n_vertices == reference.mesh.n_vertices
            and np.array_equal(traj.mesh.vertices, reference.mesh.vertices)
        ):
            mesh = traj.mesh

            def diff(j):
                return traj.state(j) - reference.state(j * stride)
        else:
            mesh = reference.mesh
            tri, bary = _locate(traj.mesh, mesh.vertices)
            nodes = traj.mesh.triangles[tri]

            def diff(j):
                coarse = traj.state(j)
                fine = np.einsum("pk,pkc->pc", bary, coarse[nodes])
                return fine - reference.state(j * stride)

    M, K = fem.mass_matrix(mesh), fem.stiffness_matrix(mesh)
    worst = 0.0
    for j in steps:
        d = diff(j)
        val = _kq(M, d)
        if kind == "h1":
            val += _kq(K, d)
        worst = max(worst, math.sqrt(max(val, 0.0)))
    return worst


def prolong(coarse: Mesh, fine: Mesh, m) -> np.ndarray:
    """P1 interpolation of a coarse-mesh field onto the vertices of a nested finer mesh."""
    m = fem.check_field(coarse, m)
    tri, bary = _locate(coarse, fine.vertices)
    return np.einsum("pk,pkc->pc", bary, m[coarse.triangles[tri]])


def eoc(errors) -> list[float]:
    """Empirical orders ``log2(e_k / e_{k+1})`` for a resolution ladder halving each step.

    ``errors`` is a sequence of ``(resolution, error)`` pairs. Orders that
    involve a vanishing error are reported as ``nan``.
    """
    errors = list(errors)
    if len(errors) < 2:
        raise ValueError("at least two (resolution, error) pairs are needed")
    out = []
    for (r0, e0), (r1, e1) in zip(errors, errors[1:]):
        if e0 <= 0.0 or e1 <= 0.0:
            out.append(math.nan)
        else:
            out.append(math.log(e0 / e1) / math.log(r0 / r1))
    return out

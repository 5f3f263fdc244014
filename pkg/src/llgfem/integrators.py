"""Tangent-plane time stepping for the LLG equation.

Three schemes share the same spatial discretization:

* ``BDF2``: one first-order tangent-plane step, then two-step updates whose
  velocity lives in the tangent space of the extrapolated state
  ``2 m^j - m^{j-1}``.
* ``TPS``: the projection-free first-order tangent-plane scheme.
* ``MID``: the implicit midpoint rule, solved by a fixed-point iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import fem
from .linsolve import LinearSolveConfig
from .mesh import Mesh
from .observables import StepMonitor
from .problems import BenchmarkProblem
from .tangent import build_tangent_frame, solve_in_tangent_space

__all__ = [
    "SCHEMES",
    "MidpointConfig",
    "SolverConfig",
    "Problem",
    "Trajectory",
    "SimulationError",
    "FixedPointError",
    "initial_step",
    "bdf2_step",
    "tps_step",
    "midpoint_step",
    "run_simulation",
    "evaluate_interpolant",
]

SCHEMES = ("BDF2", "TPS", "MID")


class FixedPointError(RuntimeError):
    """The midpoint fixed-point iteration did not converge."""

    def __init__(self, message, iterations, last_update):
        super().__init__(message)
        self.iterations = iterations
        self.last_update = last_update


class SimulationError(RuntimeError):
    """A time step failed; ``step`` is the index ``j`` of the state being computed."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class MidpointConfig:
    fp_tolerance: float = 1e-10
    fp_max_iterations: int = 200


@dataclass(frozen=True)
class SolverConfig:
    """Physical and numerical parameters of a run.

    ``tps_field`` selects the applied field sampled by TPS steps: ``"next"``
    uses ``f(t_{j+1})`` like the BDF2 start-up step, ``"current"`` uses
    ``f(t_j)``.
    """

    alpha: float
    lambda_sq: float
    T: float
    N: int
    scheme: str = "BDF2"
    linear: LinearSolveConfig = field(default_factory=LinearSolveConfig)
    midpoint: MidpointConfig = field(default_factory=MidpointConfig)
    tps_field: str = "next"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.lambda_sq > 0:
            raise ValueError("lambda_sq must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if self.scheme == "BDF2" and self.N < 2:
            raise ValueError("BDF2 needs N >= 2")
        if self.tps_field not in ("next", "current"):
            raise ValueError("tps_field must be 'next' or 'current'")

    @property
    def tau(self) -> float:
        return self.T / self.N

    @classmethod
    def for_problem(cls, problem: BenchmarkProblem, N: int, **overrides):
        params = {"alpha": problem.alpha, "lambda_sq": problem.lambda_sq, "T": problem.T}
        params.update(overrides)
        return cls(N=N, **params)


class Problem:
    """A mesh with initial datum and applied field.

    ``m0`` is a point function or a nodal array; it is renormalized to unit
    length at every node. ``f(points, t)`` defaults to zero.
    """

    def __init__(self, mesh: Mesh, m0, f: Callable | None = None, *, time_dependent=True, name=""):
        self.mesh = mesh
        self.name = name
        if callable(m0):
            values = fem.interpolate_nodal(lambda p, t: m0(p), mesh)
        else:
            values = fem.check_field(mesh, m0, "m0")
        self.m0 = fem.normalize_nodal(values)
        self.m0.setflags(write=False)
        self.f = f
        self.time_dependent = time_dependent
        self._static_field = None

    @classmethod
    def from_benchmark(cls, bench: BenchmarkProblem, mesh: Mesh) -> "Problem":
        return cls(mesh, bench.m0, bench.f, time_dependent=bench.time_dependent_field, name=bench.name)

    def field_at(self, t: float) -> np.ndarray:
        if self.f is None:
            return np.zeros((self.mesh.n_vertices, 3))
        if not self.time_dependent:
            if self._static_field is None:
                self._static_field = fem.interpolate_nodal(self.f, self.mesh, 0.0)
            return self._static_field
        return fem.interpolate_nodal(self.f, self.mesh, t)


class _Operators:
    """Vector mass and stiffness matrices of a mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.M3 = fem.vector_operator(fem.mass_matrix(mesh))
        self.K3 = fem.vector_operator(fem.stiffness_matrix(mesh))


def _ops(mesh: Mesh) -> _Operators:
    return fem._cached(mesh, "vector_ops", _Operators)


def _tangent_step(mesh, anchor, rhs_state, f, cfg: SolverConfig, stiff_coeff: float, rhs_coeff: float):
    """Solve ``a(v, phi) = (f, phi) - rhs_coeff * lambda^2 (grad rhs_state, grad phi)`` in ``T_h(anchor)``."""
    ops = _ops(mesh)
    frame = build_tangent_frame(anchor)
    A = (
        cfg.alpha * ops.M3
        + fem.assemble_cross_form(mesh, anchor)
        + (stiff_coeff * cfg.lambda_sq * cfg.tau) * ops.K3
    )
    rhs = ops.M3 @ f.ravel() - (rhs_coeff * cfg.lambda_sq) * (ops.K3 @ rhs_state.ravel())
    return solve_in_tangent_space(frame, A, rhs, cfg.linear)


def initial_step(mesh: Mesh, m0, f1, cfg: SolverConfig):
    """First-order tangent-plane step from ``m0``; returns ``(v0, m1)``."""
    v = _tangent_step(mesh, m0, m0, f1, cfg, 1.0, 1.0)
    return v, m0 + cfg.tau * v


def tps_step(mesh: Mesh, m, f_next, cfg: SolverConfig):
    """One projection-free tangent-plane step; returns ``(v, m_next)``."""
    return initial_step(mesh, m, f_next, cfg)


def bdf2_step(mesh: Mesh, m_prev, m, f_next, cfg: SolverConfig):
    """Two-step update from ``(m^{j-1}, m^j)``; returns ``(v^j, m^{j+1})``."""
    predictor = 2.0 * m - m_prev
    v = _tangent_step(mesh, predictor, 4.0 * m - m_prev, f_next, cfg, 2.0 / 3.0, 1.0 / 3.0)
    return v, (4.0 / 3.0) * m - (1.0 / 3.0) * m_prev + (2.0 / 3.0) * cfg.tau * v


def midpoint_step(mesh: Mesh, m, f_mid, cfg: SolverConfig):
    """Implicit midpoint step with mass lumping, solved by fixed-point sweeps.

    With ``w = (m^j + m^{j+1}) / 2``, the lumped product ``(., .)_h`` and the
    discrete Laplacian ``(Lap_h u, phi)_h = -(grad u, grad phi)``, the step
    solves ``(d_t m, phi)_h - alpha (w x d_t m, phi)_h
    = -lambda^2 (w x Lap_h w, phi)_h - (w x f, phi)_h``. The equation holds
    nodewise, so ``|m^{j+1}(z)| = |m^j(z)|`` once the iteration has
    converged. Each sweep freezes the left factor ``w`` and solves the
    resulting linear system for ``m^{j+1}``. Returns ``(m_next, iterations)``.
    """
    from .linsolve import solve_linear

    ops = _ops(mesh)
    mp = cfg.midpoint
    half = 0.5 * cfg.tau * cfg.lambda_sq
    L3 = sp.diags(np.repeat(fem.lumped_mass(mesh), 3))
    m_flat = m.ravel()
    Lf = L3 @ f_mid.ravel()
    u = m.copy()
    update = math.inf
    for it in range(1, mp.fp_max_iterations + 1):
        S = fem.nodal_cross_operator(0.5 * (m + u))
        base = L3 - cfg.alpha * (S @ L3)
        SK = S @ ops.K3
        A = (base - half * SK).tocsr()
        rhs = base @ m_flat + half * (SK @ m_flat) - cfg.tau * (S @ Lf)
        u_new = solve_linear(A, rhs, cfg.linear).reshape(m.shape)
        update = float(np.abs(u_new - u).max())
        u = u_new
        if update < mp.fp_tolerance:
            return u, it
        if not np.isfinite(update) or update > 1e6:
            break
    raise FixedPointError(
        f"fixed-point iteration stopped after {it} sweeps with update {update:.3e}", it, update
    )


class Trajectory:
    """States ``m^j``, velocities ``v^j`` and per-step observables of one run.

    When ``keep_states`` was false only the last two states and velocity are
    retained; the observables cover every step regardless.
    """

    def __init__(self, problem: Problem, cfg: SolverConfig, keep_states: bool):
        self.problem = problem
        self.mesh = problem.mesh
        self.cfg = cfg
        self.scheme = cfg.scheme
        self.alpha = cfg.alpha
        self.lambda_sq = cfg.lambda_sq
        self.T = cfg.T
        self.N = cfg.N
        self.tau = cfg.tau
        self.keep_states = keep_states
        self._states: dict[int, np.ndarray] = {}
        self._velocities: dict[int, np.ndarray] = {}
        self.fp_iterations: list[int] = []
        self.monitor: StepMonitor | None = None

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)

    @property
    def records(self) -> list[dict]:
        return self.monitor.records

    @property
    def grad_sq(self) -> list[float]:
        return self.monitor.grad_sq

    def _store(self, j, m, v=None):
        self._states[j] = m
        if v is not None:
            self._velocities[j - 1] = v
        if not self.keep_states:
            for k in [k for k in self._states if k < j - 2 and k != 0]:
                del self._states[k]
            for k in [k for k in self._velocities if k < j - 2]:
                del self._velocities[k]

    def state(self, j: int) -> np.ndarray:
        try:
            return self._states[j]
        except KeyError:
            raise KeyError(f"state {j} was not retained (keep_states=False)") from None

    def velocity(self, j: int) -> np.ndarray:
        try:
            return self._velocities[j]
        except KeyError:
            raise KeyError(f"velocity {j} not available") from None

    def predictor(self, j: int) -> np.ndarray:
        """Anchor of the step producing ``m^{j}``: ``m^0`` for ``j = 1``, else ``2 m^{j-1} - m^{j-2}``."""
        if j == 1:
            return self.state(0)
        return 2.0 * self.state(j - 1) - self.state(j - 2)

    def field_at(self, t: float) -> np.ndarray:
        return self.problem.field_at(t)

    def rhs_field(self, j: int) -> np.ndarray:
        """Applied field used on the right-hand side of step ``j -> j+1``."""
        if self.scheme == "TPS" and self.cfg.tps_field == "current":
            return self.field_at(j * self.tau)
        if self.scheme == "MID":
            return self.field_at((j + 0.5) * self.tau)
        return self.field_at((j + 1) * self.tau)

    @property
    def final_state(self) -> np.ndarray:
        return self._states[self.N]

    def summary(self) -> dict:
        mon = self.monitor
        last = mon.records[-1]
        return {
            "scheme": self.scheme,
            "N": self.N,
            "tau": self.tau,
            "final_energy": last["energy"],
            "max_energy_identity_residual": mon.max_energy_residual,
            "max_constraint_law_residual": mon.max_constraint_residual,
            "max_quotient_residual": mon.max_quotient_residual,
            "max_tps_growth_residual": mon.max_tps_growth_residual,
            "bound_violations": len(mon.bound_violations),
            "v0_norm_sq": last.get("v0_norm_sq", math.nan),
            "d2_sum": last.get("d2_sum", math.nan),
            "eta0": last.get("eta0", math.nan),
            "eta_n": last.get("eta_n", math.nan),
            "cfl_C": last.get("cfl_C", math.nan),
        }


def run_simulation(problem: Problem, cfg: SolverConfig, keep_states: bool = True, callback=None) -> Trajectory:
    """March from ``t = 0`` to ``t = T`` with the configured scheme.

    Raises :class:`SimulationError` carrying the failing step index.
    """
    mesh = problem.mesh
    traj = Trajectory(problem, cfg, keep_states)
    m0 = problem.m0.copy()
    traj.monitor = StepMonitor(
        mesh,
        alpha=cfg.alpha,
        lambda_sq=cfg.lambda_sq,
        tau=cfg.tau,
        scheme=cfg.scheme,
        m0=m0,
        f0=problem.field_at(0.0),
    )
    traj._store(0, m0)
    m_prev, m_cur = None, m0
    tau = cfg.tau
    for j in range(cfg.N):
        f_rhs = traj.rhs_field(j)
        try:
            if cfg.scheme == "MID":
                m_new, iters = midpoint_step(mesh, m_cur, f_rhs, cfg)
                v = None
                traj.fp_iterations.append(iters)
            elif cfg.scheme == "TPS" or j == 0:
                v, m_new = tps_step(mesh, m_cur, f_rhs, cfg)
            else:
                v, m_new = bdf2_step(mesh, m_prev, m_cur, f_rhs, cfg)
        except Exception as exc:  # noqa: BLE001 - re-raised with the step index
            raise SimulationError(j + 1, exc) from exc
        traj.monitor.update(j + 1, m_prev, m_cur, m_new, v, f_rhs, problem.field_at((j + 1) * tau))
        traj._store(j + 1, m_new, v)
        if callback is not None:
            callback(j + 1, m_new, traj.monitor.records[-1])
        m_prev, m_cur = m_cur, m_new
    return traj


_INTERPOLANTS = ("linear", "minus", "plus", "hat_plus", "v_minus")


def evaluate_interpolant(traj: Trajectory, which: str, t: float) -> np.ndarray:
    """Piecewise-in-time reconstructions on ``[t_j, t_{j+1})``.

    ``linear`` interpolates ``m^j`` and ``m^{j+1}``; ``minus``/``plus`` are
    ``m^j``/``m^{j+1}``; ``hat_plus`` is the anchor of the step (``m^0`` on
    the first interval); ``v_minus`` is ``v^j``. ``t = T`` belongs to the
    last interval.
    """
    if which not in _INTERPOLANTS:
        raise ValueError(f"unknown interpolant {which!r}; choose from {_INTERPOLANTS}")
    tau, N = traj.tau, traj.N
    if not -1e-12 * traj.T <= t <= traj.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, {traj.T}]")
    s = t / tau
    j = int(round(s)) if abs(s - round(s)) < 1e-9 else int(math.floor(s))
    j = min(max(j, 0), N - 1)
    if which == "linear":
        theta = min(max(s - j, 0.0), 1.0)
        if theta == 0.0:
            return traj.state(j)
        if theta == 1.0:
            return traj.state(j + 1)
        return theta * traj.state(j + 1) + (1.0 - theta) * traj.state(j)
    if which == "minus":
        return traj.state(j)
    if which == "plus":
        return traj.state(j + 1)
    if which == "hat_plus":
        if traj.scheme == "TPS":
            return traj.state(j)
        return traj.predictor(j + 1)
    return traj.velocity(j)

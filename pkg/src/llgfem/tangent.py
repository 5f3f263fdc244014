"""Nodewise tangent spaces and Galerkin solves restricted to them."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .linsolve import LinearSolveConfig, solve_linear

__all__ = ["TangentFrame", "DegenerateAnchorError", "build_tangent_frame", "solve_in_tangent_space"]

EPS_ANCHOR = 1e-12


class DegenerateAnchorError(ValueError):
    """The anchor field (nearly) vanishes at a node, so its tangent plane is undefined."""

    def __init__(self, node: int, modulus: float):
        super().__init__(f"anchor modulus {modulus:.3e} at node {node} is below {EPS_ANCHOR:g}")
        self.node = node
        self.modulus = modulus


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """Orthonormal basis ``t1(z), t2(z)`` of the plane orthogonal to ``anchor(z)``."""

    t1: np.ndarray
    t2: np.ndarray
    anchor: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.t1.shape[0]

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """``3M x 2M`` matrix mapping tangent coordinates to node-major fields."""
        n = self.n_nodes
        basis = np.stack([self.t1, self.t2], axis=2)  # (n, 3, 2)
        rows = np.repeat(3 * np.arange(n)[:, None] + np.arange(3), 2, axis=1)
        cols = np.tile(2 * np.arange(n)[:, None] + np.arange(2), (1, 3)).reshape(n, 3, 2)
        return sp.csr_matrix(
            (basis.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, 2 * n)
        )

    def expand(self, w: np.ndarray) -> np.ndarray:
        w = w.reshape(-1, 2)
        return w[:, :1] * self.t1 + w[:, 1:] * self.t2

    def project(self, v: np.ndarray) -> np.ndarray:
        """Tangent coordinates of the orthogonal projection of ``v``."""
        return np.column_stack([np.sum(v * self.t1, axis=1), np.sum(v * self.t2, axis=1)])


def build_tangent_frame(anchor: np.ndarray, eps: float = EPS_ANCHOR) -> TangentFrame:
    """Deterministic frame: ``t1 = a x e_k`` for the axis ``e_k`` least aligned with ``a``."""
    a = np.asarray(anchor, dtype=float)
    mod = np.linalg.norm(a, axis=1)
    bad = np.flatnonzero(~(mod >= eps))
    if bad.size:
        raise DegenerateAnchorError(int(bad[0]), float(mod[bad[0]]))
    k = np.argmin(np.abs(a), axis=1)  # argmin breaks ties by smallest index
    e = np.zeros_like(a)
    e[np.arange(len(a)), k] = 1.0
    t1 = np.cross(a, e)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(a, t1)
    t2 /= np.linalg.norm(t2, axis=1)[:, None]
    return TangentFrame(t1, t2, a)


def solve_in_tangent_space(
    frame: TangentFrame, A_full, rhs_full, cfg: LinearSolveConfig | None = None
) -> np.ndarray:
    """Galerkin solve of ``A_full v = rhs_full`` with trial and test in the tangent space.

    Returns the nodal field ``v`` of shape ``(M, 3)``.
    """
    E = frame.prolongation
    rhs = np.asarray(rhs_full, dtype=float).ravel()
    if A_full.shape != (E.shape[0], E.shape[0]) or rhs.shape[0] != E.shape[0]:
        raise ValueError("system dimensions do not match the tangent frame")
    A_red = (E.T @ A_full @ E).tocsr()
    w = solve_linear(A_red, E.T @ rhs, cfg)
    return frame.expand(w)

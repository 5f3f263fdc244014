"""Linear solves for the nonsymmetric systems with positive definite symmetric part."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["LinearSolveConfig", "LinearSolveError", "solve_linear"]

_METHODS = ("auto", "iterative-krylov", "dense-direct", "sparse-direct")


class LinearSolveError(RuntimeError):
    """Raised when a solve misses its residual tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class LinearSolveConfig:
    method: str = "auto"
    rel_tolerance: float = 1e-10
    max_iterations: int | None = None  # None means 10 * n
    dense_threshold: int = 2000
    restart: int = 50

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {_METHODS}")
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _relres(A, x, b, bnorm):
    r = b - A @ x
    return float(np.linalg.norm(r)) / bnorm


def solve_linear(A, b, cfg: LinearSolveConfig | None = None) -> np.ndarray:
    """Solve ``A x = b`` up to ``||Ax - b|| <= rel_tolerance * ||b||``.

    ``auto`` factorizes systems smaller than ``dense_threshold`` directly
    (sparse LU for sparse input, dense LU otherwise) and uses restarted
    GMRES with Jacobi preconditioning above it.
    """
    cfg = cfg or LinearSolveConfig()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match right-hand side length {n}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)

    method = cfg.method
    if method == "auto":
        if n >= cfg.dense_threshold:
            method = "iterative-krylov"
        else:
            # sparse LU is several times faster than dense LU at these sizes
            method = "sparse-direct" if sp.issparse(A) else "dense-direct"

    try:
        x = _direct(A, b, method) if method != "iterative-krylov" else _gmres(A, b, cfg, n, bnorm)
    except (RuntimeError, np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        if isinstance(exc, LinearSolveError):
            raise
        raise LinearSolveError(f"{method} solve failed: {exc}", np.inf) from exc

    res = _relres(A, x, b, bnorm)
    if not np.isfinite(res) or res > cfg.rel_tolerance:
        raise LinearSolveError(
            f"{method} solve reached relative residual {res:.3e} > {cfg.rel_tolerance:.1e}", res
        )
    return x


def _direct(A, b, method):
    if method == "dense-direct":
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        with warnings.catch_warnings():
            # a singular factor shows up in the residual check
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            x = scipy.linalg.lu_solve(scipy.linalg.lu_factor(dense, check_finite=False), b, check_finite=False)
    else:
        x = spla.splu(sp.csc_matrix(A)).solve(b)
    return x


def _gmres(A, b, cfg, n, bnorm):
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise LinearSolveError("zero diagonal entry; Jacobi preconditioner undefined", np.inf)
    inv_diag = 1.0 / diag
    precond = spla.LinearOperator((n, n), matvec=lambda r: inv_diag * r, dtype=float)
    maxiter = cfg.max_iterations or 10 * n
    restart = min(cfg.restart, n)
    # gmres monitors the preconditioned residual; tighten and re-check the true one
    x = np.zeros(n)
    tol = 0.1 * cfg.rel_tolerance
    for _ in range(3):
        x, info = spla.gmres(
            A, b, x0=x, rtol=tol, atol=0.0, restart=restart,
            maxiter=max(1, maxiter // restart), M=precond,
        )
        res = _relres(A, x, b, bnorm)
        if res <= cfg.rel_tolerance:
            return x
        if info > 0 and res > 1e3 * cfg.rel_tolerance:
            break
        tol *= 0.1
    raise LinearSolveError(
        f"GMRES did not converge: relative residual {res:.3e} after {maxiter} iterations", res
    )

"""P1 finite elements on triangles.

Nodal fields are ``(n_vertices, 3)`` arrays. Vector-valued operators act on
the flattened field ``m.ravel()``, i.e. the unknowns are ordered node-major
(``3*i + component``).
"""

from __future__ import annotations

import csv
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

__all__ = [
    "QuadratureRule",
    "CENTROID",
    "STRANG_FIX_4",
    "DUNAVANT_6",
    "interpolate_nodal",
    "normalize_nodal",
    "check_field",
    "assemble_mass",
    "assemble_stiffness",
    "vector_operator",
    "assemble_cross_form",
    "assemble_cross_gradient_form",
    "lumped_mass",
    "nodal_cross_operator",
    "mass_matrix",
    "stiffness_matrix",
    "element_gradients",
    "field_norms",
    "l2_norm",
    "h1_seminorm",
    "discrete_lr_norm",
    "constraint_deviation",
    "write_field_csv",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle in barycentric coordinates.

    Weights are normalized to sum to one, so ``|K| * sum(w * g(points))``
    approximates the integral of ``g`` over ``K``.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, g) -> float:
        """Integral of ``g(x, y)`` over the unit reference triangle (area 1/2)."""
        xy = self.points[:, 1:]
        return 0.5 * float(np.dot(self.weights, g(xy[:, 0], xy[:, 1])))


def _sym3(a):
    b = 1.0 - 2.0 * a
    return [[b, a, a], [a, b, a], [a, a, b]]


CENTROID = QuadratureRule(np.full((1, 3), 1.0 / 3.0), np.ones(1), 1)

STRANG_FIX_4 = QuadratureRule(
    np.array([[1 / 3, 1 / 3, 1 / 3]] + _sym3(0.2)),
    np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48]),
    3,
)

_A4, _B4 = 0.445948490915965, 0.091576213509771
_WA4, _WB4 = 0.223381589678011, 0.109951743655322
DUNAVANT_6 = QuadratureRule(
    np.array(_sym3(_A4) + _sym3(_B4)),
    np.array([_WA4] * 3 + [_WB4] * 3),
    4,
)


def check_field(mesh: Mesh, m, name: str = "field") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (mesh.n_vertices, 3):
        raise ValueError(
            f"{name} has shape {m.shape}, expected ({mesh.n_vertices}, 3) for this mesh"
        )
    return m


def interpolate_nodal(fn, mesh: Mesh, t: float = 0.0) -> np.ndarray:
    """Nodal interpolant of ``fn(points, t)``.

    ``fn`` is evaluated once on the ``(nv, 2)`` vertex array and must return
    an ``(nv, 3)`` array.
    """
    values = np.asarray(fn(mesh.vertices, t), dtype=float)
    if values.shape != (mesh.n_vertices, 3):
        raise ValueError(f"fn returned shape {values.shape}, expected ({mesh.n_vertices}, 3)")
    if not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
        raise ValueError(f"non-finite values at vertices {bad[:10].tolist()}")
    return values


def normalize_nodal(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a field with vanishing nodal values")
    return m / norms[:, None]


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum ``(nt, 3, 3)`` element matrices into a global CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    local = mesh.areas[:, None, None] * _LOCAL_MASS
    return _scatter(mesh, local)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    g = mesh.grad_basis
    local = mesh.areas[:, None, None] * np.einsum("kid,kjd->kij", g, g)
    return _scatter(mesh, local)


def vector_operator(scalar: sp.spmatrix) -> sp.csr_matrix:
    """Componentwise action of a scalar operator on node-major vector fields."""
    return sp.kron(scalar, sp.identity(3), format="csr")


_operator_cache: "weakref.WeakKeyDictionary[Mesh, dict]" = weakref.WeakKeyDictionary()


def _cached(mesh: Mesh, key: str, build):
    store = _operator_cache.setdefault(mesh, {})
    if key not in store:
        store[key] = build(mesh)
    return store[key]


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Cached scalar mass matrix of ``mesh``."""
    return _cached(mesh, "mass", assemble_mass)


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Cached scalar stiffness matrix of ``mesh``."""
    return _cached(mesh, "stiffness", assemble_stiffness)


# (a, b) -> (c, sign) with (w x e_b)_a = sign * w_c
_CROSS_ENTRIES = [(0, 1, 2, -1.0), (0, 2, 1, 1.0), (1, 0, 2, 1.0), (1, 2, 0, -1.0), (2, 0, 1, -1.0), (2, 1, 0, 1.0)]


def _skew_scatter(mesh: Mesh, weighted: np.ndarray) -> sp.csr_matrix:
    """Assemble ``phi_(i,a) . (W_ij x e_b)`` blocks from element vectors ``W``.

    ``weighted`` has shape ``(nt, 3, 3, 3)``: element, local i, local j,
    component of the vector coefficient.
    """
    t = mesh.triangles
    nt = mesh.n_triangles
    gi = np.broadcast_to(t[:, :, None], (nt, 3, 3))
    gj = np.broadcast_to(t[:, None, :], (nt, 3, 3))
    rows, cols, vals = [], [], []
    for a, b, c, sign in _CROSS_ENTRIES:
        rows.append((3 * gi + a).ravel())
        cols.append((3 * gj + b).ravel())
        vals.append(sign * weighted[..., c].ravel())
    n = 3 * mesh.n_vertices
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def assemble_cross_form(mesh: Mesh, w, rule: QuadratureRule = STRANG_FIX_4) -> sp.csr_matrix:
    """Matrix ``B`` with ``phi . B v = int (w x v) . phi`` for P1 fields.

    The integrand is cubic on each element, so the default degree-3 rule is
    exact.
    """
    w = check_field(mesh, w, "w")
    if rule.degree < 3:
        raise ValueError("the cross form needs a rule of degree >= 3 to be exact")
    lam = rule.points  # (q, 3)
    wq = np.einsum("qk,tkc->tqc", lam, w[mesh.triangles])  # w at quadrature points
    weighted = np.einsum(
        "t,q,qi,qj,tqc->tijc", mesh.areas, rule.weights, lam, lam, wq, optimize=True
    )
    return _skew_scatter(mesh, weighted)


def assemble_cross_gradient_form(mesh: Mesh, w) -> sp.csr_matrix:
    """Matrix ``C`` with ``phi . C u = int (w x grad u) : grad phi`` for P1 fields.

    Gradients are elementwise constant, so only the element mean of ``w``
    enters and the integral is exact.
    """
    w = check_field(mesh, w, "w")
    g = mesh.grad_basis
    wbar = w[mesh.triangles].mean(axis=1)  # (nt, 3)
    gg = mesh.areas[:, None, None] * np.einsum("kid,kjd->kij", g, g)
    weighted = gg[..., None] * wbar[:, None, None, :]
    return _skew_scatter(mesh, weighted)


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Row sums of the mass matrix, ``|omega_z| / 3`` for vertex patches ``omega_z``."""
    return np.asarray(mass_matrix(mesh).sum(axis=1)).ravel()


def nodal_cross_operator(w) -> sp.csr_matrix:
    """Block-diagonal ``S`` with ``(S v)_z = w_z x v_z`` in node-major ordering."""
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    base = 3 * np.arange(n)
    rows, cols, vals = [], [], []
    for a, b, c, sign in _CROSS_ENTRIES:
        rows.append(base + a)
        cols.append(base + b)
        vals.append(sign * w[:, c])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 3 * n)
    )


def element_gradients(mesh: Mesh, m) -> np.ndarray:
    """Elementwise gradient of a P1 vector field, shape ``(nt, 3, 2)``."""
    return np.einsum("tkc,tkd->tcd", m[mesh.triangles], mesh.grad_basis)


def l2_norm(mesh: Mesh, m) -> float:
    M = mass_matrix(mesh)
    return float(np.sqrt(max(np.sum(m * (M @ m)), 0.0)))


def h1_seminorm(mesh: Mesh, m) -> float:
    K = stiffness_matrix(mesh)
    return float(np.sqrt(max(np.sum(m * (K @ m)), 0.0)))


def field_norms(mesh: Mesh, m) -> dict:
    m = check_field(mesh, m)
    grads = element_gradients(mesh, m)
    return {
        "l2": l2_norm(mesh, m),
        "h1_semi": h1_seminorm(mesh, m),
        "linf_nodal": float(np.linalg.norm(m, axis=1).max()),
        "w1inf_semi": float(np.sqrt((grads**2).sum(axis=(1, 2))).max()),
    }


def discrete_lr_norm(mesh: Mesh, m, r: float) -> float:
    """``(h^d sum_z |m(z)|^r)^(1/r)``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    m = np.asarray(m, dtype=float)
    nodal = np.linalg.norm(m.reshape(mesh.n_vertices, -1), axis=1)
    return float((mesh.h**mesh.dim * np.sum(nodal**r)) ** (1.0 / r))


def constraint_deviation(mesh: Mesh, m, rule: QuadratureRule = DUNAVANT_6) -> dict:
    """L1 size of ``|m|^2 - 1``, nodal surrogate and quadrature version."""
    m = check_field(mesh, m)
    nodal = np.abs(np.sum(m * m, axis=1) - 1.0)
    mq = np.einsum("qk,tkc->tqc", rule.points, m[mesh.triangles])
    dev_q = np.abs(np.sum(mq * mq, axis=2) - 1.0)
    quad = float(np.sum(mesh.areas * (dev_q @ rule.weights)))
    return {"nodal_l1": float(mesh.h**mesh.dim * nodal.sum()), "quadrature_l1": quad}


def write_field_csv(mesh: Mesh, m, path) -> None:
    m = check_field(mesh, m)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_index", "x", "y", "mx", "my", "mz"])
        for i, ((x, y), v) in enumerate(zip(mesh.vertices, m)):
            writer.writerow([i] + [f"{val:.17g}" for val in (x, y, *v)])

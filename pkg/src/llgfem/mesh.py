"""Structured triangulations of axis-aligned squares and their refinement."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Mesh",
    "build_structured_mesh",
    "refine_uniform",
    "mesh_stats",
    "write_mesh",
    "read_mesh",
]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming 2D triangulation.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Counterclockwise vertex indices of each triangle.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle index out of range")
        verts.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if np.any(self.signed_areas <= 0.0):
            raise ValueError("triangles must be counterclockwise with positive area")

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles}, h={self.h:.6g})"

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = np.stack(
            [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)],
            axis=1,
        )
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def grad_basis(self) -> np.ndarray:
        """Constant gradients of the three barycentric basis functions, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        # grad(lambda_k) is the inward normal of the opposite edge scaled by 1/(2|K|)
        twice_area = 2.0 * self.signed_areas[:, None]
        grads = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            grads[:, k, 0] = (a[:, 1] - b[:, 1]) / twice_area[:, 0]
            grads[:, k, 1] = (b[:, 0] - a[:, 0]) / twice_area[:, 0]
        return grads

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (ne, 2)."""
        return np.unique(self._triangle_edges.reshape(-1, 2), axis=0)

    @cached_property
    def _triangle_edges(self) -> np.ndarray:
        t = self.triangles
        e = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
        return np.sort(e, axis=2)

    def edge_counts(self) -> np.ndarray:
        """Number of triangles adjacent to each edge in ``self.edges``."""
        _, counts = np.unique(self._triangle_edges.reshape(-1, 2), axis=0, return_counts=True)
        return counts

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self.edge_counts() == 1]

    def contains_vertex(self, point, tol: float = 1e-12) -> bool:
        d = np.linalg.norm(self.vertices - np.asarray(point, dtype=float), axis=1)
        return bool(d.min() <= tol)


def _canonical(vertices: np.ndarray, triangles: np.ndarray) -> Mesh:
    # vertex order: lexicographic by (y, x); coordinates rounded only for sorting
    key = np.round(vertices, 12)
    order = np.lexsort((key[:, 0], key[:, 1]))
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    tris = inverse[triangles]
    # rotate each triangle so its smallest index comes first (keeps orientation)
    shift = np.argmin(tris, axis=1)
    rows = np.arange(len(tris))[:, None]
    tris = tris[rows, (shift[:, None] + np.arange(3)) % 3]
    tris = tris[np.lexsort(tris.T[::-1])]
    return Mesh(vertices[order], tris)


def build_structured_mesh(domain, level: int, pattern: str = "diagonal") -> Mesh:
    """Uniform triangulation of a square.

    Parameters
    ----------
    domain : ((x0, y0), (x1, y1))
        Lower-left and upper-right corners; the sides must be equal.
    level : int
        The square is divided into ``2**level`` by ``2**level`` cells.
    pattern : {"diagonal", "crisscross"}
        ``"diagonal"`` halves every cell along its lower-left to upper-right
        diagonal (``2**(2*level+1)`` triangles, ``h = sqrt(2) * side / 2**level``).
        ``"crisscross"`` splits every cell into four triangles through its
        center (``4**(level+1)`` triangles, ``h = side / 2**level``).
    """
    (x0, y0), (x1, y1) = np.asarray(domain, dtype=float)
    if level < 0:
        raise ValueError("level must be nonnegative")
    side = x1 - x0
    if side <= 0 or not np.isclose(side, y1 - y0, rtol=1e-14, atol=0.0):
        raise ValueError("domain must be a square with positive side")
    n = 2**level
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    corners = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ll = (j * (n + 1) + i).ravel()
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    if pattern == "diagonal":
        tris = np.concatenate(
            [np.column_stack([ll, lr, ur]), np.column_stack([ll, ur, ul])]
        )
        verts = corners
    elif pattern == "crisscross":
        centers = 0.5 * (corners[ll] + corners[ur])
        c = len(corners) + np.arange(n * n)
        tris = np.concatenate(
            [
                np.column_stack([ll, lr, c]),
                np.column_stack([lr, ur, c]),
                np.column_stack([ur, ul, c]),
                np.column_stack([ul, ll, c]),
            ]
        )
        verts = np.vstack([corners, centers])
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return _canonical(verts, tris)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into four via its edge midpoints."""
    edges = mesh.edges
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    # midpoint index of each local edge (01, 12, 20)
    te = mesh._triangle_edges.reshape(-1, 2)
    key_all = edges[:, 0] * nv + edges[:, 1]
    key = te[:, 0] * nv + te[:, 1]
    mid_idx = (nv + np.searchsorted(key_all, key)).reshape(-1, 3)
    t = mesh.triangles
    m01, m12, m20 = mid_idx[:, 0], mid_idx[:, 1], mid_idx[:, 2]
    children = np.concatenate(
        [
            np.column_stack([t[:, 0], m01, m20]),
            np.column_stack([m01, t[:, 1], m12]),
            np.column_stack([m20, m12, t[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ]
    )
    return _canonical(np.vstack([mesh.vertices, mids]), children)


def mesh_stats(mesh: Mesh) -> dict:
    h = mesh.h
    gamma = float(np.max(np.maximum(h / np.sqrt(mesh.areas), 1.0)))
    return {
        "h": h,
        "gamma": gamma,
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "area": float(mesh.areas.sum()),
    }


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: ``nv nt`` header, vertex lines, then 0-based triangles."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        nv, nt = (int(s) for s in fh.readline().split())
        lines = fh.read().split("\n")
    verts = np.array([line.split() for line in lines[:nv]], dtype=float)
    tris = np.array([line.split() for line in lines[nv : nv + nt]], dtype=np.int64)
    return Mesh(verts.reshape(nv, 2), tris.reshape(nt, 3))

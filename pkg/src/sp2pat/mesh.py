"""Structured triangular meshes of rectangles and P1 finite-element assembly.

All assembly routines take nodal coefficient arrays, interpolate them with the
P1 basis and integrate the resulting polynomial integrand exactly.  Matrices
are returned in CSR format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

# exact integrals of products of three P1 basis functions, scaled by 1/area
# (triangle) and 1/length (edge)
_TRI3 = np.array(
    [
        [[6.0 if i == j == k else 2.0 if len({i, j, k}) == 2 else 1.0 for k in range(3)]
         for j in range(3)]
        for i in range(3)
    ]
) / 60.0
_EDGE3 = np.array(
    [[[3.0 if i == j == k else 1.0 for k in range(2)] for j in range(2)] for i in range(2)]
) / 12.0


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class Mesh2D:
    """Uniform triangulation of ``[x0, x1] x [y0, y1]``.

    Node ``(i, j)`` has index ``j * (nx + 1) + i``.  Each grid cell is split
    along its lower-left to upper-right diagonal.  ``boundary_edges`` run
    counter-clockwise starting at ``(x0, y0)``.
    """

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    nodes: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)
    boundary_normals: np.ndarray = field(repr=False)

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def key(self) -> tuple:
        return (self.x0, self.x1, self.y0, self.y1, self.nx, self.ny)

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def h_min(self) -> float:
        return min(self.hx, self.hy)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def perimeter(self) -> float:
        return 2.0 * ((self.x1 - self.x0) + (self.y1 - self.y0))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Boundary node indices in counter-clockwise order (no repeat)."""
        return self.boundary_edges[:, 0].copy()

    @cached_property
    def boundary_node_flags(self) -> np.ndarray:
        flags = np.zeros(self.node_count, dtype=bool)
        flags[self.boundary_nodes] = True
        return flags

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_node_flags)

    @cached_property
    def boundary_arclength(self) -> np.ndarray:
        """Arc-length coordinate of each entry of ``boundary_nodes``."""
        seg = self.edge_lengths
        return np.concatenate([[0.0], np.cumsum(seg)[:-1]])

    @cached_property
    def tri_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def tri_grads(self) -> np.ndarray:
        """Gradients of the three barycentric functions, shape (T, 3, 2)."""
        p = self.nodes[self.triangles]
        a2 = 2.0 * self.tri_areas
        g = np.empty((len(self.triangles), 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            g[:, k, 0] = (p[:, i, 1] - p[:, j, 1]) / a2
            g[:, k, 1] = (p[:, j, 0] - p[:, i, 0]) / a2
        return g

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Nodal lumped areas (row sums of the unit mass matrix)."""
        out = np.zeros(self.node_count)
        np.add.at(out, self.triangles.ravel(), np.repeat(self.tri_areas / 3.0, 3))
        return out

    @cached_property
    def _tri_pattern(self):
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        return rows, cols

    @cached_property
    def _edge_pattern(self):
        rows = np.repeat(self.boundary_edges, 2, axis=1).ravel()
        cols = np.tile(self.boundary_edges, (1, 2)).ravel()
        return rows, cols

    def check_field(self, values, name: str = "field") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.shape[0] != self.node_count:
            raise MeshError(
                f"{name} has {arr.shape[0]} entries, mesh has {self.node_count} nodes"
            )
        if not np.all(np.isfinite(arr)):
            raise MeshError(f"{name} contains non-finite values")
        return arr

    def field_from_function(self, func) -> np.ndarray:
        return np.asarray(func(self.nodes[:, 0], self.nodes[:, 1]), dtype=float) * np.ones(
            self.node_count
        )

    def grid(self, values) -> np.ndarray:
        """Reshape a nodal field to a ``(ny + 1, nx + 1)`` array."""
        return np.asarray(values).reshape(self.ny + 1, self.nx + 1)


def build_rect_mesh(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int) -> Mesh2D:
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise MeshError(f"invalid rectangle [{x0}, {x1}] x [{y0}, {y1}]")
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise MeshError(f"need integer nx, ny >= 2, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    top = np.column_stack([idx[-1, 1:], idx[-1, :-1]])[::-1]
    left = np.column_stack([idx[1:, 0], idx[:-1, 0]])[::-1]
    edges = np.vstack([bottom, right, top, left])
    normals = np.vstack(
        [
            np.tile([0.0, -1.0], (nx, 1)),
            np.tile([1.0, 0.0], (ny, 1)),
            np.tile([0.0, 1.0], (nx, 1)),
            np.tile([-1.0, 0.0], (ny, 1)),
        ]
    )
    return Mesh2D(float(x0), float(x1), float(y0), float(y1), nx, ny, nodes, triangles, edges, normals)


# ---------------------------------------------------------------- assembly


def _coeff(mesh: Mesh2D, coeff) -> np.ndarray:
    if np.isscalar(coeff):
        return np.full(mesh.node_count, float(coeff))
    return mesh.check_field(coeff, "coefficient")


def stiffness(mesh: Mesh2D, coeff=1.0) -> sp.csr_matrix:
    """Matrix of ``int coeff grad(u) . grad(v)``."""
    c = _coeff(mesh, coeff)
    cbar = c[mesh.triangles].mean(axis=1) * mesh.tri_areas
    G = mesh.tri_grads
    local = np.einsum("e,eid,ejd->eij", cbar, G, G)
    rows, cols = mesh._tri_pattern
    n = mesh.node_count
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def mass(mesh: Mesh2D, coeff=1.0) -> sp.csr_matrix:
    """Consistent matrix of ``int coeff u v``."""
    c = _coeff(mesh, coeff)
    local = np.einsum("ijk,ek,e->eij", _TRI3, c[mesh.triangles], mesh.tri_areas)
    rows, cols = mesh._tri_pattern
    n = mesh.node_count
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def boundary_mass(mesh: Mesh2D, coeff=1.0) -> sp.csr_matrix:
    """Matrix of ``int_{boundary} coeff u v dS``."""
    c = _coeff(mesh, coeff)
    local = np.einsum("ijk,ek,e->eij", _EDGE3, c[mesh.boundary_edges], mesh.edge_lengths)
    rows, cols = mesh._edge_pattern
    n = mesh.node_count
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def boundary_load(mesh: Mesh2D, f) -> np.ndarray:
    """Vector of ``int_{boundary} f v dS`` with ``f`` P1-interpolated.

    ``f`` may be 1-D (one field) or 2-D with one column per field.
    """
    f = np.asarray(f, dtype=float)
    E = mesh.boundary_edges
    L = mesh.edge_lengths
    if f.ndim == 2:
        L = L[:, None]
    fa, fb = f[E[:, 0]], f[E[:, 1]]
    out = np.zeros(f.shape)
    np.add.at(out, E[:, 0], L * (2.0 * fa + fb) / 6.0)
    np.add.at(out, E[:, 1], L * (fa + 2.0 * fb) / 6.0)
    return out


def assemble(mesh: Mesh2D, coeff, kind: str) -> sp.csr_matrix:
    builders = {"stiffness": stiffness, "mass": mass, "boundary_mass": boundary_mass}
    try:
        return builders[kind](mesh, coeff)
    except KeyError:
        raise ValueError(f"unknown assembly kind {kind!r}") from None


def load_vector(mesh: Mesh2D, volume=None, boundary=None) -> np.ndarray:
    """``int F v + int_{boundary} g v dS`` for nodal ``F`` and ``g``."""
    out = np.zeros(mesh.node_count)
    if volume is not None:
        out += mass(mesh) @ _coeff(mesh, volume)
    if boundary is not None:
        out += boundary_load(mesh, _coeff(mesh, boundary))
    return out


# ------------------------------------------------- coefficient sensitivities


def stiffness_sensitivity(mesh: Mesh2D, u, v) -> np.ndarray:
    """d/dc_k of ``u^T stiffness(c) v`` for every node ``k``.

    Accepts 2-D ``u``, ``v`` (one column per pair) and sums over columns.
    """
    gu = triangle_gradients(mesh, u)
    gv = triangle_gradients(mesh, v)
    dot = (gu * gv).reshape(len(mesh.tri_areas), -1).sum(axis=1) * mesh.tri_areas / 3.0
    out = np.zeros(mesh.node_count)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(dot, 3))
    return out


def mass_sensitivity(mesh: Mesh2D, u, v) -> np.ndarray:
    """d/dc_k of ``u^T mass(c) v`` for every node ``k`` (summed over columns)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim == 1:
        u, v = u[:, None], v[:, None]
    ue = u[mesh.triangles]
    ve = v[mesh.triangles]
    local = np.einsum("ijk,eic,ejc,e->ek", _TRI3, ue, ve, mesh.tri_areas)
    out = np.zeros(mesh.node_count)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


# ------------------------------------------------------------- field utils


def triangle_gradients(mesh: Mesh2D, u) -> np.ndarray:
    """Constant gradient of a P1 field on each triangle, shape (T, 2[, m])."""
    u = np.asarray(u, dtype=float)
    ue = u[mesh.triangles]
    if u.ndim == 1:
        return np.einsum("ekd,ek->ed", mesh.tri_grads, ue)
    return np.einsum("ekd,ekm->edm", mesh.tri_grads, ue)


def nodal_gradients(mesh: Mesh2D, u) -> np.ndarray:
    """Area-weighted average of triangle gradients at each node, shape (N, 2)."""
    g = triangle_gradients(mesh, u)
    w = mesh.tri_areas
    acc = np.zeros((mesh.node_count, 2))
    wsum = np.zeros(mesh.node_count)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], g * w[:, None])
        np.add.at(wsum, mesh.triangles[:, k], w)
    return acc / wsum[:, None]


def triangle_to_nodes(mesh: Mesh2D, values) -> np.ndarray:
    """Area-weighted average of per-triangle values at each node."""
    w = mesh.tri_areas
    acc = np.zeros(mesh.node_count)
    wsum = np.zeros(mesh.node_count)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], values * w)
        np.add.at(wsum, mesh.triangles[:, k], w)
    return acc / wsum


def interpolate(mesh: Mesh2D, values, points) -> np.ndarray:
    """Evaluate a P1 field at arbitrary points inside the rectangle."""
    values = np.asarray(values, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    sx = np.clip((pts[:, 0] - mesh.x0) / mesh.hx, 0.0, mesh.nx)
    sy = np.clip((pts[:, 1] - mesh.y0) / mesh.hy, 0.0, mesh.ny)
    i = np.minimum(np.floor(sx).astype(int), mesh.nx - 1)
    j = np.minimum(np.floor(sy).astype(int), mesh.ny - 1)
    tx, ty = sx - i, sy - j
    n0 = j * (mesh.nx + 1) + i
    a, b = values[n0], values[n0 + 1]
    c, d = values[n0 + mesh.nx + 2], values[n0 + mesh.nx + 1]
    # lower triangle (a, b, c) when tx >= ty, upper (a, c, d) otherwise
    lower = a + tx * (b - a) + ty * (c - b)
    upper = a + ty * (d - a) + tx * (c - d)
    return np.where(tx >= ty, lower, upper)


def transfer(src: Mesh2D, dst: Mesh2D, values) -> np.ndarray:
    """Interpolate a nodal field from ``src`` onto the nodes of ``dst``."""
    return interpolate(src, values, dst.nodes)


def export_text(mesh: Mesh2D, path) -> None:
    """Plain-text listing: node records, then triangle records."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.node_count}\n")
        for k, (x, y) in enumerate(mesh.nodes):
            fh.write(f"v {k} {x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {len(mesh.triangles)}\n")
        for t, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"t {t} {a} {b} {c}\n")

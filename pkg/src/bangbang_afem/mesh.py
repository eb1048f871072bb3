"""Conforming triangular meshes and longest-edge bisection.

Local conventions: local edge ``k`` of an element is the side opposite its
local vertex ``k``, i.e. ``(v[k+1], v[k+2])`` (indices mod 3).  Elements are
stored counterclockwise.  Meshes are immutable; refinement returns a new mesh.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

DOMAINS = ("unit_square", "lshape_sw", "lshape_ne")

# local edge k -> local vertex pair
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    """Raised for invalid mesh data or a failed refinement."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """A conforming triangulation with edge topology.

    Build instances with :meth:`from_arrays`, which derives all topological
    fields from ``vertices`` and ``elements``.

    Attributes
    ----------
    vertices : (N, 2) float array
    elements : (M, 3) int array, counterclockwise
    edges : (E, 2) int array, vertex pairs with ``edges[:, 0] < edges[:, 1]``
    element_edges : (M, 3) int array, global index of local edge ``k``
    edge_elements : (E, 2) int array, ``(T+, T-)``; ``T- == -1`` on the boundary
    boundary_vertex : (N,) bool array
    refinement_edge : (M,) int array, global index of the refinement edge
    """

    vertices: np.ndarray
    elements: np.ndarray
    edges: np.ndarray
    element_edges: np.ndarray
    edge_elements: np.ndarray
    boundary_vertex: np.ndarray
    refinement_edge: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, elements) -> "TriangleMesh":
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        elements = np.array(elements, dtype=np.int64).reshape(-1, 3)
        if len(elements) == 0:
            raise MeshError("mesh has no elements")
        if elements.min() < 0 or elements.max() >= len(vertices):
            raise MeshError("element refers to a missing vertex")

        p = vertices[elements]
        det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
               - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        scale = np.einsum("ij,ij->i", p[:, 1] - p[:, 0], p[:, 1] - p[:, 0])
        if np.any(np.abs(det) <= 1e-14 * scale):
            raise MeshError("degenerate (zero-area) element")
        cw = det < 0
        elements[cw] = elements[cw][:, [0, 2, 1]]

        local = elements[:, LOCAL_EDGES]  # (M, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: edge shared by more than two elements")
        element_edges = inverse.reshape(-1, 3)

        order = np.argsort(inverse, kind="stable")
        owner = order // 3
        first = np.searchsorted(inverse[order], np.arange(len(edges)))
        edge_elements = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_elements[:, 0] = owner[first]
        two = counts == 2
        edge_elements[two, 1] = owner[first[two] + 1]

        boundary_vertex = np.zeros(len(vertices), dtype=bool)
        boundary_vertex[edges[~two].ravel()] = True

        d = vertices[edges[:, 1]] - vertices[edges[:, 0]]
        edge_len = np.hypot(d[:, 0], d[:, 1])
        el_len = edge_len[element_edges]
        longest = el_len.max(axis=1, keepdims=True)
        # ties (to 1e-12 relative) go to the smallest global edge index
        candidates = np.where(el_len >= longest * (1.0 - 1e-12), element_edges,
                              np.iinfo(np.int64).max)
        refinement_edge = candidates.min(axis=1)

        return cls(
            vertices=_readonly(vertices),
            elements=_readonly(elements),
            edges=_readonly(edges.astype(np.int64)),
            element_edges=_readonly(element_edges.astype(np.int64)),
            edge_elements=_readonly(edge_elements),
            boundary_vertex=_readonly(boundary_vertex),
            refinement_edge=_readonly(refinement_edge.astype(np.int64)),
        )

    # -- sizes ---------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return _readonly(np.flatnonzero(~self.boundary_vertex))

    @property
    def ndofs(self) -> int:
        """Twice the dimension of the discrete H^1_0 space (state + adjoint)."""
        return 2 * len(self.interior_vertices)

    # -- geometry ------------------------------------------------------------

    @cached_property
    def element_points(self) -> np.ndarray:
        """(M, 3, 2) vertex coordinates per element."""
        return _readonly(self.vertices[self.elements])

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.element_points
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return _readonly(0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return _readonly(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_T, the longest edge of each element."""
        return _readonly(self.edge_lengths[self.element_edges].max(axis=1))

    @cached_property
    def centroids(self) -> np.ndarray:
        return _readonly(self.element_points.mean(axis=1))

    @cached_property
    def interior_edge(self) -> np.ndarray:
        return _readonly(self.edge_elements[:, 1] >= 0)

    @property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of every element, in radians."""
        p = self.element_points
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return np.min(angles, axis=0)

    def scaled(self, s: float) -> "TriangleMesh":
        """Copy with all coordinates multiplied by ``s > 0``."""
        return TriangleMesh.from_arrays(self.vertices * s, self.elements)

    # -- checks --------------------------------------------------------------

    def check(self) -> None:
        """Raise :class:`MeshError` if an invariant is violated."""
        if np.any(self.areas <= 0):
            raise MeshError("non-positive element area")
        rebuilt = TriangleMesh.from_arrays(self.vertices, self.elements)
        for name in ("edges", "element_edges", "edge_elements", "boundary_vertex",
                     "refinement_edge"):
            if not np.array_equal(getattr(rebuilt, name), getattr(self, name)):
                raise MeshError(f"inconsistent topology field {name!r}")
        ref = self.edge_lengths[self.refinement_edge]
        if np.any(ref < self.diameters * (1.0 - 1e-12)):
            raise MeshError("refinement edge is not a longest edge")


@dataclass(frozen=True)
class ElementStar:
    """Element ``center`` together with all elements sharing an edge with it."""

    center: int
    members: frozenset


def star(mesh: TriangleMesh, t: int) -> ElementStar:
    if not 0 <= t < mesh.n_elements:
        raise IndexError(f"element index {t} out of range")
    nb = mesh.edge_elements[mesh.element_edges[t]].ravel()
    return ElementStar(int(t), frozenset(int(i) for i in nb if i >= 0))


def neighbors(mesh: TriangleMesh) -> np.ndarray:
    """(M, 3) array of edge neighbors across local edges, -1 on the boundary."""
    ee = mesh.edge_elements[mesh.element_edges]  # (M, 3, 2)
    own = np.arange(mesh.n_elements)[:, None]
    return np.where(ee[..., 0] == own, ee[..., 1], ee[..., 0])


# -- generation --------------------------------------------------------------

def _grid(x0, y0, cells_x, cells_y, h, keep_cell):
    nx = cells_x + 1
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(cells_y + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(cells_y):
        for i in range(cells_x):
            if not keep_cell(xs[i] + 0.5 * h, ys[j] + 0.5 * h):
                continue
            sw = j * nx + i
            se, nw = sw + 1, sw + nx
            ne = nw + 1
            # south-west to north-east diagonal
            tris.append((sw, se, ne))
            tris.append((sw, ne, nw))
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[tris]


def generate_domain(domain_id: str, n: int) -> TriangleMesh:
    """Structured mesh of one of the benchmark domains.

    Every unit square of the domain is split into ``n x n`` cells and each
    cell into two right triangles along its south-west/north-east diagonal.

    ``unit_square`` is (0,1)^2; ``lshape_sw`` is (-1,1)^2 minus
    [0,1)x(-1,0]; ``lshape_ne`` is (-1,1)^2 minus [0,1)x[0,1).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    h = 1.0 / n
    if domain_id == "unit_square":
        v, t = _grid(0.0, 0.0, n, n, h, lambda x, y: True)
    elif domain_id == "lshape_sw":
        v, t = _grid(-1.0, -1.0, 2 * n, 2 * n, h, lambda x, y: not (x > 0 and y < 0))
    elif domain_id == "lshape_ne":
        v, t = _grid(-1.0, -1.0, 2 * n, 2 * n, h, lambda x, y: not (x > 0 and y > 0))
    else:
        raise ValueError(f"unknown domain {domain_id!r}; expected one of {DOMAINS}")
    return TriangleMesh.from_arrays(v, t)


def domain_area(domain_id: str) -> float:
    return {"unit_square": 1.0, "lshape_sw": 3.0, "lshape_ne": 3.0}[domain_id]


# -- refinement --------------------------------------------------------------

def _closure(mesh: TriangleMesh, edge_marked: np.ndarray) -> None:
    """Mark refinement edges until every element with a marked edge has its
    refinement edge marked.  Works in place on ``edge_marked``."""
    ee = mesh.edge_elements
    ref = mesh.refinement_edge
    stack = list(np.flatnonzero(edge_marked))
    cap = 10 * mesh.n_elements + len(stack)
    steps = 0
    while stack:
        steps += 1
        if steps > cap:
            raise MeshError("conformity closure exceeded its iteration cap")
        e = stack.pop()
        for t in ee[e]:
            if t < 0:
                continue
            r = ref[t]
            if not edge_marked[r]:
                edge_marked[r] = True
                stack.append(r)


def bisect(mesh: TriangleMesh, marked, return_parents: bool = False):
    """Refine ``marked`` elements by longest-edge bisection.

    Each marked element is bisected through its refinement edge.  The
    closure marks refinement edges of neighbors recursively, so every edge
    that receives a midpoint is split by both adjacent elements.  An element
    whose other edges are also marked bisects the corresponding child once
    more through that edge.

    Existing vertices keep their indices and midpoints are appended.  With
    ``return_parents`` the result is ``(mesh, parents)`` where ``parents``
    holds the two endpoints of the edge split by each new vertex.
    """
    marked = np.unique(np.asarray(list(marked) if isinstance(marked, (set, frozenset))
                                  else marked, dtype=np.int64))
    if marked.size == 0:
        raise ValueError("no elements marked for refinement")
    if marked.min() < 0 or marked.max() >= mesh.n_elements:
        raise IndexError("marked element index out of range")

    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[mesh.refinement_edge[marked]] = True
    _closure(mesh, edge_marked)

    split_edges = np.flatnonzero(edge_marked)
    midpoint = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint[split_edges] = mesh.n_vertices + np.arange(len(split_edges))
    new_vertices = np.vstack([
        mesh.vertices,
        0.5 * (mesh.vertices[mesh.edges[split_edges, 0]]
               + mesh.vertices[mesh.edges[split_edges, 1]]),
    ])

    el = mesh.elements
    elem_mid = midpoint[mesh.element_edges]  # (M, 3), -1 where not split
    refined = elem_mid.max(axis=1) >= 0
    keep = el[~refined]

    idx = np.flatnonzero(refined)
    # rotate so the refinement edge is local edge 0 (opposite vertex 0)
    k = np.argmax(mesh.element_edges[idx] == mesh.refinement_edge[idx, None], axis=1)
    rot = (k[:, None] + np.arange(3)) % 3
    v = np.take_along_axis(el[idx], rot, axis=1)
    m = np.take_along_axis(elem_mid[idx], rot, axis=1)
    v0, v1, v2 = v.T
    m0, m1, m2 = m.T  # m0 on (v1,v2), m1 on (v2,v0), m2 on (v0,v1)

    children = []
    # child containing side (v0, v1)
    a = m2 < 0
    children.append(np.column_stack([v0[a], v1[a], m0[a]]))
    b = ~a
    children.append(np.column_stack([m0[b], v0[b], m2[b]]))
    children.append(np.column_stack([m0[b], m2[b], v1[b]]))
    # child containing side (v2, v0)
    a = m1 < 0
    children.append(np.column_stack([m0[a], v2[a], v0[a]]))
    b = ~a
    children.append(np.column_stack([m0[b], v2[b], m1[b]]))
    children.append(np.column_stack([m0[b], m1[b], v0[b]]))

    # keep children of one parent adjacent: stable order by parent
    parent = np.concatenate([idx[m2 < 0], idx[m2 >= 0], idx[m2 >= 0],
                             idx[m1 < 0], idx[m1 >= 0], idx[m1 >= 0]])
    new = np.vstack(children)
    order = np.argsort(parent, kind="stable")
    new_elements = np.vstack([keep, new[order]])
    refined_mesh = TriangleMesh.from_arrays(new_vertices, new_elements)
    if return_parents:
        return refined_mesh, mesh.edges[split_edges].copy()
    return refined_mesh


def prolongate(coefficients: np.ndarray, parents: np.ndarray) -> np.ndarray:
    """Extend P1 vertex values to the midpoints appended by :func:`bisect`."""
    c = np.asarray(coefficients, dtype=float)
    return np.concatenate([c, 0.5 * (c[parents[:, 0]] + c[parents[:, 1]])])


def uniform_refine(mesh: TriangleMesh) -> TriangleMesh:
    """Two passes of bisection of all elements (h halves)."""
    for _ in range(2):
        mesh = bisect(mesh, np.arange(mesh.n_elements))
    return mesh


# -- export ------------------------------------------------------------------

def write_mesh(mesh: TriangleMesh, coord_path, elem_path) -> None:
    """Write ``x y`` coordinate lines and 1-based vertex triples."""
    np.savetxt(coord_path, mesh.vertices, fmt="%.16e")
    np.savetxt(elem_path, mesh.elements + 1, fmt="%d")


def read_mesh(coord_path, elem_path) -> TriangleMesh:
    vertices = np.loadtxt(Path(coord_path), ndmin=2)
    elements = np.loadtxt(Path(elem_path), dtype=np.int64, ndmin=2) - 1
    return TriangleMesh.from_arrays(vertices, elements)

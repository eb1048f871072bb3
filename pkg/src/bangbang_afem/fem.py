"""P1 finite elements: assembly, quadrature-based loads and Dirichlet solves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriangleMesh
from .quadrature import QuadratureRule, degree19_rule


class SolverError(RuntimeError):
    """The linear solver did not reach its tolerance within the iteration cap."""


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Continuous piecewise-linear function given by its vertex values."""

    mesh: TriangleMesh
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.mesh.n_vertices,):
            raise ValueError("one coefficient per vertex expected")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def interpolate(cls, mesh: TriangleMesh, g) -> "FeFunction":
        return cls(mesh, g(mesh.vertices[:, 0], mesh.vertices[:, 1]))

    def evaluate(self, t: int, bary) -> float:
        """Value at barycentric point ``bary`` of element ``t``."""
        return float(np.dot(self.coefficients[self.mesh.elements[t]], bary))

    def gradient(self, t: int) -> np.ndarray:
        return self.gradients()[t]

    def gradients(self) -> np.ndarray:
        """(M, 2) elementwise constant gradients."""
        g = hat_gradients(self.mesh)
        return np.einsum("mk,mkd->md", self.coefficients[self.mesh.elements], g)

    def local_values(self) -> np.ndarray:
        """(M, 3) vertex values per element."""
        return self.coefficients[self.mesh.elements]

    def at_quadrature(self, rule: QuadratureRule | None = None) -> np.ndarray:
        """(M, Q) values at the quadrature nodes of every element."""
        rule = rule or degree19_rule()
        return self.local_values() @ rule.points.T

    def is_in_v0(self) -> bool:
        return bool(np.all(self.coefficients[self.mesh.boundary_vertex] == 0.0))


def hat_gradients(mesh: TriangleMesh) -> np.ndarray:
    """(M, 3, 2) gradients of the three local hat functions."""
    cache = mesh.__dict__.setdefault("_fem_cache", {})
    if "grad" not in cache:
        p = mesh.element_points
        # grad(lambda_k) = rot(p_{k+2} - p_{k+1}) / (2|T|) with rot(x, y) = (-y, x)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * mesh.areas[:, None, None])
        g.setflags(write=False)
        cache["grad"] = g
    return cache["grad"]


def quadrature_points(mesh: TriangleMesh, rule: QuadratureRule | None = None):
    """(M, Q) arrays of x and y coordinates of the element quadrature nodes."""
    rule = rule or degree19_rule()
    cache = mesh.__dict__.setdefault("_fem_cache", {})
    key = ("qp", id(rule))
    if key not in cache:
        p = mesh.element_points
        x = p[:, :, 0] @ rule.points.T
        y = p[:, :, 1] @ rule.points.T
        cache[key] = (x, y)
    return cache[key]


def evaluate_field(g, x, y, what="field") -> np.ndarray:
    vals = np.broadcast_to(np.asarray(g(x, y), dtype=float), np.shape(x))
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"non-finite value of {what} at a quadrature node")
    return vals


def _scatter(mesh: TriangleMesh, local: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_vertices
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh: TriangleMesh) -> sp.csr_matrix:
    """Exact P1 stiffness matrix (all vertices, no boundary elimination)."""
    g = hat_gradients(mesh)
    local = np.einsum("mid,mjd->mij", g, g) * mesh.areas[:, None, None]
    return _scatter(mesh, local)


def assemble_mass(mesh: TriangleMesh) -> sp.csr_matrix:
    """Exact P1 mass matrix."""
    block = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * block
    return _scatter(mesh, local)


def local_load(mesh: TriangleMesh, values: np.ndarray,
               rule: QuadratureRule | None = None) -> np.ndarray:
    """(M, 3) element integrals of ``g * phi_k`` from node values ``(M, Q)``."""
    rule = rule or degree19_rule()
    return (values * rule.weights) @ rule.points * mesh.areas[:, None]


def scatter_vector(mesh: TriangleMesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(),
                       minlength=mesh.n_vertices)


def assemble_load(mesh: TriangleMesh, g, rule: QuadratureRule | None = None) -> np.ndarray:
    """Load vector ``(g, phi_i)`` by quadrature on every element."""
    rule = rule or degree19_rule()
    x, y = quadrature_points(mesh, rule)
    vals = evaluate_field(g, x, y)
    return scatter_vector(mesh, local_load(mesh, vals, rule))


def integrate(mesh: TriangleMesh, values: np.ndarray,
              rule: QuadratureRule | None = None) -> np.ndarray:
    """Per-element integrals of node values ``(M, Q)``."""
    rule = rule or degree19_rule()
    return values @ rule.weights * mesh.areas


@dataclass(frozen=True, eq=False)
class SparseSpdSystem:
    """Dirichlet-reduced system on the interior vertices."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.free)


def reduce_dirichlet(stiffness, load, mesh: TriangleMesh) -> SparseSpdSystem:
    free = mesh.interior_vertices
    if stiffness.shape != (mesh.n_vertices, mesh.n_vertices) or len(load) != mesh.n_vertices:
        raise ValueError("stiffness/load dimensions do not match the mesh")
    a = stiffness[free][:, free].tocsr()
    return SparseSpdSystem(a, np.asarray(load, dtype=float)[free], free)


def solve_dirichlet(stiffness, load, mesh: TriangleMesh, *, tol: float = 1e-12,
                    maxiter: int | None = None, x0: np.ndarray | None = None,
                    system: SparseSpdSystem | None = None) -> FeFunction:
    """Galerkin solution in the P1 space with zero boundary values.

    Jacobi-preconditioned CG on the reduced system, stopped when the
    residual drops below ``tol * ||load||``.  ``x0`` (full vertex vector)
    warm-starts the iteration.
    """
    if system is None:
        system = reduce_dirichlet(stiffness, load, mesh)
        b = system.rhs
    else:
        b = np.asarray(load, dtype=float)[system.free]
    coef = np.zeros(mesh.n_vertices)
    n = system.dimension
    if n == 0:
        return FeFunction(mesh, coef)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return FeFunction(mesh, coef)
    a = system.matrix
    diag = a.diagonal()
    precond = sp.diags(1.0 / diag)
    start = None if x0 is None else np.asarray(x0, dtype=float)[system.free]
    x, info = spla.cg(a, b, x0=start, rtol=tol, atol=0.0,
                      maxiter=maxiter or 10 * n, M=precond)
    if info != 0:
        raise SolverError(f"CG did not converge (info={info}, n={n})")
    coef[system.free] = x
    return FeFunction(mesh, coef)


def l2_norm(f: FeFunction) -> float:
    m = assemble_mass(f.mesh)
    return float(np.sqrt(f.coefficients @ (m @ f.coefficients)))

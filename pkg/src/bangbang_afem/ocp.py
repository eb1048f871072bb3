"""Variationally discretized bang-bang control problem.

The discrete control is never stored as a finite element function.  It is
the pointwise image of a sign carrier (the discrete adjoint): ``a`` where the
carrier is positive, ``b`` where it is negative.  Because the carrier is
linear on each element, every element splits into at most three
sub-triangles on which the control is constant, so all control integrals
are evaluated exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .fem import (FeFunction, assemble_load, assemble_mass, assemble_stiffness,
                  reduce_dirichlet, solve_dirichlet)
from .mesh import TriangleMesh
from .quadrature import QuadratureRule, degree19_rule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlBounds:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"control bounds need a < b, got a={self.a}, b={self.b}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.a + self.b)

    def characterize(self, p) -> np.ndarray:
        """Pointwise optimal control for adjoint values ``p``."""
        p = np.asarray(p, dtype=float)
        return np.where(p > 0, self.a, np.where(p < 0, self.b, self.midpoint))


# -- sign partitions ---------------------------------------------------------

_EYE = np.eye(3)


@dataclass(frozen=True, eq=False)
class Partition:
    """Sub-triangles of a batch of triangles on which a linear function has
    constant sign.

    ``bary[j]`` holds, row by row, the barycentric coordinates (relative to
    the parent triangle ``parent[j]``) of the three vertices of piece ``j``;
    ``ratio[j]`` is its area divided by the parent's area; ``tag[j]`` is the
    sign (+1, -1 or 0) of the function inside the piece.
    """

    parent: np.ndarray
    bary: np.ndarray
    tag: np.ndarray

    @cached_property
    def ratio(self) -> np.ndarray:
        # degenerate pieces (cut through a vertex) may come out as -1e-17
        return np.maximum(np.linalg.det(self.bary), 0.0)


def split_by_sign(values: np.ndarray) -> Partition:
    """Split triangles with vertex values ``values`` (K, 3) along the zero line.

    A triangle with one sign (zeros allowed on vertices) stays whole.  A
    zero vertex with opposite signs on the other two gives two pieces; a
    lone vertex opposite two of the other sign gives three.
    """
    values = np.asarray(values, dtype=float)
    pos = values > 0
    neg = values < 0
    npos = pos.sum(axis=1)
    nneg = neg.sum(axis=1)
    mixed = (npos > 0) & (nneg > 0)
    nzero = 3 - npos - nneg

    parents, barys, tags = [], [], []

    whole = np.flatnonzero(~mixed)
    parents.append(whole)
    barys.append(np.broadcast_to(_EYE, (len(whole), 3, 3)))
    tags.append(np.where(npos[whole] > 0, 1, np.where(nneg[whole] > 0, -1, 0)))

    # zero vertex z, values of opposite sign on the other two
    idx = np.flatnonzero(mixed & (nzero == 1))
    if idx.size:
        z = np.argmax(values[idx] == 0, axis=1)
        i1, i2 = (z + 1) % 3, (z + 2) % 3
        v1 = values[idx, i1]
        v2 = values[idx, i2]
        t = v1 / (v1 - v2)
        ez, e1, e2 = _EYE[z], _EYE[i1], _EYE[i2]
        c = (1 - t)[:, None] * e1 + t[:, None] * e2
        parents += [idx, idx]
        barys += [np.stack([ez, e1, c], axis=1), np.stack([ez, c, e2], axis=1)]
        tags += [np.sign(v1).astype(int), np.sign(v2).astype(int)]

    # lone vertex i0 against two of the other sign, no zeros
    idx = np.flatnonzero(mixed & (nzero == 0))
    if idx.size:
        lone = np.where(npos[idx] == 1, np.argmax(pos[idx], axis=1),
                        np.argmax(neg[idx], axis=1))
        i0, i1, i2 = lone, (lone + 1) % 3, (lone + 2) % 3
        v0 = values[idx, i0]
        v1 = values[idx, i1]
        v2 = values[idx, i2]
        t1 = v0 / (v0 - v1)
        t2 = v0 / (v0 - v2)
        e0, e1, e2 = _EYE[i0], _EYE[i1], _EYE[i2]
        c1 = (1 - t1)[:, None] * e0 + t1[:, None] * e1
        c2 = (1 - t2)[:, None] * e0 + t2[:, None] * e2
        s0 = np.sign(v0).astype(int)
        s1 = np.sign(v1).astype(int)
        parents += [idx, idx, idx]
        barys += [np.stack([e0, c1, c2], axis=1),
                  np.stack([c1, e1, e2], axis=1),
                  np.stack([c1, e2, c2], axis=1)]
        tags += [s0, s1, s1]

    parent = np.concatenate(parents).astype(np.int64)
    bary = np.concatenate([np.asarray(b, dtype=float).reshape(-1, 3, 3) for b in barys])
    tag = np.concatenate(tags).astype(np.int64)
    order = np.argsort(parent, kind="stable")
    return Partition(parent[order], bary[order], tag[order])


def refine_partition(outer: Partition, inner_values: np.ndarray):
    """Split the pieces of ``outer`` by a second linear function whose vertex
    values on the parents are ``inner_values`` (K, 3).

    Returns the refined partition (same parents, ``tag`` is the sign of the
    second function) and, per refined piece, the index of its outer piece.
    """
    piece_vals = np.einsum("jab,jb->ja", outer.bary, inner_values[outer.parent])
    inner = split_by_sign(piece_vals)
    bary = inner.bary @ outer.bary[inner.parent]
    return Partition(outer.parent[inner.parent], bary, inner.tag), inner.parent


@dataclass(frozen=True)
class SignPartition:
    """Sign regions of a linear function on one element."""

    element: int
    triangles: tuple  # (3, 2) coordinate arrays
    tags: tuple       # '+', '-', '0'
    areas: tuple


_TAG = {1: "+", -1: "-", 0: "0"}


def sign_partition(p: FeFunction, t: int) -> SignPartition:
    mesh = p.mesh
    part = split_by_sign(p.local_values()[t][None, :])
    pts = mesh.element_points[t]
    tris = tuple(b @ pts for b in part.bary)
    areas = tuple(float(r * mesh.areas[t]) for r in part.ratio)
    return SignPartition(int(t), tris, tuple(_TAG[int(s)] for s in part.tag), areas)


# -- controls ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BangBangControl:
    """Control ``a`` where ``adjoint > 0``, ``b`` where ``adjoint < 0``."""

    bounds: ControlBounds
    adjoint: FeFunction
    zero_set_value: float | None = None

    def __post_init__(self):
        if self.zero_set_value is None:
            object.__setattr__(self, "zero_set_value", self.bounds.midpoint)
        elif not self.bounds.a <= self.zero_set_value <= self.bounds.b:
            raise ValueError("zero_set_value must lie in [a, b]")

    @classmethod
    def constant(cls, bounds: ControlBounds, mesh: TriangleMesh, which: str = "a"):
        """Control identically ``a`` (or ``b``) via a constant carrier."""
        sign = {"a": 1.0, "b": -1.0}[which]
        return cls(bounds, FeFunction(mesh, np.full(mesh.n_vertices, sign)))

    @property
    def mesh(self) -> TriangleMesh:
        return self.adjoint.mesh

    def value_of_tag(self, tag) -> np.ndarray:
        tag = np.asarray(tag)
        return np.where(tag > 0, self.bounds.a,
                        np.where(tag < 0, self.bounds.b, self.zero_set_value))

    @cached_property
    def partition(self) -> Partition:
        return split_by_sign(self.adjoint.local_values())

    @cached_property
    def piece_values(self) -> np.ndarray:
        return self.value_of_tag(self.partition.tag)

    @cached_property
    def piece_areas(self) -> np.ndarray:
        return self.partition.ratio * self.mesh.areas[self.partition.parent]

    def __call__(self, t: int, bary) -> float:
        """Control value at a barycentric point of element ``t``."""
        return float(self.value_of_tag(np.sign(self.adjoint.evaluate(t, bary))))

    @cached_property
    def local_moments(self) -> np.ndarray:
        """(M, 3) exact integrals of ``u * phi_k`` over every element."""
        part = self.partition
        # phi_k is linear on a piece: integral = area * mean of its vertex values
        w = (self.piece_values * self.piece_areas)[:, None] * part.bary.mean(axis=1)
        out = np.zeros((self.mesh.n_elements, 3))
        np.add.at(out, part.parent, w)
        return out

    @cached_property
    def local_l2sq(self) -> np.ndarray:
        return np.bincount(self.partition.parent,
                           weights=self.piece_values ** 2 * self.piece_areas,
                           minlength=self.mesh.n_elements)

    @cached_property
    def local_integral(self) -> np.ndarray:
        return np.bincount(self.partition.parent,
                           weights=self.piece_values * self.piece_areas,
                           minlength=self.mesh.n_elements)

    def load(self) -> np.ndarray:
        """Global vector ``(u, phi_i)``."""
        return np.bincount(self.mesh.elements.ravel(), weights=self.local_moments.ravel(),
                           minlength=self.mesh.n_vertices)

    def quadrature(self, rule: QuadratureRule | None = None):
        """Quadrature on all pieces.

        Returns ``(parent, x, y, w, u)``: parent element per piece, node
        coordinates and absolute weights (each ``(J, Q)``), and the constant
        control value per piece.
        """
        rule = rule or degree19_rule()
        part = self.partition
        lam = np.einsum("qa,jab->jqb", rule.points, part.bary)  # T-barycentric
        pts = self.mesh.element_points[part.parent]               # (J, 3, 2)
        x = np.einsum("jqb,jb->jq", lam, pts[:, :, 0])
        y = np.einsum("jqb,jb->jq", lam, pts[:, :, 1])
        w = self.piece_areas[:, None] * rule.weights[None, :]
        return part.parent, x, y, w, self.piece_values


def control_integrals(ctrl: BangBangControl, t: int):
    """Exact ``(int_T u phi_k for k=0..2, int_T u^2)`` on element ``t``."""
    return ctrl.local_moments[t].copy(), float(ctrl.local_l2sq[t])


def l1_distance(c1: BangBangControl, c2: BangBangControl, per_element: bool = False):
    """Exact ``||u1 - u2||_{L^1}`` for two controls on the same mesh."""
    if c1.mesh is not c2.mesh:
        raise ValueError("controls live on different meshes")
    inner, src = refine_partition(c1.partition, c2.adjoint.local_values())
    v1 = c1.piece_values[src]
    v2 = c2.value_of_tag(inner.tag)
    area = inner.ratio * c1.mesh.areas[inner.parent]
    local = np.bincount(inner.parent, weights=np.abs(v1 - v2) * area,
                        minlength=c1.mesh.n_elements)
    return local if per_element else float(local.sum())


# -- optimality system -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OcpSolution:
    state: FeFunction
    adjoint: FeFunction
    control: BangBangControl
    iterations: int
    converged: bool
    increments: tuple = ()
    nonunique: bool = False

    @property
    def mesh(self) -> TriangleMesh:
        return self.state.mesh


@dataclass
class DiscreteProblem:
    """Level-wide data shared by all fixed-point iterations on one mesh."""

    mesh: TriangleMesh
    problem: object
    rule: QuadratureRule = field(default_factory=degree19_rule)

    def __post_init__(self):
        mesh = self.mesh
        self.stiffness = assemble_stiffness(mesh)
        self.mass = assemble_mass(mesh)
        self.system = reduce_dirichlet(self.stiffness, np.zeros(mesh.n_vertices), mesh)
        f = getattr(self.problem, "f", None)
        self.f_load = (np.zeros(mesh.n_vertices) if f is None
                       else assemble_load(mesh, f, self.rule))
        self.yd_load = assemble_load(mesh, self.problem.y_omega, self.rule)

    def solve_state(self, control: BangBangControl, *, tol=1e-12, x0=None) -> FeFunction:
        return solve_dirichlet(self.stiffness, self.f_load + control.load(), self.mesh,
                               tol=tol, x0=x0, system=self.system)

    def solve_state_load(self, control_load, *, tol=1e-12, x0=None) -> FeFunction:
        return solve_dirichlet(self.stiffness, self.f_load + control_load, self.mesh,
                               tol=tol, x0=x0, system=self.system)

    def solve_adjoint(self, state: FeFunction, *, tol=1e-12, x0=None) -> FeFunction:
        rhs = self.mass @ state.coefficients - self.yd_load
        return solve_dirichlet(self.stiffness, rhs, self.mesh, tol=tol, x0=x0,
                               system=self.system)


def _auto_damping(theta: float, increments: list, streak: int):
    """Update the relaxation factor from the observed increment ratio.

    The linearized sweep is ``e -> -K e`` with ``K`` positive semidefinite,
    so a relaxed sweep contracts by ``|1 - theta - theta * lam|`` on an
    eigenvalue ``lam`` of ``K``.  The largest ``lam`` is recovered from the
    last ratio and ``theta = 2 / (2 + 1.25 * lam)`` balances both ends of
    ``[0, lam]``.
    """
    if len(increments) < 4 or increments[-2] == 0:
        return theta, streak
    ratio = increments[-1] / increments[-2]
    streak = streak + 1 if ratio > 0.5 else 0
    if streak < 2:
        return theta, streak
    lam = (ratio + 1.0 - theta) / theta
    return 2.0 / (2.0 + 1.25 * lam), 0


def fixed_point_solve(problem, mesh: TriangleMesh, tol: float = 1e-10, max_iter: int = 100,
                      *, cg_tol: float = 1e-12, damping="auto", initial="a",
                      discrete: DiscreteProblem | None = None) -> OcpSolution:
    """Solve the discrete optimality system by successive substitution.

    Each sweep solves the state for the current control, the adjoint for
    that state, and replaces the control by the pointwise characterization
    of the new adjoint.  Iteration stops once the L^1 change of the control
    is at most ``tol * (b - a) * |Omega|``.

    ``damping`` in (0, 1] relaxes the update: the control entering the state
    equation is ``damping * new + (1 - damping) * old`` and the increment is
    measured between consecutive bang-bang controls.  ``"auto"`` starts
    undamped and relaxes only once the sweeps contract slowly.

    ``initial`` is ``"a"`` or ``"b"`` for a constant first control, or a
    sign carrier (``FeFunction`` on ``mesh``) whose characterization is used.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    auto = damping == "auto"
    theta = 1.0 if auto else float(damping)
    if not 0 < theta <= 1:
        raise ValueError("damping must lie in (0, 1] or be 'auto'")
    bounds = problem.bounds
    dp = discrete or DiscreteProblem(mesh, problem)
    if isinstance(initial, FeFunction):
        if initial.mesh is not mesh:
            raise ValueError("initial carrier lives on a different mesh")
        control = BangBangControl(bounds, initial)
    else:
        control = BangBangControl.constant(bounds, mesh, initial)
    u_load = control.load()
    threshold = tol * (bounds.b - bounds.a) * mesh.total_area

    y = p = None
    increments = []
    converged = False
    nonunique = False
    streak = 0
    k = 0
    for k in range(1, max_iter + 1):
        y_new = dp.solve_state_load(u_load, tol=cg_tol, x0=None if y is None else y.coefficients)
        p_new = dp.solve_adjoint(y_new, tol=cg_tol, x0=None if p is None else p.coefficients)
        new = BangBangControl(bounds, p_new)
        incr = l1_distance(new, control)
        increments.append(incr)
        log.debug("fixed point sweep %d: L1 increment %.3e (damping %.3f)", k, incr, theta)
        if y is not None and incr > threshold:
            dy = np.linalg.norm(y_new.coefficients - y.coefficients)
            if dy <= 1e-12 * max(np.linalg.norm(y_new.coefficients), 1e-300):
                nonunique = True
        y, p, control = y_new, p_new, new
        if incr <= threshold:
            converged = True
            break
        if auto:
            theta, streak = _auto_damping(theta, increments, streak)
        u_load = control.load() if theta == 1.0 else (
            theta * control.load() + (1.0 - theta) * u_load)
    if not converged:
        log.warning("fixed point iteration stopped after %d sweeps (increment %.3e)",
                    k, increments[-1])
    return OcpSolution(y, p, control, k, converged, tuple(increments),
                       nonunique and not converged)

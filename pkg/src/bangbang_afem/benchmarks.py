"""Benchmark problems with manufactured data and the matching error measures.

ex1 : unit square, smooth exact solution.
ex2 : L-shaped domain with a corner singularity ``rho^(2/3) sin(2 omega / 3)``
      and a control switching on the circle ``rho = 1/2``.
ex3 : L-shaped domain, unbounded desired state, no exact solution.

Fields take coordinate arrays ``(x1, x2)`` and return arrays of the same shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fem import evaluate_field, quadrature_points
from .mesh import TriangleMesh, domain_area
from .ocp import ControlBounds, OcpSolution
from .quadrature import QuadratureRule, degree19_rule

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

PI = np.pi


@dataclass(frozen=True)
class ExactSolution:
    y: Field
    grad_y: Field  # returns an array with a trailing axis of length 2
    p: Field
    u: Field
    laplace_y: Optional[Field] = None
    laplace_p: Optional[Field] = None


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain_id: str
    bounds: ControlBounds
    f: Optional[Field]
    y_omega: Field
    exact: Optional[ExactSolution] = None

    @property
    def area(self) -> float:
        return domain_area(self.domain_id)

    def require_exact(self) -> ExactSolution:
        if self.exact is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        return self.exact


def _manufacture(name, domain_id, bounds, y, grad_y, lap_y, p, lap_p) -> ProblemSpec:
    def u(x1, x2):
        return bounds.characterize(p(x1, x2))

    def f(x1, x2):
        return -lap_y(x1, x2) - u(x1, x2)

    def y_omega(x1, x2):
        return y(x1, x2) + lap_p(x1, x2)

    exact = ExactSolution(y=y, grad_y=grad_y, p=p, u=u, laplace_y=lap_y, laplace_p=lap_p)
    return ProblemSpec(name, domain_id, bounds, f, y_omega, exact)


# -- ex1 ---------------------------------------------------------------------

def problem_ex1() -> ProblemSpec:
    def y(x1, x2):
        return np.sin(PI * x1) * np.sin(PI * x2)

    def grad_y(x1, x2):
        return PI * np.stack([np.cos(PI * x1) * np.sin(PI * x2),
                              np.sin(PI * x1) * np.cos(PI * x2)], axis=-1)

    def lap_y(x1, x2):
        return -2 * PI ** 2 * y(x1, x2)

    def p(x1, x2):
        return -np.sin(2 * PI * x1) * np.sin(2 * PI * x2) / (8 * PI ** 2)

    def lap_p(x1, x2):
        return np.sin(2 * PI * x1) * np.sin(2 * PI * x2)

    return _manufacture("ex1", "unit_square", ControlBounds(-1.0, 1.0),
                        y, grad_y, lap_y, p, lap_p)


# -- ex2 ---------------------------------------------------------------------

def polar(x1, x2):
    """``(rho, omega)`` with omega in [0, 2 pi); on the L-shape omega <= 3 pi / 2."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    rho = np.hypot(x1, x2)
    omega = np.arctan2(x2, x1)
    omega = np.where(omega < 0, omega + 2 * PI, omega)
    return rho, omega


def _ex2_parts(x1, x2):
    """Factors of y = s * w with s smooth and w = rho^(2/3) sin(2 omega / 3)
    harmonic, together with their first derivatives."""
    rho, om = polar(x1, x2)
    a1 = PI * (np.asarray(x1) + 1) / 2
    a2 = PI * (np.asarray(x2) + 1) / 2
    s = np.sin(a1) * np.sin(a2)
    ds = 0.5 * PI * np.stack([np.cos(a1) * np.sin(a2), np.sin(a1) * np.cos(a2)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = rho ** (2 / 3) * np.sin(2 * om / 3)
        scale = (2 / 3) * rho ** (-1 / 3)
        dw = np.stack([-scale * np.sin(om / 3), scale * np.cos(om / 3)], axis=-1)
    return rho, s, ds, w, dw


def _ex2_state(x1, x2):
    """``(rho, y)`` without derivatives."""
    rho, om = polar(x1, x2)
    s = np.sin(PI * (np.asarray(x1) + 1) / 2) * np.sin(PI * (np.asarray(x2) + 1) / 2)
    return rho, s * rho ** (2 / 3) * np.sin(2 * om / 3)


def problem_ex2() -> ProblemSpec:
    def y(x1, x2):
        return _ex2_state(x1, x2)[1]

    def grad_y(x1, x2):
        _, s, ds, w, dw = _ex2_parts(x1, x2)
        return w[..., None] * ds + s[..., None] * dw

    def lap_y(x1, x2):
        # lap(s w) = w lap(s) + 2 grad(s).grad(w), lap(w) = 0, lap(s) = -pi^2/2 s
        _, s, ds, w, dw = _ex2_parts(x1, x2)
        return -0.5 * PI ** 2 * s * w + 2 * np.sum(ds * dw, axis=-1)

    def p(x1, x2):
        rho, yy = _ex2_state(x1, x2)
        return (0.5 - rho) * yy

    def lap_p(x1, x2):
        # lap((1/2 - rho) y) = (1/2 - rho) lap(y) - 2 d(y)/d(rho) - y / rho
        rho, s, ds, w, dw = _ex2_parts(x1, x2)
        yy = s * w
        gy = w[..., None] * ds + s[..., None] * dw
        with np.errstate(divide="ignore", invalid="ignore"):
            dy_drho = (np.asarray(x1) * gy[..., 0] + np.asarray(x2) * gy[..., 1]) / rho
            return (0.5 - rho) * lap_y(x1, x2) - 2 * dy_drho - yy / rho

    return _manufacture("ex2", "lshape_sw", ControlBounds(-1.0, 1.0),
                        y, grad_y, lap_y, p, lap_p)


# -- ex3 ---------------------------------------------------------------------

def problem_ex3() -> ProblemSpec:
    def y_omega(x1, x2):
        r2 = np.asarray(x1, dtype=float) ** 2 + np.asarray(x2, dtype=float) ** 2
        with np.errstate(divide="ignore"):
            return r2 ** -0.25 - 10 * np.sin(x1 * x2)

    return ProblemSpec("ex3", "lshape_ne", ControlBounds(-0.5, 0.5), None, y_omega, None)


PROBLEMS = {"ex1": problem_ex1, "ex2": problem_ex2, "ex3": problem_ex3}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)}") from None


# -- error measures ----------------------------------------------------------

def local_errors_y(sol: OcpSolution, spec: ProblemSpec, rule=None) -> np.ndarray:
    """Per-element ``||y - y_l||_T^2``."""
    ex = spec.require_exact()
    rule = rule or degree19_rule()
    mesh = sol.mesh
    x, y = quadrature_points(mesh, rule)
    diff = evaluate_field(ex.y, x, y, "exact state") - sol.state.at_quadrature(rule)
    return diff ** 2 @ rule.weights * mesh.areas


def local_errors_p(sol: OcpSolution, spec: ProblemSpec, rule=None) -> np.ndarray:
    """Per-element max of ``|p - p_l|`` over quadrature nodes and vertices."""
    ex = spec.require_exact()
    rule = rule or degree19_rule()
    mesh = sol.mesh
    x, y = quadrature_points(mesh, rule)
    at_nodes = np.abs(evaluate_field(ex.p, x, y, "exact adjoint")
                      - sol.adjoint.at_quadrature(rule)).max(axis=1)
    v = mesh.vertices
    at_vertices = np.abs(ex.p(v[:, 0], v[:, 1]) - sol.adjoint.coefficients)
    return np.maximum(at_nodes, at_vertices[mesh.elements].max(axis=1))


def _subdivide(bary: np.ndarray) -> np.ndarray:
    """Split triangles (J, 3, 3) into four congruent children each."""
    a, b, c = bary[:, 0], bary[:, 1], bary[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    kids = [np.stack(t, axis=1) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
    return np.stack(kids, axis=1).reshape(-1, 3, 3)


def local_errors_u(sol: OcpSolution, spec: ProblemSpec, rule=None, *,
                   method: str = "partition", max_depth: int = 6) -> np.ndarray:
    """Per-element ``||u - u_l||_{L^1(T)}``.

    ``method="partition"`` integrates over the sign pieces of the discrete
    adjoint, on which ``u_l`` is constant.  Pieces on which the exact adjoint
    takes both signs at the nodes or vertices are subdivided (up to
    ``max_depth`` times) so that the exact switching curve is resolved by
    the composite rule.  Zeros are compatible with either sign, so pieces
    merely touching a boundary where the adjoint vanishes stay whole.
    ``method="plain"`` applies the rule to whole elements, evaluating ``u_l``
    pointwise; it serves as a cross-check.
    """
    ex = spec.require_exact()
    rule = rule or degree19_rule()
    mesh = sol.mesh
    ctrl = sol.control
    if method == "plain":
        x, y = quadrature_points(mesh, rule)
        uh = ctrl.value_of_tag(np.sign(sol.adjoint.at_quadrature(rule)))
        return np.abs(ex.u(x, y) - uh) @ rule.weights * mesh.areas
    if method != "partition":
        raise ValueError(f"unknown method {method!r}")

    part = ctrl.partition
    parent, bary, value = part.parent, part.bary, ctrl.piece_values
    pts = mesh.element_points
    out = np.zeros(mesh.n_elements)
    for depth in range(max_depth + 1):
        lam = np.einsum("qa,jab->jqb", rule.points, bary)
        x = np.einsum("jqb,jb->jq", lam, pts[parent, :, 0])
        y = np.einsum("jqb,jb->jq", lam, pts[parent, :, 1])
        pn = ex.p(x, y)
        u = spec.bounds.characterize(pn)
        area = np.linalg.det(bary) * mesh.areas[parent]
        vx = np.einsum("jab,jb->ja", bary, pts[parent, :, 0])
        vy = np.einsum("jab,jb->ja", bary, pts[parent, :, 1])
        sign = np.concatenate([pn, ex.p(vx, vy)], axis=1)
        varies = (sign > 0).any(axis=1) & (sign < 0).any(axis=1)
        if depth == max_depth:
            varies[:] = False
        done = ~varies
        contrib = np.abs(u[done] - value[done, None]) @ rule.weights * area[done]
        out += np.bincount(parent[done], weights=contrib, minlength=mesh.n_elements)
        if not varies.any():
            break
        parent = np.repeat(parent[varies], 4)
        value = np.repeat(value[varies], 4)
        bary = _subdivide(bary[varies])
    return out


def error_y_l2(sol: OcpSolution, spec: ProblemSpec, mesh: TriangleMesh | None = None) -> float:
    return float(np.sqrt(np.sum(local_errors_y(sol, spec))))


def error_p_linf(sol: OcpSolution, spec: ProblemSpec, mesh: TriangleMesh | None = None) -> float:
    return float(np.max(local_errors_p(sol, spec)))


def error_u_l1(sol: OcpSolution, spec: ProblemSpec, mesh: TriangleMesh | None = None,
               method: str = "partition") -> float:
    return float(np.sum(local_errors_u(sol, spec, method=method)))


def effectivity(total_estimate: float, error_u: float, error_y: float, error_p: float) -> float:
    """Estimator divided by the combined error ``(eu^2 + ey^2 + ep^2)^(1/2)``."""
    denom = np.sqrt(error_u ** 2 + error_y ** 2 + error_p ** 2)
    if denom == 0:
        raise ZeroDivisionError("all errors vanish; effectivity index undefined")
    return float(total_estimate / denom)


def zero_set_band(spec: ProblemSpec, mesh: TriangleMesh, eps: float = 1e-3,
                  rule: QuadratureRule | None = None) -> float:
    """Measure of ``{|p| <= eps}`` estimated by quadrature (diagnostic only)."""
    ex = spec.require_exact()
    rule = rule or degree19_rule()
    x, y = quadrature_points(mesh, rule)
    inside = (np.abs(ex.p(x, y)) <= eps).astype(float)
    return float(np.sum(inside @ rule.weights * mesh.areas))


__all__ = [
    "ExactSolution", "ProblemSpec", "problem_ex1", "problem_ex2", "problem_ex3",
    "get_problem", "polar", "local_errors_y", "local_errors_p", "local_errors_u",
    "error_y_l2", "error_p_linf", "error_u_l1", "effectivity", "zero_set_band",
]

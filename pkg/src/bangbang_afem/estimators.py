"""Residual a posteriori indicators for the discrete optimality system.

Per element ``T`` with diameter ``h`` (2D):

* state:          ``h^4 ||f + u_l||_T^2 + sum_e h^3 |e| [[grad y_l . n]]^2``
* adjoint (L2):   ``h^4 ||y_l - y_Omega||_T^2 + sum_e h^3 |e| [[grad p_l . n]]^2``
* adjoint (Linf): ``h ||y_l - y_Omega||_T + h max_e |[[grad p_l . n]]|``

Edge sums and maxima run over the interior edges of ``T``; boundary edges
carry no jump.  P1 gradients are elementwise constant, so every jump is a
single number per edge.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FeFunction, evaluate_field, quadrature_points
from .mesh import TriangleMesh, neighbors
from .ocp import OcpSolution
from .quadrature import QuadratureRule, degree19_rule


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Per-element indicators; ``total**2 = est_sq + adj_sq + adj_inf**2``."""

    est_sq: np.ndarray
    adj_sq: np.ndarray
    adj_inf: np.ndarray
    total: np.ndarray

    def __len__(self) -> int:
        return len(self.total)


@dataclass(frozen=True)
class GlobalEstimate:
    eta_st2: float
    eta_adj2: float
    eta_adj_inf: float
    iota: float
    total_E: float

    def reliability_bounds(self, beta: float = 1.0) -> tuple[float, float]:
        """Upper bounds (up to constants) from the reliability estimate.

        Returns ``(states, control)``: the bound for ``||y - y_l||^2 +
        ||p - p_l||_inf^2`` and the bound for ``||u - u_l||_{L1(S)}^2``.
        ``beta`` in (0, 1] is the exponent of the measure condition on the
        adjoint's level sets; it is not known for the benchmarks.  Diagnostic
        only, ``total_E`` uses the plain combination.
        """
        if not 0 < beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        ie = self.iota * self.eta_adj_inf
        q = 2.0 / (2.0 - beta)
        states = self.eta_st2 ** 2 + self.eta_adj2 + ie ** (beta + 1) + ie ** q
        control = (self.eta_st2 ** (2 * beta) + self.eta_adj2 ** beta
                   + ie ** (beta * (beta + 1)) + ie ** (beta * q))
        return float(states), float(control)


# -- jumps -------------------------------------------------------------------

def edge_normals(mesh: TriangleMesh) -> np.ndarray:
    """(E, 2) unit normals of all edges, pointing out of ``edge_elements[:, 0]``."""
    v = mesh.vertices[mesh.edges]
    d = v[:, 1] - v[:, 0]
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / mesh.edge_lengths[:, None]
    mid = v.mean(axis=1)
    out = mid - mesh.centroids[mesh.edge_elements[:, 0]]
    flip = np.einsum("ed,ed->e", n, out) < 0
    n[flip] *= -1
    return n


def jumps(f: FeFunction) -> np.ndarray:
    """Normal-derivative jump of ``f`` on every edge (0 on boundary edges)."""
    mesh = f.mesh
    g = f.gradients()
    plus, minus = mesh.edge_elements[:, 0], mesh.edge_elements[:, 1]
    inner = minus >= 0
    out = np.zeros(mesh.n_edges)
    n = edge_normals(mesh)[inner]
    out[inner] = np.einsum("ed,ed->e", n, g[plus[inner]] - g[minus[inner]])
    return out


def jump(f: FeFunction, e: int) -> float:
    """``n+ . grad f|T+ + n- . grad f|T-`` on interior edge ``e``."""
    mesh = f.mesh
    if not 0 <= e < mesh.n_edges:
        raise IndexError(f"edge {e} out of range")
    if mesh.edge_elements[e, 1] < 0:
        raise ValueError(f"edge {e} lies on the boundary")
    return float(jumps(f)[e])


# -- indicators --------------------------------------------------------------

def _jump_terms(f: FeFunction):
    """Per element: ``sum_e |e| j_e^2`` and ``max_e |j_e|`` over interior edges."""
    mesh = f.mesh
    j = jumps(f)
    ee = mesh.element_edges
    sq = (mesh.edge_lengths * j ** 2)[ee].sum(axis=1)
    return sq, np.abs(j)[ee].max(axis=1)


def _residual_state_sq(sol: OcpSolution, problem, rule: QuadratureRule) -> np.ndarray:
    """Per element ``||f + u_l||_T^2`` by quadrature on the control's sign pieces."""
    mesh = sol.mesh
    parent, x, y, w, u = sol.control.quadrature(rule)
    vals = np.broadcast_to(u[:, None], x.shape)
    if getattr(problem, "f", None) is not None:
        vals = vals + evaluate_field(problem.f, x, y, "f")
    return np.bincount(parent, weights=np.sum(vals ** 2 * w, axis=1),
                       minlength=mesh.n_elements)


def _residual_adjoint_sq(sol: OcpSolution, problem, rule: QuadratureRule) -> np.ndarray:
    """Per element ``||y_l - y_Omega||_T^2`` by quadrature on whole elements."""
    mesh = sol.mesh
    x, y = quadrature_points(mesh, rule)
    r = sol.state.at_quadrature(rule) - evaluate_field(problem.y_omega, x, y, "y_Omega")
    return r ** 2 @ rule.weights * mesh.areas


def state_indicators(sol: OcpSolution, problem, rule: QuadratureRule | None = None):
    """All ``E_{st,T}^2``."""
    rule = rule or degree19_rule()
    h = sol.mesh.diameters
    jsq, _ = _jump_terms(sol.state)
    return h ** 4 * _residual_state_sq(sol, problem, rule) + h ** 3 * jsq


def adjoint_indicators(sol: OcpSolution, problem, rule: QuadratureRule | None = None):
    """All ``(E_{adj,T}^2, E_{adj,inf,T})``."""
    rule = rule or degree19_rule()
    h = sol.mesh.diameters
    res = _residual_adjoint_sq(sol, problem, rule)
    jsq, jmax = _jump_terms(sol.adjoint)
    return h ** 4 * res + h ** 3 * jsq, h * np.sqrt(res) + h * jmax


def state_indicator(sol: OcpSolution, problem, t: int) -> float:
    return float(state_indicators(sol, problem)[t])


def adjoint_indicator_l2(sol: OcpSolution, problem, t: int) -> float:
    return float(adjoint_indicators(sol, problem)[0][t])


def adjoint_indicator_inf(sol: OcpSolution, problem, t: int) -> float:
    return float(adjoint_indicators(sol, problem)[1][t])


def iota(mesh: TriangleMesh) -> float:
    """``|log(max_T 1/h_T)|``."""
    return float(abs(np.log(np.max(1.0 / mesh.diameters))))


def combine(est_sq, adj_sq, adj_inf, iota_value: float = float("nan")):
    """Assemble the per-element field and the global estimate."""
    est_sq, adj_sq, adj_inf = (np.asarray(a, dtype=float) for a in (est_sq, adj_sq, adj_inf))
    if np.any(est_sq < 0) or np.any(adj_sq < 0) or np.any(adj_inf < 0):
        raise ValueError("indicators must be non-negative")
    total = np.sqrt(est_sq + adj_sq + adj_inf ** 2)
    field = IndicatorField(est_sq, adj_sq, adj_inf, total)
    eta_st2 = float(np.sqrt(est_sq.sum()))
    eta_adj2 = float(np.sqrt(adj_sq.sum()))
    eta_inf = float(adj_inf.max()) if adj_inf.size else 0.0
    total_E = float(np.sqrt(eta_st2 ** 2 + eta_inf ** 2 + eta_adj2 ** 2))
    return field, GlobalEstimate(eta_st2, eta_adj2, eta_inf, iota_value, total_E)


def compute_indicators(sol: OcpSolution, problem, rule: QuadratureRule | None = None):
    """Indicators of a discrete solution: ``(IndicatorField, GlobalEstimate)``."""
    rule = rule or degree19_rule()
    est_sq = state_indicators(sol, problem, rule)
    adj_sq, adj_inf = adjoint_indicators(sol, problem, rule)
    return combine(est_sq, adj_sq, adj_inf, iota(sol.mesh))


# -- local efficiency ---------------------------------------------------------

def star_matrix(mesh: TriangleMesh) -> sp.csr_matrix:
    """0/1 matrix whose row ``T`` selects the elements of the star of ``T``."""
    nb = neighbors(mesh)
    rows = np.repeat(np.arange(mesh.n_elements), 3)
    cols = nb.ravel()
    keep = cols >= 0
    rows = np.concatenate([rows[keep], np.arange(mesh.n_elements)])
    cols = np.concatenate([cols[keep], np.arange(mesh.n_elements)])
    m = mesh.n_elements
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))


def _star_max(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    nb = neighbors(mesh)
    padded = np.where(nb >= 0, values[np.maximum(nb, 0)], -np.inf)
    return np.maximum(values, padded.max(axis=1))


def _oscillation_sq(values: np.ndarray, weights: np.ndarray, parent: np.ndarray,
                    n: int) -> np.ndarray:
    """Per element ``||g - mean_T g||_T^2`` from node values and absolute weights."""
    vol = np.bincount(parent, weights=weights.sum(axis=1), minlength=n)
    mean = np.bincount(parent, weights=np.sum(values * weights, axis=1), minlength=n) / vol
    dev = values - mean[parent][:, None]
    return np.bincount(parent, weights=np.sum(dev ** 2 * weights, axis=1), minlength=n)


def efficiency_ratios(sol: OcpSolution, problem, field: IndicatorField,
                      rule: QuadratureRule | None = None) -> np.ndarray:
    """Per element ``E_T^2`` divided by the local error bound (d = 2).

    The bound is ``(1 + h^4 + h^2) ||y - y_l||^2_{N_T} + (1 + h^2)
    ||p - p_l||^2_{Linf(N_T)} + h^2 ||u - u_l||^2_{L1(N_T)}`` plus the
    oscillations ``sum_{T' in N_T} h^4 ||g - Pi g||^2_{T'}`` of the state
    residual source ``g = f + u_l`` and ``(h^4 + h^2) ||y_Omega - Pi y_Omega||^2_{T'}``,
    with ``Pi`` the mean value on ``T'`` and ``h = h_T``.  Bounded ratios
    under refinement are the empirical face of local efficiency.
    """
    from .benchmarks import local_errors_p, local_errors_u, local_errors_y

    rule = rule or degree19_rule()
    mesh = sol.mesh
    n = mesh.n_elements
    h = mesh.diameters
    s = star_matrix(mesh)
    ey = s @ local_errors_y(sol, problem, rule)
    ep = _star_max(mesh, local_errors_p(sol, problem, rule))
    eu = s @ local_errors_u(sol, problem, rule)

    parent, x, y, w, u = sol.control.quadrature(rule)
    g = np.broadcast_to(u[:, None], x.shape)
    if getattr(problem, "f", None) is not None:
        g = g + evaluate_field(problem.f, x, y, "f")
    osc_u = s @ _oscillation_sq(g, w, parent, n)
    xq, yq = quadrature_points(mesh, rule)
    yd = evaluate_field(problem.y_omega, xq, yq, "y_Omega")
    osc_yd = s @ _oscillation_sq(yd, mesh.areas[:, None] * rule.weights, np.arange(n), n)

    bound = ((1 + h ** 4 + h ** 2) * ey + (1 + h ** 2) * ep ** 2 + h ** 2 * eu ** 2
             + h ** 4 * osc_u + (h ** 4 + h ** 2) * osc_yd)
    return field.total ** 2 / bound


__all__ = [
    "IndicatorField", "GlobalEstimate", "edge_normals", "jumps", "jump",
    "state_indicators", "adjoint_indicators", "state_indicator",
    "adjoint_indicator_l2", "adjoint_indicator_inf", "iota", "combine",
    "compute_indicators", "star_matrix", "efficiency_ratios",
]

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bangbang_afem.benchmarks import ProblemSpec
from bangbang_afem.fem import FeFunction
from bangbang_afem.mesh import TriangleMesh, generate_domain, uniform_refine
from bangbang_afem.ocp import (BangBangControl, ControlBounds, DiscreteProblem, _auto_damping,
                               control_integrals, fixed_point_solve, l1_distance,
                               sign_partition, split_by_sign)

REF = TriangleMesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
finite = st.floats(-10, 10, allow_nan=False).filter(lambda v: abs(v) > 1e-6 or v == 0)


def carrier(values, mesh=REF):
    return FeFunction(mesh, np.asarray(values, dtype=float))


def test_bounds():
    assert ControlBounds(-1, 1).midpoint == 0
    with pytest.raises(ValueError):
        ControlBounds(1, 1)
    np.testing.assert_array_equal(ControlBounds(-0.5, 2).characterize([1, -1, 0]), [-0.5, 2, 0.75])


def test_partition_single_sign():
    sp_ = sign_partition(carrier([1, 1, 1]), 0)
    assert sp_.tags == ("+",)
    assert sp_.areas[0] == pytest.approx(0.5)


def test_partition_quarter():
    sp_ = sign_partition(carrier([-1, 1, 1]), 0)
    neg = [a for t, a in zip(sp_.tags, sp_.areas) if t == "-"]
    assert sum(neg) == pytest.approx(0.5 / 4)
    assert sum(sp_.areas) == pytest.approx(0.5)


def test_partition_zero_edge():
    sp_ = sign_partition(carrier([0, 0, 1]), 0)
    assert sp_.tags == ("+",)
    assert sp_.areas[0] == pytest.approx(0.5)


def test_partition_zero_vertex_split():
    sp_ = sign_partition(carrier([0, -1, 1]), 0)
    assert sorted(sp_.tags) == ["+", "-"]
    np.testing.assert_allclose(sp_.areas, 0.25)


@settings(max_examples=200, deadline=None)
@given(st.tuples(finite, finite, finite))
def test_partition_properties(values):
    values = np.array(values)
    part = split_by_sign(values[None, :])
    np.testing.assert_allclose(part.ratio.sum(), 1.0, rtol=1e-12)
    assert np.all(part.ratio >= -1e-15)
    # tag agrees with the sign of p at each piece's centroid
    for bary, tag in zip(part.bary, part.tag):
        if np.linalg.det(bary) < 1e-12:
            continue
        val = values @ bary.mean(axis=0)
        assert tag == np.sign(val) or (tag == 0 and abs(val) < 1e-12)


def test_control_integrals_examples():
    b = ControlBounds(-1, 1)
    mom, l2 = control_integrals(BangBangControl(b, carrier([1, 2, 3])), 0)
    np.testing.assert_allclose(mom, -0.5 / 3)
    assert l2 == pytest.approx(0.5)
    _, l2 = control_integrals(BangBangControl(b, carrier([-1, 1, 1])), 0)
    assert l2 == pytest.approx(0.5)
    _, l2 = control_integrals(BangBangControl(ControlBounds(0, 1), carrier([-1, 1, 1])), 0)
    assert l2 == pytest.approx(0.5 / 4)


@settings(max_examples=50, deadline=None)
@given(st.tuples(finite, finite, finite))
def test_moments_match_fine_quadrature(values):
    ctrl = BangBangControl(ControlBounds(-1, 2), carrier(values))
    # midpoint rule on a fine sub-grid of the reference triangle
    n = 300
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    x, y = (i.ravel() + 1 / 3) / n, (j.ravel() + 1 / 3) / n
    keep = x + y < 1
    x, y = x[keep], y[keep]
    lam = np.stack([1 - x - y, x, y], axis=1)
    u = ctrl.value_of_tag(np.sign(lam @ np.asarray(values)))
    w = 1.0 / n ** 2
    approx = np.array([np.sum(u * lam[:, k]) * w for k in range(3)])
    mom, _ = control_integrals(ctrl, 0)
    np.testing.assert_allclose(mom, approx, atol=0.02)


def test_l1_distance_exact():
    b = ControlBounds(-1, 1)
    c1 = BangBangControl(b, carrier([-1, 1, 1]))
    c2 = BangBangControl.constant(b, REF, "a")
    assert l1_distance(c1, c2) == pytest.approx(2 * 0.5 / 4)
    assert l1_distance(c2, c1) == pytest.approx(l1_distance(c1, c2))
    assert l1_distance(c1, c1) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=9, max_size=9), st.lists(finite, min_size=9, max_size=9))
def test_l1_distance_triangle_inequality(p, q):
    mesh = generate_domain("unit_square", 2)
    b = ControlBounds(-1, 1)
    c1 = BangBangControl(b, FeFunction(mesh, p))
    c2 = BangBangControl(b, FeFunction(mesh, q))
    c3 = BangBangControl.constant(b, mesh, "b")
    d12, d13, d23 = l1_distance(c1, c2), l1_distance(c1, c3), l1_distance(c2, c3)
    assert d12 <= d13 + d23 + 1e-12
    assert d12 == pytest.approx(l1_distance(c2, c1), abs=1e-12)
    assert 0 <= d12 <= 2 * mesh.total_area + 1e-12


def test_fixed_point_lands_on_lower_bound():
    problem = ProblemSpec("negative target", "unit_square", ControlBounds(-1, 1), None,
                          lambda x, y: np.full_like(x, -100.0))
    mesh = generate_domain("unit_square", 4)
    sol = fixed_point_solve(problem, mesh, initial="b")
    assert sol.converged and sol.iterations <= 2
    assert np.all(sol.adjoint.coefficients[mesh.interior_vertices] > 0)
    # elements with three boundary vertices carry p = 0 and the zero-set value
    flat = np.all(sol.adjoint.local_values() == 0, axis=1)
    part = sol.control.partition
    np.testing.assert_allclose(sol.control.piece_values[~flat[part.parent]], -1.0)
    np.testing.assert_allclose(sol.control.piece_values[flat[part.parent]], 0.0)


def test_ex1_control_is_characterization(ex1_solution):
    _, sol = ex1_solution
    assert sol.converged
    ctrl = sol.control
    centers = np.einsum("jab,jb->ja", ctrl.partition.bary,
                        sol.adjoint.local_values()[ctrl.partition.parent]).mean(axis=1)
    expected = np.where(centers > 0, -1.0, np.where(centers < 0, 1.0, 0.0))
    np.testing.assert_array_equal(ctrl.piece_values, expected)


def test_ex1_initial_control_does_not_matter(ex1_solution):
    problem, sol = ex1_solution
    other = fixed_point_solve(problem, sol.mesh, initial="b")
    assert other.converged
    assert l1_distance(sol.control, other.control) <= 1e-10 * 2 * sol.mesh.total_area


def test_self_consistency(ex1_solution, ex2_solution):
    for problem, sol in (ex1_solution, ex2_solution):
        dp = DiscreteProblem(sol.mesh, problem)
        y = dp.solve_state(sol.control)
        p = dp.solve_adjoint(y)
        a = dp.stiffness
        for old, new in ((sol.state, y), (sol.adjoint, p)):
            d = new.coefficients - old.coefficients
            assert np.sqrt(d @ (a @ d)) <= 1e-10 * np.sqrt(new.coefficients @ (a @ new.coefficients))


def test_variational_inequality(ex1_solution, ex2_solution, rng):
    for problem, sol in (ex1_solution, ex2_solution):
        mesh = sol.mesh
        a, b = problem.bounds.a, problem.bounds.b
        p = sol.adjoint
        p_mean = p.local_values().mean(axis=1) * mesh.areas  # int_T p
        p_norm = np.sqrt(p.coefficients @ (DiscreteProblem(mesh, problem).mass @ p.coefficients))
        p_ubar = np.sum(sol.control.local_moments * p.local_values())
        for _ in range(50):
            u = rng.uniform(a, b, mesh.n_elements)
            assert p_mean @ u - p_ubar >= -1e-10 * p_norm


def test_nonconvergence_is_reported():
    problem = ProblemSpec("sign flip", "unit_square", ControlBounds(-1, 1), None,
                          lambda x, y: np.sin(2 * np.pi * x))
    mesh = uniform_refine(generate_domain("unit_square", 4))
    sol = fixed_point_solve(problem, mesh, max_iter=1, damping=1.0)
    assert not sol.converged and sol.iterations == 1
    assert len(sol.increments) == 1


def test_fixed_point_argument_checks(ex1_solution):
    problem, sol = ex1_solution
    with pytest.raises(ValueError):
        fixed_point_solve(problem, sol.mesh, tol=0)
    with pytest.raises(ValueError):
        fixed_point_solve(problem, sol.mesh, damping=1.5)
    with pytest.raises(ValueError):
        fixed_point_solve(problem, generate_domain("unit_square", 2), initial=sol.adjoint)


def test_damping_reaches_same_fixed_point(ex1_solution):
    problem, sol = ex1_solution
    damped = fixed_point_solve(problem, sol.mesh, damping=0.6)
    assert damped.converged
    assert l1_distance(sol.control, damped.control) <= 1e-9


def test_auto_damping_rule():
    # undamped oscillation with ratio 0.8 -> relax
    theta, streak = 1.0, 0
    incs = [1.0, 0.8, 0.64, 0.512]
    theta, streak = _auto_damping(theta, incs, streak)
    assert theta == 1.0 and streak == 1
    theta, streak = _auto_damping(theta, incs + [0.41], streak)
    assert theta == pytest.approx(2 / (2 + 1.25 * 0.8), rel=1e-2)
    # fast contraction leaves the factor alone
    assert _auto_damping(1.0, [1, 0.1, 0.01, 0.001], 0) == (1.0, 0)

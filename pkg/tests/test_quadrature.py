from math import factorial

import numpy as np
import pytest

from bangbang_afem.quadrature import degree19_rule


def monomial_integral(i: int, j: int) -> float:
    """Exact integral of x^i y^j over the reference triangle (0,0), (1,0), (0,1)."""
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def test_rule_shape():
    rule = degree19_rule()
    assert rule.size == 73
    assert rule.degree == 19
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(rule.points >= 0) and np.all(rule.points <= 1)


def test_monomials_up_to_degree_19():
    rule = degree19_rule()
    worst = 0.0
    for i in range(20):
        for j in range(20 - i):
            exact = monomial_integral(i, j)
            approx = rule.integrate_reference(lambda x, y: x ** i * y ** j)
            worst = max(worst, abs(approx - exact) / exact)
    assert worst <= 1e-13


def test_degree_20_is_not_exact():
    rule = degree19_rule()
    errs = [abs(rule.integrate_reference(lambda x, y: x ** i * y ** (20 - i))
                - monomial_integral(i, 20 - i)) / monomial_integral(i, 20 - i)
            for i in range(21)]
    assert max(errs) > 1e-12


def test_fully_symmetric():
    rule = degree19_rule()
    for perm in ([1, 0, 2], [2, 1, 0], [0, 2, 1]):
        p = rule.points[:, perm]
        for q, w in zip(p, rule.weights):
            k = np.argmin(np.abs(rule.points - q).sum(axis=1))
            assert np.abs(rule.points[k] - q).sum() < 1e-14
            assert rule.weights[k] == pytest.approx(w, rel=1e-14)


def test_rule_is_read_only():
    rule = degree19_rule()
    with pytest.raises(ValueError):
        rule.weights[0] = 0.0

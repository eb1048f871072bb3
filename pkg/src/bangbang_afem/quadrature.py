"""Symmetric quadrature on the reference triangle.

The degree-19 rule is the classical 73-point fully symmetric rule with
positive weights.  Orbit generators were re-solved against the full set of
moment equations in extended precision, so the rule integrates every
bivariate monomial of total degree <= 19 to machine precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# (weight,) for the centroid, (a, weight) for orbits (a, a, 1-2a),
# (a, b, weight) for orbits of all permutations of (a, b, 1-a-b).
# Weights are normalized to sum to one.
_CENTROID_WEIGHT = 0.032906331388919099227

_ORBITS_3 = (
    (0.48960998707300737392, 0.010330731891271876844),
    (0.45453689269789334569, 0.022387247263016402394),
    (0.40141668064943164152, 0.03026612586946839166),
    (0.25555165440309718443, 0.030490967802198118008),
    (0.17707794215212914698, 0.024159212741641004832),
    (0.11006105322795244851, 0.016050803586800643097),
    (0.055528624251838947419, 0.0080845802617839966915),
    (0.01262186377722873252, 0.0020793620274848017955),
)

_ORBITS_6 = (
    (0.0036114178484114765409, 0.39575478735693777065, 0.0038848769049810314378),
    (0.13446675453077870659, 0.30792998388043654994, 0.025574160612022042711),
    (0.014446025776114901706, 0.26456694840651906256, 0.0088809035733379539909),
    (0.046933578838177114348, 0.35853935220595296248, 0.016124546761731327629),
    (0.0028611203505686608316, 0.15780740596859473887, 0.0024919418174911945972),
    (0.075050596975910206815, 0.22386142409791698144, 0.018242840118950530322),
    (0.034647074816762166574, 0.14242160111338146953, 0.010258563736198280532),
    (0.010161119296277961369, 0.065494628082938110636, 0.0037999288553018379149),
)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Quadrature rule in barycentric coordinates.

    Attributes
    ----------
    points : (Q, 3) array
        Barycentric coordinates of the nodes (rows sum to one).
    weights : (Q,) array
        Positive weights summing to one, i.e. normalized by the triangle area.
    degree : int
        Algebraic degree of exactness.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate_reference(self, func) -> float:
        """Integrate ``func(x, y)`` over the triangle (0,0), (1,0), (0,1)."""
        x = self.points[:, 1]
        y = self.points[:, 2]
        return 0.5 * float(np.dot(self.weights, func(x, y)))


@lru_cache(maxsize=None)
def degree19_rule() -> QuadratureRule:
    """Return the 73-point symmetric rule exact for degree 19."""
    pts = [(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)]
    wts = [_CENTROID_WEIGHT]
    for a, w in _ORBITS_3:
        c = 1.0 - 2.0 * a
        pts += [(a, a, c), (a, c, a), (c, a, a)]
        wts += [w] * 3
    for a, b, w in _ORBITS_6:
        c = 1.0 - a - b
        pts += [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]
        wts += [w] * 6
    points = np.array(pts)
    weights = np.array(wts)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, 19)

"""Symmetric quadrature rules on the reference tetrahedron and triangle.

Points are barycentric; weights are normalized to sum to one, so a rule
integrates ``f`` over a simplex ``K`` as ``|K| * sum(w * f(points))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, d+1) barycentric
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def _orbit(values) -> np.ndarray:
    """All distinct permutations of a barycentric tuple, in sorted order."""
    import itertools
    return np.array(sorted(set(itertools.permutations(values))), dtype=float)


def _build(classes, degree) -> QuadratureRule:
    pts, wts = [], []
    for bary, w in classes:
        orb = _orbit(bary)
        pts.append(orb)
        wts.append(np.full(len(orb), w))
    rule = QuadratureRule(np.vstack(pts), np.concatenate(wts), degree)
    verify_rule(rule)
    return rule


def monomial_integral(exponents) -> float:
    """Exact mean of prod(lambda_i^k_i) over the reference simplex."""
    d = len(exponents) - 1
    num = np.prod([factorial(k) for k in exponents])
    return num * factorial(d) / factorial(sum(exponents) + d)


def verify_rule(rule: QuadratureRule, rtol: float = 1e-14) -> None:
    """Check the rule against every barycentric monomial up to its degree."""
    nb = rule.points.shape[1]
    if abs(rule.weights.sum() - 1.0) > rtol:
        raise ValueError("quadrature weights must sum to one")
    for total in range(rule.degree + 1):
        for ks in _compositions(total, nb):
            approx = rule.weights @ np.prod(rule.points ** np.array(ks), axis=1)
            exact = monomial_integral(ks)
            if abs(approx - exact) > rtol * max(exact, 1e-300) * 10:
                raise ValueError(f"rule fails on monomial {ks}: {approx} vs {exact}")


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


_a2 = (5.0 - np.sqrt(5.0)) / 20.0

# 4-point rule, exact for degree 2
TET_DEGREE2 = _build([((1 - 3 * _a2, _a2, _a2, _a2), 0.25)], 2)

# 14-point rule, exact for degree 5; used for error norms and as oracle
TET_DEGREE5 = _build([
    ((1 - 3 * 0.3108859192633006, 0.3108859192633006, 0.3108859192633006, 0.3108859192633006), 0.1126879257180159),
    ((1 - 3 * 0.0927352503108912, 0.0927352503108912, 0.0927352503108912, 0.0927352503108912), 0.0734930431163619),
    ((0.0455037041256496, 0.0455037041256496, 0.5 - 0.0455037041256496, 0.5 - 0.0455037041256496), 0.0425460207770815),
], 5)

# 6-point triangle rule, exact for degree 4
TRI_DEGREE4 = _build([
    ((1 - 2 * 0.445948490915965, 0.445948490915965, 0.445948490915965), 0.223381589678011),
    ((1 - 2 * 0.091576213509771, 0.091576213509771, 0.091576213509771), 0.109951743655322),
], 4)


def gauss_legendre_segment(npts: int = 4) -> QuadratureRule:
    """Gauss-Legendre on [0, 1] as barycentric pairs (exact to 2 npts - 1)."""
    x, w = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (x + 1.0)
    return QuadratureRule(np.stack([1.0 - s, s], axis=1), 0.5 * w, 2 * npts - 1)

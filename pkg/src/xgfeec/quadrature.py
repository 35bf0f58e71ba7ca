"""Gauss rules on the unit interval and the reference triangle."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def interval_rule(degree: int):
    """Gauss-Legendre points and weights on [0, 1], exact to `degree`."""
    m = max(1, degree // 2 + 1)
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    The Duffy map x = u, y = (1 - u) v turns the triangle into the unit
    square with Jacobian (1 - u); one extra degree in u absorbs it.
    """
    u, wu = interval_rule(degree + 1)
    v, wv = interval_rule(degree)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu * (1.0 - u), wv)
    pts = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    return pts, W.ravel()

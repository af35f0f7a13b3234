"""Fixed-order Gauss-Legendre rules, cached per (interval, order)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=512)
def _unit_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_nodes(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights integrating smooth functions over [a, b]."""
    if n < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = _unit_rule(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w

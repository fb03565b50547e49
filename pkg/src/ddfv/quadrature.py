"""Quadrature rules on intervals and simplices.

Simplex rules are collapsed (Duffy) tensor products of Gauss-Legendre and
Gauss-Jacobi points, so weights are positive and the rule with ``n`` points
per direction integrates polynomials of degree ``2n - 1`` exactly.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .geometry import simplex_measure


@lru_cache(maxsize=None)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # nodes for weight (1 - t)^alpha on [0, 1]
    x, w = roots_jacobi(n, alpha, 0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def reference_simplex_rule(k: int, npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the unit k-simplex ``{x >= 0, sum x <= 1}``.

    Returns barycentric-free reference coordinates ``(m, k)`` and weights
    summing to ``1/k!``.
    """
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    if k == 1:
        x, w = gauss_legendre01(npts)
        return x[:, None], w
    if k == 2:
        xi, wxi = gauss_legendre01(npts)
        eta, weta = _jacobi01(npts, 1)
        X, E = np.meshgrid(xi, eta, indexing="ij")
        W = np.outer(wxi, weta)
        pts = np.stack([X * (1 - E), E], axis=-1).reshape(-1, 2)
        return pts, W.ravel()
    if k == 3:
        xi, wxi = gauss_legendre01(npts)
        eta, weta = _jacobi01(npts, 1)
        zeta, wzeta = _jacobi01(npts, 2)
        X, E, Z = np.meshgrid(xi, eta, zeta, indexing="ij")
        W = wxi[:, None, None] * weta[None, :, None] * wzeta[None, None, :]
        pts = np.stack([X * (1 - E) * (1 - Z), E * (1 - Z), Z], axis=-1).reshape(-1, 3)
        return pts, W.ravel()
    raise ValueError(f"unsupported simplex dimension {k}")


def points_per_direction(order: int) -> int:
    """Smallest tensor size whose collapsed rule is exact to ``order``."""
    return max(1, (order + 2) // 2)


def simplex_quadrature(P: np.ndarray, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Physical nodes ``(n, m, d)`` and weights ``(n, m)`` on k-simplices ``P``.

    Weights are scaled by the (unsigned) k-measure of each simplex, so
    summing ``w * f(x)`` gives the integral.
    """
    k = P.shape[1] - 1
    ref, w = reference_simplex_rule(k, points_per_direction(order))
    E = P[:, 1:, :] - P[:, :1, :]
    X = P[:, None, 0, :] + np.einsum("mk,nkd->nmd", ref, E)
    meas = simplex_measure(P)
    W = meas[:, None] * (w * factorial(k))[None, :]
    return X, W


def integrate_simplices(f, P: np.ndarray, order: int = 2, signs: np.ndarray | None = None) -> np.ndarray:
    """Integral of ``f`` (vectorised over points) on each simplex of ``P``."""
    if len(P) == 0:
        return np.zeros(0)
    X, W = simplex_quadrature(P, order)
    n, m, d = X.shape
    vals = np.asarray(f(X.reshape(-1, d)), dtype=float).reshape(n, m)
    out = (vals * W).sum(axis=1)
    if signs is not None:
        out = out * signs
    return out

from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddfv.geometry import (
    barycentric,
    circumcenter,
    clip_polygon,
    polygon_area,
    signed_volume,
    simplex_measure,
)
from ddfv.quadrature import gauss_legendre01, simplex_quadrature

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def shoelace(P):
    x, y = P[:, 0], P[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _fat(P):
    # skip nearly flat triangles where relative comparisons lose meaning
    a = shoelace(P)
    e = max(np.linalg.norm(P[i] - P[j]) for i, j in ((0, 1), (1, 2), (0, 2)))
    return a > 1e-3 * e * e


@given(arrays(float, (3, 2), elements=coords))
def test_triangle_area_matches_shoelace(P):
    if not _fat(P):
        return
    assert simplex_measure(P[None])[0] == pytest.approx(shoelace(P), rel=1e-12)
    assert abs(signed_volume(P[None])[0]) == pytest.approx(shoelace(P), rel=1e-12)


@given(arrays(float, (3, 2), elements=coords))
def test_circumcenter_equidistant(P):
    if not _fat(P):
        return
    c, r = circumcenter(P[None])
    dist = np.linalg.norm(P - c[0], axis=1)
    assert np.allclose(dist, r[0], rtol=1e-9)


def test_tetra_circumcenter_and_volume():
    P = np.array([[0.0, 0, 0], [2, 0, 0], [0, 3, 0], [0, 0, 4]])
    c, r = circumcenter(P[None])
    assert np.allclose(c[0], [1.0, 1.5, 2.0])
    assert r[0] == pytest.approx(np.sqrt(1 + 2.25 + 4))
    assert simplex_measure(P[None])[0] == pytest.approx(2 * 3 * 4 / 6)


def test_face_circumcenter_lies_in_face_plane():
    F = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 1]]])
    c, r = circumcenter(F)
    n = np.cross(F[0, 1] - F[0, 0], F[0, 2] - F[0, 0])
    assert abs(np.dot(c[0] - F[0, 0], n)) < 1e-14
    assert np.allclose(np.linalg.norm(F[0] - c[0], axis=1), r[0])


def test_barycentric_reconstructs_point(rng):
    P = rng.normal(size=(20, 4, 3))
    x = rng.normal(size=(20, 3))
    lam = barycentric(P, x)
    assert np.allclose(lam.sum(axis=1), 1.0)
    assert np.allclose(np.einsum("ni,nid->nd", lam, P), x)


@pytest.mark.parametrize("a,b", [(0, 0), (1, 0), (2, 1), (3, 1), (2, 2), (0, 4)])
def test_triangle_quadrature_monomials(a, b):
    # int_{unit triangle} x^a y^b = a! b! / (a+b+2)!
    P = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    X, W = simplex_quadrature(P, order=a + b)
    val = float((W[0] * X[0, :, 0] ** a * X[0, :, 1] ** b).sum())
    assert val == pytest.approx(factorial(a) * factorial(b) / factorial(a + b + 2), rel=1e-13)


@pytest.mark.parametrize("a,b,c", [(0, 0, 0), (1, 1, 1), (2, 0, 1), (3, 0, 0)])
def test_tet_quadrature_monomials(a, b, c):
    P = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]])
    X, W = simplex_quadrature(P, order=a + b + c)
    x = X[0]
    val = float((W[0] * x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c).sum())
    exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
    assert val == pytest.approx(exact, rel=1e-13)


def test_gauss_legendre_integrates_polynomials():
    x, w = gauss_legendre01(4)
    for k in range(8):
        assert np.dot(w, x**k) == pytest.approx(1.0 / (k + 1), rel=1e-14)


def test_clip_polygon_half_square():
    sq = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
    half = clip_polygon(sq, np.array([1.0, 0.0]), 0.25, 1e-12)
    assert polygon_area(half) == pytest.approx(0.25)
    diag = clip_polygon(sq, np.array([1.0, 1.0]), 1.0, 1e-12)
    assert polygon_area(diag) == pytest.approx(0.5)

"""Low-level simplex geometry and convex clipping helpers.

Everything here works on plain numpy arrays so the mesh builder can stay
vectorized.  Polytope clipping is only used on meshes whose simplices are
not well-centred, where the cheap circumcentric subdivision is not exact.
"""

from __future__ import annotations

from math import factorial

import numpy as np


def simplex_edges(P: np.ndarray) -> np.ndarray:
    """Edge vectors ``v_i - v_0`` for a stack of simplices ``(n, k+1, d)``."""
    return P[:, 1:, :] - P[:, :1, :]


def signed_volume(P: np.ndarray) -> np.ndarray:
    """Signed d-volume of full-dimensional simplices ``(n, d+1, d)``."""
    E = simplex_edges(P)
    d = P.shape[2]
    return np.linalg.det(E) / factorial(d)


def simplex_measure(P: np.ndarray) -> np.ndarray:
    """Unsigned k-dimensional measure of k-simplices embedded in R^d."""
    E = simplex_edges(P)
    k = E.shape[1]
    if k == 0:
        return np.ones(P.shape[0])
    G = np.einsum("nid,njd->nij", E, E)
    det = np.linalg.det(G)
    return np.sqrt(np.clip(det, 0.0, None)) / factorial(k)


def circumcenter(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Circumcentres and radii of k-simplices ``(n, k+1, d)`` in R^d.

    The centre is sought in the affine hull of the simplex, so this also
    gives facet circumcentres in 3D and edge midpoints in 2D.
    """
    E = simplex_edges(P)
    G = np.einsum("nid,njd->nij", E, E)
    rhs = 0.5 * np.einsum("nii->ni", G)
    lam = np.linalg.solve(G, rhs[..., None])[..., 0]
    c = P[:, 0, :] + np.einsum("ni,nid->nd", lam, E)
    r = np.linalg.norm(P[:, 0, :] - c, axis=1)
    return c, r


def barycentric(P: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points ``x (n, d)`` in full simplices ``P``."""
    E = simplex_edges(P)
    lam = np.linalg.solve(np.transpose(E, (0, 2, 1)), (x - P[:, 0, :])[..., None])[..., 0]
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)


def planar_barycentric(P: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``x`` w.r.t. triangles ``P (n, 3, 3)`` in R^3.

    ``x`` is assumed to lie in the plane of the triangle.
    """
    E = simplex_edges(P)
    G = np.einsum("nid,njd->nij", E, E)
    rhs = np.einsum("nid,nd->ni", E, x - P[:, 0, :])
    lam = np.linalg.solve(G, rhs[..., None])[..., 0]
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def facet_normal(F: np.ndarray) -> np.ndarray:
    """Unit normals of facets ``(n, d, d)`` (segments in 2D, triangles in 3D).

    The sign is arbitrary; callers orient it.
    """
    d = F.shape[2]
    if d == 2:
        t = F[:, 1, :] - F[:, 0, :]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.cross(F[:, 1, :] - F[:, 0, :], F[:, 2, :] - F[:, 0, :])
    return unit(n)


def max_pairwise_distance(X: np.ndarray) -> float:
    if len(X) < 2:
        return 0.0
    diff = X[:, None, :] - X[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2).max()))


# ---------------------------------------------------------------------------
# convex clipping


def clip_polygon(poly: np.ndarray, n: np.ndarray, c: float, tol: float) -> np.ndarray:
    """Keep the part of a convex polygon with ``n.x <= c``."""
    if len(poly) == 0:
        return poly
    s = poly @ n - c
    if np.all(s <= tol):
        return poly
    if np.all(s > -tol):
        return poly[:0]
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        sp, sq = s[i], s[(i + 1) % m]
        if sp <= tol:
            out.append(p)
        if (sp < -tol and sq > tol) or (sp > tol and sq < -tol):
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return np.array(out) if out else poly[:0]


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_triangles(poly: np.ndarray) -> np.ndarray:
    """Fan triangulation of a convex polygon, shape ``(m-2, 3, dim)``."""
    if len(poly) < 3:
        return np.zeros((0, 3, poly.shape[1]))
    idx = np.arange(1, len(poly) - 1)
    return np.stack([np.repeat(poly[:1], len(idx), axis=0), poly[idx], poly[idx + 1]], axis=1)


def _order_planar(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    c = points.mean(axis=0)
    a = points[0] - c
    if np.linalg.norm(a) == 0.0:
        return points
    a = a / np.linalg.norm(a)
    b = np.cross(normal, a)
    ang = np.arctan2((points - c) @ b, (points - c) @ a)
    return points[np.argsort(ang)]


def _dedupe(points: np.ndarray, tol: float) -> np.ndarray:
    keep: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in keep):
            keep.append(p)
    return np.array(keep) if keep else points[:0]


def tet_to_faces(T: np.ndarray) -> list[np.ndarray]:
    return [T[[1, 2, 3]], T[[0, 2, 3]], T[[0, 1, 3]], T[[0, 1, 2]]]


def clip_polyhedron(faces: list[np.ndarray], n: np.ndarray, c: float, tol: float) -> list[np.ndarray]:
    """Keep the part of a convex polyhedron (list of planar faces) with ``n.x <= c``."""
    if not faces:
        return faces
    allpts = np.concatenate(faces)
    s = allpts @ n - c
    if np.all(s <= tol):
        return faces
    if np.all(s > -tol):
        return []
    new_faces = []
    cap: list[np.ndarray] = []
    for f in faces:
        g = clip_polygon(f, n, c, tol)
        if len(g) >= 3:
            new_faces.append(g)
        if len(g):
            on = np.abs(g @ n - c) <= 10 * tol
            cap.extend(g[on])
    if len(cap) >= 3:
        capa = _dedupe(np.array(cap), 10 * tol)
        if len(capa) >= 3:
            new_faces.append(_order_planar(capa, n))
    return new_faces


def polyhedron_tets(faces: list[np.ndarray]) -> np.ndarray:
    """Decompose a convex polyhedron into tetrahedra from an interior point."""
    if not faces:
        return np.zeros((0, 4, 3))
    p = _dedupe(np.concatenate(faces), 1e-300).mean(axis=0)
    tets = []
    for f in faces:
        for tri in polygon_triangles(f):
            tets.append(np.vstack([p[None, :], tri]))
    return np.array(tets) if tets else np.zeros((0, 4, 3))


def voronoi_pieces_in_simplex(
    S: np.ndarray,
    sites: np.ndarray,
    site_ids: np.ndarray,
    tol: float,
) -> list[tuple[int, np.ndarray]]:
    """Intersect one simplex with the Voronoi cells of candidate sites.

    Returns ``(site_id, sub_simplices)`` pairs; the sub-simplices tile the
    portion of ``S`` nearest to that site.
    """
    d = S.shape[1]
    out = []
    for i, v in enumerate(sites):
        if d == 2:
            poly = S.copy()
        else:
            poly = tet_to_faces(S)
        for j, w in enumerate(sites):
            if j == i:
                continue
            n = w - v
            c = 0.5 * (w @ w - v @ v)
            nn = np.linalg.norm(n)
            n, c = n / nn, c / nn
            if d == 2:
                poly = clip_polygon(poly, n, c, tol)
                if len(poly) < 3:
                    break
            else:
                poly = clip_polyhedron(poly, n, c, tol)
                if not poly:
                    break
        if d == 2:
            pieces = polygon_triangles(poly) if len(poly) >= 3 else np.zeros((0, 3, 2))
        else:
            pieces = polyhedron_tets(poly) if poly else np.zeros((0, 4, 3))
        if len(pieces):
            vol = np.abs(signed_volume(pieces))
            pieces = pieces[vol > 0.0]
            if len(pieces):
                out.append((int(site_ids[i]), pieces))
    return out

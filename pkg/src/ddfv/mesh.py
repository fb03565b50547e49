"""DDFV double meshes built from Delaunay triangulations and tetrahedrizations.

The primal volumes are the simplices, centred at their circumcentres.
Face-adjacent simplices that share a circumcentre (cocircular ties, as in
structured meshes) are fused into one inscribed polytope, otherwise the
distance between their centres would vanish.  Boundary facets are the
boundary primal volumes.  The dual volumes are the Voronoi cells of the
vertices restricted to the domain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import geometry as geo


class MeshError(Exception):
    """Base class for invalid mesh input."""


class NonDelaunay(MeshError):
    pass


class FaceCircumcenterOutside(MeshError):
    pass


class DegenerateCell(MeshError):
    pass


class NonConforming(MeshError):
    pass


class DegenerateDiamond(MeshError):
    """A primal centre lies on a boundary facet, so ``d_KL`` vanishes."""


class DisconnectedDualCell(MeshError):
    pass


def _readonly(**arrays):
    for a in arrays.values():
        if isinstance(a, np.ndarray):
            a.setflags(write=False)


@dataclass(eq=False)
class DdfvMesh:
    """Immutable double mesh.  All geometric data lives in flat arrays.

    Index conventions
    -----------------
    * primal volumes ``0 .. n_primal-1`` are interior (the set M), followed by
      ``n_bprimal`` boundary facets (the set dM);
    * dual volumes are indexed by vertex id; ``dual_interior`` lists the
      ones whose centre lies inside the domain (the set M*);
    * every diamond stores ``K < L`` and ``nu_KL`` points from K to L;
    * every subdiamond stores its dual pair ``a < b`` with ``nu*`` from a to b.
    """

    dim: int
    points: np.ndarray
    cells: np.ndarray
    tol: float
    cell_cluster: np.ndarray
    n_primal: int
    n_bprimal: int
    primal_center: np.ndarray
    primal_measure: np.ndarray
    bprimal_facet: np.ndarray
    bprimal_area: np.ndarray
    dual_is_boundary: np.ndarray
    dual_measure: np.ndarray
    dia_K: np.ndarray
    dia_L: np.ndarray
    dia_facet: np.ndarray
    dia_normal: np.ndarray
    dia_dKL: np.ndarray
    dia_mKL: np.ndarray
    dia_measure: np.ndarray
    dia_P: np.ndarray
    sub_dia: np.ndarray
    sub_a: np.ndarray
    sub_b: np.ndarray
    sub_measure: np.ndarray
    sub_msigma: np.ndarray
    sub_msigma_star: np.ndarray
    sub_nu_star: np.ndarray
    sub_dab: np.ndarray
    sub_edge: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_measure: np.ndarray
    edge_nu: np.ndarray
    edge_d: np.ndarray
    piece_vertex: np.ndarray
    piece_primal: np.ndarray
    piece_cell: np.ndarray
    piece_simplices: np.ndarray
    ov_K: np.ndarray
    ov_V: np.ndarray
    ov_m: np.ndarray
    validation: dict = field(default_factory=dict)

    def __post_init__(self):
        _readonly(**{k: v for k, v in self.__dict__.items()})

    # -- counts -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_diamonds(self) -> int:
        return len(self.dia_K)

    @property
    def n_subdiamonds(self) -> int:
        return len(self.sub_dia)

    @property
    def n_primal_total(self) -> int:
        return self.n_primal + self.n_bprimal

    @cached_property
    def dual_interior(self) -> np.ndarray:
        idx = np.flatnonzero(~self.dual_is_boundary)
        idx.setflags(write=False)
        return idx

    @cached_property
    def dual_boundary(self) -> np.ndarray:
        idx = np.flatnonzero(self.dual_is_boundary)
        idx.setflags(write=False)
        return idx

    @cached_property
    def dual_position(self) -> np.ndarray:
        """Vertex id -> position in ``dual_interior`` (or -1)."""
        pos = np.full(self.n_vertices, -1, dtype=np.int64)
        pos[self.dual_interior] = np.arange(len(self.dual_interior))
        pos.setflags(write=False)
        return pos

    @property
    def n_dual(self) -> int:
        return len(self.dual_interior)

    @property
    def domain_measure(self) -> float:
        return float(self.primal_measure[: self.n_primal].sum())

    @cached_property
    def primal_neighbors(self) -> list[np.ndarray]:
        nb: list[list[int]] = [[] for _ in range(self.n_primal_total)]
        for K, L in zip(self.dia_K.tolist(), self.dia_L.tolist()):
            nb[K].append(L)
            nb[L].append(K)
        return [np.unique(np.array(x, dtype=np.int64)) for x in nb]

    @cached_property
    def dual_neighbors(self) -> list[np.ndarray]:
        """Dual neighbours sharing an interface of positive measure."""
        nb: list[list[int]] = [[] for _ in range(self.n_vertices)]
        pos = self.edge_measure > self.tol ** 2 if self.dim == 3 else self.edge_measure > self.tol
        for a, b in zip(self.edge_a[pos].tolist(), self.edge_b[pos].tolist()):
            nb[a].append(b)
            nb[b].append(a)
        return [np.unique(np.array(x, dtype=np.int64)) for x in nb]

    # -- diameters and mesh parameters --------------------------------------
    @cached_property
    def primal_diameter(self) -> np.ndarray:
        diam = np.zeros(self.n_primal_total)
        order = np.argsort(self.cell_cluster, kind="stable")
        bounds = np.searchsorted(self.cell_cluster[order], np.arange(self.n_primal + 1))
        for K in range(self.n_primal):
            verts = np.unique(self.cells[order[bounds[K] : bounds[K + 1]]])
            diam[K] = geo.max_pairwise_distance(self.points[verts])
        for j, f in enumerate(self.bprimal_facet):
            diam[self.n_primal + j] = geo.max_pairwise_distance(self.points[f])
        return diam

    @cached_property
    def dual_diameter(self) -> np.ndarray:
        diam = np.zeros(self.n_vertices)
        order = np.argsort(self.piece_vertex, kind="stable")
        bounds = np.searchsorted(self.piece_vertex[order], np.arange(self.n_vertices + 1))
        for v in range(self.n_vertices):
            pts = self.piece_simplices[order[bounds[v] : bounds[v + 1]]].reshape(-1, self.dim)
            if len(pts):
                _, keep = np.unique(np.round(pts / self.tol), axis=0, return_index=True)
                pts = pts[np.sort(keep)]
            diam[v] = geo.max_pairwise_distance(pts)
        return diam

    @cached_property
    def diamond_diameter(self) -> np.ndarray:
        pts = np.concatenate(
            [
                self.primal_center[self.dia_K][:, None, :],
                self.primal_center[self.dia_L][:, None, :],
                self.points[self.dia_facet],
            ],
            axis=1,
        )
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        return np.sqrt((diff**2).sum(axis=3)).max(axis=(1, 2))

    @cached_property
    def size(self) -> float:
        return float(
            max(self.primal_diameter.max(), self.dual_diameter.max(), self.diamond_diameter.max())
        )

    @cached_property
    def cells_well_centered(self) -> bool:
        return bool(self.validation.get("well_centered", False))

    def regularity_terms(self) -> dict[str, float]:
        d = self.dim
        card = max((len(x) for x in self.dual_neighbors), default=0)
        mK = self.primal_measure[: self.n_primal]
        q2 = float((self.primal_diameter[: self.n_primal] ** d / mK).max())
        q3 = float((self.dual_diameter**d / self.dual_measure).max())
        dD = self.diamond_diameter
        dK = self.primal_diameter
        r4 = np.concatenate([dK[self.dia_K] / dD + dD / dK[self.dia_K], dK[self.dia_L] / dD + dD / dK[self.dia_L]])
        dV = self.dual_diameter[self.dia_facet]
        r5 = dV / dD[:, None] + dD[:, None] / dV
        return {
            "max_card_dual_neighbors": float(card),
            "max_primal_diam_ratio": q2,
            "max_dual_diam_ratio": q3,
            "max_primal_diamond_ratio": float(r4.max()),
            "max_dual_diamond_ratio": float(r5.max()),
        }

    # -- convenience ------------------------------------------------------
    def overlap_matrix(self):
        """Sparse ``(n_primal, n_vertices)`` matrix of ``m_{K cap K*}``."""
        return coo_matrix(
            (self.ov_m, (self.ov_K, self.ov_V)), shape=(self.n_primal, self.n_vertices)
        ).tocsr()

    def primal_simplices(self, K: int) -> np.ndarray:
        return np.flatnonzero(self.cell_cluster == K)


def regularity_constant(mesh: DdfvMesh) -> float:
    """Largest of the five shape quantities controlling the double mesh."""
    return max(mesh.regularity_terms().values())


def overlap_measures(mesh: DdfvMesh) -> dict[tuple[int, int], float]:
    """Map ``(K, vertex) -> m_{K cap K*}`` for every overlapping pair."""
    return {
        (int(k), int(v)): float(m) for k, v, m in zip(mesh.ov_K, mesh.ov_V, mesh.ov_m)
    }


# ---------------------------------------------------------------------------
# construction


def _facets_of(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nc, nv = cells.shape
    local = []
    opp = []
    for i in range(nv):
        local.append(np.delete(cells, i, axis=1))
        opp.append(np.full(nc, i))
    F = np.sort(np.concatenate(local), axis=1)
    owner = np.tile(np.arange(nc), nv)
    opp_local = np.concatenate(opp)
    return F, owner, opp_local


def _union_components(n: int, pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.arange(n)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    # relabel by first appearance so ids follow cell order
    _, first = np.unique(lab, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[lab]


def build_from_simplicial(
    points,
    cells,
    boundary_marks=None,
    *,
    tol: float = 1e-12,
    force_clipping: bool = False,
) -> DdfvMesh:
    """Build and validate the double mesh of a simplicial partition.

    Parameters
    ----------
    points : (nv, d) array-like
    cells : (nc, d+1) array-like of vertex ids
    boundary_marks : optional per-boundary-facet labels, stored in the report
    tol : relative geometric tolerance (scaled by the bounding-box diameter)
    force_clipping : always compute dual cells by convex clipping
    """
    P = np.ascontiguousarray(points, dtype=float)
    C = np.ascontiguousarray(cells, dtype=np.int64)
    if P.ndim != 2 or P.shape[1] not in (2, 3):
        raise MeshError("points must have shape (n, 2) or (n, 3)")
    d = P.shape[1]
    if C.ndim != 2 or C.shape[1] != d + 1:
        raise MeshError(f"cells must have {d + 1} vertices in dimension {d}")
    if not np.all(np.isfinite(P)):
        raise MeshError("non-finite coordinates")
    if C.min() < 0 or C.max() >= len(P):
        raise MeshError("cell refers to an unknown vertex")
    if len(np.unique(C)) != len(P):
        raise NonConforming("some vertices are not used by any cell")
    if np.any(np.sort(C, axis=1)[:, 1:] == np.sort(C, axis=1)[:, :-1]):
        raise DegenerateCell("a cell repeats a vertex")

    L = float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))
    eps = tol * L
    report: dict = {"dimension": d, "tolerance": eps}

    # orientation and degeneracy
    S = P[C]
    vol = geo.signed_volume(S)
    bad = np.flatnonzero(np.abs(vol) <= tol * L**d)
    if len(bad):
        raise DegenerateCell(f"cell {int(bad[0])} has zero measure")
    flip = vol < 0
    C = C.copy()
    C[flip, 0], C[flip, 1] = C[flip, 1].copy(), C[flip, 0].copy()
    S = P[C]
    vol = np.abs(vol)

    # facets and conformity
    F, owner, opp_local = _facets_of(C)
    Fu, inv, counts = np.unique(F, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if np.any(counts > 2):
        raise NonConforming(f"facet {Fu[np.argmax(counts > 2)].tolist()} is shared by more than two cells")
    nF = len(Fu)
    fcells = np.full((nF, 2), -1, dtype=np.int64)
    fopp = np.full((nF, 2), -1, dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv[order][1:] != inv[order][:-1]
    slot = np.where(first, 0, 1)
    fcells[inv[order], slot] = owner[order]
    fopp[inv[order], slot] = C[owner[order], opp_local[order]]
    is_bfacet = fcells[:, 1] < 0
    bF = Fu[is_bfacet]
    _check_boundary_manifold(bF, d)

    # boundary vertices and hanging nodes
    is_bvert = np.zeros(len(P), dtype=bool)
    is_bvert[np.unique(bF)] = True
    tree = cKDTree(P)
    fcc, fr = (
        geo.circumcenter(P[Fu]) if d == 3 else (0.5 * (P[Fu[:, 0]] + P[Fu[:, 1]]), 0.5 * np.linalg.norm(P[Fu[:, 0]] - P[Fu[:, 1]], axis=1))
    )
    _check_hanging(P, bF, fcc[is_bfacet], fr[is_bfacet], tree, eps)

    # Delaunay (empty open circumballs; cocircular ties allowed)
    cc, R = geo.circumcenter(S)
    inside = tree.query_ball_point(cc, np.maximum(R - eps, 0.0))
    for i, lst in enumerate(inside):
        extra = [v for v in lst if v not in C[i]]
        if extra:
            raise NonDelaunay(
                f"vertex {extra[0]} lies strictly inside the circumball of cell {i}"
            )
    ties = tree.query_ball_point(cc, R + eps, return_length=True) - (d + 1)
    report["delaunay"] = "pass"
    report["cocircular_cells"] = int(np.count_nonzero(ties > 0))

    # condition on face circumcentres (3D)
    if d == 3:
        bc = geo.planar_barycentric(P[Fu], fcc)
        worst = bc.min(axis=1)
        if np.any(worst < -1e-9):
            j = int(np.argmin(worst))
            raise FaceCircumcenterOutside(
                f"face {Fu[j].tolist()} does not contain its circumcentre"
            )
        report["face_circumcenters_in_closed_faces"] = "pass"
        report["face_circumcenters_on_face_boundary"] = int(np.count_nonzero(worst < 1e-9))
    ccbary = geo.barycentric(S, cc)
    report["circumcenters_outside_cells"] = int(np.count_nonzero(ccbary.min(axis=1) < -1e-9))

    # fuse cocircular neighbours
    interior = np.flatnonzero(~is_bfacet)
    c1, c2 = fcells[interior, 0], fcells[interior, 1]
    same = np.linalg.norm(cc[c1] - cc[c2], axis=1) <= eps
    cluster = _union_components(len(C), np.stack([c1[same], c2[same]], axis=1))
    nK = int(cluster.max()) + 1
    mK = np.bincount(cluster, weights=vol, minlength=nK)
    xK = np.zeros((nK, d))
    np.add.at(xK, cluster, cc)
    xK /= np.bincount(cluster, minlength=nK)[:, None]
    report["fused_cells"] = int(len(C) - nK)

    # interfaces: interior facets between distinct clusters, then boundary facets
    ifc = interior[~same]
    ifc = ifc[cluster[fcells[ifc, 0]] != cluster[fcells[ifc, 1]]]
    bfc = np.flatnonzero(is_bfacet)
    nB = len(bfc)
    xB = fcc[bfc]
    centers = np.vstack([xK, xB])
    measures = np.concatenate([mK, np.zeros(nB)])

    facets = np.vstack([Fu[ifc], Fu[bfc]])
    Kc = np.concatenate([cluster[fcells[ifc, 0]], cluster[fcells[bfc, 0]]])
    Lc = np.concatenate([cluster[fcells[ifc, 1]], nK + np.arange(nB)])
    oppK = np.concatenate([fopp[ifc, 0], fopp[bfc, 0]])
    Fx = P[facets]
    nu = geo.facet_normal(Fx)
    sgn = np.sign(np.einsum("nd,nd->n", nu, P[oppK] - Fx[:, 0, :]))
    nu = -sgn[:, None] * nu  # from the K-side cell towards L
    swap = Kc > Lc
    Kc, Lc = np.where(swap, Lc, Kc), np.where(swap, Kc, Lc)
    nu[swap] *= -1.0
    Pf = np.concatenate([fcc[ifc], fcc[bfc]])
    dKL = np.einsum("nd,nd->n", nu, centers[Lc] - centers[Kc])
    bad = np.flatnonzero(dKL <= eps)
    if len(bad):
        j = int(bad[0])
        if Lc[j] >= nK:
            raise DegenerateDiamond(
                f"centre of primal volume {int(Kc[j])} lies on boundary facet {facets[j].tolist()}"
            )
        raise NonDelaunay(f"interface {facets[j].tolist()} has non-positive centre distance")
    off = centers[Lc] - centers[Kc] - dKL[:, None] * nu
    if np.abs(off).max(initial=0.0) > 1e-8 * L:
        raise NonConforming("primal centres are not aligned with the interface normal")
    mKL = geo.simplex_measure(Fx)
    nD = len(Kc)

    # subdiamonds
    if d == 2:
        a = facets.min(axis=1)
        b = facets.max(axis=1)
        dab = np.linalg.norm(P[b] - P[a], axis=1)
        sub_dia = np.arange(nD)
        sub_msigma = mKL.copy()
        sub_msigma_star = dKL.copy()
        sub_measure = 0.5 * mKL * dKL
        sub_a, sub_b = a, b
        mD = sub_measure.copy()
    else:
        Fo = facets.copy()
        cr = np.cross(P[Fo[:, 1]] - P[Fo[:, 0]], P[Fo[:, 2]] - P[Fo[:, 0]])
        neg = np.einsum("nd,nd->n", cr, nu) < 0
        Fo[neg, 1], Fo[neg, 2] = Fo[neg, 2].copy(), Fo[neg, 1].copy()
        sa, sb, st, sdia = [], [], [], []
        for i, j in ((0, 1), (1, 2), (2, 0)):
            vi, vj = Fo[:, i], Fo[:, j]
            Tl = 0.5 * np.einsum("nd,nd->n", np.cross(P[vi] - Pf, P[vj] - Pf), nu)
            sa.append(np.minimum(vi, vj))
            sb.append(np.maximum(vi, vj))
            st.append(Tl)
            sdia.append(np.arange(nD))
        sub_a = np.stack(sa, axis=1).ravel()
        sub_b = np.stack(sb, axis=1).ravel()
        Tl = np.stack(st, axis=1)
        if np.any(Tl < -1e-9 * mKL[:, None]):
            raise FaceCircumcenterOutside("a subdiamond has negative measure")
        Tl = np.maximum(Tl, 0.0)
        mKL = Tl.sum(axis=1)
        sub_dia = np.stack(sdia, axis=1).ravel()
        Tl = Tl.ravel()
        dab = np.linalg.norm(P[sub_b] - P[sub_a], axis=1)
        sub_msigma = Tl
        sub_measure = Tl * dKL[sub_dia] / 3.0
        sub_msigma_star = dKL[sub_dia] * Tl / dab
        mD = np.bincount(sub_dia, weights=sub_measure, minlength=nD)
    sub_nu = (P[sub_b] - P[sub_a]) / dab[:, None]

    key = sub_a * len(P) + sub_b
    ukey, sub_edge = np.unique(key, return_inverse=True)
    sub_edge = sub_edge.ravel()
    edge_a = ukey // len(P)
    edge_b = ukey % len(P)
    edge_measure = np.bincount(sub_edge, weights=sub_msigma_star, minlength=len(ukey))
    edge_d = np.linalg.norm(P[edge_b] - P[edge_a], axis=1)
    edge_nu = (P[edge_b] - P[edge_a]) / edge_d[:, None]

    # dual cells, overlaps
    well = ccbary.min(axis=1) >= -1e-9
    if d == 3:
        faces_bary_ok = np.ones(len(C), dtype=bool)
        for m in range(4):
            Fm = np.sort(np.delete(C, m, axis=1), axis=1)
            idx = _rows_index(Fu, Fm)
            faces_bary_ok &= geo.planar_barycentric(P[Fu[idx]], fcc[idx]).min(axis=1) >= -1e-9
        well &= faces_bary_ok
    report["well_centered"] = bool(well.all())
    if well.all() and not force_clipping:
        pv, pc, ps = _circumcentric_pieces(P, C, cc, Fu, fcc)
        report["dual_construction"] = "circumcentric subdivision"
    else:
        pv, pc, ps = _clipped_pieces(P, C, tree, eps)
        report["dual_construction"] = "convex clipping"
    pvol = np.abs(geo.signed_volume(ps))
    keep = pvol > 0.0
    pv, pc, ps, pvol = pv[keep], pc[keep], ps[keep], pvol[keep]
    pp = cluster[pc]
    mV = np.bincount(pv, weights=pvol, minlength=len(P))
    if np.any(mV <= 0):
        raise DegenerateCell(f"dual cell of vertex {int(np.argmin(mV))} is empty")
    if report["dual_construction"] == "convex clipping":
        _check_dual_connectivity(pv, pc, fcells[~is_bfacet], len(P))

    okey, oinv = np.unique(pp * len(P) + pv, return_inverse=True)
    om = np.bincount(oinv.ravel(), weights=pvol)
    ov_K = okey // len(P)
    ov_V = okey % len(P)

    total = float(mK.sum())
    report["partition_primal_dual"] = float(abs(mV.sum() - total) / total)
    report["partition_diamonds"] = float(abs(mD.sum() - total) / total)
    if boundary_marks is not None:
        report["boundary_marks"] = list(boundary_marks)

    mesh = DdfvMesh(
        dim=d,
        points=P,
        cells=C,
        tol=eps,
        cell_cluster=cluster,
        n_primal=nK,
        n_bprimal=nB,
        primal_center=centers,
        primal_measure=measures,
        bprimal_facet=Fu[bfc],
        bprimal_area=geo.simplex_measure(P[Fu[bfc]]),
        dual_is_boundary=is_bvert,
        dual_measure=mV,
        dia_K=Kc,
        dia_L=Lc,
        dia_facet=facets,
        dia_normal=nu,
        dia_dKL=dKL,
        dia_mKL=mKL,
        dia_measure=mD,
        dia_P=Pf,
        sub_dia=sub_dia,
        sub_a=sub_a,
        sub_b=sub_b,
        sub_measure=sub_measure,
        sub_msigma=sub_msigma,
        sub_msigma_star=sub_msigma_star,
        sub_nu_star=sub_nu,
        sub_dab=dab,
        sub_edge=sub_edge,
        edge_a=edge_a,
        edge_b=edge_b,
        edge_measure=edge_measure,
        edge_nu=edge_nu,
        edge_d=edge_d,
        piece_vertex=pv,
        piece_primal=pp,
        piece_cell=pc,
        piece_simplices=ps,
        ov_K=ov_K,
        ov_V=ov_V,
        ov_m=om,
        validation=report,
    )
    return mesh


def _rows_index(U: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Positions of the rows of ``X`` inside the lexicographically sorted ``U``."""
    n = int(max(U.max(), X.max())) + 1
    ku = np.zeros(len(U), dtype=np.int64)
    kx = np.zeros(len(X), dtype=np.int64)
    for j in range(U.shape[1]):
        ku = ku * n + U[:, j]
        kx = kx * n + X[:, j]
    return np.searchsorted(ku, kx)


def _check_boundary_manifold(bF: np.ndarray, d: int) -> None:
    if d == 2:
        deg = np.bincount(bF.ravel())
        bad = np.flatnonzero((deg != 0) & (deg != 2))
        if len(bad):
            raise NonConforming(f"boundary vertex {int(bad[0])} has {int(deg[bad[0]])} boundary edges")
    else:
        edges = np.sort(np.concatenate([bF[:, [0, 1]], bF[:, [1, 2]], bF[:, [0, 2]]]), axis=1)
        _, cnt = np.unique(edges, axis=0, return_counts=True)
        if np.any(cnt != 2):
            raise NonConforming("boundary surface is not closed (hanging or non-manifold edges)")


def _check_hanging(P, bF, fcc, fr, tree, eps) -> None:
    d = P.shape[1]
    lists = tree.query_ball_point(fcc, fr + eps)
    for j, lst in enumerate(lists):
        f = bF[j]
        cand = [v for v in lst if v not in f]
        if not cand:
            continue
        X = P[cand]
        F = P[f]
        n = geo.facet_normal(F[None])[0]
        dist = np.abs((X - F[0]) @ n)
        on = dist <= 10 * eps
        if not np.any(on):
            continue
        X = X[on]
        if d == 2:
            t = (X - F[0]) @ (F[1] - F[0]) / np.dot(F[1] - F[0], F[1] - F[0])
            hit = (t > 1e-9) & (t < 1 - 1e-9)
        else:
            bc = geo.planar_barycentric(np.repeat(F[None], len(X), axis=0), X)
            hit = bc.min(axis=1) > -1e-9
        if np.any(hit):
            raise NonConforming(f"hanging vertex on boundary facet {f.tolist()}")


def _circumcentric_pieces(P, C, cc, Fu, fcc):
    d = P.shape[1]
    nc = len(C)
    verts, cells, pieces = [], [], []
    if d == 2:
        for j in range(3):
            for k in range(3):
                if k == j:
                    continue
                vj, vk = P[C[:, j]], P[C[:, k]]
                pieces.append(np.stack([vj, 0.5 * (vj + vk), cc], axis=1))
                verts.append(C[:, j])
                cells.append(np.arange(nc))
    else:
        face_cc = []
        for m in range(4):
            Fm = np.sort(np.delete(C, m, axis=1), axis=1)
            face_cc.append(fcc[_rows_index(Fu, Fm)])
        for j in range(4):
            for k in range(4):
                if k == j:
                    continue
                vj, vk = P[C[:, j]], P[C[:, k]]
                mid = 0.5 * (vj + vk)
                for m in range(4):
                    if m in (j, k):
                        continue
                    pieces.append(np.stack([vj, mid, face_cc[m], cc], axis=1))
                    verts.append(C[:, j])
                    cells.append(np.arange(nc))
    return np.concatenate(verts), np.concatenate(cells), np.concatenate(pieces)


def _clipped_pieces(P, C, tree, eps):
    S = P[C]
    cen = S.mean(axis=1)
    rad = np.linalg.norm(S - cen[:, None, :], axis=2).max(axis=1)
    diam = np.array([geo.max_pairwise_distance(s) for s in S])
    cands = tree.query_ball_point(cen, rad + diam + eps)
    verts, cells, pieces = [], [], []
    for i, lst in enumerate(cands):
        ids = np.array(sorted(lst), dtype=np.int64)
        for v, ps in geo.voronoi_pieces_in_simplex(S[i], P[ids], ids, eps):
            verts.append(np.full(len(ps), v))
            cells.append(np.full(len(ps), i))
            pieces.append(ps)
    return np.concatenate(verts), np.concatenate(cells), np.concatenate(pieces)


def _check_dual_connectivity(pv, pc, adj, nv) -> None:
    a, b = adj[:, 0], adj[:, 1]
    order = np.argsort(pv, kind="stable")
    bounds = np.searchsorted(pv[order], np.arange(nv + 1))
    for v in range(nv):
        cs = np.unique(pc[order[bounds[v] : bounds[v + 1]]])
        if len(cs) <= 1:
            continue
        mask = np.isin(a, cs) & np.isin(b, cs)
        loc = {c: i for i, c in enumerate(cs.tolist())}
        ea = np.array([loc[x] for x in a[mask].tolist()], dtype=np.int64)
        eb = np.array([loc[x] for x in b[mask].tolist()], dtype=np.int64)
        g = coo_matrix((np.ones(len(ea)), (ea, eb)), shape=(len(cs), len(cs)))
        ncomp, _ = connected_components(g, directed=False)
        if ncomp > 1:
            raise DisconnectedDualCell(f"Voronoi cell of vertex {v} is disconnected inside the domain")


# ---------------------------------------------------------------------------
# structured builders


def structured_triangulation(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0), pattern: str = "union_jack"):
    x0, x1, y0, y1 = domain
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            p00, p10, p01, p11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            if pattern == "union_jack":
                main = (i + j) % 2 == 0
            elif pattern == "uniform":
                main = True
            else:
                raise ValueError(f"unknown pattern {pattern!r}")
            if main:
                cells += [(p00, p10, p11), (p00, p11, p01)]
            else:
                cells += [(p00, p10, p01), (p10, p11, p01)]
    return pts, np.array(cells, dtype=np.int64)


def build_structured_2d(nx: int, ny: int, domain_rect=(0.0, 1.0, 0.0, 1.0), pattern: str = "union_jack", **kw) -> DdfvMesh:
    """Triangulated rectangle (alternating diagonals by default)."""
    if nx < 2 or ny < 2:
        raise MeshError("structured meshes need nx, ny >= 2")
    pts, cells = structured_triangulation(nx, ny, domain_rect, pattern)
    return build_from_simplicial(pts, cells, **kw)


def kuhn_tetrahedralization(nx: int, ny: int, nz: int, box=(0.0, 1.0, 0.0, 1.0, 0.0, 1.0)):
    x0, x1, y0, y1, z0, z1 = box
    xs, ys, zs = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1), np.linspace(z0, z1, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    cells = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for perm in itertools.permutations(range(3)):
                    cur = np.array([i, j, k])
                    tet = [vid(*cur)]
                    for ax in perm:
                        cur = cur.copy()
                        cur[ax] += 1
                        tet.append(vid(*cur))
                    cells.append(tet)
    return pts, np.array(cells, dtype=np.int64)


def build_structured_3d(nx: int, ny: int, nz: int, domain_box=(0.0, 1.0, 0.0, 1.0, 0.0, 1.0), **kw) -> DdfvMesh:
    """Box split into cubes, each cut into six Kuhn tetrahedra."""
    if min(nx, ny, nz) < 2:
        raise MeshError("structured meshes need nx, ny, nz >= 2")
    pts, cells = kuhn_tetrahedralization(nx, ny, nz, domain_box)
    return build_from_simplicial(pts, cells, **kw)


def mesh_report(mesh: DdfvMesh) -> dict:
    """Counts, size, regularity and validation outcomes as a flat dict."""
    rep = {
        "dimension": mesh.dim,
        "vertices": mesh.n_vertices,
        "simplices": mesh.n_cells,
        "primal_volumes": mesh.n_primal,
        "boundary_primal_volumes": mesh.n_bprimal,
        "dual_volumes": mesh.n_vertices,
        "interior_dual_volumes": mesh.n_dual,
        "diamonds": mesh.n_diamonds,
        "subdiamonds": mesh.n_subdiamonds,
        "domain_measure": mesh.domain_measure,
        "size": mesh.size,
        "reg": regularity_constant(mesh),
    }
    rep.update({f"reg_{k}": v for k, v in mesh.regularity_terms().items()})
    for k, v in mesh.validation.items():
        rep[f"check_{k}"] = v
    if mesh.dim == 3:
        rep["condition(3.1)"] = mesh.validation.get("face_circumcenters_in_closed_faces", "fail")
    return rep

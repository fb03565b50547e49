"""Discrete functions and fields on a double mesh.

Layout
------
``DiscreteFunctionBar`` stores ``primal`` over all primal ids (interior then
boundary facets) and ``dual`` over all vertex ids.  ``DiscreteFunction``
keeps only the interior entries: ``primal[:n_primal]`` and
``dual[mesh.dual_interior]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.sparse import csr_matrix, hstack
from scipy.spatial import cKDTree

from . import geometry as geo
from .mesh import DdfvMesh
from .quadrature import gauss_legendre01, simplex_quadrature


class MeshMismatch(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    mesh: DdfvMesh
    primal: np.ndarray
    dual: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "primal", _frozen(self.primal))
        object.__setattr__(self, "dual", _frozen(self.dual))
        if self.primal.shape != (self.mesh.n_primal,) or self.dual.shape != (self.mesh.n_dual,):
            raise MeshMismatch("value arrays do not match the mesh")
        if not (np.all(np.isfinite(self.primal)) and np.all(np.isfinite(self.dual))):
            raise ValueError("non-finite entries")

    def to_bar(self) -> "DiscreteFunctionBar":
        """Extend by zero boundary values."""
        m = self.mesh
        p = np.zeros(m.n_primal_total)
        p[: m.n_primal] = self.primal
        d = np.zeros(m.n_vertices)
        d[m.dual_interior] = self.dual
        return DiscreteFunctionBar(m, p, d)

    def __add__(self, other):
        return DiscreteFunction(self.mesh, self.primal + other.primal, self.dual + other.dual)

    def __sub__(self, other):
        return DiscreteFunction(self.mesh, self.primal - other.primal, self.dual - other.dual)

    def __mul__(self, c: float):
        return DiscreteFunction(self.mesh, c * self.primal, c * self.dual)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class DiscreteFunctionBar:
    """Values on interior and boundary volumes.

    ``interface`` (per diamond) and ``interface_dual`` (per subdiamond) are
    optional averages over K|L and K*|L*, filled by :func:`project_bar`.
    """

    mesh: DdfvMesh
    primal: np.ndarray
    dual: np.ndarray
    interface: np.ndarray | None = None
    interface_dual: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "primal", _frozen(self.primal))
        object.__setattr__(self, "dual", _frozen(self.dual))
        if self.interface is not None:
            object.__setattr__(self, "interface", _frozen(self.interface))
        if self.interface_dual is not None:
            object.__setattr__(self, "interface_dual", _frozen(self.interface_dual))
        m = self.mesh
        if self.primal.shape != (m.n_primal_total,) or self.dual.shape != (m.n_vertices,):
            raise MeshMismatch("value arrays do not match the mesh")
        if not (np.all(np.isfinite(self.primal)) and np.all(np.isfinite(self.dual))):
            raise ValueError("non-finite entries")

    @classmethod
    def zeros(cls, mesh: DdfvMesh) -> "DiscreteFunctionBar":
        return cls(mesh, np.zeros(mesh.n_primal_total), np.zeros(mesh.n_vertices))

    @classmethod
    def from_interior(cls, mesh: DdfvMesh, primal, dual) -> "DiscreteFunctionBar":
        return DiscreteFunction(mesh, primal, dual).to_bar()

    def in_zero_space(self) -> bool:
        m = self.mesh
        return bool(
            np.all(self.primal[m.n_primal :] == 0.0) and np.all(self.dual[m.dual_boundary] == 0.0)
        )

    def interior(self) -> DiscreteFunction:
        m = self.mesh
        return DiscreteFunction(m, self.primal[: m.n_primal], self.dual[m.dual_interior])

    def sup_norm(self) -> float:
        return float(max(np.abs(self.primal).max(initial=0.0), np.abs(self.dual).max(initial=0.0)))


@dataclass(frozen=True, eq=False)
class DiscreteField:
    mesh: DdfvMesh
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        object.__setattr__(self, "values", v)
        if v.shape != (self.mesh.n_diamonds, self.mesh.dim):
            raise MeshMismatch("field must hold one d-vector per diamond")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite entries")

    def on_subdiamonds(self) -> np.ndarray:
        return self.values[self.mesh.sub_dia]


@dataclass(frozen=True, eq=False)
class SpaceTimeFunction:
    """Slices ``n = 0..N`` stored as stacked arrays in the bar layout."""

    mesh: DdfvMesh
    primal: np.ndarray
    dual: np.ndarray
    dt: float
    T: float

    def __post_init__(self):
        object.__setattr__(self, "primal", _frozen(self.primal))
        object.__setattr__(self, "dual", _frozen(self.dual))
        N = self.N
        if not (N * self.dt <= self.T * (1 + 1e-12) and self.T < (N + 1) * self.dt):
            raise ValueError("N, dt and T are inconsistent")

    @property
    def N(self) -> int:
        return self.primal.shape[0] - 1

    def slice(self, n: int) -> DiscreteFunctionBar:
        return DiscreteFunctionBar(self.mesh, self.primal[n], self.dual[n])

    def __len__(self) -> int:
        return self.N + 1


def n_steps(T: float, dt: float) -> int:
    """Largest N with ``N dt <= T``."""
    return int(np.floor(T / dt + 1e-12))


# ---------------------------------------------------------------------------
# scalar products and norms


_EXACT_REDUCTIONS = False


def set_exact_reductions(flag: bool) -> bool:
    """Route weighted sums through ``math.fsum`` (order independent, slower).

    Returns the previous setting.
    """
    global _EXACT_REDUCTIONS
    previous = _EXACT_REDUCTIONS
    _EXACT_REDUCTIONS = bool(flag)
    return previous


def wdot(a, b) -> float:
    """Weighted sum ``sum a_i b_i``, exactly rounded when exact reductions are on."""
    if _EXACT_REDUCTIONS:
        return math.fsum(np.multiply(a, b).ravel().tolist())
    return float(np.dot(a, b))


def _check_same(a, b) -> None:
    if a.mesh is not b.mesh:
        raise MeshMismatch("operands live on different meshes")


def inner_functions(w, v) -> float:
    """Weighted primal/dual scalar product.

    Interior functions sum over interior volumes.  For bar functions the
    boundary dual volumes (which carry measure) are included as well, so
    that ``[[1, 1]] = |Omega|``; on the zero space both readings agree.
    """
    _check_same(w, v)
    m = w.mesh
    d = m.dim
    if isinstance(w, DiscreteFunctionBar) != isinstance(v, DiscreteFunctionBar):
        raise TypeError("mix of bar and interior functions")
    mp = m.primal_measure[: m.n_primal]
    if isinstance(w, DiscreteFunctionBar):
        sp = wdot(mp, w.primal[: m.n_primal] * v.primal[: m.n_primal])
        sd = wdot(m.dual_measure, w.dual * v.dual)
    else:
        sp = wdot(mp, w.primal * v.primal)
        sd = wdot(m.dual_measure[m.dual_interior], w.dual * v.dual)
    return float(sp / d + (d - 1) * sd / d)


def inner_fields(F: DiscreteField, G: DiscreteField) -> float:
    _check_same(F, G)
    return float(wdot(F.mesh.dia_measure, np.einsum("nd,nd->n", F.values, G.values)))


def function_lp_norm(w, p: float = 2.0, part: str = "combined") -> float:
    """Lp norm of the piecewise-constant lift (``primal``, ``dual`` or ``combined``)."""
    m = w.mesh
    d = m.dim
    if isinstance(w, DiscreteFunctionBar):
        wp, wd, md = w.primal[: m.n_primal], w.dual, m.dual_measure
    else:
        wp, wd, md = w.primal, w.dual, m.dual_measure[m.dual_interior]
    mp = m.primal_measure[: m.n_primal]
    if part == "primal":
        return float(wdot(mp, np.abs(wp) ** p) ** (1 / p))
    if part == "dual":
        return float(wdot(md, np.abs(wd) ** p) ** (1 / p))
    if part == "combined":
        # weights 1/d and (d-1)/d on the primal and dual p-th powers
        val = wdot(mp, np.abs(wp) ** p) / d + (d - 1) * wdot(md, np.abs(wd) ** p) / d
        return float(val ** (1 / p))
    raise ValueError(f"unknown part {part!r}")


def field_lp_norm(F: DiscreteField, p: float = 2.0) -> float:
    n = np.linalg.norm(F.values, axis=1)
    return float(wdot(F.mesh.dia_measure, n**p) ** (1 / p))


def compose(u, g: Callable[[np.ndarray], np.ndarray]):
    """Entrywise ``g(u)`` keeping the container type."""
    if isinstance(u, DiscreteFunctionBar):
        return DiscreteFunctionBar(u.mesh, np.asarray(g(u.primal), float), np.asarray(g(u.dual), float))
    return DiscreteFunction(u.mesh, np.asarray(g(u.primal), float), np.asarray(g(u.dual), float))


# ---------------------------------------------------------------------------
# projections


@dataclass(frozen=True, eq=False)
class MeshQuadrature:
    """Quadrature nodes with sparse maps to cell, facet and dual-interface averages."""

    points: np.ndarray
    primal: csr_matrix  # (n_primal, nq) averaging weights
    dual: csr_matrix  # (n_vertices, nq)
    facet_points: np.ndarray
    facet: csr_matrix  # (n_diamonds, nfq)
    dual_iface_points: np.ndarray
    dual_iface: csr_matrix  # (n_subdiamonds, nsq)


def _averaging(owner: np.ndarray, weights: np.ndarray, measure: np.ndarray, n: int) -> csr_matrix:
    k = len(owner)
    M = csr_matrix((weights.ravel(), (np.repeat(owner, weights.shape[1]), np.arange(k * weights.shape[1]))), shape=(n, k * weights.shape[1]))
    scale = np.divide(1.0, measure, out=np.zeros_like(measure), where=measure > 0)
    return csr_matrix(M.multiply(scale[:, None]))


@lru_cache(maxsize=16)
def mesh_quadrature(mesh: DdfvMesh, order: int = 2) -> MeshQuadrature:
    d = mesh.dim
    nK = mesh.n_primal
    X, W = simplex_quadrature(mesh.points[mesh.cells], order)
    primal = _averaging(mesh.cell_cluster, W, mesh.primal_measure[:nK], nK)
    Xd, Wd = simplex_quadrature(mesh.piece_simplices, order)
    dual = _averaging(mesh.piece_vertex, Wd, mesh.dual_measure, mesh.n_vertices)
    Xf, Wf = simplex_quadrature(mesh.points[mesh.dia_facet], order)
    facet = _averaging(np.arange(mesh.n_diamonds), Wf, mesh.dia_mKL, mesh.n_diamonds)
    xK = mesh.primal_center[mesh.dia_K[mesh.sub_dia]]
    xL = mesh.primal_center[mesh.dia_L[mesh.sub_dia]]
    if d == 2:
        Ss = np.stack([xK, xL], axis=1)
    else:
        mid = 0.5 * (mesh.points[mesh.sub_a] + mesh.points[mesh.sub_b])
        Ss = np.stack([xK, xL, mid], axis=1)
    Xs, Ws = simplex_quadrature(Ss, order)
    meas = geo.simplex_measure(Ss)
    dual_iface = _averaging(np.arange(mesh.n_subdiamonds), Ws, meas, mesh.n_subdiamonds)
    return MeshQuadrature(
        points=np.concatenate([X.reshape(-1, d), Xd.reshape(-1, d)]),
        primal=_hstack_zero(primal, Xd.shape[0] * Xd.shape[1], right=True),
        dual=_hstack_zero(dual, X.shape[0] * X.shape[1], right=False),
        facet_points=Xf.reshape(-1, d),
        facet=facet,
        dual_iface_points=Xs.reshape(-1, d),
        dual_iface=dual_iface,
    )


def _hstack_zero(M: csr_matrix, ncols: int, right: bool) -> csr_matrix:
    Z = csr_matrix((M.shape[0], ncols))
    return csr_matrix(hstack([M, Z] if right else [Z, M]))


def cell_averages(s: Callable, mesh: DdfvMesh, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Averages of ``s`` over interior primal volumes and over all dual volumes."""
    q = mesh_quadrature(mesh, order)
    vals = np.broadcast_to(np.asarray(s(q.points), dtype=float), (len(q.points),))
    return q.primal @ vals, q.dual @ vals


def project_cells(s: Callable, mesh: DdfvMesh, order: int = 2) -> DiscreteFunction:
    """Mean values of ``s`` on the interior primal and dual volumes."""
    p, d = cell_averages(s, mesh, order)
    return DiscreteFunction(mesh, p, d[mesh.dual_interior])


def project_bar(psi: Callable, mesh: DdfvMesh, order: int = 2, snap: float = 1e-13) -> DiscreteFunctionBar:
    """Projection of a smooth test function, boundary entries included.

    Boundary primal entries take the facet average, boundary dual entries the
    average over the dual volume.  Values below ``snap`` times the sup of the
    samples are rounded to zero so that exact zeros survive floating point.
    """
    q = mesh_quadrature(mesh, order)
    vals = np.broadcast_to(np.asarray(psi(q.points), dtype=float), (len(q.points),))
    fvals = np.broadcast_to(np.asarray(psi(q.facet_points), dtype=float), (len(q.facet_points),))
    svals = np.broadcast_to(np.asarray(psi(q.dual_iface_points), dtype=float), (len(q.dual_iface_points),))
    scale = max(np.abs(vals).max(initial=0.0), np.abs(fvals).max(initial=0.0), np.abs(svals).max(initial=0.0))
    iface = q.facet @ fvals
    p = np.zeros(mesh.n_primal_total)
    p[: mesh.n_primal] = q.primal @ vals
    bd = np.flatnonzero(mesh.dia_L >= mesh.n_primal)
    p[mesh.dia_L[bd]] = iface[bd]
    dual = q.dual @ vals
    idual = q.dual_iface @ svals
    thr = snap * scale
    for a in (p, dual, iface, idual):
        a[np.abs(a) <= thr] = 0.0
    return DiscreteFunctionBar(mesh, p, dual, iface, idual)


def time_average(
    s: Callable,
    dt: float,
    N: int,
    mesh: DdfvMesh,
    *,
    order: int = 2,
    time_points: int = 4,
    breakpoints=(),
) -> list[DiscreteFunction]:
    """Slab averages ``S^n``, n = 1..N, of ``s(t, x)`` projected on the cells.

    Slab ``n`` is ``[(n-1) dt, n dt)``.  Each slab is split at the given time
    breakpoints before applying Gauss-Legendre in time.
    """
    q = mesh_quadrature(mesh, order)
    tg, wg = gauss_legendre01(time_points)
    out = []
    bps = np.asarray(sorted(breakpoints), dtype=float)
    for n in range(1, N + 1):
        t0, t1 = (n - 1) * dt, n * dt
        cuts = np.concatenate([[t0], bps[(bps > t0) & (bps < t1)], [t1]])
        acc = np.zeros(len(q.points))
        for a, b in zip(cuts[:-1], cuts[1:]):
            for tt, ww in zip(a + (b - a) * tg, (b - a) * wg):
                acc += ww * np.broadcast_to(np.asarray(s(tt, q.points), dtype=float), (len(q.points),))
        acc /= dt
        out.append(DiscreteFunction(mesh, q.primal @ acc, (q.dual @ acc)[mesh.dual_interior]))
    return out


# ---------------------------------------------------------------------------
# lifting to the space-time cylinder


class _Locator:
    def __init__(self, mesh: DdfvMesh):
        self.mesh = mesh
        self.S = mesh.points[mesh.cells]
        self.tree = cKDTree(self.S.mean(axis=1))
        self.vtree = cKDTree(mesh.points)

    def cell(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        k = min(12, len(self.S))
        _, cand = self.tree.query(x, k=k)
        cand = np.atleast_2d(cand.reshape(len(x), -1))
        out = np.full(len(x), -1, dtype=np.int64)
        tol = 1e-10
        for j in range(cand.shape[1]):
            todo = out < 0
            if not todo.any():
                break
            c = cand[todo, j]
            bc = geo.barycentric(self.S[c], x[todo])
            ok = bc.min(axis=1) >= -tol
            idx = np.flatnonzero(todo)[ok]
            out[idx] = c[ok]
        rest = np.flatnonzero(out < 0)
        for i in rest:
            bc = geo.barycentric(self.S, np.repeat(x[i : i + 1], len(self.S), axis=0))
            hit = np.flatnonzero(bc.min(axis=1) >= -tol)
            if len(hit) == 0:
                raise ValueError(f"point {x[i].tolist()} lies outside the domain")
            out[i] = hit[0]
        return out

    def vertex(self, x: np.ndarray) -> np.ndarray:
        return self.vtree.query(np.atleast_2d(x))[1]


@dataclass(eq=False)
class SpaceTimeLift:
    """Piecewise-constant evaluator of a space-time function.

    Time ``t`` in ``[(n-1) dt, n dt)`` reads slice ``n``; the tail
    ``[N dt, T]`` reads slice ``N``.
    """

    u: SpaceTimeFunction

    def __post_init__(self):
        self._loc = _Locator(self.u.mesh)

    def slab(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        n = np.floor(t / self.u.dt + 1e-12).astype(np.int64) + 1
        return np.clip(n, 1, self.u.N)

    def __call__(self, t, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = np.broadcast_to(self.slab(t), (len(x),))
        K = self.u.mesh.cell_cluster[self._loc.cell(x)]
        V = self._loc.vertex(x)
        up = self.u.primal[n, K]
        ud = self.u.dual[n, V]
        d = self.u.mesh.dim
        return up, ud, up / d + (d - 1) * ud / d

    def lp_norm(self, p: float = 1.0, part: str = "combined") -> float:
        """Lp(Q) norm over ``(0, N dt)``."""
        m = self.u.mesh
        d = m.dim
        mp = m.primal_measure[: m.n_primal]
        sp = np.abs(self.u.primal[1:, : m.n_primal]) ** p @ mp
        sd = np.abs(self.u.dual[1:]) ** p @ m.dual_measure
        if part == "primal":
            tot = sp
        elif part == "dual":
            tot = sd
        else:
            tot = sp / d + (d - 1) * sd / d
        return float((self.u.dt * tot.sum()) ** (1 / p))


def lift_to_Q(u: SpaceTimeFunction) -> SpaceTimeLift:
    return SpaceTimeLift(u)

"""Discrete gradient, divergence, penalization and convection operators.

Array-level helpers (``*_arrays``) work on the bar layout
``(primal[n_primal_total], dual[n_vertices])`` and are what the solver
calls; the public functions wrap them in the field containers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .fields import (
    DiscreteField,
    DiscreteFunction,
    DiscreteFunctionBar,
    inner_fields,
    inner_functions,
)
from .mesh import DdfvMesh
from .physics import Flux, MonotoneMap, stieltjes


class InvalidBound(ValueError):
    pass


class PreconditionViolation(ValueError):
    pass


# ---------------------------------------------------------------------------
# sparse operator matrices


@dataclass(frozen=True, eq=False)
class OperatorMatrices:
    """Sparse forms of the linear operators on a fixed mesh.

    ``grad`` maps the stacked bar vector ``[primal; dual]`` to the flattened
    field ``(n_diamonds * d,)``; ``div`` maps a flattened field to the
    stacked interior vector ``[primal[:n_primal]; dual[dual_interior]]``.
    """

    grad: csr_matrix
    div: csr_matrix
    penal: csr_matrix


@lru_cache(maxsize=16)
def operator_matrices(mesh: DdfvMesh) -> OperatorMatrices:
    d = mesh.dim
    nD = mesh.n_diamonds
    nPt = mesh.n_primal_total
    nv = mesh.n_vertices
    nK = mesh.n_primal
    nI = mesh.n_dual
    comps = np.arange(d)

    # gradient
    rows, cols, vals = [], [], []
    r = (np.arange(nD)[:, None] * d + comps[None, :]).ravel()
    coefp = (mesh.dia_normal / mesh.dia_dKL[:, None]).ravel()
    rows += [r, r]
    cols += [np.repeat(mesh.dia_K, d), np.repeat(mesh.dia_L, d)]
    vals += [-coefp, coefp]
    mS = mesh.sub_measure / mesh.dia_measure[mesh.sub_dia]
    coefs = ((d - 1) * mS / mesh.sub_dab)[:, None] * mesh.sub_nu_star
    rs = (mesh.sub_dia[:, None] * d + comps[None, :]).ravel()
    rows += [rs, rs]
    cols += [nPt + np.repeat(mesh.sub_a, d), nPt + np.repeat(mesh.sub_b, d)]
    vals += [-coefs.ravel(), coefs.ravel()]
    G = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nD * d, nPt + nv)
    ).tocsr()

    # divergence
    rows, cols, vals = [], [], []
    flux_p = (mesh.dia_mKL[:, None] * mesh.dia_normal).ravel()
    Kr = np.repeat(mesh.dia_K, d)
    Lr = np.repeat(mesh.dia_L, d)
    mK = mesh.primal_measure
    sel = Kr < nK
    rows.append(Kr[sel])
    cols.append(r[sel])
    vals.append(flux_p[sel] / mK[Kr[sel]])
    sel = Lr < nK
    rows.append(Lr[sel])
    cols.append(r[sel])
    vals.append(-flux_p[sel] / mK[Lr[sel]])
    pos = mesh.dual_position
    flux_d = (mesh.sub_msigma_star[:, None] * mesh.sub_nu_star).ravel()
    ar = np.repeat(mesh.sub_a, d)
    br = np.repeat(mesh.sub_b, d)
    mV = mesh.dual_measure
    sel = pos[ar] >= 0
    rows.append(nK + pos[ar[sel]])
    cols.append(rs[sel])
    vals.append(flux_d[sel] / mV[ar[sel]])
    sel = pos[br] >= 0
    rows.append(nK + pos[br[sel]])
    cols.append(rs[sel])
    vals.append(-flux_d[sel] / mV[br[sel]])
    Dv = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nK + nI, nD * d)
    ).tocsr()

    # penalization: rows interior primal then interior dual, columns bar vector
    h = mesh.size
    oK, oV, om = mesh.ov_K, mesh.ov_V, mesh.ov_m
    cp = (d - 1) / h * om / mK[oK]
    rows = [oK, oK]
    cols = [oK, nPt + oV]
    vals = [cp, -cp]
    sel = pos[oV] >= 0
    cd = om[sel] / h / mV[oV[sel]]
    rows += [nK + pos[oV[sel]], nK + pos[oV[sel]]]
    cols += [nPt + oV[sel], oK[sel]]
    vals += [cd, -cd]
    P = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nK + nI, nPt + nv)
    ).tocsr()
    return OperatorMatrices(G, Dv, P)


def stack_bar(w: DiscreteFunctionBar) -> np.ndarray:
    return np.concatenate([w.primal, w.dual])


def split_interior(mesh: DdfvMesh, v: np.ndarray) -> DiscreteFunction:
    return DiscreteFunction(mesh, v[: mesh.n_primal], v[mesh.n_primal :])


# ---------------------------------------------------------------------------
# gradient, divergence, penalization


def gradient(w: DiscreteFunctionBar) -> DiscreteField:
    """Diamond-wise gradient, exact on affine data sampled at the centres."""
    m = w.mesh
    return DiscreteField(m, (operator_matrices(m).grad @ stack_bar(w)).reshape(m.n_diamonds, m.dim))


def gradient_arrays(mesh: DdfvMesh, wp: np.ndarray, wd: np.ndarray) -> np.ndarray:
    return (operator_matrices(mesh).grad @ np.concatenate([wp, wd])).reshape(mesh.n_diamonds, mesh.dim)


def divergence(F: DiscreteField) -> DiscreteFunction:
    """Interior primal and dual divergence of a diamond field."""
    m = F.mesh
    return split_interior(m, operator_matrices(m).div @ F.values.ravel())


def divergence_arrays(mesh: DdfvMesh, F: np.ndarray) -> np.ndarray:
    return operator_matrices(mesh).div @ np.asarray(F).ravel()


def penalization(w: DiscreteFunctionBar) -> DiscreteFunction:
    """Double-mesh penalization of order ``1/size``."""
    m = w.mesh
    return split_interior(m, operator_matrices(m).penal @ stack_bar(w))


def penalization_arrays(mesh: DdfvMesh, wp: np.ndarray, wd: np.ndarray) -> np.ndarray:
    return operator_matrices(mesh).penal @ np.concatenate([wp, wd])


# ---------------------------------------------------------------------------
# numerical convection fluxes

FLUX_TAGS = ("godunov", "rusanov", "lax_friedrichs", "engquist_osher")


def _golden(h: Callable, lo: np.ndarray, hi: np.ndarray, sense: float, iters: int = 60) -> np.ndarray:
    # maximise sense*h on [lo, hi] (vectorised over rows)
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    c = b - gr * (b - a)
    dd = a + gr * (b - a)
    fc, fd = sense * h(c), sense * h(dd)
    for _ in range(iters):
        left = fc > fd
        b = np.where(left, dd, b)
        a = np.where(left, a, c)
        newc = b - gr * (b - a)
        newd = a + gr * (b - a)
        c2 = np.where(left, newc, dd)
        d2 = np.where(left, c, newd)
        fc2 = np.where(left, sense * h(newc), fd)
        fd2 = np.where(left, fc, sense * h(newd))
        c, dd, fc, fd = c2, d2, fc2, fd2
    x = 0.5 * (a + b)
    return h(x)


@dataclass(eq=False)
class FluxFunctionPair:
    """Monotone two-point flux ``g(a, b; nu)`` built from a convective flux.

    Calls are vectorised over interfaces: ``a``, ``b`` have shape ``(n,)``
    and ``nu`` shape ``(n, d)``.
    """

    flux: Flux
    tag: str
    M: float
    samples: int = 256
    lipschitz_grid: int = 10_000
    safety: float = 1.05

    def __post_init__(self):
        if not (self.M > 0):
            raise InvalidBound("the bound M must be positive")
        if self.tag not in FLUX_TAGS:
            raise ValueError(f"unknown flux {self.tag!r}; choose from {FLUX_TAGS}")
        z = np.linspace(-self.M, self.M, self.lipschitz_grid)
        self._grid = z
        if self.flux.separable:
            ph = self.flux.profile(z)
            self._profile_slope = float(np.abs(np.diff(ph) / np.diff(z)).max(initial=0.0))
            e = self.flux.direction
            self.lipschitz = self._profile_slope * float(np.linalg.norm(e))
        else:
            F = self.flux(z)
            self._slopes = np.diff(F, axis=0) / np.diff(z)[:, None]
            self.lipschitz = float(np.linalg.norm(self._slopes, axis=1).max(initial=0.0))
        self.lam_global = self.safety * self.lipschitz
        self._lam_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def modulus(self) -> dict:
        """Sampled Lipschitz constant of ``f`` on ``[-M, M]`` and the flux viscosity."""
        return {"lipschitz_f": self.lipschitz, "lambda_global": self.lam_global}

    # -- helpers ----------------------------------------------------------
    def h(self, s: np.ndarray, nu: np.ndarray) -> np.ndarray:
        """``f(s) . nu`` with one row of ``s`` per interface."""
        return self.flux.normal(s, nu)

    def lam(self, nu: np.ndarray) -> np.ndarray:
        if self.tag == "lax_friedrichs":
            return np.full(len(nu), self.lam_global)
        hit = self._lam_cache.get(id(nu))
        if hit is not None and hit[0] is nu:
            return hit[1]
        if self.flux.separable:
            lam = self.safety * self._profile_slope * np.abs(nu @ self.flux.direction)
        else:
            lam = self.safety * np.abs(self._slopes @ nu.T).max(axis=0)
        if not nu.flags.writeable:
            self._lam_cache[id(nu)] = (nu, lam)
        return lam

    def __call__(self, a, b, nu) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if self.tag == "godunov":
            return self._godunov(a, b, nu)
        if self.tag == "engquist_osher":
            return self._eo(a, b, nu)
        ha = self.h(a[:, None], nu)[:, 0]
        hb = self.h(b[:, None], nu)[:, 0]
        return 0.5 * (ha + hb) - 0.5 * self.lam(nu) * (b - a)

    def _godunov(self, a, b, nu):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        up = a <= b
        if self.flux.separable:
            crit = np.asarray(self.flux.critical_points, dtype=float)
            cand = [a, b] + [np.clip(np.full_like(a, c), lo, hi) for c in crit]
            H = self.h(np.stack(cand, axis=1), nu)
            return np.where(up, H.min(axis=1), H.max(axis=1))
        t = np.linspace(0.0, 1.0, self.samples)
        S = lo[:, None] + (hi - lo)[:, None] * t[None, :]
        H = self.h(S, nu)
        sense = np.where(up, -1.0, 1.0)
        j = np.argmax(sense[:, None] * H, axis=1)
        rows = np.arange(len(a))
        best = H[rows, j]
        jl = np.clip(j - 1, 0, len(t) - 1)
        jr = np.clip(j + 1, 0, len(t) - 1)
        refined = np.empty_like(best)
        for sval in (-1.0, 1.0):
            sel = sense == sval
            if not np.any(sel):
                continue
            nus = nu[sel]

            def hs(x, nus=nus):
                return self.h(x[:, None], nus)[:, 0]

            refined[sel] = _golden(hs, S[sel, jl[sel]], S[sel, jr[sel]], sval)
        return np.where(up, np.minimum(best, refined), np.maximum(best, refined))

    def _eo(self, a, b, nu):
        if self.flux.separable:
            s = nu @ self.flux.direction
            Pa, Na = self._variations(a)
            Pb, Nb = self._variations(b)
            return np.where(s >= 0, s * (Pa + Nb), s * (Na + Pb))
        pa, _ = self._path_variations(a, nu)
        _, nb = self._path_variations(b, nu)
        return pa + nb

    def _path_variations(self, z, nu, n: int = 257):
        """Signed positive/negative variations of ``h(., nu)`` between 0 and ``z``.

        Sampled on the increasing path between ``min(0, z)`` and ``max(0, z)``;
        interior extrema are refined by golden-section search so the
        variations stay exact for piecewise monotone profiles.
        """
        lo, hi = np.minimum(z, 0.0), np.maximum(z, 0.0)
        t = np.linspace(0.0, 1.0, n)
        S = lo[:, None] + (hi - lo)[:, None] * t[None, :]
        H = self.h(S, nu)
        dH = np.diff(H, axis=1)
        turn = dH[:, :-1] * dH[:, 1:] < 0
        rows, cols = np.nonzero(turn)
        if len(rows):
            j = cols + 1
            sense = np.where(dH[rows, cols] > 0, 1.0, -1.0)
            for sval in (-1.0, 1.0):
                sel = sense == sval
                if not np.any(sel):
                    continue
                r, jj = rows[sel], j[sel]
                nus = nu[r]

                def hs(x, nus=nus):
                    return self.h(x[:, None], nus)[:, 0]

                ext = _golden(hs, S[r, jj - 1], S[r, jj + 1], sval)
                H[r, jj] = np.where(sval > 0, np.maximum(H[r, jj], ext), np.minimum(H[r, jj], ext))
            dH = np.diff(H, axis=1)
        P = np.maximum(dH, 0).sum(axis=1)
        N = np.minimum(dH, 0).sum(axis=1)
        sgn = np.where(z >= 0, 1.0, -1.0)
        return sgn * P, sgn * N

    def _variations(self, z):
        """``int_0^z (phi')^+`` and ``int_0^z (phi')^-`` for the scalar profile."""
        phi = self.flux.profile
        knots = np.unique(np.asarray(self.flux.critical_points + (0.0,), dtype=float))
        edges = np.concatenate([[-np.inf], knots, [np.inf]])
        lo, hi = np.minimum(z, 0.0), np.maximum(z, 0.0)
        P = np.zeros_like(z)
        N = np.zeros_like(z)
        for e0, e1 in zip(edges[:-1], edges[1:]):
            x0 = np.maximum(lo, e0)
            x1 = np.minimum(hi, e1)
            ok = x1 > x0
            dphi = np.where(ok, phi(np.where(ok, x1, 0.0)) - phi(np.where(ok, x0, 0.0)), 0.0)
            P += np.maximum(dphi, 0.0)
            N += np.minimum(dphi, 0.0)
        sgn = np.where(z >= 0, 1.0, -1.0)
        return sgn * P, sgn * N


def make_flux(f: Flux, scheme_tag: str, M: float, **kw) -> FluxFunctionPair:
    return FluxFunctionPair(f, scheme_tag, float(M), **kw)


def convection_arrays(mesh: DdfvMesh, flux: FluxFunctionPair, up: np.ndarray, ud: np.ndarray) -> np.ndarray:
    """Stacked interior convection divergence ``[primal; interior dual]``."""
    nK = mesh.n_primal
    g = flux(up[mesh.dia_K], up[mesh.dia_L], mesh.dia_normal) * mesh.dia_mKL
    vp = np.bincount(mesh.dia_K, weights=g, minlength=mesh.n_primal_total)
    vp -= np.bincount(mesh.dia_L, weights=g, minlength=mesh.n_primal_total)
    vp = vp[:nK] / mesh.primal_measure[:nK]
    gd = flux(ud[mesh.edge_a], ud[mesh.edge_b], mesh.edge_nu) * mesh.edge_measure
    vd = np.bincount(mesh.edge_a, weights=gd, minlength=mesh.n_vertices)
    vd -= np.bincount(mesh.edge_b, weights=gd, minlength=mesh.n_vertices)
    vd = vd / mesh.dual_measure
    return np.concatenate([vp, vd[mesh.dual_interior]])


def convection_divergence(u: DiscreteFunctionBar, flux: FluxFunctionPair) -> DiscreteFunction:
    return split_interior(u.mesh, convection_arrays(u.mesh, flux, u.primal, u.dual))


# ---------------------------------------------------------------------------
# convection decomposition


@dataclass(frozen=True)
class EntropyDissipationReport:
    I_faces: np.ndarray  # per diamond
    I_faces_dual: np.ndarray  # per dual edge
    I_primal: float
    I_dual: float
    R_primal: float
    R_dual: float
    R_bound_primal: float
    R_bound_dual: float
    lhs: float
    q_term: float
    identity_defect: float
    scale: float

    @property
    def min_I(self) -> float:
        return float(min(self.I_faces.min(initial=np.inf), self.I_faces_dual.min(initial=np.inf)))

    @property
    def bounds_hold(self) -> bool:
        tol = 1e-12 * self.scale
        return abs(self.R_primal) <= self.R_bound_primal + tol and abs(self.R_dual) <= self.R_bound_dual + tol


def entropy_flux_q(flux: Flux, theta: MonotoneMap, z: np.ndarray) -> np.ndarray:
    """``q(z) = theta(z) f(z) - int_0^z f dtheta`` (so that ``q(0) = 0``), shape ``(n, d)``."""
    z = np.asarray(z, dtype=float)
    if flux.separable:
        integ = stieltjes(lambda s: flux.profile(s), theta, np.zeros_like(z), z)
        return (theta(z) * flux.profile(z) - integ)[:, None] * flux.direction[None, :]
    out = theta(z)[:, None] * flux(z)
    for c in range(flux.dim):
        out[:, c] -= stieltjes(lambda s, c=c: flux(s)[..., c], theta, np.zeros_like(z), z)
    return out


def dual_edge_average(mesh: DdfvMesh, per_sub: np.ndarray) -> np.ndarray:
    """Measure-weighted average over the subdiamond pieces of each dual interface."""
    num = np.bincount(mesh.sub_edge, weights=mesh.sub_msigma_star * per_sub, minlength=len(mesh.edge_a))
    return np.divide(num, mesh.edge_measure, out=np.zeros_like(num), where=mesh.edge_measure > 0)


def green_gradient(psi: DiscreteFunctionBar) -> tuple[np.ndarray, np.ndarray]:
    """Cell averages of ``grad psi`` from interface averages (divergence theorem).

    Returns ``m_K (grad psi)_K`` for interior primal volumes and
    ``m_K* (grad psi)_K*`` for every vertex (meaningful on interior duals).
    """
    m = psi.mesh
    if psi.interface is None or psi.interface_dual is None:
        raise PreconditionViolation("psi needs interface averages (use project_bar)")
    d = m.dim
    Gp = np.zeros((m.n_primal_total, d))
    w = (m.dia_mKL * psi.interface)[:, None] * m.dia_normal
    np.add.at(Gp, m.dia_K, w)
    np.add.at(Gp, m.dia_L, -w)
    Gd = np.zeros((m.n_vertices, d))
    ws = (m.sub_msigma_star * psi.interface_dual)[:, None] * m.sub_nu_star
    np.add.at(Gd, m.sub_a, ws)
    np.add.at(Gd, m.sub_b, -ws)
    return Gp[: m.n_primal], Gd


def check_carrillo(theta: MonotoneMap, psi: DiscreteFunctionBar) -> None:
    """Either ``theta(0) = 0`` or ``psi`` vanishes on every boundary volume."""
    if float(theta(np.zeros(1))[0]) == 0.0:
        return
    m = psi.mesh
    if np.any(psi.primal[m.n_primal :] != 0.0) or np.any(psi.dual[m.dual_boundary] != 0.0):
        raise PreconditionViolation(
            "theta(0) != 0 requires a test function vanishing on all boundary volumes"
        )


def _sup(*arrays) -> float:
    return float(max(max(np.abs(a).max(initial=0.0), 1.0) for a in arrays))


def entropy_dissipation_report(
    u: DiscreteFunctionBar,
    theta: MonotoneMap,
    psi: DiscreteFunctionBar,
    flux: FluxFunctionPair,
) -> EntropyDissipationReport:
    """Evaluate both sides of the convection decomposition.

    ``psi`` must come from :func:`project_bar` so its interface averages
    are available.  ``identity_defect`` is LHS minus the sum of all
    right-hand terms and should vanish up to rounding.
    """
    m = u.mesh
    if not u.in_zero_space():
        raise PreconditionViolation("u must vanish on boundary volumes")
    check_carrillo(theta, psi)
    d = m.dim
    nK = m.n_primal
    up, ud = u.primal, u.dual
    f = flux.flux

    # primal interfaces
    a, b, nu = up[m.dia_K], up[m.dia_L], m.dia_normal
    gab = flux(a, b, nu)
    gaa = flux.h(a[:, None], nu)[:, 0]
    gbb = flux.h(b[:, None], nu)[:, 0]
    I_f = stieltjes(lambda s: flux.h(s, nu) - gab[:, None], theta, a, b)
    pK, pL, pKL = psi.primal[m.dia_K], psi.primal[m.dia_L], psi.interface
    tha, thb = theta(a), theta(b)
    I_p = np.dot(m.dia_mKL, I_f * pKL) / d
    R_p = np.dot(m.dia_mKL, thb * (gbb - gab) * (pL - pKL) - tha * (gaa - gab) * (pK - pKL)) / d

    # dual interfaces
    ea, eb, nus = ud[m.edge_a], ud[m.edge_b], m.edge_nu
    gab_s = flux(ea, eb, nus)
    gaa_s = flux.h(ea[:, None], nus)[:, 0]
    gbb_s = flux.h(eb[:, None], nus)[:, 0]
    I_fs = stieltjes(lambda s: flux.h(s, nus) - gab_s[:, None], theta, ea, eb)
    pa, pb = psi.dual[m.edge_a], psi.dual[m.edge_b]
    pab = dual_edge_average(m, psi.interface_dual)
    tha_s, thb_s = theta(ea), theta(eb)
    w_s = (d - 1) / d
    I_d = w_s * np.dot(m.edge_measure, I_fs * pab)
    R_d = w_s * np.dot(
        m.edge_measure, thb_s * (gbb_s - gab_s) * (pb - pab) - tha_s * (gaa_s - gab_s) * (pa - pab)
    )

    # remainder bounds (max of |theta| over all volumes, boundary included)
    thmax = float(max(np.abs(theta(up)).max(initial=0.0), np.abs(theta(ud)).max(initial=0.0)))
    Rb_p = thmax / d * np.dot(m.dia_mKL, (np.abs(gaa - gab) + np.abs(gbb - gab)) * (np.abs(pK - pKL) + np.abs(pL - pKL)))
    Rb_d = thmax * w_s * np.dot(
        m.edge_measure, (np.abs(gaa_s - gab_s) + np.abs(gbb_s - gab_s)) * (np.abs(pa - pab) + np.abs(pb - pab))
    )

    # left-hand side [[div_c f[u], theta(u) psi]]
    conv = convection_arrays(m, flux, up, ud)
    tp = theta(up[:nK]) * psi.primal[:nK]
    td = theta(ud) * psi.dual
    mV = m.dual_measure
    lhs = (np.dot(m.primal_measure[:nK] * conv[:nK], tp) / d
           + w_s * np.dot(mV[m.dual_interior] * conv[nK:], td[m.dual_interior]))

    # [[q(u), (grad psi)]]
    Gp, Gd = green_gradient(psi)
    qp = entropy_flux_q(f, theta, up[:nK])
    qd = entropy_flux_q(f, theta, ud[m.dual_interior])
    q_term = np.einsum("nd,nd->", qp, Gp) / d + w_s * np.einsum("nd,nd->", qd, Gd[m.dual_interior])

    rhs = -q_term + I_p + R_p + I_d + R_d
    scale = float(m.domain_measure * _sup(theta(up), theta(ud)) * _sup(psi.primal, psi.dual) * _sup(gaa, gbb))
    return EntropyDissipationReport(
        I_faces=I_f,
        I_faces_dual=np.where(m.edge_measure > 0, I_fs, 0.0),
        I_primal=float(I_p),
        I_dual=float(I_d),
        R_primal=float(R_p),
        R_dual=float(R_d),
        R_bound_primal=float(Rb_p),
        R_bound_dual=float(Rb_d),
        lhs=float(lhs),
        q_term=float(q_term),
        identity_defect=float(lhs - rhs),
        scale=scale,
    )


def weak_bv(u: DiscreteFunctionBar, flux: FluxFunctionPair) -> float:
    """Interfacial dissipation with ``theta = Id`` and unit test function."""
    m = u.mesh
    d = m.dim
    up, ud = u.primal, u.dual
    a, b, nu = up[m.dia_K], up[m.dia_L], m.dia_normal
    gab = flux(a, b, nu)
    ident = MonotoneMap(lambda z: np.asarray(z, float), lambda z: np.ones_like(z))
    I_f = stieltjes(lambda s: flux.h(s, nu) - gab[:, None], ident, a, b)
    ea, eb, nus = ud[m.edge_a], ud[m.edge_b], m.edge_nu
    gs = flux(ea, eb, nus)
    I_s = stieltjes(lambda s: flux.h(s, nus) - gs[:, None], ident, ea, eb)
    return float(np.dot(m.dia_mKL, I_f) / d + (d - 1) / d * np.dot(m.edge_measure, I_s))


# ---------------------------------------------------------------------------
# structural identities as callable checks


def duality_defect(F: DiscreteField, v: DiscreteFunctionBar, div=divergence) -> tuple[float, float]:
    """``[[-div F, v]] - {{F, grad v}}`` and its natural scale."""
    if not v.in_zero_space():
        raise PreconditionViolation("v must vanish on boundary volumes")
    lhs = -inner_functions(div(F), v.interior())
    rhs = inner_fields(F, gradient(v))
    scale = float(np.abs(F.values).max(initial=0.0) * v.sup_norm() * F.mesh.domain_measure)
    return lhs - rhs, scale


def penalization_weak_form(w: DiscreteFunctionBar, psi: DiscreteFunctionBar, theta_u: np.ndarray | None = None) -> float:
    """Double sum over overlaps ``(d-1)/d * sum m (w_K - w_K*)(psi_K - psi_K*) / size``.

    With ``theta_u`` (values of ``theta(u_K)`` on interior primal volumes)
    each term is weighted by it.
    """
    m = w.mesh
    d = m.dim
    K, V, om = m.ov_K, m.ov_V, m.ov_m
    terms = om * (w.primal[K] - w.dual[V]) * (psi.primal[K] - psi.dual[V])
    if theta_u is not None:
        terms = terms * np.asarray(theta_u)[K]
    return float((d - 1) / d * terms.sum() / m.size)


def diffusion_entropy_terms(
    u: DiscreteFunctionBar, theta: MonotoneMap, psi: DiscreteFunctionBar, spec
) -> tuple[float, float, float]:
    """``[[-div a(grad w), theta(u) psi]]``, ``{{k(grad w) grad A_theta(u), grad psi}}`` and a scale."""
    from .physics import A_theta, diffusion_flux

    check_carrillo(theta, psi)
    m = u.mesh
    w = DiscreteFunctionBar(m, spec.A(u.primal), spec.A(u.dual))
    gw = gradient(w).values
    r = np.linalg.norm(gw, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kv = np.where(r > 0, spec.k(np.where(r > 0, r, 1.0)), 0.0)
    F = DiscreteField(m, diffusion_flux(spec, gw))
    th = compose_bar(u, theta)
    tpsi = DiscreteFunctionBar(m, th.primal * psi.primal, th.dual * psi.dual).interior()
    lhs = -inner_functions(divergence(F), tpsi)
    At = A_theta(theta, spec)
    gAt = gradient(DiscreteFunctionBar(m, At(u.primal), At(u.dual))).values
    gpsi = gradient(psi).values
    rhs = float(np.dot(m.dia_measure, kv * np.einsum("nd,nd->n", gAt, gpsi)))
    scale = float(m.domain_measure * _sup(F.values) * _sup(th.primal, th.dual) * _sup(gpsi))
    return lhs, rhs, scale


def entropy_dissipation_inequality(u: DiscreteFunctionBar, theta: MonotoneMap, psi: DiscreteFunctionBar, spec) -> tuple[float, float]:
    """Slack of the diffusion entropy-dissipation inequality (should be >= 0)."""
    lhs, rhs, scale = diffusion_entropy_terms(u, theta, psi, spec)
    return lhs - rhs, scale


def compose_bar(u: DiscreteFunctionBar, g) -> DiscreteFunctionBar:
    return DiscreteFunctionBar(u.mesh, np.asarray(g(u.primal), float), np.asarray(g(u.dual), float))

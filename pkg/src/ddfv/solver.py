"""Fully implicit time stepping of the DDFV scheme.

Each step solves for ``u`` on the interior primal volumes and interior
vertices.  Newton uses a finite-difference Jacobian whose columns are
grouped by a greedy colouring of the scheme's stencil.  When it stalls the
diffusion is regularised as ``A + rho z`` and ``rho`` is driven to zero; a
frozen-coefficient Picard iteration is the last resort.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix, diags, identity
from scipy.sparse.linalg import gmres, spsolve

from .fields import (
    DiscreteFunction,
    DiscreteFunctionBar,
    SpaceTimeFunction,
    field_lp_norm,
    wdot,
    inner_functions,
    n_steps,
    project_cells,
    time_average,
    DiscreteField,
    mesh_quadrature,
)
from .mesh import DdfvMesh
from .operators import (
    FluxFunctionPair,
    convection_arrays,
    make_flux,
    operator_matrices,
    weak_bv,
)
from .physics import ProblemSpec, diffusion_flux

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """Raised when every nonlinear strategy fails; carries the best state."""

    def __init__(self, message, *, residual=np.inf, iterate=None, continuation=None, partial=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate
        self.continuation = continuation
        self.partial = partial


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    T: float
    flux: str = "godunov"
    penalization: bool = True
    rho: float = 0.0
    tol: float = 1e-10
    max_newton: int = 30
    armijo_c: float = 1e-4
    max_halvings: int = 30
    continuation: tuple[float, ...] = (1e-2, 1e-4, 1e-6, 0.0)
    picard_fallback: bool = True
    picard_relaxation: float = 1.0
    max_picard: int = 500
    delta: float = 1e-10
    quad_order: int = 2
    time_points: int = 4
    linear_solver: str = "direct"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not 0 < self.picard_relaxation <= 1:
            raise ValueError("picard relaxation must lie in (0, 1]")

    @property
    def N(self) -> int:
        return n_steps(self.T, self.dt)


@dataclass(frozen=True)
class StepReport:
    n: int
    t: float
    residual: float
    iterations: int
    regularization: tuple[float, ...]
    strategy: str
    u_min: float
    u_max: float

    @property
    def linf(self) -> float:
        return max(abs(self.u_min), abs(self.u_max))


@dataclass
class RunResult:
    mesh: DdfvMesh
    spec: ProblemSpec
    cfg: SchemeConfig
    flux: FluxFunctionPair
    u: SpaceTimeFunction
    w: SpaceTimeFunction
    sources: list[DiscreteFunction]
    reports: list[StepReport]
    M: float
    diagnostics: dict = field(default_factory=dict)
    per_step: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# the discrete system


@dataclass(eq=False)
class StepSystem:
    """Residual of one implicit step as a function of the unknown vector."""

    mesh: DdfvMesh
    spec: ProblemSpec
    cfg: SchemeConfig
    flux: FluxFunctionPair

    def __post_init__(self):
        m = self.mesh
        self.nK = m.n_primal
        self.nI = m.n_dual
        self.ops = operator_matrices(m)
        d = m.dim
        self.wts = np.concatenate(
            [m.primal_measure[: self.nK] / d, (d - 1) / d * m.dual_measure[m.dual_interior]]
        )
        self.has_flux = not self.spec.f.is_zero
        self.has_diffusion = not self.spec.degenerate_A

    # layout helpers
    def to_bar(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.mesh
        up = np.zeros(m.n_primal_total)
        up[: self.nK] = x[: self.nK]
        ud = np.zeros(m.n_vertices)
        ud[m.dual_interior] = x[self.nK :]
        return up, ud

    def from_bar(self, up: np.ndarray, ud: np.ndarray) -> np.ndarray:
        return np.concatenate([up[: self.nK], ud[self.mesh.dual_interior]])

    def norm(self, r: np.ndarray) -> float:
        return float(np.sqrt(wdot(self.wts, r * r)))

    def A(self, z: np.ndarray, rho: float) -> np.ndarray:
        v = self.spec.A(z)
        return v + rho * z if rho else v

    def spatial(self, x: np.ndarray, rho: float = 0.0, delta: float = 0.0) -> np.ndarray:
        """Convection, diffusion and penalization terms (per unit volume)."""
        up, ud = self.to_bar(x)
        out = np.zeros_like(x)
        if self.has_flux:
            out += convection_arrays(self.mesh, self.flux, up, ud)
        if self.has_diffusion or rho:
            wbar = np.concatenate([self.A(up, rho), self.A(ud, rho)])
            if not wbar.any():
                return out
            gw = (self.ops.grad @ wbar).reshape(-1, self.mesh.dim)
            F = diffusion_flux(self.spec, gw, delta)
            out -= self.ops.div @ F.ravel()
            if self.cfg.penalization:
                out += self.ops.penal @ wbar
        return out

    def residual(self, x, x_prev, s, rho: float = 0.0, delta: float = 0.0) -> np.ndarray:
        return (x - x_prev) / self.cfg.dt + self.spatial(x, rho, delta) - s

    # Jacobian
    @property
    def pattern(self) -> csr_matrix:
        return _pattern(self.mesh)

    @property
    def colors(self) -> np.ndarray:
        return _coloring(self.mesh)

    def jacobian(self, x: np.ndarray, rho: float) -> csr_matrix:
        delta = self.cfg.delta if self.spec.p < 2 else 0.0
        base = self.spatial(x, rho, delta)
        P = self.pattern
        col = self.colors
        ncol = int(col.max()) + 1 if len(col) else 0
        eps = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(x))
        rows, cols = P.nonzero()
        vals = np.zeros(len(rows))
        by_color = col[cols]
        for c in range(ncol):
            sel = col == c
            xp = x.copy()
            xp[sel] += eps[sel]
            diff = self.spatial(xp, rho, delta) - base
            hit = by_color == c
            vals[hit] = diff[rows[hit]] / eps[cols[hit]]
        J = csr_matrix((vals, (rows, cols)), shape=P.shape)
        return J + identity(len(x), format="csr") / self.cfg.dt

    def picard_matrix(self, x: np.ndarray, rho: float) -> csr_matrix:
        """Frozen-coefficient linearisation: upwind-type convection, frozen ``k``, chord slope of ``A``."""
        m = self.mesh
        n = len(x)
        J = identity(n, format="csr") / self.cfg.dt
        up, ud = self.to_bar(x)
        if self.has_flux:
            J = J + _convection_frozen(self, up, ud)
        if self.has_diffusion or rho:
            z = np.concatenate([up, ud])
            eta = 1e-6 * max(1.0, float(np.abs(z).max(initial=0.0)))
            slope = (self.A(z + eta, rho) - self.A(z - eta, rho)) / (2 * eta)
            wbar = self.A(z, rho)
            gw = (self.ops.grad @ wbar).reshape(-1, m.dim)
            r = np.linalg.norm(gw, axis=1)
            delta = max(self.cfg.delta, 1e-8)
            kv = self.spec.k(np.maximum(r, delta))
            Kd = diags(np.repeat(kv, m.dim))
            L = self.ops.div @ Kd @ self.ops.grad
            if self.cfg.penalization:
                L = -L + self.ops.penal
            else:
                L = -L
            sel = _unknown_columns(m)
            J = J + (L @ diags(slope))[:, sel]
        return csr_matrix(J)


def _unknown_columns(mesh: DdfvMesh) -> np.ndarray:
    return np.concatenate([np.arange(mesh.n_primal), mesh.n_primal_total + mesh.dual_interior])


@lru_cache(maxsize=16)
def _pattern(mesh: DdfvMesh) -> csr_matrix:
    ops = operator_matrices(mesh)
    sel = _unknown_columns(mesh)
    D = abs(ops.div).astype(bool).astype(float)
    G = abs(ops.grad).astype(bool).astype(float)
    P = abs(ops.penal).astype(bool).astype(float)
    S = (D @ G + P)[:, sel]
    n = len(sel)
    S = S + identity(n, format="csr")
    S = csr_matrix(S.astype(bool).astype(float))
    S.sort_indices()
    return S


@lru_cache(maxsize=16)
def _coloring(mesh: DdfvMesh) -> np.ndarray:
    """Greedy distance-2 colouring: columns sharing a row get distinct colours."""
    S = _pattern(mesh)
    C = csr_matrix((S.T @ S).astype(bool))
    n = C.shape[0]
    col = np.full(n, -1, dtype=np.int64)
    indptr, indices = C.indptr, C.indices
    for j in range(n):
        nb = indices[indptr[j] : indptr[j + 1]]
        used = set(col[nb][col[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        col[j] = c
    return col


def _convection_frozen(sys_: StepSystem, up, ud) -> csr_matrix:
    """Centred-difference slopes of the numerical flux in each argument."""
    m = sys_.mesh
    fl = sys_.flux
    nK = m.n_primal
    blocks = []

    def couple(ia, ib, ca, cb, meas, nu, a, b, vol):
        eta = 1e-7 * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
        ga = (fl(a + eta, b, nu) - fl(a - eta, b, nu)) / (2 * eta)
        gb = (fl(a, b + eta, nu) - fl(a, b - eta, nu)) / (2 * eta)
        for sign, row, owner in ((1.0, ca, ia), (-1.0, cb, ib)):
            vv = vol[owner]
            vv = np.where(vv > 0, vv, 1.0)
            for col, g in ((ca, ga), (cb, gb)):
                ok = (row >= 0) & (col >= 0)
                blocks.append((row[ok], col[ok], sign * meas[ok] * g[ok] / vv[ok]))

    K, L = m.dia_K, m.dia_L
    couple(K, L, np.where(K < nK, K, -1), np.where(L < nK, L, -1),
           m.dia_mKL, m.dia_normal, up[K], up[L], m.primal_measure)
    ea, eb = m.edge_a, m.edge_b
    pa, pb = m.dual_position[ea], m.dual_position[eb]
    couple(ea, eb, np.where(pa >= 0, nK + pa, -1), np.where(pb >= 0, nK + pb, -1),
           m.edge_measure, m.edge_nu, ud[ea], ud[eb], m.dual_measure)
    R = np.concatenate([b[0] for b in blocks])
    C = np.concatenate([b[1] for b in blocks])
    V = np.concatenate([b[2] for b in blocks])
    n = nK + m.n_dual
    return csr_matrix((V, (R, C)), shape=(n, n))


# ---------------------------------------------------------------------------
# public API


def initial_condition(spec: ProblemSpec, mesh: DdfvMesh, order: int = 2) -> DiscreteFunctionBar:
    """Cell averages of ``u0`` with zero boundary entries."""
    return project_cells(spec.u0, mesh, order).to_bar()


def make_step_system(mesh: DdfvMesh, spec: ProblemSpec, cfg: SchemeConfig, M: float | None = None) -> StepSystem:
    if M is None:
        M = spec.m_bound(cfg.T, mesh_quadrature(mesh, cfg.quad_order).points)
    flux = make_flux(spec.f, cfg.flux, M if M > 0 else 1.0)
    return StepSystem(mesh, spec, cfg, flux)


def residual(
    u_candidate: DiscreteFunctionBar,
    u_prev,
    S_n: DiscreteFunction,
    cfg: SchemeConfig,
    spec: ProblemSpec,
    system: StepSystem | None = None,
) -> DiscreteFunction:
    """Per-volume residual of one step (already divided by the volume measures)."""
    m = u_candidate.mesh
    sys_ = system or make_step_system(m, spec, cfg)
    if not u_candidate.in_zero_space():
        raise ValueError("candidate must vanish on boundary volumes")
    prev = u_prev.interior() if isinstance(u_prev, DiscreteFunctionBar) else u_prev
    x = sys_.from_bar(u_candidate.primal, u_candidate.dual)
    xp = np.concatenate([prev.primal, prev.dual])
    s = np.concatenate([S_n.primal, S_n.dual])
    r = sys_.residual(x, xp, s)
    return DiscreteFunction(m, r[: m.n_primal], r[m.n_primal :])


def _linsolve(J, rhs, cfg: SchemeConfig):
    if cfg.linear_solver == "gmres":
        sol, info = gmres(J, rhs, rtol=1e-12, maxiter=2000)
        if info != 0:
            raise np.linalg.LinAlgError("gmres did not converge")
        return sol
    sol = spsolve(J.tocsc(), rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("singular Jacobian")
    return sol


def _newton(sys_: StepSystem, x0, xp, s, rho, tol, max_iter):
    cfg = sys_.cfg
    x = x0.copy()
    r = sys_.residual(x, xp, s, rho)
    nr = sys_.norm(r)
    it = 0
    while nr > tol and it < max_iter:
        it += 1
        try:
            J = sys_.jacobian(x, rho)
            dx = _linsolve(J, -r, cfg)
        except (np.linalg.LinAlgError, RuntimeError):
            return x, nr, it, False
        lam = 1.0
        for _ in range(cfg.max_halvings + 1):
            xn = x + lam * dx
            rn = sys_.residual(xn, xp, s, rho)
            nn = sys_.norm(rn)
            if nn <= (1 - cfg.armijo_c * lam) * nr or nn <= tol:
                break
            lam *= 0.5
        else:
            return x, nr, it, False
        x, r, nr = xn, rn, nn
    return x, nr, it, nr <= tol


def _picard(sys_: StepSystem, x0, xp, s, tol, max_iter):
    cfg = sys_.cfg
    x = x0.copy()
    r = sys_.residual(x, xp, s)
    nr = sys_.norm(r)
    it = 0
    while nr > tol and it < max_iter:
        it += 1
        try:
            dx = _linsolve(sys_.picard_matrix(x, 0.0), -r, cfg)
        except (np.linalg.LinAlgError, RuntimeError):
            break
        lam = cfg.picard_relaxation
        for _ in range(cfg.max_halvings + 1):
            xn = x + lam * dx
            rn = sys_.residual(xn, xp, s)
            nn = sys_.norm(rn)
            if nn < nr:
                break
            lam *= 0.5
        else:
            break
        x, r, nr = xn, rn, nn
    return x, nr, it, nr <= tol


def nonlinear_solve(
    u_prev,
    S_n: DiscreteFunction,
    cfg: SchemeConfig,
    spec: ProblemSpec,
    system: StepSystem | None = None,
    n: int = 1,
) -> tuple[DiscreteFunctionBar, StepReport]:
    """Solve one implicit step to ``||residual|| <= cfg.tol``."""
    prev = u_prev.interior() if isinstance(u_prev, DiscreteFunctionBar) else u_prev
    m = prev.mesh
    sys_ = system or make_step_system(m, spec, cfg)
    xp = np.concatenate([prev.primal, prev.dual])
    s = np.concatenate([S_n.primal, S_n.dual])
    tol = cfg.tol
    iters = 0
    rhos: list[float] = [cfg.rho]
    x, nr, it, ok = _newton(sys_, xp, xp, s, cfg.rho, tol, cfg.max_newton)
    iters += it
    strategy = "newton"
    best = (nr, x)
    if not ok and cfg.rho == 0.0:
        strategy = "continuation"
        y = xp.copy()
        nr2, ok2 = np.inf, False
        for rho in cfg.continuation:
            rhos.append(rho)
            y, nr2, it, ok2 = _newton(sys_, y, xp, s, rho, tol if rho == 0 else max(tol, 1e-8), cfg.max_newton)
            iters += it
        ok = ok2
        if ok or nr2 < best[0]:
            x, nr = y, nr2
        else:
            x, nr = best[1], best[0]
    if not ok and cfg.picard_fallback:
        strategy = "picard"
        x2, nr2, it, ok = _picard(sys_, x, xp, s, tol, cfg.max_picard)
        iters += it
        if nr2 < nr:
            x, nr = x2, nr2
    if not ok:
        raise NonConvergence(
            f"step {n}: residual {nr:.3e} above tolerance {tol:.1e}",
            residual=nr,
            iterate=x,
            continuation=tuple(rhos),
        )
    up, ud = sys_.to_bar(x)
    rep = StepReport(
        n=n,
        t=n * cfg.dt,
        residual=nr,
        iterations=iters,
        regularization=tuple(rhos),
        strategy=strategy,
        u_min=float(min(up.min(), ud.min())),
        u_max=float(max(up.max(), ud.max())),
    )
    return DiscreteFunctionBar(m, up, ud), rep


def _step_diagnostics(sys_: StepSystem, u: DiscreteFunctionBar, spec: ProblemSpec) -> dict:
    m = sys_.mesh
    w = DiscreteFunctionBar(m, spec.A(u.primal), spec.A(u.dual))
    gw = DiscreteField(m, (sys_.ops.grad @ np.concatenate([w.primal, w.dual])).reshape(-1, m.dim))
    pw = sys_.ops.penal @ np.concatenate([w.primal, w.dual])
    wi = np.concatenate([w.primal[: m.n_primal], w.dual[m.dual_interior]])
    nK = m.n_primal
    # boundary convective outflow through primal boundary facets
    bd = m.dia_L >= nK
    gb = sys_.flux(u.primal[m.dia_K[bd]], u.primal[m.dia_L[bd]], m.dia_normal[bd]) if sys_.has_flux else np.zeros(bd.sum())
    return {
        "grad_w_p": field_lp_norm(gw, spec.p) ** spec.p,
        "penal": float(np.dot(sys_.wts, pw * wi)),
        "weak_bv": weak_bv(u, sys_.flux) if sys_.has_flux else 0.0,
        "mass_primal": float(np.dot(m.primal_measure[:nK], u.primal[:nK])),
        "mass_dual": float(np.dot(m.dual_measure, u.dual)),
        "boundary_flux_primal": float(np.dot(m.dia_mKL[bd], gb)),
        "w_gap_l2sq": float(np.dot(m.ov_m, (w.primal[m.ov_K] - w.dual[m.ov_V]) ** 2)),
    }


def run(spec: ProblemSpec, mesh: DdfvMesh, cfg: SchemeConfig) -> RunResult:
    """March the scheme from ``t = 0`` to ``N dt``."""
    N = cfg.N
    q = mesh_quadrature(mesh, cfg.quad_order)
    M = spec.m_bound(cfg.T, q.points)
    sys_ = make_step_system(mesh, spec, cfg, M)
    sources = time_average(
        spec.source,
        cfg.dt,
        N,
        mesh,
        order=cfg.quad_order,
        time_points=cfg.time_points,
        breakpoints=spec.source_breakpoints,
    )
    u0 = initial_condition(spec, mesh, cfg.quad_order)
    U_p = np.zeros((N + 1, mesh.n_primal_total))
    U_d = np.zeros((N + 1, mesh.n_vertices))
    U_p[0], U_d[0] = u0.primal, u0.dual
    reports: list[StepReport] = []
    per: dict[str, list[float]] = {}
    u = u0
    for k, v in _step_diagnostics(sys_, u0, spec).items():
        per.setdefault(k, []).append(v)
    for n in range(1, N + 1):
        try:
            u, rep = nonlinear_solve(u, sources[n - 1], cfg, spec, sys_, n)
        except NonConvergence as exc:
            exc.partial = _assemble(mesh, spec, cfg, sys_, U_p[:n], U_d[:n], sources[: n - 1], reports, M, per, (n - 1) * cfg.dt)
            raise
        U_p[n], U_d[n] = u.primal, u.dual
        reports.append(rep)
        for k, v in _step_diagnostics(sys_, u, spec).items():
            per.setdefault(k, []).append(v)
        log.debug("step %d residual %.2e iterations %d", n, rep.residual, rep.iterations)
    return _assemble(mesh, spec, cfg, sys_, U_p, U_d, sources, reports, M, per, cfg.T)


def _assemble(mesh, spec, cfg, sys_, U_p, U_d, sources, reports, M, per, T) -> RunResult:
    u = SpaceTimeFunction(mesh, U_p, U_d, cfg.dt, T)
    w = SpaceTimeFunction(mesh, spec.A(U_p), spec.A(U_d), cfg.dt, T)
    dt = cfg.dt
    arr = {k: np.asarray(v) for k, v in per.items()}
    linf = max((r.linf for r in reports), default=float(np.abs(U_p).max(initial=0.0)))
    diag = {
        "M_bound": M,
        "max_abs_u": float(max(np.abs(U_p).max(initial=0.0), np.abs(U_d).max(initial=0.0))),
        "max_principle_ok": bool(linf <= M + 10 * cfg.tol),
        "energy_grad_w": float(dt * arr["grad_w_p"][1:].sum()) if "grad_w_p" in arr else 0.0,
        "penalization_sum": float(dt * arr["penal"][1:].sum()) if "penal" in arr else 0.0,
        "weak_bv_sum": float(dt * arr["weak_bv"][1:].sum()) if "weak_bv" in arr else 0.0,
        "w_gap_l2": float(np.sqrt(dt * arr["w_gap_l2sq"][1:].sum())) if "w_gap_l2sq" in arr else 0.0,
        "size": mesh.size,
        "steps": len(reports),
        "newton_iterations": int(sum(r.iterations for r in reports)),
    }
    return RunResult(mesh, spec, cfg, sys_.flux, u, w, list(sources), list(reports), M, diag, arr)


# ---------------------------------------------------------------------------
# discrete entropy inequalities on converged runs


@dataclass(frozen=True)
class TestFunction:
    """Space-time test function ``psi(t, X) >= 0``."""

    name: str
    psi: object
    touches_boundary: bool = False

    __test__ = False  # not a pytest class

    def __call__(self, t, X):
        return self.psi(t, X)


def _time_cutoff(t, t_stop):
    t = np.asarray(t, float)
    return np.where(t < t_stop, np.cos(0.5 * np.pi * np.clip(t / t_stop, 0.0, 1.0)) ** 2, 0.0)


def bump_test_function(center, radius: float, t_stop: float, name: str | None = None) -> TestFunction:
    """``chi(t) cos^2(pi |x - c| / 2r)`` on the ball of radius ``r``."""
    c = np.asarray(center, float)

    def psi(t, X):
        r = np.linalg.norm(np.asarray(X, float) - c, axis=-1)
        return _time_cutoff(t, t_stop) * np.where(r < radius, np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)

    return TestFunction(name or f"bump({','.join(f'{v:g}' for v in c)};{radius:g})", psi)


def global_test_function(t_stop: float, name: str = "global") -> TestFunction:
    """``chi(t) (1 + x_1 / 2)``, positive up to the boundary."""

    def psi(t, X):
        return _time_cutoff(t, t_stop) * (1.0 + 0.5 * np.asarray(X, float)[..., 0])

    return TestFunction(name, psi, touches_boundary=True)


@dataclass(frozen=True)
class EntropyResidual:
    kind: str  # "weak" or "entropy"
    sign: str
    c: float
    test: str
    lhs: float
    remainder: float
    slack: float
    scale: float
    dissipation: float


def _slab_projection(tf, n, dt, mesh, order, time_points):
    from .fields import project_bar
    from .quadrature import gauss_legendre01

    tg, wg = gauss_legendre01(time_points)
    t0 = (n - 1) * dt

    def avg(X):
        return sum(w * np.asarray(tf(t0 + dt * s, X), float) for s, w in zip(tg, wg))

    return project_bar(avg, mesh, order)


def discrete_entropy_residuals(
    result: RunResult,
    c_levels=(-0.5, 0.0, 0.5),
    tests=None,
    spec: ProblemSpec | None = None,
    *,
    signs=("+", "-"),
    eps: float = 0.0,
    order: int = 2,
    time_points: int = 4,
) -> list[EntropyResidual]:
    """Both sides of the discrete weak formulation and entropy inequalities.

    For each test function the weak form (``theta = 1``) gives a row with
    ``slack`` equal to LHS minus the remainder, which should vanish.  For
    each ``(sign, c)`` the entropy row has ``slack = LHS - remainder``
    which should be nonnegative; ``dissipation`` is the interfacial term
    that the inequality throws away.
    """
    from .operators import (
        PreconditionViolation,
        check_carrillo,
        diffusion_entropy_terms,
        entropy_dissipation_report,
        penalization,
    )
    from .physics import constant_map, entropy_pair

    spec = spec or result.spec
    m = result.mesh
    cfg = result.cfg
    dt = cfg.dt
    N = result.u.N
    T = N * dt
    if tests is None:
        tests = [
            bump_test_function([0.5] * m.dim, 0.3, 0.75 * T),
            bump_test_function([0.4] + [0.6] * (m.dim - 1), 0.2, T),
            bump_test_function([0.6] + [0.45] * (m.dim - 1), 0.25, 0.5 * T),
        ]
    U = [result.u.slice(n) for n in range(N + 1)]
    W = [result.w.slice(n) for n in range(N + 1)]
    flux = result.flux
    out: list[EntropyResidual] = []

    def dot(a: DiscreteFunctionBar, b: DiscreteFunctionBar) -> float:
        return inner_functions(a.interior(), b.interior())

    for tf in tests:
        Psi = [None] + [_slab_projection(tf, n, dt, m, order, time_points) for n in range(1, N + 1)]
        if min(min(p.primal.min(), p.dual.min()) for p in Psi[1:]) < -1e-14:
            raise PreconditionViolation(f"test function {tf.name} must be nonnegative")
        sup_psi = max(max(np.abs(p.primal).max(), np.abs(p.dual).max()) for p in Psi[1:])
        floor = m.domain_measure * sup_psi * max(1.0, result.M)
        pairs = [("weak", "", 0.0, constant_map(1.0), lambda z: np.asarray(z, float))]
        for sg in signs:
            for c in c_levels:
                ep = entropy_pair(sg, c, eps, spec)
                pairs.append(("entropy", sg, float(c), ep.theta, ep.eta))
        for kind, sg, c, theta, eta in pairs:
            try:
                check_carrillo(theta, Psi[1])
            except PreconditionViolation:
                if kind == "weak" or not tf.touches_boundary:
                    raise
                continue
            terms = []
            remainder = 0.0
            dissip = 0.0
            for n in range(1, N + 1):
                u, w, psi = U[n], W[n], Psi[n]
                th = DiscreteFunctionBar(m, theta(u.primal), theta(u.dual))
                tpsi = DiscreteFunctionBar(m, th.primal * psi.primal, th.dual * psi.dual)
                S = result.sources[n - 1]
                terms.append(dt * inner_functions(S, tpsi.interior()))
                rep = entropy_dissipation_report(u, theta, psi, flux)
                terms.append(dt * rep.q_term)
                _, rhs_diff, _ = diffusion_entropy_terms(u, theta, psi, spec)
                terms.append(-dt * rhs_diff)
                pen = inner_functions(penalization(w), tpsi.interior()) if cfg.penalization else 0.0
                remainder += dt * (pen + rep.R_primal + rep.R_dual)
                dissip += dt * (rep.I_primal + rep.I_dual)
                if n < N:
                    terms.append(dot(DiscreteFunctionBar(m, eta(u.primal), eta(u.dual)), _diff(Psi[n + 1], psi)))
            eN = DiscreteFunctionBar(m, eta(U[N].primal), eta(U[N].dual))
            e0 = DiscreteFunctionBar(m, eta(U[0].primal), eta(U[0].dual))
            terms.append(-dot(eN, Psi[N]))
            terms.append(dot(e0, Psi[1]))
            lhs = float(sum(terms))
            scale = float(sum(abs(t) for t in terms) + abs(remainder) + abs(dissip)) + floor
            out.append(EntropyResidual(kind, sg, c, tf.name, lhs, remainder, lhs - remainder, scale, dissip))
    return out


def _diff(a: DiscreteFunctionBar, b: DiscreteFunctionBar) -> DiscreteFunctionBar:
    return DiscreteFunctionBar(a.mesh, a.primal - b.primal, a.dual - b.dual)

"""Seeded checks of the discrete structure identities on a given mesh."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import (
    DiscreteField,
    DiscreteFunction,
    DiscreteFunctionBar,
    inner_functions,
    project_bar,
)
from .mesh import DdfvMesh
from .operators import (
    check_carrillo,
    compose_bar,
    divergence,
    duality_defect,
    entropy_dissipation_inequality,
    entropy_dissipation_report,
    gradient,
    make_flux,
    penalization,
    penalization_weak_form,
)
from .physics import MonotoneMap, ProblemSpec, builtin_problem, burgers_flux, identity_map, sign_plus


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()


@dataclass
class VerifyReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def add(self, r: CheckResult) -> None:
        self.results.append(r)


def random_zero_function(mesh: DdfvMesh, rng: np.random.Generator, low=-1.0, high=1.0) -> DiscreteFunctionBar:
    return DiscreteFunctionBar.from_interior(
        mesh, rng.uniform(low, high, mesh.n_primal), rng.uniform(low, high, mesh.n_dual)
    )


def interior_bump(mesh: DdfvMesh, radius_fraction: float = 0.3) -> Callable[[np.ndarray], np.ndarray]:
    """``cos^2`` bump centred in the bounding box, support away from the boundary."""
    lo, hi = mesh.points.min(axis=0), mesh.points.max(axis=0)
    c = 0.5 * (lo + hi)
    r = radius_fraction * float((hi - lo).min())

    def psi(X):
        d = np.linalg.norm(np.asarray(X, float) - c, axis=-1)
        return np.where(d < r, np.cos(0.5 * np.pi * d / r) ** 2, 0.0)

    return psi


def flipped_divergence(F: DiscreteField) -> DiscreteFunction:
    """Mutation hook: divergence with the wrong sign."""
    D = divergence(F)
    return DiscreteFunction(D.mesh, -D.primal, -D.dual)


def _timed(fn):
    def wrap(*a, **k):
        t0 = time.perf_counter()
        r = fn(*a, **k)
        return CheckResult(r.name, r.passed, r.value, r.tolerance, r.detail, time.perf_counter() - t0)

    wrap.__name__ = fn.__name__
    wrap.__doc__ = fn.__doc__
    return wrap


# ---------------------------------------------------------------------------
# operators


@_timed
def check_duality(mesh: DdfvMesh, rng: np.random.Generator, n_pairs: int = 50, div=divergence, tol: float = 1e-11) -> CheckResult:
    """``|[[-div F, v]] - {{F, grad v}}| <= tol ||F|| ||v|| |Omega|`` on random pairs."""
    worst = 0.0
    for _ in range(n_pairs):
        F = DiscreteField(mesh, rng.uniform(-1, 1, (mesh.n_diamonds, mesh.dim)))
        v = random_zero_function(mesh, rng)
        defect, scale = duality_defect(F, v, div=div)
        worst = max(worst, abs(defect) / scale)
    return CheckResult(f"duality[{mesh.dim}d]", worst <= tol, worst, tol, f"{n_pairs} pairs")


@_timed
def check_affine_gradient(mesh: DdfvMesh, rng: np.random.Generator, n: int = 5, tol: float = 1e-12) -> CheckResult:
    """Discrete gradient of affine samples equals the exact slope on every diamond."""
    worst = 0.0
    for _ in range(n):
        w0 = rng.uniform(-3, 3)
        r = rng.uniform(-2, 2, mesh.dim)
        cp = np.concatenate([mesh.primal_center[: mesh.n_primal], _bprimal_centers(mesh)])
        wp = w0 + cp @ r
        wd = w0 + mesh.points @ r
        g = gradient(DiscreteFunctionBar(mesh, wp, wd)).values
        worst = max(worst, float(np.abs(g - r).max()) / max(1.0, float(np.abs(r).max())))
    return CheckResult(f"affine_gradient[{mesh.dim}d]", worst <= tol, worst, tol)


def _bprimal_centers(mesh: DdfvMesh) -> np.ndarray:
    return np.asarray(mesh.primal_center[mesh.n_primal :])


@_timed
def check_reconstruction(mesh: DdfvMesh, rng: np.random.Generator, n_vectors: int = 100, tol: float = 1e-12) -> CheckResult:
    """Normal plus weighted tangential projections rebuild any vector on each diamond."""
    d = mesh.dim
    R = rng.normal(size=(n_vectors, d))
    nu = mesh.dia_normal
    # (nD, n_vectors, d)
    out = np.einsum("dk,vk->dv", nu, R)[..., None] * nu[:, None, :]
    ns = mesh.sub_nu_star
    wts = (d - 1) * mesh.sub_measure / mesh.dia_measure[mesh.sub_dia]
    proj = (wts[:, None] * np.einsum("sk,vk->sv", ns, R))[..., None] * ns[:, None, :]
    tang = np.zeros_like(out)
    np.add.at(tang, mesh.sub_dia, proj)
    err = float(np.abs(out + tang - R[None]).max() / np.abs(R).max())
    return CheckResult(f"reconstruction[{d}d]", err <= tol, err, tol, f"{mesh.n_diamonds} diamonds")


def triangle_reconstruction_defect(tri: np.ndarray, r: np.ndarray) -> float:
    """Defect of the circumcentre-weighted edge projection identity in a triangle.

    Sub-triangle areas are signed: negative when the circumcentre and the
    opposite vertex lie on different sides of the edge.  The defect is
    divided by ``max(1, sum |2 T_l / T|)``.
    """
    from .geometry import circumcenter

    tri = np.asarray(tri, float)
    t0 = circumcenter(tri[None])[0][0]
    area = 0.5 * _cross(tri[1] - tri[0], tri[2] - tri[0])
    R = np.atleast_2d(r)
    acc = np.zeros_like(R)
    weight = 0.0
    for l in range(3):
        a, b, opp = tri[(l + 1) % 3], tri[(l + 2) % 3], tri[l]
        sub = 0.5 * _cross(b - a, t0 - a)
        same = np.sign(_cross(b - a, opp - a))
        sub = sub * same  # positive when t0 is on the side of opp
        e = (b - a) / np.linalg.norm(b - a)
        c = 2 * sub / abs(area)
        weight += abs(c)
        acc += c * (R @ e)[:, None] * e[None, :]
    # relative to the size of the summands, which cancel for obtuse triangles
    return float(np.abs(acc - R).max() / (np.abs(R).max() * max(1.0, weight)))


def _cross(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


@_timed
def check_triangle_lemma(rng: np.random.Generator, n: int = 1000, tol: float = 1e-12) -> CheckResult:
    """Reconstruction identity on random triangles, obtuse ones included."""
    worst = 0.0
    obtuse = 0
    done = 0
    while done < n:
        tri = rng.uniform(-1, 1, (3, 2))
        area = abs(_cross(tri[1] - tri[0], tri[2] - tri[0])) / 2
        edges = [np.linalg.norm(tri[i] - tri[j]) for i, j in ((0, 1), (1, 2), (2, 0))]
        if area < 1e-3 * max(edges) ** 2:
            continue  # keep the conditioning reasonable
        e2 = sorted(x * x for x in edges)
        obtuse += e2[2] > e2[0] + e2[1]
        worst = max(worst, triangle_reconstruction_defect(tri, rng.normal(size=(5, 2))))
        done += 1
    return CheckResult("triangle_reconstruction", worst <= tol, worst, tol, f"{n} triangles, {obtuse} obtuse")


# ---------------------------------------------------------------------------
# entropy and penalization identities


def _thetas(spec: ProblemSpec) -> list[tuple[str, MonotoneMap]]:
    return [("Id", identity_map()), ("A", spec.A), ("sign+_0.1(.-0.2)", sign_plus(0.2, 0.1))]


def _psis(mesh: DdfvMesh) -> list[tuple[str, DiscreteFunctionBar]]:
    return [("1", project_bar(lambda X: np.ones(len(X)), mesh)), ("bump", project_bar(interior_bump(mesh), mesh))]


@_timed
def check_entropy_dissipation(
    mesh: DdfvMesh, rng: np.random.Generator, spec: ProblemSpec | None = None, n: int = 20, tol: float = 1e-10
) -> CheckResult:
    """Diffusion entropy-dissipation inequality for random ``u``."""
    spec = spec or builtin_problem("porous_medium(2)", mesh.dim)
    worst = np.inf
    count = 0
    psis = _psis(mesh)
    for _ in range(n):
        u = random_zero_function(mesh, rng)
        for _tn, th in _thetas(spec):
            for _pn, psi in psis:
                slack, scale = entropy_dissipation_inequality(u, th, psi, spec)
                worst = min(worst, slack / scale)
                count += 1
    return CheckResult(f"entropy_dissipation[{mesh.dim}d,{spec.name}]", worst >= -tol, worst, tol, f"{count} cases, min relative slack")


@_timed
def check_penalization_sum(mesh: DdfvMesh, rng: np.random.Generator, n: int = 20, tol: float = 1e-12) -> CheckResult:
    """``[[P w, psi]]`` against the overlap double sum."""
    worst = 0.0
    for _ in range(n):
        wp = rng.uniform(-1, 1, mesh.n_primal_total)
        wd = rng.uniform(-1, 1, mesh.n_vertices)
        w = DiscreteFunctionBar(mesh, wp, wd)
        psi = random_zero_function(mesh, rng)
        lhs = inner_functions(penalization(w), psi.interior())
        rhs = penalization_weak_form(w, psi)
        scale = mesh.domain_measure / mesh.size * 4
        worst = max(worst, abs(lhs - rhs) / scale)
    return CheckResult(f"penalization_sum[{mesh.dim}d]", worst <= tol, worst, tol)


@_timed
def check_penalization_theta(
    mesh: DdfvMesh, rng: np.random.Generator, spec: ProblemSpec | None = None, n: int = 20, tol: float = 1e-10
) -> CheckResult:
    """Weighted penalization inequality with ``theta(u_K)`` on the primal side."""
    spec = spec or builtin_problem("porous_medium(2)", mesh.dim)
    worst = np.inf
    psis = _psis(mesh)
    for _ in range(n):
        u = random_zero_function(mesh, rng)
        w = compose_bar(u, spec.A)
        for _tn, th in _thetas(spec):
            tu = compose_bar(u, th)
            for _pn, psi in psis:
                check_carrillo(th, psi)
                tpsi = DiscreteFunctionBar(mesh, tu.primal * psi.primal, tu.dual * psi.dual)
                lhs = inner_functions(penalization(w), tpsi.interior())
                rhs = penalization_weak_form(w, psi, theta_u=tu.primal)
                scale = mesh.domain_measure / mesh.size * 4
                worst = min(worst, (lhs - rhs) / scale)
    return CheckResult(f"penalization_theta[{mesh.dim}d]", worst >= -tol, worst, tol, "min relative slack")


@_timed
def check_evolution_duality(
    mesh: DdfvMesh, rng: np.random.Generator, N: int = 6, dt: float = 0.1, n: int = 5, tol: float = 1e-12
) -> CheckResult:
    """Abel summation plus convexity for random space-time data."""
    from .solver import _slab_projection

    lo, hi = mesh.points.min(axis=0), mesh.points.max(axis=0)
    c = 0.5 * (lo + hi)
    T = N * dt

    def psi_t(t, X):
        return (1 + np.cos(np.pi * t / T)) * (1.5 + np.sin(np.asarray(X, float) @ np.ones(mesh.dim) - c.sum()))

    Psi = [None] + [_slab_projection(psi_t, k, dt, mesh, 2, 4) for k in range(1, N + 1)]
    worst = np.inf
    thetas = [identity_map(), sign_plus(0.1, 0.0), sign_plus(-0.3, 0.2)]

    def dot(a, b):
        return inner_functions(a.interior(), b.interior())

    for _ in range(n):
        U = [random_zero_function(mesh, rng) for _ in range(N + 1)]
        for th in thetas:
            def eta(z, th=th):
                return _primitive(th, z)

            lhs = 0.0
            for k in range(1, N + 1):
                du = DiscreteFunctionBar(mesh, U[k].primal - U[k - 1].primal, U[k].dual - U[k - 1].dual)
                tp = compose_bar(U[k], th)
                lhs += dot(du, DiscreteFunctionBar(mesh, tp.primal * Psi[k].primal, tp.dual * Psi[k].dual))
            E = [compose_bar(x, eta) for x in U]
            rhs = dot(E[N], Psi[N]) - dot(E[0], Psi[1])
            for k in range(1, N):
                rhs -= dot(E[k], DiscreteFunctionBar(mesh, Psi[k + 1].primal - Psi[k].primal, Psi[k + 1].dual - Psi[k].dual))
            scale = mesh.domain_measure * 5 * N
            worst = min(worst, (lhs - rhs) / scale)
    return CheckResult(f"evolution_duality[{mesh.dim}d]", worst >= -tol, worst, tol, "min relative slack")


def _primitive(theta: MonotoneMap, z: np.ndarray) -> np.ndarray:
    """``int_0^z theta``, integrating ``theta`` against Lebesgue measure."""
    from .physics import stieltjes

    z = np.asarray(z, float)
    lebesgue = identity_map()
    return stieltjes(lambda s: theta(s), lebesgue, np.zeros_like(z), z)


@_timed
def check_convection_decomposition(
    mesh: DdfvMesh,
    rng: np.random.Generator,
    fluxes=("godunov", "rusanov"),
    n: int = 10,
    tol: float = 1e-9,
) -> CheckResult:
    """Decomposition identity, sign of the interfacial terms and remainder bounds on Burgers."""
    f = burgers_flux(mesh.dim)
    psis = _psis(mesh)
    thetas = [("Id", identity_map()), ("sign+_0.1(.-0.2)", sign_plus(0.2, 0.1)), ("sign+(.-0.1)", sign_plus(0.1))]
    worst_id = 0.0
    worst_I = np.inf
    bounds = True
    for tag in fluxes:
        flux = make_flux(f, tag, 1.0)
        for _ in range(n):
            u = random_zero_function(mesh, rng)
            for _tn, th in thetas:
                for _pn, psi in psis:
                    rep = entropy_dissipation_report(u, th, psi, flux)
                    worst_id = max(worst_id, abs(rep.identity_defect) / rep.scale)
                    worst_I = min(worst_I, rep.min_I)
                    bounds &= rep.bounds_hold
    ok = worst_id <= tol and worst_I >= -1e-12 and bounds
    detail = f"min I {worst_I:.2e}, remainder bounds {'hold' if bounds else 'violated'}"
    return CheckResult(f"convection_decomposition[{mesh.dim}d]", ok, worst_id, tol, detail)


# ---------------------------------------------------------------------------
# suite


CHECKS = (
    "duality",
    "affine_gradient",
    "reconstruction",
    "entropy_dissipation",
    "penalization_sum",
    "penalization_theta",
    "evolution_duality",
    "convection_decomposition",
    "triangle_reconstruction",
)


def run_suite(
    meshes: list[DdfvMesh],
    seed: int = 0,
    *,
    div=divergence,
    spec_names=("porous_medium(2)", "p_laplace(3)"),
    samples: dict | None = None,
    include_triangles: bool = True,
    checks=None,
) -> VerifyReport:
    """All structure checks on each mesh with one seeded generator per check.

    ``checks`` selects a subset of :data:`CHECKS`; skipped checks still
    consume their generator so the others see the same random streams.
    """
    samples = samples or {}
    wanted = set(CHECKS if checks is None else checks)
    unknown = wanted - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    rep = VerifyReport()
    ss = np.random.SeedSequence(seed)
    gens = iter(np.random.default_rng(s) for s in ss.spawn(10_000))

    def want(name, thunk):
        g = next(gens)
        if name in wanted:
            rep.add(thunk(g))

    for m in meshes:
        want("duality", lambda g: check_duality(m, g, samples.get("duality", 50), div=div))
        want("affine_gradient", lambda g: check_affine_gradient(m, g))
        want("reconstruction", lambda g: check_reconstruction(m, g, samples.get("reconstruction", 100)))
        for name in spec_names:
            want(
                "entropy_dissipation",
                lambda g: check_entropy_dissipation(m, g, builtin_problem(name, m.dim), samples.get("entropy", 20)),
            )
        want("penalization_sum", lambda g: check_penalization_sum(m, g, samples.get("penalization", 20)))
        want("penalization_theta", lambda g: check_penalization_theta(m, g, None, samples.get("penalization", 20)))
        want("evolution_duality", lambda g: check_evolution_duality(m, g, n=samples.get("evolution", 5)))
        want("convection_decomposition", lambda g: check_convection_decomposition(m, g, n=samples.get("convection", 10)))
    if include_triangles:
        want("triangle_reconstruction", lambda g: check_triangle_lemma(g, samples.get("triangles", 1000)))
    return rep

import dataclasses

import numpy as np
import pytest

from ddfv.fields import DiscreteFunction, DiscreteFunctionBar
from ddfv.mesh import build_structured_2d
from ddfv.operators import operator_matrices
from ddfv.physics import builtin_problem, diffusion_flux
from ddfv.solver import (
    NonConvergence,
    SchemeConfig,
    discrete_entropy_residuals,
    make_step_system,
    nonlinear_solve,
    residual,
    run,
)
from ddfv.verify import random_zero_function


def _explicit_residual(m, spec, cfg, flux, u, prev, S):
    """Per-volume residual written out diamond by diamond."""
    d = m.dim
    nK = m.n_primal
    wp, wd = spec.A(u.primal), spec.A(u.dual)
    rp = np.zeros(m.n_primal_total)
    rd = np.zeros(m.n_vertices)
    h = m.size
    for D in range(m.n_diamonds):
        K, L, nu = m.dia_K[D], m.dia_L[D], m.dia_normal[D]
        g = flux(u.primal[[K]], u.primal[[L]], nu[None])[0] if not spec.f.is_zero else 0.0
        grad = (wp[L] - wp[K]) / m.dia_dKL[D] * nu
        for s in np.flatnonzero(m.sub_dia == D):
            a, b = m.sub_a[s], m.sub_b[s]
            grad = grad + (d - 1) * m.sub_measure[s] / m.dia_measure[D] * (wd[b] - wd[a]) / m.sub_dab[s] * m.sub_nu_star[s]
        aF = diffusion_flux(spec, grad[None])[0]
        rp[K] += m.dia_mKL[D] * (g - aF @ nu)
        rp[L] -= m.dia_mKL[D] * (g - aF @ nu)
        for s in np.flatnonzero(m.sub_dia == D):
            a, b = m.sub_a[s], m.sub_b[s]
            q = m.sub_msigma_star[s] * (aF @ m.sub_nu_star[s])
            rd[a] -= q
            rd[b] += q
    if not spec.f.is_zero:
        for e in range(len(m.edge_a)):
            a, b = m.edge_a[e], m.edge_b[e]
            g = flux(u.dual[[a]], u.dual[[b]], m.edge_nu[[e]])[0] * m.edge_measure[e]
            rd[a] += g
            rd[b] -= g
    for K, V, om in zip(m.ov_K, m.ov_V, m.ov_m):
        rp[K] += (d - 1) / h * om * (wp[K] - wd[V])
        rd[V] += om / h * (wd[V] - wp[K])
    rp = rp[:nK] / m.primal_measure[:nK]
    rd = (rd / m.dual_measure)[m.dual_interior]
    rp += (u.primal[:nK] - prev.primal) / cfg.dt - S.primal
    rd += (u.dual[m.dual_interior] - prev.dual) / cfg.dt - S.dual
    return rp, rd


@pytest.mark.parametrize("name", ["porous_medium(2)", "p_laplace(3)", "burgers_diffusion(0.1)"])
def test_residual_matches_per_volume_implementation(any_mesh, name, rng):
    m = any_mesh
    spec = builtin_problem(name, m.dim)
    cfg = SchemeConfig(dt=0.05, T=0.1)
    sys_ = make_step_system(m, spec, cfg, 1.0)
    u = random_zero_function(m, rng)
    prev = random_zero_function(m, rng).interior()
    S = DiscreteFunction(m, rng.normal(size=m.n_primal), rng.normal(size=m.n_dual))
    r = residual(u, prev, S, cfg, spec, sys_)
    ep, ed = _explicit_residual(m, spec, cfg, sys_.flux, u, prev, S)
    assert np.allclose(r.primal, ep, rtol=1e-10, atol=1e-9)
    assert np.allclose(r.dual, ed, rtol=1e-10, atol=1e-9)


def test_heat_step_equals_linear_solve(mesh8):
    from scipy.sparse import diags, identity
    from scipy.sparse.linalg import spsolve

    spec = builtin_problem("heat")
    cfg = SchemeConfig(dt=0.01, T=0.01)
    res = run(spec, mesh8, cfg)
    m = mesh8
    ops = operator_matrices(m)
    nPt = m.n_primal_total
    cols = np.concatenate([np.arange(m.n_primal), nPt + np.asarray(m.dual_interior)])
    from scipy.sparse import csr_matrix

    E = csr_matrix((np.ones(len(cols)), (cols, np.arange(len(cols)))), shape=(nPt + m.n_vertices, len(cols)))
    L = -ops.div @ ops.grad @ E + ops.penal @ E
    x0 = np.concatenate([res.u.primal[0, : m.n_primal], res.u.dual[0, m.dual_interior]])
    x1 = spsolve((identity(len(cols)) / cfg.dt + L).tocsc(), x0 / cfg.dt)
    got = np.concatenate([res.u.primal[1, : m.n_primal], res.u.dual[1, m.dual_interior]])
    assert np.allclose(got, x1, atol=1e-12)
    assert res.reports[0].iterations <= 2


def test_converged_steps_meet_tolerance(mesh8):
    spec = builtin_problem("polytropic(2,3)")
    res = run(spec, mesh8, SchemeConfig(dt=0.05, T=0.2))
    assert all(r.residual <= 1e-10 for r in res.reports)
    assert res.diagnostics["max_principle_ok"]


def test_comparison_principle_for_convection(mesh8):
    # implicit monotone fluxes preserve order
    lo = builtin_problem("burgers_diffusion(0)", u0=lambda X: 0.5 * np.exp(-10 * ((X - 0.4) ** 2).sum(1)), u0_sup=0.5)
    hi = builtin_problem("burgers_diffusion(0)", u0=lambda X: 0.8 * np.exp(-10 * ((X - 0.4) ** 2).sum(1)) + 0.1, u0_sup=0.9)
    cfg = SchemeConfig(dt=0.05, T=0.2)
    a = run(lo, mesh8, cfg).u
    b = run(hi, mesh8, cfg).u
    assert np.all(a.primal <= b.primal + 1e-12)
    assert np.all(a.dual <= b.dual + 1e-12)


def test_mass_changes_only_through_boundary(mesh8):
    spec = builtin_problem("burgers_diffusion(0)", u0=lambda X: np.ones(len(X)), u0_sup=1.0)
    cfg = SchemeConfig(dt=0.05, T=0.3)
    res = run(spec, mesh8, cfg)
    mass = res.per_step["mass_primal"]
    bflux = res.per_step["boundary_flux_primal"]
    assert np.abs(bflux[1:]).max() > 1e-3
    assert np.allclose(np.diff(mass), -cfg.dt * bflux[1:], atol=1e-12)


def test_max_principle_bound(mesh8):
    spec = builtin_problem(
        "porous_medium(2)",
        source=lambda t, X: np.full(len(X), 0.5 if t < 0.2 else 0.0),
        source_sup=lambda t: 0.5 if t < 0.2 else 0.0,
        source_breakpoints=(0.2,),
    )
    res = run(spec, mesh8, SchemeConfig(dt=1 / 16, T=0.5))
    assert res.M == pytest.approx(1.1)
    assert res.diagnostics["max_abs_u"] <= res.M + 10 * 1e-10


def test_non_convergence_carries_partial_state(mesh8):
    spec = builtin_problem("porous_medium(2)")
    cfg = SchemeConfig(dt=0.1, T=0.3, max_newton=1, continuation=(), picard_fallback=False, tol=1e-14)
    with pytest.raises(NonConvergence) as exc:
        run(spec, mesh8, cfg)
    assert exc.value.partial is not None
    assert exc.value.partial.u.N == 0
    assert np.isfinite(exc.value.residual)


def test_picard_fallback_recovers(mesh8):
    spec = builtin_problem("porous_medium(2)")
    cfg = SchemeConfig(dt=0.1, T=0.1, max_newton=0, continuation=())
    res = run(spec, mesh8, cfg)
    assert res.reports[0].strategy == "picard"
    assert res.reports[0].residual <= cfg.tol


def test_gmres_matches_direct(mesh8):
    spec = builtin_problem("p_laplace(3)")
    a = run(spec, mesh8, SchemeConfig(dt=0.05, T=0.1))
    b = run(spec, mesh8, SchemeConfig(dt=0.05, T=0.1, linear_solver="gmres"))
    assert np.allclose(a.u.primal, b.u.primal, atol=1e-9)


def test_runs_are_deterministic(mesh8):
    spec = builtin_problem("burgers_diffusion(0.05)")
    cfg = SchemeConfig(dt=0.1, T=0.3)
    a, b = run(spec, mesh8, cfg), run(spec, mesh8, cfg)
    assert np.array_equal(a.u.primal, b.u.primal) and np.array_equal(a.u.dual, b.u.dual)


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.0, T=1.0)
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.1, T=1.0, rho=-1)
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.1, T=1.0, picard_relaxation=0.0)
    assert SchemeConfig(dt=1 / 64, T=1.0).N == 64
    with pytest.raises(dataclasses.FrozenInstanceError):
        SchemeConfig(dt=0.1, T=1.0).dt = 0.2


def test_entropy_residuals_on_short_run(mesh8):
    spec = builtin_problem("burgers_diffusion(0.02)")
    res = run(spec, mesh8, SchemeConfig(dt=0.05, T=0.3))
    rows = discrete_entropy_residuals(res)
    weak = [r for r in rows if r.kind == "weak"]
    ent = [r for r in rows if r.kind == "entropy"]
    assert len(weak) == 3 and len(ent) == 18
    assert all(abs(r.slack) <= 1e-8 * r.scale for r in weak)
    assert all(r.slack >= -1e-8 * r.scale for r in ent)


def test_zero_initial_data_stays_zero(mesh4):
    spec = builtin_problem("porous_medium(2)", u0=lambda X: np.zeros(len(X)), u0_sup=0.0)
    res = run(spec, mesh4, SchemeConfig(dt=0.1, T=0.2))
    assert not res.u.primal.any() and not res.u.dual.any()


def test_one_step_api(mesh4, rng):
    spec = builtin_problem("porous_medium(2)")
    cfg = SchemeConfig(dt=0.1, T=0.1)
    prev = random_zero_function(mesh4, rng, 0, 1)
    S = DiscreteFunction(mesh4, np.zeros(mesh4.n_primal), np.zeros(mesh4.n_dual))
    u, rep = nonlinear_solve(prev, S, cfg, spec)
    assert isinstance(u, DiscreteFunctionBar) and u.in_zero_space()
    r = residual(u, prev, S, cfg, spec)
    assert rep.residual <= cfg.tol
    assert np.abs(r.primal).max() < 1e-8

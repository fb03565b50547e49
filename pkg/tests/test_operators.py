import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddfv.fields import DiscreteField, DiscreteFunctionBar, inner_functions
from ddfv.operators import (
    FLUX_TAGS,
    InvalidBound,
    PreconditionViolation,
    check_carrillo,
    divergence,
    duality_defect,
    entropy_dissipation_report,
    gradient,
    make_flux,
    penalization,
    penalization_weak_form,
    weak_bv,
)
from ddfv.physics import Flux, burgers_flux, linear_flux, sign_plus
from ddfv.verify import check_duality, flipped_divergence, random_zero_function

seeds = st.integers(0, 2**32 - 1)


@given(seeds)
def test_duality_random_pairs(mesh8, seed):
    rng = np.random.default_rng(seed)
    F = DiscreteField(mesh8, rng.uniform(-1, 1, (mesh8.n_diamonds, 2)))
    v = random_zero_function(mesh8, rng)
    defect, scale = duality_defect(F, v)
    assert abs(defect) <= 1e-11 * scale


def test_duality_on_all_meshes(any_mesh, rng):
    assert check_duality(any_mesh, rng, 10).passed


def test_flipped_divergence_breaks_duality(mesh8, rng):
    r = check_duality(mesh8, rng, 5, div=flipped_divergence)
    assert not r.passed and r.value > 0.1


def test_duality_needs_zero_space(mesh4):
    F = DiscreteField(mesh4, np.zeros((mesh4.n_diamonds, 2)))
    v = DiscreteFunctionBar(mesh4, np.ones(mesh4.n_primal_total), np.ones(mesh4.n_vertices))
    with pytest.raises(PreconditionViolation):
        duality_defect(F, v)


def test_gradient_2d_projection_conditions(unstructured, rng):
    # in 2D the diamond gradient is fixed by its two directional differences
    m = unstructured
    wp = rng.normal(size=m.n_primal_total)
    wd = rng.normal(size=m.n_vertices)
    G = gradient(DiscreteFunctionBar(m, wp, wd)).values
    xK, xL = m.primal_center[m.dia_K], m.primal_center[m.dia_L]
    assert np.allclose(np.einsum("nd,nd->n", G, xL - xK), wp[m.dia_L] - wp[m.dia_K], atol=1e-12)
    a, b = m.sub_a, m.sub_b
    Gs = G[m.sub_dia]
    assert np.allclose(np.einsum("nd,nd->n", Gs, m.points[b] - m.points[a]), wd[b] - wd[a], atol=1e-12)


def test_gradient_3d_normal_component(mesh3d, rng):
    m = mesh3d
    wp = rng.normal(size=m.n_primal_total)
    wd = rng.normal(size=m.n_vertices)
    G = gradient(DiscreteFunctionBar(m, wp, wd)).values
    xK, xL = m.primal_center[m.dia_K], m.primal_center[m.dia_L]
    assert np.allclose(np.einsum("nd,nd->n", G, xL - xK), wp[m.dia_L] - wp[m.dia_K], atol=1e-12)


def test_divergence_per_volume_loop(any_mesh, rng):
    m = any_mesh
    Fv = rng.normal(size=(m.n_diamonds, m.dim))
    div = divergence(DiscreteField(m, Fv))
    dp = np.zeros(m.n_primal_total)
    for D in range(m.n_diamonds):
        flux = m.dia_mKL[D] * Fv[D] @ m.dia_normal[D]
        dp[m.dia_K[D]] += flux
        dp[m.dia_L[D]] -= flux
    assert np.allclose(div.primal, dp[: m.n_primal] / m.primal_measure[: m.n_primal], atol=1e-10)
    dd = np.zeros(m.n_vertices)
    for s in range(m.n_subdiamonds):
        flux = m.sub_msigma_star[s] * Fv[m.sub_dia[s]] @ m.sub_nu_star[s]
        dd[m.sub_a[s]] += flux
        dd[m.sub_b[s]] -= flux
    assert np.allclose(div.dual, (dd / m.dual_measure)[m.dual_interior], atol=1e-10)


def test_divergence_of_constant_vanishes_inside(mesh8):
    F = DiscreteField(mesh8, np.tile([0.3, -1.2], (mesh8.n_diamonds, 1)))
    div = divergence(F)
    assert np.abs(div.primal).max() < 1e-12
    assert np.abs(div.dual).max() < 1e-12


def test_penalization_positive_and_symmetric(any_mesh, rng):
    m = any_mesh
    w = random_zero_function(m, rng)
    v = random_zero_function(m, rng)
    assert inner_functions(penalization(w), w.interior()) >= 0
    a = inner_functions(penalization(w), v.interior())
    b = inner_functions(penalization(v), w.interior())
    assert a == pytest.approx(b, rel=1e-12)
    assert a == pytest.approx(penalization_weak_form(w, v), rel=1e-12)
    const = DiscreteFunctionBar(m, np.full(m.n_primal_total, 2.0), np.full(m.n_vertices, 2.0))
    P = penalization(const)
    assert np.abs(P.primal).max() < 1e-12 and np.abs(P.dual).max() < 1e-12


# ---------------------------------------------------------------------------
# numerical fluxes


def _cubic_flux():
    # non-separable: f(u) = (u^2/2, u^3/3 - u)
    return Flux(2, lambda u: np.stack([0.5 * u * u, u**3 / 3 - u], axis=-1))


FLUXES = [burgers_flux(2, (0.6, 0.8)), linear_flux(2, [1.0, -2.0]), _cubic_flux()]
pair = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2 * np.pi))


@pytest.mark.parametrize("tag", FLUX_TAGS)
@pytest.mark.parametrize("fi", range(len(FLUXES)))
@given(ab=pair, eps=st.floats(1e-4, 0.3))
def test_flux_consistency_conservation_monotonicity(tag, fi, ab, eps):
    f = FLUXES[fi]
    g = make_flux(f, tag, 1.0)
    a, b, ang = ab
    nu = np.array([[np.cos(ang), np.sin(ang)]])
    A, B = np.array([a]), np.array([b])
    assert g(A, A, nu)[0] == pytest.approx(f.normal(A, nu)[0], abs=1e-12)
    assert g(A, B, nu)[0] == pytest.approx(-g(B, A, -nu)[0], abs=1e-10)
    a2, b2 = min(a + eps, 1.0), max(b - eps, -1.0)
    assert g(np.array([a2]), B, nu)[0] >= g(A, B, nu)[0] - 1e-10
    assert g(A, np.array([b2]), nu)[0] >= g(A, B, nu)[0] - 1e-10


@pytest.mark.parametrize("fi", range(len(FLUXES)))
def test_godunov_brute_force(fi, rng):
    f = FLUXES[fi]
    g = make_flux(f, "godunov", 1.0)
    a = rng.uniform(-1, 1, 50)
    b = rng.uniform(-1, 1, 50)
    ang = rng.uniform(0, 2 * np.pi, 50)
    nu = np.stack([np.cos(ang), np.sin(ang)], 1)
    got = g(a, b, nu)
    for i in range(50):
        s = np.linspace(min(a[i], b[i]), max(a[i], b[i]), 20001)
        h = f.normal(s[None, :], nu[i : i + 1])[0]
        exact = h.min() if a[i] <= b[i] else h.max()
        assert got[i] == pytest.approx(exact, abs=1e-8)


def test_engquist_osher_burgers_closed_form(rng):
    g = make_flux(burgers_flux(2), "engquist_osher", 1.0)
    a = rng.uniform(-1, 1, 100)
    b = rng.uniform(-1, 1, 100)
    nu = np.tile([1.0, 0.0], (100, 1))
    exact = 0.5 * np.maximum(a, 0) ** 2 + 0.5 * np.minimum(b, 0) ** 2
    assert np.allclose(g(a, b, nu), exact, atol=1e-14)


def test_flux_bound_must_be_positive():
    with pytest.raises(InvalidBound):
        make_flux(burgers_flux(2), "godunov", 0.0)
    with pytest.raises(ValueError):
        make_flux(burgers_flux(2), "upwind-ish", 1.0)


# ---------------------------------------------------------------------------
# convection decomposition


@pytest.mark.parametrize("tag", ["godunov", "rusanov", "engquist_osher"])
def test_convection_decomposition_identity(any_mesh, tag, rng):
    from ddfv.fields import project_bar
    from ddfv.verify import interior_bump

    m = any_mesh
    flux = make_flux(burgers_flux(m.dim), tag, 1.0)
    psi = project_bar(interior_bump(m), m)
    for th in (sign_plus(0.1), sign_plus(0.05, 0.1)):
        u = random_zero_function(m, rng)
        rep = entropy_dissipation_report(u, th, psi, flux)
        assert abs(rep.identity_defect) <= 1e-9 * rep.scale
        assert rep.min_I >= -1e-12
        assert rep.bounds_hold
    assert weak_bv(random_zero_function(m, rng), flux) >= 0


def test_carrillo_condition(mesh4):
    from ddfv.fields import project_bar

    one = project_bar(lambda X: np.ones(len(X)), mesh4)
    check_carrillo(sign_plus(0.2), one)  # theta(0) = 0
    with pytest.raises(PreconditionViolation):
        check_carrillo(sign_plus(-0.2), one)


def test_engquist_osher_nonseparable_brute_force(rng):
    f = _cubic_flux()
    g = make_flux(f, "engquist_osher", 1.0)
    a = rng.uniform(-1, 1, 20)
    b = rng.uniform(-1, 1, 20)
    ang = rng.uniform(0, 2 * np.pi, 20)
    nu = np.stack([np.cos(ang), np.sin(ang)], 1)
    got = g(a, b, nu)

    def var(z, n, part):
        s = np.linspace(min(z, 0), max(z, 0), 200001)
        dh = np.diff(f.normal(s[None, :], n[None])[0])
        v = np.maximum(dh, 0).sum() if part > 0 else np.minimum(dh, 0).sum()
        return v if z >= 0 else -v

    for i in range(20):
        exact = var(a[i], nu[i], 1) + var(b[i], nu[i], -1)
        assert got[i] == pytest.approx(exact, abs=1e-9)

import numpy as np

from ddfv.verify import (
    CHECKS,
    check_triangle_lemma,
    flipped_divergence,
    run_suite,
    triangle_reconstruction_defect,
)


def test_suite_passes_on_default_seed(mesh8, mesh3d):
    rep = run_suite([mesh8, mesh3d], seed=0, samples={"duality": 10, "entropy": 3, "penalization": 3, "convection": 2, "triangles": 100})
    assert rep.passed, [r.line() for r in rep.results if not r.passed]
    names = {r.name for r in rep.results}
    assert "duality[3d]" in names and "affine_gradient[3d]" in names


def test_suite_subset_keeps_random_streams(mesh4):
    full = run_suite([mesh4], seed=3, samples={"entropy": 2, "penalization": 2, "convection": 1, "triangles": 20})
    sub = run_suite([mesh4], seed=3, checks=["penalization_sum"], samples={"penalization": 2}, include_triangles=False)
    a = next(r for r in full.results if r.name.startswith("penalization_sum"))
    assert len(sub.results) == 1 and sub.results[0].value == a.value
    assert set(CHECKS) >= {r.name.split("[")[0] for r in full.results}


def test_mutation_fails_duality(mesh4):
    rep = run_suite([mesh4], seed=0, div=flipped_divergence, checks=["duality"], include_triangles=False)
    assert not rep.passed
    assert rep.results[0].line().startswith("FAIL duality")


def test_triangle_lemma_right_and_obtuse():
    r = np.eye(2)
    assert triangle_reconstruction_defect(np.array([[0.0, 0], [1, 0], [0, 1]]), r) < 1e-14
    assert triangle_reconstruction_defect(np.array([[0.0, 0], [4, 0], [2, 0.3]]), r) < 1e-14
    assert check_triangle_lemma(np.random.default_rng(0), 200).passed

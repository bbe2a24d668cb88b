import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popgnn.popgraph import (
    ABLATION_ROWS,
    PhenoConfig,
    PopulationGraph,
    SigmaRule,
    build_adjacency,
    hide_test_labels,
    laplacian,
    normalize_adjacency,
    pheno_indicator,
    pheno_matrix,
    resolve_sigma,
    scaled_laplacian,
    similarity_kernel,
)

from conftest import make_subject
from oracles import jacobi_eigenvalues, pair_adjacency, random_symmetric_graph

ALL = PhenoConfig(use_gender=True, use_apoe4=True, use_mmse=True, use_age=True)


def _random_subjects(r, n):
    return [
        make_subject(
            f"s{i}",
            label=str(r.choice(["NC", "AD"])),
            gender=str(r.choice(["M", "F"])),
            age=float(np.round(r.uniform(60, 80), 1)),
            apoe4=int(r.integers(0, 3)),
            mmse=int(r.integers(20, 31)),
        )
        for i in range(n)
    ]


def test_kernel_identical_rows():
    v = [1.0, 3.0, 2.0]
    assert similarity_kernel(v, v, 0.7) == 1.0


def test_kernel_anticorrelated():
    assert similarity_kernel([1.0, 2.0, 3.0], [3.0, 2.0, 1.0], 1.0) == pytest.approx(math.exp(-2.0), abs=1e-15)


def test_kernel_rejects_bad_sigma():
    with pytest.raises(ValueError):
        similarity_kernel([1, 2], [2, 1], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0.05, 3))
def test_kernel_monotone_in_distance(r1, r2, sigma):
    # pick vectors whose correlation is 1 - rho
    def pair(rho):
        t = np.array([1.0, -1.0, 0.0])
        u = np.array([1.0, 1.0, -2.0]) / math.sqrt(3)
        c = 1.0 - rho
        return t, c * t + math.sqrt(max(0.0, 1 - c * c)) * u

    lo, hi = sorted((r1, r2))
    assert similarity_kernel(*pair(hi), sigma) <= similarity_kernel(*pair(lo), sigma) + 1e-12


def test_indicator_cases():
    u = make_subject("u", gender="F", apoe4=1, mmse=25)
    v = make_subject("v", gender="F", apoe4=1, mmse=25)
    cfg = PhenoConfig(use_gender=True, use_apoe4=True, use_mmse=True)
    assert pheno_indicator(u, v, cfg) == 3.0
    a = make_subject("a", mmse=23)
    b = make_subject("b", mmse=29)
    assert pheno_indicator(a, b, PhenoConfig(use_mmse=True)) == 0.0
    c = make_subject("c", gender="F", age=90.0, apoe4=2, mmse=10)
    assert pheno_indicator(a, c, PhenoConfig.similarity()) == 1.0


def test_indicator_tolerances_inclusive():
    a = make_subject("a", age=70.0, mmse=28)
    b = make_subject("b", age=71.0, mmse=29)
    c = make_subject("c", age=71.5, mmse=30)
    assert pheno_indicator(a, b, PhenoConfig(use_age=True, use_mmse=True)) == 2.0
    assert pheno_indicator(a, c, PhenoConfig(use_age=True, use_mmse=True)) == 0.0


def test_pheno_matrix_matches_scalar(rng):
    subjects = _random_subjects(rng, 15)
    for cfg in list(ABLATION_ROWS.values()) + [ALL]:
        m = pheno_matrix(subjects, cfg)
        for i, u in enumerate(subjects):
            for j, v in enumerate(subjects):
                assert m[i, j] == pheno_indicator(u, v, cfg)


def test_pheno_config_names():
    assert PhenoConfig.from_names(["none"]) == PhenoConfig.similarity()
    assert PhenoConfig.from_names([]) == PhenoConfig.similarity()
    assert PhenoConfig.from_names(["MMSE", " gender"]).enabled() == ("gender", "mmse")
    with pytest.raises(ValueError):
        PhenoConfig.from_names(["height"])
    with pytest.raises(ValueError):
        PhenoConfig(use_mmse=True, similarity_only=True)


def test_ablation_rows():
    assert list(ABLATION_ROWS) == ["Similarity", "Apoe4", "Age", "Gender", "MMSE", "G+M", "G+A+M"]
    assert ABLATION_ROWS["G+A+M"].enabled() == ("gender", "apoe4", "mmse")


def test_adjacency_identical_rows():
    x = np.array([[1.0, 2.0, 4.0], [1.0, 2.0, 4.0]])
    a = build_adjacency(x, [make_subject("a"), make_subject("b")], PhenoConfig.similarity())
    assert np.array_equal(a, [[0.0, 1.0], [1.0, 0.0]])


def test_adjacency_zero_indicator_zero_edge(rng):
    x = rng.normal(size=(2, 5))
    subjects = [make_subject("a", gender="M"), make_subject("b", gender="F")]
    a = build_adjacency(x, subjects, PhenoConfig(use_gender=True), sigma=0.5)
    assert a[0, 1] == 0.0 and a[1, 0] == 0.0


def test_adjacency_four_node_oracle(rng):
    x = rng.normal(size=(4, 6))
    subjects = [
        make_subject("a", gender="M", apoe4=0, mmse=29, age=70.0),
        make_subject("b", gender="F", apoe4=0, mmse=28, age=70.5),
        make_subject("c", gender="M", apoe4=1, mmse=23, age=75.0),
        make_subject("d", gender="F", apoe4=1, mmse=24, age=69.5),
    ]

    def indicator(u, v):
        return (
            (u.gender == v.gender)
            + (u.apoe4 == v.apoe4)
            + (abs(u.mmse - v.mmse) <= 1)
            + (abs(u.age - v.age) <= 1)
        )

    a = build_adjacency(x, subjects, ALL, sigma=0.8)
    np.testing.assert_allclose(a, pair_adjacency(x, subjects, indicator, 0.8), rtol=0, atol=1e-12)


def test_sigma_rule_default_is_mean_distance():
    rho = np.array([[0.0, 0.2, 0.4], [0.2, 0.0, 0.6], [0.4, 0.6, 0.0]])
    assert resolve_sigma(rho, SigmaRule()) == pytest.approx(0.4)
    assert resolve_sigma(rho, SigmaRule(2.5)) == 2.5
    assert resolve_sigma(np.zeros((3, 3)), SigmaRule()) == 1.0
    with pytest.raises(ValueError):
        SigmaRule(-1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_adjacency_invariants(seed):
    r = np.random.default_rng(seed)
    subjects = _random_subjects(r, 10)
    x = r.normal(size=(10, 8))
    a = build_adjacency(x, subjects, ALL)
    assert np.array_equal(a, a.T)
    assert np.all(a >= 0) and np.all(np.isfinite(a))
    assert np.all(np.diag(a) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_adjacency_permutation_equivariant(seed):
    r = np.random.default_rng(seed)
    subjects = _random_subjects(r, 9)
    x = r.normal(size=(9, 5))
    perm = r.permutation(9)
    a = build_adjacency(x, subjects, ALL)
    ap = build_adjacency(x[perm], [subjects[i] for i in perm], ALL)
    np.testing.assert_allclose(ap, a[np.ix_(perm, perm)], rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["gender", "apoe4", "mmse", "age"]))
def test_enabling_phenotype_never_lowers_edges(seed, extra):
    r = np.random.default_rng(seed)
    subjects = _random_subjects(r, 8)
    x = r.normal(size=(8, 5))
    base = PhenoConfig(use_gender=True)
    more = PhenoConfig.from_names(sorted({"gender", extra}))
    assert np.all(build_adjacency(x, subjects, more, 0.7) >= build_adjacency(x, subjects, base, 0.7))


def test_normalize_cases():
    assert np.array_equal(normalize_adjacency(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(normalize_adjacency([[0.0, 1.0], [1.0, 0.0]]), np.full((2, 2), 0.5), atol=1e-15)
    with pytest.raises(ValueError):
        normalize_adjacency(np.zeros((2, 2)), "rw")


def test_renorm_preserves_constants_on_regular_graph():
    # 6-cycle, 2-regular
    a = np.zeros((6, 6))
    for i in range(6):
        a[i, (i + 1) % 6] = a[(i + 1) % 6, i] = 1.0
    out = normalize_adjacency(a) @ np.ones(6)
    np.testing.assert_allclose(out, np.ones(6), atol=1e-15)


def test_sym_norm_isolated_self_loop():
    a = np.array([[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    out = normalize_adjacency(a, "sym_norm")
    assert out[2, 2] == 1.0
    assert out[0, 1] == pytest.approx(1.0)


def test_scaled_laplacian_empty_graph():
    assert np.array_equal(laplacian(np.zeros((4, 4))), np.eye(4))
    assert np.array_equal(scaled_laplacian(np.zeros((4, 4))), np.zeros((4, 4)))


def test_scaled_laplacian_two_node():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(jacobi_eigenvalues(laplacian(a)), [0.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(jacobi_eigenvalues(scaled_laplacian(a)), [-1.0, 1.0], atol=1e-8)


def test_scaled_laplacian_fixed_lambda():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(scaled_laplacian(a, 2.0), laplacian(a) - np.eye(2), atol=0)
    with pytest.raises(ValueError):
        scaled_laplacian(a, 0.0)


def test_scaled_laplacian_spectrum_oracle():
    r = np.random.default_rng(3)
    for _ in range(25):
        lt = scaled_laplacian(random_symmetric_graph(r, 6))
        ev = jacobi_eigenvalues(lt)
        assert ev[0] >= -1 - 1e-6 and ev[-1] <= 1 + 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 15), st.floats(0.1, 1.0))
def test_scaled_laplacian_spectral_radius(seed, n, density):
    a = random_symmetric_graph(np.random.default_rng(seed), n, density)
    assert np.max(np.abs(np.linalg.eigvalsh(scaled_laplacian(a)))) <= 1 + 1e-6


def test_population_graph_masks_partition():
    t = np.array([True, False, False])
    v = np.array([False, True, False])
    e = np.array([False, False, True])
    PopulationGraph(np.zeros((3, 2)), np.zeros((3, 3)), ["a", "b", "c"], t, v, e, np.array([0, 1, -1]))
    with pytest.raises(ValueError):
        PopulationGraph(np.zeros((3, 2)), np.zeros((3, 3)), ["a", "b", "c"], t, v, t, np.zeros(3))


def test_hide_test_labels():
    assert list(hide_test_labels([1, 0, 1], [False, True, True])) == [1, -1, -1]

"""Random coupling ensembles, field families, and direction recipes."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from rfim_lab.coupling import two_norm
from rfim_lab.ensembles import (
    ENSEMBLE_KINDS,
    FIELD_KINDS,
    EnsembleSpec,
    FieldSpec,
    default_lambda,
    draw_field,
    eigen_recipe,
    field_expectation,
    field_mean_is_zero,
    generate,
)
from rfim_lab.measures import rademacher, as_toolkit


def rng_for(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Complete graph and Erdos-Renyi
# ---------------------------------------------------------------------------


def test_complete_graph_entries():
    spec = EnsembleSpec("curie_weiss", n=12, theta=0.5)
    mat, extras = generate(spec, rng_for(0))
    assert mat.kind == "uniform"
    assert extras == {}
    dense = mat.to_dense()
    off = dense[~np.eye(12, dtype=bool)]
    assert np.all(off == 0.5 / 11)
    assert np.all(np.diag(dense) == 0.0)


def test_er_with_full_probability_is_complete():
    spec = EnsembleSpec("erdos_renyi", n=9, theta=0.4, params={"p": 1.0})
    mat, extras = generate(spec, rng_for(1))
    dense = mat.to_dense()
    off = dense[~np.eye(9, dtype=bool)]
    assert np.allclose(off, 0.4 / 9, rtol=1e-15, atol=0)
    assert np.array_equal(extras["degrees"], np.full(9, 8))


def test_er_symmetry_and_degrees():
    spec = EnsembleSpec("erdos_renyi", n=80, theta=-0.3, params={"p": 0.2})
    mat, extras = generate(spec, rng_for(2))
    dense = mat.to_dense()
    assert np.array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0.0)
    deg = (dense != 0).sum(axis=1)
    assert np.array_equal(deg, extras["degrees"])
    present = dense[dense != 0]
    assert np.allclose(present, -0.3 / (80 * 0.2), rtol=1e-15)


def test_er_degree_concentration_at_scale():
    # max row sum is the max degree over n p, which concentrates near 1
    spec = EnsembleSpec("erdos_renyi", n=2000, theta=0.7, params={"p": 0.5})
    mat, _ = generate(spec, rng_for(3))
    ratio = mat.inf_norm() / 0.7
    assert 0.9 <= ratio <= 1.1


def test_er_storage_override():
    spec = EnsembleSpec(
        "erdos_renyi", n=60, theta=0.5, params={"p": 0.5, "storage": "csr"}
    )
    mat, _ = generate(spec, rng_for(4))
    assert mat.kind == "csr"


def test_er_rejects_bad_probability():
    for p in [0.0, -0.1, 1.5]:
        spec = EnsembleSpec("erdos_renyi", n=10, theta=0.5, params={"p": p})
        with pytest.raises(ValueError):
            generate(spec, rng_for(0))


def test_generation_is_deterministic_per_seed():
    spec = EnsembleSpec("erdos_renyi", n=50, theta=0.5, params={"p": 0.3})
    a, _ = generate(spec, rng_for(123))
    b, _ = generate(spec, rng_for(123))
    assert np.array_equal(a.to_dense(), b.to_dense())


# ---------------------------------------------------------------------------
# Regular graphs
# ---------------------------------------------------------------------------


def test_circulant_regular_structure():
    spec = EnsembleSpec("d_regular", n=10, theta=0.5, params={"d": 4})
    mat, extras = generate(spec, rng_for(5))
    dense = mat.to_dense()
    assert np.array_equal(extras["degrees"], np.full(10, 4))
    # ring offsets 1 and 2 on both sides
    assert set(np.nonzero(dense[0])[0]) == {1, 2, 8, 9}
    assert np.all(dense[dense != 0] == 0.5 / 4)
    assert mat.inf_norm() == 0.5
    assert two_norm(mat) == pytest.approx(0.5, rel=1e-7)


def test_circulant_flat_direction_is_exact():
    spec = EnsembleSpec("d_regular", n=10, theta=0.5, params={"d": 4})
    mat, extras = generate(spec, rng_for(6))
    pair = eigen_recipe("flat", mat, default_lambda(spec, "flat", extras))
    assert pair.lam == 0.5
    assert pair.eps_norm == 0.0


def test_circulant_rejects_odd_or_oversized_degree():
    for d in [3, 10, 12]:
        spec = EnsembleSpec("d_regular", n=10, theta=0.5, params={"d": d})
        with pytest.raises(ValueError):
            generate(spec, rng_for(0))


def test_random_regular_graph_is_simple_and_regular():
    spec = EnsembleSpec("random_regular", n=200, theta=0.6, params={"d": 3})
    mat, extras = generate(spec, rng_for(7))
    dense = mat.to_dense()
    assert np.array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0.0)
    deg = (dense != 0).sum(axis=1)
    assert np.array_equal(deg, np.full(200, 3))
    assert np.array_equal(extras["degrees"], np.full(200, 3))
    assert np.all(dense[dense != 0] == 0.6 / 3)
    flat = eigen_recipe("flat", mat, 0.6)
    assert flat.eps_norm <= 1e-13


def test_random_regular_parity_check():
    spec = EnsembleSpec("random_regular", n=9, theta=0.5, params={"d": 3})
    with pytest.raises(ValueError):
        generate(spec, rng_for(0))  # n d odd


# ---------------------------------------------------------------------------
# Graphons
# ---------------------------------------------------------------------------


def test_constant_graphon_reduces_to_er_profile():
    spec = EnsembleSpec(
        "graphon", n=300, theta=0.5, params={"gamma": 0.0, "f": {"constant": 0.3}}
    )
    mat, extras = generate(spec, rng_for(8))
    assert extras["lambda_f"] == 0.3
    assert np.all(extras["eigenfunction_values"] == 1.0)
    dense = mat.to_dense()
    present = dense[dense != 0]
    assert np.allclose(present, 0.5 / 300, rtol=1e-15)
    # edge count near binomial mean n(n-1)/2 * 0.3
    edges = (dense != 0).sum() / 2
    mean_edges = 300 * 299 / 2 * 0.3
    assert abs(edges - mean_edges) <= 4 * math.sqrt(mean_edges)


def test_graphon_flat_residual_decays_with_n():
    def median_eps(n):
        vals = []
        for seed in range(5):
            spec = EnsembleSpec(
                "graphon", n=n, theta=0.5,
                params={"gamma": 0.2, "f": {"constant": 1.0}},
            )
            mat, extras = generate(spec, rng_for(100 + seed))
            lam = default_lambda(spec, "graphon_eigenfunction", extras)
            pair = eigen_recipe(
                "graphon_eigenfunction", mat, lam, extras=extras
            )
            vals.append(pair.eps_norm)
        return float(np.median(vals))

    # residual scales like n^{-(1-gamma)/2}; quadrupling n should beat 0.7
    assert median_eps(800) / median_eps(200) <= 0.7


def test_block_graphon_eigen_data_solves_step_kernel():
    blocks = [[0.8, 0.2], [0.2, 0.4]]
    weights = [0.3, 0.7]
    spec = EnsembleSpec(
        "graphon",
        n=500,
        theta=0.6,
        params={"gamma": 0.1, "f": {"blocks": blocks, "block_weights": weights}},
    )
    mat, extras = generate(spec, rng_for(9))
    lam_f = extras["lambda_f"]
    vals = extras["eigenfunction_values"]
    b = np.asarray(blocks)
    w = np.asarray(weights)
    # recover the step values of the eigenfunction from the latent draw
    u = extras["u"]
    assign = (u >= w[0]).astype(int)
    q_step = np.array([vals[assign == k][0] for k in range(2)])
    # the step kernel acts as (T q)(k) = sum_j B_kj w_j q_j
    assert np.allclose(b @ (w * q_step), lam_f * q_step, rtol=0, atol=1e-12)
    # and the 2x2 symmetrized eigenvalue has a closed form
    sq = np.sqrt(w)
    sym = sq[:, None] * b * sq[None, :]
    tr, det = sym[0, 0] + sym[1, 1], sym[0, 0] * sym[1, 1] - sym[0, 1] ** 2
    roots = [0.5 * (tr + s * math.sqrt(tr * tr - 4 * det)) for s in (+1, -1)]
    want = max(roots, key=abs)
    assert lam_f == pytest.approx(want, abs=1e-13)
    assert default_lambda(spec, "graphon_eigenfunction", extras) == pytest.approx(
        0.6 * want, abs=1e-13
    )


def test_graphon_rejects_bad_gamma_and_f():
    with pytest.raises(ValueError):
        generate(
            EnsembleSpec("graphon", n=10, theta=0.5, params={"gamma": 0.5}),
            rng_for(0),
        )
    with pytest.raises(ValueError):
        generate(
            EnsembleSpec("graphon", n=10, theta=0.5, params={"f": {}}), rng_for(0)
        )
    with pytest.raises(ValueError):
        generate(
            EnsembleSpec(
                "graphon", n=10, theta=0.5,
                params={"f": {"blocks": [[0.5, 0.1], [0.2, 0.5]]}},
            ),
            rng_for(0),
        )


# ---------------------------------------------------------------------------
# Hopfield
# ---------------------------------------------------------------------------


def test_hopfield_structure_and_entry_scale():
    n, big_n, theta = 40, 400, 0.5
    spec = EnsembleSpec("hopfield", n=n, theta=theta, params={"N": big_n})
    mat, extras = generate(spec, rng_for(10))
    assert extras == {}
    dense = mat.to_dense()
    assert np.array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0.0)
    # entries are theta * (mean of N Rademacher products): variance theta^2/N
    off = dense[np.triu_indices(n, k=1)]
    var = float(np.var(off))
    want = theta**2 / big_n
    assert 0.5 * want <= var <= 2.0 * want
    # lattice of achievable values: theta * (even integer offset) / N
    steps = off * big_n / theta
    assert np.allclose(steps, np.round(steps), atol=1e-9)


def test_hopfield_gaussian_patterns():
    spec = EnsembleSpec(
        "hopfield", n=30, theta=0.4, params={"N": 900, "z_dist": "gaussian"}
    )
    mat, _ = generate(spec, rng_for(11))
    assert mat.kind == "dense"
    assert np.all(np.diag(mat.to_dense()) == 0.0)
    with pytest.raises(ValueError):
        generate(
            EnsembleSpec("hopfield", n=30, theta=0.4, params={"N": 10, "z_dist": "x"}),
            rng_for(0),
        )


def test_hopfield_dilution_controls_storage():
    sparse_spec = EnsembleSpec(
        "hopfield", n=100, theta=0.5, params={"N": 1000, "dilution": 0.04}
    )
    mat, _ = generate(sparse_spec, rng_for(12))
    assert mat.kind == "csr"
    assert mat.nnz_offdiag() / (100 * 99) == pytest.approx(0.04, abs=0.015)
    dense_spec = EnsembleSpec(
        "hopfield", n=100, theta=0.5, params={"N": 1000, "dilution": 0.5}
    )
    mat2, _ = generate(dense_spec, rng_for(13))
    assert mat2.kind == "dense"
    kept = mat2.to_dense() != 0
    assert np.array_equal(kept, kept.T)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


def test_field_draw_shapes_and_laws():
    m = 200_000
    rng = rng_for(14)
    two = draw_field(FieldSpec("two_point_symmetric", h=0.5), m, rng)
    assert set(np.unique(two)) == {-0.5, 0.5}
    assert abs(two.mean()) <= 4 * 0.5 / math.sqrt(m)

    uni = draw_field(FieldSpec("uniform_symmetric", h=0.5), m, rng)
    assert np.all(np.abs(uni) <= 0.5)
    var = float(np.var(uni))
    want = 0.5**2 / 3
    se = 0.5**2 * math.sqrt(4.0 / 45.0) / math.sqrt(m)
    assert abs(var - want) <= 4 * se

    const = draw_field(FieldSpec("constant", h=-0.3), 7, rng)
    assert np.all(const == -0.3)

    at = draw_field(
        FieldSpec("atoms", points=(-0.4, 0.1, 0.6), weights=(0.25, 0.5, 0.25)),
        m,
        rng,
    )
    assert set(np.unique(at)) <= {-0.4, 0.1, 0.6}
    freq = float((at == 0.1).mean())
    assert abs(freq - 0.5) <= 4 * 0.5 / math.sqrt(m)


def test_field_expectation_exactness():
    sech2 = lambda x: 1.0 / np.cosh(x) ** 2
    # uniform on [-h, h]: E sech^2 = tanh(h)/h, compared both in closed
    # form and against adaptive quadrature
    h = 0.5
    spec = FieldSpec("uniform_symmetric", h=h)
    got = field_expectation(spec, sech2)
    assert got == pytest.approx(math.tanh(h) / h, abs=1e-14)
    want_quad, err = quad(lambda x: sech2(x) / (2 * h), -h, h, epsabs=1e-13)
    assert got == pytest.approx(want_quad, abs=1e-12)

    two = FieldSpec("two_point_symmetric", h=0.7)
    assert field_expectation(two, sech2) == pytest.approx(
        1.0 / math.cosh(0.7) ** 2, abs=1e-15
    )
    assert field_expectation(two, np.tanh) == 0.0

    const = FieldSpec("constant", h=0.2)
    assert field_expectation(const, np.tanh) == pytest.approx(
        math.tanh(0.2), abs=1e-15
    )

    at = FieldSpec("atoms", points=(-0.5, 0.5), weights=(0.25, 0.75))
    assert field_expectation(at, np.tanh) == pytest.approx(
        0.5 * math.tanh(0.5), abs=1e-15
    )


def test_field_mean_is_zero_classifier():
    tk = as_toolkit(rademacher())
    assert field_mean_is_zero(FieldSpec("two_point_symmetric", h=0.5), tk)
    assert field_mean_is_zero(FieldSpec("uniform_symmetric", h=0.8), tk)
    assert field_mean_is_zero(FieldSpec("constant", h=0.0), tk)
    assert not field_mean_is_zero(FieldSpec("constant", h=0.3), tk)
    assert not field_mean_is_zero(
        FieldSpec("atoms", points=(-0.5, 0.5), weights=(0.25, 0.75)), tk
    )


def test_field_spec_validation():
    with pytest.raises(ValueError):
        FieldSpec("nope")
    with pytest.raises(ValueError):
        FieldSpec("two_point_symmetric", h=0.0)
    with pytest.raises(ValueError):
        FieldSpec("atoms", points=(0.1, 0.2))
    with pytest.raises(ValueError):
        FieldSpec("atoms", points=(0.1, 0.2), weights=(0.9, 0.3))
    assert "constant" in FIELD_KINDS


# ---------------------------------------------------------------------------
# Direction recipes
# ---------------------------------------------------------------------------


def test_flat_recipe_entries():
    spec = EnsembleSpec("curie_weiss", n=16, theta=0.5)
    mat, extras = generate(spec, rng_for(15))
    pair = eigen_recipe("flat", mat, default_lambda(spec, "flat", extras))
    assert np.allclose(pair.q, 0.25, rtol=0, atol=1e-16)
    assert pair.lam == 0.5
    assert pair.eps_norm <= 1e-14


def test_contrast_recipe_is_centered_unit_vector():
    spec = EnsembleSpec("curie_weiss", n=50, theta=0.5)
    mat, extras = generate(spec, rng_for(16))
    lam = default_lambda(spec, "contrast", extras)
    assert lam == 0.0
    pair = eigen_recipe("contrast", mat, lam, rng=rng_for(17))
    assert abs(pair.q.sum()) <= 1e-12
    assert np.linalg.norm(pair.q) == pytest.approx(1.0, abs=1e-14)
    # orthogonal to the flat eigenvector, the residual is A q itself
    again = eigen_recipe("contrast", mat, lam, rng=rng_for(17))
    assert np.array_equal(pair.q, again.q)
    with pytest.raises(ValueError):
        eigen_recipe("contrast", mat, 0.0)  # rng required


def test_recipe_argument_errors():
    spec = EnsembleSpec("curie_weiss", n=8, theta=0.3)
    mat, _ = generate(spec, rng_for(18))
    with pytest.raises(ValueError):
        eigen_recipe("graphon_eigenfunction", mat, 0.3)
    with pytest.raises(ValueError):
        eigen_recipe("sideways", mat, 0.3)


def test_default_lambda_table():
    cw = EnsembleSpec("curie_weiss", n=10, theta=0.7)
    er = EnsembleSpec("erdos_renyi", n=10, theta=-0.4, params={"p": 0.5})
    hop = EnsembleSpec("hopfield", n=10, theta=0.5, params={"N": 20})
    assert default_lambda(cw, "flat", {}) == 0.7
    assert default_lambda(er, "flat", {}) == -0.4
    assert default_lambda(cw, "contrast", {}) == 0.0
    assert default_lambda(hop, "flat", {}) == 0.0
    gr = EnsembleSpec("graphon", n=10, theta=0.5)
    assert default_lambda(gr, "flat", {"lambda_f": 0.8}) == pytest.approx(0.4)


def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec("foo", n=10, theta=0.5)
    with pytest.raises(ValueError):
        EnsembleSpec("curie_weiss", n=1, theta=0.5)
    assert set(ENSEMBLE_KINDS) == {
        "curie_weiss",
        "erdos_renyi",
        "d_regular",
        "random_regular",
        "graphon",
        "hopfield",
    }

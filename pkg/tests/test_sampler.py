"""Single-site dynamics: conditional laws, stationarity against exact
enumeration, reproducibility, diagnostics."""

import itertools
import math

import numpy as np
import pytest

from rfim_lab.coupling import CouplingMatrix
from rfim_lab.errors import DomainError, RfimLabError
from rfim_lab.measures import rademacher
from rfim_lab.model import make_model
from rfim_lab.sampler import (
    ENUM_LIMIT,
    advance_steps,
    conditional_distribution,
    default_burn_in_sweeps,
    enumerate_exact,
    glauber_step,
    init_state,
    run_chain,
    stream_rng,
)
from rfim_lab.sampler.diagnostics import (
    autocorrelation,
    cross_chain_ratio,
    integrated_autocorrelation_time,
)

# ---------------------------------------------------------------------------
# Oracle: exact Gibbs law by direct summation, no numpy, no shared code.
# Written before the chain tests that consume it.
# ---------------------------------------------------------------------------


def gibbs_oracle(a_rows, c, points, weights):
    """Probabilities over itertools.product(points, repeat=n) plus log Z.

    The density is exp(0.5 sigma . A sigma + c . sigma) against the
    product of atomic weights.
    """
    n = len(c)
    raw = []
    for sigma in itertools.product(points, repeat=n):
        energy = 0.0
        for i in range(n):
            for j in range(n):
                energy += 0.5 * a_rows[i][j] * sigma[i] * sigma[j]
            energy += c[i] * sigma[i]
        weight = 1.0
        for s in sigma:
            weight *= weights[points.index(s)]
        raw.append(math.exp(energy) * weight)
    z = sum(raw)
    return [r / z for r in raw], math.log(z)


def batch_se(series, n_batches=50):
    series = np.asarray(series, dtype=np.float64)
    m = series.size // n_batches
    means = series[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def state_indexer(exact):
    """Map a visited configuration to its enumeration index."""
    block = exact.states_block(0, exact.n_states)
    return {tuple(row): k for k, row in enumerate(block)}


def spin_model(a, c, rho=0.8):
    a = np.asarray(a, dtype=np.float64)
    return make_model(CouplingMatrix.from_dense(a), c, rademacher(), rho=rho)


# ---------------------------------------------------------------------------
# Conditional law
# ---------------------------------------------------------------------------


def test_conditional_distribution_closed_form():
    a = [[0.0, 0.2, -0.1], [0.2, 0.0, 0.3], [-0.1, 0.3, 0.0]]
    c = [0.1, -0.4, 0.25]
    model = spin_model(a, c)
    sigma = np.array([1.0, -1.0, 1.0])
    for i in range(3):
        values, probs = conditional_distribution(model, sigma, i)
        m_i = sum(a[i][j] * sigma[j] for j in range(3)) + c[i]
        p_plus = 0.5 * (1.0 + math.tanh(m_i))
        assert np.array_equal(values, [-1.0, 1.0])
        assert probs[1] == pytest.approx(p_plus, abs=1e-12)
        assert probs[0] == pytest.approx(1.0 - p_plus, abs=1e-12)


def test_conditional_distribution_needs_atoms():
    from rfim_lab.measures import uniform

    model = make_model(CouplingMatrix.uniform_offdiag(2, 0.1), [0.0, 0.0], uniform())
    with pytest.raises(DomainError):
        conditional_distribution(model, [0.5, -0.5], 0)


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


def test_enumeration_uniform_when_no_interaction_no_field():
    model = spin_model(np.zeros((4, 4)), np.zeros(4))
    exact = enumerate_exact(model)
    assert exact.n_states == 16
    assert np.allclose(exact.probs, 1.0 / 16, rtol=1e-14, atol=0)
    assert abs(exact.log_z) <= 1e-13
    assert np.allclose(exact.mean, 0.0, atol=1e-15)


def test_enumeration_single_site():
    model = spin_model([[0.0]], [0.7])
    exact = enumerate_exact(model)
    p_plus = math.exp(0.7) / (2 * math.cosh(0.7))
    idx = state_indexer(exact)
    assert exact.probs[idx[(1.0,)]] == pytest.approx(p_plus, abs=1e-14)
    assert exact.log_z == pytest.approx(math.log(math.cosh(0.7)), abs=1e-13)


def test_enumeration_matches_independent_oracle():
    a = [[0.0, 0.2, -0.15], [0.2, 0.0, 0.1], [-0.15, 0.1, 0.0]]
    c = [0.3, -0.2, 0.05]
    model = spin_model(a, c)
    exact = enumerate_exact(model)
    want_probs, want_logz = gibbs_oracle(a, c, [-1.0, 1.0], [0.5, 0.5])
    # oracle order is itertools.product, which the enumeration matches
    idx = state_indexer(exact)
    for k, sigma in enumerate(itertools.product([-1.0, 1.0], repeat=3)):
        assert exact.probs[idx[sigma]] == pytest.approx(want_probs[k], rel=1e-12)
    assert exact.log_z == pytest.approx(want_logz, abs=1e-12)


def test_enumeration_mean_and_cov_match_direct_sums():
    a = [[0.0, 0.3], [0.3, 0.0]]
    c = [0.1, -0.3]
    model = spin_model(a, c)
    exact = enumerate_exact(model)
    states = exact.states_block(0, 4)
    mean = exact.probs @ states
    cov = np.einsum("s,si,sj->ij", exact.probs, states, states) - np.outer(mean, mean)
    assert np.allclose(exact.mean, mean, atol=1e-15)
    assert np.allclose(exact.cov, cov, atol=1e-15)


def test_enumeration_state_limit():
    model = spin_model(np.zeros((25, 25)), np.zeros(25))
    assert 2**25 > ENUM_LIMIT
    with pytest.raises(DomainError):
        enumerate_exact(model)


# ---------------------------------------------------------------------------
# Detailed balance
# ---------------------------------------------------------------------------


def test_detailed_balance_against_exact_law():
    """pi(x) K(x -> y) = pi(y) K(y -> x) for single-site moves, n = 3."""
    a = [[0.0, 0.25, -0.2], [0.25, 0.0, 0.15], [-0.2, 0.15, 0.0]]
    c = [0.2, -0.1, 0.35]
    model = spin_model(a, c)
    exact = enumerate_exact(model)
    idx = state_indexer(exact)
    n = 3
    for sigma in itertools.product([-1.0, 1.0], repeat=n):
        for i in range(n):
            other = list(sigma)
            other[i] = -sigma[i]
            other = tuple(other)
            values, probs = conditional_distribution(model, np.array(sigma), i)
            k_fwd = probs[list(values).index(other[i])] / n
            values_b, probs_b = conditional_distribution(model, np.array(other), i)
            k_bwd = probs_b[list(values_b).index(sigma[i])] / n
            lhs = exact.probs[idx[sigma]] * k_fwd
            rhs = exact.probs[idx[other]] * k_bwd
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-15)


# ---------------------------------------------------------------------------
# Long-run frequencies against exact probabilities
# ---------------------------------------------------------------------------


def run_frequency_check(model, exact, total_steps, seed):
    n = model.n
    sweeps = total_steps // n
    idx = state_indexer(exact)
    key = {s: k for s, k in idx.items()}
    result = run_chain(
        model,
        sweeps=sweeps,
        burn_in=200,
        record={"state": lambda st: key[tuple(st.sigma)]},
        seed=seed,
    )
    visits = result.records["state"].astype(np.int64)
    m = visits.size
    for s in range(exact.n_states):
        indicator = (visits == s).astype(np.float64)
        freq = float(indicator.mean())
        p = float(exact.probs[s])
        se = max(batch_se(indicator), math.sqrt(p * (1 - p) / m))
        assert abs(freq - p) <= 4 * se, (s, freq, p, se)


def test_two_site_frequencies_match_enumeration():
    model = spin_model([[0.0, 0.4], [0.4, 0.0]], [0.1, -0.3])
    exact = enumerate_exact(model)
    run_frequency_check(model, exact, total_steps=1_000_000, seed=321)


def test_three_site_frequencies_match_hand_rolled_oracle():
    a = [[0.0, 0.2, 0.2], [0.2, 0.0, 0.2], [0.2, 0.2, 0.0]]
    c = [0.0, 0.1, -0.1]
    model = spin_model(a, c)
    want_probs, _ = gibbs_oracle(a, c, [-1.0, 1.0], [0.5, 0.5])
    exact = enumerate_exact(model)
    idx = state_indexer(exact)
    for k, sigma in enumerate(itertools.product([-1.0, 1.0], repeat=3)):
        assert exact.probs[idx[sigma]] == pytest.approx(want_probs[k], rel=1e-12)
    run_frequency_check(model, exact, total_steps=600_000, seed=99)


def test_single_site_chain_hits_tilted_probability():
    model = spin_model([[0.0]], [0.7])
    result = run_chain(
        model,
        sweeps=200_000,
        burn_in=10,
        record={"plus": lambda st: float(st.sigma[0] > 0)},
        seed=17,
    )
    p_hat = float(result.records["plus"].mean())
    p = math.exp(0.7) / (2 * math.cosh(0.7))
    se = math.sqrt(p * (1 - p) / result.records["plus"].size)
    assert abs(p_hat - p) <= 4 * se


def test_independent_sites_match_marginals():
    # A = 0 factorizes the chain into independent tilted coordinates
    rng = np.random.default_rng(12)
    c = rng.uniform(-1, 1, size=6)
    model = make_model(CouplingMatrix.uniform_offdiag(6, 0.0), c, rademacher())
    result = run_chain(
        model,
        sweeps=40_000,
        burn_in=5,
        thinning=8,
        record={"sigma": lambda st: st.sigma.copy()},
        seed=5,
    )
    samples = result.records["sigma"]
    want = np.tanh(c)
    sd = np.sqrt(1.0 - want**2)
    err = np.abs(samples.mean(axis=0) - want)
    assert np.all(err <= 4 * sd / math.sqrt(samples.shape[0]))


def test_conditional_mean_identity_along_trajectory():
    """Averages of sigma_i - tanh(m_i + c_i) vanish in the long run."""
    a = 0.25 * np.array(
        [[0.0, 1.0, -1.0, 0.5], [1.0, 0.0, 0.3, -0.2],
         [-1.0, 0.3, 0.0, 0.6], [0.5, -0.2, 0.6, 0.0]]
    )
    c = np.array([0.1, -0.2, 0.3, 0.0])
    model = spin_model(a, c)
    result = run_chain(
        model,
        sweeps=60_000,
        burn_in=100,
        record={
            "gap": lambda st: float(
                np.mean(st.sigma - np.tanh(st.local_fields() + c))
            )
        },
        seed=777,
    )
    gaps = result.records["gap"]
    assert abs(gaps.mean()) <= 4 * batch_se(gaps)


# ---------------------------------------------------------------------------
# Mechanics: drift guard, reproducibility, bookkeeping
# ---------------------------------------------------------------------------


def test_corrupted_increments_trip_the_drift_guard():
    model = spin_model(0.1 * (np.ones((8, 8)) - np.eye(8)), np.zeros(8))
    rng = stream_rng(1, 1)
    state = init_state(model, rng)
    state.m[0] += 1e-6  # inconsistent with sigma from here on
    with pytest.raises(RfimLabError, match="drift"):
        advance_steps(state, 1025 * 8, rng)


def test_uniform_storage_drift_guard():
    model = make_model(
        CouplingMatrix.uniform_offdiag(8, 0.01), np.zeros(8), rademacher()
    )
    rng = stream_rng(2, 1)
    state = init_state(model, rng)
    state.aux[0] += 1e-6
    with pytest.raises(RfimLabError, match="drift"):
        advance_steps(state, 1025 * 8, rng)


def test_equal_seeds_give_identical_records():
    model = spin_model(0.08 * (np.ones((5, 5)) - np.eye(5)), np.full(5, 0.2))
    kwargs = dict(
        sweeps=100,
        burn_in=20,
        record={"mag": lambda st: float(st.sigma.sum())},
    )
    a = run_chain(model, seed=4242, **kwargs)
    b = run_chain(model, seed=4242, **kwargs)
    assert np.array_equal(a.records["mag"], b.records["mag"])
    assert np.array_equal(a.state.sigma, b.state.sigma)
    c = run_chain(model, seed=4243, **kwargs)
    assert not np.array_equal(a.records["mag"], c.records["mag"])


def test_zero_sweeps_returns_empty_records():
    model = spin_model([[0.0, 0.1], [0.1, 0.0]], [0.0, 0.0])
    result = run_chain(model, sweeps=0, burn_in=3, record={"x": lambda st: 1.0}, seed=1)
    assert result.records["x"].size == 0
    assert result.state.sweeps == 3


def test_step_and_flip_accounting():
    model = spin_model([[0.0, 0.1], [0.1, 0.0]], [0.0, 0.0])
    rng = stream_rng(9, 0)
    state = init_state(model, rng)
    advance_steps(state, 123, rng)
    assert state.steps == 123
    assert 0 <= state.flips <= 123
    assert state.sweeps == 61


def test_glauber_step_leaves_input_untouched():
    model = spin_model([[0.0, 0.3], [0.3, 0.0]], [0.5, -0.5])
    rng = stream_rng(33, 0)
    state = init_state(model, rng)
    before = state.sigma.copy()
    out = glauber_step(state, rng)
    assert np.array_equal(state.sigma, before)
    assert out.steps == state.steps + 1


def test_init_state_accepts_explicit_start():
    model = spin_model([[0.0, 0.2], [0.2, 0.0]], [0.0, 0.0])
    state = init_state(model, stream_rng(0, 0), sigma0=[1.0, -1.0])
    assert np.array_equal(state.sigma, [1.0, -1.0])
    with pytest.raises(ValueError):
        init_state(model, stream_rng(0, 0), sigma0=[1.0, -1.0, 1.0])


def test_default_burn_in_formula():
    for n, rho in [(10, 0.5), (100, 0.3), (2000, 0.8)]:
        steps = math.ceil(10.0 * n * math.log(n + 1) / (1.0 - rho))
        assert default_burn_in_sweeps(n, rho) == math.ceil(steps / n)
    with pytest.raises(ValueError):
        default_burn_in_sweeps(10, 1.0)


def test_run_chain_thinning_and_argument_checks():
    model = spin_model([[0.0, 0.1], [0.1, 0.0]], [0.0, 0.0])
    result = run_chain(
        model, sweeps=100, burn_in=0, thinning=10,
        record={"m": lambda st: 0.0}, seed=2,
    )
    assert result.records["m"].size == 10
    with pytest.raises(ValueError):
        run_chain(model, sweeps=10, burn_in=0, thinning=0, seed=2)
    with pytest.raises(ValueError):
        run_chain(model, sweeps=10, burn_in=0)  # neither rng nor seed


# ---------------------------------------------------------------------------
# Mixing
# ---------------------------------------------------------------------------


def test_magnetization_autocorrelation_decays():
    n, theta = 100, 0.3
    model = make_model(
        CouplingMatrix.uniform_offdiag(n, theta / (n - 1)),
        np.zeros(n),
        rademacher(),
        rho=0.5,
    )
    result = run_chain(
        model,
        sweeps=4000,
        record={"mag": lambda st: float(st.sigma.mean())},
        seed=606,
    )
    acf = autocorrelation(result.records["mag"], max_lag=50)
    assert acf[0] == pytest.approx(1.0)
    assert abs(acf[50]) < 0.1
    tau = integrated_autocorrelation_time(result.records["mag"])
    assert tau < 25.0


def test_cross_chain_ratio_near_one_for_identical_law():
    rng = np.random.default_rng(15)
    chains = rng.standard_normal((4, 2000))
    assert cross_chain_ratio(chains) == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        cross_chain_ratio(chains[:1])


# ---------------------------------------------------------------------------
# Classical sanity floor: no interaction, flat direction
# ---------------------------------------------------------------------------


def test_classical_clt_baseline():
    """With A = 0 the normalized magnetization of n = 400 symmetric spins
    is compared to N(0, 1).

    The exact law lives on a lattice of spacing 0.1, which alone keeps the
    distance near 0.02, so a small fixed gate would be dishonest.  Instead
    the exact binomial-vs-Gaussian distance is computed as the floor and
    the empirical value must sit within a DKW band (significance 1e-3)
    around it.
    """
    from scipy.stats import binom, norm

    from rfim_lab.cltlab import ks_distance

    n, m = 400, 10_000
    model = make_model(
        CouplingMatrix.uniform_offdiag(n, 0.0), np.zeros(n), rademacher(), rho=0.5
    )
    root_n = math.sqrt(n)
    draws = np.empty(m)
    for k in range(m):
        rng = stream_rng(1900, k)
        state = init_state(model, rng)
        advance_steps(state, 2 * n, rng)
        draws[k] = float(state.sigma.sum() / root_n)
    got = ks_distance(draws, 1.0)

    # floor: T = (2 B - n) / sqrt(n) with B ~ Binomial(n, 1/2)
    ks_count = np.arange(n + 1)
    t_atoms = (2 * ks_count - n) / root_n
    cdf_right = binom.cdf(ks_count, n, 0.5)
    cdf_left = np.concatenate(([0.0], cdf_right[:-1]))
    gauss = norm.cdf(t_atoms)
    floor = float(
        max(np.max(np.abs(cdf_right - gauss)), np.max(np.abs(cdf_left - gauss)))
    )
    assert floor == pytest.approx(0.01994, abs=2e-4)
    dkw = math.sqrt(math.log(2.0 / 1e-3) / (2 * m))
    assert abs(got - floor) <= dkw

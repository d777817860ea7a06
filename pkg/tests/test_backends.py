"""Bit-exact agreement between the compiled update kernel and the
pure-Python reference loop."""

import os
import subprocess
import sys
import warnings

import numpy as np
import pytest

from rfim_lab.coupling import CouplingMatrix
from rfim_lab.measures import atoms, density, rademacher, uniform
from rfim_lab.model import make_model
from rfim_lab.sampler import backend_name, init_state, stream_rng
from rfim_lab.sampler import _engine
from rfim_lab.sampler._tables import build_tables

_kernel = pytest.importorskip(
    "rfim_lab.sampler._kernel", reason="compiled kernel not built"
)


def three_atoms():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return atoms([-1.0, 0.0, 0.5], [0.25, 0.5, 0.25])


def make_cases():
    rng = np.random.default_rng(404)
    n = 24
    a = rng.standard_normal((n, n)) * 0.05
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    dense = CouplingMatrix.from_dense(a)
    mask = np.triu(rng.random((n, n)) < 0.08, 1)
    ii, jj = np.nonzero(mask)
    sparse = CouplingMatrix.from_upper_triplets(
        n, ii, jj, rng.normal(0, 0.2, size=ii.size), storage="csr"
    )
    unif = CouplingMatrix.uniform_offdiag(n, 0.3 / (n - 1))
    c = rng.uniform(-0.8, 0.8, size=n)
    mixed = [rademacher() if i % 3 else three_atoms() for i in range(n)]
    cases = {
        "dense_rademacher": make_model(dense, c, rademacher()),
        "dense_three_atom": make_model(dense, c, three_atoms()),
        "dense_continuous": make_model(dense, c, uniform()),
        "dense_quartic": make_model(dense, c, density(lambda x: 0.5 + x**4)),
        "dense_mixed_sites": make_model(dense, c, mixed),
        "csr_rademacher": make_model(sparse, c, rademacher()),
        "csr_continuous": make_model(sparse, c, uniform()),
        "uniform_rademacher": make_model(unif, c, rademacher()),
        "uniform_three_atom": make_model(unif, c, three_atoms()),
    }
    return cases


CASES = make_cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_kernel_matches_reference_loop(name):
    """Same tables, same uniforms: trajectories must agree bit for bit."""
    model = CASES[name]
    tables = build_tables(model)
    rng = stream_rng(2025, 0)
    state = init_state(model, rng)
    steps = 4096
    u = rng.random(2 * steps)

    sig_a, m_a, aux_a = state.sigma.copy(), state.m.copy(), state.aux.copy()
    sig_b, m_b, aux_b = state.sigma.copy(), state.m.copy(), state.aux.copy()
    scr_a = np.zeros(tables.scratch_len)
    scr_b = np.zeros(tables.scratch_len)

    flips_a = _engine.advance(tables, sig_a, m_a, aux_a, u, steps, scr_a)
    flips_b = _kernel.advance(tables, sig_b, m_b, aux_b, u, steps, scr_b)

    assert flips_a == flips_b
    assert np.array_equal(sig_a, sig_b)
    assert np.array_equal(m_a, m_b)
    assert np.array_equal(aux_a, aux_b)
    assert flips_a > 0  # the run actually moved


def test_default_backend_is_compiled():
    assert backend_name() == "cython"


def test_forced_python_backend_reproduces_trajectory():
    """RFIM_LAB_PURE_PYTHON must swap the implementation without changing
    a single recorded value."""
    script = r"""
import json, sys
import numpy as np
from rfim_lab.coupling import CouplingMatrix
from rfim_lab.measures import rademacher
from rfim_lab.model import make_model
from rfim_lab.sampler import backend_name, run_chain

n = 16
model = make_model(
    CouplingMatrix.uniform_offdiag(n, 0.4 / (n - 1)),
    np.full(n, 0.1),
    rademacher(),
    rho=0.6,
)
res = run_chain(
    model, sweeps=64, burn_in=16,
    record={"mag": lambda st: float(st.sigma.sum())}, seed=3131,
)
print(json.dumps({
    "backend": backend_name(),
    "mag": res.records["mag"].tolist(),
    "sigma": res.state.sigma.tolist(),
}))
"""

    def run(env_extra):
        env = dict(os.environ, **env_extra)
        out = subprocess.run(
            [sys.executable, "-c", script],
            capture_output=True,
            text=True,
            env=env,
            check=True,
        )
        import json

        return json.loads(out.stdout)

    compiled = run({})
    fallback = run({"RFIM_LAB_PURE_PYTHON": "1"})
    assert compiled["backend"] == "cython"
    assert fallback["backend"] == "python"
    assert compiled["mag"] == fallback["mag"]
    assert compiled["sigma"] == fallback["sigma"]

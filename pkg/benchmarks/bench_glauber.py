"""Throughput comparison of the two Glauber inner-loop backends.

Feeds the same pre-drawn uniform stream to the compiled Cython kernel
and the pure-Python reference engine for each coupling storage kind,
checks that the final states agree bit for bit, and prints steps per
second.  The compiled kernel is the default at import time; this script
quantifies what the fallback costs.

Usage: python3 benchmarks/bench_glauber.py [--n 512] [--steps 2000000]
"""

import argparse
import time

import numpy as np

from rfim_lab.coupling import CouplingMatrix
from rfim_lab.measures import rademacher
from rfim_lab.model import make_model
from rfim_lab.sampler import _engine, init_state, stream_rng
from rfim_lab.sampler._tables import build_tables

try:
    from rfim_lab.sampler import _kernel
except ImportError:
    _kernel = None


def build_models(n, rng):
    g = rng.standard_normal((n, n)) * (0.4 / np.sqrt(n))
    a = np.triu(g, 1)
    a = a + a.T
    dense = CouplingMatrix.from_dense(a)

    mask = np.triu(rng.random((n, n)) < 0.05, 1)
    ii, jj = np.nonzero(mask)
    sparse = CouplingMatrix.from_upper_triplets(
        n, ii, jj, rng.normal(0.0, 0.4 / np.sqrt(0.05 * n), size=ii.size),
        storage="csr",
    )
    unif = CouplingMatrix.uniform_offdiag(n, 0.5 / (n - 1))

    c = rng.uniform(-0.5, 0.5, n)
    return {
        "dense": make_model(dense, c, rademacher()),
        "csr": make_model(sparse, c, rademacher()),
        "uniform": make_model(unif, c, rademacher()),
    }


def run_backend(impl, tables, state, u, steps):
    sigma, m, aux = state.sigma.copy(), state.m.copy(), state.aux.copy()
    scratch = np.zeros(tables.scratch_len)
    t0 = time.perf_counter()
    flips = impl.advance(tables, sigma, m, aux, u, steps, scratch)
    dt = time.perf_counter() - t0
    return sigma, flips, dt


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=512, help="number of sites")
    parser.add_argument(
        "--steps", type=int, default=2_000_000,
        help="steps for the compiled kernel (the reference loop gets 1/20)",
    )
    args = parser.parse_args()

    rng = stream_rng(20250816)
    models = build_models(args.n, rng)

    print(f"n = {args.n} sites, Rademacher spins")
    print(f"{'storage':<9} {'backend':<8} {'steps':>9} {'seconds':>8} {'Msteps/s':>9}")
    for name, model in models.items():
        tables = build_tables(model)
        state = init_state(model, stream_rng(7, 1))

        # correctness guard: identical trajectories on a shared prefix
        check_steps = 50_000
        u_check = stream_rng(7, 2).random(2 * check_steps)
        sig_py, flips_py, _ = run_backend(_engine, tables, state, u_check, check_steps)
        rates = {}
        if _kernel is not None:
            sig_cy, flips_cy, _ = run_backend(_kernel, tables, state, u_check, check_steps)
            assert flips_py == flips_cy and np.array_equal(sig_py, sig_cy), name

            u = stream_rng(7, 3).random(2 * args.steps)
            _, _, dt = run_backend(_kernel, tables, state, u, args.steps)
            rates["cython"] = (args.steps, dt)

        py_steps = max(args.steps // 20, 10_000)
        u = stream_rng(7, 3).random(2 * py_steps)
        _, _, dt = run_backend(_engine, tables, state, u, py_steps)
        rates["python"] = (py_steps, dt)

        for backend, (steps, dt) in rates.items():
            print(
                f"{name:<9} {backend:<8} {steps:>9} {dt:>8.3f} "
                f"{steps / dt / 1e6:>9.2f}"
            )
        if "cython" in rates:
            cy = rates["cython"][0] / rates["cython"][1]
            py = rates["python"][0] / rates["python"][1]
            print(f"{name:<9} speedup  {cy / py:>27.1f}x")
    if _kernel is None:
        print("compiled kernel not built; only the reference loop was timed")


if __name__ == "__main__":
    main()

"""Glauber dynamics for quadratic-interaction Gibbs models.

Random-scan single-site dynamics: each step picks a site uniformly and
redraws its spin from the base measure tilted by the local field plus
the external field.  The chain keeps the local-field vector m = A sigma
incrementally up to date (for complete-graph couplings, the running spin
sum plays that role) and re-validates it against a full recomputation
every 2**10 sweeps.

Two interchangeable backends implement the inner loop: a compiled Cython
kernel and a pure-Python reference engine.  Selection happens at import;
set RFIM_LAB_PURE_PYTHON=1 to force the fallback.  Both consume the same
uniform stream and produce bit-identical trajectories.

``enumerate_exact`` provides the independent ground truth on small fully
discrete models: state probabilities, log normalizing constant, mean and
covariance, against which the dynamics are validated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, Optional

import numpy as np

from ..errors import DomainError, RfimLabError
from ..model import ModelInstance
from . import _engine
from ._tables import COUPLING_UNIFORM, KernelTables, build_tables

import os

if os.environ.get("RFIM_LAB_PURE_PYTHON"):
    _impl = _engine
else:
    try:
        from . import _kernel as _impl
    except ImportError:
        _impl = _engine


def backend_name() -> str:
    """Which inner-loop implementation is active ('cython' or 'python')."""
    return _impl.NAME


DRIFT_CHECK_SWEEPS = 1 << 10
DRIFT_TOL = 1e-9
_CHUNK_STEPS = 1 << 16


def stream_rng(master_seed: int, *stream) -> np.random.Generator:
    """Counter-based generator for (master seed, stream index...).

    Philox streams keyed this way are independent across indices and
    reproducible regardless of how many other streams were drawn.
    """
    seq = np.random.SeedSequence((int(master_seed),) + tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def default_burn_in_sweeps(n: int, rho: float) -> int:
    """ceil(10 n log(n+1) / (1-rho)) single-site steps, in whole sweeps."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    steps = math.ceil(10.0 * n * math.log(n + 1) / (1.0 - rho))
    return math.ceil(steps / n)


@dataclass
class ChainState:
    """Mutable state of one chain.

    ``m`` is maintained for dense/CSR couplings; for uniform couplings the
    single entry of ``aux`` carries the running spin sum instead and
    ``local_fields()`` materializes m on demand.
    """

    sigma: np.ndarray
    m: np.ndarray
    aux: np.ndarray
    steps: int = 0
    flips: int = 0
    drift_max: float = 0.0
    _tables: Optional[KernelTables] = dc_field(default=None, repr=False)
    _scratch: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def sweeps(self) -> int:
        return self.steps // self.sigma.size

    def local_fields(self) -> np.ndarray:
        if self._tables is not None and self._tables.coupling_mode == COUPLING_UNIFORM:
            v = self._tables.unif_value
            return v * (self.aux[0] - self.sigma)
        return self.m.copy()

    def copy(self) -> "ChainState":
        return ChainState(
            sigma=self.sigma.copy(),
            m=self.m.copy(),
            aux=self.aux.copy(),
            steps=self.steps,
            flips=self.flips,
            drift_max=self.drift_max,
            _tables=self._tables,
            _scratch=self._scratch,
        )


def _initial_sigma(model: ModelInstance, rng: np.random.Generator) -> np.ndarray:
    """Independent draw per site from its c-tilted measure."""
    c = model.field_vector
    sigma = np.empty(model.n, dtype=np.float64)
    for tk, idx in model._groups:
        if tk.measure.kind == "atoms":
            p = tk._tilted_probs(c[idx])
            cum = np.cumsum(p, axis=1)
            u = rng.random(idx.size)
            pick = np.minimum(
                (u[:, None] > cum).sum(axis=1), tk._x.size - 1
            )
            sigma[idx] = tk._x[pick]
        else:
            for j in idx:
                sigma[j] = tk.sample_tilted(float(c[j]), rng)
    return sigma


def init_state(
    model: ModelInstance,
    rng: np.random.Generator,
    sigma0: Optional[np.ndarray] = None,
) -> ChainState:
    tables = build_tables(model)
    if sigma0 is None:
        sigma = _initial_sigma(model, rng)
    else:
        sigma = np.array(sigma0, dtype=np.float64)
        if sigma.shape != (model.n,):
            raise ValueError(f"sigma0 must have shape ({model.n},)")
    if tables.coupling_mode == COUPLING_UNIFORM:
        m = np.zeros(1)
        aux = np.array([sigma.sum()])
    else:
        m = model.coupling.matvec(sigma)
        aux = np.zeros(1)
    return ChainState(
        sigma=sigma,
        m=m,
        aux=aux,
        _tables=tables,
        _scratch=np.zeros(tables.scratch_len),
    )


def _drift_check(state: ChainState) -> None:
    tables = state._tables
    if tables.coupling_mode == COUPLING_UNIFORM:
        true_val = np.array([state.sigma.sum()])
        drift = abs(float(true_val[0] - state.aux[0]))
        state.aux[:] = true_val
    else:
        true_m = tables.coupling_ref.matvec(state.sigma)
        drift = float(np.abs(true_m - state.m).max(initial=0.0))
        state.m[:] = true_m
    state.drift_max = max(state.drift_max, drift)
    if drift > DRIFT_TOL:
        raise RfimLabError(
            f"incremental local fields drifted by {drift:.3e} (> {DRIFT_TOL})"
        )


def advance_steps(state: ChainState, n_steps: int, rng: np.random.Generator) -> None:
    """Run n_steps single-site updates in place, checking drift on the way."""
    tables = state._tables
    n = tables.n
    check_every = DRIFT_CHECK_SWEEPS * n
    next_check = (state.steps // check_every + 1) * check_every
    remaining = int(n_steps)
    while remaining > 0:
        k = min(_CHUNK_STEPS, remaining, next_check - state.steps)
        u = rng.random(2 * k)
        state.flips += _impl.advance(
            tables, state.sigma, state.m, state.aux, u, k, state._scratch
        )
        state.steps += k
        remaining -= k
        if state.steps >= next_check:
            _drift_check(state)
            next_check += check_every


def glauber_step(
    state: ChainState, rng: np.random.Generator
) -> ChainState:
    """One single-site update, returning a new state (input untouched)."""
    out = state.copy()
    advance_steps(out, 1, rng)
    return out


@dataclass
class RunResult:
    state: ChainState
    records: Dict[str, np.ndarray]


def run_chain(
    model: ModelInstance,
    sweeps: int,
    burn_in: Optional[int] = None,
    record: Optional[Dict[str, Callable[[ChainState], object]]] = None,
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
    thinning: int = 1,
    sigma0: Optional[np.ndarray] = None,
) -> RunResult:
    """Burn in, then run ``sweeps`` sweeps recording statistics.

    ``burn_in`` is in sweeps; None uses the default schedule, which needs
    the model's declared rho.  Each statistic in ``record`` is evaluated
    on the state every ``thinning``-th retained sweep.
    """
    if rng is None:
        if seed is None:
            raise ValueError("pass either rng or seed")
        rng = stream_rng(seed)
    if burn_in is None:
        if model.rho is None:
            raise ValueError("default burn-in needs model.rho; pass burn_in")
        burn_in = default_burn_in_sweeps(model.n, model.rho)
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    state = init_state(model, rng, sigma0)
    n = model.n
    advance_steps(state, burn_in * n, rng)
    rec = record or {}
    collected = {name: [] for name in rec}
    for t in range(1, int(sweeps) + 1):
        advance_steps(state, n, rng)
        if t % thinning == 0:
            for name, fn in rec.items():
                collected[name].append(fn(state))
    out = {name: np.asarray(vals) for name, vals in collected.items()}
    return RunResult(state=state, records=out)


def conditional_distribution(model: ModelInstance, sigma, i: int):
    """Support points and conditional probabilities of site i given the rest.

    Only defined for atomic site measures; the conditional tilt is
    (A sigma)_i + c_i.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    tk = model.site_toolkits[i]
    if tk.measure.kind != "atoms":
        raise DomainError("conditional law tabulated only for atomic measures")
    theta = float(model.coupling.matvec(sigma)[i] + model.field_vector[i])
    return tk._x.copy(), tk._tilted_probs(np.float64(theta))


# -- exact enumeration ---------------------------------------------------------

ENUM_LIMIT = 1 << 24
_ENUM_BLOCK = 1 << 18


def _states_block(site_values, lo: int, hi: int) -> np.ndarray:
    idx = np.arange(lo, hi, dtype=np.int64)
    n = len(site_values)
    out = np.empty((idx.size, n))
    rem = idx.copy()
    for i in range(n - 1, -1, -1):
        k = site_values[i].size
        out[:, i] = site_values[i][rem % k]
        rem //= k
    return out


@dataclass
class ExactGibbs:
    """Exact Gibbs law of a small, fully discrete model."""

    site_values: list  # per-site support arrays
    probs: np.ndarray  # state index -> probability, row-major site order
    log_z: float
    mean: np.ndarray
    cov: np.ndarray

    @property
    def n_states(self) -> int:
        return self.probs.size

    def state(self, index: int) -> np.ndarray:
        return _states_block(self.site_values, index, index + 1)[0]

    def states_block(self, lo: int, hi: int) -> np.ndarray:
        return _states_block(self.site_values, lo, hi)


def enumerate_exact(model: ModelInstance) -> ExactGibbs:
    """Exact probabilities, log Z, mean and covariance by enumeration.

    Requires every site measure to be atomic and the joint support to
    hold at most 2**24 states.  States are indexed in row-major order
    (site n-1 varies fastest), matching itertools.product over supports.
    """
    site_values, site_logw = [], []
    for tk in model.site_toolkits:
        if tk.measure.kind != "atoms":
            raise DomainError("exact enumeration needs atomic measures")
        site_values.append(tk._x)
        site_logw.append(tk._logw)
    total = 1
    for v in site_values:
        total *= v.size
        if total > ENUM_LIMIT:
            raise DomainError(f"joint support exceeds {ENUM_LIMIT} states")

    n = model.n
    c = model.field_vector
    coupling = model.coupling
    logits = np.empty(total)
    for lo in range(0, total, _ENUM_BLOCK):
        hi = min(lo + _ENUM_BLOCK, total)
        idx = np.arange(lo, hi, dtype=np.int64)
        block = np.empty((hi - lo, n))
        logw = np.zeros(hi - lo)
        rem = idx.copy()
        for i in range(n - 1, -1, -1):
            k = site_values[i].size
            digit = rem % k
            block[:, i] = site_values[i][digit]
            logw += site_logw[i][digit]
            rem //= k
        if coupling.kind == "dense":
            az = block @ coupling.dense
        elif coupling.kind == "csr":
            az = (coupling.sparse @ block.T).T
        else:
            az = coupling.unif_value * (block.sum(axis=1, keepdims=True) - block)
        energy = 0.5 * np.einsum("si,si->s", block, az) + block @ c
        logits[lo:hi] = energy + logw

    m = logits.max()
    z = np.exp(logits - m)
    log_z = m + math.log(z.sum())
    probs = np.exp(logits - log_z)

    mean = np.zeros(n)
    second = np.zeros((n, n))
    for lo in range(0, total, _ENUM_BLOCK):
        hi = min(lo + _ENUM_BLOCK, total)
        block = _states_block(site_values, lo, hi)
        p = probs[lo:hi]
        mean += p @ block
        second += np.einsum("s,si,sj->ij", p, block, block)
    cov = second - np.outer(mean, mean)
    return ExactGibbs(
        site_values=site_values, probs=probs, log_z=log_z, mean=mean, cov=cov
    )

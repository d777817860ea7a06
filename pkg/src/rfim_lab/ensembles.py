"""Random coupling ensembles, field distributions, and direction recipes.

Each ensemble fixes the scaling that keeps the relevant operator norm
bounded as n grows:

* ``curie_weiss``      A = theta/(n-1) off the diagonal (uniform storage);
* ``erdos_renyi``      A = theta G / (n p) for G ~ ER(n, p);
* ``d_regular``        A = theta G / d for the circulant d-regular graph
  (each vertex joined to d/2 neighbors on either side);
* ``random_regular``   same scaling, pairing-model graph with switch
  repairs (whole-graph rejection is hopeless at the degrees the contrast
  experiments need, and the repaired pairing law is close enough to
  uniform for spectral purposes); circulants are deterministic and never
  expanders, so contrast studies should prefer this kind;
* ``graphon``          G(i,j) ~ Ber(f(U_i, U_j) / n^gamma),
  A = theta G / n^(1-gamma), gamma in [0, 1/2);
* ``hopfield``         A = theta (Z' Z / N) masked by an optional dilution
  graph, diagonal zeroed; Z has i.i.d. Rademacher or Gaussian rows.

Field distributions are small closed families (constant, symmetric
two-point, symmetric uniform, finite atoms), so every expectation the
reports need is computed exactly (atom sums or Gauss-Legendre), never by
Monte Carlo.

Direction recipes produce the (q, lambda) eigenpair data for linear
statistics: the flat direction, a centered random contrast, or the
graphon eigenfunction evaluated at the latent coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .coupling import CouplingMatrix, EigenPair, make_eigenpair
from .errors import ConvergenceError
from .measures import TiltingToolkit

ENSEMBLE_KINDS = (
    "curie_weiss",
    "erdos_renyi",
    "d_regular",
    "random_regular",
    "graphon",
    "hopfield",
)

FIELD_KINDS = ("constant", "two_point_symmetric", "uniform_symmetric", "atoms")

Q_RECIPES = ("flat", "contrast", "graphon_eigenfunction")


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    n: int
    theta: float
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")


@dataclass(frozen=True)
class FieldSpec:
    kind: str
    h: float = 0.0
    points: Optional[tuple] = None
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "atoms":
            if not self.points or not self.weights:
                raise ValueError("atoms field needs points and weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("atom weights must be positive and sum to 1")
        elif self.kind in ("two_point_symmetric", "uniform_symmetric"):
            if self.h <= 0:
                raise ValueError(f"{self.kind} needs h > 0")


def _chunked_bernoulli_rows(n, rng, row_prob):
    """Yield (i, cols-greater-than-i) for the upper triangle, one row at
    a time; row_prob(i, js) returns per-pair probabilities."""
    for i in range(n - 1):
        js = np.arange(i + 1, n)
        p = row_prob(i, js)
        mask = rng.random(js.size) < p
        yield i, js[mask]


def generate(spec: EnsembleSpec, rng: np.random.Generator):
    """Draw a coupling matrix; returns (CouplingMatrix, extras dict).

    ``extras`` carries ensemble-specific byproducts: latent coordinates
    and eigenfunction data for graphons, the realized degree sequence for
    random graphs.
    """
    n, theta, params = spec.n, spec.theta, spec.params
    if spec.kind == "curie_weiss":
        return CouplingMatrix.uniform_offdiag(n, theta / (n - 1)), {}

    storage = params.get("storage")

    if spec.kind == "erdos_renyi":
        p = float(params["p"])
        if not 0.0 < p <= 1.0:
            raise ValueError("erdos_renyi needs p in (0, 1]")
        rows, cols = [], []
        for i, js in _chunked_bernoulli_rows(n, rng, lambda i, js: p):
            rows.append(np.full(js.size, i, dtype=np.int64))
            cols.append(js)
        ii = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        jj = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
        vals = np.full(ii.size, theta / (n * p))
        mat = CouplingMatrix.from_upper_triplets(n, ii, jj, vals, storage=storage)
        deg = np.bincount(ii, minlength=n) + np.bincount(jj, minlength=n)
        return mat, {"degrees": deg}

    if spec.kind == "d_regular":
        d = int(params["d"])
        if d % 2 or not 0 < d < n:
            raise ValueError("d_regular needs even d with 0 < d < n")
        base = np.arange(n, dtype=np.int64)
        ii_list, jj_list = [], []
        for off in range(1, d // 2 + 1):
            j = (base + off) % n
            lo = np.minimum(base, j)
            hi = np.maximum(base, j)
            ii_list.append(lo)
            jj_list.append(hi)
        ii = np.concatenate(ii_list)
        jj = np.concatenate(jj_list)
        key = ii * n + jj
        _, keep = np.unique(key, return_index=True)
        ii, jj = ii[keep], jj[keep]
        vals = np.full(ii.size, theta / d)
        mat = CouplingMatrix.from_upper_triplets(n, ii, jj, vals, storage=storage)
        return mat, {"degrees": np.full(n, d)}

    if spec.kind == "random_regular":
        d = int(params["d"])
        if d < 1 or n * d % 2 or d >= n:
            raise ValueError("random_regular needs 1 <= d < n with n*d even")
        pairs = _pairing_with_repairs(n, d, rng)
        ii = np.minimum(pairs[:, 0], pairs[:, 1])
        jj = np.maximum(pairs[:, 0], pairs[:, 1])
        vals = np.full(ii.size, theta / d)
        mat = CouplingMatrix.from_upper_triplets(n, ii, jj, vals, storage=storage)
        return mat, {"degrees": np.full(n, d)}

    if spec.kind == "graphon":
        gamma = float(params.get("gamma", 0.0))
        if not 0.0 <= gamma < 0.5:
            raise ValueError("graphon needs gamma in [0, 0.5)")
        fspec = params.get("f", {"constant": 1.0})
        u = rng.random(n)
        fvals, lam_f, q_of_u = _graphon_eigen(fspec, u)
        scale = float(n) ** gamma
        rows, cols = [], []
        for i, js in _chunked_bernoulli_rows(
            n, rng, lambda i, js: np.minimum(fvals(i, js) / scale, 1.0)
        ):
            rows.append(np.full(js.size, i, dtype=np.int64))
            cols.append(js)
        ii = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        jj = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
        vals = np.full(ii.size, theta / float(n) ** (1.0 - gamma))
        mat = CouplingMatrix.from_upper_triplets(n, ii, jj, vals, storage=storage)
        deg = np.bincount(ii, minlength=n) + np.bincount(jj, minlength=n)
        return mat, {
            "u": u,
            "lambda_f": lam_f,
            "eigenfunction_values": q_of_u,
            "degrees": deg,
        }

    if spec.kind == "hopfield":
        big_n = int(params["N"])
        if big_n < 1:
            raise ValueError("hopfield needs N >= 1")
        z_dist = params.get("z_dist", "rademacher")
        if z_dist == "rademacher":
            z = rng.integers(0, 2, size=(big_n, n)).astype(np.float64) * 2.0 - 1.0
        elif z_dist == "gaussian":
            z = rng.standard_normal((big_n, n))
        else:
            raise ValueError(f"unknown z_dist {z_dist!r}")
        a = theta * (z.T @ z) / big_n
        np.fill_diagonal(a, 0.0)
        dilution = params.get("dilution")
        if dilution is not None:
            p = float(dilution)
            mask = np.zeros((n, n), dtype=bool)
            for i, js in _chunked_bernoulli_rows(n, rng, lambda i, js: p):
                mask[i, js] = True
            mask |= mask.T
            a *= mask
            density = mask.sum() / (n * n)
            if density < 0.10:
                iu, ju = np.nonzero(np.triu(a, k=1))
                return (
                    CouplingMatrix.from_upper_triplets(n, iu, ju, a[iu, ju]),
                    {},
                )
        return CouplingMatrix.from_dense(a), {}

    raise ValueError(f"unknown ensemble kind {spec.kind!r}")


def _pairing_with_repairs(n, d, rng, max_rounds: int = 200):
    stubs = np.repeat(np.arange(n, dtype=np.int64), d)
    pairs = stubs[rng.permutation(stubs.size)].reshape(-1, 2)
    for _ in range(max_rounds):
        a = np.minimum(pairs[:, 0], pairs[:, 1])
        b = np.maximum(pairs[:, 0], pairs[:, 1])
        key = a * n + b
        order = np.argsort(key, kind="stable")
        dup = np.zeros(pairs.shape[0], dtype=bool)
        dup[order[1:]] = key[order[1:]] == key[order[:-1]]
        bad = np.nonzero((a == b) | dup)[0]
        if bad.size == 0:
            return pairs
        partners = rng.integers(0, pairs.shape[0], size=bad.size)
        # Swap the second endpoints of each bad pair with a random pair.
        tmp = pairs[bad, 1].copy()
        pairs[bad, 1] = pairs[partners, 1]
        pairs[partners, 1] = tmp
    raise ConvergenceError(f"could not repair pairing into a simple {d}-regular graph")


def _graphon_eigen(fspec: dict, u: np.ndarray):
    """Edge-probability function, principal eigenvalue, and the
    eigenfunction evaluated at the latent coordinates."""
    if "constant" in fspec:
        a = float(fspec["constant"])
        if not 0.0 < a:
            raise ValueError("constant graphon value must be positive")
        return (lambda i, js: np.full(js.size, a)), a, np.ones(u.size)
    if "blocks" in fspec:
        b = np.asarray(fspec["blocks"], dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("blocks must be a square matrix")
        if not np.allclose(b, b.T):
            raise ValueError("block matrix must be symmetric")
        k = b.shape[0]
        weights = np.asarray(fspec.get("block_weights", np.full(k, 1.0 / k)))
        if weights.shape != (k,) or np.any(weights <= 0):
            raise ValueError("block weights must be positive")
        weights = weights / weights.sum()
        edges = np.concatenate(([0.0], np.cumsum(weights)))
        edges[-1] = 1.0
        assign = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, k - 1)
        # Eigenproblem of the step kernel: diag(sqrt(w)) B diag(sqrt(w))
        # is the symmetrized form; its top-|eigenvalue| pair maps back to
        # a step eigenfunction normalized in L2(weights).
        sq = np.sqrt(weights)
        sym = sq[:, None] * b * sq[None, :]
        evals, evecs = np.linalg.eigh(sym)
        top = int(np.argmax(np.abs(evals)))
        lam_f = float(evals[top])
        q_step = evecs[:, top] / sq
        fvals = lambda i, js: b[assign[i], assign[js]]
        return fvals, lam_f, q_step[assign]
    raise ValueError("graphon f spec needs 'constant' or 'blocks'")


# -- external fields -----------------------------------------------------------


def draw_field(spec: FieldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "constant":
        return np.full(n, spec.h)
    if spec.kind == "two_point_symmetric":
        return np.where(rng.random(n) < 0.5, spec.h, -spec.h)
    if spec.kind == "uniform_symmetric":
        return spec.h * (2.0 * rng.random(n) - 1.0)
    pts = np.asarray(spec.points, dtype=np.float64)
    wts = np.asarray(spec.weights, dtype=np.float64)
    cum = np.cumsum(wts)
    cum[-1] = max(cum[-1], 1.0)
    idx = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), pts.size - 1)
    return pts[idx]


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def field_expectation(spec: FieldSpec, fn) -> float:
    """E[fn(c_1)] under the field law, computed exactly.

    Atom families are finite sums; the symmetric uniform family uses
    64-node Gauss-Legendre, spectrally exact for the smooth integrands
    (tilted means and variances) this is used on.
    """
    if spec.kind == "constant":
        return float(np.asarray(fn(np.array([spec.h])))[0])
    if spec.kind == "two_point_symmetric":
        vals = np.asarray(fn(np.array([spec.h, -spec.h])))
        return float(0.5 * (vals[0] + vals[1]))
    if spec.kind == "uniform_symmetric":
        x = spec.h * _GL_NODES
        vals = np.asarray(fn(x))
        return float(0.5 * (_GL_WEIGHTS @ vals))
    pts = np.asarray(spec.points, dtype=np.float64)
    wts = np.asarray(spec.weights, dtype=np.float64)
    return float(wts @ np.asarray(fn(pts)))


def field_mean_is_zero(spec: FieldSpec, toolkit: TiltingToolkit, tol=1e-12) -> bool:
    """Whether E[tilted_mean(c_1)] vanishes (required for the annealed
    uncentered limit)."""
    return abs(field_expectation(spec, toolkit.tilted_mean)) <= tol


# -- direction recipes ----------------------------------------------------------


def default_lambda(spec: EnsembleSpec, recipe_kind: str, extras: dict) -> float:
    """Nominal top eigenvalue paired with a recipe on this ensemble."""
    if recipe_kind == "contrast":
        return 0.0
    if recipe_kind == "graphon_eigenfunction" or spec.kind == "graphon":
        return spec.theta * float(extras.get("lambda_f", 1.0))
    if spec.kind == "hopfield":
        return 0.0
    return spec.theta


def eigen_recipe(
    kind: str,
    coupling: CouplingMatrix,
    lam: float,
    rng: Optional[np.random.Generator] = None,
    extras: Optional[dict] = None,
) -> EigenPair:
    """Build the (q, lambda) pair for a linear statistic.

    * ``flat``: q = 1/sqrt(n).
    * ``contrast``: random unit vector orthogonal to the flat direction.
    * ``graphon_eigenfunction``: the generator's eigenfunction values at
      the latent coordinates, normalized.
    """
    n = coupling.n
    if kind == "flat":
        q = np.full(n, 1.0 / math.sqrt(n))
    elif kind == "contrast":
        if rng is None:
            raise ValueError("contrast recipe needs an rng")
        g = rng.standard_normal(n)
        g -= g.mean()
        if np.linalg.norm(g) < 1e-6:
            raise ValueError("contrast draw degenerate after centering")
        q = g
    elif kind == "graphon_eigenfunction":
        vals = (extras or {}).get("eigenfunction_values")
        if vals is None:
            raise ValueError("graphon_eigenfunction recipe needs generator extras")
        q = np.asarray(vals, dtype=np.float64)
    else:
        raise ValueError(f"unknown q recipe {kind!r}")
    return make_eigenpair(coupling, q, lam)

"""Coupling matrices: storage, norms, regime certificates, eigenpairs.

Matrices are symmetric with zero diagonal.  Three storage kinds cover the
ensembles used in practice:

* ``dense``   -- a full float64 array;
* ``csr``     -- compressed sparse rows, used when density < 10%;
* ``uniform`` -- every off-diagonal entry equals one scalar (complete
  graph couplings), stored as that scalar.  This keeps O(1)-per-step
  Glauber updates and O(n) matvecs available at sizes where a dense
  array would not fit.

Norm estimators:

* ``inf_norm``        -- max absolute row sum (exact);
* ``alpha_n``         -- max row sum of squares (exact);
* ``two_norm``        -- power iteration on A @ A, so a top eigenvalue of
  either sign is found; Rayleigh-quotient stopping, random restarts.
  The returned value never exceeds the true spectral norm.
* ``four_norm_lower`` -- lower bound on the l4->l4 operator norm by a
  monotone ascent on the unit l4 sphere, best over random restarts plus
  the top-eigenvector start, floored at the two-norm estimate (valid
  since the 2 -> 4 -> inf operator norms are ordered for symmetric
  matrices).

``four_norm_interval`` reports the certified interval
[max(two_norm, ascent), inf_norm] used by the moderate regime check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import CertificateError, ConvergenceError

DENSITY_CUTOFF = 0.10
FULL_CHECK_LIMIT = 4096
_RESTART_SEED = 0x5EED


@dataclass
class CouplingMatrix:
    kind: str
    n: int
    dense: Optional[np.ndarray] = None
    sparse: Optional[sp.csr_array] = None
    unif_value: float = 0.0

    # -- constructors ---------------------------------------------------------

    @classmethod
    def from_dense(cls, a, symmetrize: bool = False) -> "CouplingMatrix":
        a = np.array(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        n = a.shape[0]
        if symmetrize:
            a = 0.5 * (a + a.T)
        np.fill_diagonal(a, 0.0)
        if n <= FULL_CHECK_LIMIT:
            if not np.array_equal(a, a.T):
                raise ValueError("matrix is not symmetric (pass symmetrize=True)")
        else:
            rng = np.random.default_rng(_RESTART_SEED)
            i = rng.integers(0, n, size=1000)
            j = rng.integers(0, n, size=1000)
            if not np.array_equal(a[i, j], a[j, i]):
                raise ValueError("matrix is not symmetric (sampled check)")
        return cls(kind="dense", n=n, dense=a)

    @classmethod
    def from_upper_triplets(
        cls, n: int, rows, cols, vals, storage: Optional[str] = None
    ) -> "CouplingMatrix":
        """Build from strictly-upper-triangle triplets; the lower triangle
        is mirrored.  Storage is chosen by the 10% density rule unless
        forced."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("triplet arrays must have matching lengths")
        if rows.size and not np.all((0 <= rows) & (rows < cols) & (cols < n)):
            raise ValueError("triplets must satisfy 0 <= i < j < n")
        key = rows * n + cols
        if np.unique(key).size != key.size:
            raise ValueError("duplicate (i, j) pairs in triplets")
        density = 2.0 * vals.size / max(n * n, 1)
        if storage is None:
            storage = "csr" if density < DENSITY_CUTOFF else "dense"
        ii = np.concatenate([rows, cols])
        jj = np.concatenate([cols, rows])
        vv = np.concatenate([vals, vals])
        if storage == "dense":
            a = np.zeros((n, n))
            a[ii, jj] = vv
            return cls(kind="dense", n=n, dense=a)
        mat = sp.csr_array(
            sp.coo_array((vv, (ii, jj)), shape=(n, n), dtype=np.float64)
        )
        mat.sort_indices()
        return cls(kind="csr", n=n, sparse=mat)

    @classmethod
    def uniform_offdiag(cls, n: int, value: float) -> "CouplingMatrix":
        """All off-diagonal entries equal to ``value``."""
        if n < 1:
            raise ValueError("n must be positive")
        return cls(kind="uniform", n=n, unif_value=float(value))

    # -- basic linear algebra -------------------------------------------------

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "dense":
            return self.dense @ x
        if self.kind == "csr":
            return self.sparse @ x
        return self.unif_value * (x.sum() - x)

    def to_dense(self) -> np.ndarray:
        if self.kind == "dense":
            return self.dense.copy()
        if self.kind == "csr":
            return self.sparse.toarray()
        a = np.full((self.n, self.n), self.unif_value)
        np.fill_diagonal(a, 0.0)
        return a

    def nnz_offdiag(self) -> int:
        if self.kind == "dense":
            return int(np.count_nonzero(self.dense))
        if self.kind == "csr":
            return int(self.sparse.nnz)
        return self.n * (self.n - 1) if self.unif_value != 0.0 else 0

    # -- exact row norms ------------------------------------------------------

    def _row_reduce_max(self, transform) -> float:
        mat = self.sparse.copy()
        mat.data = transform(mat.data)
        rowsum = np.asarray(mat.sum(axis=1)).ravel()
        return float(rowsum.max(initial=0.0))

    def inf_norm(self) -> float:
        """Max absolute row sum."""
        if self.kind == "dense":
            return float(np.abs(self.dense).sum(axis=1).max(initial=0.0))
        if self.kind == "csr":
            return self._row_reduce_max(np.abs)
        return abs(self.unif_value) * (self.n - 1)

    def alpha_n(self) -> float:
        """Max row sum of squared entries (written alpha_n in outputs)."""
        if self.kind == "dense":
            return float((self.dense**2).sum(axis=1).max(initial=0.0))
        if self.kind == "csr":
            return self._row_reduce_max(np.square)
        return self.unif_value**2 * (self.n - 1)


# -- iterative norm estimates -------------------------------------------------


def two_norm(
    coupling: CouplingMatrix,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    restarts: int = 3,
) -> float:
    """Spectral norm estimate by power iteration on A @ A.

    Squaring makes the iteration indifferent to the sign of the extreme
    eigenvalue.  The estimate ||A x|| / ||x|| is a true lower bound on the
    spectral norm at every step; stopping is on its relative change.
    """
    n = coupling.n
    rng = np.random.default_rng(_RESTART_SEED)
    best = 0.0
    converged = False
    for _ in range(restarts):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        prev = -1.0
        for _ in range(max_iter):
            ax = coupling.matvec(x)
            est = float(np.linalg.norm(ax))
            if est == 0.0:
                converged = True
                break
            if abs(est - prev) <= tol * est:
                best = max(best, est)
                converged = True
                break
            prev = est
            y = coupling.matvec(ax)
            ny = np.linalg.norm(y)
            if ny == 0.0:
                best = max(best, est)
                converged = True
                break
            x = y / ny
        else:
            best = max(best, est)
    if not converged:
        raise ConvergenceError(
            f"power iteration did not reach relative tol {tol}", best=best
        )
    return best


def _l4_norm(v) -> float:
    return float(np.sum(v**4) ** 0.25)


def four_norm_lower(
    coupling: CouplingMatrix,
    restarts: int = 8,
    max_iter: int = 2000,
    two_norm_est: Optional[float] = None,
) -> float:
    """Lower bound on the l4 -> l4 operator norm of A.

    Ascent on the unit l4 sphere: from x, move to the l4-normalized
    signed cube root of A (A x)^3, which cannot decrease ||A x||_4.  Best
    value over ``restarts`` random starts plus the top-eigenvector start;
    a non-improving step ends a restart.  The result is floored at the
    two-norm estimate, itself a valid lower bound by norm ordering.
    """
    n = coupling.n
    if two_norm_est is None:
        two_norm_est = two_norm(coupling)
    rng = np.random.default_rng(_RESTART_SEED + 1)
    # Recover a top eigenvector of A @ A for the warm start.
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    for _ in range(200):
        y = coupling.matvec(coupling.matvec(x))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        x = y / ny
    starts = [x] + [rng.standard_normal(n) for _ in range(restarts)]
    best = two_norm_est
    for s in starts:
        nv = _l4_norm(s)
        if nv == 0.0:
            continue
        v = s / nv
        val = _l4_norm(coupling.matvec(v))
        for _ in range(max_iter):
            g = coupling.matvec(coupling.matvec(v) ** 3)
            if not np.any(g):
                break
            v_new = np.sign(g) * np.abs(g) ** (1.0 / 3.0)
            v_new /= _l4_norm(v_new)
            val_new = _l4_norm(coupling.matvec(v_new))
            if val_new <= val * (1.0 + 1e-12):
                break
            v, val = v_new, val_new
        best = max(best, val)
    return best


def four_norm_interval(
    coupling: CouplingMatrix, two_norm_est: Optional[float] = None
) -> tuple:
    """Certified interval [lower, upper] containing the l4 operator norm."""
    if two_norm_est is None:
        two_norm_est = two_norm(coupling)
    lower = four_norm_lower(coupling, two_norm_est=two_norm_est)
    return (lower, coupling.inf_norm())


@dataclass(frozen=True)
class NormReport:
    """All norm estimates for one matrix, plus regime checks."""

    two_norm: float
    four_lower: float
    inf_norm: float
    alpha_n: float

    @classmethod
    def compute(cls, coupling: CouplingMatrix) -> "NormReport":
        t2 = two_norm(coupling)
        return cls(
            two_norm=t2,
            four_lower=four_norm_lower(coupling, two_norm_est=t2),
            inf_norm=coupling.inf_norm(),
            alpha_n=coupling.alpha_n(),
        )

    def regime_status(self, rho: float) -> dict:
        """Regime certificates against a declared bound rho < 1.

        The weak check uses the two-norm estimate, the strong check the
        exact infinity norm.  The moderate (l4) check is 'certified' when
        the interval's upper end passes, 'heuristic' when only the lower
        end does, 'failed' otherwise.
        """
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.inf_norm <= rho:
            moderate = "certified"
        elif self.four_lower <= rho:
            moderate = "heuristic"
        else:
            moderate = "failed"
        return {
            "rho": rho,
            "weak": bool(self.two_norm <= rho),
            "moderate": moderate,
            "strong": bool(self.inf_norm <= rho),
        }


def require_weak_regime(coupling: CouplingMatrix, rho: float) -> NormReport:
    """Norm report, raising CertificateError unless two_norm <= rho."""
    report = NormReport.compute(coupling)
    if report.two_norm > rho:
        raise CertificateError(
            f"two-norm estimate {report.two_norm:.6g} exceeds declared rho={rho}"
        )
    return report


# -- eigenpairs ---------------------------------------------------------------


@dataclass(frozen=True)
class EigenPair:
    """A unit direction q with nominal eigenvalue lam and exact residual."""

    q: np.ndarray
    lam: float
    eps: np.ndarray

    @property
    def eps_norm(self) -> float:
        return float(np.linalg.norm(self.eps))

    @property
    def q_inf(self) -> float:
        return float(np.abs(self.q).max(initial=0.0))


def make_eigenpair(coupling: CouplingMatrix, q, lam: float) -> EigenPair:
    """Normalize q to unit l2 and attach the residual A q - lam q."""
    q = np.asarray(q, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0.0 or not np.isfinite(nq):
        raise ValueError("q must be a nonzero finite vector")
    q = q / nq
    eps = coupling.matvec(q) - lam * q
    return EigenPair(q=q, lam=float(lam), eps=eps)


# -- import/export ------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_coupling(
    coupling: CouplingMatrix,
    path,
    kind: str = "custom",
    params: Optional[dict] = None,
    seed=None,
) -> None:
    """Write strictly-upper triplets as text plus a JSON sidecar.

    Values are formatted with %.17g so the round trip is bit exact.
    """
    path = Path(path)
    lines = []
    if coupling.kind == "dense":
        ii, jj = np.nonzero(np.triu(coupling.dense, k=1))
        vals = coupling.dense[ii, jj]
    elif coupling.kind == "csr":
        coo = coupling.sparse.tocoo()
        keep = coo.row < coo.col
        ii, jj, vals = coo.row[keep], coo.col[keep], coo.data[keep]
        order = np.lexsort((jj, ii))
        ii, jj, vals = ii[order], jj[order], vals[order]
    else:
        n = coupling.n
        ii, jj = np.triu_indices(n, k=1)
        vals = np.full(ii.size, coupling.unif_value)
    for i, j, v in zip(ii, jj, vals):
        lines.append("%d %d %.17g" % (i, j, v))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    meta = {
        "n": coupling.n,
        "kind": kind,
        "params": params or {},
        "seed": seed,
        "storage": coupling.kind,
    }
    _sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_coupling(path) -> tuple:
    """Read a triplet file written by save_coupling; returns (matrix, meta)."""
    path = Path(path)
    meta = json.loads(_sidecar_path(path).read_text())
    rows, cols, vals = [], [], []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        i, j, v = line.split()
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    storage = meta.get("storage")
    if storage == "uniform" and vals:
        first = vals[0]
        if all(v == first for v in vals):
            return CouplingMatrix.uniform_offdiag(meta["n"], first), meta
        storage = None
    if storage == "uniform":
        storage = None
    mat = CouplingMatrix.from_upper_triplets(
        meta["n"], rows, cols, vals, storage=storage
    )
    return mat, meta

"""Flat-array marshalling of a ModelInstance for the update kernels.

Both the compiled kernel and the pure-Python engine consume the same
table layout, so a chain advanced by either backend from the same seed
visits bit-identical states.  Measures are deduplicated: each distinct
toolkit becomes one row of the atom (or grid) tables and sites index
into those rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COUPLING_DENSE = 0
COUPLING_CSR = 1
COUPLING_UNIFORM = 2

MEASURE_ATOMS = 0
MEASURE_GRID = 1

_EMPTY_F2 = np.zeros((1, 1), dtype=np.float64)
_EMPTY_F1 = np.zeros(1, dtype=np.float64)
_EMPTY_I1 = np.zeros(1, dtype=np.int64)


@dataclass
class KernelTables:
    n: int
    coupling_mode: int
    dense: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    unif_value: float
    c: np.ndarray
    site_measure: np.ndarray  # int64 site -> measure row
    meas_kind: np.ndarray  # int64 per measure row
    atom_count: np.ndarray
    atom_x: np.ndarray  # (rows, k_max)
    atom_lw: np.ndarray
    grid_x: np.ndarray  # (rows, grid_len); zero-size rows for atom measures
    grid_logf: np.ndarray
    scratch_len: int
    coupling_ref: object  # the CouplingMatrix, for drift recomputation


def build_tables(model) -> KernelTables:
    coupling = model.coupling
    n = model.n
    dense = _EMPTY_F2
    indptr, indices, data = _EMPTY_I1, _EMPTY_I1, _EMPTY_F1
    unif_value = 0.0
    if coupling.kind == "dense":
        mode = COUPLING_DENSE
        dense = np.ascontiguousarray(coupling.dense, dtype=np.float64)
    elif coupling.kind == "csr":
        mode = COUPLING_CSR
        indptr = np.ascontiguousarray(coupling.sparse.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(coupling.sparse.indices, dtype=np.int64)
        data = np.ascontiguousarray(coupling.sparse.data, dtype=np.float64)
    else:
        mode = COUPLING_UNIFORM
        unif_value = float(coupling.unif_value)

    toolkits = []
    site_measure = np.empty(n, dtype=np.int64)
    for tk, idx in model._groups:
        site_measure[idx] = len(toolkits)
        toolkits.append(tk)

    kinds = np.zeros(len(toolkits), dtype=np.int64)
    counts = np.zeros(len(toolkits), dtype=np.int64)
    k_max, g_max = 1, 1
    for r, tk in enumerate(toolkits):
        if tk.measure.kind == "atoms":
            kinds[r] = MEASURE_ATOMS
            counts[r] = tk._x.size
            k_max = max(k_max, tk._x.size)
        else:
            kinds[r] = MEASURE_GRID
            counts[r] = tk._sample_x.size
            g_max = max(g_max, tk._sample_x.size)

    atom_x = np.zeros((len(toolkits), k_max), dtype=np.float64)
    atom_lw = np.full((len(toolkits), k_max), -np.inf, dtype=np.float64)
    grid_x = np.zeros((len(toolkits), g_max), dtype=np.float64)
    grid_logf = np.full((len(toolkits), g_max), -np.inf, dtype=np.float64)
    for r, tk in enumerate(toolkits):
        if kinds[r] == MEASURE_ATOMS:
            atom_x[r, : counts[r]] = tk._x
            atom_lw[r, : counts[r]] = tk._logw
        else:
            grid_x[r, : counts[r]] = tk._sample_x
            grid_logf[r, : counts[r]] = tk._sample_logf

    return KernelTables(
        n=n,
        coupling_mode=mode,
        dense=dense,
        indptr=indptr,
        indices=indices,
        data=data,
        unif_value=unif_value,
        c=np.ascontiguousarray(model.field_vector, dtype=np.float64),
        site_measure=site_measure,
        meas_kind=kinds,
        atom_count=counts,
        atom_x=atom_x,
        atom_lw=atom_lw,
        grid_x=grid_x,
        grid_logf=grid_logf,
        scratch_len=max(k_max, g_max),
        coupling_ref=coupling,
    )

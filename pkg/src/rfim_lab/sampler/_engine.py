"""Pure-Python single-site update loop.

Reference implementation of the Glauber step.  The compiled kernel in
_kernel.pyx follows this code line for line; both consume exactly two
uniforms per step (site pick, then inverse-CDF draw) and perform the
same float64 operations in the same order, so trajectories agree bit for
bit across backends.  Scalar math goes through libm (math.exp) for the
same reason.
"""

from __future__ import annotations

import math

from ._tables import (
    COUPLING_CSR,
    COUPLING_DENSE,
    COUPLING_UNIFORM,
    MEASURE_ATOMS,
    KernelTables,
)

NAME = "python"


def advance(tables: KernelTables, sigma, m, aux, u, n_steps: int, scratch) -> int:
    n = tables.n
    mode = tables.coupling_mode
    c = tables.c
    site_measure = tables.site_measure
    kinds = tables.meas_kind
    counts = tables.atom_count
    ax = tables.atom_x
    alw = tables.atom_lw
    gx = tables.grid_x
    glogf = tables.grid_logf
    dense = tables.dense
    indptr = tables.indptr
    indices = tables.indices
    data = tables.data
    v = tables.unif_value

    flips = 0
    for t in range(n_steps):
        i = int(u[2 * t] * n)
        if i >= n:
            i = n - 1
        if mode == COUPLING_UNIFORM:
            theta = v * (aux[0] - sigma[i]) + c[i]
        else:
            theta = m[i] + c[i]
        uv = u[2 * t + 1]
        mi = site_measure[i]

        if kinds[mi] == MEASURE_ATOMS:
            k = counts[mi]
            if k == 2:
                d = (alw[mi, 1] + theta * ax[mi, 1]) - (alw[mi, 0] + theta * ax[mi, 0])
                if d >= 0.0:
                    p1 = 1.0 / (1.0 + math.exp(-d))
                else:
                    e = math.exp(d)
                    p1 = e / (1.0 + e)
                new = ax[mi, 1] if uv < p1 else ax[mi, 0]
            else:
                mx = -math.inf
                for a in range(k):
                    g = alw[mi, a] + theta * ax[mi, a]
                    scratch[a] = g
                    if g > mx:
                        mx = g
                z = 0.0
                for a in range(k):
                    e = math.exp(scratch[a] - mx)
                    scratch[a] = e
                    z += e
                target = uv * z
                pick = k - 1
                cum = 0.0
                for a in range(k):
                    cum += scratch[a]
                    if target <= cum:
                        pick = a
                        break
                new = ax[mi, pick]
        else:
            g_len = counts[mi]
            h = gx[mi, 1] - gx[mi, 0]
            mx = -math.inf
            for a in range(g_len):
                g = glogf[mi, a] + theta * gx[mi, a]
                scratch[a] = g
                if g > mx:
                    mx = g
            total = 0.0
            w_prev = math.exp(scratch[0] - mx)
            for a in range(1, g_len):
                w = math.exp(scratch[a] - mx)
                seg = 0.5 * (w_prev + w) * h
                scratch[a - 1] = seg
                total += seg
                w_prev = w
            target = uv * total
            pick = g_len - 2
            cum = 0.0
            for a in range(g_len - 1):
                cum_next = cum + scratch[a]
                if target <= cum_next:
                    pick = a
                    break
                cum = cum_next
            seg = scratch[pick]
            frac = (target - cum) / seg if seg > 0.0 else 0.5
            new = gx[mi, pick] + frac * h

        delta = new - sigma[i]
        if delta != 0.0:
            flips += 1
            sigma[i] = new
            if mode == COUPLING_DENSE:
                m += dense[i] * delta
            elif mode == COUPLING_CSR:
                lo, hi = indptr[i], indptr[i + 1]
                m[indices[lo:hi]] += data[lo:hi] * delta
            else:
                aux[0] += delta
    return flips

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled single-site update loop.

Mirrors sampler._engine.advance line for line; see that module for the
step contract.  Built with -ffp-contract=off so scalar multiply-add here
rounds exactly like the NumPy vector ops in the reference engine.
"""

from libc.math cimport exp, INFINITY

NAME = "cython"


def advance(tables, double[::1] sigma, double[::1] m, double[::1] aux,
            double[::1] u, Py_ssize_t n_steps, double[::1] scratch):
    cdef Py_ssize_t n = tables.n
    cdef int mode = tables.coupling_mode
    cdef double[::1] c = tables.c
    cdef long[::1] site_measure = tables.site_measure
    cdef long[::1] kinds = tables.meas_kind
    cdef long[::1] counts = tables.atom_count
    cdef double[:, ::1] ax = tables.atom_x
    cdef double[:, ::1] alw = tables.atom_lw
    cdef double[:, ::1] gx = tables.grid_x
    cdef double[:, ::1] glogf = tables.grid_logf
    cdef double[:, ::1] dense
    cdef long[::1] indptr, indices
    cdef double[::1] data
    cdef double v = tables.unif_value

    # Unused modes carry 1-element dummies from the table builder, so the
    # views can be bound unconditionally.
    dense = tables.dense
    indptr = tables.indptr
    indices = tables.indices
    data = tables.data

    cdef Py_ssize_t t, i, a, k, g_len, pick, lo, hi, mi
    cdef long flips = 0
    cdef double theta, uv, d, p1, e, new, mx, g, z, target, cum, cum_next
    cdef double h, total, w_prev, w, seg, frac, delta

    with nogil:
        for t in range(n_steps):
            i = <Py_ssize_t>(u[2 * t] * n)
            if i >= n:
                i = n - 1
            if mode == 2:
                theta = v * (aux[0] - sigma[i]) + c[i]
            else:
                theta = m[i] + c[i]
            uv = u[2 * t + 1]
            mi = site_measure[i]

            if kinds[mi] == 0:
                k = counts[mi]
                if k == 2:
                    d = (alw[mi, 1] + theta * ax[mi, 1]) - (alw[mi, 0] + theta * ax[mi, 0])
                    if d >= 0.0:
                        p1 = 1.0 / (1.0 + exp(-d))
                    else:
                        e = exp(d)
                        p1 = e / (1.0 + e)
                    new = ax[mi, 1] if uv < p1 else ax[mi, 0]
                else:
                    mx = -INFINITY
                    for a in range(k):
                        g = alw[mi, a] + theta * ax[mi, a]
                        scratch[a] = g
                        if g > mx:
                            mx = g
                    z = 0.0
                    for a in range(k):
                        e = exp(scratch[a] - mx)
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
                mx = -INFINITY
                for a in range(g_len):
                    g = glogf[mi, a] + theta * gx[mi, a]
                    scratch[a] = g
                    if g > mx:
                        mx = g
                total = 0.0
                w_prev = exp(scratch[0] - mx)
                for a in range(1, g_len):
                    w = exp(scratch[a] - mx)
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
                if mode == 0:
                    for a in range(n):
                        m[a] += dense[i, a] * delta
                elif mode == 1:
                    lo = indptr[i]
                    hi = indptr[i + 1]
                    for a in range(lo, hi):
                        m[indices[a]] += data[a] * delta
                else:
                    aux[0] += delta
    return flips

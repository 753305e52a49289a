"""Compiled inner loops of the fixed-point solver.

Arrays are flat views of the lattice and stencil offsets are flat index
shifts. Node sets are stored as runs of consecutive flat indices so the inner
loops stream through contiguous memory.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_CHUNK = 256
# Reassociation and contraction only; infinities are used as sentinels.
_FM = {"nsz", "arcp", "contract", "reassoc"}


def runs(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split sorted flat indices into (flat start, position start, length) runs."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    brk = np.flatnonzero(np.diff(nodes) != 1) + 1
    pos = np.concatenate([[0], brk]).astype(np.int64)
    lens = np.diff(np.concatenate([pos, [nodes.size]])).astype(np.int64)
    return nodes[pos], pos, lens


@njit(cache=True)
def mark_nodes(interior, coff, n_total):
    mask = np.zeros(n_total, dtype=np.bool_)
    C, K = coff.shape
    for k in range(interior.size):
        n = interior[k]
        for c in range(C):
            for j in range(K):
                mask[n + coff[c, j]] = True
    return mask


@njit(cache=True, fastmath=_FM)
def convolve(u, rstart, rlen, goff, gw, gptr, g):
    """g[s, n] = sum_j gw[j] * u[n + goff[j]] over the stencil of shape group s."""
    G = gptr.size - 1
    for s in range(G):
        gs = g[s]
        a = gptr[s]
        b = gptr[s + 1]
        for r in range(rstart.size):
            n0 = rstart[r]
            m = rlen[r]
            for k in range(m):
                gs[n0 + k] = 0.0
            for j in range(a, b):
                w = gw[j]
                o = n0 + goff[j]
                for k in range(m):
                    gs[n0 + k] += w * u[o + k]


@njit(cache=True, fastmath=_FM)
def sweep(u, unew, g, rstart, rpos, rlen, d, fint, cgrp, coff, cw):
    """Jacobi update at interior nodes; returns (max |change|, min change)."""
    C, K = coff.shape
    acc = np.empty(_CHUNK)
    lo = np.empty(_CHUNK)
    hi = np.empty(_CHUNK)
    dmax = 0.0
    dmin = np.inf
    for r in range(rstart.size):
        for c0 in range(0, rlen[r], _CHUNK):
            m = min(_CHUNK, rlen[r] - c0)
            n0 = rstart[r] + c0
            p0 = rpos[r] + c0
            for k in range(m):
                lo[k] = np.inf
                hi[k] = -np.inf
            for c in range(C):
                gs = g[cgrp[c]]
                if K == 6:
                    # planar moment-matched shift stencil, unrolled
                    w0, w1, w2, w3, w4, w5 = cw[c, 0], cw[c, 1], cw[c, 2], cw[c, 3], cw[c, 4], cw[c, 5]
                    o0, o1, o2 = n0 + coff[c, 0], n0 + coff[c, 1], n0 + coff[c, 2]
                    o3, o4, o5 = n0 + coff[c, 3], n0 + coff[c, 4], n0 + coff[c, 5]
                    for k in range(m):
                        a = (
                            w0 * gs[o0 + k]
                            + w1 * gs[o1 + k]
                            + w2 * gs[o2 + k]
                            + w3 * gs[o3 + k]
                            + w4 * gs[o4 + k]
                            + w5 * gs[o5 + k]
                        )
                        lo[k] = min(lo[k], a)
                        hi[k] = max(hi[k], a)
                    continue
                for k in range(m):
                    acc[k] = 0.0
                for j in range(K):
                    w = cw[c, j]
                    if w == 0.0:
                        continue
                    o = n0 + coff[c, j]
                    for k in range(m):
                        acc[k] += w * gs[o + k]
                for k in range(m):
                    lo[k] = min(lo[k], acc[k])
                    hi[k] = max(hi[k], acc[k])
            for k in range(m):
                p = p0 + k
                val = d[p] * (0.5 * (lo[k] + hi[k])) + (1.0 - d[p]) * fint[p]
                diff = val - u[n0 + k]
                unew[n0 + k] = val
                dmax = max(dmax, abs(diff))
                dmin = min(dmin, diff)
    return dmax, dmin


@njit(cache=True)
def extrema(g, interior, cgrp, coff, cw, rel_tol, vmin, vmax, imin, imax):
    """Min/max candidate values and first near-extremal candidate indices."""
    C, K = coff.shape
    vals = np.empty(C)
    for k in range(interior.size):
        n = interior[k]
        lo = np.inf
        hi = -np.inf
        for c in range(C):
            s = cgrp[c]
            acc = 0.0
            for j in range(K):
                acc += cw[c, j] * g[s, n + coff[c, j]]
            vals[c] = acc
            lo = min(lo, acc)
            hi = max(hi, acc)
        tlo = rel_tol * max(1.0, abs(lo))
        thi = rel_tol * max(1.0, abs(hi))
        a = -1
        b = -1
        for c in range(C):
            if a < 0 and vals[c] <= lo + tlo:
                a = c
            if b < 0 and vals[c] >= hi - thi:
                b = c
        vmin[k] = lo
        vmax[k] = hi
        imin[k] = a
        imax[k] = b

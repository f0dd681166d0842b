"""Compiled stencil kernels.

Field buffers carry a permanent zero frame ``r`` cells wide (``r`` = stencil
radius), so every stencil read is in bounds and the frame stands in for the
zero padding beyond the grid edge. Region bounds passed to the kernels are in
padded coordinates.

Work is split into rectangular tiles handed out by ``prange``. Each output
cell is written by exactly one tile and its arithmetic does not depend on the
tile order or the thread count, so results are bitwise reproducible. The
default radius 4 has hand-unrolled kernels that walk contiguous row slices
(this is what lets LLVM vectorize them); other radii use a generic loop.
"""

import numba
from numba import njit, prange

# ---------------------------------------------------------------------------
# generic radius
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _lap_point(u, j, i, c, r):
    acc = 2.0 * c[0] * u[j, i]
    for k in range(1, r + 1):
        acc += c[k] * ((u[j, i - k] + u[j, i + k]) + (u[j - k, i] + u[j + k, i]))
    return acc


@njit(cache=True, inline="always")
def _tile_bounds(t, nty, ntx, ty, tx, j_lo, j_hi, i_lo, i_hi):
    b = t // (nty * ntx)
    rem = t % (nty * ntx)
    j0 = j_lo + (rem // ntx) * ty
    i0 = i_lo + (rem % ntx) * tx
    return b, j0, min(j0 + ty, j_hi), i0, min(i0 + tx, i_hi)


@njit(parallel=True, cache=True)
def laplacian_kernel(u, out, c, ty, tx, j_lo, j_hi, i_lo, i_hi):
    """``out[b] = sum_k c_k (shifts of u[b])`` without the 1/h^2 factor."""
    nb = u.shape[0]
    r = c.shape[0] - 1
    nty = (j_hi - j_lo + ty - 1) // ty
    ntx = (i_hi - i_lo + tx - 1) // tx
    for t in prange(nb * nty * ntx):
        b, j0, j1, i0, i1 = _tile_bounds(t, nty, ntx, ty, tx, j_lo, j_hi, i_lo, i_hi)
        ub = u[b]
        for j in range(j0, j1):
            for i in range(i0, i1):
                out[b, j, i] = _lap_point(ub, j, i, c, r)


@njit(parallel=True, cache=True)
def _step_generic(prev, curr, vel2, keep, inv, c, ty, tx, j_lo, j_hi, i_lo, i_hi):
    nb = curr.shape[0]
    r = c.shape[0] - 1
    nty = (j_hi - j_lo + ty - 1) // ty
    ntx = (i_hi - i_lo + tx - 1) // tx
    for t in prange(nb * nty * ntx):
        b, j0, j1, i0, i1 = _tile_bounds(t, nty, ntx, ty, tx, j_lo, j_hi, i_lo, i_hi)
        u = curr[b]
        p = prev[b]
        for j in range(j0, j1):
            for i in range(i0, i1):
                lap = _lap_point(u, j, i, c, r)
                p[j, i] = (2.0 * u[j, i] - keep[j, i] * p[j, i] + vel2[j, i] * lap) * inv[j, i]


@njit(parallel=True, cache=True)
def _reverse_generic(nxt, curr, vel2, c, ty, tx, j_lo, j_hi, i_lo, i_hi, adj, acc):
    nb = curr.shape[0]
    r = c.shape[0] - 1
    nty = (j_hi - j_lo + ty - 1) // ty
    ntx = (i_hi - i_lo + tx - 1) // tx
    for t in prange(nb * nty * ntx):
        b, j0, j1, i0, i1 = _tile_bounds(t, nty, ntx, ty, tx, j_lo, j_hi, i_lo, i_hi)
        u = curr[b]
        n = nxt[b]
        for j in range(j0, j1):
            for i in range(i0, i1):
                lap = _lap_point(u, j, i, c, r)
                acc[b, j, i] += adj[b, j, i] * lap
                n[j, i] = 2.0 * u[j, i] - n[j, i] + vel2[j, i] * lap


# ---------------------------------------------------------------------------
# radius 4, unrolled over contiguous rows
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def _step_r4(prev, curr, vel2, keep, inv, c, ty, tx, j_lo, j_hi, i_lo, i_hi):
    nb = curr.shape[0]
    c0 = 2.0 * c[0]
    c1, c2, c3, c4 = c[1], c[2], c[3], c[4]
    nty = (j_hi - j_lo + ty - 1) // ty
    ntx = (i_hi - i_lo + tx - 1) // tx
    for t in prange(nb * nty * ntx):
        b, j0, j1, i0, i1 = _tile_bounds(t, nty, ntx, ty, tx, j_lo, j_hi, i_lo, i_hi)
        for j in range(j0, j1):
            uc = curr[b, j, i0 - 4:i1 + 4]
            m1 = curr[b, j - 1, i0:i1]
            p1 = curr[b, j + 1, i0:i1]
            m2 = curr[b, j - 2, i0:i1]
            p2 = curr[b, j + 2, i0:i1]
            m3 = curr[b, j - 3, i0:i1]
            p3 = curr[b, j + 3, i0:i1]
            m4 = curr[b, j - 4, i0:i1]
            p4 = curr[b, j + 4, i0:i1]
            out = prev[b, j, i0:i1]
            v = vel2[j, i0:i1]
            kp = keep[j, i0:i1]
            iv = inv[j, i0:i1]
            for ii in range(i1 - i0):
                lap = (
                    c0 * uc[ii + 4]
                    + c1 * ((uc[ii + 3] + uc[ii + 5]) + (m1[ii] + p1[ii]))
                    + c2 * ((uc[ii + 2] + uc[ii + 6]) + (m2[ii] + p2[ii]))
                    + c3 * ((uc[ii + 1] + uc[ii + 7]) + (m3[ii] + p3[ii]))
                    + c4 * ((uc[ii] + uc[ii + 8]) + (m4[ii] + p4[ii]))
                )
                out[ii] = (2.0 * uc[ii + 4] - kp[ii] * out[ii] + v[ii] * lap) * iv[ii]


@njit(parallel=True, cache=True)
def _reverse_r4(nxt, curr, vel2, c, ty, tx, j_lo, j_hi, i_lo, i_hi, adj, acc):
    nb = curr.shape[0]
    c0 = 2.0 * c[0]
    c1, c2, c3, c4 = c[1], c[2], c[3], c[4]
    nty = (j_hi - j_lo + ty - 1) // ty
    ntx = (i_hi - i_lo + tx - 1) // tx
    for t in prange(nb * nty * ntx):
        b, j0, j1, i0, i1 = _tile_bounds(t, nty, ntx, ty, tx, j_lo, j_hi, i_lo, i_hi)
        for j in range(j0, j1):
            uc = curr[b, j, i0 - 4:i1 + 4]
            m1 = curr[b, j - 1, i0:i1]
            p1 = curr[b, j + 1, i0:i1]
            m2 = curr[b, j - 2, i0:i1]
            p2 = curr[b, j + 2, i0:i1]
            m3 = curr[b, j - 3, i0:i1]
            p3 = curr[b, j + 3, i0:i1]
            m4 = curr[b, j - 4, i0:i1]
            p4 = curr[b, j + 4, i0:i1]
            out = nxt[b, j, i0:i1]
            a = adj[b, j, i0:i1]
            g = acc[b, j, i0:i1]
            v = vel2[j, i0:i1]
            for ii in range(i1 - i0):
                lap = (
                    c0 * uc[ii + 4]
                    + c1 * ((uc[ii + 3] + uc[ii + 5]) + (m1[ii] + p1[ii]))
                    + c2 * ((uc[ii + 2] + uc[ii + 6]) + (m2[ii] + p2[ii]))
                    + c3 * ((uc[ii + 1] + uc[ii + 7]) + (m3[ii] + p3[ii]))
                    + c4 * ((uc[ii] + uc[ii + 8]) + (m4[ii] + p4[ii]))
                )
                g[ii] += a[ii] * lap
                out[ii] = 2.0 * uc[ii + 4] - out[ii] + v[ii] * lap


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def step_kernel(prev, curr, vel2, keep, inv, coeffs, tile, j_lo, j_hi, i_lo, i_hi):
    """Leapfrog update written in place into ``prev`` on ``[j_lo, j_hi) x [i_lo, i_hi)``.

    ``prev <- (2 u - keep * prev + vel2 * lap(u)) * inv`` with
    ``vel2 = (c dt / h)^2``, ``keep = 1 - sigma dt`` and
    ``inv = 1 / (1 + sigma dt)``.
    """
    ty, tx = tile
    fn = _step_r4 if coeffs.shape[0] == 5 else _step_generic
    fn(prev, curr, vel2, keep, inv, coeffs, ty, tx, j_lo, j_hi, i_lo, i_hi)


def reverse_step_accumulate(nxt, curr, vel2, coeffs, tile, j_lo, j_hi, i_lo, i_hi, adj, acc):
    """Undamped step backwards in time, fused with imaging.

    Overwrites ``nxt`` (holding u^{k+1}) with u^{k-1} on the given region and
    adds ``adj * lap(u^k)`` into ``acc`` on the same cells.
    """
    ty, tx = tile
    fn = _reverse_r4 if coeffs.shape[0] == 5 else _reverse_generic
    fn(nxt, curr, vel2, coeffs, ty, tx, j_lo, j_hi, i_lo, i_hi, adj, acc)


def set_workers(n):
    """Clamp and apply the compiled-kernel thread count; returns the previous value."""
    old = numba.get_num_threads()
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return old

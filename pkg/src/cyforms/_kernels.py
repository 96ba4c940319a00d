"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``CYFORMS_NUMBA`` is not
``"0"``.  Both paths must agree to rounding; ``benchmarks/bench_kernels.py``
times one against the other.
"""
import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("CYFORMS_NUMBA", "1") != "0"


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- Lagrange


def lagrange_weights_np(t, q):
    """Weights of the ``q``-node Lagrange polynomial at nodes ``0..q-1`` evaluated in ``t``."""
    t = np.asarray(t, dtype=float)
    W = np.ones(t.shape + (q,))
    for j in range(q):
        for l in range(q):
            if l != j:
                W[..., j] *= (t - l) / (j - l)
    return W


def interp_numpy(data, sizes, upts, q):
    """Periodic tensor-product Lagrange interpolation.

    ``data`` is ``(ncomp, *sizes)``, ``upts`` holds ``(P, m)`` positions in
    grid units.  The stencil uses ``q`` nodes per axis centred on the cell.
    """
    sizes = tuple(int(s) for s in sizes)
    m = len(sizes)
    ncomp = data.shape[0]
    P = upts.shape[0]
    flat = data.reshape(ncomp, -1)
    strides = np.cumprod((1,) + sizes[::-1][:-1])[::-1]
    base = np.floor(upts).astype(np.int64) - (q // 2 - 1)
    W = lagrange_weights_np(upts - base, q)
    out = np.zeros((ncomp, P), dtype=data.dtype)
    for s in range(q ** m):
        rem = s
        w = np.ones(P)
        off = np.zeros(P, dtype=np.int64)
        for a in range(m):
            j = rem % q
            rem //= q
            w = w * W[:, a, j]
            off += ((base[:, a] + j) % sizes[a]) * strides[a]
        out += w * flat[:, off]
    return out


def fourier_numpy(amps, kvec, pts, chunk=2048):
    """Direct evaluation of ``sum_k amps[:, k] exp(i k.x)`` at every row of ``pts``."""
    ncomp = amps.shape[0]
    P = pts.shape[0]
    out = np.zeros((ncomp, P), dtype=complex)
    kf = kvec.astype(float)
    for s in range(0, P, chunk):
        ph = np.exp(1j * (pts[s:s + chunk] @ kf.T))
        out[:, s:s + chunk] = amps @ ph.T
    return out


def hitchin_K_numpy(rho, table):
    """``K[p] = sum c rho[I] rho[J]`` for every column ``p`` of the real ``(20, P)`` array ``rho``."""
    a, b, I, J, c = table
    P = rho.shape[1]
    K = np.zeros((P, 6, 6))
    for aa, bb, ii, jj, cc in zip(a, b, I, J, c):
        K[:, aa, bb] += cc * rho[ii] * rho[jj]
    return K


if USE_NUMBA:

    @numba.njit(cache=True)
    def _interp_nb(flat, sizes, strides, upts, q, out):
        m = sizes.size
        ncomp = flat.shape[0]
        P = upts.shape[0]
        W = np.empty((m, q))
        base = np.empty(m, dtype=np.int64)
        nst = q ** m
        half = q // 2 - 1
        for p in range(P):
            for a in range(m):
                u = upts[p, a]
                b = int(math.floor(u)) - half
                base[a] = b
                t = u - b
                for j in range(q):
                    w = 1.0
                    for l in range(q):
                        if l != j:
                            w *= (t - l) / (j - l)
                    W[a, j] = w
            for s in range(nst):
                rem = s
                w = 1.0
                off = 0
                for a in range(m):
                    j = rem % q
                    rem //= q
                    w *= W[a, j]
                    idx = (base[a] + j) % sizes[a]
                    off += idx * strides[a]
                for c in range(ncomp):
                    out[c, p] += w * flat[c, off]

    @numba.njit(cache=True)
    def _fourier_nb(amps, kvec, pts, kmax, out):
        ncomp, M = amps.shape
        P, m = pts.shape
        width = 2 * kmax + 1
        tab = np.empty((m, width), dtype=np.complex128)
        for p in range(P):
            for a in range(m):
                for k in range(-kmax, kmax + 1):
                    tab[a, k + kmax] = complex(math.cos(k * pts[p, a]), math.sin(k * pts[p, a]))
            for j in range(M):
                ph = tab[0, kvec[j, 0] + kmax]
                for a in range(1, m):
                    ph *= tab[a, kvec[j, a] + kmax]
                for c in range(ncomp):
                    out[c, p] += amps[c, j] * ph

    @numba.njit(cache=True)
    def _hitchin_nb(rho, a, b, I, J, c, K):
        P = rho.shape[1]
        for p in range(P):
            for e in range(a.size):
                K[p, a[e], b[e]] += c[e] * rho[I[e], p] * rho[J[e], p]


def interp(data, sizes, upts, q):
    if not USE_NUMBA:
        return interp_numpy(data, sizes, upts, q)
    sizes_a = np.asarray(sizes, dtype=np.int64)
    strides = np.cumprod(np.concatenate(([1], sizes_a[::-1][:-1])))[::-1].astype(np.int64)
    flat = np.ascontiguousarray(data.reshape(data.shape[0], -1))
    out = np.zeros((data.shape[0], upts.shape[0]), dtype=flat.dtype)
    _interp_nb(flat, sizes_a, np.ascontiguousarray(strides), np.ascontiguousarray(upts, dtype=float), int(q), out)
    return out


def fourier(amps, kvec, pts):
    if not USE_NUMBA:
        return fourier_numpy(amps, kvec, pts)
    amps = np.ascontiguousarray(amps, dtype=complex)
    kvec = np.ascontiguousarray(kvec, dtype=np.int64)
    kmax = int(np.abs(kvec).max()) if kvec.size else 0
    out = np.zeros((amps.shape[0], pts.shape[0]), dtype=complex)
    _fourier_nb(amps, kvec, np.ascontiguousarray(pts, dtype=float), kmax, out)
    return out


def hitchin_K_field(rho, table):
    if not USE_NUMBA:
        return hitchin_K_numpy(rho, table)
    a, b, I, J, c = table
    K = np.zeros((rho.shape[1], 6, 6))
    _hitchin_nb(np.ascontiguousarray(rho, dtype=float), a, b, I, J, c, K)
    return K

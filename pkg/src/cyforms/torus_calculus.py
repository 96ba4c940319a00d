"""Spectral exterior calculus on the flat torus ``R^{2n} / (2 pi Z)^{2n}``.

Fields are band-limited trigonometric polynomials sampled on a uniform
grid.  The Nyquist index of every (even) axis is excluded from the band:
its wavenumber is treated as zero in every derivative, and
:func:`band_project` removes it from data.  Within this space ``d`` is exact
mode by mode, so ``d o d = 0`` and the dd^s inversion reduce to small
per-mode linear algebra.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .errors import DegreeError, NotCohomologous, NotInImage, UnsupportedDimension
from .exterior_algebra import (
    AlgebraicForm,
    basis,
    left_wedge_matrices,
    wedge_coeffs,
    wedge_table,
)

TWO_PI = 2.0 * np.pi


class TorusGrid:
    """Uniform periodic grid with ``sizes[a]`` points on axis ``a`` (period ``2 pi``)."""

    def __init__(self, n, sizes):
        if n not in (1, 2, 3):
            raise UnsupportedDimension(f"complex dimension {n} is not supported")
        m = 2 * n
        if np.isscalar(sizes):
            sizes = (int(sizes),) * m
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) != m:
            raise ValueError(f"need {m} axis sizes, got {len(sizes)}")
        for s in sizes:
            if s % 2 or s < 8:
                raise ValueError(f"axis sizes must be even and >= 8, got {s}")
        self.n = n
        self.m = m
        self.sizes = sizes

    def __repr__(self):
        return f"TorusGrid(n={self.n}, sizes={self.sizes})"

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and other.n == self.n and other.sizes == self.sizes

    def __hash__(self):
        return hash((self.n, self.sizes))

    @property
    def shape(self):
        return self.sizes

    @property
    def npoints(self):
        return math.prod(self.sizes)

    @property
    def spacing(self):
        return tuple(TWO_PI / s for s in self.sizes)

    @cached_property
    def wavenumbers(self):
        """Integer wavenumbers per axis in FFT order (Nyquist listed as ``-N/2``)."""
        return [np.fft.fftfreq(s, 1.0 / s).round().astype(np.int64) for s in self.sizes]

    @cached_property
    def band_wavenumbers(self):
        """Wavenumbers with the Nyquist entry set to zero."""
        out = []
        for s, k in zip(self.sizes, self.wavenumbers):
            k = k.copy()
            k[s // 2] = 0
            out.append(k)
        return out

    def _axis_shape(self, a):
        shp = [1] * self.m
        shp[a] = self.sizes[a]
        return tuple(shp)

    @cached_property
    def symbols(self):
        """Broadcastable real wavenumber arrays for derivatives (Nyquist zeroed)."""
        return [k.astype(float).reshape(self._axis_shape(a)) for a, k in enumerate(self.band_wavenumbers)]

    @cached_property
    def band_mask(self):
        mask = np.ones(self.shape, dtype=bool)
        for a, s in enumerate(self.sizes):
            ax = np.ones(s, dtype=bool)
            ax[s // 2] = False
            mask &= ax.reshape(self._axis_shape(a))
        return mask

    def coords(self):
        """Broadcastable coordinate arrays, one per axis."""
        return [(np.arange(s) * (TWO_PI / s)).reshape(self._axis_shape(a)) for a, s in enumerate(self.sizes)]

    def points(self):
        """All grid points as a ``(npoints, m)`` array in C order."""
        axes = [np.arange(s) * (TWO_PI / s) for s in self.sizes]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)

    def mode_vectors(self, flat_index=None, band=True):
        """``(M, m)`` wavenumber vectors of the given flat FFT indices (all modes by default)."""
        ks = self.band_wavenumbers if band else self.wavenumbers
        if flat_index is None:
            flat_index = np.arange(self.npoints)
        idx = np.unravel_index(flat_index, self.shape)
        return np.stack([ks[a][idx[a]] for a in range(self.m)], axis=1)


_WORKERS = 1


def set_threads(n):
    """Number of FFT worker threads; results do not depend on it beyond rounding."""
    global _WORKERS
    _WORKERS = max(1, int(n))


def _fft_axes(m):
    return tuple(range(1, m + 1))


def _fft(values, m):
    return sfft.fftn(values, axes=_fft_axes(m), norm="ortho", workers=_WORKERS)


def _ifft(spec, m):
    return sfft.ifftn(spec, axes=_fft_axes(m), norm="ortho", workers=_WORKERS)


class FormField:
    """A degree-``k`` form sampled on a :class:`TorusGrid`.

    Data are held in point space, spectral space (unitary FFT per
    component), or both; each view is computed on first access and cached.
    Arrays are read-only.  ``real=True`` marks a real field; its point
    values are validated and then stored without imaginary part.
    """

    __slots__ = ("grid", "degree", "real", "representation", "_values", "_spectral", "_cache")

    def __init__(self, grid, degree, values=None, *, spectral=None, real=False):
        if not 0 <= degree <= grid.m:
            raise DegreeError(f"degree {degree} outside [0, {grid.m}]")
        ncomp = math.comb(grid.m, degree)
        shape = (ncomp,) + grid.shape
        self.grid = grid
        self.degree = degree
        self.real = bool(real)
        self._values = None
        self._spectral = None
        self._cache = {}
        if values is None and spectral is None:
            values = np.zeros(shape)
        if values is not None:
            values = np.asarray(values)
            if values.shape != shape:
                values = np.broadcast_to(values, shape)
            if self.real:
                if np.iscomplexobj(values):
                    scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
                    if np.max(np.abs(values.imag), initial=0.0) > 1e-13 * scale:
                        raise ValueError("field flagged real has a non-negligible imaginary part")
                    values = values.real
                values = np.array(values, dtype=float)
            else:
                values = np.array(values, dtype=complex)
            values.setflags(write=False)
            self._values = values
            self.representation = "point"
        if spectral is not None:
            spectral = np.array(np.broadcast_to(spectral, shape), dtype=complex)
            spectral.setflags(write=False)
            self._spectral = spectral
            if values is None:
                self.representation = "spectral"

    @property
    def ncomp(self):
        return math.comb(self.grid.m, self.degree)

    @property
    def values(self):
        if self._values is None:
            v = _ifft(self._spectral, self.grid.m)
            if self.real:
                v = np.ascontiguousarray(v.real)
            v.setflags(write=False)
            self._values = v
        return self._values

    @property
    def spectral(self):
        if self._spectral is None:
            s = _fft(self._values, self.grid.m)
            s.setflags(write=False)
            self._spectral = s
        return self._spectral

    @property
    def amplitudes(self):
        """Fourier amplitudes ``c_k`` with ``f(x) = sum_k c_k exp(i k.x)``."""
        return self.spectral / math.sqrt(self.grid.npoints)

    @classmethod
    def constant(cls, grid, form, real=None):
        if form.m != grid.m:
            raise DegreeError("form and grid dimensions differ")
        if real is None:
            real = form.is_real()
        vals = np.broadcast_to(form.coeffs.reshape((-1,) + (1,) * grid.m), (form.coeffs.size,) + grid.shape)
        return cls(grid, form.degree, vals, real=real)

    @classmethod
    def scalar(cls, grid, values, real=None):
        values = np.asarray(values)
        if real is None:
            real = not np.iscomplexobj(values)
        return cls(grid, 0, values[None], real=real)

    @classmethod
    def zeros(cls, grid, degree, real=True):
        return cls(grid, degree, np.zeros((math.comb(grid.m, degree),) + grid.shape), real=real)

    def _like(self, values=None, spectral=None, degree=None, real=None):
        return FormField(
            self.grid,
            self.degree if degree is None else degree,
            values,
            spectral=spectral,
            real=self.real if real is None else real,
        )

    def _binary(self, other, op):
        if not isinstance(other, FormField):
            return NotImplemented
        if other.grid != self.grid or other.degree != self.degree:
            raise DegreeError("fields must share grid and degree")
        real = self.real and other.real
        if self._values is None and other._values is None:
            return self._like(spectral=op(self._spectral, other._spectral), real=real)
        return self._like(values=op(self.values, other.values), real=real)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __neg__(self):
        if self._values is None:
            return self._like(spectral=-self._spectral)
        return self._like(values=-self._values)

    def __mul__(self, c):
        """Scale by a number, or pointwise by a scalar array of the grid shape."""
        if isinstance(c, FormField):
            if c.degree != 0:
                return NotImplemented
            c = c.values[0]
        if np.ndim(c) == 0:
            real = self.real and np.isrealobj(c)
            if self._values is None:
                return self._like(spectral=self._spectral * c, real=real)
            return self._like(values=self._values * c, real=real)
        c = np.asarray(c)
        return self._like(values=self.values * c[None], real=self.real and np.isrealobj(c))

    __rmul__ = __mul__

    def conj(self):
        if self.real:
            return self
        return self._like(values=self.values.conj())

    def real_part(self):
        return self._like(values=self.values.real, real=True)

    def imag_part(self):
        return self._like(values=self.values.imag, real=True)

    def component(self, I):
        return self.values[basis(self.grid.m, self.degree).index(tuple(I))]

    def norm_inf(self):
        return float(np.max(np.abs(self.values), initial=0.0))

    def at(self, flat_index):
        """The :class:`AlgebraicForm` at a grid point given by its flat index."""
        return AlgebraicForm(self.grid.m, self.degree, self.values.reshape(self.ncomp, -1)[:, flat_index])

    def __repr__(self):
        return f"FormField(degree={self.degree}, grid={self.grid!r}, real={self.real})"


def trig_field(grid, terms, degree=0):
    """Scalar field ``sum A cos(k.x + phase)`` from ``(amplitude, wavevector, phase)`` triples."""
    vals = np.zeros(grid.shape)
    X = grid.coords()
    for amp, kvec, phase in terms:
        kvec = np.asarray(kvec)
        if kvec.size != grid.m:
            raise ValueError(f"wavevector {list(kvec)} must have {grid.m} entries")
        arg = sum(float(k) * x for k, x in zip(kvec, X)) + phase
        vals = vals + amp * np.cos(arg)
    return FormField.scalar(grid, vals, real=True)


def random_bandlimited_field(grid, degree, rng, kmax=2, nmodes=6, real=False):
    """Random field built from ``nmodes`` wavevectors with entries in ``[-kmax, kmax]``."""
    ncomp = math.comb(grid.m, degree)
    spec = np.zeros((ncomp,) + grid.shape, dtype=complex)
    scale = math.sqrt(grid.npoints)
    for _ in range(nmodes):
        k = rng.integers(-kmax, kmax + 1, size=grid.m)
        c = rng.standard_normal(ncomp) + 1j * rng.standard_normal(ncomp)
        idx = tuple(int(ki) % s for ki, s in zip(k, grid.sizes))
        spec[(slice(None),) + idx] += c * scale
        if real:
            idx2 = tuple(int(-ki) % s for ki, s in zip(k, grid.sizes))
            spec[(slice(None),) + idx2] += c.conj() * scale
    f = FormField(grid, degree, spectral=spec)
    if real:
        return FormField(grid, degree, f.values.real, real=True)
    return f


def spectral_transform(f, direction="forward"):
    """Return the same field re-flagged in spectral (``forward``) or point (``inverse``) form."""
    if direction == "forward":
        return FormField(f.grid, f.degree, spectral=f.spectral, real=f.real)
    if direction == "inverse":
        return FormField(f.grid, f.degree, f.values, real=f.real)
    raise ValueError("direction must be 'forward' or 'inverse'")


def band_project(f):
    """Remove every Fourier mode carrying a Nyquist index."""
    spec = f.spectral * f.grid.band_mask
    out = FormField(f.grid, f.degree, spectral=spec, real=f.real)
    if f.real:
        return FormField(f.grid, f.degree, out.values, spectral=spec, real=True)
    return out


def partial_derivative(f, a):
    """Spectral ``d/dx_a`` of every component."""
    spec = f.spectral * (1j * f.grid.symbols[a])
    return FormField(f.grid, f.degree, spectral=spec, real=f.real)


def exterior_derivative(f):
    g = f.grid
    m = g.m
    if f.degree >= m:
        raise DegreeError("d of a top-degree form")
    out_i, ax, src, sign = wedge_table(m, 1, f.degree)
    spec = f.spectral
    out = np.zeros((math.comb(m, f.degree + 1),) + g.shape, dtype=complex)
    isym = [1j * s for s in g.symbols]
    for o, a, s, sg in zip(out_i, ax, src, sign):
        if sg > 0:
            out[o] += isym[a] * spec[s]
        else:
            out[o] -= isym[a] * spec[s]
    return FormField(g, f.degree + 1, spectral=out, real=f.real)


def star_field(f, frame):
    S = frame.star_matrix(f.degree)
    if f._values is None:
        spec = np.tensordot(S, f._spectral, axes=(1, 0))
        return FormField(f.grid, f.grid.m - f.degree, spectral=spec, real=f.real)
    return FormField(f.grid, f.grid.m - f.degree, np.tensordot(S, f.values, axes=(1, 0)), real=f.real)


def codifferential_symplectic(f, frame):
    """``d^s = (-1)^{k+1} *_s d *_s`` with ``k`` the degree of the input."""
    k = f.degree
    if k == 0:
        return FormField.zeros(f.grid, 0, real=f.real)
    out = star_field(exterior_derivative(star_field(f, frame)), frame)
    return out if (k + 1) % 2 == 0 else -out


def dd_symp(psi, frame):
    return exterior_derivative(codifferential_symplectic(psi, frame))


def wedge_fields(a, b):
    if a.grid != b.grid:
        raise DegreeError("fields live on different grids")
    vals = wedge_coeffs(a.grid.m, a.degree, b.degree, a.values, b.values)
    return FormField(a.grid, a.degree + b.degree, vals, real=a.real and b.real)


def wedge_constant(f, form, left=False):
    """Wedge a field with a constant :class:`AlgebraicForm` (on the right unless ``left``)."""
    m = f.grid.m
    c = form.coeffs.reshape((-1,) + (1,) * m)
    if left:
        vals = wedge_coeffs(m, form.degree, f.degree, c, f.values)
    else:
        vals = wedge_coeffs(m, f.degree, form.degree, f.values, c)
    real = f.real and form.is_real()
    return FormField(f.grid, f.degree + form.degree, vals, real=real)


def integrate_top(f):
    """``int_T f`` for a top-degree field: grid mean of the volume coefficient times ``(2 pi)^m``."""
    if f.degree != f.grid.m:
        raise DegreeError("integrate_top needs a top-degree field")
    val = complex(np.mean(f.values[0])) * TWO_PI ** f.grid.m
    return val


# ------------------------------------------------------------ dd^s inversion


def d_symbol(m, k, kvecs):
    """Real part ``K`` of the symbol ``i K`` of ``d`` on degree ``k``, batched over ``kvecs``."""
    E = left_wedge_matrices(m, k)
    return np.einsum("pa,arc->prc", np.asarray(kvecs, dtype=float), E)


def ddsymp_symbol(frame, degree, kvecs):
    """Real per-mode matrix of ``d d^s`` acting on Fourier coefficients of a degree-``p`` form."""
    m = frame.m
    p = degree
    S_p = frame.star_matrix(p)
    S_up = frame.star_matrix(m - p + 1)
    K_top = d_symbol(m, m - p, kvecs)
    K_low = d_symbol(m, p - 1, kvecs)
    sign = -1.0 if p % 2 else 1.0
    return sign * (K_low @ S_up @ K_top @ S_p)


def solve_ddsymp_potential(target, frame, tol=1e-10, gauge_seed=None, chunk=8192):
    """Minimum-norm ``psi`` with ``dd^s psi = target``, solved mode by mode.

    Raises :class:`NotCohomologous` if the zero mode of ``target`` exceeds
    ``tol`` and :class:`NotInImage` if the reproduced field misses the target
    by more than ``tol`` in sup norm.  ``gauge_seed`` adds a random element
    of the per-mode kernel to ``psi`` on the active modes, which must leave
    ``dd^s psi`` unchanged.
    """
    g = target.grid
    p = target.degree
    if p < 1:
        raise DegreeError("dd^s cannot produce a 0-form target")
    ncomp = target.ncomp
    N = g.npoints
    sqrtN = math.sqrt(N)
    T = target.spectral.reshape(ncomp, N)
    zero_amp = float(np.max(np.abs(T[:, 0]))) / sqrtN
    if zero_amp > tol:
        raise NotCohomologous(f"target has harmonic part of size {zero_amp:.3e}")
    norms = np.max(np.abs(T), axis=0)
    norms[0] = 0.0
    active = np.nonzero(norms > 0)[0]
    psi_hat = np.zeros((ncomp, N), dtype=complex)
    resid_hat = np.zeros((ncomp, N), dtype=complex)
    resid_hat[:, 0] = -T[:, 0]
    rng = np.random.Generator(np.random.Philox(gauge_seed)) if gauge_seed is not None else None
    for s in range(0, active.size, chunk):
        idx = active[s:s + chunk]
        kv = g.mode_vectors(idx)
        M = ddsymp_symbol(frame, p, kv)
        Mp = np.linalg.pinv(M, rcond=1e-10)
        t = T[:, idx].T[..., None]
        x = Mp @ t
        if rng is not None:
            xi = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
            ker = xi - Mp @ (M @ xi)
            x = x + ker * np.max(np.abs(x), axis=(1, 2), keepdims=True)
        psi_hat[:, idx] = x[..., 0].T
        resid_hat[:, idx] = (M @ x - t)[..., 0].T
    resid = _ifft(resid_hat.reshape((ncomp,) + g.shape), g.m)
    err = float(np.max(np.abs(resid)))
    if err > tol:
        raise NotInImage(f"dd^s psi misses target by {err:.3e} > {tol:.1e}")
    return FormField(g, p, spectral=psi_hat.reshape((ncomp,) + g.shape))


# ------------------------------------------------------------ off-grid values


def _upsampled(grid, spectral, factor, real):
    amps = spectral / math.sqrt(grid.npoints)
    up_sizes = tuple(factor * s for s in grid.sizes)
    up = np.zeros((amps.shape[0],) + up_sizes, dtype=complex)
    src, dst = [], []
    for s, k in zip(grid.sizes, grid.wavenumbers):
        keep = np.arange(s) != s // 2
        src.append(np.arange(s)[keep])
        dst.append(k[keep] % (factor * s))
    up[(slice(None),) + np.ix_(*dst)] = amps[(slice(None),) + np.ix_(*src)]
    vals = sfft.ifftn(up, axes=_fft_axes(grid.m), norm="forward", workers=_WORKERS)
    return np.ascontiguousarray(vals.real) if real else vals


def _select_modes(grid, spectral, tol):
    amps = spectral.reshape(spectral.shape[0], -1) * (grid.band_mask.reshape(1, -1) / math.sqrt(grid.npoints))
    mags = np.max(np.abs(amps), axis=0)
    order = np.argsort(mags)
    dropped = np.cumsum(mags[order])
    budget = tol if tol is not None else 1e-14 * max(1.0, float(dropped[-1]))
    ndrop = int(np.searchsorted(dropped, budget, side="right"))
    keep = np.sort(order[ndrop:])
    return keep, amps[:, keep]


class OffgridEvaluator:
    """Reusable off-grid evaluation of a stack of scalar components on one grid.

    ``spectral`` has shape ``(ncomp, *grid.shape)`` (unitary FFT).  See
    :func:`evaluate_offgrid` for the meaning of the options; the chosen
    method and its precomputed data are fixed at construction.
    """

    def __init__(self, grid, spectral, real=False, method="auto", order=5, tol=None, max_modes=4096, factor=2):
        if method not in ("auto", "fourier", "interp"):
            raise ValueError(f"unknown method {method!r}")
        self.grid = grid
        self.real = real
        self.method = "interp"
        if method in ("auto", "fourier"):
            keep, amps = _select_modes(grid, spectral, tol)
            if method == "fourier" or keep.size <= max_modes:
                self.method = "fourier"
                self.kvec = grid.mode_vectors(keep, band=False)
                self.amps = np.ascontiguousarray(amps)
        if self.method == "interp":
            if order % 2 == 0 or order < 5:
                raise ValueError("interpolation order must be odd and >= 5")
            self.q = order + 1
            self.up_sizes = np.array([factor * s for s in grid.sizes])
            self.data = _upsampled(grid, spectral, factor, real)

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.grid.m:
            raise ValueError(f"points must have {self.grid.m} coordinates")
        pts = np.mod(pts, TWO_PI)
        if self.method == "fourier":
            out = _kernels.fourier(self.amps, self.kvec, pts)
            return out.real if self.real else out
        upts = pts * (self.up_sizes / TWO_PI)[None, :]
        return _kernels.interp(self.data, self.up_sizes, upts, self.q)


def evaluate_offgrid(f, points, method="auto", order=5, tol=None, max_modes=4096, factor=2):
    """Values of ``f`` at arbitrary points, shape ``(ncomp, P)``.

    ``interp``: zero-padded spectral upsampling by ``factor`` followed by
    periodic tensor-product Lagrange interpolation of odd ``order`` (stencil
    of ``order + 1`` nodes per axis).  ``fourier``: direct summation over the
    Fourier modes that survive pruning; modes are dropped smallest first while
    their summed amplitudes stay below ``tol`` (default ``1e-14`` of the total),
    so the pruning error is bounded by ``tol``.  ``auto`` uses ``fourier`` when
    at most ``max_modes`` modes survive and ``interp`` otherwise.  Nyquist
    modes are outside the band and never contribute.
    """
    key = ("eval", method, order, tol, max_modes, factor)
    ev = f._cache.get(key)
    if ev is None:
        ev = OffgridEvaluator(f.grid, f.spectral, f.real, method, order, tol, max_modes, factor)
        f._cache[key] = ev
    return ev(points)


def evaluate_offgrid_forms(f, points, **kw):
    vals = evaluate_offgrid(f, points, **kw)
    return [AlgebraicForm(f.grid.m, f.degree, vals[:, i]) for i in range(vals.shape[1])]

"""Flat Kahler background on the torus and the complex-Hessian machinery.

Conventions: ``dz_j = dx_j + i dy_j`` and ``omega = (i/2) sum dz_j ^ dzbar_j``.
A real 2-form ``w`` is identified with the Hermitian matrix
``h_jk = -2i w(d/dz_j, d/dzbar_k)``, so that ``w = (i/2) sum h_jk dz_j ^ dzbar_k``
on its (1,1) part and ``omega`` corresponds to the identity.  With these
choices ``w^n / omega^n = det h`` pointwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegreeError, UnsupportedDimension
from .exterior_algebra import AlgebraicForm, SymplecticFrame, basis, standard_complex_structure, wedge
from .torus_calculus import FormField, TorusGrid, integrate_top, wedge_constant


def dz_forms(n):
    """``(dz_j, dzbar_j)`` as :class:`AlgebraicForm` lists."""
    m = 2 * n
    dz, dzb = [], []
    for j in range(n):
        v = np.zeros(m, dtype=complex)
        v[2 * j], v[2 * j + 1] = 1.0, 1j
        dz.append(AlgebraicForm.one_form(v))
        dzb.append(AlgebraicForm.one_form(v.conj()))
    return dz, dzb


def holomorphic_volume(n):
    dz, _ = dz_forms(n)
    out = AlgebraicForm.scalar(2 * n)
    for f in dz:
        out = wedge(out, f)
    return out


@dataclass(frozen=True, eq=False)
class KahlerTorus:
    """Standard flat structures ``(omega, J0, Omega0)`` on a grid."""

    grid: TorusGrid
    frame: SymplecticFrame
    J0: np.ndarray
    Omega0: AlgebraicForm
    cn_ratio: complex

    @property
    def n(self):
        return self.grid.n

    @property
    def m(self):
        return self.grid.m

    @property
    def omega(self):
        return self.frame.omega

    def omega_field(self):
        return FormField.constant(self.grid, self.frame.omega, real=True)

    def Omega_field(self):
        return FormField.constant(self.grid, self.Omega0, real=False)

    @property
    def omega_power_ratio(self):
        """``Omega0 ^ conj(Omega0) / omega^n``, the constant linking the two density references."""
        return self.cn_ratio / math.factorial(self.n)


def standard_background(n, sizes, allow_calibration=False):
    """Background on ``T^{2n}``; ``n = 1`` only with ``allow_calibration`` (a check of solver plumbing)."""
    if n not in (2, 3) and not (allow_calibration and n == 1):
        raise UnsupportedDimension(f"n = {n}: only complex dimensions 2 and 3 are supported")
    grid = sizes if isinstance(sizes, TorusGrid) else TorusGrid(n, sizes)
    if grid.n != n:
        raise ValueError("grid dimension does not match n")
    frame = SymplecticFrame.standard(n)
    Om = holomorphic_volume(n)
    top = wedge(Om, Om.conj()).top()
    return KahlerTorus(grid, frame, standard_complex_structure(n), Om, complex(top))


# ----------------------------------------------------------- Hermitian view


@lru_cache(maxsize=None)
def _hermitian_basis(n):
    """``B[j, k]``: coefficients of ``(i/2) dz_j ^ dzbar_k`` in the real 2-form basis."""
    dz, dzb = dz_forms(n)
    m = 2 * n
    B = np.zeros((n, n, math.comb(m, 2)), dtype=complex)
    for j in range(n):
        for k in range(n):
            B[j, k] = (0.5j * wedge(dz[j], dzb[k])).coeffs
    B.setflags(write=False)
    return B


@lru_cache(maxsize=None)
def _hermitian_extractor(n):
    """``E[j, k, c]`` with ``h_jk = sum_c E[j, k, c] w_c`` for a 2-form with coefficients ``w_c``."""
    m = 2 * n
    B2 = basis(m, 2)
    E = np.zeros((n, n, len(B2)), dtype=complex)
    for j in range(n):
        u = np.zeros(m, dtype=complex)
        u[2 * j], u[2 * j + 1] = 0.5, -0.5j
        for k in range(n):
            v = np.zeros(m, dtype=complex)
            v[2 * k], v[2 * k + 1] = 0.5, 0.5j
            for c, (a, b) in enumerate(B2.indices):
                E[j, k, c] = -2j * (u[a] * v[b] - u[b] * v[a])
    E.setflags(write=False)
    return E


def hermitian_matrix(w):
    """Per-point Hermitian matrices ``(n, n, *grid)`` of a 2-form field (or one form)."""
    if w.degree != 2:
        raise DegreeError("expected a 2-form")
    n = w.m // 2 if isinstance(w, AlgebraicForm) else w.grid.n
    E = _hermitian_extractor(n)
    vals = w.coeffs if isinstance(w, AlgebraicForm) else w.values
    return np.tensordot(E, vals, axes=(2, 0))


def hermitian_to_form(h, grid=None):
    """Real 2-form ``(i/2) sum h_jk dz_j ^ dzbar_k`` from Hermitian ``h`` of shape ``(n, n, ...)``."""
    h = np.asarray(h)
    n = h.shape[0]
    B = _hermitian_basis(n)
    vals = np.tensordot(B, h, axes=([0, 1], [0, 1]))
    if grid is None:
        return AlgebraicForm(2 * n, 2, vals)
    return FormField(grid, 2, vals, real=True)


def holo_symbols(grid):
    """Broadcastable symbols of ``d/dz_j`` and ``d/dzbar_j`` acting on ``exp(i k.x)``."""
    s = grid.symbols
    dz = [0.5 * (1j * s[2 * j] + s[2 * j + 1]) for j in range(grid.n)]
    dzb = [0.5 * (1j * s[2 * j] - s[2 * j + 1]) for j in range(grid.n)]
    return dz, dzb


def complex_hessian(phi_spec, grid):
    """``H_jk = d_j dbar_k phi`` as an ``(n, n, *grid)`` array, from the spectrum of a scalar."""
    from .torus_calculus import _ifft

    dz, dzb = holo_symbols(grid)
    n = grid.n
    spec = np.empty((n * (n + 1) // 2,) + grid.shape, dtype=complex)
    pairs = [(j, k) for j in range(n) for k in range(j, n)]
    for p, (j, k) in enumerate(pairs):
        spec[p] = dz[j] * dzb[k] * phi_spec
    vals = _ifft(spec, grid.m)
    H = np.empty((n, n) + grid.shape, dtype=complex)
    for p, (j, k) in enumerate(pairs):
        H[j, k] = vals[p]
        if j != k:
            H[k, j] = vals[p].conj()
        else:
            H[j, j] = vals[p].real
    return H


def i_del_delbar(phi, bg):
    """``i d dbar phi`` as a real 2-form field; its Hermitian matrix is ``2 d_j dbar_k phi``."""
    if phi.degree != 0:
        raise DegreeError("i ddbar acts on functions")
    if not phi.real:
        raise ValueError("phi must be real")
    H = complex_hessian(phi.spectral[0], phi.grid)
    return hermitian_to_form(2.0 * H, phi.grid)


def dc_operator(phi):
    """``d^c phi = sum (phi_x dy - phi_y dx)``; then ``d(d^c phi / 2) = i d dbar phi``."""
    g = phi.grid
    m = g.m
    B1 = basis(m, 1)
    spec = np.zeros((m,) + g.shape, dtype=complex)
    ph = phi.spectral[0]
    for j in range(g.n):
        ix, iy = 2 * j, 2 * j + 1
        spec[B1.index((iy,))] = 1j * g.symbols[ix] * ph
        spec[B1.index((ix,))] = -1j * g.symbols[iy] * ph
    return FormField(g, 1, spectral=spec, real=phi.real)


def hermitian_det(h):
    """Determinant of ``(n, n, ...)`` stacks, real for Hermitian input."""
    n = h.shape[0]
    if n == 1:
        return h[0, 0].real
    if n == 2:
        return (h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]).real
    return np.linalg.det(np.moveaxis(h, (0, 1), (-2, -1))).real


def hermitian_adjugate(h):
    n = h.shape[0]
    if n == 1:
        return np.ones_like(h)
    if n == 2:
        adj = np.empty_like(h)
        adj[0, 0], adj[1, 1] = h[1, 1], h[0, 0]
        adj[0, 1], adj[1, 0] = -h[0, 1], -h[1, 0]
        return adj
    hm = np.moveaxis(h, (0, 1), (-2, -1))
    adj = np.linalg.inv(hm) * np.linalg.det(hm)[..., None, None]
    return np.moveaxis(adj, (-2, -1), (0, 1))


def min_eigenvalue(h):
    n = h.shape[0]
    if n == 1:
        return h[0, 0].real
    hm = np.moveaxis(h, (0, 1), (-2, -1))
    return np.linalg.eigvalsh(hm)[..., 0]


def positivity_margin(w, bg=None):
    """Smallest eigenvalue over the grid of the Hermitian matrix of a real 2-form."""
    return float(np.min(min_eigenvalue(hermitian_matrix(w))))


# ---------------------------------------------------------------- densities


@dataclass(frozen=True, eq=False)
class DensityFunction:
    """Normalized real density ``F`` with its integral check."""

    F: FormField
    reference: str
    ratio: float
    shift: float

    @property
    def values(self):
        return self.F.values[0]


def normalize_density(f_raw, bg, reference="omega_omega_bar"):
    """Shift ``f_raw`` so that ``int e^F dV = int dV`` for the chosen reference volume.

    ``reference`` is ``omega_power`` (``omega^n``) or ``omega_omega_bar``
    (``Omega ^ conj(Omega)``).  On the flat torus both are constant multiples
    of ``vol`` so the shift agrees; the ratio is recomputed through the actual
    wedge as a check.
    """
    if f_raw.degree != 0 or not f_raw.real:
        raise ValueError("density must be a real scalar field")
    if reference == "omega_power":
        ref = bg.frame.omega
        for _ in range(bg.n - 1):
            ref = wedge(ref, bg.frame.omega)
    elif reference == "omega_omega_bar":
        ref = wedge(bg.Omega0, bg.Omega0.conj())
    else:
        raise ValueError(f"unknown reference {reference!r}")
    vals = f_raw.values[0]
    top = vals.max(initial=0.0)
    shift = top + math.log(float(np.mean(np.exp(vals - top))))
    F = FormField.scalar(bg.grid, vals - shift, real=True)
    eF = FormField.scalar(bg.grid, np.exp(F.values[0]), real=True)
    num = integrate_top(wedge_constant(eF, ref))
    den = ref.top() * (2 * np.pi) ** bg.m
    return DensityFunction(F, reference, float(abs(num / den)), float(shift))


def dealias_mask(grid, rule="two_thirds"):
    """Spectral mask of a dealiasing rule.

    ``two_thirds`` keeps ``|k_a| <= N_a / 3`` on every axis; ``band`` keeps
    every mode without a Nyquist index; ``none`` keeps everything.
    """
    if rule == "none":
        return np.ones(grid.shape, dtype=bool)
    if rule == "band":
        return grid.band_mask
    if rule != "two_thirds":
        raise ValueError(f"unknown dealiasing rule {rule!r}")
    mask = np.ones(grid.shape, dtype=bool)
    for a, (s, k) in enumerate(zip(grid.sizes, grid.wavenumbers)):
        ax = 3 * np.abs(k) <= s
        shp = [1] * grid.m
        shp[a] = s
        mask &= ax.reshape(shp)
    return mask


def dealiased(values, grid, rule="two_thirds"):
    """Filter a real scalar array with :func:`dealias_mask`."""
    from .torus_calculus import _fft, _ifft

    spec = _fft(np.asarray(values)[None], grid.m)[0]
    return _ifft((spec * dealias_mask(grid, rule))[None], grid.m)[0].real

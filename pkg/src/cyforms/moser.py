"""Moser isotopy for the straight-line family ``omega_t = omega + t d(alpha)``.

The vector field solves ``iota_X omega_t = -alpha``; with ``W_t`` the
coefficient matrix of ``omega_t`` (``omega_t(u, v) = u^T W_t v``) this is
``W_t X = alpha`` pointwise.  Its flow ``phi_t`` satisfies
``phi_t^* omega_t = omega``.

Two integrators are provided.

``transport`` (default, whole grid): the displacement ``w`` of the map,
``x -> x + w(x)``, obeys the transport equation
``dw/dtau = -(I + Dw) X_tau`` in the starting time ``tau`` of the flow.
Integrating from ``tau = 1`` (``w = 0``) down to ``0`` gives ``phi_1``;
integrating from ``0`` up to ``1`` gives ``phi_1^{-1}``.  Space is
pseudo-spectral (``Dw`` by FFT, Nyquist band removed at every stage) and
time is classical RK4, so the velocity is only ever needed at grid nodes.

``particles`` (point subsets): RK4 on ``y' = X(y)`` together with the
variational equation ``J' = DX(y) J``, using off-grid evaluation of
``alpha``, ``d alpha`` and their derivatives.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import JacobianDegenerate, SingularOmega
from .exterior_algebra import AlgebraicForm, basis, exterior_power
from .kahler import dc_operator, positivity_margin
from .torus_calculus import (
    TWO_PI,
    FormField,
    OffgridEvaluator,
    evaluate_offgrid,
    exterior_derivative,
)

log = logging.getLogger(__name__)

JACOBIAN_FLOOR = 1e-6


def primitive_potential(phi, bg=None):
    """Real 1-form ``alpha = (i/2)(dbar phi - d phi) = d^c phi / 2`` with ``d alpha = i ddbar phi``."""
    if phi.degree != 0 or not phi.real:
        raise ValueError("phi must be a real scalar field")
    return dc_operator(phi) * 0.5


def two_form_matrix(coeffs, m):
    """Antisymmetric ``(..., m, m)`` matrices from 2-form coefficients of shape ``(C(m,2), ...)``."""
    coeffs = np.asarray(coeffs)
    B2 = basis(m, 2)
    W = np.zeros(coeffs.shape[1:] + (m, m), dtype=coeffs.dtype)
    for c, (a, b) in enumerate(B2.indices):
        W[..., a, b] = coeffs[c]
        W[..., b, a] = -coeffs[c]
    return W


def matrix_two_form(W):
    """Inverse of :func:`two_form_matrix`: coefficients ``(C(m,2), ...)``."""
    m = W.shape[-1]
    return np.stack([W[..., a, b] for a, b in basis(m, 2).indices])


@dataclass(frozen=True, eq=False)
class MoserPath:
    """``omega_t = omega + t d(alpha)`` for ``t`` in ``[0, 1]``."""

    alpha: FormField
    dalpha: FormField
    bg: object

    @classmethod
    def from_potential(cls, phi, bg):
        alpha = primitive_potential(phi, bg)
        return cls(alpha, exterior_derivative(alpha), bg)

    @classmethod
    def from_alpha(cls, alpha, bg):
        if alpha.degree != 1:
            raise ValueError("alpha must be a 1-form")
        return cls(alpha, exterior_derivative(alpha), bg)

    @property
    def grid(self):
        return self.alpha.grid

    def omega_t(self, t):
        return self.bg.omega_field() + self.dalpha * float(t)

    def omega_end(self):
        return self.omega_t(1.0)

    def matrices(self, t):
        """``W_t`` at every grid point, shape ``(*grid, m, m)``."""
        m = self.grid.m
        W0 = self.bg.frame.omega_matrix
        return W0 + float(t) * two_form_matrix(self.dalpha.values.real, m)

    def cohomology_drift(self):
        """Largest zero-mode amplitude of ``d alpha`` (zero for an exact family)."""
        return float(np.max(np.abs(self.dalpha.amplitudes.reshape(self.dalpha.ncomp, -1)[:, 0])))

    def margins(self, samples=(0.0, 0.5, 1.0)):
        return [positivity_margin(self.omega_t(t)) for t in samples]


def _solve_pointwise(W, rhs):
    det = np.linalg.det(W)
    if np.min(np.abs(det)) < 1e-12:
        raise SingularOmega(f"omega_t degenerate: min |det W| = {np.min(np.abs(det)):.2e}")
    return np.linalg.solve(W, rhs[..., None])[..., 0]


def moser_vector_field(t, path, bg=None):
    """Components ``X^a`` of the Moser field at grid nodes, as a degree-1 container field.

    The returned field stores vector components in the slots of the
    coordinate 1-forms; it is a vector field, not a 1-form.
    """
    W = path.matrices(t)
    a = np.moveaxis(path.alpha.values.real, 0, -1)
    X = _solve_pointwise(W, a)
    return FormField(path.grid, 1, np.moveaxis(X, -1, 0), real=True)


def contraction_residual(X, t, path):
    """``|| iota_X omega_t + alpha ||_inf`` at grid nodes."""
    W = path.matrices(t)
    Xv = np.moveaxis(X.values, 0, -1)
    iota = np.einsum("...a,...ab->...b", Xv, W)
    return float(np.max(np.abs(iota + np.moveaxis(path.alpha.values, 0, -1))))


@dataclass
class FlowMap:
    """Time-one map of the Moser flow (or its inverse) sampled at points.

    ``positions`` has shape ``(P, m)`` and is wrapped into ``[0, 2 pi)``;
    ``jacobians`` has shape ``(P, m, m)`` with ``J[p, i, j] = d phi_i / d x_j``.
    For whole-grid maps ``points`` are the grid nodes in C order and
    ``displacement`` holds the periodic part ``phi(x) - x`` as ``(m, *grid)``.
    """

    direction: str
    grid: object
    points: np.ndarray
    positions: np.ndarray
    jacobians: np.ndarray
    ode_steps: int
    method: str
    displacement: np.ndarray = None
    stats: dict = field(default_factory=dict)

    @property
    def on_grid(self):
        return self.displacement is not None

    def det_min(self):
        return float(np.min(np.linalg.det(self.jacobians)))

    def unwrapped(self):
        """Mapped points without periodic wrapping, ``x + w(x)``."""
        if self.displacement is not None:
            return self.points + np.moveaxis(self.displacement, 0, -1).reshape(-1, self.grid.m)
        d = self.positions - self.points
        return self.points + (d + np.pi) % TWO_PI - np.pi


# -------------------------------------------------------- transport solver


class _SpectralGrad:
    """Real-to-complex FFT gradients on a grid, Nyquist band removed."""

    def __init__(self, grid):
        self.grid = grid
        m = grid.m
        self.axes = tuple(range(1, m + 1))
        shape = grid.shape
        ks = []
        for a in range(m):
            k = grid.band_wavenumbers[a].astype(float)
            if a == m - 1:
                k = k[: shape[a] // 2 + 1]
            shp = [1] * m
            shp[a] = k.size
            ks.append(k.reshape(shp))
        self.ik = [1j * k for k in ks]
        mask = np.ones(shape[:-1] + (shape[-1] // 2 + 1,), dtype=bool)
        for a in range(m):
            s = shape[a]
            n_ax = s if a < m - 1 else s // 2 + 1
            ax = np.ones(n_ax, dtype=bool)
            ax[s // 2] = False
            shp = [1] * m
            shp[a] = n_ax
            mask &= ax.reshape(shp)
        self.mask = mask

    def rfft(self, v):
        from .torus_calculus import _WORKERS

        return sfft.rfftn(v, axes=self.axes, workers=_WORKERS)

    def irfft(self, s):
        from .torus_calculus import _WORKERS

        return sfft.irfftn(s, s=self.grid.shape, axes=self.axes, workers=_WORKERS)

    def project(self, v):
        return self.irfft(self.rfft(v) * self.mask)

    def jacobian_part(self, w):
        """``Dw[i, j] = d w_i / d x_j`` with shape ``(m, m, *grid)`` and band-projected ``w``."""
        return self.jacobian_from_spec(self.rfft(w) * self.mask)

    def jacobian_from_spec(self, spec):
        m = self.grid.m
        full = np.empty((m, m) + spec.shape[1:], dtype=complex)
        for j in range(m):
            np.multiply(spec, self.ik[j], out=full[:, j])
        from .torus_calculus import _WORKERS

        return sfft.irfftn(full, s=self.grid.shape, axes=tuple(range(2, m + 2)), workers=_WORKERS)


def _velocity_cache(path):
    """``X(t)`` on the grid for the straight-line family, memoized per ``t``.

    When ``S = W0^{-1} d(alpha)`` is symmetric at every point (true for a
    J-invariant ``d(alpha)`` such as ``i ddbar phi`` on the standard frame),
    one batched ``eigh`` gives ``X(t) = U diag(1/(1 + t mu)) U^T W0^{-1} alpha``
    for every ``t``.  Otherwise each new ``t`` costs a pointwise solve.
    """
    cache = {}
    m = path.grid.m
    a = np.moveaxis(path.alpha.values.real, 0, -1)
    W0 = path.bg.frame.omega_matrix
    W0inv = np.linalg.inv(W0)
    S = W0inv @ two_form_matrix(path.dalpha.values.real, m)
    scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))
    spectral = float(np.max(np.abs(S - np.swapaxes(S, -1, -2)), initial=0.0)) <= 1e-12 * scale
    if spectral:
        mu, U = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
        c = np.einsum("...ji,...j->...i", U, a @ W0inv.T)
        det0 = abs(np.linalg.det(W0))
    del S

    def X(t):
        key = round(float(t), 15)
        hit = cache.get(key)
        if hit is None:
            if spectral:
                fac = 1.0 + float(t) * mu
                dmin = det0 * float(np.min(np.abs(np.prod(fac, axis=-1))))
                if dmin < 1e-12:
                    raise SingularOmega(f"omega_t degenerate: min |det W| = {dmin:.2e}")
                hit = np.moveaxis(np.einsum("...ij,...j->...i", U, c / fac), -1, 0)
            else:
                hit = np.moveaxis(_solve_pointwise(path.matrices(t), a), -1, 0)
            cache[key] = hit
            if len(cache) > 4:
                cache.pop(next(iter(cache)))
        return hit

    return X


def _transport_flow(path, steps, direction):
    grid = path.grid
    m = grid.m
    ops = _SpectralGrad(grid)
    X = _velocity_cache(path)

    # the displacement lives in rfft space between stages, already band-limited
    def rhs(tau, ws):
        D = ops.jacobian_from_spec(ws)
        v = X(tau)
        out = -(v + np.einsum("ij...,j...->i...", D, v))
        return ops.rfft(out) * ops.mask

    ws = np.zeros((m,) + ops.mask.shape, dtype=complex)
    if direction == "forward":
        tau, h = 1.0, -1.0 / steps
    else:
        tau, h = 0.0, 1.0 / steps
    for i in range(steps):
        k1 = rhs(tau, ws)
        k2 = rhs(tau + h / 2, ws + (h / 2) * k1)
        k3 = rhs(tau + h / 2, ws + (h / 2) * k2)
        k4 = rhs(tau + h, ws + h * k3)
        ws = ws + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        tau = (1.0 - (i + 1) / steps) if direction == "forward" else (i + 1) / steps
    D = ops.jacobian_from_spec(ws)
    w = ops.irfft(ws)
    pts = grid.points()
    disp = np.moveaxis(w, 0, -1).reshape(-1, m)
    J = np.eye(m) + np.moveaxis(D, (0, 1), (-2, -1)).reshape(-1, m, m)
    return pts, np.mod(pts + disp, TWO_PI), J, w


# --------------------------------------------------------- particle solver


class _OffgridPath:
    """Off-grid values of ``alpha``, ``d alpha`` and their first derivatives."""

    def __init__(self, path, method="auto"):
        g = path.grid
        m = g.m
        self.m = m
        self.W0 = path.bg.frame.omega_matrix
        a = path.alpha.spectral
        da = path.dalpha.spectral
        isym = [1j * s for s in g.symbols]
        # order: alpha (m), dalpha (C), d_c alpha (m*m), d_c dalpha (m*C)
        parts = [a, da] + [isym[c] * a for c in range(m)] + [isym[c] * da for c in range(m)]
        self.nc = da.shape[0]
        self.ev = OffgridEvaluator(g, np.concatenate(parts, axis=0), real=True, method=method)

    def field(self, t, y, with_grad=True):
        m, nc = self.m, self.nc
        v = self.ev(y)
        a = v[:m].T
        W = self.W0 + t * two_form_matrix(v[m:m + nc], m)
        Xv = _solve_pointwise(W, a)
        if not with_grad:
            return Xv, None
        o = m + nc
        da = v[o:o + m * m].reshape(m, m, -1)
        o += m * m
        dW = v[o:].reshape(m, nc, -1)
        # W dX/dx_c = d_c alpha - t (d_c W) X
        rhs = np.empty((y.shape[0], m, m))
        for c in range(m):
            Wc = two_form_matrix(dW[c], m)
            rhs[:, :, c] = da[c].T - t * np.einsum("pab,pb->pa", Wc, Xv)
        DX = np.linalg.solve(W, rhs)
        return Xv, DX


def _particle_flow(path, points, steps, direction, method="auto"):
    m = path.grid.m
    ev = _OffgridPath(path, method)
    y = np.array(points, dtype=float).reshape(-1, m)
    y0 = y.copy()
    J = np.broadcast_to(np.eye(m), (y.shape[0], m, m)).copy()
    if direction == "forward":
        t, h = 0.0, 1.0 / steps
    else:
        t, h = 1.0, -1.0 / steps

    def f(t, y, J):
        X, DX = ev.field(t, y)
        return X, DX @ J

    for i in range(steps):
        a1, b1 = f(t, y, J)
        a2, b2 = f(t + h / 2, y + h / 2 * a1, J + h / 2 * b1)
        a3, b3 = f(t + h / 2, y + h / 2 * a2, J + h / 2 * b2)
        a4, b4 = f(t + h, y + h * a3, J + h * b3)
        y = y + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        J = J + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        t = (i + 1) / steps if direction == "forward" else 1.0 - (i + 1) / steps
    return y0, np.mod(y, TWO_PI), J


def integrate_flow(path, bg=None, steps=64, direction="forward", method="transport", points=None):
    """RK4 integration of the Moser isotopy; returns a :class:`FlowMap`.

    ``forward`` gives ``phi = phi_1`` with ``phi^* omega_1 = omega``;
    ``inverse`` gives ``phi^{-1}``.  ``method='transport'`` covers the whole
    grid; ``method='particles'`` follows ``points`` (grid nodes by default).
    """
    if steps < 16:
        raise ValueError("at least 16 RK4 steps are required")
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    t0 = time.perf_counter()
    disp = None
    if not np.any(path.alpha.values):
        # zero field: the flow is the identity, which RK4 reproduces exactly
        m = path.grid.m
        pts = path.grid.points() if points is None else np.asarray(points, dtype=float).reshape(-1, m)
        J = np.broadcast_to(np.eye(m), (pts.shape[0], m, m)).copy()
        disp = np.zeros((m,) + path.grid.shape) if points is None else None
        stats = {"det_min": 1.0, "det_max": 1.0, "seconds": time.perf_counter() - t0}
        return FlowMap(direction, path.grid, pts, np.mod(pts, TWO_PI), J, steps, method, disp, stats)
    if method == "transport":
        if points is not None:
            raise ValueError("transport integrates the whole grid; use method='particles' for point sets")
        pts, pos, J, disp = _transport_flow(path, steps, direction)
    elif method == "particles":
        pts = path.grid.points() if points is None else np.asarray(points, dtype=float)
        pts, pos, J = _particle_flow(path, pts, steps, direction)
    else:
        raise ValueError(f"unknown method {method!r}")
    det = np.linalg.det(J)
    dmin = float(np.min(det))
    if dmin < JACOBIAN_FLOOR:
        raise JacobianDegenerate(f"det(J) fell to {dmin:.3e}")
    stats = {"det_min": dmin, "det_max": float(np.max(det)), "seconds": time.perf_counter() - t0}
    log.info("%s flow (%s, %d steps): det in [%.6f, %.6f]", direction, method, steps, dmin, stats["det_max"])
    return FlowMap(direction, path.grid, pts, pos, J, steps, method, disp, stats)


# --------------------------------------------------------------- pullbacks


def _apply_exterior_power(J, coeffs, k, chunk=4096):
    """``L(J)^T c`` per point, for ``J`` of shape ``(P, m, m)`` and ``coeffs`` of shape ``(C, P)``."""
    P = J.shape[0]
    out = np.empty(coeffs.shape, dtype=np.result_type(coeffs, float))
    for s in range(0, P, chunk):
        L = exterior_power(J[s:s + chunk], k)
        out[:, s:s + chunk] = np.einsum("pij,ip->jp", L, coeffs[:, s:s + chunk])
    return out


def pullback_form(f, flow, evaluate=None):
    """``(phi^* f)(x) = Lambda^k(J(x))^T f(phi(x))`` at the flow's sample points.

    A constant :class:`AlgebraicForm` needs no evaluation.  A
    :class:`FormField` is evaluated at the mapped positions with
    :func:`evaluate_offgrid` (``evaluate`` overrides its keyword options).
    For whole-grid flows the result is a :class:`FormField`, otherwise a
    ``(C, P)`` coefficient array.
    """
    m = flow.jacobians.shape[-1]
    P = flow.jacobians.shape[0]
    if isinstance(f, AlgebraicForm):
        k = f.degree
        vals = np.broadcast_to(f.coeffs[:, None], (f.coeffs.size, P))
        real = f.is_real()
    else:
        k = f.degree
        vals = evaluate_offgrid(f, flow.positions, **(evaluate or {}))
        real = f.real
    out = _apply_exterior_power(flow.jacobians, vals, k)
    if real:
        out = out.real
    if flow.on_grid:
        grid = flow.grid
        return FormField(grid, k, out.reshape((out.shape[0],) + grid.shape), real=real)
    return out


def symplectomorphism_residual(flow, path, bg=None):
    """``||phi^* omega_1 - omega||_inf / ||omega||_inf`` (forward) or ``||phi^{-1 *} omega - omega_1||`` (inverse)."""
    bg = bg or path.bg
    om = bg.frame.omega
    scale = om.max_abs()
    if flow.direction == "forward":
        pulled = pullback_form(path.omega_end(), flow)
        target = om.coeffs.real.reshape(-1, 1)
    else:
        pulled = pullback_form(om, flow)
        wt = path.omega_end()
        if flow.on_grid:
            target = wt.values.reshape(wt.ncomp, -1)
        else:
            target = evaluate_offgrid(wt, flow.points)
    vals = pulled.values.reshape(pulled.ncomp, -1) if isinstance(pulled, FormField) else pulled
    return float(np.max(np.abs(vals - target)) / scale)


def compose_positions(outer, inner_positions):
    """``outer(p)`` for arbitrary points, using the periodic displacement of a whole-grid flow."""
    if outer.displacement is None:
        raise ValueError("composition needs a whole-grid flow")
    grid = outer.grid
    disp = FormField(grid, 1, outer.displacement, real=True)
    d = evaluate_offgrid(disp, inner_positions)
    return np.mod(inner_positions + d.T, TWO_PI)


def round_trip_error(forward, inverse):
    """``max |phi(phi^{-1}(x)) - x|`` over the grid (periodic distance)."""
    back = compose_positions(forward, inverse.positions)
    diff = (back - inverse.points + np.pi) % TWO_PI - np.pi
    return float(np.max(np.abs(diff)))


def volume_identity_residual(flow, G):
    """``max |det(J) e^{G(phi(x))} - 1|`` for a forward flow of a Monge-Ampere path."""
    from .monge_ampere import density_values

    eG = FormField.scalar(flow.grid, np.exp(density_values(G)), real=True)
    vals = evaluate_offgrid(eG, flow.positions)[0]
    return float(np.max(np.abs(np.linalg.det(flow.jacobians) * vals - 1.0)))


def flow_dump_bytes(flow):
    """Raw little-endian doubles: per point ``m`` positions then ``m*m`` Jacobian entries (row major)."""
    P, m = flow.positions.shape
    rec = np.concatenate([flow.positions, flow.jacobians.reshape(P, m * m)], axis=1)
    return rec.astype("<f8").tobytes()

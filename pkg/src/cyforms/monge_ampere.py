"""Damped Newton solver for ``(omega + i ddbar phi)^n = e^G omega^n`` on the flat torus.

The residual is ``det(I + 2 H(phi)) - e^G`` with ``H`` the complex Hessian.
Each Newton step solves the linearization ``tr(adj(h) 2 H(delta)) = -R`` by
right-preconditioned GMRES; the preconditioner is the inverse of the
flat operator ``(1/2) Laplacian`` on mean-zero band-limited functions.  An
extra scalar unknown absorbs the constant part of the right hand side, so
the preconditioned system is nonsingular.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import MaxIterations, PositivityLost
from .kahler import (
    DensityFunction,
    complex_hessian,
    dealiased,
    hermitian_adjugate,
    hermitian_det,
    hermitian_to_form,
    min_eigenvalue,
)
from .torus_calculus import FormField, _fft, _ifft

log = logging.getLogger(__name__)


@dataclass
class MASolveConfig:
    tol_residual: float = 1e-10
    max_newton: int = 30
    damping: float = 0.5
    min_step: float = 1.0 / 64
    positivity_floor: float = 0.05
    linear_tol: float = 1e-12
    linear_maxiter: int = 20
    dealias: str = "two_thirds"

    def __post_init__(self):
        for name in ("tol_residual", "damping", "min_step", "positivity_floor", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tol_residual < 1e-13:
            raise ValueError("tol_residual below 1e-13 is not attainable in double precision")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if self.dealias not in ("two_thirds", "band", "none"):
            raise ValueError(f"unknown dealiasing rule {self.dealias!r}")
        if self.max_newton < 1 or self.linear_maxiter < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class MASolveReport:
    iterations: int
    residual: float
    positivity_margin: float
    mean_phi: float
    history: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)


def density_values(G):
    """Point values of a density given as :class:`DensityFunction`, scalar field or array."""
    if isinstance(G, DensityFunction):
        return G.values
    if isinstance(G, FormField):
        return G.values[0]
    return np.asarray(G, dtype=float)


class _MAProblem:
    def __init__(self, G, bg, dealias="two_thirds"):
        self.bg = bg
        self.grid = bg.grid
        g = self.grid
        self.target = dealiased(np.exp(density_values(G)), g, dealias)
        k2 = sum(s ** 2 for s in g.symbols)
        inv = np.zeros(g.shape)
        band = g.band_mask & (k2 > 0)
        inv[band] = -2.0 / k2[band]
        self.inv_half_lap = inv

    def hessian_matrix(self, phi_vals):
        spec = _fft(phi_vals[None], self.grid.m)[0]
        n = self.grid.n
        h = 2.0 * complex_hessian(spec, self.grid)
        for j in range(n):
            h[j, j] += 1.0
        return h

    def residual(self, phi_vals):
        h = self.hessian_matrix(phi_vals)
        R = hermitian_det(h) - self.target
        return h, R

    def linear_apply(self, adj, delta_vals):
        H = complex_hessian(_fft(delta_vals[None], self.grid.m)[0], self.grid)
        return 2.0 * np.einsum("kj...,jk...->...", adj, H).real

    def precondition(self, y):
        spec = _fft(y[None], self.grid.m)[0] * self.inv_half_lap
        return _ifft(spec[None], self.grid.m)[0].real

    def split_band(self, y):
        """``(band part, out-of-band part)`` of a real array."""
        spec = _fft(y[None], self.grid.m)[0]
        mask = self.grid.band_mask
        inside = _ifft((spec * mask)[None], self.grid.m)[0].real
        return inside, y - inside


def ma_residual(phi, G, bg, dealias="two_thirds"):
    """Sup norm and pointwise field of ``((omega + i ddbar phi)^n - e^G omega^n) / omega^n``.

    ``e^G`` is formed pointwise and filtered with ``dealias`` (see
    :func:`cyforms.kahler.dealias_mask`).
    """
    prob = _MAProblem(G, bg, dealias)
    _, R = prob.residual(phi.values[0])
    return float(np.max(np.abs(R))), FormField.scalar(bg.grid, R, real=True)


def _newton_direction(prob, h, R, cfg):
    shape = prob.grid.shape
    N = prob.grid.npoints
    adj = hermitian_adjugate(h)
    count = [0]

    def matvec(y):
        # band modes carry the preconditioned Newton system, the remaining
        # modes (Nyquist indices) are inert and mapped to themselves
        y = y.reshape(shape)
        inside, outside = prob.split_band(y)
        out = prob.split_band(prob.linear_apply(adj, prob.precondition(inside)))[0]
        return (out + inside.mean() + outside).reshape(-1)

    def cb(_):
        count[0] += 1

    A = LinearOperator((N, N), matvec=matvec, dtype=float)
    rhs = -prob.split_band(R)[0].reshape(-1)
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    y, info = gmres(A, rhs, rtol=cfg.linear_tol, atol=0.0, restart=60, maxiter=cfg.linear_maxiter,
                    callback=cb, callback_type="pr_norm")
    if info != 0:
        resid = np.linalg.norm(matvec(y) - rhs) / scale
        log.warning("GMRES stopped at relative residual %.2e", resid)
    return prob.precondition(y.reshape(shape)), count[0]


def solve_monge_ampere(G, bg, cfg=None):
    """Solve for mean-zero ``phi``; returns ``(phi_field, report)``.

    ``iterations`` counts residual evaluations of accepted iterates, so the
    trivial density ``G = 0`` reports one iteration.
    """
    cfg = cfg or MASolveConfig()
    t0 = time.perf_counter()
    prob = _MAProblem(G, bg, cfg.dealias)
    phi = np.zeros(bg.grid.shape)
    h, R = prob.residual(phi)
    r = float(np.max(np.abs(R)))
    margin = float(np.min(min_eigenvalue(h)))
    history, steps, lin = [r], [], []
    newton = 0
    while r > cfg.tol_residual:
        if newton >= cfg.max_newton:
            raise MaxIterations(f"no convergence after {newton} Newton steps (residual {r:.3e})")
        newton += 1
        delta, nlin = _newton_direction(prob, h, R, cfg)
        lin.append(nlin)
        s = 1.0
        lost_positivity = False
        while True:
            cand = phi + s * delta
            cand -= cand.mean()
            hc, Rc = prob.residual(cand)
            mc = float(np.min(min_eigenvalue(hc)))
            rc = float(np.max(np.abs(Rc)))
            if mc < cfg.positivity_floor:
                lost_positivity = True
            elif rc < r or rc <= cfg.tol_residual:
                break
            s *= cfg.damping
            if s < cfg.min_step:
                if lost_positivity:
                    raise PositivityLost(f"line search cannot keep margin >= {cfg.positivity_floor}")
                raise MaxIterations(f"line search stalled at residual {r:.3e}")
        phi, h, R, r, margin = cand, hc, Rc, rc, mc
        history.append(r)
        steps.append(s)
        log.info("newton %d: residual %.3e step %.3g margin %.3f", newton, r, s, margin)
    report = MASolveReport(
        iterations=len(history),
        residual=r,
        positivity_margin=margin,
        mean_phi=float(phi.mean()),
        history=history,
        step_sizes=steps,
        linear_iterations=lin,
        wall_time=time.perf_counter() - t0,
    )
    return FormField.scalar(bg.grid, phi, real=True), report


def kahler_form(phi, bg):
    """``omega + i ddbar phi`` as a real 2-form field."""
    prob = _MAProblem.__new__(_MAProblem)
    prob.grid = bg.grid
    return hermitian_to_form(prob.hessian_matrix(phi.values[0]), bg.grid)


def linearized_solution(G, bg, dealias="two_thirds"):
    """Mean-zero solution of ``(1/2) Laplacian phi = e^G - 1``, the first-order approximation."""
    prob = _MAProblem(G, bg, dealias)
    return FormField.scalar(bg.grid, prob.precondition(prob.target - 1.0), real=True)

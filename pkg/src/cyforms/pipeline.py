"""Solver for ``(Omega + dd^s psi) ^ conj(Omega + dd^s psi) = e^F Omega ^ conj(Omega)``.

Construction: solve a Monge-Ampere equation for ``omega_1 = omega + i ddbar phi``
with density ``e^G``, move ``omega_1`` back to ``omega`` with the Moser
isotopy ``phi`` (``phi^* omega_1 = omega``) and set ``Omega~ = phi^* Omega``.
The pair ``(omega, Omega~)`` is then closed and compatible, and the achieved
density is ``F_ach = -G o phi``.  An outer fixed-point loop adjusts ``G``
until ``F_ach`` matches the requested ``F``; finally ``psi`` is recovered
from ``Omega~ - Omega`` by inverting dd^s mode by mode.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import CyFormsError, NotComplexType, OuterDiverged, StageError
from .exterior_algebra import hitchin_table
from .kahler import DensityFunction, dealiased, normalize_density
from .monge_ampere import MASolveConfig, density_values, solve_monge_ampere
from .moser import MoserPath, _apply_exterior_power, integrate_flow, pullback_form
from .torus_calculus import (
    FormField,
    _fft,
    _ifft,
    band_project,
    dd_symp,
    evaluate_offgrid,
    exterior_derivative,
    integrate_top,
    solve_ddsymp_potential,
    wedge_constant,
    wedge_fields,
)

log = logging.getLogger(__name__)


@dataclass
class NewEqSolveConfig:
    outer_max: int = 12
    outer_tol: float = 1e-7
    # the matched density has genuine content beyond N/3, so the inner solve
    # filters e^G with the Nyquist band rather than the 2/3 rule
    ma: MASolveConfig = field(default_factory=lambda: MASolveConfig(dealias="band"))
    moser_steps: int = 64
    flow_method: str = "transport"
    recovery_tol: float = 1e-9
    damping: float = 1.0
    fallback_damping: float = 0.5
    gauge_seed: int = None
    # how the density mismatch is moved by phi^{-1}: "taylor" expands it to
    # second order in the forward displacement, "flow" integrates the
    # inverse isotopy and evaluates off-grid
    composition: str = "taylor"
    inverse_steps: int = 16

    def __post_init__(self):
        if isinstance(self.ma, dict):
            self.ma = MASolveConfig(**self.ma)
        if self.outer_max < 1 or self.moser_steps < 16 or self.inverse_steps < 16:
            raise ValueError("outer_max must be >= 1 and moser_steps, inverse_steps >= 16")
        if self.composition not in ("taylor", "flow"):
            raise ValueError("composition must be 'taylor' or 'flow'")
        for name in ("outer_tol", "recovery_tol", "damping", "fallback_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.outer_tol < self.ma.tol_residual:
            raise ValueError("outer_tol must not be below the Monge-Ampere tolerance")


@dataclass
class NewEqCertificate:
    """Residuals of every clause of the equation, all nonnegative.

    ``stability_margin`` is, for ``n = 2``, the smallest pointwise
    :func:`stability_margin_2form` of ``Re`` and ``Im`` of ``Omega~``; for
    ``n = 3`` it is ``min(-lambda(Re Omega~) / |Re Omega~|^4)``.
    ``complex_structure_residual`` (``n = 3`` only) compares the
    reconstructed ``rho_hat`` with ``Im Omega~``.
    """

    n: int
    eq2_residual: float
    primitivity_residual: float
    closedness_residual: float
    exactness_residual: float
    stability_margin: float
    cohomology_drift: float
    pair_consistency: float
    complex_structure_residual: float = 0.0
    lambda_max: float = float("nan")

    def to_dict(self):
        return asdict(self)

    def check(self, bounds):
        """Names of the clauses violating ``bounds`` (empty when the certificate passes)."""
        failed = []
        for key, lim in bounds.items():
            if key == "stability_margin":
                if not self.stability_margin > lim:
                    failed.append(key)
            elif key == "lambda_max":
                if not self.lambda_max < lim:
                    failed.append(key)
            elif not getattr(self, key) <= lim:
                failed.append(key)
        return failed


def default_bounds(n, eq2=1e-5, relaxed=None):
    """Certificate bounds; ``relaxed`` replaces every residual bound by one value."""
    b = {
        "eq2_residual": eq2,
        "primitivity_residual": 1e-6,
        "exactness_residual": 1e-9,
        "closedness_residual": 1e-8,
        "cohomology_drift": 1e-8,
        "stability_margin": 0.0,
    }
    if n == 3:
        b["complex_structure_residual"] = 1e-5
        b["lambda_max"] = 0.0
    if relaxed is not None:
        for k in b:
            if k not in ("stability_margin", "lambda_max"):
                b[k] = relaxed
    return b


@dataclass
class SolveReport:
    outer_iterations: int
    outer_history: list
    ma_reports: list
    flow_stats: list
    timings: dict
    damping_used: float
    converged: bool

    def to_dict(self):
        d = asdict(self)
        d["ma_reports"] = [r if isinstance(r, dict) else r.to_dict() for r in self.ma_reports]
        return d


# --------------------------------------------------------------- pointwise


def _top(field):
    return field.values[0]


def achieved_density(Omega_t, bg):
    """``log(Omega~ ^ conj(Omega~) / Omega ^ conj(Omega))`` at grid nodes (real part)."""
    ratio = _top(wedge_fields(Omega_t, Omega_t.conj())) / bg.cn_ratio
    return np.log(ratio.real)


def two_form_margins(w):
    """Pointwise ``|top(w^{m/2})| / |w|^{m/2}`` for a real 2-form field."""
    m = w.grid.m
    p = w
    for _ in range(m // 2 - 1):
        p = wedge_fields(p, w)
    nrm = np.sqrt(np.sum(w.values.real ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(_top(p).real) / nrm ** (m // 2)
    return np.where(nrm > 0, out, 0.0)


def hitchin_fields(rho):
    """Pointwise ``K_rho`` ``(P, 6, 6)`` and ``lambda`` ``(P,)`` of a real 3-form field on ``T^6``."""
    vals = rho.values.real.reshape(rho.ncomp, -1)
    K = _kernels.hitchin_K_field(vals, hitchin_table())
    lam = np.einsum("pab,pba->p", K, K) / 6.0
    return K, lam


def stability_check(Omega_t, bg):
    """``(margin array on the grid, min margin, extras)`` as described in :class:`NewEqCertificate`."""
    n = bg.n
    if Omega_t.degree != n:
        raise ValueError("stability_check expects an n-form")
    re, im = Omega_t.real_part(), Omega_t.imag_part()
    extras = {}
    if n == 2:
        marg = np.minimum(two_form_margins(re), two_form_margins(im))
    elif n == 3:
        K, lam = hitchin_fields(re)
        nrm = np.sum(re.values.reshape(re.ncomp, -1) ** 2, axis=0)
        marg = (-lam / np.where(nrm > 0, nrm, 1.0) ** 2).reshape(bg.grid.shape)
        extras["lambda_max"] = float(lam.max())
        if lam.max() < 0:
            J = K / np.sqrt(-lam)[:, None, None]
            rho_hat = _apply_exterior_power(J, re.values.reshape(re.ncomp, -1), 3)
            extras["complex_structure_residual"] = float(np.max(np.abs(rho_hat - im.values.reshape(im.ncomp, -1))))
        else:
            extras["complex_structure_residual"] = float("inf")
    else:
        raise NotComplexType(f"no stability test for n = {n}")
    return marg, float(marg.min()), extras


def verify_certificate(psi, Omega_t, F, bg):
    """Recompute every residual from ``(psi, Omega~, F)`` alone.

    ``F`` may be raw; anything but a :class:`DensityFunction` is normalized
    against ``Omega ^ conj(Omega)`` first, as the solver does.
    """
    Om = bg.Omega_field()
    frame = bg.frame
    if not isinstance(F, DensityFunction):
        F = normalize_density(F if isinstance(F, FormField) else FormField.scalar(bg.grid, np.asarray(F, float), real=True), bg)
    Fv = density_values(F)
    vv = _top(wedge_fields(Om, Om.conj()))
    scale = float(np.max(np.abs(vv)))
    tt = wedge_fields(Omega_t, Omega_t.conj())
    eq2 = float(np.max(np.abs(_top(tt) - np.exp(Fv) * vv))) / scale
    om_n = bg.frame.omega
    for _ in range(bg.n - 1):
        om_n = om_n ^ bg.frame.omega
    ratio = _top(tt) / om_n.top()
    pair = float(np.max(np.abs(ratio - bg.omega_power_ratio * np.exp(Fv))))
    prim = wedge_constant(Omega_t, frame.omega).norm_inf() / (Omega_t.norm_inf() * frame.omega.max_abs())
    closed = exterior_derivative(Omega_t).norm_inf()
    exact = (Omega_t - Om - dd_symp(psi, frame)).norm_inf()
    I0 = integrate_top(wedge_fields(Om, Om.conj()))
    drift = abs(integrate_top(tt) - I0) / abs(I0)
    _, smin, extras = stability_check(Omega_t, bg)
    return NewEqCertificate(
        n=bg.n,
        eq2_residual=eq2,
        primitivity_residual=float(prim),
        closedness_residual=float(closed),
        exactness_residual=float(exact),
        stability_margin=smin,
        cohomology_drift=float(drift),
        pair_consistency=pair,
        complex_structure_residual=extras.get("complex_structure_residual", 0.0),
        lambda_max=extras.get("lambda_max", float("nan")),
    )


# ------------------------------------------------------------------ solver


def _renormalize(G):
    top = G.max()
    return G - (top + math.log(float(np.mean(np.exp(G - top)))))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except OuterDiverged:
        raise
    except CyFormsError as exc:
        raise StageError(name, exc) from exc


def _flow_pullback(G, bg, cfg, timings, ma_reports, flow_stats):
    t = time.perf_counter()
    phi, rep = _stage("monge_ampere", solve_monge_ampere, G, bg, cfg.ma)
    timings["monge_ampere"] += time.perf_counter() - t
    ma_reports.append(rep)
    path = MoserPath.from_potential(phi, bg)
    t = time.perf_counter()
    fwd = _stage("moser_forward", integrate_flow, path, bg, cfg.moser_steps, "forward", cfg.flow_method)
    timings["moser"] += time.perf_counter() - t
    flow_stats.append(fwd.stats)
    return pullback_form(bg.Omega0, fwd), path, fwd


def _inverse_flow(path, bg, cfg, timings, flow_stats):
    t = time.perf_counter()
    inv = _stage("moser_inverse", integrate_flow, path, bg, cfg.inverse_steps, "inverse", cfg.flow_method)
    timings["moser"] += time.perf_counter() - t
    flow_stats.append(inv.stats)
    return inv


def compose_inverse_taylor(values, fwd):
    """``f o phi^{-1}`` on the grid, second order in the displacement of ``phi``.

    With ``phi(x) = x + w(x)`` the inverse is ``x + u(x)`` where
    ``u = -w + (Dw) w + O(w^3)``; ``f`` is band-projected and expanded to
    second order about each node.  The error is ``O((|k| |w|)^3)`` relative
    to ``f``.
    """
    grid = fwd.grid
    m = grid.m
    w = fwd.displacement
    Dw = np.moveaxis(fwd.jacobians.reshape(grid.shape + (m, m)), (-2, -1), (0, 1)) - np.eye(m).reshape((m, m) + (1,) * m)
    u = -w + np.einsum("ij...,j...->i...", Dw, w)
    spec = _fft(np.asarray(values, dtype=float)[None], m)[0] * grid.band_mask
    s = grid.symbols
    pairs = [(j, l) for j in range(m) for l in range(j, m)]
    stack = np.empty((m + len(pairs),) + grid.shape, dtype=complex)
    for j in range(m):
        stack[j] = 1j * s[j] * spec
    for p, (j, l) in enumerate(pairs):
        stack[m + p] = -s[j] * s[l] * spec
    d = _ifft(stack, m).real
    out = _ifft(spec[None], m)[0].real + np.einsum("i...,i...->...", u, d[:m])
    for p, (j, l) in enumerate(pairs):
        out = out + (0.5 if j == l else 1.0) * u[j] * u[l] * d[m + p]
    return out


def solve_new_equation(F_raw, bg, cfg=None):
    """Return ``(psi, Omega~, certificate, report)``.

    ``F_raw`` is a real scalar field; it is first normalized against
    ``Omega ^ conj(Omega)``.  Raises :class:`OuterDiverged` when the density
    iteration fails to contract and :class:`StageError` for inner failures.
    """
    cfg = cfg or NewEqSolveConfig()
    t_start = time.perf_counter()
    timings = {"normalize": 0.0, "monge_ampere": 0.0, "moser": 0.0, "recovery": 0.0, "certificate": 0.0}
    t = time.perf_counter()
    D = normalize_density(F_raw, bg, "omega_omega_bar")
    F = D.values
    timings["normalize"] = time.perf_counter() - t
    G = _renormalize(-F)
    beta = cfg.damping
    history, ma_reports, flow_stats = [], [], []
    converged = False
    Omega_raw = None
    for it in range(cfg.outer_max):
        Omega_raw, path, fwd = _flow_pullback(G, bg, cfg, timings, ma_reports, flow_stats)
        F_ach = achieved_density(Omega_raw, bg)
        err = float(np.max(np.abs(F_ach - F)))
        history.append(err)
        log.info("outer %d: |F_ach - F| = %.3e", it + 1, err)
        if not np.isfinite(err):
            raise OuterDiverged("achieved density is not finite", history)
        if err <= cfg.outer_tol:
            converged = True
            break
        if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
            if beta == cfg.fallback_damping:
                raise OuterDiverged(f"density mismatch grew to {err:.3e}", history)
            beta = cfg.fallback_damping
        if it == cfg.outer_max - 1:
            break
        # F_ach = -G o phi, so G is corrected by the mismatch transported by phi^{-1}
        if cfg.composition == "taylor" and fwd.on_grid:
            corr = compose_inverse_taylor(F_ach - F, fwd)
        else:
            inv = _inverse_flow(path, bg, cfg, timings, flow_stats)
            mismatch = FormField.scalar(bg.grid, F_ach - F, real=True)
            corr = evaluate_offgrid(band_project(mismatch), inv.positions)[0].reshape(bg.grid.shape)
        # keep G inside the spectral window the Monge-Ampere residual resolves
        G = _renormalize(dealiased(G + beta * corr, bg.grid, cfg.ma.dealias))
    if not converged:
        raise OuterDiverged(f"no convergence in {cfg.outer_max} outer iterations", history)
    t = time.perf_counter()
    Omega_t = band_project(Omega_raw)
    target = Omega_t - bg.Omega_field()
    psi = _stage("recovery", solve_ddsymp_potential, target, bg.frame, cfg.recovery_tol, cfg.gauge_seed)
    timings["recovery"] = time.perf_counter() - t
    t = time.perf_counter()
    cert = verify_certificate(psi, Omega_t, D, bg)
    timings["certificate"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_start
    report = SolveReport(
        outer_iterations=len(history),
        outer_history=history,
        ma_reports=ma_reports,
        flow_stats=flow_stats,
        timings=timings,
        damping_used=beta,
        converged=converged,
    )
    return psi, Omega_t, cert, report


def certificate_json(cert, report=None, config=None):
    """JSON-ready dictionary: certificate fields, optional report and config echo."""
    out = {"certificate": cert.to_dict()}
    if report is not None:
        out["report"] = report.to_dict()
        out["timings"] = report.timings
    if config is not None:
        out["config"] = config
    return out

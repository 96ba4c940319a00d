"""Built-in invariant suites run by ``cyforms selftest``.

``quick`` covers the pointwise algebra, the sign of the symplectic star on
primitive middle-degree forms, the calculus identities, the dd^s inversion
and the identity pipeline.  ``full`` adds a small-amplitude end-to-end run on
``T^4`` and the RK4 self-convergence order of the Moser flow.

``mutate_star=True`` flips the sign of the symplectic star; it exists so the
harness can demonstrate that the sign-law check is sensitive.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .errors import NotCohomologous
from .exterior_algebra import (
    AlgebraicForm,
    SymplecticFrame,
    basis,
    omega_pairing,
    primitive_projector,
    random_form,
    symplectic_star,
    wedge,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    seconds: float


class _FlippedStarFrame(SymplecticFrame):
    def star_matrix(self, k):
        return -super().star_matrix(k)


def make_frame(n, mutate_star=False):
    std = SymplecticFrame.standard(n)
    if not mutate_star:
        return std
    return _FlippedStarFrame(std.omega_matrix)


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


# ------------------------------------------------------------- algebra checks


def algebra_residual(rng, n_random=1000, mutate_star=False):
    """Largest violation of wedge and star identities (exhaustive on R^4, random on R^6)."""
    worst = 0.0
    m = 4
    frame = make_frame(2, mutate_star)
    vol = frame.volume_normalizer
    elems = {k: [AlgebraicForm.basis_element(m, I) for I in basis(m, k).indices] for k in range(m + 1)}
    for p in range(m + 1):
        for q in range(m + 1 - p):
            for a in elems[p]:
                for b in elems[q]:
                    d = wedge(a, b) - wedge(b, a) * ((-1) ** (p * q))
                    worst = max(worst, d.max_abs())
    for k in range(m + 1):
        for a in elems[k]:
            sa = symplectic_star(a, frame)
            worst = max(worst, (symplectic_star(sa, frame) - a).max_abs())
            for b in elems[k]:
                lhs = wedge(a, symplectic_star(b, frame))
                worst = max(worst, (lhs - vol * omega_pairing(a, b, frame)).max_abs())
    for p in range(3):
        for q in range(3):
            for r in range(m + 1 - p - q):
                a, b, c = (elems[d][0] + elems[d][-1] for d in (p, q, r))
                worst = max(worst, (wedge(wedge(a, b), c) - wedge(a, wedge(b, c))).max_abs())
    m = 6
    frame = make_frame(3, mutate_star)
    vol = frame.volume_normalizer
    for i in range(n_random):
        p, q, r = rng.integers(0, 3, size=3)
        a, b, c = (random_form(m, int(d), rng) for d in (p, q, r))
        worst = max(worst, (wedge(wedge(a, b), c) - wedge(a, wedge(b, c))).max_abs())
        worst = max(worst, (wedge(a, b) - wedge(b, a) * ((-1) ** int(p * q))).max_abs())
        k = int(rng.integers(0, m + 1))
        x, y = random_form(m, k, rng), random_form(m, k, rng)
        worst = max(worst, (symplectic_star(symplectic_star(x, frame), frame) - x).max_abs())
        worst = max(worst, (wedge(x, symplectic_star(y, frame)) - vol * omega_pairing(x, y, frame)).max_abs())
    return worst


def primitive_sign_residual(rng, count=200, mutate_star=False):
    """``max |*eta - s_n eta|`` over random primitive n-forms, ``s_2 = -1`` and ``s_3 = +1``."""
    worst = 0.0
    for n, sign in ((2, -1.0), (3, 1.0)):
        frame = make_frame(n, mutate_star)
        P = primitive_projector(frame, n)
        m = 2 * n
        for _ in range(count):
            eta = AlgebraicForm(m, n, P @ random_form(m, n, rng).coeffs)
            err = (symplectic_star(eta, frame) - eta * sign).max_abs() / max(eta.max_abs(), 1e-300)
            worst = max(worst, err)
    return worst


def calculus_residual(rng, grids, per_degree=3, mutate_star=False):
    from .torus_calculus import (
        TorusGrid,
        codifferential_symplectic,
        exterior_derivative,
        random_bandlimited_field,
    )

    worst = 0.0
    for n, N in grids:
        g = TorusGrid(n, N)
        frame = make_frame(n, mutate_star)
        for k in range(g.m + 1):
            for _ in range(per_degree):
                f = random_bandlimited_field(g, k, rng, kmax=2, nmodes=4)
                scale = max(f.norm_inf(), 1.0)
                df = exterior_derivative(f) if k < g.m else None
                dsf = codifferential_symplectic(f, frame) if k > 0 else None
                if k <= g.m - 2:
                    worst = max(worst, exterior_derivative(df).norm_inf() / scale)
                if k >= 2:
                    worst = max(worst, codifferential_symplectic(dsf, frame).norm_inf() / scale)
                if 1 <= k <= g.m - 1:
                    anti = exterior_derivative(dsf) + codifferential_symplectic(df, frame)
                    worst = max(worst, anti.norm_inf() / scale)
    return worst


def ddsymp_lemma_residual(rng, n, N, count, tol=1e-10):
    """``(worst reproduction error, harmonic contamination rejected?)``."""
    from .torus_calculus import FormField, TorusGrid, dd_symp, random_bandlimited_field, solve_ddsymp_potential

    g = TorusGrid(n, N)
    frame = SymplecticFrame.standard(n)
    worst = 0.0
    for _ in range(count):
        target = dd_symp(random_bandlimited_field(g, n, rng, kmax=2, nmodes=3), frame)
        psi = solve_ddsymp_potential(target, frame, tol=tol)
        worst = max(worst, (dd_symp(psi, frame) - target).norm_inf())
    bad = target + FormField.constant(g, random_form(g.m, n, rng))
    try:
        solve_ddsymp_potential(bad, frame, tol=tol)
        rejected = False
    except NotCohomologous:
        rejected = True
    return worst, rejected


# --------------------------------------------------------------- driver


def _timed(name, fn, tol, compare="le"):
    t = time.perf_counter()
    try:
        value = float(fn())
        if compare == "le":
            ok = value <= tol
        elif compare == "ge":
            ok = value >= tol
        else:
            lo, hi = tol
            ok = lo <= value <= hi
    except Exception as exc:  # a crash is a failed invariant, reported by name
        value, ok = float("nan"), False
        name = f"{name} ({type(exc).__name__}: {exc})"
    return CheckResult(name, bool(ok), value, tol if not isinstance(tol, tuple) else list(tol), time.perf_counter() - t)


def _identity_pipeline():
    from .kahler import standard_background
    from .pipeline import NewEqSolveConfig, solve_new_equation
    from .torus_calculus import FormField

    bg = standard_background(2, 8)
    _, _, cert, rep = solve_new_equation(FormField.zeros(bg.grid, 0), bg, NewEqSolveConfig())
    vals = [cert.eq2_residual, cert.primitivity_residual, cert.closedness_residual,
            cert.exactness_residual, cert.cohomology_drift, rep.outer_iterations - 1]
    return max(vals) if cert.stability_margin > 0 else float("inf")


def _small_end_to_end():
    from .kahler import standard_background
    from .pipeline import NewEqSolveConfig, default_bounds, solve_new_equation
    from .torus_calculus import trig_field

    bg = standard_background(2, 16)
    F = trig_field(bg.grid, [(0.1, (1, 0, 0, 1), 0.0)])
    _, _, cert, _ = solve_new_equation(F, bg, NewEqSolveConfig())
    failed = cert.check(default_bounds(2))
    return len(failed)


def moser_order_ratio(eps=0.1, N=16, ref_steps=128):
    """Self-convergence ratio ``e(16) / e(32)`` of the symplectomorphism defect against ``ref_steps``."""
    from .kahler import normalize_density, standard_background
    from .monge_ampere import solve_monge_ampere
    from .moser import MoserPath, integrate_flow, pullback_form
    from .torus_calculus import trig_field

    bg = standard_background(2, N)
    G = normalize_density(trig_field(bg.grid, [(eps, (1, 0, 0, 1), 0.0)]), bg, "omega_power")
    phi, _ = solve_monge_ampere(G, bg)
    path = MoserPath.from_potential(phi, bg)
    end = path.omega_end()
    pulled = {s: pullback_form(end, integrate_flow(path, bg, s)) for s in (16, 32, ref_steps)}
    e16 = (pulled[16] - pulled[ref_steps]).norm_inf()
    e32 = (pulled[32] - pulled[ref_steps]).norm_inf()
    return e16 / e32


def run_selftest(level="quick", seed=0, mutate_star=False):
    """Run the suite; returns ``(exit_code, summary_dict)``."""
    if level not in ("quick", "full"):
        raise ValueError("level must be quick or full")
    t0 = time.perf_counter()
    rng = _rng(seed)
    checks = [
        _timed("algebra_identities", lambda: algebra_residual(rng, 200 if level == "quick" else 1000, mutate_star), 1e-13),
        _timed("primitive_star_sign", lambda: primitive_sign_residual(rng, 50 if level == "quick" else 200, mutate_star), 1e-12),
        _timed("calculus_identities", lambda: calculus_residual(
            rng, [(2, 8), (3, 8)] if level == "quick" else [(2, 16), (3, 8)], 1 if level == "quick" else 3, mutate_star), 1e-12),
    ]

    def lemma():
        worst, rejected = ddsymp_lemma_residual(rng, 2, 8, 5 if level == "quick" else 50)
        return worst if rejected else float("inf")

    checks.append(_timed("ddsymp_lemma", lemma, 1e-10))
    checks.append(_timed("identity_pipeline", _identity_pipeline, 1e-12))
    if level == "full":
        checks.append(_timed("end_to_end_n2_eps0.1", _small_end_to_end, 0))
        checks.append(_timed("moser_rk4_order", moser_order_ratio, (12.0, 20.0), compare="range"))
    passed = all(c.passed for c in checks)
    summary = {
        "level": level,
        "passed": passed,
        "backend": _kernels.backend(),
        "seconds": time.perf_counter() - t0,
        "checks": [asdict(c) for c in checks],
        "failed": [c.name for c in checks if not c.passed],
    }
    return (0 if passed else 4), summary

import numpy as np
import pytest

from cyforms.errors import OuterDiverged
from cyforms.exterior_algebra import AlgebraicForm
from cyforms.pipeline import (
    NewEqSolveConfig,
    achieved_density,
    certificate_json,
    default_bounds,
    solve_new_equation,
    stability_check,
    two_form_margins,
    verify_certificate,
)
from cyforms.torus_calculus import FormField, dd_symp, random_bandlimited_field, trig_field

# on 8^4 with 16 RK4 steps the density mismatch floors near 5e-7
FAST = NewEqSolveConfig(outer_tol=1e-6, moser_steps=16)


@pytest.fixture(scope="module")
def solved(bg2_small):
    F = trig_field(bg2_small.grid, [(0.1, (1, 0, 0, 1), 0.0)])
    return F, solve_new_equation(F, bg2_small, FAST)


def test_identity_case(bg2_small):
    psi, Om, cert, rep = solve_new_equation(FormField.zeros(bg2_small.grid, 0), bg2_small)
    assert rep.outer_iterations == 1 and rep.converged
    assert psi.norm_inf() == 0
    assert (Om - bg2_small.Omega_field()).norm_inf() < 1e-15
    for key in ("eq2_residual", "primitivity_residual", "closedness_residual", "exactness_residual", "cohomology_drift"):
        assert getattr(cert, key) <= 1e-12, key
    assert cert.stability_margin > 0


def test_small_case_certificate(solved):
    _, (psi, Om, cert, rep) = solved
    assert rep.converged and rep.outer_history[-1] <= FAST.outer_tol
    assert cert.check(default_bounds(2)) == []
    assert cert.pair_consistency == pytest.approx(2 * cert.eq2_residual, rel=1e-6)


def test_outer_history_contracts(solved):
    h = solved[1][3].outer_history
    assert all(b < 0.2 * a for a, b in zip(h, h[1:]))


def test_verify_recomputes_certificate(solved, bg2_small):
    F, (psi, Om, cert, _) = solved
    fresh = verify_certificate(psi, Om, F, bg2_small)
    a, b = cert.to_dict(), fresh.to_dict()
    for k, v in a.items():
        if isinstance(v, float) and np.isfinite(v):
            assert abs(v - b[k]) <= 1e-12, k


def test_perturbed_psi_breaks_equation(solved, bg2_small):
    F, (psi, Om, _, _) = solved
    frame = bg2_small.frame
    Om2 = bg2_small.Omega_field() + dd_symp(psi * 2.0, frame)
    bad = verify_certificate(psi * 2.0, Om2, F, bg2_small)
    assert bad.eq2_residual > 100 * default_bounds(2)["eq2_residual"]
    # exactness and closedness are structural and survive the perturbation
    assert bad.exactness_residual < 1e-12 and bad.closedness_residual < 1e-12


def test_random_psi_is_exact_and_closed(bg2_small, rng):
    frame = bg2_small.frame
    psi = random_bandlimited_field(bg2_small.grid, 2, rng, kmax=2) * 1e-3
    Om = bg2_small.Omega_field() + dd_symp(psi, frame)
    cert = verify_certificate(psi, Om, FormField.zeros(bg2_small.grid, 0), bg2_small)
    assert cert.exactness_residual < 1e-11 and cert.closedness_residual < 1e-12


def test_gauge_robustness(bg2_small):
    F = trig_field(bg2_small.grid, [(0.1, (1, 0, 0, 1), 0.0)])
    _, Om_a, _, _ = solve_new_equation(F, bg2_small, FAST)
    psi_b, Om_b, cert_b, _ = solve_new_equation(F, bg2_small, NewEqSolveConfig(outer_tol=1e-6, moser_steps=16, gauge_seed=11))
    assert (Om_a - Om_b).norm_inf() < 1e-10
    assert cert_b.exactness_residual < 1e-9


def test_achieved_density_of_background(bg2_small):
    assert np.max(np.abs(achieved_density(bg2_small.Omega_field(), bg2_small))) < 1e-15


def test_stability_examples(bg2_small, bg3_small):
    g = bg2_small.grid
    _, smin, _ = stability_check(bg2_small.Omega_field(), bg2_small)
    assert smin > 0
    dx1dx2 = FormField.constant(g, AlgebraicForm.basis_element(4, (0, 2)))
    assert np.max(two_form_margins(dx1dx2)) == 0
    _, smin, _ = stability_check(dx1dx2 * (1 + 1j), bg2_small)
    assert smin == 0
    _, smin3, ex = stability_check(bg3_small.Omega_field(), bg3_small)
    assert smin3 > 0 and ex["lambda_max"] < 0 and ex["complex_structure_residual"] < 1e-14
    flat = FormField.constant(bg3_small.grid, AlgebraicForm.basis_element(6, (0, 2, 4)))
    _, _, ex = stability_check(flat, bg3_small)
    assert ex["lambda_max"] >= 0 and ex["complex_structure_residual"] == float("inf")


def test_default_bounds():
    b = default_bounds(3, relaxed=1e-4)
    assert b["eq2_residual"] == b["exactness_residual"] == 1e-4
    assert b["stability_margin"] == 0 and b["lambda_max"] == 0
    assert "lambda_max" not in default_bounds(2)


def test_outer_diverged_when_floor_exceeds_tol(bg2_small):
    F = trig_field(bg2_small.grid, [(0.1, (1, 0, 0, 1), 0.0)])
    with pytest.raises(OuterDiverged) as info:
        solve_new_equation(F, bg2_small, NewEqSolveConfig(outer_tol=1e-9, moser_steps=16, outer_max=3))
    assert len(info.value.history) == 3


def test_certificate_json(solved):
    _, (_, _, cert, rep) = solved
    out = certificate_json(cert, rep, {"n": 2})
    assert out["certificate"]["n"] == 2 and out["config"] == {"n": 2}
    assert len(out["report"]["ma_reports"]) == rep.outer_iterations


@pytest.mark.parametrize("kw", [{"outer_max": 0}, {"moser_steps": 8}, {"composition": "exact"},
                                {"damping": 0}, {"outer_tol": 1e-12}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        NewEqSolveConfig(**kw)

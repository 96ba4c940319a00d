import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space
from scipy.special import i0

from cyforms.errors import DegreeError, NotCohomologous, NotInImage
from cyforms.exterior_algebra import AlgebraicForm, SymplecticFrame, basis, left_wedge_matrices, random_form, wedge_coeffs
from cyforms.kahler import holomorphic_volume
from cyforms.torus_calculus import (
    FormField,
    TorusGrid,
    band_project,
    codifferential_symplectic,
    dd_symp,
    ddsymp_symbol,
    evaluate_offgrid,
    evaluate_offgrid_forms,
    exterior_derivative,
    integrate_top,
    partial_derivative,
    random_bandlimited_field,
    solve_ddsymp_potential,
    spectral_transform,
    trig_field,
    wedge_constant,
    wedge_fields,
)

TWO_PI = 2 * math.pi
G4 = TorusGrid(2, 8)
FR2 = SymplecticFrame.standard(2)


def one_form_field(grid, comp_values):
    """1-form field from ``{axis: values}``."""
    vals = np.zeros((grid.m,) + grid.shape)
    for a, v in comp_values.items():
        vals[a] = v
    return FormField(grid, 1, vals, real=True)


# ---------------------------------------------------------------- grid


def test_grid_wavenumbers_cover_band():
    g = TorusGrid(2, (8, 10, 8, 12))
    for s, k in zip(g.sizes, g.wavenumbers):
        assert sorted(np.mod(k, s)) == list(range(s))
        assert np.max(np.abs(k)) == s // 2
    assert g.npoints == 8 * 10 * 8 * 12


@pytest.mark.parametrize("bad", [(2, 7), (2, 6), (4, 8)])
def test_grid_rejects_bad_sizes(bad):
    with pytest.raises(ValueError):
        TorusGrid(*bad)


# ---------------------------------------------------------- transforms


def test_round_trip(rng):
    f = random_bandlimited_field(G4, 2, rng)
    back = FormField(G4, 2, spectral=spectral_transform(f).spectral)
    assert np.max(np.abs(back.values - f.values)) < 1e-13 * max(1.0, f.norm_inf())
    assert spectral_transform(spectral_transform(f), "inverse").representation == "point"


def test_constant_is_zero_mode():
    f = FormField.constant(G4, AlgebraicForm.scalar(4, 2.5))
    amps = f.amplitudes.reshape(-1)
    assert amps[0] == pytest.approx(2.5)
    assert np.max(np.abs(amps[1:])) < 1e-15


def test_cos_has_two_conjugate_modes():
    f = trig_field(G4, [(1.0, (1, 0, 0, 0), 0.0)])
    amps = f.amplitudes[0]
    assert amps[1, 0, 0, 0] == pytest.approx(0.5)
    assert amps[-1, 0, 0, 0] == pytest.approx(0.5)
    amps = amps.copy()
    amps[1, 0, 0, 0] = amps[-1, 0, 0, 0] = 0
    assert np.max(np.abs(amps)) < 1e-15


def test_real_flag_rejects_complex_values():
    with pytest.raises(ValueError):
        FormField(G4, 0, np.full((1,) + G4.shape, 1j), real=True)


def test_integral_of_exponential_matches_bessel_quadrature():
    g = TorusGrid(2, 16)
    a, b = 0.3, 0.2
    F = trig_field(g, [(a, (1, 0, 0, 0), 0.0), (b, (0, 1, 1, 0), 0.0)])
    eF = FormField.scalar(g, np.exp(F.values[0]), real=True)
    val = integrate_top(wedge_constant(eF, FR2.volume_normalizer))
    # the two cosines depend on independent linear coordinates
    exact = TWO_PI ** 4 * i0(a) * i0(b)
    assert abs(val - exact) < 1e-10 * exact


def test_integrate_top_examples():
    vol = FormField.constant(G4, FR2.volume_normalizer)
    assert integrate_top(vol) == pytest.approx(TWO_PI ** 4)
    c = trig_field(G4, [(1.0, (1, 0, 0, 0), 0.0)])
    one_plus = FormField.scalar(G4, 1 + c.values[0], real=True)
    assert integrate_top(wedge_constant(one_plus, FR2.volume_normalizer)) == pytest.approx(TWO_PI ** 4)
    with pytest.raises(DegreeError):
        integrate_top(c)


# ---------------------------------------------------------- derivatives


def test_d_of_constant_is_zero():
    f = FormField.constant(G4, random_form(4, 2, np.random.default_rng(0)))
    assert exterior_derivative(f).norm_inf() < 1e-15


def test_d_single_mode():
    x1 = G4.coords()[0]
    f = one_form_field(G4, {1: np.sin(x1)})
    df = exterior_derivative(f)
    assert np.max(np.abs(df.component((0, 1)) - np.cos(x1))) < 1e-14
    others = [df.component(I) for I in basis(4, 2).indices if I != (0, 1)]
    assert np.max(np.abs(others)) < 1e-14


def test_partial_derivative_of_sin():
    x2 = G4.coords()[2]
    f = FormField.scalar(G4, np.sin(2 * x2), real=True)
    assert np.max(np.abs(partial_derivative(f, 2).values[0] - 2 * np.cos(2 * x2))) < 1e-13


def test_d_top_degree_raises():
    with pytest.raises(DegreeError):
        exterior_derivative(FormField.zeros(G4, 4))


def test_codifferential_of_scalar_is_zero(rng):
    f = random_bandlimited_field(G4, 0, rng)
    out = codifferential_symplectic(f, FR2)
    assert out.degree == 0 and out.norm_inf() == 0


def test_codifferential_of_omega_times_function():
    # [d^s, omega ^ .] = d on functions, and d^s g = 0
    g = trig_field(G4, [(1.0, (1, 0, 1, 0), 0.2), (0.3, (0, 2, 1, -1), 1.0)])
    lhs = codifferential_symplectic(wedge_constant(g, FR2.omega), FR2)
    assert (lhs - exterior_derivative(g)).norm_inf() < 1e-13


@settings(max_examples=12, deadline=None)
@given(k=st.integers(1, 3), seed=st.integers(0, 2 ** 32 - 1))
def test_anticommutation_property(k, seed):
    rng = np.random.default_rng(seed)
    f = random_bandlimited_field(G4, k, rng, kmax=3)
    a = dd_symp(f, FR2) + codifferential_symplectic(exterior_derivative(f), FR2)
    assert a.norm_inf() < 1e-12 * max(1.0, f.norm_inf())


@pytest.mark.parametrize("n,N", [(2, 16), (3, 8)])
def test_d_and_ds_square_to_zero(rng, n, N):
    g = TorusGrid(n, N)
    fr = SymplecticFrame.standard(n)
    for k in (1, 2, n):
        f = random_bandlimited_field(g, k, rng, kmax=3)
        scale = max(1.0, f.norm_inf())
        assert exterior_derivative(exterior_derivative(f)).norm_inf() < 1e-12 * scale
        if k >= 2:
            ds = codifferential_symplectic
            assert ds(ds(f, fr), fr).norm_inf() < 1e-12 * scale


def test_dd_symp_constant_and_closed(rng):
    c = FormField.constant(G4, random_form(4, 2, rng))
    assert dd_symp(c, FR2).norm_inf() < 1e-15
    psi = random_bandlimited_field(G4, 2, rng)
    assert exterior_derivative(dd_symp(psi, FR2)).norm_inf() < 1e-13 * max(1.0, psi.norm_inf())


def test_dd_symp_single_mode_matches_symbol(rng):
    k = np.array([1, -2, 0, 1])
    c = random_form(4, 2, rng).coeffs
    X = G4.coords()
    phase = np.exp(1j * sum(ki * xi for ki, xi in zip(k, X)))
    psi = FormField(G4, 2, c[:, None, None, None, None] * phase)
    expect = (ddsymp_symbol(FR2, 2, k[None])[0] @ c)[:, None, None, None, None] * phase
    assert np.max(np.abs(dd_symp(psi, FR2).values - expect)) < 1e-12


def test_exact_pairing_with_closed_form_vanishes(rng):
    psi = random_bandlimited_field(G4, 2, rng)
    Ob = FormField.constant(G4, holomorphic_volume(2).conj())
    val = integrate_top(wedge_fields(dd_symp(psi, FR2), Ob))
    assert abs(val) < 1e-10 * TWO_PI ** 4 * max(1.0, psi.norm_inf())


def closed_primitive_field(grid, frame, rng, nmodes=4):
    """Random real closed primitive middle-degree field, built mode by mode."""
    m, n = grid.m, grid.n
    E = left_wedge_matrices(m, n)
    L = wedge_coeffs(m, n, 2, np.eye(math.comb(m, n)), frame.omega.coeffs.real[:, None])
    spec = np.zeros((math.comb(m, n),) + grid.shape, dtype=complex)
    for _ in range(nmodes):
        k = rng.integers(-2, 3, size=m)
        if not k.any():
            continue
        K = np.einsum("a,arc->rc", k.astype(float), E)
        basis_ = null_space(np.vstack([K, L]))
        if basis_.shape[1] == 0:
            continue
        c = basis_ @ (rng.normal(size=basis_.shape[1]) + 1j * rng.normal(size=basis_.shape[1]))
        idx = tuple(int(ki) % s for ki, s in zip(k, grid.sizes))
        idx2 = tuple(int(-ki) % s for ki, s in zip(k, grid.sizes))
        spec[(slice(None),) + idx] += c
        spec[(slice(None),) + idx2] += c.conj()
    return FormField(grid, n, spectral=spec * math.sqrt(grid.npoints))


@pytest.mark.parametrize("n", [2, 3])
def test_closed_primitive_fields_are_ds_closed(rng, n):
    g = TorusGrid(n, 8)
    fr = SymplecticFrame.standard(n)
    f = closed_primitive_field(g, fr, rng)
    assert f.norm_inf() > 0.1
    assert exterior_derivative(f).norm_inf() < 1e-12
    assert codifferential_symplectic(f, fr).norm_inf() < 1e-11


# ------------------------------------------------------------ dd^s lemma


def test_solve_zero_target():
    psi = solve_ddsymp_potential(FormField.zeros(G4, 2), FR2)
    assert psi.norm_inf() == 0


def test_solve_reproduces_target(rng):
    for _ in range(5):
        target = dd_symp(random_bandlimited_field(G4, 2, rng, kmax=3), FR2)
        psi = solve_ddsymp_potential(target, FR2)
        assert (dd_symp(psi, FR2) - target).norm_inf() < 1e-11


def test_solve_rejects_harmonic_part(rng):
    target = dd_symp(random_bandlimited_field(G4, 2, rng), FR2)
    with pytest.raises(NotCohomologous):
        solve_ddsymp_potential(target + FormField.constant(G4, random_form(4, 2, rng)), FR2)


def test_solve_rejects_exact_but_not_ds_closed(rng):
    target = exterior_derivative(random_bandlimited_field(G4, 1, rng))
    with pytest.raises(NotInImage):
        solve_ddsymp_potential(target, FR2)


def test_gauge_seed_changes_psi_not_image(rng):
    target = dd_symp(random_bandlimited_field(G4, 2, rng), FR2)
    a = solve_ddsymp_potential(target, FR2)
    b = solve_ddsymp_potential(target, FR2, gauge_seed=11)
    assert (a - b).norm_inf() > 1e-3
    assert (dd_symp(b, FR2) - target).norm_inf() < 1e-11


# ------------------------------------------------------------- off-grid


@pytest.mark.parametrize("method", ["fourier", "interp"])
def test_offgrid_constant(rng, method):
    f = FormField.constant(G4, AlgebraicForm.scalar(4, 1.25))
    pts = rng.uniform(-10, 10, size=(50, 4))
    assert np.max(np.abs(evaluate_offgrid(f, pts, method=method) - 1.25)) < 1e-12


@pytest.mark.parametrize("method,N,order", [("auto", 8, 5), ("fourier", 8, 5), ("interp", 16, 7)])
def test_offgrid_cos_dx1(method, N, order):
    g = TorusGrid(2, N)
    x1 = g.coords()[0]
    f = one_form_field(g, {0: np.cos(x1)})
    val = evaluate_offgrid_forms(f, [[math.pi / 3, 0.4, 1.1, 2.0]], method=method, order=order)[0]
    expect = AlgebraicForm.basis_element(4, (0,)) * 0.5
    assert (val - expect).max_abs() < 1e-9


@pytest.mark.parametrize("method", ["fourier", "interp"])
def test_offgrid_identity_on_grid(rng, method):
    f = random_bandlimited_field(G4, 1, rng, kmax=2)
    pts = G4.points()[::7]
    got = evaluate_offgrid(f, pts, method=method)
    ref = f.values.reshape(f.ncomp, -1)[:, ::7]
    assert np.max(np.abs(got - ref)) < 1e-10


def test_offgrid_interp_converges_to_fourier(rng):
    g = TorusGrid(2, 16)
    f = random_bandlimited_field(g, 0, rng, kmax=3, real=True)
    pts = rng.uniform(0, TWO_PI, size=(200, 4))
    exact = evaluate_offgrid(f, pts, method="fourier")
    err5 = np.max(np.abs(evaluate_offgrid(f, pts, method="interp", order=5) - exact))
    err7 = np.max(np.abs(evaluate_offgrid(f, pts, method="interp", order=7) - exact))
    assert err7 < err5 < 1e-2 * f.norm_inf()


def test_band_project_idempotent(rng):
    f = FormField(G4, 1, rng.normal(size=(4,) + G4.shape), real=True)
    p = band_project(f)
    assert (band_project(p) - p).norm_inf() < 1e-14
    assert np.max(np.abs(p.spectral * ~G4.band_mask)) < 1e-14

import math

import numpy as np
import pytest

from cyforms.errors import UnsupportedDimension
from cyforms.exterior_algebra import AlgebraicForm, wedge
from cyforms.kahler import (
    dealias_mask,
    hermitian_det,
    hermitian_matrix,
    i_del_delbar,
    normalize_density,
    positivity_margin,
    standard_background,
)
from cyforms.moser import primitive_potential
from cyforms.torus_calculus import (
    FormField,
    exterior_derivative,
    integrate_top,
    random_bandlimited_field,
    trig_field,
    wedge_constant,
    wedge_fields,
)

TWO_PI = 2 * math.pi


@pytest.mark.parametrize("n", [2, 3])
def test_cn_ratio_matches_product_formula(n):
    # Omega ^ conj(Omega) = (-1)^{n(n-1)/2} prod_j dz_j ^ dzbar_j and dz ^ dzbar = -2i dx ^ dy
    expect = (-1) ** (n * (n - 1) // 2) * (-2j) ** n
    bg = standard_background(n, 8)
    assert bg.cn_ratio == pytest.approx(expect)
    assert bg.omega_power_ratio == pytest.approx(expect / math.factorial(n))


def test_cn_ratio_values():
    assert standard_background(2, 8).cn_ratio == pytest.approx(4)
    c3 = standard_background(3, 8).cn_ratio
    assert c3.real == 0 and abs(c3) == pytest.approx(8)


@pytest.mark.parametrize("n", [2, 3])
def test_background_type_and_closedness(n):
    bg = standard_background(n, 8)
    assert wedge(bg.Omega0, bg.omega).max_abs() == 0
    assert exterior_derivative(bg.Omega_field()).norm_inf() == 0
    assert exterior_derivative(bg.omega_field()).norm_inf() == 0


def test_unsupported_dimensions():
    with pytest.raises(UnsupportedDimension):
        standard_background(4, 8)
    with pytest.raises(UnsupportedDimension):
        standard_background(1, 8)
    assert standard_background(1, 8, allow_calibration=True).n == 1


def test_i_ddbar_constant_and_cos(bg2_small):
    g = bg2_small.grid
    c = FormField.scalar(g, np.full(g.shape, 3.0), real=True)
    assert i_del_delbar(c, bg2_small).norm_inf() < 1e-15
    x1 = g.coords()[0]
    # d_1 dbar_1 = Laplacian_1 / 4, so i ddbar cos(x1) = -cos(x1)/2 dx1 ^ dy1
    w = i_del_delbar(trig_field(g, [(1.0, (1, 0, 0, 0), 0.0)]), bg2_small)
    expect = FormField.constant(g, AlgebraicForm.basis_element(4, (0, 1))) * FormField.scalar(g, -0.5 * np.cos(x1))
    assert (w - expect).norm_inf() < 1e-14


def test_i_ddbar_closed_and_type(bg2_small, rng):
    phi = random_bandlimited_field(bg2_small.grid, 0, rng, kmax=3, real=True)
    w = i_del_delbar(phi, bg2_small)
    assert exterior_derivative(w).norm_inf() < 1e-13 * phi.norm_inf()
    assert wedge_constant(w, bg2_small.Omega0).norm_inf() < 1e-13 * phi.norm_inf()
    assert (exterior_derivative(primitive_potential(phi, bg2_small)) - w).norm_inf() < 1e-12 * phi.norm_inf()


def test_hermitian_det_is_wedge_ratio(bg2_small, rng):
    phi = random_bandlimited_field(bg2_small.grid, 0, rng, real=True) * 0.05
    w = bg2_small.omega_field() + i_del_delbar(phi, bg2_small)
    ratio = wedge_fields(w, w).values[0] / wedge(bg2_small.omega, bg2_small.omega).top().real
    assert np.max(np.abs(hermitian_det(hermitian_matrix(w)) - ratio)) < 1e-14


def test_normalize_examples(bg2_small):
    g = bg2_small.grid
    for raw in (FormField.zeros(g, 0), FormField.scalar(g, np.full(g.shape, 1.7), real=True)):
        D = normalize_density(raw, bg2_small)
        assert np.max(np.abs(D.values)) < 1e-15
    raw = trig_field(g, [(0.3, (1, 0, 0, 0), 0.0)])
    shifts = []
    for ref in ("omega_power", "omega_omega_bar"):
        D = normalize_density(raw, bg2_small, ref)
        eF = FormField.scalar(g, np.exp(D.values), real=True)
        assert abs(integrate_top(wedge_constant(eF, bg2_small.frame.volume_normalizer)) - TWO_PI ** 4) < 1e-11 * TWO_PI ** 4
        assert abs(D.ratio - 1) < 1e-12
        shifts.append(D.shift)
    assert shifts[0] == pytest.approx(shifts[1], abs=1e-15)
    with pytest.raises(ValueError):
        normalize_density(raw, bg2_small, "volume")


def test_positivity_examples(bg2_small, rng):
    g = bg2_small.grid
    assert positivity_margin(bg2_small.omega_field()) == pytest.approx(1.0)
    phi = random_bandlimited_field(g, 0, rng, real=True) * 1e-6
    assert positivity_margin(bg2_small.omega_field() + i_del_delbar(phi, bg2_small)) == pytest.approx(1.0, abs=1e-4)
    bad = bg2_small.omega_field() - FormField.constant(g, AlgebraicForm.basis_element(4, (0, 1))) * 2.0
    assert positivity_margin(bad) == pytest.approx(-1.0)


def test_kahler_cone_convexity(bg2_small, rng):
    g = bg2_small.grid
    ws = []
    for _ in range(2):
        phi = random_bandlimited_field(g, 0, rng, kmax=2, nmodes=3, real=True)
        phi = phi * (0.2 / phi.norm_inf())
        w = bg2_small.omega_field() + i_del_delbar(phi, bg2_small)
        assert positivity_margin(w) > 0
        ws.append(w)
    for t in np.linspace(0, 1, 7):
        assert positivity_margin(ws[0] * (1 - t) + ws[1] * t) > 0


def test_dealias_masks(bg2_small):
    g = bg2_small.grid
    assert dealias_mask(g, "none").all()
    assert (dealias_mask(g, "band") == g.band_mask).all()
    two = dealias_mask(g, "two_thirds")
    assert two.sum() < g.band_mask.sum()
    assert not (two & ~g.band_mask).any()

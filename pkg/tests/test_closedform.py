import math

import numpy as np
import pytest
from scipy import special

from ffconverge import closedform as cf
from ffconverge.specfun import ModelParams, potentials_pm


@pytest.fixture(scope="module")
def geom6(params):
    return cf.solve_endpoint(1e6, params)


@pytest.fixture(scope="module")
def geom8(params):
    return cf.solve_endpoint(1e8, params)


def _edge_quadrature(f, a, b, panels=12, order=16):
    """Integral over [a, b] of f with x - edge = s^2 on each half (smooths square-root edges)."""
    root = math.sqrt(0.5 * (b - a))
    x, w = np.polynomial.legendre.leggauss(order)
    cuts = np.linspace(0.0, root, panels + 1)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        s = 0.5 * (hi - lo) * (x + 1) + lo
        ws = (hi - lo) * w * s
        total += np.sum(ws * (f(a + s * s) + f(b - s * s)))
    return float(total)


# ---------------------------------------------------------------- coefficients


@pytest.mark.parametrize("xbar", [5.0, 20.0, 30.0, 80.0])
def test_leading_coefficient_is_one(params, xbar):
    c = cf.laurent_coeffs(xbar, params)
    assert abs(c.c[0] - 1) <= 1e-10


@pytest.mark.parametrize("xbar", [5.0, 20.0, 40.0, 80.0])
def test_w1_squared_is_twice_w2(params, xbar):
    w = cf.laurent_coeffs(xbar, params).w
    assert abs(w[1] ** 2 - 2 * w[2]) <= 1e-8 * max(1.0, w[2])


def test_coefficients_are_real_up_to_the_phase(params):
    assert cf.laurent_coeffs(30.0, params).imag_residual <= 1e-10


def test_w1_matches_gamma_log_derivatives(params):
    for x in (10.0, 30.0):
        assert cf.laurent_coeffs(x, params).w[1] == pytest.approx(cf.w1_closed(x, params), rel=1e-10)


def test_w_over_power_tends_to_one(params):
    dev = {}
    for x in (20.0, 40.0, 80.0):
        w = cf.laurent_coeffs(x, params).w
        dev[x] = [abs(w[k] / (x ** k / math.factorial(k)) - 1) for k in (1, 2, 3)]
    for k in range(3):
        assert dev[20.0][k] > dev[40.0][k] > dev[80.0][k]
        # O(1/x): halving the gap roughly halves the deviation
        assert dev[80.0][k] * 80 < 2 * dev[20.0][k] * 20


def test_w_over_power_at_thirty(params):
    w = cf.laurent_coeffs(30.0, params).w
    for k in (1, 2, 3):
        assert abs(w[k] / (30.0 ** k / math.factorial(k)) - 1) < 15 / 30.0


def test_coefficients_reject_nonpositive_gap(params):
    with pytest.raises(ValueError):
        cf.laurent_coeffs(0.0, params)


@pytest.mark.parametrize("b", [0.2, 0.3, 0.35])
def test_frak_t_tends_to_one(b):
    p = ModelParams(b)
    t20, t40, t80 = (cf.frak_t(x, p) for x in (20.0, 40.0, 80.0))
    assert abs(t40 - 1) < 0.2
    assert abs(t20 - 1) > abs(t40 - 1) > abs(t80 - 1)


def test_vartheta_symmetric_and_linear():
    p = ModelParams(0.2)
    assert cf.vartheta(p) == pytest.approx(cf.vartheta(p.dual()), rel=1e-15)
    p2 = ModelParams(0.2, kappa=2.0)
    assert cf.vartheta(p2) == pytest.approx(2 * cf.vartheta(p), rel=1e-15)


def test_vartheta_fixture_quarter():
    # at b = 1/4 the dual parameter is also 1/4
    direct = 2 / (3 * (2 * math.pi) ** 2.5) * math.gamma(0.25) ** 2 / 0.25 ** 0.5
    assert cf.vartheta(ModelParams(0.25)) == pytest.approx(direct, rel=1e-14)
    assert cf.vartheta(ModelParams(0.25)) == pytest.approx(0.17711331665280727, rel=1e-12)


# ---------------------------------------------------------------- endpoint


@pytest.mark.parametrize("N", [1e3, 1e4, 1e8, 1e16])
def test_endpoint_residual(params, N):
    g = cf.solve_endpoint(N, params)
    assert abs(cf.endpoint_residual(g, params)) <= 1e-10
    assert g.symmetric
    assert cf.normalization_integral(g, params) == pytest.approx(1.0, abs=1e-10)


def test_endpoint_increasing_in_n(params):
    vals = [cf.solve_endpoint(N, params).bbar for N in (1e4, 2e4, 1e8, 2e8)]
    assert vals[0] < vals[1] < vals[2] < vals[3]


def test_endpoint_expansion_envelope(params):
    gaps = []
    for N in (1e4, 1e8, 1e16):
        L = math.log(N)
        gap = abs(cf.solve_endpoint(N, params).bbar - cf.bbar_expansion(N, params))
        assert gap / (math.log(L) / L) < 5
        gaps.append(gap)
    assert gaps[0] > gaps[1] > gaps[2]


def test_endpoint_needs_large_n(params):
    with pytest.raises(cf.NoRootError):
        cf.solve_endpoint(8, params)


def test_error_budget_shrinks(params):
    budgets = [cf.error_budget(cf.solve_endpoint(N, params).xbar) for N in (1e4, 1e8, 1e16)]
    assert budgets[0] > budgets[1] > budgets[2]


# ---------------------------------------------------------------- chi


def test_chi_determinant_above_upper_lens(params):
    g = cf.ScaledGeometry.from_bbar(1e8, 15.0)
    assert g.xbar == pytest.approx(30.0)
    det = np.linalg.det(cf.chi_leading(3j, g, params))
    assert abs(det - 1) <= 1e-6


def test_chi_determinant_flips_below_axis(params, geom8):
    # the determinant is the sign of Im lam
    det = np.linalg.det(cf.chi_leading(0.7 - 0.3j, geom8, params))
    assert abs(det + 1) <= 1e-6


def test_chi12_even_in_i(params, geom8):
    sol = cf.closed_form_solution(geom8, params)
    minus_i = sol.chi.circle_mean(-1j, "lower")[0, 1]
    assert abs(sol.chi12_i - minus_i) <= cf.error_budget(geom8.xbar)
    assert abs(sol.chi12_i - minus_i) <= 1e-10


def test_u_reg_at_zero(params, geom8):
    chi = cf.ChiLeadingOrder(geom8, params)
    c3 = chi.c[3]
    assert abs(chi.u_reg(0.0) - c3) <= 1e-8 * max(1.0, abs(c3))


def test_u_reg_continuous_across_series_switch(params, geom8):
    chi = cf.ChiLeadingOrder(geom8, params)
    eps = 1e-9
    for direction in (1.0, 1j, -1.0):
        lam = cf.SERIES_SWITCH * direction
        inside, outside = chi.u_reg(np.array([lam * (1 - eps), lam * (1 + eps)]))
        assert abs(inside - outside) <= 1e-7 * abs(inside)


def test_chi_region_errors(params, geom8):
    with pytest.raises(cf.RegionError):
        cf.chi_leading(0.5j, geom8, params)
    with pytest.raises(cf.RegionError):
        cf.chi_leading(-2j, geom8, params)


# ---------------------------------------------------------------- constraints


def test_j12_zero_when_symmetric(params, geom8):
    assert cf.constraint_j12(geom8, params) == 0.0


@pytest.mark.parametrize("shift", [0.01, -0.01])
def test_j12_sign_follows_shift(params, geom8, shift):
    g = cf.ScaledGeometry(geom8.N, geom8.b_N, -geom8.b_N + shift)
    assert np.sign(cf.constraint_j12(g, params)) == np.sign(shift)


def test_j12_matches_line_quadrature(params, geom8):
    g = cf.ScaledGeometry(geom8.N, geom8.b_N, -geom8.b_N + 0.01)
    closed = cf.constraint_j12(g, params)
    quad = cf.constraint_j12_quadrature(g, params)
    assert abs(closed - quad) <= 1e-6 * abs(closed)


# ---------------------------------------------------------------- density


def test_density_vanishes_at_edges(params, geom6):
    assert np.all(np.abs(cf.density_eq(np.array([geom6.a_N, geom6.b_N]), geom6, params)) <= 1e-6)


def test_density_even_and_positive(params, geom6):
    xi = np.linspace(geom6.a_N, geom6.b_N, 201)[1:-1]
    rho = cf.density_eq(xi, geom6, params)
    assert np.all(rho > 0)
    assert np.max(np.abs(rho - rho[::-1])) <= 1e-10


def test_density_outside_support_rejected(params, geom6):
    with pytest.raises(ValueError):
        cf.density_eq(geom6.b_N + 0.01, geom6, params)


def test_density_total_mass(params, geom6):
    mass = cf.density_integral(geom6, params)
    assert mass == pytest.approx(1.0, abs=1e-2)
    assert mass == pytest.approx(cf.normalization_integral(geom6, params), abs=1e-2)


def test_normalization_two_routes(params, geom8):
    exact = cf.normalization_exact(geom8, params)
    leading = cf.normalization_integral(geom8, params)
    assert abs(exact - leading) <= max(cf.error_budget(geom8.xbar), 1e-8)


def test_density_square_root_edge(params, geom6):
    r = [cf.density_eq(geom6.b_N - d, geom6, params) / math.sqrt(d) for d in (1e-3, 1e-4)]
    assert r[0] == pytest.approx(r[1], rel=1e-2)


# ---------------------------------------------------------------- boundary density and J_ext


def test_boundary_density_exceeds_its_edge_value(params):
    xs = np.linspace(0.05, 10.0, 200)
    assert np.all(cf.rho_bd_limit(xs, params) - cf.rho_bd_limit(0.0, params) > 0)


def test_boundary_coefficients_decay_three_halves(params):
    r100, r400 = cf.frak_r(np.array([100.0, 400.0]), params)
    assert abs(r400 / r100) == pytest.approx(0.25 ** 1.5, rel=0.2)


def test_boundary_density_series_vs_transform():
    p = ModelParams(0.2828)
    for x in (0.5, 2.0):
        assert cf.rho_bd_limit_series(x, p) == pytest.approx(cf.rho_bd_limit(x, p), rel=1e-9, abs=1e-12)


def test_boundary_density_convolution(params):
    assert cf.rho_bd_convolution(1.0, params) == pytest.approx(cf.rho_bd_limit(1.0, params), rel=1e-8)


def test_j_ext_convolution(params):
    assert cf.j_ext_convolution(1.0, params) == pytest.approx(cf.j_ext(1.0, params), rel=1e-7)


def test_factor_d_positive(params):
    xs = np.linspace(0.05, 10.0, 40)
    assert all(cf.convolution_factors(x, "d", params) > 0 for x in xs)


def test_factor_a_decreasing(params):
    vals = [cf.convolution_factors(x, "a", params) for x in np.linspace(0.02, 5.0, 60)]
    assert np.all(np.diff(vals) < 0)


def test_factor_constants_below_zero(params):
    assert cf.convolution_factors(-1.0, "a", params) == pytest.approx(-2 / math.pi)
    assert cf.convolution_factors(-1.0, "d", params) == pytest.approx(-0.75 * math.pi)
    assert cf.convolution_factors(-1.0, "d_tilde", params) == 0.0
    with pytest.raises(ValueError):
        cf.convolution_factors(0.0, "a", params)


@pytest.mark.parametrize("x", [0.5, 1.0, 2.0, 5.0])
def test_digamma_gap_lower_bound(x):
    assert special.digamma(x + 1) - special.digamma(x + 0.5) > 0.5 / (x + 0.5)


def test_j_ext_at_zero(params):
    assert cf.j_ext(0.0, params) == pytest.approx(cf.j_ext_zero_closed(params), rel=1e-6)


def test_j_tot_negative(params):
    xs = np.linspace(0.05, 10.0, 200)
    assert np.all(cf.j_tot(xs, params) < 0)


def test_j_tot_square_root_onset(params):
    r = [float(cf.j_tot(x, params)) / math.sqrt(x) for x in (1e-4, 1e-6)]
    assert r[0] < 0
    assert r[0] == pytest.approx(r[1], rel=1e-3)


# ---------------------------------------------------------------- effective potential


def test_potential_slope_vanishes_like_square_root(params, geom6):
    r = [cf.effective_potential_closed(geom6.a_N - d, geom6, params) / math.sqrt(d) for d in (1e-4, 1e-6)]
    assert r[0] == pytest.approx(r[1], rel=1e-3)


def test_potential_slope_sign(params, geom6):
    assert cf.effective_potential_closed(geom6.a_N - 1, geom6, params) < 0
    assert cf.effective_potential_closed(geom6.b_N + 1, geom6, params) > 0


def test_potential_slope_reflection(params, geom6):
    for xi in (geom6.b_N + 0.01, geom6.b_N + 0.5):
        mirror = geom6.a_N + geom6.b_N - xi
        assert cf.effective_potential_closed(xi, geom6, params) == pytest.approx(
            -cf.effective_potential_closed(mirror, geom6, params), rel=1e-12)


def test_potential_slope_rejects_support(params, geom6):
    with pytest.raises(cf.RegionError):
        cf.effective_potential_closed(0.0, geom6, params)


# ---------------------------------------------------------------- energy


def test_confinement_integral_vs_quadrature(params, geom6):
    V, _, _ = cf.energy_integrals(geom6, params)
    f = lambda x: cf.density_eq(x, geom6, params) * params.kappa * np.cosh(geom6.tau * x) / (2 * geom6.N)
    assert V == pytest.approx(_edge_quadrature(f, geom6.a_N, geom6.b_N), rel=0.02)


def test_boundary_interaction_integral_vs_quadrature(params, geom6):
    _, W, _ = cf.energy_integrals(geom6, params)
    g = geom6

    def f(x):
        return cf.density_eq(x, g, params) * potentials_pm(g.tau * (g.b_N - x), params)[0]

    assert W == pytest.approx(-0.5 * _edge_quadrature(f, g.a_N, g.b_N), rel=0.02)


def test_confinement_integral_leading_structure(params, geom8):
    sol = cf.closed_form_solution(geom8, params)
    w = sol.chi.coeffs.w
    lead = sol.v_integral_leading()
    assert np.sign(lead) == np.sign(1 - 2 * w[1] / w[2]) * np.sign(-1 / complex(cf.wiener_hopf_up(1j, params)) ** 2).real
    assert sol.v_integral().real == pytest.approx(lead, rel=0.1)


def test_assembly_matches_asymptotic(params):
    for N in (1e4, 1e8):
        g = cf.solve_endpoint(N, params)
        assert cf.energy_assembled(g, params) == pytest.approx(cf.energy_asymptotic(N, params, g), rel=0.05)


def test_energy_ratio_trends_to_one(params):
    ratios = [N * N * cf.energy_asymptotic(N, params) / cf.theorem_exponent(N, params)
              for N in (1e6, 1e8, 1e12, 1e20)]
    assert 0.5 <= ratios[1] <= 2
    assert all(abs(a - 1) > abs(b - 1) for a, b in zip(ratios, ratios[1:]))


def test_energy_asymptotic_needs_large_n(params):
    with pytest.raises(ValueError):
        cf.energy_asymptotic(100, params)


def test_real_valued_outputs(params, geom8):
    sol = cf.closed_form_solution(geom8, params)
    xi = np.linspace(geom8.a_N, geom8.b_N, 31)
    rho = sol.density(xi)
    assert np.max(np.abs(rho.imag)) <= 1e-10 * max(1.0, np.max(np.abs(rho.real)))
    j = sol.j_ext_N(np.array([0.0, 0.5, 3.0]))
    assert np.max(np.abs(np.imag(j))) <= 1e-10 * max(1.0, np.max(np.abs(j)))
    v = sol.v_integral()
    assert abs(v.imag) <= 1e-10 * abs(v)
    assert abs(sol.bulk_factor.imag) <= 1e-10 * abs(sol.bulk_factor)


def test_record_fields(params):
    rec = cf.closed_form_record(1e8, params)
    assert set(rec) >= {"N", "b_N", "bbar", "theta", "t_value", "energy_leading", "error_budget"}
    assert rec["b_N"] == pytest.approx(rec["bbar"] / math.log(1e8))

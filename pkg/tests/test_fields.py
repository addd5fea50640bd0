"""Grid, packet, boost and norm behavior.

Expected values come from closed forms or scipy quadrature, never from the
code under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from isl.fields import (
    ComplexField,
    StateClass,
    boost,
    boundary_mass,
    fourier,
    gaussian_packet,
    inner,
    inverse_fourier,
    l2_norm,
    make_grid,
    momentum_tail_mass,
    norm_suite,
    translate,
)


def test_grid_layout():
    g = make_grid(32.0, 256, dim=1)
    assert g.spacing[0] == pytest.approx(0.125)
    assert g.momentum_spacing[0] == pytest.approx(2.0 * np.pi / 32.0)
    assert g.momentum_max[0] == pytest.approx(np.pi / 0.125)
    x = g.axis(0)
    assert x[0] == pytest.approx(-16.0)
    assert x[1] - x[0] == pytest.approx(0.125)
    # the box midpoint is a node
    assert np.min(np.abs(x)) == pytest.approx(0.0, abs=1e-15)


def test_grid_rejects_bad_points():
    with pytest.raises(ValueError):
        make_grid(10.0, 100, dim=1)  # not a power of two
    with pytest.raises(ValueError):
        make_grid(10.0, 8, dim=1)  # below 16
    with pytest.raises(ValueError):
        make_grid(10.0, -16, dim=1)
    with pytest.raises(ValueError):
        make_grid((10.0, 10.0, 10.0), 16, dim=3)  # type: ignore[arg-type]


def test_grid_rectangular_axes():
    g = make_grid((24.0, 16.0), (256, 128), dim=2)
    assert g.spacing == (24.0 / 256, 16.0 / 128)
    assert g.momentum_spacing[1] == pytest.approx(2.0 * np.pi / 16.0)


def test_gaussian_packet_normalized_and_centered():
    g = make_grid(32.0, 512, dim=1)
    psi = gaussian_packet(g, center=1.0, width=1.0, momentum=2.0)
    assert l2_norm(psi) == pytest.approx(1.0, abs=1e-10)
    x = g.axis(0)
    assert x[np.argmax(np.abs(psi.values))] == pytest.approx(1.0, abs=g.spacing[0])
    # momentum density peaks at the node nearest k=2
    vh = fourier(psi)
    p = g.momentum_axis(0)
    peak = p[np.argmax(np.abs(vh))]
    assert abs(peak - 2.0) <= g.momentum_spacing[0]


def test_gaussian_packet_preconditions():
    g = make_grid(32.0, 256, dim=1)
    with pytest.raises(ValueError, match="under-resolved"):
        gaussian_packet(g, 0.0, width=0.3, momentum=0.0)
    pmax = g.momentum_max[0]
    with pytest.raises(ValueError, match="p_max"):
        gaussian_packet(g, 0.0, width=1.0, momentum=0.95 * pmax)
    with pytest.raises(ValueError, match="boundary"):
        gaussian_packet(g, 14.0, width=1.0, momentum=0.0)


def test_gaussian_packet_anisotropic_2d():
    g = make_grid((24.0, 16.0), (256, 128), dim=2)
    psi = gaussian_packet(g, center=(0.0, 2.0), width=(1.0, 0.5), momentum=(3.0, 0.0))
    assert l2_norm(psi) == pytest.approx(1.0, abs=1e-10)
    assert boundary_mass(psi) < 1e-8


def test_boost_pointwise_phase():
    g = make_grid(32.0, 256, dim=1)
    psi = gaussian_packet(g, 0.0, 1.0, 0.0)
    out = boost(psi, 3.0, mass=1.0)
    x = g.axis(0)
    np.testing.assert_allclose(out.values, psi.values * np.exp(3j * x), rtol=1e-13)
    assert l2_norm(out) == pytest.approx(1.0, abs=1e-12)


def test_boost_translates_momentum_support():
    g = make_grid(64.0, 1024, dim=1)
    psi = gaussian_packet(g, 0.0, 3.0, 0.0)
    sc = StateClass(eta=1.0, speed=8.0)
    assert sc.tail_mass(psi) > 0.9  # unboosted packet sits at p=0
    assert sc.admits(boost(psi, 8.0))


def test_boost_rejects_nyquist_overflow():
    g = make_grid(32.0, 256, dim=1)  # p_max ~ 25.1
    psi = gaussian_packet(g, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="tail mass"):
        boost(psi, 24.0)


def test_boost_translate_commutation_phase():
    g = make_grid(32.0, 256, dim=1)
    psi = gaussian_packet(g, 0.0, 1.0, 1.0)
    v, a, m = 2.5, 0.5, 1.0  # a is 4 grid cells
    lhs = translate(boost(psi, v, mass=m), a)
    rhs = boost(translate(psi, a), v, mass=m)
    np.testing.assert_allclose(
        lhs.values, rhs.values * np.exp(-1j * m * v * a), rtol=0, atol=1e-12
    )


def test_translate_rejects_off_lattice_shift():
    g = make_grid(32.0, 256, dim=1)
    psi = gaussian_packet(g, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="multiple of dx"):
        translate(psi, 0.3)


@settings(max_examples=15, deadline=None)
@given(
    width=st.floats(0.6, 1.6),
    k=st.floats(-4.0, 4.0),
    center=st.floats(-2.5, 2.5),
)
def test_plancherel_property(width, k, center):
    g = make_grid(32.0, 256, dim=1)
    psi = gaussian_packet(g, center, width, k)
    vh = fourier(psi)
    dp = g.momentum_spacing[0]
    assert np.sum(np.abs(vh) ** 2) * dp == pytest.approx(1.0, rel=1e-12)


def test_fourier_round_trip_2d():
    g = make_grid((16.0, 12.0), (128, 64), dim=2)
    psi = gaussian_packet(g, (0.5, -0.5), (0.8, 0.9), (1.0, -2.0))
    back = inverse_fourier(g, fourier(psi))
    np.testing.assert_allclose(back.values, psi.values, atol=1e-12)


def test_fourier_matches_analytic_gaussian():
    # fhat of (2 pi s^2)^(-1/4) exp(-x^2/(4 s^2)) is (2 s^2/pi)^(1/4) exp(-s^2 p^2)
    g = make_grid(32.0, 512, dim=1)
    s = 1.3
    psi = gaussian_packet(g, 0.0, s, 0.0)
    vh = fourier(psi)
    p = g.momentum_axis(0)
    expected = (2.0 * s**2 / np.pi) ** 0.25 * np.exp(-(s**2) * p**2)
    np.testing.assert_allclose(vh.real, expected, atol=1e-10)
    np.testing.assert_allclose(vh.imag, 0.0, atol=1e-10)


def test_inner_product_conjugation():
    g = make_grid(16.0, 64, dim=1)
    f = gaussian_packet(g, 0.0, 1.0, 1.0)
    h = gaussian_packet(g, 1.0, 1.0, -1.0)
    assert inner(f, h) == pytest.approx(np.conj(inner(h, f)))
    assert inner(f, f).real == pytest.approx(1.0, abs=1e-12)


def test_w12_norm_matches_moment_formula():
    # ||psi||_W12^2 = 1 + <p^2> = 1 + k^2 + 1/(4 s^2) for a Gaussian packet
    g = make_grid(32.0, 512, dim=1)
    s, k = 1.0, 2.0
    psi = gaussian_packet(g, 0.0, s, k)
    got = norm_suite(psi, ["W12"])["W12"]
    assert got == pytest.approx(np.sqrt(1.0 + k**2 + 1.0 / (4 * s**2)), rel=1e-8)


def test_l1_gamma_of_gaussian():
    # integral of exp(-x^2) (1+|x|) dx = sqrt(pi) + 1, scipy quad agrees
    exact, _ = quad(lambda x: np.exp(-(x**2)) * (1 + abs(x)), -20, 20)
    assert exact == pytest.approx(np.sqrt(np.pi) + 1.0, abs=1e-10)
    g = make_grid(32.0, 1024, dim=1)
    f = ComplexField(g, np.exp(-g.axis(0) ** 2))
    got = norm_suite(f, ["L1gamma"], gamma=1.0)["L1gamma"]
    assert got == pytest.approx(exact, abs=2e-4)


def test_l1_gamma_refinement_is_second_order():
    vals = {}
    for n in (256, 512, 1024):
        g = make_grid(32.0, n, dim=1)
        f = ComplexField(g, np.exp(-g.axis(0) ** 2))
        vals[n] = norm_suite(f, ["L1gamma"], gamma=1.0)["L1gamma"]
    exact = np.sqrt(np.pi) + 1.0
    e_coarse = abs(vals[256] - exact)
    e_mid = abs(vals[512] - exact)
    e_fine = abs(vals[1024] - exact)
    assert e_mid < e_coarse / 3.0
    assert e_fine < e_mid / 3.0


def test_unit_window_norm_of_indicator():
    g = make_grid(32.0, 256, dim=1)
    x = g.axis(0)
    f = ComplexField(g, ((x >= 0.0) & (x < 1.0)).astype(float))
    assert norm_suite(f, ["N"])["N"] == pytest.approx(1.0, abs=1e-12)
    # a taller narrower box has the same window integral sup
    f2 = ComplexField(g, 2.0 * ((x >= 0.0) & (x < 0.25)).astype(float))
    assert norm_suite(f2, ["N"])["N"] == pytest.approx(1.0, abs=1e-12)


def test_norm_suite_rejects_bad_requests():
    g = make_grid(16.0, 64, dim=1)
    f = gaussian_packet(g, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="unknown norm"):
        norm_suite(f, ["L3"])
    with pytest.raises(ValueError, match="gamma"):
        norm_suite(f, ["L1gamma"], gamma=-1.0)
    with pytest.raises(ValueError, match="needs the power"):
        norm_suite(f, ["W1q"])
    g2 = make_grid((16.0, 16.0), (64, 64), dim=2)
    f2 = gaussian_packet(g2, (0, 0), 1.0, (0, 0))
    with pytest.raises(ValueError, match="one dimension"):
        norm_suite(f2, ["N"])


def test_w1q_norm_against_quadrature():
    # q = 6 Sobolev norm of a fixed Gaussian, oracle by scipy quad
    s = 1.0
    amp = (2 * np.pi * s**2) ** (-0.25)

    def f(x):
        return amp * np.exp(-(x**2) / (4 * s**2))

    def fp(x):
        return f(x) * (-x / (2 * s**2))

    val, _ = quad(lambda x: abs(f(x)) ** 6 + abs(fp(x)) ** 6, -20, 20)
    exact = val ** (1.0 / 6.0)
    g = make_grid(32.0, 512, dim=1)
    psi = gaussian_packet(g, 0.0, s, 0.0)
    got = norm_suite(psi, ["W1q"], p=5.0)["W1q"]
    assert got == pytest.approx(exact, rel=1e-6)


def test_state_class_admits_slow_spread_packet():
    g = make_grid(64.0, 1024, dim=1)
    psi = gaussian_packet(g, 0.0, 3.0, 0.0)  # momentum spread 1/6
    assert StateClass(eta=1.0, speed=0.0).admits(psi)
    assert not StateClass(eta=0.1, speed=0.0).admits(psi)


def test_state_class_validation():
    with pytest.raises(ValueError):
        StateClass(eta=0.0, speed=1.0)
    with pytest.raises(ValueError):
        StateClass(eta=1.0, speed=-2.0)


@settings(max_examples=10, deadline=None)
@given(width=st.floats(0.7, 2.0), k=st.floats(-3.0, 3.0))
def test_boost_preserves_norm_property(width, k):
    g = make_grid(32.0, 256, dim=1)
    psi = gaussian_packet(g, 0.0, width, k)
    out = boost(psi, 5.0)
    assert l2_norm(out) == pytest.approx(l2_norm(psi), rel=1e-13)

import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from paraxial_tr.medium import MediumModel
from paraxial_tr.moments import (K_and_A, MomentParams, background_amplitude, background_intensity,
                                 background_intensity_general, covariance_refocused, limit_mean_refocused,
                                 mean_field_M1, peak_amplitude, peak_intensity, peak_intensity_general,
                                 predict, predict_image, regime, shift_params, snr, snr_closed_form,
                                 strong_scattering_profile)
from paraxial_tr.quadrature import log_i0
from paraxial_tr.timereversal import ImageFunction


def params(Q=12.0, Xr=0.5, rho0=2.0, k0=10.0, L=40.0, l_c=1.0):
    """Parameters from Q = sigma^2 k0^2 l_c L and Xr = X / r0^2."""
    s2 = Q / (k0**2 * l_c * L)
    X = s2 * L**3 / (6 * l_c)
    return MomentParams(k0, L, math.sqrt(X / Xr), rho0, MediumModel(math.sqrt(s2), l_c))


def homogeneous(k0=10.0, L=20.0, r0=5.0, rho0=1.0):
    return MomentParams(k0, L, r0, rho0, MediumModel(0.0, 1.0))


P = params()


# --- Bessel kernel ----------------------------------------------------------------------

def test_log_i0_at_zero():
    assert np.exp(log_i0(0.0)) == 1.0


@pytest.mark.parametrize("x", [1e-8, 0.3, 1.0, 7.5, 40.0, 700.0, 1e4, 3e5])
def test_log_i0_against_mpmath(x):
    ref = float(mpmath.log(mpmath.besseli(0, x)))
    assert float(log_i0(x)) == pytest.approx(ref, rel=1e-13, abs=1e-15)


# --- mean field, finite parameters -----------------------------------------------------------

def test_homogeneous_mean_at_source_is_gaussian_integral():
    p = homogeneous()
    lam = (p.L / p.k0) ** 2 / p.rho0**2          # Fresnel weight of the element kernel
    v, _ = mean_field_M1((0.0, 0.0), (0.0, 0.0), p)
    assert v[0] == pytest.approx(p.r0**2 / (p.r0**2 + lam), rel=1e-10)


def test_homogeneous_mean_tends_to_one_without_diffraction():
    v, _ = mean_field_M1((0.0, 0.0), (0.0, 0.0), homogeneous(k0=1e6))
    assert v[0] == pytest.approx(1.0, rel=1e-8)


def test_mean_field_radial_reduction():
    p = P
    lam = (p.L / p.k0) ** 2 / p.rho0**2
    v, _ = mean_field_M1((0.0, 0.0), (0.0, 0.0), p)

    def f(a):
        return 2 * math.pi * a * math.exp(-0.25 * (p.r0**2 + lam) * a * a
                                          + float(p.scatter(0.0, 0.0, a, 0.0)) - 0.25 * p.Q)
    ref, _ = integrate.quad(f, 0, 40 / p.r0, epsabs=1e-14, epsrel=1e-12, limit=400)
    assert v[0].real == pytest.approx(p.r0**2 / (4 * math.pi) * ref, rel=1e-6)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_mean_field_initial_condition(x1, x2, y1, y2):
    p = MomentParams(10.0, 1e-9, 3.0, 1.0, MediumModel(0.1, 1.0))
    x, y = np.array([x1, x2]), np.array([y1, y2])
    v, _ = mean_field_M1((x + y) / 2, x - y, p)
    ref = math.exp(-np.sum((x + y) ** 2) / (4 * p.r0**2) - np.sum((x - y) ** 2) / (4 * p.rho0**2))
    assert abs(v[0] - ref) <= 1e-6 * max(ref, 1e-3)


# --- scintillation-limit mean --------------------------------------------------------------

def test_limit_mean_homogeneous_is_one():
    v, _ = limit_mean_refocused((0.0, 0.0), (0.0, 0.0), homogeneous())
    assert v[0] == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("y", [(0.0, 0.0), (1.0, -2.0)])
def test_limit_mean_tail_is_background(y):
    far, _ = limit_mean_refocused((80 * P.R_tr, 0.0), y, P)
    ref = background_amplitude(P, y)
    assert ref == pytest.approx(math.exp(-np.dot(y, y) / P.r0**2 - P.Q / 4))
    assert abs(far[0] - ref) <= 1e-9


def test_peak_amplitude_matches_shifted_line_integral():
    # at x = 0 the scatter term is C(xi z / k0): same quadrature engine, direct integrand
    p = P

    def f(a):
        return 2 * math.pi * a * math.exp(-0.25 * p.r0**2 * a * a + float(p.scatter(0.0, 0.0, a, 0.0)) - p.Q / 4)
    ref, _ = integrate.quad(f, 0, 40 / p.r0, epsabs=1e-14, limit=400)
    assert peak_amplitude(p).real == pytest.approx(p.r0**2 / (4 * math.pi) * ref, rel=1e-8)


def test_limit_mean_deterministic():
    a = limit_mean_refocused([(0.3, 0.1), (1.0, 0.0)], (0.0, 0.0), P)[0]
    b = limit_mean_refocused([(0.3, 0.1), (1.0, 0.0)], (0.0, 0.0), P)[0]
    assert np.array_equal(a, b)


# --- covariance ---------------------------------------------------------------------------

def test_covariance_homogeneous_is_zero():
    assert covariance_refocused((0, 0), (1.0, 0.0), (0, 0), homogeneous())[0] == 0


def test_covariance_at_zero_lag_is_background_intensity():
    Ib, _ = background_intensity(P)
    v, _ = covariance_refocused((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), P)
    assert abs(v.imag) < 1e-12
    assert v.real == pytest.approx(Ib, rel=1e-5)


def test_covariance_independent_of_centre():
    a, _ = covariance_refocused((0.0, 0.0), (0.4, 0.0), (0.0, 0.0), P)
    b, _ = covariance_refocused((3.0, -1.0), (0.4, 0.0), (0.0, 0.0), P)
    assert a == b


def test_covariance_hermitian_in_lag():
    a, _ = covariance_refocused((0, 0), (0.3, 0.2), (0.5, 0.0), P)
    b, _ = covariance_refocused((0, 0), (-0.3, -0.2), (0.5, 0.0), P)
    assert a == pytest.approx(b.conjugate(), rel=1e-9)


def test_covariance_decays_with_lag():
    vals = [abs(covariance_refocused((0, 0), (h, 0.0), (0, 0), P)[0]) for h in (0.0, 0.5, 1.0, 3.0)]
    assert vals == sorted(vals, reverse=True)


# --- intensities and SNR ---------------------------------------------------------------------

def weak(Q=1e-8):
    base = params(Q=Q)
    return MomentParams(base.k0, base.L, 10.0, 2.0, base.medium)


def test_intensities_vanish_without_scattering():
    # I_p is second order in sigma^2, I_b first order
    a, b = weak(1e-6), weak(1e-8)
    assert peak_intensity(b)[0] < 1e-15
    assert peak_intensity(a)[0] / peak_intensity(b)[0] == pytest.approx(1e4, rel=1e-3)
    assert background_intensity(a)[0] / background_intensity(b)[0] == pytest.approx(1e2, rel=1e-3)


def test_background_intensity_routes_agree():
    assert background_intensity_general(P, (0.0, 0.0))[0] == pytest.approx(background_intensity(P)[0], rel=1e-5)


def test_peak_intensity_routes_agree():
    assert peak_intensity_general(P, (0.0, 0.0))[0] == pytest.approx(peak_intensity(P)[0], rel=1e-6)


def test_peak_intensity_strong_scattering_asymptote():
    p = params(Q=40.0, Xr=1.0, rho0=1.0)
    assert peak_intensity(p)[0] == pytest.approx(0.25, rel=0.10)


def test_snr_closed_form_arithmetic():
    p = MomentParams(10.0, 1.0, 1.0, 0.1, MediumModel(math.sqrt(6.0), 1.0))   # X = 1
    assert p.X == pytest.approx(1.0)
    assert snr_closed_form(p) == pytest.approx(50.5)


def test_snr_closed_form_equal_radii():
    p = MomentParams(10.0, 10.0, 2.0, 2.0, MediumModel(0.1, 1.0))
    assert snr_closed_form(p) == pytest.approx(1.0)


def test_snr_plateau():
    p = params(Q=40.0, Xr=20.0, rho0=0.0)
    p = MomentParams(p.k0, p.L, p.r0, p.r0 / 10, p.medium)
    assert regime(p) == 3
    assert snr_closed_form(p) == pytest.approx((p.r0 / p.rho0) ** 2, rel=0.06)


@pytest.mark.parametrize("Xr, Xp, reg", [(0.01, 0.5, 1), (0.02, 2.0, 2), (20.0, 2000.0, 3)])
def test_snr_quadrature_matches_closed_form(Xr, Xp, reg):
    base = params(Q=40.0, Xr=Xr)
    p = MomentParams(base.k0, base.L, base.r0, math.sqrt(base.X / Xp), base.medium)
    res = snr(p)
    assert res.regime == reg
    assert res.quadrature == pytest.approx(res.closed_form, rel=0.10)


def test_snr_warns_outside_validity():
    with pytest.warns(UserWarning):
        snr(params(Q=4.0))


# --- strong scattering profile and shifts ----------------------------------------------------

def test_profile_peak_value():
    p = params(Q=40.0, Xr=1.0)
    assert strong_scattering_profile((0.0, 0.0), p)[0] == pytest.approx(0.5)


def test_R_tr_large_mirror_limit():
    p = params(Q=40.0, Xr=1e-9)
    s = p.medium
    assert p.R_tr**2 == pytest.approx(4 * s.l_c / (s.sigma**2 * p.k0**2 * p.L), rel=1e-6)


def test_profile_matches_limit_quadrature():
    p = params(Q=40.0, Xr=1.0, rho0=1.0)
    r = np.linspace(0, 2 * p.R_tr, 41)
    pts = np.column_stack([r, 0 * r])
    lim, _ = limit_mean_refocused(pts, (0.0, 0.0), p)
    prof = strong_scattering_profile(pts, p)
    w = r                                     # radial measure of the disk
    err = math.sqrt(np.sum(w * np.abs(lim - prof) ** 2) / np.sum(w * np.abs(lim) ** 2))
    assert err <= 0.10


def test_zero_shift():
    sp = shift_params((0.0, 0.0), P)
    assert sp.x_b == (0.0, 0.0)
    assert sp.snr_shifted == snr_closed_form(P)


def test_alpha_small_scattering_limit():
    p = weak(1e-9)
    assert p.alpha_L == pytest.approx(p.L / (2 * p.k0 * p.r0**2), rel=1e-8)


def test_snr_at_b_max_is_one():
    sp = shift_params((0.0, 0.0), P)
    for direction in ((1.0, 0.0), (0.6, 0.8)):
        b = sp.b_max * np.asarray(direction)
        assert abs(shift_params(b, P).snr_shifted - 1) <= 1e-12


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_shift_target_inverse(x1, x2):
    sp = shift_params((0.0, 0.0), P)
    b = sp.b_target((x1, x2))
    xb = shift_params(b, P).x_b
    assert np.allclose(xb, (x1, x2), rtol=0, atol=1e-12)


def test_shift_rejects_large_elements():
    with pytest.raises(ValueError):
        shift_params((0, 0), MomentParams(10, 10, 1.0, 1.0, MediumModel(0.1, 1.0)))


# --- K and A ------------------------------------------------------------------------------

def test_K_at_zero():
    assert K_and_A(0.0, (0, 0), (0, 0), P)["K"] == (2 * math.pi) ** 8


def test_A_at_zero():
    assert K_and_A(0.0, (1.0, 2.0), (0.5, 0.0), P)["A"] == 0


def test_A_against_radial_quadrature():
    p = params(Q=12.0)
    z = p.medium.l_c * p.k0
    got = K_and_A(z, (0.0, 0.0), (0.0, 0.0), p)["A"]

    def f(r):
        return 2 * math.pi * r * math.expm1(0.25 * p.k0**2 * z * float(p.medium.C0 * math.exp(-0.5 * r * r)))
    ref, _ = integrate.quad(f, 0, 12, epsabs=1e-14, epsrel=1e-12)
    assert got.real == pytest.approx(ref / (2 * (2 * math.pi) ** 2), rel=1e-5)
    assert abs(got.imag) < 1e-12


def test_A_rejects_negative_z():
    with pytest.raises(ValueError):
        K_and_A(-1.0, (0, 0), (0, 0), P)


# --- images -------------------------------------------------------------------------------

def test_single_point_image_at_origin_is_profile():
    pts = np.array([(0.0, 0.0), (0.2, 0.1), (1.0, -0.5)])
    img = predict_image(pts, ImageFunction.from_points([(0.0, 0.0)]), P)
    np.testing.assert_allclose(img, strong_scattering_profile(pts, P), rtol=1e-14)


def test_single_point_image_sits_at_shift():
    b0 = np.array([4.0, -2.0])
    x = np.array([(P.alpha_L * b0[0] + d, P.alpha_L * b0[1]) for d in np.linspace(-1, 1, 201)])
    img = np.abs(predict_image(x, ImageFunction.from_points([b0]), P))
    assert abs(x[np.argmax(img), 0] - P.alpha_L * b0[0]) <= 0.01


@pytest.mark.filterwarnings("ignore:image support")
def test_square_image_peaks_resolved():
    d = 3 * P.R_tr / P.alpha_L
    pts = np.array([(-d / 2, -d / 2), (d / 2, -d / 2), (-d / 2, d / 2), (d / 2, d / 2)])
    centres = P.alpha_L * pts
    psi = ImageFunction.from_points(pts)
    at = np.abs(predict_image(centres, psi, P))
    mid = np.abs(predict_image(centres[:2].mean(axis=0, keepdims=True), psi, P))
    assert np.all(mid < 0.8 * at[:2])
    np.testing.assert_allclose(at, at[0], rtol=1e-12)


def test_image_attenuation_ordering():
    d = 8 * P.R_tr / P.alpha_L
    pts = np.array([(0.0, 0.0), (d, 0.0), (0.0, -1.5 * d)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        at = np.abs(predict_image(P.alpha_L * pts, ImageFunction.from_points(pts), P))
    assert at[0] > at[1] > at[2]
    from paraxial_tr.moments import attenuation_exponent
    expect = np.exp(-np.sum(pts**2, axis=1) * attenuation_exponent(P) / (4 * P.r0**2))
    np.testing.assert_allclose(at / at[0], expect, rtol=1e-6, atol=1e-12)   # tails overlap at e^-32


def test_image_warns_beyond_b_max():
    sp = shift_params((0.0, 0.0), P)
    with pytest.warns(UserWarning):
        predict_image((0.0, 0.0), ImageFunction.from_points([(2 * sp.b_max, 0.0)]), P)


# --- aggregation ----------------------------------------------------------------------------

def test_predict_homogeneous():
    pred = predict(homogeneous())
    assert pred.snr == math.inf and pred.U_peak == 1


def test_predict_collects_pieces():
    pred = predict(P, offsets=[(0.0, 0.0)], probes=[((0.0, 0.0), (0.5, 0.0))], shifts=[(1.0, 0.0)])
    assert pred.mean_profile[(0.0, 0.0)] == pytest.approx(peak_amplitude(P))
    assert pred.snr == pytest.approx(pred.I_p / pred.I_b)
    assert pred.R_max == pytest.approx(P.alpha_L * pred.b_max)
    assert len(pred.covariance) == 1 and len(pred.snr_shifted) == 1

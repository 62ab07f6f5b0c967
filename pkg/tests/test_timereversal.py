import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paraxial_tr.core import MirrorSpec, TransverseGrid, ValidationError
from paraxial_tr.moments import MomentParams, homogeneous_shift, mean_field_M1
from paraxial_tr.propagator import ComplexField, realization_for
from paraxial_tr.timereversal import (ImageFunction, RecordedField, emission_source, record, run_channels,
                                      run_experiment, smooth)

from conftest import rel, small_config

G = TransverseGrid(64, 16.0)


def _flip(a):
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))     # x -> -x on a grid with the origin at n/2


# --- smoothing ------------------------------------------------------------------------

def test_smoothing_constant_unchanged():
    c = np.full((64, 64), 3.0 - 1j)
    np.testing.assert_allclose(smooth(c, G, 1.0), c, atol=1e-14)


def test_smoothing_delta_gives_gaussian():
    rho = 1.0
    d = np.zeros((64, 64))
    d[32, 32] = 1 / G.spacing**2
    ref = np.exp(-G.r2 / (2 * rho**2)) / (2 * math.pi * rho**2)
    assert rel(smooth(d, G, rho).real, ref) <= 1e-8


def test_smoothing_matches_real_space_convolution(rng):
    g = TransverseGrid(32, 8.0)
    rho = 3 * g.spacing
    f = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    # periodised Gaussian kernel, summed over image cells
    d = (np.arange(32) - 16) * g.spacing
    k1 = sum(np.exp(-(d + m * g.extent) ** 2 / (2 * rho**2)) for m in (-1, 0, 1))
    kern = np.outer(k1, k1) / (2 * math.pi * rho**2) * g.spacing**2
    # kern is centred at index 16: (K * f)(i) = sum_k K(i - k) f(k)
    idx = np.arange(32)
    conv = np.zeros_like(f)
    for i in range(32):
        for j in range(32):
            conv[i, j] = np.sum(kern[(i - idx[:, None] + 16) % 32, (j - idx[None, :] + 16) % 32] * f)
    assert rel(smooth(f, g, rho), conv) <= 1e-10


def test_record_rejects_under_resolved_kernel():
    with pytest.raises(ValidationError):
        record(ComplexField(np.ones((64, 64), complex), G), G.spacing)


# --- emission ---------------------------------------------------------------------------

MIRROR = MirrorSpec(4.0, 1.0)


def _rec(rng, rho=1.0):
    return RecordedField(ComplexField(rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64)), G),
                         rho)


def test_emission_delta_kernel_limit(rng):
    rec = _rec(rng, rho=1e-9)
    s = emission_source(rec, MIRROR).values
    ref = np.exp(-G.r2 / MIRROR.R_m**2) * np.conj(rec.u_rec.values)
    np.testing.assert_allclose(s, ref, atol=1e-12)


def test_emission_parity(rng):
    rec = _rec(rng)
    flipped = RecordedField(ComplexField(_flip(rec.u_rec.values), G), rec.rho_0)
    a = emission_source(rec, MIRROR).values
    b = emission_source(flipped, MIRROR).values
    np.testing.assert_allclose(np.abs(b), np.abs(_flip(a)), atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_point_image_equals_shifted_channel(b1, b2):
    rec = _rec(np.random.default_rng(1))
    a = emission_source(rec, MIRROR, b=(b1, b2)).values
    b = emission_source(rec, MIRROR, psi=ImageFunction.from_points([(b1, b2)])).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_emission_linear_in_image(rng):
    rec = _rec(rng)
    pts = [(1.0, 0.5), (-2.0, 1.5)]
    w = [0.7, -1.3]
    both = emission_source(rec, MIRROR, psi=ImageFunction.from_points(pts, w)).values
    parts = sum(wi * emission_source(rec, MIRROR, b=p).values for p, wi in zip(pts, w))
    np.testing.assert_allclose(both, parts, atol=1e-12)


def test_emission_rejects_nonfinite_b(rng):
    with pytest.raises(ValidationError):
        emission_source(_rec(rng), MIRROR, b=(math.nan, 0.0))


def test_sampled_image_matches_points():
    vals = np.zeros((5, 5))
    vals[1, 3], vals[4, 0] = 2.0, -1.0
    sampled = ImageFunction.from_samples(vals, 0.5)
    pts, w = sampled.as_points()
    pointwise = ImageFunction.from_points(pts, w)
    xi = np.linspace(-2, 2, 7)
    np.testing.assert_allclose(sampled.ft(xi, xi), pointwise.ft(xi, xi), atol=1e-13)
    assert sampled.support_radius == pytest.approx(math.sqrt(2))   # sample [4, 0] sits at (1, -1)


def test_image_rescaling():
    psi = ImageFunction.from_points([(1.0, 2.0)], [3.0])
    r = psi.rescaled(0.5)
    np.testing.assert_allclose(r.points, [[2.0, 4.0]])
    s = ImageFunction.from_samples(np.ones((3, 3)), 1.0).rescaled(0.5)
    assert s.spacing == 2.0 and s.values[0, 0] == 0.25


# --- full chain ---------------------------------------------------------------------------

HOMOG = small_config(sigma=0.0, n=128, extent=32.0, L=10.0, R_m=4.0, rho_0=1.0)


@pytest.mark.parametrize("y, b", [((0.0, 0.0), (0.0, 0.0)), ((1.0, -0.5), (0.0, 0.0)),
                                  ((0.0, 0.0), (3.0, 1.0)), ((0.5, 0.25), (-2.0, 2.0))])
def test_homogeneous_chain_matches_exact_mean_field(y, b):
    import dataclasses
    cfg = dataclasses.replace(HOMOG, y=y, b=b)
    g = cfg.grid
    u = run_experiment(cfg, realization_for(cfg, 0)).u_tr.values
    p = MomentParams.from_config(cfg)
    yv = np.asarray(y)
    pts = np.array([(yv[0] + a * g.spacing, yv[1] + c * g.spacing)
                    for a in range(-12, 13, 3) for c in range(-12, 13, 4)])
    m, _ = mean_field_M1((pts + yv) / 2, pts - yv, p, b=b)
    mc = np.array([u[g.index_of(x)] for x in pts])
    assert np.max(np.abs(mc - m)) <= 1e-6 * np.max(np.abs(m))


def test_homogeneous_peak_at_source():
    u = run_experiment(HOMOG, realization_for(HOMOG, 0)).u_tr.values
    assert np.unravel_index(np.argmax(np.abs(u)), u.shape) == HOMOG.grid.index_of((0.0, 0.0))


def test_homogeneous_shift_direction_and_size():
    import dataclasses
    from paraxial_tr.montecarlo import fit_peak
    b = (8.0, 0.0)
    cfg = dataclasses.replace(HOMOG, b=b)
    u = run_experiment(cfg, realization_for(cfg, 0)).u_tr.values
    fit = fit_peak(np.abs(u) ** 2, cfg.grid)
    expect = homogeneous_shift(MomentParams.from_config(cfg)) * b[0]
    assert abs(fit.center[0] - expect) <= cfg.grid.spacing
    assert abs(fit.center[1]) <= cfg.grid.spacing


def test_channels_share_the_record():
    cfg = small_config(sigma=0.05)
    real = realization_for(cfg, 2)
    multi = run_channels(cfg, real, [((0.0, 0.0), None), ((1.0, 0.0), None)])
    single = run_experiment(cfg, real, b=(1.0, 0.0)).u_tr.values
    np.testing.assert_allclose(multi[1], single, atol=1e-13)


def test_refocused_field_linear_in_image():
    cfg = small_config(sigma=0.05)
    real = realization_for(cfg, 5)
    pts, w = [(1.0, 0.0), (0.0, -1.0)], [2.0, 0.5]
    img = run_experiment(cfg, real, psi=ImageFunction.from_points(pts, w)).u_tr.values
    parts = sum(wi * run_experiment(cfg, real, b=p).u_tr.values for p, wi in zip(pts, w))
    np.testing.assert_allclose(img, parts, atol=1e-12 * np.abs(parts).max())

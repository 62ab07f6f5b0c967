"""Random medium: isotropic covariance profiles and spectral phase-screen synthesis.

The Brownian field B has E[B(z,x)B(z',x')] = min(z,z') C(x - x') with
C(x) = sigma^2 l_c Ct(|x|/l_c) and Ct(0) = 1, Ct'(0) = 0, Ct''(0) = -1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import fft, special

from .grid import TransverseGrid, ValidationError

SQRT_HALF_PI = np.sqrt(np.pi / 2)


@dataclass(frozen=True)
class Profile:
    name: str
    ct: Callable[[np.ndarray], np.ndarray]
    # 2D Fourier transform of Ct(|u|) in units where l_c = 1
    spectrum: Callable[[np.ndarray], np.ndarray]
    # closed-form int_0^T Ct(|u - w z|) dz, optional
    segment: Optional[Callable] = None


def _gauss_ct(r):
    return np.exp(-0.5 * np.asarray(r) ** 2)


def _gauss_spectrum(kappa):
    return 2 * np.pi * np.exp(-0.5 * np.asarray(kappa) ** 2)


def _erf_diff(s, t):
    """erf(s) - erf(t) without cancellation in the tails."""
    s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    out = np.empty(s.shape)
    pos = (s >= 0) & (t >= 0)
    neg = (s <= 0) & (t <= 0) & ~pos
    mid = ~(pos | neg)
    out[pos] = special.erfc(t[pos]) - special.erfc(s[pos])
    out[neg] = special.erfc(-s[neg]) - special.erfc(-t[neg])
    out[mid] = special.erf(s[mid]) - special.erf(t[mid])
    return out


_GL3 = np.polynomial.legendre.leggauss(3)


def _gauss_segment(u1, u2, w1, w2, T):
    """int_0^T exp(-|u - w z|^2 / 2) dz, vectorised over broadcastable inputs."""
    u1, u2, w1, w2, T = np.broadcast_arrays(*(np.asarray(a, float) for a in (u1, u2, w1, w2, T)))
    m = np.hypot(w1, w2)
    out = np.empty(m.shape)
    short = m * T < 1e-3
    # nearly constant along the segment: 3-point Gauss-Legendre is exact to O((mT)^6)
    if short.any():
        zs, ws = _GL3
        acc = 0.0
        for zi, wi in zip(zs, ws):
            z = 0.5 * T[short] * (zi + 1)
            d1 = u1[short] - w1[short] * z
            d2 = u2[short] - w2[short] * z
            acc = acc + wi * np.exp(-0.5 * (d1 * d1 + d2 * d2))
        out[short] = 0.5 * T[short] * acc
    lg = ~short
    if lg.any():
        mm = m[lg]
        e1, e2 = w1[lg] / mm, w2[lg] / mm
        p = u1[lg] * e1 + u2[lg] * e2
        d = u1[lg] * e2 - u2[lg] * e1
        s = (mm * T[lg] - p) / np.sqrt(2)
        t = -p / np.sqrt(2)
        out[lg] = np.exp(-0.5 * d * d) * SQRT_HALF_PI / mm * _erf_diff(s, t)
    return out


# Matern nu=5/2 rescaled so that Ct''(0) = -1
_ELL2_M52 = 5.0 / 3.0


def _matern52_ct(r):
    t = np.sqrt(5.0 / _ELL2_M52) * np.asarray(r, float)
    return (1 + t + t * t / 3) * np.exp(-t)


def _matern52_spectrum(kappa):
    a = 5.0 / _ELL2_M52
    return 10 * np.pi * a ** 2.5 * (a + np.asarray(kappa, float) ** 2) ** -3.5


PROFILES: dict[str, Profile] = {
    "gaussian": Profile("gaussian", _gauss_ct, _gauss_spectrum, _gauss_segment),
    "matern52": Profile("matern52", _matern52_ct, _matern52_spectrum),
}


def register_profile(profile: Profile, check: bool = True) -> None:
    if check:
        check_profile(profile)
    PROFILES[profile.name] = profile


def check_profile(profile: Profile, h: float = 1e-3, tol: float = 1e-5) -> None:
    """Finite-difference check of Ct(0) = 1, Ct'(0) = 0, Ct''(0) = -1."""
    c0, cp, cm = (float(profile.ct(np.array(r))) for r in (0.0, h, -h))
    if abs(c0 - 1) > tol:
        raise ValidationError("shape", f"Ct(0) = {c0}, expected 1")
    if abs(cp - cm) / (2 * h) > tol:
        raise ValidationError("shape", "Ct'(0) != 0")
    d2 = (cp - 2 * c0 + cm) / h**2
    if abs(d2 + 1) > tol:
        raise ValidationError("shape", f"Ct''(0) = {d2}, expected -1")


# nodes for profiles without a closed-form segment integral
_GL_PANELS = 16
_GL_ORDER = 16
_GLX, _GLW = np.polynomial.legendre.leggauss(_GL_ORDER)


@dataclass(frozen=True)
class MediumModel:
    sigma: float
    l_c: float
    shape: str = "gaussian"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("sigma", "must be >= 0")
        if not self.l_c > 0:
            raise ValidationError("l_c", "must be > 0")
        if self.shape not in PROFILES:
            raise ValidationError("shape", f"unknown profile {self.shape!r}")

    @property
    def profile(self) -> Profile:
        return PROFILES[self.shape]

    @property
    def C0(self) -> float:
        return self.sigma**2 * self.l_c

    def line_integral(self, x1, x2, v1, v2, T) -> np.ndarray:
        """int_0^T C(x - v z) dz for broadcastable components of x and v."""
        lc = self.l_c
        prof = self.profile
        if prof.segment is not None:
            return self.C0 * lc * prof.segment(
                np.asarray(x1) / lc, np.asarray(x2) / lc, v1, v2, np.asarray(T) / lc)
        x1, x2, v1, v2, T = np.broadcast_arrays(*(np.asarray(a, float) for a in (x1, x2, v1, v2, T)))
        # split at the closest approach: Ct need not be smooth at r = 0
        v2n = v1 * v1 + v2 * v2
        zc = np.clip(np.divide(x1 * v1 + x2 * v2, v2n, out=np.zeros(x1.shape), where=v2n > 0), 0.0, T)
        edges = np.linspace(0.0, 1.0, _GL_PANELS + 1)
        acc = np.zeros(x1.shape)
        for lo, width in ((0.0, zc), (zc, T - zc)):
            for a, b in zip(edges[:-1], edges[1:]):
                for xi, wi in zip(_GLX, _GLW):
                    z = lo + width * (a + (b - a) * (xi + 1) / 2)
                    acc += wi * (b - a) / 2 * width * prof.ct(np.hypot(x1 - v1 * z, x2 - v2 * z) / lc)
        return self.C0 * acc


def covariance_at(m: MediumModel, x) -> np.ndarray:
    x = np.asarray(x, float)
    r = np.hypot(x[..., 0], x[..., 1]) if x.ndim and x.shape[-1] == 2 else np.abs(x)
    return m.C0 * m.profile.ct(r / m.l_c)


def spectral_density(m: MediumModel, k) -> np.ndarray:
    """Ĉ(k) = ∫ C(x) exp(-i k.x) dx; ``k`` is a 2-vector or an array of |k|."""
    k = np.asarray(k, float)
    kappa = np.hypot(k[..., 0], k[..., 1]) if k.ndim and k.shape[-1] == 2 else np.abs(k)
    return m.C0 * m.l_c**2 * m.profile.spectrum(kappa * m.l_c)


@dataclass(frozen=True)
class PhaseScreen:
    values: np.ndarray   # ΔB over one step, real
    delta_z: float


@lru_cache(maxsize=16)
def _screen_filter(m: MediumModel, g: TransverseGrid) -> np.ndarray:
    # circulant eigenvalues of the sampled covariance are Ĉ(k)/dx^2
    k1 = 2 * np.pi * np.fft.fftfreq(g.n, g.spacing)
    k2 = 2 * np.pi * np.fft.rfftfreq(g.n, g.spacing)
    kappa = np.hypot(k1[:, None], k2[None, :])
    filt = np.sqrt(spectral_density(m, kappa)) / g.spacing
    filt.setflags(write=False)
    return filt


def check_resolution(m: MediumModel, g: TransverseGrid) -> None:
    if g.spacing > m.l_c / 2:
        raise ValidationError("grid_extent", f"spacing {g.spacing:g} exceeds l_c/2 = {m.l_c / 2:g}")
    if g.dk > 1 / m.l_c:
        raise ValidationError("grid_extent", f"dual spacing {g.dk:g} exceeds 1/l_c")


def white_noise(g: TransverseGrid, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((g.n, g.n))


def synthesize_screen(m: MediumModel, g: TransverseGrid, delta_z: float,
                      rng: np.random.Generator, noise: Optional[np.ndarray] = None) -> PhaseScreen:
    """Stationary Gaussian increment with covariance delta_z * C(x - x').

    Real white noise is filtered by sqrt(Ĉ) in the Fourier domain; its rfft is
    Hermitian by construction so the screen is real.
    """
    if delta_z < 0:
        raise ValidationError("delta_z", "must be >= 0")
    check_resolution(m, g)
    w = white_noise(g, rng) if noise is None else noise
    spec = fft.rfft2(w)
    spec *= _screen_filter(m, g) * np.sqrt(delta_z)
    return PhaseScreen(fft.irfft2(spec, s=(g.n, g.n)), float(delta_z))

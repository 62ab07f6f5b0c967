"""Moment predictions for the refocused field.

Notation: Q = sigma^2 k0^2 l_c L (propagation distance in units of L_sca / 4),
X = sigma^2 L^3 / (6 l_c) (squared radius of the diffuse beam),
s = exp(-Q/4) (coherent amplitude factor of one round trip leg).

Everything except ``mean_field_M1`` is the scintillation limit; see the
README for how finite-parameter Monte Carlo runs are compared against it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .medium import MediumModel
from .quadrature import QuadratureError, doubling, gl_nodes, log_i0, tensor_2d

ATOL = 1e-8
TRUNC = 8.0


@dataclass(frozen=True)
class MomentParams:
    k0: float
    L: float
    r0: float
    rho0: float
    medium: MediumModel

    @classmethod
    def from_config(cls, cfg) -> "MomentParams":
        return cls(cfg.k0, cfg.L, cfg.mirror.r0, cfg.mirror.rho_0, cfg.medium)

    @property
    def C0(self) -> float:
        return self.medium.C0

    @property
    def Q(self) -> float:
        return self.k0**2 * self.C0 * self.L

    @property
    def X(self) -> float:
        m = self.medium
        return m.sigma**2 * self.L**3 / (6 * m.l_c)

    @property
    def L_sca(self) -> float:
        return math.inf if self.medium.sigma == 0 else 4 / (self.medium.sigma**2 * self.k0**2 * self.medium.l_c)

    @property
    def R_tr(self) -> float:
        if self.medium.sigma == 0:
            return math.inf
        X, r2 = self.X, self.r0**2
        R2 = 4 * self.medium.l_c / (self.medium.sigma**2 * self.k0**2 * self.L)
        return math.sqrt(R2 * (1 + X / r2) / (1 + X / (4 * r2)))

    @property
    def alpha_L(self) -> float:
        return self.L / (2 * self.k0 * self.r0**2 * (1 + self.X / (4 * self.r0**2)))

    def shift_damping(self, b) -> float:
        """exp(-rho0^2 |b|^2 / (4 r0^2 (r0^2 - rho0^2))): element-smoothing loss of a tilt."""
        b2 = float(np.dot(b, b))
        r2, p2 = self.r0**2, self.rho0**2
        return math.exp(-p2 * b2 / (4 * r2 * (r2 - p2)))

    def scatter(self, x1, x2, xi1, xi2, T: Optional[float] = None) -> np.ndarray:
        """(k0^2/4) int_0^T C(x - xi z / k0) dz."""
        T = self.L if T is None else T
        return 0.25 * self.k0**2 * self.medium.line_integral(x1, x2, xi1 / self.k0, xi2 / self.k0, T)


def _pts(p) -> np.ndarray:
    return np.atleast_2d(np.asarray(p, float)).reshape(-1, 2)


def _start_panels(width: float, feature: float) -> int:
    return int(min(64, max(2, math.ceil(width / max(feature, 1e-300) / 2))))


# ------------------------------------------------------------------ mean field

def mean_field_M1(r, q, params: MomentParams, b=(0.0, 0.0), atol: float = ATOL):
    """Finite-parameter mean E[u_tr(x)] with x = r + q/2 (observation) and
    r - q/2 (source). Returns (value, error estimate); vectorised over rows of r, q."""
    r, q = np.broadcast_arrays(_pts(r), _pts(q))
    p = params
    b = np.asarray(b, float)
    k0, L, r2, rho2 = p.k0, p.L, p.r0**2, p.rho0**2
    lam = (L / k0) ** 2 / rho2           # weight of the Fresnel (element) Gaussian
    pref = r2 / (4 * np.pi) * p.shift_damping(b)
    c = b / r2
    out, err = np.empty(len(r), complex), np.empty(len(r))
    for n, (ri, qi) in enumerate(zip(r, q)):
        centre = (r2 * c + lam * k0 * qi / L) / (r2 + lam)
        half = TRUNC / math.sqrt((r2 + lam) / 2)
        box = (centre[0] - half, centre[0] + half, centre[1] - half, centre[1] + half)

        def f(x1, x2, ri=ri, qi=qi):
            X1, X2 = np.meshgrid(x1, x2, indexing="ij")
            expo = (1j * (X1 * ri[0] + X2 * ri[1])
                    - 0.25 * r2 * ((X1 - c[0]) ** 2 + (X2 - c[1]) ** 2)
                    - ((qi[0] - X1 * L / k0) ** 2 + (qi[1] - X2 * L / k0) ** 2) / (4 * rho2)
                    + p.scatter(qi[0], qi[1], X1, X2) - 0.25 * p.Q)
            return np.exp(expo)

        feat = min(half, k0 * p.medium.l_c / L)
        v, e = tensor_2d(f, box, _start_panels(2 * half, feat), atol / pref)
        out[n], err[n] = pref * v, pref * e
    return out, err


def _limit_integral(x, y, params: MomentParams, b, atol, scatter_offset=True):
    x, y = np.broadcast_arrays(_pts(x), _pts(y))
    p = params
    b = np.asarray(b, float)
    r2 = p.r0**2
    c = b / r2
    pref = r2 / (4 * np.pi) * p.shift_damping(b)
    half = TRUNC * math.sqrt(2) / p.r0
    box = (c[0] - half, c[0] + half, c[1] - half, c[1] + half)
    out, err = np.empty(len(x), complex), np.empty(len(x))
    for n, (xi_, yi) in enumerate(zip(x, y)):
        def f(x1, x2, xo=xi_, yo=yi):
            X1, X2 = np.meshgrid(x1, x2, indexing="ij")
            expo = (1j * (X1 * yo[0] + X2 * yo[1])
                    - 0.25 * r2 * ((X1 - c[0]) ** 2 + (X2 - c[1]) ** 2)
                    + p.scatter(xo[0], xo[1], X1, X2) - 0.25 * p.Q)
            return np.exp(expo)

        feat = min(half, p.k0 * p.medium.l_c / p.L)
        v, e = tensor_2d(f, box, _start_panels(2 * half, feat), atol / pref)
        out[n], err[n] = pref * v, pref * e
    return out, err


def limit_mean_refocused(x, y, params: MomentParams, b=(0.0, 0.0), atol: float = ATOL):
    """Scintillation-limit mean refocused field at offset x from the source y."""
    return _limit_integral(x, y, params, b, atol)


def peak_amplitude(params: MomentParams, y=(0.0, 0.0), b=(0.0, 0.0)) -> complex:
    v, _ = limit_mean_refocused((0.0, 0.0), y, params, b)
    return complex(v[0])


def background_amplitude(params: MomentParams, y=(0.0, 0.0), b=(0.0, 0.0)) -> complex:
    """|x| -> infinity value: the coherent wave that survives both legs."""
    y, b = np.asarray(y, float), np.asarray(b, float)
    r2 = params.r0**2
    return complex(params.shift_damping(b) * np.exp(-0.25 * params.Q - y @ y / r2 + 1j * (y @ b) / r2))


# -------------------------------------------------------------- intensities

def _radial_scatter(params: MomentParams, xi_abs) -> np.ndarray:
    xi_abs = np.asarray(xi_abs, float)
    return params.scatter(0.0, 0.0, xi_abs, np.zeros_like(xi_abs))


def peak_intensity(params: MomentParams) -> tuple[float, float]:
    """I_p for y = 0 by the one-dimensional radial integral."""
    p = params
    s = math.exp(-0.25 * p.Q)

    def f(a):
        g = _radial_scatter(p, np.array([math.sqrt(2) * a / p.r0]))[0]
        return a * math.exp(-0.5 * a * a) * (math.exp(g - 0.25 * p.Q) - s)

    v, e = integrate.quad(f, 0.0, 2 * TRUNC, epsabs=1e-13, epsrel=1e-12, limit=400)
    return v * v, 2 * abs(v) * e


def peak_intensity_general(params: MomentParams, y) -> tuple[float, float]:
    """I_p for a general source offset y (two-dimensional xi integral)."""
    p = params
    y = np.asarray(y, float)
    r2 = p.r0**2
    half = TRUNC * math.sqrt(2) / p.r0
    s = math.exp(-0.25 * p.Q)

    def f(x1, x2):
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        g = _radial_scatter(p, np.hypot(X1, X2))
        return np.exp(1j * (X1 * y[0] + X2 * y[1]) - 0.25 * r2 * (X1**2 + X2**2)) * (np.exp(g - 0.25 * p.Q) - s)

    pref = r2 / (4 * np.pi)
    feat = min(half, p.k0 * p.medium.l_c / p.L)
    v, e = tensor_2d(f, (-half, half, -half, half), _start_panels(2 * half, feat), 1e-10 / pref)
    v, e = pref * complex(v), pref * float(e)
    return abs(v) ** 2, 2 * abs(v) * e


def background_intensity(params: MomentParams, atol: float = 1e-12, rtol: float = 1e-9):
    """I_b for y = 0 via the (a, b) radial integral with the I_0 kernel in log space."""
    p = params
    r2, p2 = p.r0**2, p.rho0**2
    kap = (r2 - p2) / (r2 + p2)
    scale = 2 / math.sqrt(r2 + p2)
    upper = TRUNC / math.sqrt(1 - kap) + TRUNC
    pref = (2 * p.r0 * p.rho0 / (r2 + p2)) ** 2
    s2 = math.exp(-0.5 * p.Q)
    width = 1 / math.sqrt(1 + kap)

    def rule(panels):
        a, w = gl_nodes(0.0, upper, panels)
        g = _radial_scatter(p, scale * a)
        A, B = a[:, None], a[None, :]
        logw = np.log(A * B) - 0.5 * (A * A + B * B) + log_i0(kap * A * B)
        bracket = np.exp(g[:, None] + g[None, :] - 0.5 * p.Q) - s2
        return pref * (w @ (np.exp(logw) * bracket) @ w)

    v, e = doubling(rule, _start_panels(upper, width), atol, rtol, 4096, "background intensity")
    return float(v), float(e)


def _cov_nodes(params: MomentParams, panels: int):
    A = TRUNC * math.sqrt(1 / params.rho0**2 + 1 / params.r0**2)
    return gl_nodes(-A, A, panels)


def covariance_refocused(x, h, y, params: MomentParams, atol: float = 1e-10, rtol: float = 1e-7):
    """Limit covariance Cov(u(y + x + h/2), u(y + x - h/2)); x does not enter."""
    del x  # the limit covariance is independent of the central offset
    p = params
    h = np.asarray(h, float)
    y = np.asarray(y, float)
    r2, p2 = p.r0**2, p.rho0**2
    a_, c_ = (r2 + p2) / 8, (r2 - p2) / 4
    s = math.exp(-0.25 * p.Q)
    pref = (p.r0 * p.rho0 / (4 * np.pi)) ** 2
    if p.medium.sigma == 0:
        return 0j, 0.0

    def rule(panels):
        t, w = _cov_nodes(p, panels)
        K = np.exp(-a_ * t[:, None] ** 2 + c_ * t[:, None] * t[None, :] - a_ * t[None, :] ** 2)
        T1, T2 = np.meshgrid(t, t, indexing="ij")
        F = s * np.expm1(p.scatter(h[0], h[1], T1, T2))
        G = s * np.expm1(p.scatter(0.0, 0.0, T1, T2))
        ph1, ph2 = np.exp(1j * t * y[0]) * w, np.exp(1j * t * y[1]) * w
        F = F * np.outer(ph1, ph2)
        G = G * np.outer(ph1.conj(), ph2.conj())
        cross = np.sum(G * (K.T @ F @ K))
        f_only = s * ((K @ ph1.conj()) @ F @ (K @ ph2.conj()))
        g_only = s * ((K @ ph1) @ G @ (K @ ph2))
        return pref * (cross + f_only + g_only)

    std_v = math.sqrt(2) / p.r0
    A = TRUNC * math.sqrt(1 / p2 + 1 / r2)
    v, e = doubling(rule, _start_panels(2 * A, 1.5 * std_v), atol, rtol, 512, "covariance")
    return complex(v), float(e)


def background_intensity_general(params: MomentParams, y) -> tuple[float, float]:
    v, e = covariance_refocused((0.0, 0.0), (0.0, 0.0), y, params)
    return v.real, e


# --------------------------------------------------------------- closed forms

@dataclass(frozen=True)
class SNRResult:
    quadrature: float
    closed_form: float
    regime: int
    I_p: float
    I_b: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.quadrature)


def regime(params: MomentParams) -> int:
    """1: rho0^2 > X (SNR ~ 1); 2: rho0^2 < X < r0^2 (SNR ~ X/rho0^2);
    3: X > r0^2 (plateau r0^2/rho0^2)."""
    X = params.X
    if params.rho0**2 > X:
        return 1
    return 2 if X < params.r0**2 else 3


def snr_closed_form(params: MomentParams) -> float:
    X = params.X
    return (1 + X / params.rho0**2) / (1 + X / params.r0**2)


def snr(params: MomentParams) -> SNRResult:
    Ip, _ = peak_intensity(params)
    Ib, _ = background_intensity(params)
    q = math.inf if Ib == 0 else Ip / Ib
    if params.Q < 10:
        warnings.warn("sigma^2 k0^2 l_c L < 10: closed-form SNR outside its validity range", stacklevel=2)
    return SNRResult(q, snr_closed_form(params), regime(params), Ip, Ib)


def strong_scattering_profile(x, params: MomentParams, b=(0.0, 0.0)) -> np.ndarray:
    p = params
    if p.Q < 10:
        warnings.warn("strong-scattering profile used with sigma^2 k0^2 l_c L < 10", stacklevel=2)
    x = _pts(x)
    sp = shift_params(b, p)
    d = x - np.asarray(sp.x_b)
    amp = sp.damping / (1 + p.X / p.r0**2)
    return amp * np.exp(-np.sum(d * d, axis=1) / (2 * p.R_tr**2)) + 0j


@dataclass(frozen=True)
class ShiftParams:
    x_b: tuple[float, float]
    alpha_L: float
    damping: float
    snr_shifted: float
    b_max: float
    R_max: float

    def b_target(self, x_t) -> np.ndarray:
        return np.asarray(x_t, float) / self.alpha_L


def attenuation_exponent(params: MomentParams) -> float:
    """T such that the shifted peak amplitude is exp(-|b|^2 T / (4 r0^2))."""
    r2, X4 = params.r0**2, params.X / 4
    return X4 / (r2 + X4) + params.rho0**2 / (r2 - params.rho0**2)


def shift_params(b, params: MomentParams) -> ShiftParams:
    p = params
    if p.rho0 >= p.r0:
        raise ValueError("rho0 must be smaller than r0")
    b = np.asarray(b, float)
    b2 = float(b @ b)
    r2, X4 = p.r0**2, p.X / 4
    aL = p.alpha_L
    snr0 = snr_closed_form(p)
    snr_b = snr0 * math.exp(-b2 / (2 * r2) * X4 / (r2 + X4))
    if p.X > 0 and snr0 > 1:
        bmax = math.sqrt(2 * r2 * (1 + r2 / X4) * math.log(snr0))
    else:
        bmax = 0.0
    damping = math.exp(-b2 * attenuation_exponent(p) / (4 * r2))
    return ShiftParams((aL * b[0], aL * b[1]), aL, damping, snr_b, bmax, aL * bmax)


def homogeneous_shift(params: MomentParams) -> float:
    """Exact focal-spot shift per unit b without scattering (source at the origin)."""
    return params.L / (params.k0 * (params.r0**2 + params.rho0**2))


# ----------------------------------------------------------------- K and A

def K_and_A(z: float, xi, zeta, params: MomentParams, atol: float = 1e-10, rtol: float = 1e-9):
    p = params
    if z < 0:
        raise ValueError("z must be >= 0")
    K = (2 * np.pi) ** 8 * math.exp(-0.5 * p.k0**2 * p.C0 * z)
    if z == 0 or p.medium.sigma == 0:
        return {"K": K, "A": 0j, "A_err": 0.0}
    xi, zeta = np.asarray(xi, float), np.asarray(zeta, float)
    end = -zeta * z / p.k0
    pad = TRUNC * p.medium.l_c
    box = (min(0, end[0]) - pad, max(0, end[0]) + pad, min(0, end[1]) - pad, max(0, end[1]) + pad)

    def f(x1, x2):
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        inner = p.scatter(X1, X2, -zeta[0] * np.ones_like(X1), -zeta[1] * np.ones_like(X1), z)
        return np.expm1(inner) * np.exp(-1j * (xi[0] * X1 + xi[1] * X2))

    v, e = tensor_2d(f, box, 4, atol, rtol)
    c = 1 / (2 * (2 * np.pi) ** 2)
    return {"K": K, "A": complex(c * v), "A_err": float(c * e)}


# -------------------------------------------------------------------- images

def predict_image(x, psi, params: MomentParams) -> np.ndarray:
    """Mean refocused field for an emitted image psi (strong-scattering limit)."""
    p = params
    x = _pts(x)
    bj, wj = psi.as_points()
    sp = shift_params((0.0, 0.0), p)
    if psi.support_radius > sp.b_max:
        warnings.warn("image support exceeds b_max: fluctuations dominate there", stacklevel=2)
    T = attenuation_exponent(p)
    atten = np.exp(-np.sum(bj * bj, axis=1) * T / (4 * p.r0**2))
    centres = p.alpha_L * bj
    d2 = np.sum((x[:, None, :] - centres[None, :, :]) ** 2, axis=2)
    g = np.exp(-d2 / (2 * p.R_tr**2))
    return (g @ (wj * atten)) / (1 + p.X / p.r0**2) + 0j


# -------------------------------------------------------------- aggregation

@dataclass
class MomentPrediction:
    mean_profile: dict = field(default_factory=dict)
    covariance: dict = field(default_factory=dict)
    U_peak: complex = 0j
    U_background: complex = 0j
    I_p: float = 0.0
    I_b: float = 0.0
    snr: float = math.inf
    snr_closed_form: float = math.inf
    regime: int = 0
    R_tr: float = math.inf
    alpha_L: float = 0.0
    b_max: float = 0.0
    R_max: float = 0.0
    snr_shifted: dict = field(default_factory=dict)
    K_of_z: float = 0.0
    L_sca: float = math.inf
    quadrature_report: dict = field(default_factory=dict)


def predict(params: MomentParams, offsets=(), probes=(), shifts=(), y=(0.0, 0.0)) -> MomentPrediction:
    """Collect the scalar predictions plus a mean profile at ``offsets`` and
    covariances at ``probes`` = [(x, h), ...]."""
    p = params
    pred = MomentPrediction(R_tr=p.R_tr, alpha_L=p.alpha_L, L_sca=p.L_sca,
                            K_of_z=(2 * np.pi) ** 8 * math.exp(-0.5 * p.Q))
    rep = pred.quadrature_report
    pred.U_background = background_amplitude(p, y)
    if p.medium.sigma == 0:
        pred.U_peak = 1 + 0j
        pred.snr = pred.snr_closed_form = math.inf
    else:
        pred.U_peak = peak_amplitude(p, y)
        pred.I_p, rep["I_p"] = peak_intensity(p)
        pred.I_b, rep["I_b"] = background_intensity(p)
        pred.snr = pred.I_p / pred.I_b
        pred.snr_closed_form = snr_closed_form(p)
        pred.regime = regime(p)
        sp = shift_params((0.0, 0.0), p)
        pred.b_max, pred.R_max = sp.b_max, sp.R_max
        for b in shifts:
            pred.snr_shifted[tuple(map(float, b))] = shift_params(b, p).snr_shifted
    if len(offsets):
        vals, errs = limit_mean_refocused(offsets, y, p)
        for o, v, e in zip(_pts(offsets), vals, errs):
            pred.mean_profile[tuple(o)] = complex(v)
            rep[("mean", tuple(o))] = float(e)
    for xo, h in probes:
        v, e = covariance_refocused(xo, h, y, p)
        key = (tuple(map(float, xo)), tuple(map(float, h)))
        pred.covariance[key] = v
        rep[("cov",) + key] = e
    return pred


__all__ = [
    "MomentParams", "MomentPrediction", "SNRResult", "ShiftParams", "QuadratureError",
    "mean_field_M1", "limit_mean_refocused", "peak_amplitude", "background_amplitude",
    "peak_intensity", "peak_intensity_general", "background_intensity",
    "background_intensity_general", "covariance_refocused", "snr", "snr_closed_form", "regime",
    "strong_scattering_profile", "shift_params", "attenuation_exponent", "homogeneous_shift",
    "K_and_A", "predict_image", "predict",
]

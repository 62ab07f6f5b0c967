"""The two-leg time-reversal experiment.

Leg 1: a point source at (y, L) is propagated back to the mirror plane with
the transposed operator (reciprocity) and smoothed by the element kernel.
Leg 2: the conjugated record, masked by the Gaussian aperture, the optional
linear phase and the image spectrum, is smoothed again (element emission
patch) and propagated forward through the same screens.

The returned field uses the unit-peak normalisation: multiplying the raw
two-leg output by 4 pi rho0^2 r0^2 / R_m^2 makes the homogeneous refocused
amplitude at the source exactly the Gaussian integral used by the moment
formulas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import fft

from .grid import TransverseGrid, ValidationError
from .propagator import ComplexField, MediumRealization, green_field, propagate_values


@dataclass(frozen=True, eq=False)
class ImageFunction:
    """Weighted point set {(b_j, w_j)} or samples of a bounded compact image."""
    points: Optional[np.ndarray] = None     # (m, 2)
    weights: Optional[np.ndarray] = None    # (m,)
    values: Optional[np.ndarray] = None     # (m1, m2) samples, centred on the origin
    spacing: float = 0.0

    @classmethod
    def from_points(cls, points, weights=None) -> "ImageFunction":
        pts = np.atleast_2d(np.asarray(points, float)).reshape(-1, 2)
        w = np.ones(len(pts)) if weights is None else np.asarray(weights, float).ravel()
        if len(w) != len(pts):
            raise ValidationError("psi", "one weight per point")
        return cls(points=pts, weights=w)

    @classmethod
    def from_samples(cls, values, spacing: float) -> "ImageFunction":
        v = np.asarray(values, float)
        if v.ndim != 2 or not spacing > 0:
            raise ValidationError("psi", "samples must be 2D with positive spacing")
        return cls(values=v, spacing=float(spacing))

    @property
    def is_points(self) -> bool:
        return self.points is not None

    def _axes(self):
        m1, m2 = self.values.shape
        return (np.arange(m1) - m1 // 2) * self.spacing, (np.arange(m2) - m2 // 2) * self.spacing

    @property
    def support_radius(self) -> float:
        if self.is_points:
            return float(np.max(np.hypot(self.points[:, 0], self.points[:, 1])))
        a1, a2 = self._axes()
        nz = np.nonzero(self.values)
        if not len(nz[0]):
            return 0.0
        return float(np.max(np.hypot(a1[nz[0]], a2[nz[1]])))

    def as_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Point-mass representation; samples carry weight psi * dA."""
        if self.is_points:
            return self.points, self.weights
        a1, a2 = self._axes()
        A1, A2 = np.meshgrid(a1, a2, indexing="ij")
        return np.column_stack([A1.ravel(), A2.ravel()]), self.values.ravel() * self.spacing**2

    def ft(self, xi1: np.ndarray, xi2: np.ndarray) -> np.ndarray:
        """psi_hat(xi) = ∫ psi(x) exp(-i x.xi) dx on the tensor grid xi1 x xi2."""
        if self.is_points:
            ph = (np.exp(-1j * np.outer(xi1, self.points[:, 0]))[:, None, :]
                  * np.exp(-1j * np.outer(xi2, self.points[:, 1]))[None, :, :])
            return ph @ self.weights
        a1, a2 = self._axes()
        E1 = np.exp(-1j * np.outer(xi1, a1))
        E2 = np.exp(-1j * np.outer(xi2, a2))
        return E1 @ self.values @ E2.T * self.spacing**2

    def rescaled(self, eps: float) -> "ImageFunction":
        """psi(x) -> eps^2 psi(eps x)."""
        if self.is_points:
            return ImageFunction(points=self.points / eps, weights=self.weights.copy())
        return ImageFunction(values=self.values * eps**2, spacing=self.spacing / eps)


@dataclass(frozen=True)
class RecordedField:
    u_rec: ComplexField
    rho_0: float


@dataclass(frozen=True)
class RefocusedField:
    u_tr: ComplexField
    realization: int
    b: tuple[float, float]
    psi: Optional[ImageFunction] = None


def smooth(values: np.ndarray, grid: TransverseGrid, rho: float) -> np.ndarray:
    """Convolution with the unit-mass Gaussian of std rho (spectral)."""
    return fft.ifft2(fft.fft2(values, axes=(-2, -1)) * np.exp(-0.5 * rho**2 * grid.k2), axes=(-2, -1))


def record(g: ComplexField, rho_0: float) -> RecordedField:
    if rho_0 < 2 * g.grid.spacing:
        raise ValidationError("rho_0", "element kernel under-resolved (rho_0 < 2 dx)")
    return RecordedField(ComplexField(smooth(g.values, g.grid, rho_0), g.grid), rho_0)


def _mask(grid: TransverseGrid, mirror, b, psi) -> np.ndarray:
    x1, x2 = grid.xx
    Rm2 = mirror.R_m**2
    m = np.exp(-grid.r2 / Rm2 + 1j * (b[0] * x1 + b[1] * x2) / Rm2)
    if psi is not None:
        m = m * np.conj(psi.ft(grid.x / Rm2, grid.x / Rm2))
    return m


def emission_source(rec: RecordedField, mirror, b=(0.0, 0.0), psi: Optional[ImageFunction] = None
                    ) -> ComplexField:
    g = rec.u_rec.grid
    b = np.asarray(b, float)
    if not np.all(np.isfinite(b)):
        raise ValidationError("b", "must be finite")
    m = _mask(g, mirror, b, psi) * np.conj(rec.u_rec.values)
    return ComplexField(smooth(m, g, rec.rho_0), g)


def normalisation(mirror) -> float:
    return 4 * math.pi * mirror.rho_0**2 * mirror.r0**2 / mirror.R_m**2


def run_channels(cfg, realization: MediumRealization,
                 channels: Sequence[tuple[Sequence[float], Optional[ImageFunction]]]) -> np.ndarray:
    """Leg 1 once, then every (b, psi) emission through the same screens.

    Returns an array (n_channels, n, n) of target-plane fields.
    """
    g = cfg.grid
    if realization.grid != g:
        raise ValidationError("grid", "realization was generated on another grid")
    rec = record(green_field(cfg.y, realization, cfg, reverse=True), cfg.mirror.rho_0)
    conj_rec = np.conj(rec.u_rec.values)
    src = np.stack([_mask(g, cfg.mirror, np.asarray(b, float), psi) * conj_rec for b, psi in channels])
    src = smooth(src, g, cfg.mirror.rho_0)
    out = propagate_values(src, realization, cfg.k0, absorbing=cfg.absorbing)
    out *= normalisation(cfg.mirror)
    return out


def run_experiment(cfg, realization: MediumRealization, b=None, psi: Optional[ImageFunction] = None
                   ) -> RefocusedField:
    b = cfg.b if b is None else tuple(map(float, b))
    psi = cfg.psi if psi is None else psi
    u = run_channels(cfg, realization, [(b, psi)])[0]
    return RefocusedField(ComplexField(u, cfg.grid), realization.index, b, psi)

"""Strang split-step solver for the Ito-Schrodinger paraxial equation.

One step of length dz applies exp(i dz Δ/(2 k0)) in Fourier space and the
unimodular screen exp(i k0 ΔB / 2) in real space. Adjacent half diffraction
steps are merged, so the forward operator is

    P = D(dz/2) S_n D(dz) ... D(dz) S_1 D(dz/2)

and its transpose is the same product with the screens in reverse order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft

from .grid import TransverseGrid, ValidationError
from .medium import MediumModel, PhaseScreen, synthesize_screen


@dataclass(frozen=True)
class ComplexField:
    values: np.ndarray
    grid: TransverseGrid

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass
class MediumRealization:
    screens: list[PhaseScreen]
    grid: TransverseGrid
    index: int = 0
    _mult: dict = field(default_factory=dict, repr=False)

    @property
    def delta_z(self) -> float:
        return self.screens[0].delta_z if self.screens else 0.0

    @property
    def n_steps(self) -> int:
        return len(self.screens)

    def multipliers(self, k0: float, mask: Optional[np.ndarray] = None) -> list[np.ndarray]:
        """exp(i k0 ΔB/2) per screen, cached per (k0, mask)."""
        key = (k0, None if mask is None else id(mask))
        if key not in self._mult:
            out = []
            for s in self.screens:
                m = np.exp(0.5j * k0 * s.values)
                if mask is not None:
                    m *= mask
                out.append(m)
            self._mult[key] = out
        return self._mult[key]


def screen_seed(master_seed: int, realization: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(realization, step))


def generate_realization(medium: MediumModel, grid: TransverseGrid, L: float, n_steps: int,
                         master_seed: int, index: int) -> MediumRealization:
    dz = L / n_steps
    screens = []
    for step in range(n_steps):
        rng = np.random.default_rng(screen_seed(master_seed, index, step))
        if medium.sigma == 0:
            screens.append(PhaseScreen(np.zeros((grid.n, grid.n)), dz))
        else:
            screens.append(synthesize_screen(medium, grid, dz, rng))
    return MediumRealization(screens, grid, index)


def realization_for(cfg, index: int) -> MediumRealization:
    return generate_realization(cfg.medium, cfg.grid, cfg.L, cfg.n_steps, cfg.master_seed, index)


def transfer(grid: TransverseGrid, dz: float, k0: float) -> np.ndarray:
    return np.exp(-0.5j * grid.k2 * dz / k0)


def absorbing_mask(grid: TransverseGrid) -> np.ndarray:
    return np.exp(-(np.sqrt(grid.r2) / (0.45 * grid.extent)) ** 16)


def _check(f: ComplexField, grid: TransverseGrid):
    if f.grid != grid:
        raise ValidationError("grid", "field and realization live on different grids")


def diffraction_step(f: ComplexField, dz: float, k0: float) -> ComplexField:
    if dz < 0:
        raise ValidationError("dz", "must be >= 0")
    if dz == 0:
        return f
    out = fft.ifft2(fft.fft2(f.values) * transfer(f.grid, dz, k0))
    return ComplexField(out, f.grid)


def screen_step(f: ComplexField, s: PhaseScreen, k0: float) -> ComplexField:
    if s.values.shape != f.values.shape:
        raise ValidationError("grid", "screen and field shapes differ")
    return ComplexField(f.values * np.exp(0.5j * k0 * s.values), f.grid)


def _split_step(u: np.ndarray, mults: Sequence[np.ndarray], half: np.ndarray,
                full: np.ndarray) -> np.ndarray:
    axes = (-2, -1)
    spec = fft.fft2(u, axes=axes) * half
    for j, m in enumerate(mults):
        u = fft.ifft2(spec, axes=axes) * m
        spec = fft.fft2(u, axes=axes)
        spec *= full if j < len(mults) - 1 else half
    return fft.ifft2(spec, axes=axes)


def propagate_values(u: np.ndarray, real: MediumRealization, k0: float, reverse: bool = False,
                     absorbing: bool = False) -> np.ndarray:
    """Propagate one field or a stack (..., n, n) through the realization."""
    g = real.grid
    dz = real.delta_z
    if real.n_steps == 0:
        return np.array(u, dtype=complex)
    mults = real.multipliers(k0, _mask_for(g) if absorbing else None)
    if reverse:
        mults = mults[::-1]
    return _split_step(np.asarray(u, dtype=complex), mults,
                       transfer(g, dz / 2, k0), transfer(g, dz, k0))


_MASKS: dict = {}


def _mask_for(g: TransverseGrid) -> np.ndarray:
    if g not in _MASKS:
        _MASKS[g] = absorbing_mask(g)
    return _MASKS[g]


def propagate(f0: ComplexField, real: MediumRealization, k0: float, reverse: bool = False,
              absorbing: bool = False) -> ComplexField:
    _check(f0, real.grid)
    return ComplexField(propagate_values(f0.values, real, k0, reverse, absorbing), f0.grid)


def point_source(grid: TransverseGrid, y, width: float = 0.0) -> np.ndarray:
    """Unit-mass source at y: Gaussian of std ``width`` or, for width 0, the grid delta.

    Built in Fourier space, so an off-node y gives the band-limited shifted delta.
    """
    y = np.asarray(y, float)
    on_node = np.allclose(y / grid.spacing, np.rint(y / grid.spacing), atol=1e-9, rtol=0)
    if width == 0 and on_node:
        src = np.zeros((grid.n, grid.n), complex)
        src[grid.index_of(y)] = 1 / grid.spacing**2
        return src
    k1, k2 = grid.kk
    spec = np.exp(-0.5 * width**2 * grid.k2 - 1j * (k1 * y[0] + k2 * y[1]))
    return np.fft.fftshift(fft.ifft2(spec)) / grid.spacing**2


def green_field(y, real: MediumRealization, cfg, w_src: Optional[float] = None,
                reverse: bool = False) -> ComplexField:
    """Field at z = L from a regularised point source at (y, 0).

    ``reverse=True`` propagates with the transposed operator, i.e. from the
    target plane back to the mirror plane through the same screens.
    """
    g = real.grid
    if not g.inside(y):
        raise ValidationError("y", "source outside the central half of the grid")
    w = cfg.source_width if w_src is None else w_src
    src = point_source(g, y, w)
    return ComplexField(propagate_values(src, real, cfg.k0, reverse, cfg.absorbing), g)

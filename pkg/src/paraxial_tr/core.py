"""Configuration types, derived mirror parameters, validation and the
scintillation rescaling map."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .grid import TransverseGrid, ValidationError
from .medium import MediumModel

__all__ = [
    "TransverseGrid", "ValidationError", "MirrorSpec", "ExperimentConfig", "ScalingConfig",
    "derive_mirror", "scattering_mean_free_path", "apply_scintillation_scaling", "validate",
    "load_config", "dump_config", "FRESNEL_MAX", "SCREEN_STRENGTH_MAX",
]

# L/(k0 dx^2 n): Nyquist-angle content travels at most pi*extent per leg
FRESNEL_MAX = 1.0
# k0^2 C(0) dz / 4 per step
SCREEN_STRENGTH_MAX = 0.1


@dataclass(frozen=True)
class MirrorSpec:
    R_m: float
    rho_0: float

    def __post_init__(self):
        if not self.R_m > 0:
            raise ValidationError("R_m", f"must be > 0, got {self.R_m}")
        if not self.rho_0 > 0:
            raise ValidationError("rho_0", f"must be > 0, got {self.rho_0}")

    @property
    def r0(self) -> float:
        return math.sqrt(self.R_m**2 + self.rho_0**2)

    @property
    def R0(self) -> float:
        return 1 / math.sqrt(0.5 * (1 / self.r0**2 + 1 / self.rho_0**2))

    @property
    def C0(self) -> float:
        return 1.0

    def physical_C0(self, k0: float) -> float:
        """Normalisation constant the unit-amplitude convention absorbs (read-only)."""
        r0, rho = self.r0, self.rho_0
        return (r0**2 - rho**2) / (16 * math.pi * k0**2 * rho**2 * r0**2)


def derive_mirror(R_m: float, rho_0: float) -> MirrorSpec:
    return MirrorSpec(float(R_m), float(rho_0))


@dataclass(frozen=True)
class ScalingConfig:
    epsilon: float

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValidationError("epsilon", f"must lie in (0, 1], got {self.epsilon}")


@dataclass(frozen=True)
class ExperimentConfig:
    k0: float
    L: float
    mirror: MirrorSpec
    medium: MediumModel
    grid: TransverseGrid
    n_steps: int
    y: tuple[float, float] = (0.0, 0.0)
    b: tuple[float, float] = (0.0, 0.0)
    psi: Any = None                   # timereversal.ImageFunction
    master_seed: int = 0
    n_realizations: int = 100
    epsilon: float = 1.0
    source_width: float = 0.0         # 0: grid (Kronecker) delta
    absorbing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))

    @property
    def delta_z(self) -> float:
        return self.L / self.n_steps

    @property
    def X(self) -> float:
        """sigma^2 L^3 / (6 l_c): squared radius of the diffuse beam."""
        m = self.medium
        return m.sigma**2 * self.L**3 / (6 * m.l_c)

    @property
    def fresnel_ratio(self) -> float:
        g = self.grid
        return self.L / (self.k0 * g.spacing**2 * g.n)

    @property
    def screen_strength(self) -> float:
        return self.k0**2 * self.medium.C0 * self.delta_z / 4


def scattering_mean_free_path(medium: MediumModel, k0: float) -> float:
    """4/(sigma^2 k0^2 l_c); ``math.inf`` flags a homogeneous medium."""
    if not k0 > 0:
        raise ValidationError("k0", "must be > 0")
    if medium.sigma == 0:
        return math.inf
    return 4 / (medium.sigma**2 * k0**2 * medium.l_c)


def apply_scintillation_scaling(cfg: ExperimentConfig, s: ScalingConfig) -> ExperimentConfig:
    eps = s.epsilon
    if eps == 1:
        return cfg
    m = cfg.medium
    psi = cfg.psi.rescaled(eps) if cfg.psi is not None else None
    return replace(
        cfg,
        L=cfg.L / eps,
        mirror=MirrorSpec(cfg.mirror.R_m / eps, cfg.mirror.rho_0 / eps),
        medium=MediumModel(m.sigma * math.sqrt(eps), m.l_c, m.shape),
        y=(cfg.y[0] / eps, cfg.y[1] / eps),
        b=(cfg.b[0] / eps, cfg.b[1] / eps),
        psi=psi,
    )


def validate(cfg: ExperimentConfig, fresnel_max: float = FRESNEL_MAX) -> ExperimentConfig:
    """Raise ValidationError on the first violated constraint; return cfg."""
    g, m, mir = cfg.grid, cfg.medium, cfg.mirror
    if not cfg.k0 > 0:
        raise ValidationError("k0", "must be > 0")
    if not cfg.L > 0:
        raise ValidationError("L", "must be > 0")
    if cfg.n_steps < 1:
        raise ValidationError("n_steps", "must be >= 1")
    if cfg.n_realizations < 1:
        raise ValidationError("n_realizations", "must be >= 1")
    ScalingConfig(cfg.epsilon)
    if cfg.fresnel_ratio > fresnel_max:
        raise ValidationError(
            "grid_extent", f"L/(k0 dx^2 n) = {cfg.fresnel_ratio:.3g} exceeds {fresnel_max:g}")
    if m.sigma > 0:
        if g.spacing > m.l_c / 2:
            raise ValidationError("grid_extent", f"spacing {g.spacing:g} > l_c/2")
        if g.dk > 1 / m.l_c:
            raise ValidationError("grid_extent", "dual spacing 2*pi/extent exceeds 1/l_c")
        if g.extent < 8 * m.l_c:
            warnings.warn("grid extent below 8 l_c: periodisation error in screens", stacklevel=2)
        if cfg.screen_strength > SCREEN_STRENGTH_MAX:
            need = math.ceil(cfg.k0**2 * m.C0 * cfg.L / (4 * SCREEN_STRENGTH_MAX))
            raise ValidationError("n_steps", f"per-step strength {cfg.screen_strength:.3g} > "
                                  f"{SCREEN_STRENGTH_MAX}; use n_steps >= {need}")
    if mir.rho_0 < 2 * g.spacing:
        raise ValidationError("rho_0", "element kernel under-resolved (rho_0 < 2 dx)")
    if cfg.source_width < 0 or cfg.source_width > mir.rho_0 / 4:
        raise ValidationError("source_width", "must lie in [0, rho_0/4]")
    if not g.inside(cfg.y):
        raise ValidationError("y", "source outside the central half of the grid")
    if not all(map(math.isfinite, cfg.b)):
        raise ValidationError("b", "must be finite")
    return cfg


# ---------------------------------------------------------------- config files

_FLOAT_KEYS = ("k0", "L", "R_m", "rho_0", "sigma", "l_c", "grid_extent",
               "y_x", "y_y", "b_x", "b_y", "epsilon", "source_width")
_INT_KEYS = ("grid_n", "n_steps", "seed", "n_realizations")
KEY_ORDER = ("k0", "L", "R_m", "rho_0", "sigma", "l_c", "grid_n", "grid_extent", "n_steps",
             "y_x", "y_y", "b_x", "b_y", "seed", "n_realizations", "epsilon",
             "source_width", "absorbing", "profile")
REQUIRED = ("k0", "L", "R_m", "rho_0", "sigma", "l_c", "grid_n", "grid_extent", "n_steps")


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError("absorbing", f"not a boolean: {s!r}")


def parse_config_text(text: str) -> dict[str, Any]:
    raw: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}", "expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in KEY_ORDER:
            raise ValidationError(key, "unknown config key")
        if key in raw:
            raise ValidationError(key, "duplicate key")
        try:
            if key in _FLOAT_KEYS:
                raw[key] = float(val)
            elif key in _INT_KEYS:
                raw[key] = int(val)
            elif key == "absorbing":
                raw[key] = _parse_bool(val)
            else:
                raw[key] = val
        except ValueError as exc:
            raise ValidationError(key, str(exc)) from None
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ValidationError(missing[0], "missing required key")
    return raw


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    return ExperimentConfig(
        k0=raw["k0"], L=raw["L"],
        mirror=MirrorSpec(raw["R_m"], raw["rho_0"]),
        medium=MediumModel(raw["sigma"], raw["l_c"], raw.get("profile", "gaussian")),
        grid=TransverseGrid(raw["grid_n"], raw["grid_extent"]),
        n_steps=raw["n_steps"],
        y=(raw.get("y_x", 0.0), raw.get("y_y", 0.0)),
        b=(raw.get("b_x", 0.0), raw.get("b_y", 0.0)),
        master_seed=raw.get("seed", 0),
        n_realizations=raw.get("n_realizations", 100),
        epsilon=raw.get("epsilon", 1.0),
        source_width=raw.get("source_width", 0.0),
        absorbing=raw.get("absorbing", False),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return {
        "k0": cfg.k0, "L": cfg.L, "R_m": cfg.mirror.R_m, "rho_0": cfg.mirror.rho_0,
        "sigma": cfg.medium.sigma, "l_c": cfg.medium.l_c, "grid_n": cfg.grid.n,
        "grid_extent": cfg.grid.extent, "n_steps": cfg.n_steps,
        "y_x": cfg.y[0], "y_y": cfg.y[1], "b_x": cfg.b[0], "b_y": cfg.b[1],
        "seed": cfg.master_seed, "n_realizations": cfg.n_realizations, "epsilon": cfg.epsilon,
        "source_width": cfg.source_width, "absorbing": cfg.absorbing, "profile": cfg.medium.shape,
    }


def format_config(raw: dict[str, Any]) -> str:
    out = []
    for key in KEY_ORDER:
        if key not in raw:
            continue
        v = raw[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{key} = {v}")
    return "\n".join(out) + "\n"


def load_config(path) -> ExperimentConfig:
    return config_from_dict(parse_config_text(Path(path).read_text()))


def dump_config(cfg: ExperimentConfig) -> str:
    return format_config(config_to_dict(cfg))

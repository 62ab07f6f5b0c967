"""Square periodic transverse grid shared by every sampled field."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class ValidationError(ValueError):
    """Invalid parameter; ``field`` names the offending input."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class TransverseGrid:
    n: int
    extent: float

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValidationError("grid_n", f"must be a power of two >= 2, got {self.n}")
        if not self.extent > 0:
            raise ValidationError("grid_extent", f"must be positive, got {self.extent}")

    @property
    def spacing(self) -> float:
        return self.extent / self.n

    @property
    def dk(self) -> float:
        return 2 * np.pi / self.extent

    @property
    def k_max(self) -> float:
        return np.pi / self.spacing

    @cached_property
    def x(self) -> np.ndarray:
        # origin on the node n//2 so FFT shifts and point sources line up
        return (np.arange(self.n) - self.n // 2) * self.spacing

    @cached_property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    @cached_property
    def xx(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    @cached_property
    def kk(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.k, self.k, indexing="ij")

    @cached_property
    def r2(self) -> np.ndarray:
        x1, x2 = self.xx
        return x1 * x1 + x2 * x2

    @cached_property
    def k2(self) -> np.ndarray:
        k1, k2 = self.kk
        return k1 * k1 + k2 * k2

    def index_of(self, p) -> tuple[int, int]:
        """Nearest grid index to the point ``p`` (no wrap)."""
        i = np.rint(np.asarray(p, float) / self.spacing).astype(int) + self.n // 2
        return int(i[0]), int(i[1])

    def snap(self, p) -> np.ndarray:
        return np.rint(np.asarray(p, float) / self.spacing) * self.spacing

    def inside(self, p, fraction=0.5) -> bool:
        """True when ``p`` lies in the central ``fraction`` of the box."""
        return bool(np.all(np.abs(np.asarray(p, float)) <= fraction * self.extent / 2))

    def norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(values) ** 2)) * self.spacing)

"""Composite Gauss-Legendre tensor rules with panel doubling error estimates."""
from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special


class QuadratureError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@lru_cache(maxsize=8)
def _gl(order: int):
    return np.polynomial.legendre.leggauss(order)


def gl_nodes(a: float, b: float, n_panels: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    x0, w0 = _gl(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    w = (half[:, None] * w0[None, :]).ravel()
    return x, w


def doubling(rule: Callable[[int], np.ndarray], n_panels: int, atol: float, rtol: float = 0.0,
             max_panels: int = 1024, what: str = "integral") -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``rule(p)`` for p, 2p, ... until successive values agree.

    Returns the finer value and the difference to the previous level as the
    error estimate (elementwise for array-valued rules).
    """
    prev = rule(n_panels)
    while True:
        n_panels *= 2
        cur = rule(n_panels)
        err = np.abs(cur - prev)
        if np.all(err <= atol + rtol * np.abs(cur)):
            return cur, err
        if n_panels >= max_panels:
            raise QuadratureError(f"{what} did not converge at {n_panels} panels", float(np.max(err)))
        prev = cur


def tensor_2d(f: Callable[[np.ndarray, np.ndarray], np.ndarray], box, n_panels: int = 4,
              atol: float = 1e-8, rtol: float = 0.0, order: int = 16, max_panels: int = 128):
    """∬ f over box = (a1, b1, a2, b2); f takes node vectors (x1, x2) and
    returns values on the tensor grid with optional leading batch axes."""
    a1, b1, a2, b2 = box

    def rule(p):
        x1, w1 = gl_nodes(a1, b1, p, order)
        x2, w2 = gl_nodes(a2, b2, p, order)
        return np.einsum("...ij,i,j->...", f(x1, x2), w1, w2)

    return doubling(rule, n_panels, atol, rtol, max_panels, "2D quadrature")


def log_i0(x) -> np.ndarray:
    """log I_0(x) for x >= 0 via the scaled Bessel function (no overflow)."""
    x = np.asarray(x, float)
    return np.log(special.i0e(x)) + np.abs(x)

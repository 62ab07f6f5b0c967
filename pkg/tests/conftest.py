import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from paraxial_tr.core import ExperimentConfig, MirrorSpec, TransverseGrid
from paraxial_tr.medium import MediumModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def small_config(sigma=0.0, n=64, extent=16.0, k0=10.0, L=10.0, R_m=4.0, rho_0=1.0, l_c=1.0,
                 n_steps=16, **kw) -> ExperimentConfig:
    return ExperimentConfig(k0=k0, L=L, mirror=MirrorSpec(R_m, rho_0), medium=MediumModel(sigma, l_c),
                            grid=TransverseGrid(n, extent), n_steps=n_steps, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def gaussian_beam(x1, x2, w, z, k0, centre=(0.0, 0.0)):
    """Free paraxial propagation of exp(-|x - c|^2 / (2 w^2)) over distance z."""
    q = w * w + 1j * z / k0
    r2 = (x1 - centre[0]) ** 2 + (x2 - centre[1]) ** 2
    return (w * w / q) * np.exp(-r2 / (2 * q))


__all__ = ["small_config", "rel", "gaussian_beam", "record_criterion"]


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

import numpy as np
import pytest

from ballfield.model import BallModel, Density, IntensityLaw, RadiusLaw, ShapeFunction, WeightLaw

ACCEPTANCE_LINES = []


def cfga(regime="intermediate", theta=None, coef=1.0, beta=1.5, weight=None):
    """Canonical configuration: d = p = 1, Gaussian bump shape, Pareto radii, N(0,1) weights."""
    if theta is None:
        theta = beta if regime == "intermediate" else 3.0
    G = WeightLaw.gaussian(0.0, 1.0) if weight is None else weight
    return BallModel.build(RadiusLaw(beta, 1.0), G, ShapeFunction("gaussian-bump", 1),
                           IntensityLaw(coef, theta), regime=regime)


@pytest.fixture
def model_int():
    return cfga("intermediate")


@pytest.fixture
def model_large():
    return cfga("large")


@pytest.fixture
def unit_box():
    return Density.box([0.0], [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

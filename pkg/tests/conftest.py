import math

import pytest

from spdcfid.dispersion import Material, SellmeierCoefficients, get_material
from spdcfid.harness.config import build_config


def constant_glass(n: float, name: str = "const") -> Material:
    """Dispersion-free isotropic test material."""
    return Material(name, SellmeierCoefficients(n * n, 0.0, 0.0, 0.0), None, (0.2, 5.0))


@pytest.fixture(scope="session")
def bbo():
    return get_material("BBO")


@pytest.fixture(scope="session")
def yvo4():
    return get_material("YVO4")


@pytest.fixture(scope="session")
def default_cfg():
    return build_config()


def sellmeier_oracle(coeffs: dict, lam_um: float) -> float:
    """Plain-math evaluation of n = sqrt(A + B/(lam^2 - C) + E lam^2)."""
    l2 = lam_um * lam_um
    return math.sqrt(coeffs["A"] + coeffs["B"] / (l2 - coeffs["C"]) + coeffs["E"] * l2)

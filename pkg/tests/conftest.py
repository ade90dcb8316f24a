import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from needleplan import phantoms, raycast, segmentation

CRITERION_LINES = []


def record_criterion(line):
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    raycast.warmup()


@pytest.fixture(scope="session")
def sphere_case():
    """Small homogeneous sphere with its body mask and smoothed surface."""
    vol, center = phantoms.sphere_phantom(size=64, spacing=2.0, radius_mm=50.0)
    body = segmentation.body_mask(vol)
    mesh = segmentation.extract_surface(body)
    return vol, body, mesh, center


@pytest.fixture(scope="session")
def bone_sphere_case():
    """Sphere with an embedded bone shell that has one aperture cone (+z)."""
    shell = {"r_inner_mm": 32.0, "r_outer_mm": 40.0,
             "aperture_axis": (0.0, 0.0, 1.0), "aperture_half_angle_deg": 35.0}
    vol, center = phantoms.sphere_phantom(size=64, spacing=2.0, radius_mm=52.0,
                                          bone_shell=shell)
    body = segmentation.body_mask(vol)
    mesh = segmentation.extract_surface(body)
    return vol, body, mesh, center


def rng_for(name, salt=0):
    import zlib

    return np.random.default_rng(zlib.crc32(f"{name}:{salt}".encode()))

import sys
from pathlib import Path

import numpy as np
import pytest

SERVICE_DIR = Path(__file__).parent.parent / "service"
sys.path.insert(0, str(SERVICE_DIR))

from scene_setup import CameraModel  # noqa: E402
from toy_data import make_toy_sequence, make_toy_template  # noqa: E402


@pytest.fixture(scope="session")
def toy_template():
    return make_toy_template()


@pytest.fixture
def toy_camera():
    return CameraModel(fx=60.0, fy=60.0, cx=32.0, cy=24.0, width=64, height=48,
                       rotation=np.eye(3), translation=np.zeros(3))


@pytest.fixture
def toy_sequence(tmp_path):
    return make_toy_sequence(tmp_path / "toy", num_frames=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

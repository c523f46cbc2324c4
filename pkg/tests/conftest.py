import numpy as np
import pytest

from src.core.synthdata import Camera, default_skeleton, generate_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def skeleton():
    return default_skeleton()


@pytest.fixture
def camera():
    return Camera()


@pytest.fixture
def scene_sample(camera):
    """Three fully visible people well inside the frame"""
    return generate_scene(7, n_people_range=(3, 3), depth_range_m=(6.0, 10.0), camera=camera, occlusion_rate=0.0)


@pytest.fixture
def small_camera():
    return Camera(fx=300.0, fy=300.0, cx=128.0, cy=80.0, width=256, height=160)

import numpy as np
import pytest

from forgegen import ForgerySpec, apply_copy_move, synth_texture
from zernike import FeatureField


def feature_field(vectors, valid=None, level=0, stride=1) -> FeatureField:
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if valid is None:
        valid = np.ones(vectors.shape[:3], dtype=bool)
    return FeatureField(level=level, stride=stride, vectors=vectors, valid=valid)


@pytest.fixture
def blur_video():
    return synth_texture((4, 48, 48), "gaussian_blur_noise", np.random.default_rng(0))


@pytest.fixture
def random_field():
    rng = np.random.default_rng(7)
    return feature_field(rng.random((3, 32, 32, 4)))


@pytest.fixture
def clone_video():
    """Blur-noise video with a rigid copy, displacement (0, 80, 0) over frames 1-10.

    Frames are drawn independently so nothing outside the span matches the copy.
    """
    video = synth_texture((12, 112, 160), "gaussian_blur_noise", np.random.default_rng(3), temporal_sigma=0.0)
    spec = ForgerySpec(center=(45, 40), radius=30, frame_span=(1, 10), displacement=(0, 80, 0))
    return apply_copy_move(video, spec)

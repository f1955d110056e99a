import numpy as np
import pytest

from pmbtrack.models import MeasurementModel, ModelParams, Models, MotionModel
from pmbtrack.state import (
    BernoulliComponent,
    Detection,
    GaussianDensity,
    PassthroughState,
)


def make_passthrough(score=0.9, class_name="car", yaw=0.0):
    return PassthroughState(
        z=0.85,
        size=(4.5, 2.0, 1.7),
        yaw=yaw,
        velocity=(0.0, 0.0),
        detection_score=score,
        class_name=class_name,
    )


def make_detection(x, y, frame=0, score=0.9, timestamp=None, class_name="car", yaw=0.0):
    return Detection(
        center=(x, y),
        passthrough=make_passthrough(score=score, class_name=class_name, yaw=yaw),
        frame_index=frame,
        timestamp=frame * 0.5 if timestamp is None else timestamp,
    )


def make_bernoulli(x, y, existence=0.9, track_id=0, last_score=0.9, cov=None):
    cov = np.eye(4) if cov is None else cov
    return BernoulliComponent(
        existence=existence,
        density=GaussianDensity([x, y, 0.0, 0.0], cov),
        track_id=track_id,
        last_score=last_score,
        passthrough=make_passthrough(score=last_score),
    )


@pytest.fixture
def models():
    return Models(
        motion=MotionModel(dt=0.5, noise_scale=2.0),
        measurement=MeasurementModel(noise=np.diag([0.25, 0.25])),
    )


@pytest.fixture
def model_params():
    return ModelParams()

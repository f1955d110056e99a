"""Synthetic multi-object scenes under the standard birth/survival/
detection/clutter model, for oracle-grade end-to-end tests.

Per frame: Poisson births uniform over the FoV, per-object survival,
constant-velocity motion with white-acceleration noise, detection with
probability P_D producing one noisy position measurement per object, and
uniform Poisson clutter.  Objects leaving the FoV terminate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .metrics import GroundTruthBox
from .state import Detection, FrameDetections, PassthroughState


@dataclass(frozen=True)
class SimConfig:
    fov: tuple[float, float, float, float] = (-50.0, -50.0, 50.0, 50.0)
    frames: int = 40
    dt: float = 0.5
    birth_rate: float = 0.3  # Poisson mean births per frame
    initial_objects: int = 0  # born at frame 0 in addition to Poisson births
    survival_probability: float = 1.0
    detection_probability: float = 0.9
    detection_probability_overrides: Mapping[int, float] = field(default_factory=dict)
    clutter_rate: float = 2.0  # Poisson mean clutter per frame over the FoV
    measurement_noise_std: float = 0.3  # [m]
    process_noise_scale: float = 0.5  # white acceleration [m/s^2]
    birth_velocity_sigma: float = 0.0  # zero-velocity birth prior by default
    # per-object persistent base score; per-detection jitter around it
    object_score_range: tuple[float, float] = (0.5, 1.0)
    score_jitter: float = 0.03
    clutter_score_range: tuple[float, float] = (0.05, 0.5)
    object_size: tuple[float, float, float] = (4.5, 2.0, 1.7)
    class_name: str = "car"
    scene: str = "sim-0"
    seed: int = 0

    def validate(self) -> None:
        xmin, ymin, xmax, ymax = self.fov
        if xmax <= xmin or ymax <= ymin:
            raise ValueError(f"degenerate FoV {self.fov}")
        for name in ("survival_probability", "detection_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")
        if self.frames < 0 or self.birth_rate < 0 or self.clutter_rate < 0:
            raise ValueError("frames, birth_rate, clutter_rate must be nonnegative")

    @property
    def area(self) -> float:
        xmin, ymin, xmax, ymax = self.fov
        return (xmax - xmin) * (ymax - ymin)


@dataclass(frozen=True)
class SimFrame:
    frame_index: int
    timestamp: float
    detections: tuple[Detection, ...]
    # Originating object id per detection, None for clutter (test plumbing,
    # not part of the scenario file schema).
    source_ids: tuple[int | None, ...]


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    ground_truth: tuple[GroundTruthBox, ...]
    frames: tuple[SimFrame, ...]

    def frame_detections(self) -> list[FrameDetections]:
        return [
            FrameDetections(f.frame_index, f.timestamp, f.detections)
            for f in self.frames
        ]


def _inside(fov, x: float, y: float) -> bool:
    xmin, ymin, xmax, ymax = fov
    return xmin <= x <= xmax and ymin <= y <= ymax


def simulate(cfg: SimConfig) -> SimResult:
    """Generate one scene; identical config and seed give identical output."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.dt
    f_mat = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    q_std = cfg.process_noise_scale
    xmin, ymin, xmax, ymax = cfg.fov

    next_object_id = 0
    # object id -> state vector (x, y, vx, vy)
    alive: dict[int, np.ndarray] = {}
    base_score: dict[int, float] = {}
    gt: list[GroundTruthBox] = []
    frames: list[SimFrame] = []

    def spawn(count: int) -> None:
        nonlocal next_object_id
        for _ in range(count):
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            if cfg.birth_velocity_sigma > 0:
                vx, vy = rng.normal(0.0, cfg.birth_velocity_sigma, size=2)
            else:
                vx = vy = 0.0
            alive[next_object_id] = np.array([x, y, vx, vy])
            base_score[next_object_id] = float(rng.uniform(*cfg.object_score_range))
            next_object_id += 1

    for k in range(cfg.frames):
        timestamp = k * dt
        if k == 0:
            spawn(cfg.initial_objects)
        else:
            # survival, then motion
            for oid in sorted(alive):
                if rng.uniform() >= cfg.survival_probability:
                    del alive[oid]
            for oid in sorted(alive):
                state = f_mat @ alive[oid]
                accel = rng.normal(0.0, q_std, size=2)
                state[0] += 0.5 * dt * dt * accel[0]
                state[1] += 0.5 * dt * dt * accel[1]
                state[2] += dt * accel[0]
                state[3] += dt * accel[1]
                if not _inside(cfg.fov, state[0], state[1]):
                    del alive[oid]
                else:
                    alive[oid] = state
        spawn(int(rng.poisson(cfg.birth_rate)))

        detections: list[Detection] = []
        sources: list[int | None] = []
        for oid in sorted(alive):
            state = alive[oid]
            gt.append(
                GroundTruthBox(
                    scene=cfg.scene,
                    frame_index=k,
                    instance_id=str(oid),
                    center=(float(state[0]), float(state[1])),
                    class_name=cfg.class_name,
                )
            )
            p_d = cfg.detection_probability_overrides.get(oid, cfg.detection_probability)
            if rng.uniform() >= p_d:
                continue
            noise = rng.normal(0.0, cfg.measurement_noise_std, size=2)
            z = state[:2] + noise
            score = float(
                np.clip(base_score[oid] + rng.normal(0.0, cfg.score_jitter), 0.01, 0.999)
            )
            yaw = math.atan2(state[3], state[2]) if (state[2] or state[3]) else 0.0
            detections.append(
                Detection(
                    center=(float(z[0]), float(z[1])),
                    passthrough=PassthroughState(
                        z=cfg.object_size[2] / 2.0,
                        size=cfg.object_size,
                        yaw=yaw,
                        velocity=(float(state[2]), float(state[3])),
                        detection_score=score,
                        class_name=cfg.class_name,
                    ),
                    frame_index=k,
                    timestamp=timestamp,
                )
            )
            sources.append(oid)
        for _ in range(int(rng.poisson(cfg.clutter_rate))):
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            score = float(rng.uniform(*cfg.clutter_score_range))
            detections.append(
                Detection(
                    center=(float(x), float(y)),
                    passthrough=PassthroughState(
                        z=cfg.object_size[2] / 2.0,
                        size=cfg.object_size,
                        yaw=0.0,
                        velocity=(0.0, 0.0),
                        detection_score=score,
                        class_name=cfg.class_name,
                    ),
                    frame_index=k,
                    timestamp=timestamp,
                )
            )
            sources.append(None)
        frames.append(
            SimFrame(
                frame_index=k,
                timestamp=timestamp,
                detections=tuple(detections),
                source_ids=tuple(sources),
            )
        )
    return SimResult(config=cfg, ground_truth=tuple(gt), frames=tuple(frames))


def write_scenario(result: SimResult, detections_path, ground_truth_path) -> None:
    """Persist a scenario as a detections file plus a ground-truth file."""
    from . import io as io_mod

    io_mod.write_detections({result.config.scene: result.frame_detections()}, detections_path)
    io_mod.write_ground_truth(result.ground_truth, ground_truth_path)


def read_scenario(detections_path, ground_truth_path):
    """Load (detections by scene, ground-truth boxes) written by `write_scenario`."""
    from . import io as io_mod

    return io_mod.load_detections(detections_path), io_mod.load_ground_truth(ground_truth_path)

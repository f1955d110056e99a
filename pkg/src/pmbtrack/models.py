"""Constant-velocity motion model, linear position measurement model,
Kalman prediction/update, ellipsoidal gating, and birth/clutter intensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .state import (
    Detection,
    GaussianDensity,
    GaussianMixture,
    SingularMatrixError,
    STATE_DIM,
)

# Observation matrix: extracts (x, y) from (x, y, vx, vy).
H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
H.setflags(write=False)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MotionModel:
    """2D constant-velocity transition over a fixed time step.

    `noise_scale` is the white-acceleration standard deviation per axis
    [m/s^2]; the discrete process noise follows from it.
    """

    dt: float = 0.5
    noise_scale: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be nonnegative, got {self.noise_scale}")

    @property
    def transition(self) -> np.ndarray:
        dt = self.dt
        return np.array(
            [
                [1.0, 0.0, dt, 0.0],
                [0.0, 1.0, 0.0, dt],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    @property
    def process_noise(self) -> np.ndarray:
        dt = self.dt
        q = self.noise_scale**2
        a = q * dt**4 / 4.0
        b = q * dt**3 / 2.0
        c = q * dt**2
        return np.array(
            [
                [a, 0.0, b, 0.0],
                [0.0, a, 0.0, b],
                [b, 0.0, c, 0.0],
                [0.0, b, 0.0, c],
            ]
        )


@dataclass(frozen=True)
class MeasurementModel:
    """Linear position measurement z = H x + v, v ~ N(0, noise)."""

    noise: np.ndarray = field(default_factory=lambda: np.diag([0.25, 0.25]))

    def __post_init__(self):
        r = np.array(self.noise, dtype=float).reshape(2, 2)
        if np.max(np.abs(r - r.T)) > 1e-9 * max(1.0, np.max(np.abs(r))):
            raise ValueError("measurement noise must be symmetric")
        if np.min(np.linalg.eigvalsh(r)) < -1e-12:
            raise ValueError("measurement noise must be PSD")
        r = 0.5 * (r + r.T)
        r.setflags(write=False)
        object.__setattr__(self, "noise", r)


@dataclass(frozen=True)
class Models:
    motion: MotionModel = MotionModel()
    measurement: MeasurementModel = field(default_factory=MeasurementModel)


@dataclass(frozen=True)
class ModelParams:
    """Scalar model parameters of the multi-object model."""

    survival_probability: float = 0.7
    clutter_rate: float = 0.001  # expected clutter count per frame over the FoV
    fov_area: float = 1.0  # [m^2]
    birth_weight: float = 0.1
    birth_covariance: float = 15.0  # initial variance per state axis
    gating_threshold: float = math.sqrt(40.0)  # Mahalanobis distance

    def validate(self) -> None:
        if not 0.0 <= self.survival_probability <= 1.0:
            raise ValueError(f"survival_probability {self.survival_probability} outside [0, 1]")
        if self.clutter_rate < 0:
            raise ValueError(f"clutter_rate {self.clutter_rate} negative")
        if self.fov_area <= 0:
            raise ValueError(f"fov_area {self.fov_area} must be positive")
        if self.birth_weight <= 0:
            raise ValueError(f"birth_weight {self.birth_weight} must be positive")
        if self.birth_covariance <= 0:
            raise ValueError(f"birth_covariance {self.birth_covariance} must be positive")
        if self.gating_threshold <= 0:
            raise ValueError(f"gating_threshold {self.gating_threshold} must be positive")


def kalman_predict(density: GaussianDensity, motion: MotionModel) -> GaussianDensity:
    """Propagate a density one step under the constant-velocity model."""
    density.check()
    f = motion.transition
    mean = f @ density.mean
    cov = f @ density.covariance @ f.T + motion.process_noise
    return GaussianDensity(mean, cov)


def _innovation(density: GaussianDensity, mm: MeasurementModel) -> tuple[np.ndarray, np.ndarray]:
    z_hat = H @ density.mean
    s = H @ density.covariance @ H.T + mm.noise
    return z_hat, 0.5 * (s + s.T)


def predicted_measurement(density: GaussianDensity, mm: MeasurementModel) -> tuple[np.ndarray, np.ndarray]:
    """Predicted measurement mean and innovation covariance (z_hat, S)."""
    return _innovation(density, mm)


def _chol(s: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"innovation covariance singular: {exc}") from exc


def log_gaussian_2d(z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """log N(z; mean, cov) for 2D z; raises SingularMatrixError on singular cov."""
    chol = _chol(cov)
    diff = np.asarray(z, dtype=float) - np.asarray(mean, dtype=float)
    white = np.linalg.solve(chol, diff)
    maha_sq = float(white @ white)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -LOG_2PI - 0.5 * log_det - 0.5 * maha_sq


def kalman_update(
    density: GaussianDensity, z, mm: MeasurementModel
) -> tuple[GaussianDensity, float]:
    """Standard Kalman update against a 2D position measurement.

    Returns the posterior density and the log association likelihood
    log N(z; H mean, H P H^T + R).  Uses the Joseph form so the posterior
    covariance stays PSD.
    """
    density.check()
    z = np.asarray(z, dtype=float).reshape(2)
    z_hat, s = _innovation(density, mm)
    log_lik = log_gaussian_2d(z, z_hat, s)

    gain = np.linalg.solve(s, (density.covariance @ H.T).T).T
    mean = density.mean + gain @ (z - z_hat)
    i_kh = np.eye(STATE_DIM) - gain @ H
    cov = i_kh @ density.covariance @ i_kh.T + gain @ mm.noise @ gain.T
    return GaussianDensity(mean, cov), log_lik


def mahalanobis_distance(z1, z2, cov: np.ndarray) -> float:
    """sqrt((z1 - z2)^T cov^-1 (z1 - z2)) for 2D points."""
    chol = _chol(np.asarray(cov, dtype=float).reshape(2, 2))
    diff = np.asarray(z1, dtype=float).reshape(2) - np.asarray(z2, dtype=float).reshape(2)
    white = np.linalg.solve(chol, diff)
    return float(math.sqrt(white @ white))


def gate(
    track_density: GaussianDensity,
    detections: Sequence[Detection],
    mm: MeasurementModel,
    params: ModelParams,
) -> list[int]:
    """Indices of detections within the ellipsoidal gate of a track.

    A detection is inside iff its Mahalanobis distance to the predicted
    measurement, under the innovation covariance, is <= the threshold.
    """
    z_hat, s = _innovation(track_density, mm)
    chol = _chol(s)
    out = []
    for idx, det in enumerate(detections):
        white = np.linalg.solve(chol, det.center_array() - z_hat)
        if math.sqrt(float(white @ white)) <= params.gating_threshold:
            out.append(idx)
    return out


def make_birth_intensity(
    locations: Sequence[tuple[float, float]], params: ModelParams
) -> GaussianMixture:
    """Newborn-object PPP intensity: identical-weight Gaussians at `locations`.

    Every component has weight `birth_weight`, zero-velocity mean, and
    diagonal covariance `birth_covariance` on all four state axes.
    """
    cov = np.eye(STATE_DIM) * params.birth_covariance
    comps = tuple(
        (
            params.birth_weight,
            GaussianDensity(np.array([x, y, 0.0, 0.0]), cov),
        )
        for x, y in locations
    )
    return GaussianMixture(comps)


def coarse_grid(
    bounds: tuple[float, float, float, float], step: float
) -> list[tuple[float, float]]:
    """Cell centers of a square grid covering (xmin, ymin, xmax, ymax)."""
    xmin, ymin, xmax, ymax = bounds
    if xmax <= xmin or ymax <= ymin:
        raise ValueError(f"degenerate bounds {bounds}")
    nx = max(1, int(math.ceil((xmax - xmin) / step)))
    ny = max(1, int(math.ceil((ymax - ymin) / step)))
    dx = (xmax - xmin) / nx
    dy = (ymax - ymin) / ny
    return [
        (xmin + (i + 0.5) * dx, ymin + (j + 0.5) * dy)
        for i in range(nx)
        for j in range(ny)
    ]


def clutter_intensity(params: ModelParams) -> float:
    """Spatially uniform clutter intensity: expected count over FoV area."""
    if params.fov_area <= 0:
        raise ValueError(f"fov_area {params.fov_area} must be positive")
    return params.clutter_rate / params.fov_area


def moment_match(
    weights: Sequence[float], densities: Sequence[GaussianDensity]
) -> GaussianDensity:
    """Single-Gaussian moment match of a weighted mixture (weights renormalized)."""
    w = np.asarray(weights, dtype=float)
    total = float(w.sum())
    if total <= 0 or len(densities) == 0:
        raise ValueError("moment_match requires positive total weight")
    w = w / total
    mean = np.zeros(STATE_DIM)
    for wi, d in zip(w, densities):
        mean += wi * d.mean
    cov = np.zeros((STATE_DIM, STATE_DIM))
    for wi, d in zip(w, densities):
        diff = (d.mean - mean).reshape(-1, 1)
        cov += wi * (d.covariance + diff @ diff.T)
    return GaussianDensity(mean, cov)

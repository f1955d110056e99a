"""Minimal vector-GNN tracker with M/N track maintenance.

Association is a single Hungarian pass on gated Mahalanobis distances; a
tentative track is confirmed after M associations within N consecutive
steps and terminated after N consecutive misses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .models import (
    ModelParams,
    Models,
    kalman_predict,
    kalman_update,
    mahalanobis_distance,
    predicted_measurement,
)
from .state import (
    Detection,
    GaussianDensity,
    PassthroughState,
    STATE_DIM,
    TrackOutput,
)


@dataclass(frozen=True)
class MnTrack:
    track_id: int
    density: GaussianDensity
    history: tuple[bool, ...]  # association flags, oldest first
    consecutive_misses: int
    confirmed: bool
    passthrough: PassthroughState
    last_score: float


@dataclass(frozen=True)
class MnTrackerState:
    tracks: tuple[MnTrack, ...] = ()
    next_track_id: int = 0
    frame_index: int = 0


def gnn_mn_baseline_step(
    state: MnTrackerState,
    detections: Sequence[Detection],
    models: Models,
    mn: tuple[int, int],
    params: ModelParams | None = None,
) -> tuple[tuple[TrackOutput, ...], MnTrackerState]:
    m_confirm, n_window = mn
    if m_confirm > n_window or m_confirm < 1:
        raise ValueError(f"require 1 <= M <= N, got M={m_confirm}, N={n_window}")
    if params is None:
        params = ModelParams()

    predicted = [
        replace(t, density=kalman_predict(t.density, models.motion))
        for t in state.tracks
    ]
    n = len(predicted)
    p = len(detections)

    gate = params.gating_threshold
    cost = np.full((p, n + p), 2.0 * gate)
    for j, track in enumerate(predicted):
        z_hat, s = predicted_measurement(track.density, models.measurement)
        for i, det in enumerate(detections):
            d = mahalanobis_distance(det.center_array(), z_hat, s)
            if d <= gate:
                cost[i, j] = d
    for i in range(p):
        cost[i, n + i] = gate  # starting a new track beats any out-of-gate pairing
    rows, cols = linear_sum_assignment(cost)

    assigned: dict[int, int] = {}
    for r, c in zip(rows, cols):
        if c < n and cost[r, c] < gate:
            assigned[c] = r

    next_tracks: list[MnTrack] = []
    for j, track in enumerate(predicted):
        if j in assigned:
            det = detections[assigned[j]]
            density, _ = kalman_update(track.density, det.center_array(), models.measurement)
            history = (track.history + (True,))[-n_window:]
            track = replace(
                track,
                density=density,
                history=history,
                consecutive_misses=0,
                confirmed=track.confirmed or sum(history) >= m_confirm,
                passthrough=det.passthrough,
                last_score=det.score,
            )
            next_tracks.append(track)
        else:
            misses = track.consecutive_misses + 1
            if misses >= n_window:
                continue
            history = (track.history + (False,))[-n_window:]
            next_tracks.append(
                replace(track, history=history, consecutive_misses=misses)
            )

    next_id = state.next_track_id
    used = set(assigned.values())
    for i, det in enumerate(detections):
        if i in used:
            continue
        mean = np.array([det.center[0], det.center[1], 0.0, 0.0])
        cov = np.eye(STATE_DIM) * params.birth_covariance
        history = (True,)
        next_tracks.append(
            MnTrack(
                track_id=next_id,
                density=GaussianDensity(mean, cov),
                history=history,
                consecutive_misses=0,
                confirmed=m_confirm <= 1,
                passthrough=det.passthrough,
                last_score=det.score,
            )
        )
        next_id += 1

    outputs = tuple(
        TrackOutput(
            frame_index=state.frame_index,
            track_id=t.track_id,
            center=(float(t.density.mean[0]), float(t.density.mean[1])),
            passthrough=t.passthrough,
            tracking_score=t.last_score,
        )
        for t in next_tracks
        if t.confirmed
    )
    return outputs, MnTrackerState(
        tracks=tuple(next_tracks),
        next_track_id=next_id,
        frame_index=state.frame_index + 1,
    )

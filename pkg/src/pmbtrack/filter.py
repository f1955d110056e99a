"""The GNN-PMB recursion: predict, update through the single most likely
global hypothesis, track-ID maintenance, pruning, and state extraction.

One call to `step` runs the full per-frame pipeline:

    predict -> update (gate, cost matrix, Hungarian, Bayes updates)
            -> assign_track_ids -> prune -> extract

All functions are pure: they consume a posterior and return a successor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .association import (
    CostMatrix,
    GlobalHypothesis,
    build_cost_matrix,
    hungarian_solve,
    new_track_candidates,
)
from .models import (
    ModelParams,
    Models,
    coarse_grid,
    kalman_predict,
    kalman_update,
    make_birth_intensity,
)
from .preprocess import nms, score_filter
from .state import (
    BernoulliComponent,
    Detection,
    FrameDetections,
    GaussianMixture,
    PmbPosterior,
    TrackOutput,
)


@dataclass(frozen=True)
class FilterParams:
    """Model parameters plus the pruning/extraction thresholds."""

    model: ModelParams = field(default_factory=ModelParams)
    detection_score_threshold: float = 0.1
    nms_threshold: float = 0.1
    extraction_threshold: float = 0.7
    existence_pruning_threshold: float = 1e-6
    local_hypothesis_pruning_threshold: float = 1e-4
    # birth components (weight 0.1) retire after ~6 survival decays
    ppp_weight_pruning_threshold: float = 0.01
    fov_bounds: tuple[float, float, float, float] | None = None

    def validate(self) -> None:
        self.model.validate()
        for name in (
            "detection_score_threshold",
            "nms_threshold",
            "extraction_threshold",
            "existence_pruning_threshold",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")
        if self.local_hypothesis_pruning_threshold < 0:
            raise ValueError("local_hypothesis_pruning_threshold must be >= 0")
        if self.ppp_weight_pruning_threshold < 0:
            raise ValueError("ppp_weight_pruning_threshold must be >= 0")
        # Extraction may never race pruning: an extracted component must
        # survive the same frame's pruning pass.
        if self.extraction_threshold < self.existence_pruning_threshold:
            raise ValueError(
                "extraction_threshold must be >= existence_pruning_threshold"
            )


@dataclass(frozen=True)
class UpdateDiagnostics:
    gated_track_pairs: int = 0
    gated_ppp_pairs: int = 0
    new_bernoullis: int = 0
    pruned_local_hypotheses: int = 0
    pruned_bernoullis: int = 0
    pruned_ppp: int = 0


@dataclass(frozen=True)
class FrameResult:
    outputs: tuple[TrackOutput, ...]
    posterior: PmbPosterior
    diagnostics: UpdateDiagnostics


def initial_posterior() -> PmbPosterior:
    return PmbPosterior()


def _birth_grid_step(params: FilterParams) -> float:
    # Neighboring components must jointly cover the FoV within the gate.
    return max(1.0, params.model.gating_threshold * math.sqrt(params.model.birth_covariance) / 2.0)


def _birth_locations(posterior: PmbPosterior, params: FilterParams) -> list[tuple[float, float]]:
    if posterior.frame_index == 0 and not posterior.birth_seeds:
        if params.fov_bounds is None:
            return []
        return coarse_grid(params.fov_bounds, _birth_grid_step(params))
    return list(posterior.birth_seeds)


def _predict_ppp(
    ppp: GaussianMixture,
    birth_locations: Sequence[tuple[float, float]],
    models: Models,
    params: FilterParams,
) -> GaussianMixture:
    ps = params.model.survival_probability
    survivors = tuple(
        (w * ps, kalman_predict(d, models.motion)) for w, d in ppp
    )
    births = make_birth_intensity(birth_locations, params.model)
    return GaussianMixture(survivors + births.components)


def _predict_bernoullis(
    bernoullis: Sequence[BernoulliComponent], models: Models, params: FilterParams
) -> tuple[BernoulliComponent, ...]:
    ps = params.model.survival_probability
    return tuple(
        replace(b, existence=b.existence * ps, density=kalman_predict(b.density, models.motion))
        for b in bernoullis
    )


def predict(posterior: PmbPosterior, models: Models, params: FilterParams) -> PmbPosterior:
    """Survival-decayed, motion-propagated posterior with births appended.

    Newborn intensity is centered on the previous frame's unassociated
    measurements (a coarse FoV grid on the very first frame).
    """
    return replace(
        posterior,
        ppp=_predict_ppp(posterior.ppp, _birth_locations(posterior, params), models, params),
        bernoullis=_predict_bernoullis(posterior.bernoullis, models, params),
    )


def misdetection_existence(existence: float, detection_probability: float) -> float:
    """Posterior existence of a misdetected Bernoulli."""
    denom = (1.0 - existence) + existence * (1.0 - detection_probability)
    if denom <= 0:
        return 0.0
    return existence * (1.0 - detection_probability) / denom


def apply_hypothesis(
    bernoullis: Sequence[BernoulliComponent],
    detections: Sequence[Detection],
    hypothesis: GlobalHypothesis,
    cm: CostMatrix,
    models: Models,
    params: FilterParams,
) -> tuple[tuple[BernoulliComponent, ...], tuple[int, ...], int]:
    """Bayes-update every Bernoulli along the selected global hypothesis.

    Detected components get the Kalman posterior with existence one;
    misdetected components keep their density with existence reduced by
    the previous detection score.  Selected slot candidates are appended
    without track IDs, in measurement order.  Local hypotheses whose
    likelihood falls below the pruning threshold are dropped from the
    propagated hypothesis.

    Returns (updated bernoullis, measurement indices of appended
    candidates, number of pruned local hypotheses).
    """
    mm = models.measurement
    threshold = params.local_hypothesis_pruning_threshold
    out: list[BernoulliComponent] = []
    pruned = 0
    for j, bern in enumerate(bernoullis):
        i = hypothesis.track_targets[j]
        if i >= 0:
            likelihood = math.exp(-cm.track_costs[i, j])
            det = detections[i]
            density, _ = kalman_update(bern.density, det.center_array(), mm)
            updated = BernoulliComponent(
                existence=1.0,
                density=density,
                track_id=bern.track_id,
                last_score=det.score,
                passthrough=det.passthrough,
            )
        else:
            likelihood = math.exp(-cm.miss_costs[j])
            updated = replace(
                bern,
                existence=misdetection_existence(bern.existence, bern.last_score),
            )
        if likelihood < threshold:
            pruned += 1
            continue
        out.append(updated)
    appended: list[int] = []
    assert cm.candidates is not None
    for i, target in enumerate(hypothesis.measurement_targets):
        if target != -1:
            continue
        cand = cm.candidates[i]
        if cand.rho < threshold:
            pruned += 1
            continue
        det = detections[i]
        out.append(
            BernoulliComponent(
                existence=cand.existence,
                density=cand.density,
                track_id=None,
                last_score=det.score,
                passthrough=det.passthrough,
            )
        )
        appended.append(i)
    return tuple(out), tuple(appended), pruned


def update(
    posterior: PmbPosterior,
    detections: Sequence[Detection],
    models: Models,
    params: FilterParams,
) -> tuple[PmbPosterior, GlobalHypothesis, UpdateDiagnostics]:
    """Single-best-hypothesis measurement update.

    Detections must already be preprocessed.  PPP components that gated a
    measurement committed as a new track are consumed; measurements that
    ended up explaining nothing become next frame's birth seeds.
    """
    candidates = new_track_candidates(posterior.ppp, detections, models, params.model)
    cm = build_cost_matrix(posterior, detections, models, params.model, candidates)
    hypothesis = hungarian_solve(cm)
    bernoullis, appended, pruned_local = apply_hypothesis(
        posterior.bernoullis, detections, hypothesis, cm, models, params
    )

    live_new = {i for i in appended if candidates[i].existence > 0}
    consumed: set[int] = set()
    for i in live_new:
        consumed.update(candidates[i].gated_ppp)
    ppp = GaussianMixture(
        tuple(comp for idx, comp in enumerate(posterior.ppp) if idx not in consumed)
    )
    # Every measurement not claimed by an existing track re-seeds birth
    # intensity: feeble slot candidates must not starve a real object's
    # second detection of birth support.
    seeds = tuple(
        detections[i].center
        for i, target in enumerate(hypothesis.measurement_targets)
        if target == -1
    )
    diagnostics = UpdateDiagnostics(
        gated_track_pairs=int(np.count_nonzero(cm.track_allowed)),
        gated_ppp_pairs=sum(len(c.gated_ppp) for c in candidates),
        new_bernoullis=len(appended),
        pruned_local_hypotheses=pruned_local,
    )
    return (
        replace(posterior, ppp=ppp, bernoullis=bernoullis, birth_seeds=seeds),
        hypothesis,
        diagnostics,
    )


def assign_track_ids(
    posterior: PmbPosterior, hypothesis: GlobalHypothesis | None = None
) -> PmbPosterior:
    """Give each committed new track the next ID, in measurement order.

    Candidates that turned out to be pure clutter (existence zero) stay
    unlabeled and fall to the pruning pass; existing IDs never change.
    """
    next_id = posterior.next_track_id
    out = []
    for bern in posterior.bernoullis:
        if bern.track_id is None and bern.existence > 0:
            out.append(replace(bern, track_id=next_id))
            next_id += 1
        else:
            out.append(bern)
    return replace(posterior, bernoullis=tuple(out), next_track_id=next_id)


def prune(posterior: PmbPosterior, params: FilterParams) -> PmbPosterior:
    """Drop PPP components and Bernoullis below their weight/existence floors."""
    ppp = GaussianMixture(
        tuple(
            (w, d) for w, d in posterior.ppp if w >= params.ppp_weight_pruning_threshold
        )
    )
    bernoullis = tuple(
        b
        for b in posterior.bernoullis
        if b.existence >= params.existence_pruning_threshold
    )
    return replace(posterior, ppp=ppp, bernoullis=bernoullis)


def extract(posterior: PmbPosterior, params: FilterParams) -> list[TrackOutput]:
    """Tracks whose existence reaches the extraction threshold.

    Components below the threshold stay silently maintained in the
    posterior; the tracking score is the associated detection score.
    """
    out = []
    for bern in posterior.bernoullis:
        if bern.existence < params.extraction_threshold:
            continue
        assert bern.track_id is not None
        out.append(
            TrackOutput(
                frame_index=posterior.frame_index,
                track_id=bern.track_id,
                center=(float(bern.density.mean[0]), float(bern.density.mean[1])),
                passthrough=bern.passthrough,
                tracking_score=bern.last_score,
            )
        )
    return out


def step(
    posterior: PmbPosterior,
    detections: Sequence[Detection],
    models: Models,
    params: FilterParams,
) -> FrameResult:
    """One full filter recursion over a frame of preprocessed detections."""
    predicted = predict(posterior, models, params)
    updated, hypothesis, diagnostics = update(predicted, detections, models, params)
    labeled = assign_track_ids(updated, hypothesis)
    pruned = prune(labeled, params)
    diagnostics = replace(
        diagnostics,
        pruned_bernoullis=len(labeled.bernoullis) - len(pruned.bernoullis),
        pruned_ppp=len(labeled.ppp) - len(pruned.ppp),
    )
    outputs = tuple(extract(pruned, params))
    final = replace(pruned, frame_index=posterior.frame_index + 1)
    return FrameResult(outputs=outputs, posterior=final, diagnostics=diagnostics)


def preprocess_frame(
    detections: Sequence[Detection], params: FilterParams
) -> list[Detection]:
    """Score threshold then NMS, as fed to the tracker."""
    return nms(
        score_filter(detections, params.detection_score_threshold),
        params.nms_threshold,
    )


def track_frames(
    frames: Iterable[FrameDetections], models: Models, params: FilterParams
) -> list[FrameResult]:
    """Run preprocessing plus the full recursion over an ordered frame stream."""
    params.validate()
    posterior = initial_posterior()
    results = []
    for frame in frames:
        try:
            conditioned = preprocess_frame(frame.detections, params)
            result = step(posterior, conditioned, models, params)
        except Exception as exc:
            raise RuntimeError(f"frame {frame.frame_index}: {exc}") from exc
        posterior = result.posterior
        results.append(result)
    return results

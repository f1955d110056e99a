"""PMBM baseline: propagate a weighted list of global hypotheses.

Per prior hypothesis j with weight w_j, Murty's algorithm generates
ceil(N_h * w_j) children; children are reweighted by their association
likelihood, normalized, and the list is truncated to the N_h heaviest.
With N_h = 1 the recursion collapses to the single-best-hypothesis
filter: both paths share the same prediction, candidate, cost-matrix,
and Bayes-update code, so the outputs are identical bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .association import build_cost_matrix, murty_kbest, new_track_candidates
from .filter import (
    FilterParams,
    apply_hypothesis,
    _birth_locations,
    _predict_bernoullis,
    _predict_ppp,
)
from .models import Models
from .state import (
    BernoulliComponent,
    Detection,
    GaussianMixture,
    PmbPosterior,
    PmbmPosterior,
    TrackOutput,
)


def initial_pmbm_posterior(max_hypotheses: int = 1) -> PmbmPosterior:
    if max_hypotheses < 1:
        raise ValueError(f"max_hypotheses must be >= 1, got {max_hypotheses}")
    return PmbmPosterior(max_hypotheses=max_hypotheses)


@dataclass(frozen=True)
class _Child:
    log_weight: float
    bernoullis: tuple[BernoulliComponent, ...]
    appended_meas: tuple[int, ...]  # measurement index per unlabeled candidate
    slot_selected: tuple[int, ...]
    parent_order: tuple[int, int]  # (parent index, murty rank), for stable ties


def pmbm_step(
    posterior: PmbmPosterior,
    detections: Sequence[Detection],
    models: Models,
    params: FilterParams,
    n_h: int | None = None,
) -> tuple[tuple[TrackOutput, ...], PmbmPosterior]:
    """One PMBM recursion; estimation comes from the heaviest hypothesis."""
    if n_h is None:
        n_h = posterior.max_hypotheses
    if n_h < 1:
        raise ValueError(f"n_h must be >= 1, got {n_h}")

    seed_view = PmbPosterior(
        ppp=posterior.ppp,
        frame_index=posterior.frame_index,
        birth_seeds=posterior.birth_seeds,
    )
    ppp_pred = _predict_ppp(
        posterior.ppp, _birth_locations(seed_view, params), models, params
    )
    predicted = [
        (w, _predict_bernoullis(bernoullis, models, params))
        for w, bernoullis in posterior.hypotheses
    ]

    candidates = new_track_candidates(ppp_pred, detections, models, params.model)
    children: list[_Child] = []
    for parent_idx, (w_j, bernoullis) in enumerate(predicted):
        if w_j <= 0.0:  # underflowed weight cannot seed children
            continue
        view = PmbPosterior(ppp=ppp_pred, bernoullis=bernoullis)
        cm = build_cost_matrix(view, detections, models, params.model, candidates)
        k_j = max(1, math.ceil(n_h * w_j))
        for rank, hyp in enumerate(murty_kbest(cm, k_j)):
            updated, appended, _ = apply_hypothesis(
                bernoullis, detections, hyp, cm, models, params
            )
            children.append(
                _Child(
                    log_weight=math.log(w_j) - hyp.cost,
                    bernoullis=updated,
                    appended_meas=appended,
                    slot_selected=tuple(
                        i for i, t in enumerate(hyp.measurement_targets) if t == -1
                    ),
                    parent_order=(parent_idx, rank),
                )
            )

    # Normalize, keep the N_h heaviest, renormalize.
    log_weights = np.array([c.log_weight for c in children])
    log_weights -= _logsumexp(log_weights)
    order = sorted(
        range(len(children)), key=lambda idx: (-log_weights[idx], children[idx].parent_order)
    )[:n_h]
    kept = [children[idx] for idx in order]
    kept_logw = log_weights[order]
    kept_logw -= _logsumexp(kept_logw)
    weights = np.exp(kept_logw)
    weights /= weights.sum()

    # Commit track IDs: any candidate alive in a kept hypothesis gets the
    # next ID, in measurement order, shared across hypotheses.
    live_meas = sorted(
        {
            i
            for child in kept
            for i in child.appended_meas
            if candidates[i].existence > 0
        }
    )
    id_by_meas = {
        i: posterior.next_track_id + rank for rank, i in enumerate(live_meas)
    }
    next_track_id = posterior.next_track_id + len(live_meas)

    consumed: set[int] = set()
    for i in live_meas:
        consumed.update(candidates[i].gated_ppp)
    ppp = GaussianMixture(
        tuple(
            comp
            for idx, comp in enumerate(ppp_pred)
            if idx not in consumed and comp[0] >= params.ppp_weight_pruning_threshold
        )
    )

    final_hypotheses = []
    for weight, child in zip(weights, kept):
        # apply_hypothesis appends candidates at the tail, in measurement order
        n_appended = len(child.appended_meas)
        head = child.bernoullis[: len(child.bernoullis) - n_appended]
        tail = child.bernoullis[len(child.bernoullis) - n_appended :]
        labeled: list[BernoulliComponent] = list(head)
        for meas_index, bern in zip(child.appended_meas, tail):
            if bern.existence > 0:
                bern = replace(bern, track_id=id_by_meas[meas_index])
            labeled.append(bern)
        pruned = tuple(
            b for b in labeled if b.existence >= params.existence_pruning_threshold
        )
        final_hypotheses.append((float(weight), pruned))

    best = kept[0]
    seeds = tuple(detections[i].center for i in best.slot_selected)

    outputs = []
    for bern in final_hypotheses[0][1]:
        if bern.existence < params.extraction_threshold:
            continue
        assert bern.track_id is not None
        outputs.append(
            TrackOutput(
                frame_index=posterior.frame_index,
                track_id=bern.track_id,
                center=(float(bern.density.mean[0]), float(bern.density.mean[1])),
                passthrough=bern.passthrough,
                tracking_score=bern.last_score,
            )
        )

    new_posterior = PmbmPosterior(
        ppp=ppp,
        hypotheses=tuple(final_hypotheses),
        max_hypotheses=n_h,
        next_track_id=next_track_id,
        frame_index=posterior.frame_index + 1,
        birth_seeds=seeds,
    )
    return tuple(outputs), new_posterior


def _logsumexp(values: np.ndarray) -> float:
    if len(values) == 0:
        raise ValueError("no hypotheses to normalize")
    peak = float(np.max(values))
    return peak + math.log(float(np.sum(np.exp(values - peak))))

"""Assignment-problem construction and solvers for the single-scan update.

The cost matrix follows the usual layout for Poisson multi-Bernoulli
updates: one row per measurement, one column per existing track plus one
"new track" slot column per measurement.  Detection entries are negative
log likelihoods of the (track, measurement) local hypothesis; the slot
entry folds clutter and first detection together, and misdetection costs
enter through a column reduction so that an unassigned track implicitly
takes its misdetection hypothesis.  Solving the reduced rectangular
problem is therefore exactly the binary-association-matrix optimization
(columns sum to one, rows sum to one) over the represented hypothesis
space.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .models import (
    ModelParams,
    Models,
    clutter_intensity,
    kalman_update,
    moment_match,
    predicted_measurement,
)
from .state import Detection, GaussianDensity, GaussianMixture, PmbPosterior, STATE_DIM


class EnumerationSizeError(ValueError):
    """Exhaustive enumeration refused: problem exceeds the size bound."""


@dataclass(frozen=True)
class NewTrackCandidate:
    """Per-measurement first-detection candidate built from the PPP intensity.

    `existence` is e / (clutter + e) with e the detection-weighted PPP
    evidence; it is zero when no PPP component gates the measurement
    (pure clutter explanation).
    """

    measurement_index: int
    existence: float
    density: GaussianDensity
    rho: float  # clutter intensity + PPP evidence; slot likelihood
    gated_ppp: tuple[int, ...]


def _sentinel(*value_arrays: np.ndarray) -> float:
    # Must exceed any achievable assignment total: base * (dimension) + 1
    # with base the largest finite magnitude across raw and reduced entries.
    base = 1.0
    dim = 1
    for arr in value_arrays:
        arr = np.asarray(arr, dtype=float)
        dim += arr.size
        finite = arr[np.isfinite(arr)]
        if finite.size:
            base = max(base, float(np.max(np.abs(finite))))
    return base * (dim + 1) + 1.0


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Assignment costs for one frame.

    `track_costs[i, j]` is the -log likelihood of pairing measurement i
    with track j (the `big` sentinel where the pairing is outside the
    gate), `miss_costs[j]` the misdetection cost of track j, and
    `slot_costs[i]` the cost of measurement i starting its own new
    track / being clutter.  Cross slot pairings (measurement i on slot
    i' != i) are structurally impossible.
    """

    track_costs: np.ndarray  # (p, n)
    track_allowed: np.ndarray  # (p, n) bool
    miss_costs: np.ndarray  # (n,)
    slot_costs: np.ndarray  # (p,)
    slot_is_new: tuple[bool, ...]
    big: float
    candidates: tuple[NewTrackCandidate, ...] | None = None
    track_labels: tuple[str, ...] = ()
    measurement_labels: tuple[str, ...] = ()

    @property
    def n_tracks(self) -> int:
        return int(self.track_costs.shape[1])

    @property
    def n_measurements(self) -> int:
        return int(self.track_costs.shape[0])

    @classmethod
    def from_costs(
        cls,
        track_costs,
        miss_costs,
        slot_costs,
        slot_is_new: Sequence[bool] | None = None,
        candidates: tuple[NewTrackCandidate, ...] | None = None,
        track_labels: Sequence[str] | None = None,
        measurement_labels: Sequence[str] | None = None,
    ) -> "CostMatrix":
        """Build from raw arrays; np.inf marks forbidden track pairings."""
        tc = np.array(track_costs, dtype=float)
        if tc.ndim != 2:
            tc = tc.reshape(len(slot_costs), len(miss_costs))
        miss = np.array(miss_costs, dtype=float).reshape(-1)
        slot = np.array(slot_costs, dtype=float).reshape(-1)
        p, n = tc.shape
        if miss.shape != (n,) or slot.shape != (p,):
            raise ValueError("inconsistent cost matrix shapes")
        allowed = np.isfinite(tc)
        reduced = tc - miss[np.newaxis, :] if n else tc
        big = _sentinel(tc, miss, slot, reduced)
        tc = np.where(allowed, tc, big)
        miss = np.where(np.isfinite(miss), miss, big)
        slot = np.where(np.isfinite(slot), slot, big)
        for arr in (tc, miss, slot):
            arr.setflags(write=False)
        allowed.setflags(write=False)
        if slot_is_new is None:
            slot_is_new = (False,) * p
        if track_labels is None:
            track_labels = tuple(f"T{j + 1}" for j in range(n))
        if measurement_labels is None:
            measurement_labels = tuple(f"m{i + 1}" for i in range(p))
        return cls(
            track_costs=tc,
            track_allowed=allowed,
            miss_costs=miss,
            slot_costs=slot,
            slot_is_new=tuple(bool(b) for b in slot_is_new),
            big=big,
            candidates=candidates,
            track_labels=tuple(track_labels),
            measurement_labels=tuple(measurement_labels),
        )

    def reduced(self) -> np.ndarray:
        """(p, n + p) solver matrix: track columns minus their miss cost,
        slot costs on the diagonal of the right block, np.inf elsewhere."""
        p, n = self.track_costs.shape
        out = np.full((p, n + p), np.inf)
        if n:
            block = self.track_costs - self.miss_costs[np.newaxis, :]
            out[:, :n] = np.where(self.track_allowed, block, np.inf)
        for i in range(p):
            out[i, n + i] = self.slot_costs[i]
        return out

    def hypothesis_cost(self, measurement_targets: Sequence[int]) -> float:
        """Total cost of a hypothesis in a fixed canonical summation order."""
        p, n = self.track_costs.shape
        total = 0.0
        assigned = set()
        for i, j in enumerate(measurement_targets):
            if j >= 0:
                total += float(self.track_costs[i, j])
                assigned.add(j)
            else:
                total += float(self.slot_costs[i])
        for j in range(n):
            if j not in assigned:
                total += float(self.miss_costs[j])
        return total


@dataclass(frozen=True)
class GlobalHypothesis:
    """A valid collection of local hypotheses for one frame.

    `measurement_targets[i]` is the track index paired with measurement i
    or -1 when the measurement takes its own new-track/clutter slot;
    `track_targets[j]` is the measurement index for track j or -1 for a
    misdetection.
    """

    measurement_targets: tuple[int, ...]
    track_targets: tuple[int, ...]
    cost: float

    def measurement_outcomes(self, cm: CostMatrix) -> tuple[str, ...]:
        out = []
        for i, j in enumerate(self.measurement_targets):
            if j >= 0:
                out.append("track")
            elif cm.slot_is_new[i]:
                out.append("new")
            else:
                out.append("clutter")
        return tuple(out)

    def assignment_matrix(self, cm: CostMatrix) -> np.ndarray:
        """Binary association matrix in the reduced (p, n + p) layout."""
        p, n = cm.n_measurements, cm.n_tracks
        a = np.zeros((p, n + p), dtype=int)
        for i, j in enumerate(self.measurement_targets):
            a[i, j if j >= 0 else n + i] = 1
        return a


def _hypothesis_from_targets(cm: CostMatrix, targets: Sequence[int]) -> GlobalHypothesis:
    track_targets = [-1] * cm.n_tracks
    for i, j in enumerate(targets):
        if j >= 0:
            track_targets[j] = i
    return GlobalHypothesis(
        measurement_targets=tuple(int(j) for j in targets),
        track_targets=tuple(track_targets),
        cost=cm.hypothesis_cost(targets),
    )


def new_track_candidates(
    ppp: GaussianMixture,
    detections: Sequence[Detection],
    models: Models,
    params: ModelParams,
) -> tuple[NewTrackCandidate, ...]:
    """First-detection candidates: gate each measurement against the PPP.

    Components that gate contribute weight * P_D * N(z; z_hat, S) to the
    slot likelihood (P_D is the detection's score) and their Kalman
    posteriors are moment matched into the candidate density.
    """
    mm = models.measurement
    lam_c = clutter_intensity(params)
    centers = np.array([det.center for det in detections], dtype=float).reshape(-1, 2)
    # per-component gate test for all measurements at once
    gated_by_meas: list[list[int]] = [[] for _ in detections]
    for idx, (w, density) in enumerate(ppp):
        z_hat, s = predicted_measurement(density, mm)
        chol = np.linalg.cholesky(s)
        if len(detections):
            white = np.linalg.solve(chol, (centers - z_hat).T)
            dist_sq = np.sum(white * white, axis=0)
            for i in np.flatnonzero(dist_sq <= params.gating_threshold**2):
                gated_by_meas[int(i)].append(idx)
    out = []
    for i, det in enumerate(detections):
        z = det.center_array()
        p_d = det.score
        gated = gated_by_meas[i]
        betas: list[float] = []
        posteriors: list[GaussianDensity] = []
        for idx in gated:
            w, density = ppp.components[idx]
            post, log_lik = kalman_update(density, z, mm)
            betas.append(w * math.exp(log_lik))
            posteriors.append(post)
        evidence = p_d * float(sum(betas))
        rho = lam_c + evidence
        if gated and evidence > 0:
            density = moment_match(betas, posteriors)
            existence = evidence / rho
        else:
            # Pure clutter explanation; kept so the slot stays selectable.
            cov = np.eye(STATE_DIM) * params.birth_covariance
            density = GaussianDensity(np.array([z[0], z[1], 0.0, 0.0]), cov)
            existence = 0.0
        out.append(
            NewTrackCandidate(
                measurement_index=i,
                existence=existence,
                density=density,
                rho=rho,
                gated_ppp=tuple(gated),
            )
        )
    return tuple(out)


def build_cost_matrix(
    posterior: PmbPosterior,
    detections: Sequence[Detection],
    models: Models,
    params: ModelParams,
    candidates: tuple[NewTrackCandidate, ...] | None = None,
) -> CostMatrix:
    """Assemble the frame's assignment costs from the predicted posterior.

    Detection entries are -log(r * P_D * N(z; z_hat, S)) using the
    detection's score as P_D; misdetection entries use the track's score
    at its previous detection; slot entries are -log(rho) from
    `new_track_candidates`.
    """
    mm = models.measurement
    if candidates is None:
        candidates = new_track_candidates(posterior.ppp, detections, models, params)
    n = len(posterior.bernoullis)
    p = len(detections)
    centers = np.array([det.center for det in detections], dtype=float).reshape(-1, 2)
    scores = np.array([det.score for det in detections], dtype=float)
    track_costs = np.full((p, n), np.inf)
    miss_costs = np.empty(n)
    gate_sq = params.gating_threshold**2
    for j, bern in enumerate(posterior.bernoullis):
        z_hat, s = predicted_measurement(bern.density, mm)
        chol = np.linalg.cholesky(s)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        if p:
            white = np.linalg.solve(chol, (centers - z_hat).T)
            maha_sq = np.sum(white * white, axis=0)
            for i in np.flatnonzero(maha_sq <= gate_sq):
                log_lik = -math.log(2.0 * math.pi) - 0.5 * log_det - 0.5 * maha_sq[i]
                w = bern.existence * scores[i] * math.exp(log_lik)
                track_costs[i, j] = -math.log(w) if w > 0 else np.inf
        miss_lik = (1.0 - bern.existence) + bern.existence * (1.0 - bern.last_score)
        miss_costs[j] = -math.log(miss_lik) if miss_lik > 0 else np.inf
    slot_costs = np.array(
        [-math.log(c.rho) if c.rho > 0 else np.inf for c in candidates]
    )
    # Zero-likelihood miss/slot entries stay selectable at the sentinel cost;
    # only out-of-gate pairings are structurally forbidden.
    return CostMatrix.from_costs(
        track_costs,
        miss_costs,
        slot_costs,
        slot_is_new=tuple(c.existence > 0 for c in candidates),
        candidates=candidates,
    )


def _solve_reduced(
    reduced: np.ndarray,
    n_tracks: int,
    forced: tuple[tuple[int, int], ...] = (),
    forbidden: frozenset[tuple[int, int]] = frozenset(),
) -> tuple[float, tuple[int, ...]] | None:
    """Optimal measurement->column assignment under Murty node constraints.

    Returns (solver cost, column per measurement) or None if infeasible.
    """
    p, cols = reduced.shape
    m = reduced.copy()
    for i, j in forbidden:
        m[i, j] = np.inf
    forced_rows = {i for i, _ in forced}
    forced_cols = {j for _, j in forced}
    rows_keep = [i for i in range(p) if i not in forced_rows]
    cols_keep = [j for j in range(cols) if j not in forced_cols]
    total = float(sum(reduced[i, j] for i, j in forced))
    assignment = {i: j for i, j in forced}
    if rows_keep:
        sub = m[np.ix_(rows_keep, cols_keep)]
        if not np.all(np.any(np.isfinite(sub), axis=1)):
            return None
        try:
            ri, ci = linear_sum_assignment(sub)
        except ValueError:
            return None
        for r, c in zip(ri, ci):
            if not np.isfinite(sub[r, c]):
                return None
            assignment[rows_keep[r]] = cols_keep[c]
            total += float(sub[r, c])
    return total, tuple(assignment[i] for i in range(p))


def _columns_to_targets(columns: Sequence[int], n_tracks: int) -> tuple[int, ...]:
    return tuple(j if j < n_tracks else -1 for j in columns)


def hungarian_solve(cm: CostMatrix) -> GlobalHypothesis:
    """Single most likely global hypothesis (minimum-cost assignment)."""
    solved = _solve_reduced(cm.reduced(), cm.n_tracks)
    if solved is None:  # cannot happen: every slot column is selectable
        raise RuntimeError("assignment infeasible")
    _, columns = solved
    return _hypothesis_from_targets(cm, _columns_to_targets(columns, cm.n_tracks))


def murty_kbest(cm: CostMatrix, k: int) -> list[GlobalHypothesis]:
    """k cheapest global hypotheses in nondecreasing cost order.

    Standard Murty partitioning over the reduced problem; ties are broken
    by the measurement-target tuple so runs are reproducible.  Returns
    fewer than k hypotheses when the space is exhausted.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    reduced = cm.reduced()
    n = cm.n_tracks
    best = _solve_reduced(reduced, n)
    if best is None:
        raise RuntimeError("assignment infeasible")
    results: list[GlobalHypothesis] = []
    counter = 0
    _, columns = best
    targets = _columns_to_targets(columns, n)
    heap: list[tuple] = [
        (cm.hypothesis_cost(targets), targets, counter, (), frozenset(), columns)
    ]
    while heap and len(results) < k:
        _, targets, _, forced, forbidden, columns = heapq.heappop(heap)
        results.append(_hypothesis_from_targets(cm, targets))
        free = [(i, columns[i]) for i in range(len(columns)) if i not in {r for r, _ in forced}]
        for t in range(len(free)):
            child_forced = forced + tuple(free[:t])
            child_forbidden = forbidden | {free[t]}
            solved = _solve_reduced(reduced, n, child_forced, child_forbidden)
            if solved is None:
                continue
            _, child_columns = solved
            child_targets = _columns_to_targets(child_columns, n)
            counter += 1
            heapq.heappush(
                heap,
                (
                    cm.hypothesis_cost(child_targets),
                    child_targets,
                    counter,
                    child_forced,
                    child_forbidden,
                    child_columns,
                ),
            )
    return results


def enumerate_hypotheses(cm: CostMatrix, size_bound: int = 8) -> list[GlobalHypothesis]:
    """Every valid global hypothesis with its cost (test oracle).

    Each track is misdetected or paired with one of its gated
    measurements, injectively; unpaired measurements take their own
    slot.  Refuses problems beyond `size_bound` per side.
    """
    p, n = cm.n_measurements, cm.n_tracks
    if p > size_bound or n > size_bound:
        raise EnumerationSizeError(
            f"{n} tracks x {p} measurements exceeds the {size_bound}x{size_bound} bound"
        )
    results: list[GlobalHypothesis] = []
    targets = [-1] * p

    def recurse(j: int) -> None:
        if j == n:
            results.append(_hypothesis_from_targets(cm, tuple(targets)))
            return
        recurse(j + 1)  # track j misdetected
        for i in range(p):
            if targets[i] == -1 and cm.track_allowed[i, j]:
                targets[i] = j
                recurse(j + 1)
                targets[i] = -1

    recurse(0)
    results.sort(key=lambda h: (h.cost, h.measurement_targets))
    return results


def dump_cost_matrix_csv(cm: CostMatrix, path) -> None:
    """Labeled CSV dump: measurement rows, track + new-track columns,
    plus a final misdetection row."""
    n, p = cm.n_tracks, cm.n_measurements
    header = [""] + list(cm.track_labels) + [f"T{i + 1}_new" for i in range(p)]

    def cell(value: float, allowed: bool = True) -> str:
        return "inf" if not allowed or value >= cm.big else repr(float(value))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(p):
            row = [cm.measurement_labels[i]]
            row += [cell(cm.track_costs[i, j], cm.track_allowed[i, j]) for j in range(n)]
            row += [cell(cm.slot_costs[i]) if q == i else "inf" for q in range(p)]
            writer.writerow(row)
        writer.writerow(["m0"] + [cell(c) for c in cm.miss_costs] + [""] * p)

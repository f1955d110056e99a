import itertools
import math

import numpy as np
import pytest

from conftest import make_bernoulli, make_detection
from pmbtrack.association import (
    CostMatrix,
    EnumerationSizeError,
    build_cost_matrix,
    dump_cost_matrix_csv,
    enumerate_hypotheses,
    hungarian_solve,
    murty_kbest,
    new_track_candidates,
)
from pmbtrack.models import H, MeasurementModel, ModelParams, Models
from pmbtrack.state import GaussianMixture, GaussianDensity, PmbPosterior


def random_cost_matrix(rng, n_tracks=None, n_meas=None, gate_prob=0.75, max_side=6):
    n = rng.integers(0, max_side + 1) if n_tracks is None else n_tracks
    p = rng.integers(0, max_side + 1) if n_meas is None else n_meas
    track = rng.normal(size=(p, n)) * 3.0
    mask = rng.uniform(size=(p, n)) < gate_prob
    track = np.where(mask, track, np.inf)
    miss = rng.normal(size=n) * 2.0 + 1.0
    slot = rng.normal(size=p) * 2.0 + 2.0
    return CostMatrix.from_costs(track, miss, slot)


class TestBuildCostMatrix:
    def test_lone_far_measurement_gets_clutter_cost(self, models):
        params = ModelParams(clutter_rate=0.001, fov_area=1.0)
        posterior = PmbPosterior()  # no tracks, no PPP
        det = [make_detection(100.0, 100.0)]
        cm = build_cost_matrix(posterior, det, models, params)
        assert cm.n_tracks == 0 and cm.n_measurements == 1
        assert cm.slot_costs[0] == pytest.approx(-math.log(0.001))
        assert cm.slot_is_new == (False,)

    def test_zero_innovation_unit_covariance_cost(self, models):
        # r = 1, P_D = 1, z at predicted mean, S = I
        mm = MeasurementModel(noise=np.diag([0.25, 0.25]))
        models = Models(models.motion, mm)
        bern = make_bernoulli(
            3.0, 4.0, existence=1.0, cov=np.diag([0.75, 0.75, 1.0, 1.0])
        )
        posterior = PmbPosterior(bernoullis=(bern,), next_track_id=1)
        cm = build_cost_matrix(
            posterior, [make_detection(3.0, 4.0, score=1.0)], models, ModelParams()
        )
        assert cm.track_costs[0, 0] == pytest.approx(-math.log(1.0 / (2 * math.pi)))

    def test_entries_match_independent_evaluator(self, models):
        rng = np.random.default_rng(21)
        params = ModelParams(clutter_rate=0.5, fov_area=100.0, gating_threshold=20.0)
        bernoullis = tuple(
            make_bernoulli(
                *rng.normal(scale=5.0, size=2),
                existence=float(rng.uniform(0.2, 1.0)),
                track_id=j,
                last_score=float(rng.uniform(0.3, 1.0)),
            )
            for j in range(3)
        )
        ppp = GaussianMixture(
            tuple(
                (
                    float(rng.uniform(0.05, 0.3)),
                    GaussianDensity(
                        [*rng.normal(scale=5.0, size=2), 0, 0], np.eye(4) * 10.0
                    ),
                )
                for _ in range(2)
            )
        )
        posterior = PmbPosterior(ppp=ppp, bernoullis=bernoullis, next_track_id=3)
        detections = [
            make_detection(*rng.normal(scale=5.0, size=2), score=float(rng.uniform(0.4, 1.0)))
            for _ in range(4)
        ]
        cm = build_cost_matrix(posterior, detections, models, params)

        # independent straight-line evaluation
        r_mat = models.measurement.noise
        for j, bern in enumerate(bernoullis):
            s = H @ bern.density.covariance @ H.T + r_mat
            z_hat = H @ bern.density.mean
            for i, det in enumerate(detections):
                diff = det.center_array() - z_hat
                d2 = float(diff @ np.linalg.inv(s) @ diff)
                if math.sqrt(d2) > params.gating_threshold:
                    assert not cm.track_allowed[i, j]
                    continue
                dens = math.exp(-0.5 * d2) / (2 * math.pi * math.sqrt(np.linalg.det(s)))
                expected = -math.log(bern.existence * det.score * dens)
                assert cm.track_costs[i, j] == pytest.approx(expected, abs=1e-10)
            expected_miss = -math.log(
                (1 - bern.existence) + bern.existence * (1 - bern.last_score)
            )
            assert cm.miss_costs[j] == pytest.approx(expected_miss, abs=1e-10)
        lam_c = params.clutter_rate / params.fov_area
        for i, det in enumerate(detections):
            evidence = 0.0
            for w, dens in ppp:
                s = H @ dens.covariance @ H.T + r_mat
                z_hat = H @ dens.mean
                diff = det.center_array() - z_hat
                d2 = float(diff @ np.linalg.inv(s) @ diff)
                if math.sqrt(d2) <= params.gating_threshold:
                    evidence += (
                        w
                        * det.score
                        * math.exp(-0.5 * d2)
                        / (2 * math.pi * math.sqrt(np.linalg.det(s)))
                    )
            assert cm.slot_costs[i] == pytest.approx(-math.log(lam_c + evidence), abs=1e-10)

    def test_empty_detections_valid(self, models, model_params):
        posterior = PmbPosterior(bernoullis=(make_bernoulli(0, 0),), next_track_id=1)
        cm = build_cost_matrix(posterior, [], models, model_params)
        assert cm.n_measurements == 0
        assert cm.miss_costs.shape == (1,)
        hyp = hungarian_solve(cm)
        assert hyp.track_targets == (-1,)

    def test_candidate_moment_match_from_two_components(self, models):
        params = ModelParams(clutter_rate=0.001, fov_area=1.0)
        ppp = GaussianMixture(
            (
                (0.1, GaussianDensity([0, 0, 0, 0], np.eye(4) * 5.0)),
                (0.2, GaussianDensity([1, 0, 0, 0], np.eye(4) * 5.0)),
            )
        )
        cands = new_track_candidates(ppp, [make_detection(0.5, 0.0)], models, params)
        assert cands[0].gated_ppp == (0, 1)
        assert 0 < cands[0].existence < 1
        # mean sits between the two updated components
        assert 0.0 < cands[0].density.mean[0] < 1.0


class TestHungarian:
    def _square(self, entries):
        n = len(entries[0])
        return CostMatrix.from_costs(
            np.array(entries, dtype=float), np.full(n, 50.0), np.full(len(entries), 50.0)
        )

    def test_identity_optimum(self):
        hyp = hungarian_solve(self._square([[0.0, 5.0], [5.0, 0.0]]))
        assert hyp.measurement_targets == (0, 1)
        assert hyp.cost == pytest.approx(0.0)

    def test_asymmetric_optimum(self):
        hyp = hungarian_solve(self._square([[1.0, 2.0], [3.0, 0.0]]))
        assert hyp.measurement_targets == (0, 1)
        assert hyp.cost == pytest.approx(1.0)

    def test_matches_enumerator_on_random_instances(self):
        rng = np.random.default_rng(100)
        for _ in range(60):
            cm = random_cost_matrix(rng)
            hyp = hungarian_solve(cm)
            best = enumerate_hypotheses(cm)[0]
            assert hyp.cost == best.cost

    def test_row_constant_shift_keeps_argmin(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            cm = random_cost_matrix(rng, n_tracks=4, n_meas=4)
            hyp = hungarian_solve(cm)
            row = rng.integers(0, 4)
            shift = float(rng.normal() * 5.0)
            track = np.where(cm.track_allowed, cm.track_costs, np.inf)
            track[row] = np.where(cm.track_allowed[row], track[row] + shift, np.inf)
            slot = cm.slot_costs.copy()
            slot[row] += shift
            shifted = CostMatrix.from_costs(track, cm.miss_costs, slot)
            assert hungarian_solve(shifted).measurement_targets == hyp.measurement_targets


class TestMurty:
    def test_k1_equals_hungarian(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            cm = random_cost_matrix(rng)
            assert murty_kbest(cm, 1)[0] == hungarian_solve(cm)

    def test_two_by_two_permutations(self):
        cm = CostMatrix.from_costs(
            np.array([[1.0, 2.0], [3.0, 0.5]]), np.full(2, 60.0), np.full(2, 60.0)
        )
        hyps = murty_kbest(cm, 2)
        assert hyps[0].measurement_targets == (0, 1)
        assert hyps[0].cost == pytest.approx(1.5)
        assert hyps[1].measurement_targets == (1, 0)
        assert hyps[1].cost == pytest.approx(5.0)

    def test_matches_enumerated_k_cheapest(self):
        rng = np.random.default_rng(57)
        for _ in range(25):
            cm = random_cost_matrix(rng, n_tracks=3, n_meas=3, gate_prob=0.9)
            ranked = murty_kbest(cm, 10)
            expected = enumerate_hypotheses(cm)[:10]
            assert len(ranked) == len(expected)
            for got, want in zip(ranked, expected):
                assert got.cost == pytest.approx(want.cost, abs=1e-9)

    def test_nondecreasing_and_prefix_property(self):
        rng = np.random.default_rng(71)
        for _ in range(15):
            cm = random_cost_matrix(rng, n_tracks=4, n_meas=4)
            k9 = murty_kbest(cm, 9)
            k10 = murty_kbest(cm, 10)
            costs = [h.cost for h in k10]
            assert costs == sorted(costs)
            assert [h.cost for h in k9] == costs[: len(k9)]
            assert len({h.measurement_targets for h in k10}) == len(k10)

    def test_exhausted_space_returns_fewer(self):
        cm = CostMatrix.from_costs(np.array([[1.0]]), [2.0], [3.0])
        hyps = murty_kbest(cm, 10)
        assert len(hyps) == 2  # {match}, {miss + slot}
        assert hyps[0].cost == pytest.approx(1.0)
        assert hyps[1].cost == pytest.approx(5.0)


class TestEnumerate:
    def test_contains_figure_style_hypotheses(self):
        # 2 tracks, 3 measurements: both reference hypotheses present
        rng = np.random.default_rng(5)
        cm = random_cost_matrix(rng, n_tracks=2, n_meas=3, gate_prob=1.0)
        hyps = enumerate_hypotheses(cm)
        targets = {h.measurement_targets for h in hyps}
        assert (1, -1, -1) in targets  # T1 missed, T2 <-> m1
        assert (1, 0, -1) in targets  # T1 <-> m2, T2 <-> m1

    def test_empty_problem_single_hypothesis(self):
        cm = CostMatrix.from_costs(np.zeros((0, 0)), [], [])
        hyps = enumerate_hypotheses(cm)
        assert len(hyps) == 1
        assert hyps[0].cost == 0.0

    def test_count_matches_combinatorial_recount(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            n, p = int(rng.integers(0, 5)), int(rng.integers(0, 5))
            cm = random_cost_matrix(rng, n_tracks=n, n_meas=p)
            count = len(enumerate_hypotheses(cm))
            # direct recount: choose k tracks to detect and an injective
            # assignment into their gated measurements
            expected = 0
            for k in range(min(n, p) + 1):
                for tracks in itertools.combinations(range(n), k):
                    for meas in itertools.permutations(range(p), k):
                        if all(cm.track_allowed[m, t] for t, m in zip(tracks, meas)):
                            expected += 1
            assert count == expected

    def test_size_bound_refused(self):
        cm = CostMatrix.from_costs(np.zeros((9, 2)), np.zeros(2), np.zeros(9))
        with pytest.raises(EnumerationSizeError):
            enumerate_hypotheses(cm)


def test_csv_dump_layout(tmp_path, models, model_params):
    posterior = PmbPosterior(
        bernoullis=(make_bernoulli(0, 0), make_bernoulli(8, 0, track_id=1)),
        next_track_id=2,
    )
    cm = build_cost_matrix(posterior, [make_detection(0.2, 0.1)], models, model_params)
    path = tmp_path / "costs.csv"
    dump_cost_matrix_csv(cm, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",")[:3] == ["", "T1", "T2"]
    assert lines[1].startswith("m1,")
    assert lines[-1].startswith("m0,")

import numpy as np
import pytest

from conftest import make_bernoulli, make_passthrough
from pmbtrack.state import (
    BernoulliComponent,
    GaussianDensity,
    GaussianMixture,
    InvalidDensityError,
    PmbPosterior,
    posterior_from_json,
    posterior_to_json,
    validate_posterior,
)


def test_empty_posterior_has_no_violations():
    assert validate_posterior(PmbPosterior()) == []


def test_duplicate_track_id_reported():
    posterior = PmbPosterior(
        bernoullis=(make_bernoulli(0, 0, track_id=3), make_bernoulli(5, 5, track_id=3)),
        next_track_id=4,
    )
    violations = validate_posterior(posterior)
    assert len(violations) == 1
    assert "unique" in violations[0]
    assert "3" in violations[0]


def test_existence_out_of_bounds_reported():
    posterior = PmbPosterior(
        bernoullis=(make_bernoulli(0, 0, existence=1.2, track_id=0),),
        next_track_id=1,
    )
    violations = validate_posterior(posterior)
    assert len(violations) == 1
    assert "[0, 1]" in violations[0]


def test_next_track_id_must_exceed_assigned():
    posterior = PmbPosterior(
        bernoullis=(make_bernoulli(0, 0, track_id=7),), next_track_id=7
    )
    assert any("next_track_id" in v for v in validate_posterior(posterior))


def test_non_psd_covariance_detected():
    cov = np.eye(4)
    cov[0, 0] = -1.0
    density = GaussianDensity([0, 0, 0, 0], cov)
    assert any("PSD" in v for v in density.violations())
    with pytest.raises(InvalidDensityError):
        density.check()


def test_asymmetric_covariance_rejected():
    cov = np.eye(4)
    cov[0, 1] = 1.0  # cov[1, 0] stays 0
    with pytest.raises(InvalidDensityError):
        GaussianDensity([0, 0, 0, 0], cov)


def test_mixture_negative_weight_reported():
    gm = GaussianMixture(((-0.1, GaussianDensity(np.zeros(4), np.eye(4))),))
    assert any("negative weight" in v for v in gm.violations())


def test_densities_are_immutable():
    d = GaussianDensity(np.zeros(4), np.eye(4))
    with pytest.raises(ValueError):
        d.mean[0] = 1.0
    with pytest.raises(AttributeError):
        d.mean = np.ones(4)


def _random_posterior(rng):
    def random_density():
        a = rng.normal(size=(4, 4))
        return GaussianDensity(rng.normal(size=4), a @ a.T + 0.1 * np.eye(4))

    ppp = GaussianMixture(
        tuple((float(rng.uniform(0, 2)), random_density()) for _ in range(3))
    )
    bernoullis = tuple(
        BernoulliComponent(
            existence=float(rng.uniform()),
            density=random_density(),
            track_id=i,
            last_score=float(rng.uniform()),
            passthrough=make_passthrough(score=float(rng.uniform())),
        )
        for i in range(4)
    )
    return PmbPosterior(
        ppp=ppp,
        bernoullis=bernoullis,
        next_track_id=4,
        frame_index=17,
        birth_seeds=((1.25, -3.5), (0.1, 0.2)),
    )


def test_posterior_json_roundtrip_is_bit_exact():
    posterior = _random_posterior(np.random.default_rng(42))
    text = posterior_to_json(posterior)
    restored = posterior_from_json(text)
    # byte-identical re-encoding implies bit-identical floats
    assert posterior_to_json(restored) == text
    assert restored.next_track_id == posterior.next_track_id
    assert restored.frame_index == posterior.frame_index
    assert restored.birth_seeds == posterior.birth_seeds
    for a, b in zip(restored.bernoullis, posterior.bernoullis):
        assert a.track_id == b.track_id
        assert np.array_equal(a.density.mean, b.density.mean)
        assert np.array_equal(a.density.covariance, b.density.covariance)
    for (wa, da), (wb, db) in zip(restored.ppp, posterior.ppp):
        assert wa == wb
        assert np.array_equal(da.covariance, db.covariance)

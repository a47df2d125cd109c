import numpy as np
import pytest
from pydantic import ValidationError

from fmselect.exceptions import DomainError
from fmselect.simulation import (
    GroundTruth,
    ScenarioSpec,
    equispaced_grid,
    generate,
    substream,
    true_beta,
)


def _parts(raw, truth):
    betas = truth.beta_curves(raw.grid)
    fixed = np.concatenate([X_i @ betas for X_i in raw.fixed_covariates])
    return fixed


def test_true_functions():
    assert true_beta("A", 0, 0.25) == pytest.approx(8.0)
    assert true_beta("A", 3, 0.0) == pytest.approx(3.0)
    assert true_beta("A", 4, 0.0) == pytest.approx(5.0)
    assert true_beta("A", 1, 0.6) == pytest.approx(2.0 / (0.15 * np.sqrt(2 * np.pi)), rel=1e-12)
    assert true_beta("B", 1, 0.6) == pytest.approx(5.3192, abs=1e-4)
    assert true_beta("B", 2, 0.6) == pytest.approx(1.25 * true_beta("B", 1, 0.6))
    np.testing.assert_array_equal(true_beta("B", 10, np.linspace(0, 1, 5)), np.zeros(5))


def test_true_beta_rejects_bad_index():
    with pytest.raises(DomainError):
        true_beta("A", 8, 0.5)
    with pytest.raises(DomainError):
        true_beta("C", 0, 0.5)


def test_grid_endpoints():
    np.testing.assert_allclose(equispaced_grid(10), np.linspace(0, 1, 10))
    assert equispaced_grid(2).tolist() == [0.0, 1.0]


def test_default_shape_and_first_columns():
    raw, truth = generate(ScenarioSpec(n=25, J=10, m=10, seed=7))
    assert raw.n_clusters == 25
    assert raw.total_observations == 2500
    assert (raw.p, raw.q) == (8, 8)
    for X_i, Z_i in zip(raw.fixed_covariates, raw.random_covariates):
        assert np.all(X_i[:, 0] == 1.0)
        np.testing.assert_array_equal(Z_i, X_i)
    assert truth.true_fixed_support == [0, 1, 2, 3, 4]
    assert truth.true_random_support == [0, 3]


def test_scenario_b_draws_separate_random_covariates():
    raw, truth = generate(ScenarioSpec(scenario="B", n=4, J=3, seed=1))
    assert (raw.p, raw.q) == (11, 8)
    assert (truth.p, truth.q) == (11, 8)
    assert not np.array_equal(raw.fixed_covariates[0][:, 1:8], raw.random_covariates[0][:, 1:])
    assert np.all(raw.random_covariates[0][:, 0] == 1.0)


def test_generation_is_deterministic():
    spec = ScenarioSpec(n=5, J=4, seed=11)
    first, truth_a = generate(spec)
    second, truth_b = generate(spec)
    for y1, y2 in zip(first.responses, second.responses):
        np.testing.assert_array_equal(y1, y2)
    assert truth_a.sigma_b == truth_b.sigma_b
    other, _ = generate(spec.for_replication(1))
    assert not np.array_equal(other.responses[0], first.responses[0])


def test_signal_to_noise_calibration():
    spec = ScenarioSpec(n=10, J=5, m=12, snr_b=0.5, snr_eps=4.0, seed=3)
    noiseless, truth_inf = generate(spec.model_copy(update={"snr_eps": float("inf")}))
    noisy, truth = generate(spec)
    fixed = _parts(noiseless, truth_inf)
    predictor = np.concatenate(noiseless.responses)
    random = predictor - fixed
    assert np.std(fixed) / np.std(random) == pytest.approx(0.5, rel=1e-10)
    assert np.std(predictor) / truth.sigma_eps == pytest.approx(4.0, rel=1e-10)
    assert truth.snr_b_realized == pytest.approx(0.5, rel=1e-10)
    assert truth.snr_eps_realized == pytest.approx(4.0, rel=1e-10)
    noise = np.concatenate(noisy.responses) - predictor
    assert np.std(noise) == pytest.approx(truth.sigma_eps, rel=0.15)


def test_infinite_snr_has_no_noise():
    raw, truth = generate(ScenarioSpec(n=3, J=2, snr_eps=float("inf"), seed=5))
    assert truth.sigma_eps == 0.0
    assert truth.snr_eps_realized == float("inf")
    fixed = _parts(raw, truth)
    random = np.concatenate([
        np.einsum("jr,rt->jt", Z_i, curves)
        for Z_i, curves in zip(raw.random_covariates, truth.random_curves(raw.grid))
    ])
    np.testing.assert_allclose(np.concatenate(raw.responses), fixed + random, atol=1e-10)


def test_random_functions_vanish_off_support():
    raw, truth = generate(ScenarioSpec(n=6, J=2, seed=9))
    curves = truth.random_curves(np.linspace(0, 1, 21))
    off_support = [r for r in range(truth.q) if r not in (0, 3)]
    assert np.all(curves[:, off_support, :] == 0.0)
    assert np.any(curves[:, 0, :] != 0.0) and np.any(curves[:, 3, :] != 0.0)
    assert truth.random_coefficients.shape == (6, 6)


def test_larger_study_extends_smaller_one():
    small, truth_small = generate(ScenarioSpec(n=4, J=3, seed=21))
    large, truth_large = generate(ScenarioSpec(n=8, J=3, seed=21))
    for i in range(4):
        np.testing.assert_array_equal(large.fixed_covariates[i], small.fixed_covariates[i])
    unit_small = truth_small.random_coefficients / truth_small.sigma_b
    unit_large = truth_large.random_coefficients[:4] / truth_large.sigma_b
    np.testing.assert_allclose(unit_large, unit_small, rtol=1e-12)


def test_substreams_are_independent_of_order():
    first = substream(1, 0, 2, 3, 0).standard_normal(3)
    substream(1, 0, 0, 0, 0).standard_normal(100)
    np.testing.assert_array_equal(substream(1, 0, 2, 3, 0).standard_normal(3), first)
    assert not np.array_equal(substream(1, 0, 2, 3, 1).standard_normal(3), first)


def test_ground_truth_round_trip():
    _, truth = generate(ScenarioSpec(n=3, J=2, seed=2))
    restored = GroundTruth.from_dict(truth.to_dict())
    np.testing.assert_array_equal(restored.random_coefficients, truth.random_coefficients)
    assert restored.sigma_b == truth.sigma_b


@pytest.mark.parametrize("kwargs", [{"n": 1}, {"scenario": "C"}, {"snr_b": 0.0}, {"seed": -1}])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ValidationError):
        ScenarioSpec(**kwargs)

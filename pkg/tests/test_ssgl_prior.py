import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate, stats
from scipy.special import gamma as gamma_fn
from scipy.special import gammaln

from conftest import make_raw
from fmselect.ecm import EcmConfig, initialize
from fmselect.exceptions import DomainError, ParameterError
from fmselect.model_core import build_model, random_effect_design
from fmselect.ssgl_prior import (
    SsglConfig,
    adaptive_weights,
    log_mixture,
    log_posterior,
    log_psi,
    slab_prob,
    slab_prob_fixed,
    slab_prob_random,
)


def test_log_psi_closed_form():
    v = np.array([0.3, -1.2, 0.5])
    lam = 2.5
    g = 3
    expected = (g * np.log(lam) - lam * np.linalg.norm(v) - g * np.log(2)
                - (g - 1) / 2 * np.log(np.pi) - gammaln((g + 1) / 2))
    assert log_psi(v, lam) == pytest.approx(expected, rel=1e-14)


def test_log_psi_scalar_is_laplace():
    assert log_psi(np.array([0.7]), 3.0) == pytest.approx(np.log(3.0 / 2.0) - 3.0 * 0.7)


def test_log_psi_rejects_bad_rate():
    with pytest.raises(ParameterError):
        log_psi(np.ones(2), 0.0)


def test_equal_rates_give_prior_mixing():
    v = np.array([1.0, 2.0])
    assert slab_prob(v, 0.3, 4.0, 4.0) == pytest.approx(0.3, abs=1e-14)


def test_slab_probability_at_origin():
    theta, spike, slab, d = 0.4, 20.0, 1.0, 5
    expected = theta * slab ** d / (theta * slab ** d + (1 - theta) * spike ** d)
    assert slab_prob(np.zeros(d), theta, spike, slab) == pytest.approx(expected, rel=1e-12)


def test_slab_probability_grows_with_norm():
    small = slab_prob(np.full(4, 0.01), 0.5, 30.0, 1.0)
    large = slab_prob(np.full(4, 2.0), 0.5, 30.0, 1.0)
    assert small < 0.5 < large
    assert large == pytest.approx(1.0, abs=1e-10)


def test_degenerate_mixing_proportions():
    assert slab_prob(np.ones(2), 0.0, 5.0, 1.0) == 0.0
    assert slab_prob(np.ones(2), 1.0, 5.0, 1.0) == 1.0
    with pytest.raises(ParameterError):
        slab_prob(np.ones(2), 1.5, 5.0, 1.0)


def test_fixed_and_random_wrappers_use_their_rates():
    cfg = SsglConfig(lambda0=40.0, nu0=8.0)
    v = np.array([0.1, 0.2])
    assert slab_prob_fixed(v, 0.5, cfg) == slab_prob(v, 0.5, 40.0, 1.0)
    assert slab_prob_random(v, 0.5, cfg) == slab_prob(v, 0.5, 8.0, 1.0)
    assert slab_prob_random(v, 0.5, cfg, spike=12.0) == slab_prob(v, 0.5, 12.0, 1.0)


def test_adaptive_weights_are_convex_combinations():
    weights = adaptive_weights(np.array([0.0, 1.0, 0.25]), 50.0, 2.0)
    np.testing.assert_allclose(weights, [50.0, 2.0, 0.75 * 50.0 + 0.25 * 2.0])
    per_group = adaptive_weights(np.array([0.0, 0.5]), np.array([10.0, 20.0]), 1.0)
    np.testing.assert_allclose(per_group, [10.0, 10.5])


def test_log_mixture_matches_direct_sum():
    v = np.array([0.2, 0.4])
    direct = np.log(0.7 * np.exp(log_psi(v, 10.0)) + 0.3 * np.exp(log_psi(v, 1.0)))
    assert log_mixture(v, 0.3, 10.0, 1.0) == pytest.approx(direct, rel=1e-12)


def test_random_spikes_scale_with_group_size():
    cfg = SsglConfig(nu0=20.0)
    np.testing.assert_allclose(cfg.random_spikes([15, 40]), 20.0 * np.sqrt([15, 40]))
    flat = cfg.model_copy(update={"scale_random_spike": False})
    np.testing.assert_array_equal(flat.random_spikes([15, 40]), [20.0, 20.0])


def test_resolved_fills_beta_hyperparameters():
    cfg = SsglConfig().resolved(p=8, q=6)
    assert (cfg.b0, cfg.b1) == (8.0, 6.0)
    assert SsglConfig(b0=3.0).resolved(8, 6).b0 == 3.0


def test_spike_below_slab_rejected():
    with pytest.raises(ValidationError):
        SsglConfig(lambda0=0.5, lambda1=1.0)
    with pytest.raises(ValidationError):
        SsglConfig(nu0=0.5)
    with pytest.raises(ValidationError):
        SsglConfig(unknown=1.0)


def test_log_posterior_domain_errors(small_model):
    phi = initialize(small_model, EcmConfig())
    assert np.isfinite(log_posterior(phi, small_model, SsglConfig()))
    for field, value in (("sigma2", 0.0), ("theta", 1.0), ("theta_star", 0.0)):
        broken = phi.copy()
        setattr(broken, field, value)
        with pytest.raises(DomainError):
            log_posterior(broken, small_model, SsglConfig())


def test_log_posterior_prefers_better_fit(small_model):
    phi = initialize(small_model, EcmConfig())
    worse = phi.copy()
    worse.gamma = phi.gamma + 5.0
    cfg = SsglConfig()
    assert log_posterior(phi, small_model, cfg) > log_posterior(worse, small_model, cfg)


@pytest.mark.parametrize("lam", [0.5, 3.0])
def test_laplace_density_integrates_to_one(lam):
    def density(v):
        return np.exp(log_psi(np.array([v]), lam))

    line = integrate.quad(density, -np.inf, 0.0)[0] + integrate.quad(density, 0.0, np.inf)[0]
    assert line == pytest.approx(1.0, abs=1e-6)

    # the bivariate density is radial, so integrate over rings of radius r
    def ring(r):
        return 2.0 * np.pi * r * np.exp(log_psi(np.array([r, 0.0]), lam))

    plane = integrate.quad(ring, 0.0, np.inf)[0]
    assert plane == pytest.approx(1.0, abs=1e-6)


def _laplace_density(v, lam):
    g = v.size
    norm_const = 2.0 ** g * np.pi ** ((g - 1) / 2.0) * gamma_fn((g + 1) / 2.0)
    return lam ** g * np.exp(-lam * np.linalg.norm(v)) / norm_const


def _log_posterior_by_terms(phi, data, cfg):
    """Sum every log-posterior term from explicit designs and scipy densities."""
    cfg = cfg.resolved(data.p, data.q)
    J = data.duplication
    total = 0.0
    for Y_i, X_i, Z_i, b_i in zip(data.Y, data.X, data.Z, phi.b):
        mean = X_i @ phi.gamma + random_effect_design(Z_i, b_i, J) @ phi.Ltilde
        total += stats.norm(loc=mean, scale=np.sqrt(phi.sigma2)).logpdf(Y_i).sum()
        total += stats.norm.logpdf(b_i).sum()
    for block in data.fixed_slices:
        v = phi.gamma[block]
        total += np.log((1 - phi.theta) * _laplace_density(v, cfg.lambda0)
                        + phi.theta * _laplace_density(v, cfg.lambda1))
    for block in data.random_slices:
        v = phi.Ltilde[block]
        spike = cfg.nu0 * np.sqrt(v.size)
        total += np.log((1 - phi.theta_star) * _laplace_density(v, spike)
                        + phi.theta_star * _laplace_density(v, cfg.nu1))
    total += stats.beta(cfg.a0, cfg.b0).logpdf(phi.theta)
    total += stats.beta(cfg.a1, cfg.b1).logpdf(phi.theta_star)
    total += stats.invgamma(cfg.c0 / 2.0, scale=cfg.d0 / 2.0).logpdf(phi.sigma2)
    return total


@pytest.fixture
def tiny_model():
    return build_model(make_raw(n=2, J=2, m=5, p=2, q=2, seed=3), fixed_dims=4, random_dims=4)


def test_log_posterior_matches_term_by_term_sum(tiny_model):
    rng = np.random.default_rng(7)
    cfg = SsglConfig(lambda0=6.0, nu0=4.0)
    base = initialize(tiny_model, EcmConfig())
    states = [base]
    for theta, theta_star in ((0.3, 0.7), (0.8, 0.2)):
        phi = base.copy()
        phi.gamma = base.gamma + 0.2 * rng.normal(size=base.gamma.size)
        phi.Ltilde = 0.3 * rng.normal(size=base.Ltilde.size)
        phi.b = rng.normal(size=base.b.shape)
        phi.theta, phi.theta_star = theta, theta_star
        phi.sigma2 = base.sigma2 * rng.uniform(0.5, 2.0)
        states.append(phi)

    reference = log_posterior(base, tiny_model, cfg)
    oracle_reference = _log_posterior_by_terms(base, tiny_model, cfg)
    for phi in states[1:]:
        difference = log_posterior(phi, tiny_model, cfg) - reference
        expected = _log_posterior_by_terms(phi, tiny_model, cfg) - oracle_reference
        assert difference == pytest.approx(expected, rel=1e-9, abs=1e-8)


def test_log_posterior_variance_terms_in_isolation(tiny_model):
    cfg = SsglConfig().resolved(tiny_model.p, tiny_model.q)
    phi = initialize(tiny_model, EcmConfig())
    assert np.all(phi.b == 0.0)
    rss = sum(float(np.sum((Y_i - X_i @ phi.gamma) ** 2)) for Y_i, X_i in zip(tiny_model.Y, tiny_model.X))
    wider = phi.copy()
    wider.sigma2 = 2.5 * phi.sigma2

    def variance_terms(sigma2):
        return (-0.5 * (tiny_model.N + cfg.c0 + 2.0) * np.log(sigma2)
                - (rss + cfg.d0) / (2.0 * sigma2))

    difference = log_posterior(wider, tiny_model, cfg) - log_posterior(phi, tiny_model, cfg)
    expected = variance_terms(wider.sigma2) - variance_terms(phi.sigma2)
    assert difference == pytest.approx(expected, rel=1e-10, abs=1e-10)

"""Desk-scale Monte Carlo checks. Run with ``pytest -m slow``; they take minutes."""

import numpy as np
import pytest

from fmselect.ecm import EcmConfig, run_ecm
from fmselect.group_lasso import GroupLassoProblem, solve
from fmselect.metrics import monte_carlo_study
from fmselect.model_core import build_model
from fmselect.simulation import ScenarioSpec, generate
from fmselect.tuning import TuningGrid

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def scenario_a():
    spec = ScenarioSpec(scenario="A", n=25, J=10, m=10, seed=2024)
    return monte_carlo_study(spec, 20, TuningGrid(), EcmConfig(), workers=None)


def test_scenario_a_selection(scenario_a):
    rates = scenario_a.rates
    assert rates.failed == 0
    assert rates.tpf >= 0.80
    assert rates.fpf <= 0.05
    assert rates.tpr >= 0.95
    assert rates.fpr <= 0.05


def test_scenario_a_mise(scenario_a):
    mise = scenario_a.mise.mise
    for k in (1, 2, 4):
        assert mise[k] <= 0.20
    assert mise[3] <= 6.0
    assert mise[3] > mise[1]


def test_scenario_b_selection():
    spec = ScenarioSpec(scenario="B", n=25, J=10, m=10, seed=2024)
    rates = monte_carlo_study(spec, 20, TuningGrid(), EcmConfig(), workers=None).rates
    assert rates.tpf >= 0.85
    assert rates.fpf <= 0.05
    assert rates.tpr >= 0.95
    assert rates.fpr <= 0.05


def test_mise_shrinks_with_more_clusters(scenario_a):
    spec = ScenarioSpec(scenario="A", n=50, J=10, m=10, seed=2024)
    larger = monte_carlo_study(spec, 20, TuningGrid(), EcmConfig(), workers=None)
    assert larger.mise.mise[1] < scenario_a.mise.mise[1]


@pytest.mark.parametrize("seed", range(50))
def test_log_posterior_never_decreases(seed):
    raw, _ = generate(ScenarioSpec(n=10, J=5, m=10, seed=seed))
    fit = run_ecm(build_model(raw), EcmConfig(max_iter=200))
    assert fit.ascent_violations == 0


def test_group_lasso_kkt_on_random_problems():
    rng = np.random.default_rng(99)
    for _ in range(100):
        sizes = list(rng.integers(1, 4, size=rng.integers(1, 5)))
        P = int(sum(sizes))
        M = int(rng.integers(P + 1, 61))
        A = rng.normal(size=(M, P))
        y = rng.normal(size=M)
        weights = rng.uniform(0.0, 2.0 * np.sqrt(M), size=len(sizes))
        problem = GroupLassoProblem(groups=sizes, weights=weights, design=A, response=y)
        solution = solve(problem, tol=1e-12, max_iter=10000)
        assert solution.kkt_residual <= 1e-6

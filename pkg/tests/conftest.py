import numpy as np
import pytest

from bgmm_policy.bgmm import BgmmPosterior, Dataset, FitConfig, WeightPrior, default_prior, vb_fit
from bgmm_policy.distributions import BlockSplit, NormalWishartParams
from bgmm_policy.simlab.scenarios import generate_demos


def random_spd(rng, d, floor=0.3):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + floor * np.eye(d)


def gaussian_model(mu, cov, split=BlockSplit.first(2, 2), big=1e8):
    """One-component posterior whose predictive is ``t(mu, cov, big)``, the Gaussian limit."""
    d = len(mu)
    T = cov * big * big / (big + 1)
    comp = NormalWishartParams(np.asarray(mu, dtype=float), big, big + d - 1, T)
    return BgmmPosterior((comp,), np.ones(1), comp, WeightPrior.dirichlet(1.0, 1), split)


def fit_scenario(name, n_demos, seed=0, T_scale=1.0, noise_std=0.05):
    demos = generate_demos(name, n_demos, seed, noise_std)
    Z = demos.joint()
    data = Dataset(Z, BlockSplit.first(2, 2))
    post = vb_fit(data, default_prior(Z, T_scale=T_scale), WeightPrior.dirichlet_process(1.0, 20), FitConfig(seed=seed))
    return demos, post


@pytest.fixture(scope="session")
def s_curve():
    return fit_scenario("s_curve", 8)


@pytest.fixture(scope="session")
def obstacle():
    return fit_scenario("obstacle_bimodal", 16)


@pytest.fixture(scope="session")
def endpoint_reach():
    return fit_scenario("endpoint_reach", 8)


@pytest.fixture(scope="session")
def limit_cycle():
    return fit_scenario("limit_cycle", 8)


ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    """One line per acceptance criterion, echoed in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

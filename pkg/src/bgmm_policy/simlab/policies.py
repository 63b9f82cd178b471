"""Policies over the fitted model, in the forms the rollout engine accepts."""

import numpy as np

from ..bgmm import BgmmPosterior, posterior_predictive_mixture
from ..distributions import MvnDist
from ..regression import MixtureRegressor, mixture_to_mvn_mixture, moment_match_mixture

GLOBAL = "global"
PER_COMPONENT = "per_component"
CONDITIONAL = "conditional"


def regressor_for(model: BgmmPosterior, include_prior=None, dof=None) -> MixtureRegressor:
    """Conditioning engine for a fitted model.

    ``include_prior`` defaults to the weight prior's semantics (on for a
    Dirichlet process). ``dof`` overrides every component's dof, e.g. 1e8 for
    the non-Bayesian Gaussian limit.
    """
    if include_prior is None:
        include_prior = model.weight_prior.is_dp
    mix = posterior_predictive_mixture(model, include_prior_component=include_prior)
    if dof is not None:
        mix = mix.with_dof(dof)
    return MixtureRegressor(mix, model.split)


class ImitationPolicy:
    """``p(u | x)`` from the model.

    ``form`` selects the output: ``global`` returns the moment-matched MVN,
    ``per_component`` a mixture of moment-matched MVNs, ``conditional`` the
    raw conditional t-mixture (for sampling).
    """

    def __init__(self, model_or_regressor, form=GLOBAL, **kwargs):
        if isinstance(model_or_regressor, MixtureRegressor):
            self.regressor = model_or_regressor
        else:
            self.regressor = regressor_for(model_or_regressor, **kwargs)
        if form not in (GLOBAL, PER_COMPONENT, CONDITIONAL):
            raise ValueError(f"unknown policy form {form!r}")
        self.form = form

    def __call__(self, x, t=0):
        cm = self.regressor.condition(np.asarray(x, dtype=float))
        if self.form == CONDITIONAL:
            return cm
        if self.form == PER_COMPONENT:
            return mixture_to_mvn_mixture(cm)
        s = moment_match_mixture(cm)
        return MvnDist(s.mean, s.cov)


class ZeroPolicy:
    def __init__(self, dim, var=1.0):
        self.dist = MvnDist(np.zeros(dim), var * np.eye(dim))

    def __call__(self, x, t=0):
        return self.dist


class ScriptedGoalPolicy:
    """Straight line to a goal at bounded speed; an oracle for free space."""

    def __init__(self, goal, gain=2.0, var=1e-4):
        self.goal = np.asarray(goal, dtype=float)
        self.gain = gain
        self.cov = var * np.eye(len(self.goal))

    def __call__(self, x, t=0):
        return MvnDist(self.gain * (self.goal - np.asarray(x, dtype=float)), self.cov)

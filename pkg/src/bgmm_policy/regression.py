"""Conditioning a mixture of t-distributions on an input query.

:class:`MixtureRegressor` factorizes every component's input block once; each
query then costs only batched triangular products, which keeps a single
conditional well under a millisecond for tens of components.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from ._linalg import safe_cholesky, symmetrize
from .distributions import LOG_2PI, BlockSplit, MvnDist, MvtDist, MvtMixture, mvt_log_normalizer
from .errors import ConditioningError, DimensionError, MomentUndefinedError, SingularMatrixError
from .fusion import MixtureOfMvn

DOF_GUARD = 2.0 + 1e-6


class FarQueryWarning(RuntimeWarning):
    """Every component's input marginal underflowed; prior weights were returned."""


@dataclass(frozen=True)
class ConditionalMixture:
    """``p(u | x)`` as a mixture of t-distributions over the output block."""

    weights: np.ndarray
    locs: np.ndarray
    scales: np.ndarray
    dofs: np.ndarray
    query: np.ndarray
    far_query: bool = False

    @property
    def components(self):
        return [MvtDist(m, s, v) for m, s, v in zip(self.locs, self.scales, self.dofs)]

    @property
    def dim(self):
        return self.locs.shape[1]

    def __len__(self):
        return self.locs.shape[0]

    def logpdf(self, u):
        return MvtMixture(self.weights, tuple(self.components)).logpdf(u)


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray
    entropy_proxy: float

    @classmethod
    def from_mvn(cls, mvn: MvnDist):
        return cls(mvn.mean, mvn.cov, mvn.entropy())

    def to_mvn(self):
        return MvnDist(self.mean, self.cov)


class MixtureScorer:
    """Posterior component probabilities of a t-mixture at a point of its full space."""

    def __init__(self, mix: MvtMixture):
        self.mix = mix
        d = mix.dim
        K = len(mix)
        self.loc = np.stack([c.loc for c in mix.components])
        self.linv = np.empty((K, d, d))
        self.log_norm = np.empty(K)
        self.dof = np.array([c.dof for c in mix.components])
        for k, comp in enumerate(mix.components):
            chol = safe_cholesky(comp.scale)
            self.linv[k] = solve_triangular(chol, np.eye(d), lower=True)
            self.log_norm[k] = mvt_log_normalizer(comp.dof, d, chol)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(mix.weights)

    def log_joint(self, x):
        """``log pi_k + log t_k(x)`` for every component."""
        diff = np.asarray(x, dtype=float) - self.loc
        w = np.einsum("kij,kj->ki", self.linv, diff)
        maha = np.sum(w * w, axis=1)
        return self.log_weights + self.log_norm - 0.5 * (self.dof + self.mix.dim) * np.log1p(maha / self.dof)

    def logpdf(self, x):
        return float(logsumexp(self.log_joint(x)))

    def responsibilities(self, x):
        logp = self.log_joint(x)
        return np.exp(logp - logsumexp(logp))


class MixtureRegressor:
    """Precomputed conditioning of a joint t-mixture on its input block."""

    def __init__(self, mix: MvtMixture, split: BlockSplit):
        if split.dim != mix.dim:
            raise DimensionError(f"split covers {split.dim} dims, mixture has {mix.dim}")
        self.split = split
        self.mix = mix
        i, o = list(split.in_idx), list(split.out_idx)
        d_in = split.d_in
        K = len(mix)
        self.mu_in = np.empty((K, d_in))
        self.mu_out = np.empty((K, split.d_out))
        self.linv = np.empty((K, d_in, d_in))
        self.gain = np.empty((K, split.d_out, d_in))
        self.schur = np.empty((K, split.d_out, split.d_out))
        self.dof = np.empty(K)
        self.log_norm = np.empty(K)
        for k, comp in enumerate(mix.components):
            s = comp.scale
            try:
                chol = safe_cholesky(s[np.ix_(i, i)])
            except SingularMatrixError as exc:
                raise ConditioningError(f"input block is singular in component {k}", k) from exc
            s_oi = s[np.ix_(o, i)]
            gain = cho_solve((chol, True), s_oi.T).T
            self.mu_in[k] = comp.loc[i]
            self.mu_out[k] = comp.loc[o]
            self.linv[k] = solve_triangular(chol, np.eye(d_in), lower=True)
            self.gain[k] = gain
            self.schur[k] = symmetrize(s[np.ix_(o, o)] - gain @ s_oi.T)
            self.dof[k] = comp.dof
            self.log_norm[k] = mvt_log_normalizer(comp.dof, d_in, chol)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(mix.weights)

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.split.d_in,):
            raise DimensionError(f"query has shape {x.shape}, expected ({self.split.d_in},)")
        diff = x - self.mu_in
        w = np.einsum("kij,kj->ki", self.linv, diff)
        with np.errstate(over="ignore"):
            # an infinite distance is handled by the far-query fallback
            maha = np.sum(w * w, axis=1)
        return x, diff, maha

    def _weights(self, maha):
        d_in = self.split.d_in
        logp = self.log_weights + self.log_norm - 0.5 * (self.dof + d_in) * np.log1p(maha / self.dof)
        top = np.max(logp)
        if not np.isfinite(top):
            warnings.warn("query is too far from every component; using prior weights", FarQueryWarning)
            return np.asarray(self.mix.weights, dtype=float), True
        return np.exp(logp - logsumexp(logp)), False

    def responsibilities(self, x):
        _, _, maha = self._prepare(x)
        return self._weights(maha)[0]

    def condition(self, x) -> ConditionalMixture:
        x, diff, maha = self._prepare(x)
        weights, far = self._weights(maha)
        d_in = self.split.d_in
        locs = self.mu_out + np.einsum("koi,ki->ko", self.gain, diff)
        factor = (self.dof + maha) / (self.dof + d_in)
        scales = factor[:, None, None] * self.schur
        return ConditionalMixture(weights, locs, scales, self.dof + d_in, x, far)

    def summary(self, x) -> MomentSummary:
        return moment_match_mixture(self.condition(x))


def component_responsibilities(mix: MvtMixture, split: BlockSplit, x) -> np.ndarray:
    return MixtureRegressor(mix, split).responsibilities(x)


def condition(mix: MvtMixture, split: BlockSplit, x) -> ConditionalMixture:
    return MixtureRegressor(mix, split).condition(x)


def _matched_covs(scales, dofs):
    bad = np.flatnonzero(dofs <= DOF_GUARD)
    if bad.size:
        raise MomentUndefinedError(
            f"covariance undefined for dof <= 2 in components {bad.tolist()}", bad.tolist()
        )
    return scales * (dofs / (dofs - 2.0))[:, None, None]


def moment_match_component(t: MvtDist) -> MvnDist:
    if t.dof <= DOF_GUARD:
        raise MomentUndefinedError(f"covariance undefined for dof {t.dof} <= 2")
    return MvnDist(t.loc, t.scale * (t.dof / (t.dof - 2.0)))


def moment_match_mixture(cm: ConditionalMixture) -> MomentSummary:
    covs = _matched_covs(cm.scales, cm.dofs)
    mean = cm.weights @ cm.locs
    dev = cm.locs - mean
    cov = symmetrize(np.einsum("k,kij->ij", cm.weights, covs) + (dev * cm.weights[:, None]).T @ dev)
    _, logdet = np.linalg.slogdet(cov)
    entropy = 0.5 * (cov.shape[0] * (1.0 + LOG_2PI) + logdet)
    return MomentSummary(mean, cov, float(entropy))


def mixture_to_mvn_mixture(cm: ConditionalMixture) -> MixtureOfMvn:
    return MixtureOfMvn(cm.weights, cm.locs, _matched_covs(cm.scales, cm.dofs))


def sample_conditional(cm: ConditionalMixture, n: int, seed: int) -> np.ndarray:
    """Draws from the conditional mixture: categorical component, then t sample."""
    rng = np.random.default_rng(seed)
    ks = rng.choice(len(cm), size=n, p=cm.weights)
    z = rng.standard_normal((n, cm.dim))
    out = np.empty((n, cm.dim))
    for k in np.unique(ks):
        sel = ks == k
        chol = safe_cholesky(cm.scales[k])
        w = rng.chisquare(cm.dofs[k], size=int(sel.sum())) / cm.dofs[k]
        out[sel] = cm.locs[k] + (z[sel] @ chol.T) / np.sqrt(w)[:, None]
    return out

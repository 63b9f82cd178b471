"""Products of Gaussian experts: MVN x MVN, mixture x MVN and mixture x mixture.

Mixture products keep exact weights: the weight of a product component is
proportional to the prior weights times the Gaussian product normalizer, so the
fused mixture is proportional to the pointwise product of the input densities.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from ._linalg import safe_cholesky, symmetrize
from .distributions import LOG_2PI, MvnDist
from .errors import DimensionError, SingularMatrixError


@dataclass(frozen=True)
class MixtureOfMvn:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        means = np.array(self.means, dtype=float)
        covs = np.array(self.covs, dtype=float)
        if means.ndim != 2 or covs.shape != means.shape + (means.shape[1],) or w.shape != means.shape[:1]:
            raise DimensionError(
                f"inconsistent shapes: weights {w.shape}, means {means.shape}, covs {covs.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        try:
            np.linalg.cholesky(covs)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("a mixture covariance is not positive definite") from exc
        for a in (w, means, covs):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @classmethod
    def _trusted(cls, weights, means, covs):
        """Skips validation; for products whose inputs were already validated."""
        obj = object.__new__(cls)
        for name, a in (("weights", weights), ("means", means), ("covs", covs)):
            a.setflags(write=False)
            object.__setattr__(obj, name, a)
        return obj

    @classmethod
    def from_components(cls, weights, components: Sequence[MvnDist]):
        return cls(
            weights,
            np.stack([c.mean for c in components]),
            np.stack([c.cov for c in components]),
        )

    @property
    def components(self):
        return [MvnDist(m, c) for m, c in zip(self.means, self.covs)]

    @property
    def dim(self):
        return self.means.shape[1]

    def __len__(self):
        return self.means.shape[0]

    def logpdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        chol = np.linalg.cholesky(self.covs)
        diff = x[:, None, :] - self.means[None]
        y = np.linalg.solve(chol[None], diff[..., None])[..., 0]
        maha = np.sum(y * y, axis=-1)
        logdet = 2 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        out = logsumexp(logw - 0.5 * (self.dim * LOG_2PI + logdet + maha), axis=1)
        return out if out.size > 1 else float(out[0])

    def moment_match(self) -> MvnDist:
        mean = self.weights @ self.means
        dev = self.means - mean
        cov = np.einsum("k,kij->ij", self.weights, self.covs) + (dev * self.weights[:, None]).T @ dev
        return MvnDist(mean, symmetrize(cov))

    def top(self, m):
        """Keep the ``m`` heaviest components, renormalized."""
        if m is None or m >= len(self):
            return self
        idx = np.argsort(-self.weights, kind="stable")[:m]
        w = self.weights[idx]
        return MixtureOfMvn(w / w.sum(), self.means[idx], self.covs[idx])


def _batched_gauss_product(mu_a, cov_a, mu_b, cov_b):
    """Pairwise products of aligned stacks; returns means, covs, log normalizers.

    With ``S = cov_a + cov_b`` the product covariance is ``cov_a S⁻¹ cov_b``,
    which avoids the cancellation in ``cov_a - cov_a S⁻¹ cov_a``.
    """
    s = cov_a + cov_b
    cov_b = np.broadcast_to(cov_b, s.shape)
    chol = np.linalg.cholesky(s)
    diff = mu_b - mu_a
    d = mu_a.shape[-1]
    sol = np.linalg.solve(s, np.concatenate([cov_b, diff[..., None]], axis=-1))
    cov = cov_a @ sol[..., :d]
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    mean = mu_a + (cov_a @ sol[..., d:])[..., 0]
    maha = np.sum(diff * sol[..., d], axis=-1)
    logdet = 2 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    log_norm = -0.5 * (d * LOG_2PI + logdet + maha)
    return mean, cov, log_norm


def fuse_mvn(policies: Sequence[MvnDist]) -> MvnDist:
    """Precision-weighted average of Gaussian experts."""
    if not policies:
        raise ValueError("need at least one expert")
    if len(policies) == 1:
        return policies[0]
    d = policies[0].dim
    if any(p.dim != d for p in policies):
        raise DimensionError("experts differ in dimension")
    lam = np.zeros((d, d))
    eta = np.zeros(d)
    for p in policies:
        prec = p.precision
        lam += prec
        eta += prec @ p.mean
    lam = symmetrize(lam)
    chol = safe_cholesky(lam)
    cov = symmetrize(np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(d))))
    return MvnDist(cov @ eta, cov)


def _renormalize(logw):
    w = np.exp(logw - np.max(logw))
    return w / w.sum()


def fuse_mixture_mvn(mix: MixtureOfMvn, expert: MvnDist) -> MixtureOfMvn:
    if mix.dim != expert.dim:
        raise DimensionError("mixture and expert differ in dimension")
    mean, cov, log_norm = _batched_gauss_product(mix.means, mix.covs, expert.mean[None], expert.cov[None])
    with np.errstate(divide="ignore"):
        logw = np.log(mix.weights) + log_norm
    return MixtureOfMvn._trusted(_renormalize(logw), mean, cov)


def fuse_mixture_mixture(a: MixtureOfMvn, b: MixtureOfMvn, top_m: Optional[int] = None) -> MixtureOfMvn:
    """All ``len(a) * len(b)`` pairwise products, ``a``-major order."""
    if a.dim != b.dim:
        raise DimensionError("mixtures differ in dimension")
    ka, kb, d = len(a), len(b), a.dim
    def rep_a(x):
        return np.repeat(x, kb, axis=0)

    def tile_b(x):
        return np.tile(x, (ka,) + (1,) * (x.ndim - 1))

    mean, cov, log_norm = _batched_gauss_product(
        rep_a(a.means), rep_a(a.covs), tile_b(b.means), tile_b(b.covs)
    )
    with np.errstate(divide="ignore"):
        logw = np.log(np.outer(a.weights, b.weights)).ravel() + log_norm
    return MixtureOfMvn._trusted(
        _renormalize(logw), mean.reshape(ka * kb, d), cov.reshape(ka * kb, d, d)
    ).top(top_m)


def heuristic_expert_precision(imitation_at_mean: MvnDist, c: float = 10.0) -> np.ndarray:
    """Precision for a deterministic OC expert: ``c`` times the imitation precision."""
    return c * imitation_at_mean.precision


class GaussianPolicy(Protocol):
    """State (and optional time step) to a distribution over controls."""

    def __call__(self, x: np.ndarray, t: int = 0):
        ...


class FixedPrecisionPolicy:
    """Wraps a deterministic controller ``u = f(x, t)`` with a fixed precision."""

    def __init__(self, controller: Callable, precision):
        self.controller = controller
        self.cov = symmetrize(np.linalg.inv(np.asarray(precision, dtype=float)))

    def __call__(self, x, t=0):
        return MvnDist(self.controller(x, t), self.cov)


class ProductPolicy:
    """Product of expert policies.

    Experts returning an ``MvnDist`` are fused by precision weighting. If any
    expert returns a ``MixtureOfMvn`` the product is a mixture too.
    """

    def __init__(self, experts: Sequence[GaussianPolicy]):
        if not experts:
            raise ValueError("need at least one expert")
        self.experts = list(experts)

    def __call__(self, x, t=0):
        outs = [e(x, t) for e in self.experts]
        mixtures = [o for o in outs if isinstance(o, MixtureOfMvn)]
        gaussians = [o for o in outs if isinstance(o, MvnDist)]
        if len(mixtures) + len(gaussians) != len(outs):
            raise TypeError("experts must return MvnDist or MixtureOfMvn")
        if not mixtures:
            return fuse_mvn(gaussians)
        result = mixtures[0]
        for m in mixtures[1:]:
            result = fuse_mixture_mixture(result, m)
        if gaussians:
            result = fuse_mixture_mvn(result, fuse_mvn(gaussians))
        return result

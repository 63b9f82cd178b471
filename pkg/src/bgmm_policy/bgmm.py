"""Bayesian Gaussian mixture fitting with normal-Wishart components.

Fitting is mean-field coordinate ascent: responsibilities from expected
log-weights, expected log-determinants and expected Mahalanobis terms; the
component step is the conjugate normal-Wishart update with
responsibility-weighted statistics; the weight step is a Dirichlet posterior
or, for the truncated Dirichlet process, independent Beta posteriors over the
stick proportions.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, multigammaln

from ._linalg import chol_logdet, safe_cholesky
from .distributions import BlockSplit, MvtDist, MvtMixture, NormalWishartParams
from .errors import FitError, InvalidPriorError

log = logging.getLogger(__name__)

MODEL_VERSION = 1

DIRICHLET_DISTRIBUTION = "dirichlet_distribution"
DIRICHLET_PROCESS = "dirichlet_process"


@dataclass(frozen=True)
class Dataset:
    """Joint observations ``z = [x; u]`` stacked as rows of ``Z``."""

    Z: np.ndarray
    split: BlockSplit

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        if Z.ndim != 2:
            raise ValueError(f"Z must be a matrix, got shape {Z.shape}")
        if Z.shape[1] != self.split.dim:
            raise ValueError(f"Z has {Z.shape[1]} columns, split expects {self.split.dim}")
        if not np.all(np.isfinite(Z)):
            raise ValueError("Z contains non-finite entries")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self):
        return self.Z.shape[0]


@dataclass(frozen=True)
class WeightPrior:
    kind: str
    alpha: float
    n_components: int

    def __post_init__(self):
        if self.kind not in (DIRICHLET_DISTRIBUTION, DIRICHLET_PROCESS):
            raise ValueError(f"unknown weight prior kind {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.n_components) < 1:
            raise ValueError("need at least one component")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "n_components", int(self.n_components))

    @classmethod
    def dirichlet(cls, alpha, K):
        return cls(DIRICHLET_DISTRIBUTION, alpha, K)

    @classmethod
    def dirichlet_process(cls, alpha, truncation):
        return cls(DIRICHLET_PROCESS, alpha, truncation)

    @property
    def is_dp(self):
        return self.kind == DIRICHLET_PROCESS


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 300
    elbo_tol: float = 1e-6
    n_init: int = 2
    seed: int = 0
    weight_floor: float = 1e-3

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.elbo_tol > 0:
            raise ValueError("elbo_tol must be positive")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


@dataclass(frozen=True)
class BgmmPosterior:
    """Fitted mixture.

    ``weights`` are the posterior-expected mixing weights of the kept
    components, renormalized. ``prior_weight`` is the expected stick mass not
    claimed by any kept component (zero for a Dirichlet-distribution prior);
    it is carried by the prior predictive at prediction time.
    """

    components: tuple
    weights: np.ndarray
    prior: NormalWishartParams
    weight_prior: WeightPrior
    split: BlockSplit
    elbo_trace: tuple = ()
    prior_weight: float = 0.0
    n_iter: int = field(default=0, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(self.components),):
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the simplex")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "elbo_trace", tuple(float(v) for v in self.elbo_trace))

    @property
    def n_components(self):
        return len(self.components)


def _weighted_stats(Z, resp):
    n = float(resp.sum())
    if n <= 0:
        return 0.0, np.zeros(Z.shape[1]), np.zeros((Z.shape[1], Z.shape[1]))
    zbar = resp @ Z / n
    diff = Z - zbar
    S = (diff * resp[:, None]).T @ diff
    return n, zbar, S


def _nw_from_stats(prior, n, zbar, S):
    if n <= 0:
        return prior
    kappa_n = prior.kappa + n
    mu_n = (prior.kappa * prior.mu0 + n * zbar) / kappa_n
    dev = prior.mu0 - zbar
    T_n = prior.T + S + (prior.kappa * n / kappa_n) * np.outer(dev, dev)
    return NormalWishartParams(mu_n, kappa_n, prior.nu + n, T_n)


def nw_posterior_update(prior: NormalWishartParams, data, resp=None) -> NormalWishartParams:
    """Conjugate normal-Wishart update; ``resp`` weights the observations."""
    Z = data.Z if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    if Z.size == 0:
        return prior
    if resp is None:
        resp = np.ones(Z.shape[0])
    resp = np.asarray(resp, dtype=float)
    if resp.shape != (Z.shape[0],) or np.any(resp < 0) or np.any(resp > 1):
        raise ValueError("responsibilities must be a vector of values in [0, 1]")
    return _nw_from_stats(prior, *_weighted_stats(Z, resp))


def nw_posterior_predictive(p: NormalWishartParams) -> MvtDist:
    d = p.dim
    dof = p.nu - d + 1
    if not dof > 0:
        raise InvalidPriorError(f"predictive dof nu - d + 1 = {dof} is not positive")
    scale = p.T * (p.kappa + 1) / (p.kappa * dof)
    return MvtDist(p.mu0, scale, dof)


def default_prior(Z, T_scale=1.0, kappa=1.0, nu=None, mu0=None) -> NormalWishartParams:
    """Unit-free prior: data mean, ``T = nu * diag(var) * T_scale``, ``nu = d + 2``."""
    Z = np.asarray(Z, dtype=float)
    d = Z.shape[1]
    nu = d + 2.0 if nu is None else float(nu)
    mu0 = Z.mean(axis=0) if mu0 is None else np.asarray(mu0, dtype=float)
    var = Z.var(axis=0)
    if np.any(var <= 0):
        raise FitError(
            "degenerate data: zero variance in dims "
            f"{np.flatnonzero(var <= 0).tolist()}; the default prior scale would be singular"
        )
    return NormalWishartParams(mu0, kappa, nu, nu * np.diag(var) * T_scale)


class _Components:
    """Stacked normal-Wishart posteriors, (K, ...) arrays, for the VB loop."""

    def __init__(self, mu, kappa, nu, T):
        self.mu, self.kappa, self.nu, self.T = mu, kappa, nu, T
        d = mu.shape[1]
        try:
            chol = np.linalg.cholesky(T)
        except np.linalg.LinAlgError as exc:
            raise FitError("a component scale matrix became singular") from exc
        eye = np.broadcast_to(np.eye(d), T.shape)
        linv = np.linalg.solve(chol, eye)
        self.Tinv = np.swapaxes(linv, 1, 2) @ linv
        self.logdet_T = 2 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        i = np.arange(1, d + 1)
        self.elogdet_lam = (
            np.sum(digamma((nu[:, None] + 1 - i) / 2), axis=1) + d * np.log(2.0) - self.logdet_T
        )

    def maha(self, Z):
        """``(z - mu_k)ᵀ T_k⁻¹ (z - mu_k)`` for every row and component, (n, K)."""
        diff = Z[None, :, :] - self.mu[:, None, :]
        return np.sum((diff @ self.Tinv) * diff, axis=2).T

    def params(self, k):
        return NormalWishartParams(self.mu[k], self.kappa[k], self.nu[k], self.T[k])


def _log_wishart_norm(logdet_T, nu, d):
    """log B for a Wishart parameterized by the inverse scale ``T``."""
    return 0.5 * nu * logdet_T - 0.5 * nu * d * np.log(2.0) - multigammaln(0.5 * nu, d)


class _WeightPosterior:
    def __init__(self, wp: WeightPrior, Nk):
        self.wp = wp
        a = wp.alpha
        if wp.is_dp:
            tail = np.concatenate([np.cumsum(Nk[::-1])[::-1][1:], [0.0]])
            self.g1 = 1.0 + Nk
            self.g2 = a + tail
            dsum = digamma(self.g1 + self.g2)
            elog_v = digamma(self.g1) - dsum
            elog_1mv = digamma(self.g2) - dsum
            self.elog_pi = elog_v + np.concatenate([[0.0], np.cumsum(elog_1mv)[:-1]])
            self._elog_1mv = elog_1mv
            ev = self.g1 / (self.g1 + self.g2)
            stick = np.concatenate([[1.0], np.cumprod(1.0 - ev)])
            self.expected = ev * stick[:-1]
            self.leftover = float(stick[-1])
        else:
            self.alphas = a + Nk
            self.elog_pi = digamma(self.alphas) - digamma(self.alphas.sum())
            self.expected = self.alphas / self.alphas.sum()
            self.leftover = 0.0

    def kl_term(self):
        """``E[ln p(weights)] - E[ln q(weights)]``."""
        a = self.wp.alpha
        K = len(self.elog_pi)
        if self.wp.is_dp:
            log_p = K * (gammaln(1.0 + a) - gammaln(a)) + (a - 1.0) * np.sum(self._elog_1mv)
            log_q = np.sum(
                gammaln(self.g1 + self.g2)
                - gammaln(self.g1)
                - gammaln(self.g2)
                + (self.g1 - 1.0) * (self.elog_pi - np.concatenate([[0.0], np.cumsum(self._elog_1mv)[:-1]]))
                + (self.g2 - 1.0) * self._elog_1mv
            )
            return float(log_p - log_q)
        log_p = gammaln(K * a) - K * gammaln(a) + (a - 1.0) * np.sum(self.elog_pi)
        log_q = gammaln(self.alphas.sum()) - np.sum(gammaln(self.alphas)) + np.sum(
            (self.alphas - 1.0) * self.elog_pi
        )
        return float(log_p - log_q)


def _stacked_stats(Z, resp):
    Nk = resp.sum(axis=0)
    safe = np.where(Nk > 0, Nk, 1.0)
    zbar = (resp.T @ Z) / safe[:, None]
    diff = Z[None, :, :] - zbar[:, None, :]
    S = np.swapaxes(diff * resp.T[:, :, None], 1, 2) @ diff
    return Nk, zbar, S


def _m_step(Z, resp, prior, wp):
    Nk, zbar, S = _stacked_stats(Z, resp)
    kappa = prior.kappa + Nk
    mu = (prior.kappa * prior.mu0 + Nk[:, None] * zbar) / kappa[:, None]
    dev = prior.mu0 - zbar
    T = prior.T + S + (prior.kappa * Nk / kappa)[:, None, None] * (dev[:, :, None] * dev[:, None, :])
    T = 0.5 * (T + np.swapaxes(T, 1, 2))
    comps = _Components(mu, kappa, prior.nu + Nk, T)
    return comps, _WeightPosterior(wp, Nk), (Nk, zbar, S)


def _log_rho(Z, comps, weights):
    d = Z.shape[1]
    e_maha = d / comps.kappa + comps.nu * comps.maha(Z)
    return weights.elog_pi + 0.5 * comps.elogdet_lam - 0.5 * d * np.log(2 * np.pi) - 0.5 * e_maha


def _elbo(Z, resp, comps, weights, stats, prior):
    d = Z.shape[1]
    Nk, zbar, S = stats
    kap, nu, el, Tinv = comps.kappa, comps.nu, comps.elogdet_lam, comps.Tinv
    ln2pi = np.log(2 * np.pi)

    def quad(v):
        return np.einsum("ki,kij,kj->k", v, Tinv, v)

    # expected log-likelihood (empty components contribute nothing)
    tr_S = np.einsum("kij,kji->k", Tinv, S)
    loglik = 0.5 * (Nk * (el - d / kap - d * ln2pi) - nu * tr_S - nu * Nk * quad(zbar - comps.mu))
    # expected log prior over (mean, precision)
    lnB0 = _log_wishart_norm(chol_logdet(safe_cholesky(prior.T)), prior.nu, d)
    m0 = comps.mu - prior.mu0
    log_prior = 0.5 * (
        d * np.log(prior.kappa / (2 * np.pi)) + el - d * prior.kappa / kap - prior.kappa * nu * quad(m0)
    )
    log_prior += lnB0 + 0.5 * (prior.nu - d - 1) * el - 0.5 * nu * np.einsum("kij,ji->k", Tinv, prior.T)
    # expected log q(mean, precision)
    lnBk = _log_wishart_norm(comps.logdet_T, nu, d)
    entropy_w = -lnBk - 0.5 * (nu - d - 1) * el + 0.5 * nu * d
    log_q = 0.5 * el + 0.5 * d * np.log(kap / (2 * np.pi)) - 0.5 * d - entropy_w
    total = float(np.sum(np.where(Nk > 0, loglik, 0.0)) + np.sum(log_prior) - np.sum(log_q))
    total += float(Nk @ weights.elog_pi) + weights.kl_term()
    with np.errstate(divide="ignore", invalid="ignore"):
        rlogr = np.where(resp > 0, resp * np.log(resp), 0.0)
    return total - float(rlogr.sum())


def _kmeanspp_resp(Z, K, rng):
    """Hard responsibilities from k-means++ seeds on standardized, canonically ordered data."""
    n = Z.shape[0]
    std = Z.std(axis=0)
    std[std == 0] = 1.0
    X = (Z - Z.mean(axis=0)) / std
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    n_centers = min(K, n)
    centers = [Xs[rng.integers(n)]]
    d2 = np.sum((Xs - centers[0]) ** 2, axis=1)
    for _ in range(1, n_centers):
        total = d2.sum()
        if total <= 0:
            break
        idx = rng.choice(n, p=d2 / total)
        centers.append(Xs[idx])
        d2 = np.minimum(d2, np.sum((Xs - Xs[idx]) ** 2, axis=1))
    C = np.stack(centers)
    dist = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin(dist, axis=1)] = 1.0
    return resp


def _run_vb(Z, prior, wp, cfg, rng):
    K = wp.n_components
    resp = np.ones((Z.shape[0], 1)) if K == 1 else _kmeanspp_resp(Z, K, rng)
    comps, weights, stats = _m_step(Z, resp, prior, wp)
    trace = [_elbo(Z, resp, comps, weights, stats, prior)]
    for _ in range(cfg.max_iter):
        log_rho = _log_rho(Z, comps, weights)
        resp = np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))
        if wp.is_dp:
            # larger clusters first on the stick; empty ones drift to the tail
            resp = resp[:, np.argsort(-resp.sum(axis=0), kind="stable")]
        comps, weights, stats = _m_step(Z, resp, prior, wp)
        trace.append(_elbo(Z, resp, comps, weights, stats, prior))
        if abs(trace[-1] - trace[-2]) < cfg.elbo_tol:
            break
    return comps, weights, trace


def vb_fit(data: Dataset, prior: Optional[NormalWishartParams], wp: WeightPrior, cfg: FitConfig = FitConfig()) -> BgmmPosterior:
    """Fit the mixture; the best of ``cfg.n_init`` restarts by final ELBO is kept."""
    if data.n < 1:
        raise FitError("cannot fit a mixture to an empty dataset")
    Z = data.Z
    if prior is None:
        prior = default_prior(Z)
    if prior.dim != Z.shape[1]:
        raise FitError(f"prior has dim {prior.dim}, data has {Z.shape[1]}")
    rng = np.random.default_rng(cfg.seed)
    best = None
    n_init = 1 if wp.n_components == 1 else cfg.n_init
    for restart in range(n_init):
        comps, weights, trace = _run_vb(Z, prior, wp, cfg, rng)
        log.debug("restart %d: %d iterations, elbo %.6f", restart, len(trace) - 1, trace[-1])
        if best is None or trace[-1] > best[2][-1]:
            best = (comps, weights, trace)
    comps, weights, trace = best
    expected = weights.expected
    keep = np.arange(len(expected))
    if wp.is_dp:
        keep = np.flatnonzero(expected >= cfg.weight_floor)
        if keep.size == 0:
            keep = np.array([int(np.argmax(expected))])
    kept_mass = float(expected[keep].sum())
    prior_weight = 1.0 - kept_mass if wp.is_dp else 0.0
    return BgmmPosterior(
        components=tuple(comps.params(int(k)) for k in keep),
        weights=expected[keep] / kept_mass,
        prior=prior,
        weight_prior=wp,
        split=data.split,
        elbo_trace=tuple(trace),
        prior_weight=prior_weight,
        n_iter=len(trace) - 1,
    )


def posterior_predictive_mixture(post: BgmmPosterior, include_prior_component: bool = False) -> MvtMixture:
    comps = [nw_posterior_predictive(p) for p in post.components]
    weights = np.asarray(post.weights)
    if include_prior_component and post.prior_weight > 0:
        comps.append(nw_posterior_predictive(post.prior))
        weights = np.append(weights * (1.0 - post.prior_weight), post.prior_weight)
        weights = weights / weights.sum()
    return MvtMixture(weights, tuple(comps))


# -- serialization ---------------------------------------------------------


def _nw_to_dict(p):
    return {"mu0": p.mu0.tolist(), "kappa": p.kappa, "nu": p.nu, "T": p.T.tolist()}


def _nw_from_dict(d):
    return NormalWishartParams(np.array(d["mu0"]), d["kappa"], d["nu"], np.array(d["T"]))


def model_to_dict(post: BgmmPosterior) -> dict:
    wp = post.weight_prior
    return {
        "version": MODEL_VERSION,
        "split": {"in_idx": list(post.split.in_idx), "out_idx": list(post.split.out_idx)},
        "weight_prior": {"kind": wp.kind, "alpha": wp.alpha, "n_components": wp.n_components},
        "prior": _nw_to_dict(post.prior),
        "components": [_nw_to_dict(p) for p in post.components],
        "weights": post.weights.tolist(),
        "prior_weight": post.prior_weight,
        "elbo_trace": list(post.elbo_trace),
    }


def model_from_dict(d: dict) -> BgmmPosterior:
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}")
    wp = d["weight_prior"]
    return BgmmPosterior(
        components=tuple(_nw_from_dict(c) for c in d["components"]),
        weights=np.array(d["weights"], dtype=float),
        prior=_nw_from_dict(d["prior"]),
        weight_prior=WeightPrior(wp["kind"], wp["alpha"], wp["n_components"]),
        split=BlockSplit(tuple(d["split"]["in_idx"]), tuple(d["split"]["out_idx"])),
        elbo_trace=tuple(d["elbo_trace"]),
        prior_weight=float(d["prior_weight"]),
    )


def dumps_model(post: BgmmPosterior) -> str:
    # repr-based float formatting is the shortest exact binary64 round trip
    return json.dumps(model_to_dict(post), indent=1, allow_nan=False) + "\n"


def loads_model(text: str) -> BgmmPosterior:
    return model_from_dict(json.loads(text))


def save_model(post: BgmmPosterior, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(post))


def load_model(path) -> BgmmPosterior:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())

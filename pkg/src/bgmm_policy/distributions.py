"""Gaussian, multivariate-t and normal-Wishart types.

All types are frozen dataclasses holding read-only numpy arrays. The free
functions implement the operations on them (densities, sampling, marginals,
conditioning and Gaussian products).
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import betaln, gammaln, logsumexp

from ._linalg import chol_logdet, is_spd, mahalanobis_sq, safe_cholesky, symmetrize
from .errors import ConditioningError, DimensionError, InvalidPriorError, SingularMatrixError

SYMMETRY_TOL = 1e-9

LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_spd(name, mat, dim):
    if mat.shape != (dim, dim):
        raise DimensionError(f"{name} has shape {mat.shape}, expected {(dim, dim)}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} has non-finite entries")
    asym = np.max(np.abs(mat - mat.T)) if dim else 0.0
    if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    if not is_spd(symmetrize(mat)):
        raise SingularMatrixError(f"{name} is not positive definite")


def _lgamma_ratio(a, h):
    """``log Γ(a + h) − log Γ(a)``, accurate also for very large ``a``."""
    return gammaln(h) - betaln(a, h)


@dataclass(frozen=True)
class MvnDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, 1)
        cov = _frozen(self.cov, 2)
        _check_spd("cov", cov, mean.shape[0])
        cov = symmetrize(cov)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def precision(self):
        return symmetrize(cho_solve((safe_cholesky(self.cov), True), np.eye(self.dim)))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point of dim {x.shape[-1]} for MVN of dim {self.dim}")
        chol = safe_cholesky(self.cov)
        maha = mahalanobis_sq(chol, x - self.mean)
        return -0.5 * (self.dim * LOG_2PI + chol_logdet(chol) + maha)

    def entropy(self):
        """Differential entropy in nats."""
        _, logdet = np.linalg.slogdet(self.cov)
        return 0.5 * (self.dim * (1.0 + LOG_2PI) + logdet)

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        chol = safe_cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ chol.T


@dataclass(frozen=True)
class MvtDist:
    loc: np.ndarray
    scale: np.ndarray
    dof: float

    def __post_init__(self):
        loc = _frozen(self.loc, 1)
        scale = _frozen(self.scale, 2)
        _check_spd("scale", scale, loc.shape[0])
        dof = float(self.dof)
        if not dof > 0:
            raise ValueError(f"dof must be positive, got {dof}")
        scale = symmetrize(scale)
        scale.setflags(write=False)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", dof)

    @property
    def dim(self):
        return self.loc.shape[0]

    def logpdf(self, x):
        return mvt_logpdf(self, x)


@dataclass(frozen=True)
class BlockSplit:
    """Partition of joint dimensions into inputs (states) and outputs (controls)."""

    in_idx: tuple
    out_idx: tuple

    def __post_init__(self):
        in_idx = tuple(int(i) for i in self.in_idx)
        out_idx = tuple(int(i) for i in self.out_idx)
        joint = set(in_idx) | set(out_idx)
        if set(in_idx) & set(out_idx):
            raise ValueError("input and output indices overlap")
        if len(joint) != len(in_idx) + len(out_idx) or joint != set(range(len(joint))):
            raise ValueError("split must cover 0..d-1 exactly once")
        object.__setattr__(self, "in_idx", in_idx)
        object.__setattr__(self, "out_idx", out_idx)

    @classmethod
    def first(cls, d_in, d_out):
        """Inputs are the leading ``d_in`` dims, outputs the next ``d_out``."""
        return cls(tuple(range(d_in)), tuple(range(d_in, d_in + d_out)))

    @property
    def d_in(self):
        return len(self.in_idx)

    @property
    def d_out(self):
        return len(self.out_idx)

    @property
    def dim(self):
        return self.d_in + self.d_out


@dataclass(frozen=True)
class NormalWishartParams:
    """Normal-Wishart over (mean, precision).

    ``T`` is the inverse of the Wishart scale matrix, so that the expected
    precision is ``nu * inv(T)`` and ``T`` accumulates scatter in the update.
    """

    mu0: np.ndarray
    kappa: float
    nu: float
    T: np.ndarray

    def __post_init__(self):
        mu0 = _frozen(self.mu0, 1)
        T = _frozen(self.T, 2)
        d = mu0.shape[0]
        kappa, nu = float(self.kappa), float(self.nu)
        if not kappa > 0:
            raise InvalidPriorError(f"kappa must be positive, got {kappa}")
        if not nu > d - 1:
            raise InvalidPriorError(f"nu must exceed d-1={d - 1}, got {nu}")
        try:
            _check_spd("T", T, d)
        except (SingularMatrixError, ValueError) as exc:
            raise InvalidPriorError(str(exc)) from exc
        T = symmetrize(T)
        T.setflags(write=False)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "nu", nu)

    @property
    def dim(self):
        return self.mu0.shape[0]


def mvt_log_normalizer(dof, dim, chol):
    return (
        _lgamma_ratio(0.5 * dof, 0.5 * dim)
        - 0.5 * dim * np.log(dof * np.pi)
        - 0.5 * chol_logdet(chol)
    )


def mvt_logpdf(dist: MvtDist, x):
    """Log density of a multivariate t at ``x`` (a point or a stack of rows)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dist.dim:
        raise DimensionError(f"point of shape {x.shape} for t-distribution of dim {dist.dim}")
    chol = safe_cholesky(dist.scale)
    maha = mahalanobis_sq(chol, x - dist.loc)
    return mvt_log_normalizer(dist.dof, dist.dim, chol) - 0.5 * (dist.dof + dist.dim) * np.log1p(
        maha / dist.dof
    )


def mvt_sample(dist: MvtDist, n: int, seed: int) -> np.ndarray:
    """``n`` draws as rows; Gaussian scale mixture with a chi-square divisor."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    chol = safe_cholesky(dist.scale)
    z = rng.standard_normal((n, dist.dim))
    w = rng.chisquare(dist.dof, size=n) / dist.dof
    return dist.loc + (z @ chol.T) / np.sqrt(w)[:, None]


def t_marginal(joint: MvtDist, idx: Sequence[int]) -> MvtDist:
    idx = [int(i) for i in idx]
    if not idx:
        raise DimensionError("marginal index set is empty")
    if min(idx) < 0 or max(idx) >= joint.dim or len(set(idx)) != len(idx):
        raise DimensionError(f"invalid marginal indices {idx} for dim {joint.dim}")
    return MvtDist(joint.loc[idx], joint.scale[np.ix_(idx, idx)], joint.dof)


def t_condition(joint: MvtDist, split: BlockSplit, x, component=None) -> MvtDist:
    """Distribution of the output block given the input block equals ``x``.

    The result is again a t: dof grows by ``d_in`` and the Schur complement is
    inflated by ``(dof + m(x)) / (dof + d_in)`` with ``m`` the Mahalanobis term.
    """
    x = np.asarray(x, dtype=float)
    if split.dim != joint.dim:
        raise DimensionError(f"split covers {split.dim} dims, joint has {joint.dim}")
    if x.shape != (split.d_in,):
        raise DimensionError(f"query has shape {x.shape}, expected ({split.d_in},)")
    i, o = list(split.in_idx), list(split.out_idx)
    s_ii = joint.scale[np.ix_(i, i)]
    s_oi = joint.scale[np.ix_(o, i)]
    s_oo = joint.scale[np.ix_(o, o)]
    try:
        chol = safe_cholesky(s_ii)
    except SingularMatrixError as exc:
        where = "" if component is None else f" in component {component}"
        raise ConditioningError(f"input block is singular{where}", component) from exc
    diff = x - joint.loc[i]
    w = solve_triangular(chol, diff, lower=True)
    maha = float(w @ w)
    gain = cho_solve((chol, True), s_oi.T).T
    loc = joint.loc[o] + gain @ diff
    schur = symmetrize(s_oo - gain @ s_oi.T)
    d_in = split.d_in
    factor = (joint.dof + maha) / (joint.dof + d_in)
    return MvtDist(loc, factor * schur, joint.dof + d_in)


def mvn_product(a: MvnDist, b: MvnDist):
    """Normalized product of two Gaussians and ``log ∫ N_a N_b``.

    The fused precision is the sum of precisions and the fused mean the
    precision-weighted average of the means.
    """
    if a.dim != b.dim:
        raise DimensionError(f"cannot multiply MVNs of dim {a.dim} and {b.dim}")
    chol_a = safe_cholesky(a.cov)
    chol_b = safe_cholesky(b.cov)
    eye = np.eye(a.dim)
    lam_a = cho_solve((chol_a, True), eye)
    lam_b = cho_solve((chol_b, True), eye)
    lam = symmetrize(lam_a + lam_b)
    chol = safe_cholesky(lam)
    cov = symmetrize(cho_solve((chol, True), eye))
    mean = cov @ (lam_a @ a.mean + lam_b @ b.mean)
    s = symmetrize(a.cov + b.cov)
    chol_s = safe_cholesky(s)
    log_norm = -0.5 * (a.dim * LOG_2PI + chol_logdet(chol_s) + mahalanobis_sq(chol_s, a.mean - b.mean))
    return MvnDist(mean, cov), float(log_norm)


def gaussian_limit(dist: MvtDist) -> MvnDist:
    """The Gaussian a t-distribution tends to as dof grows, scale held fixed."""
    return MvnDist(dist.loc, dist.scale)


@dataclass(frozen=True)
class MvtMixture:
    """Finite mixture of multivariate t components sharing one dimension."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        weights = _frozen(self.weights, 1)
        components = tuple(self.components)
        if len(components) != weights.shape[0] or not components:
            raise DimensionError("need one weight per component and at least one component")
        if len({c.dim for c in components}) != 1:
            raise DimensionError("mixture components differ in dimension")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @property
    def dim(self):
        return self.components[0].dim

    def __len__(self):
        return len(self.components)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        terms = [lw + mvt_logpdf(c, x) for lw, c in zip(logw, self.components)]
        return logsumexp(np.stack(terms, axis=0), axis=0)

    def marginal(self, idx):
        return MvtMixture(self.weights, tuple(t_marginal(c, idx) for c in self.components))

    def with_dof(self, dof):
        """Same locations and scales with every dof replaced (e.g. a Gaussian limit)."""
        return MvtMixture(self.weights, tuple(MvtDist(c.loc, c.scale, dof) for c in self.components))

"""Finite-horizon linear quadratic tracking with maximum-entropy policies.

Costs follow the negative log-likelihood convention::

    sum_t ½ (x_t - g_t)ᵀ Q_t (x_t - g_t) + ½ u_tᵀ R_t u_t  +  ½ (x_H - g_H)ᵀ Q_H (x_H - g_H)

so the stochastic policy ``exp(-Q-function)`` at step ``t`` is Gaussian with
mean ``-K_t x + c_t`` and precision ``R_t + Bᵀ P_{t+1} B``.
"""

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._linalg import is_spd, spd_inv, symmetrize
from .bgmm import BgmmPosterior, posterior_predictive_mixture
from .distributions import MvnDist
from .errors import SolverError
from .regression import MixtureScorer, moment_match_component


class HorizonWarning(RuntimeWarning):
    """A policy was queried past its horizon; the last step was used."""


class PsdProjectionWarning(RuntimeWarning):
    """An indefinite state cost was clamped to the PSD cone."""


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent shapes A {A.shape}, B {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def integrator(cls, dim, dt):
        """Velocity-controlled point: ``x_{t+1} = x_t + dt u_t``."""
        return cls(np.eye(dim), dt * np.eye(dim), dt)

    @property
    def dx(self):
        return self.A.shape[0]

    @property
    def du(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class QuadCost:
    """Per-step costs; ``Q`` and ``g`` have ``H + 1`` entries, ``R`` has ``H``."""

    Q: tuple
    g: tuple
    R: tuple

    def __post_init__(self):
        Q = tuple(np.asarray(q, dtype=float) for q in self.Q)
        g = tuple(np.asarray(v, dtype=float) for v in self.g)
        R = tuple(np.asarray(r, dtype=float) for r in self.R)
        H = len(R)
        if H < 1 or len(Q) != H + 1 or len(g) != H + 1:
            raise ValueError("need H >= 1 control weights and H + 1 state weights/targets")
        for t, r in enumerate(R):
            if not is_spd(r):
                raise ValueError(f"R_{t} is not positive definite")
        for t, q in enumerate(Q):
            if np.min(np.linalg.eigvalsh(symmetrize(q))) < -1e-9 * max(1.0, np.abs(q).max()):
                raise ValueError(f"Q_{t} is not positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "R", R)

    @property
    def H(self):
        return len(self.R)

    @classmethod
    def constant(cls, Q, g, R, H, Q_final=None, g_final=None):
        Q_final = Q if Q_final is None else Q_final
        g_final = g if g_final is None else g_final
        return cls((Q,) * H + (Q_final,), (g,) * H + (g_final,), (R,) * H)


@dataclass(frozen=True)
class LqtPolicy:
    K: np.ndarray  # (H, du, dx)
    c: np.ndarray  # (H, du)
    precision: np.ndarray  # (H, du, du)

    @property
    def H(self):
        return self.K.shape[0]

    def __call__(self, x, t=0):
        return policy_at(self, t, x)


def lqt_solve(sys: LinearSystem, cost: QuadCost) -> LqtPolicy:
    A, B = sys.A, sys.B
    H = cost.H
    P = symmetrize(cost.Q[H])
    p = P @ cost.g[H]
    K = np.empty((H, sys.du, sys.dx))
    c = np.empty((H, sys.du))
    lam = np.empty((H, sys.du, sys.du))
    for t in range(H - 1, -1, -1):
        BtP = B.T @ P
        lam_t = symmetrize(cost.R[t] + BtP @ B)
        try:
            chol = np.linalg.cholesky(lam_t)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"control precision is not positive definite at t={t}", t) from exc
        K_t = np.linalg.solve(chol.T, np.linalg.solve(chol, BtP @ A))
        c_t = np.linalg.solve(chol.T, np.linalg.solve(chol, B.T @ p))
        Q_t = cost.Q[t]
        p = Q_t @ cost.g[t] + (A - B @ K_t).T @ p
        P = symmetrize(Q_t + A.T @ P @ A - A.T @ BtP.T @ K_t)
        K[t], c[t], lam[t] = K_t, c_t, lam_t
    return LqtPolicy(K, c, lam)


def policy_at(p: LqtPolicy, t: int, x) -> MvnDist:
    if t >= p.H:
        warnings.warn(f"step {t} is past the horizon {p.H}; using the last step", HorizonWarning)
        t = p.H - 1
    x = np.asarray(x, dtype=float)
    return MvnDist(-p.K[t] @ x + p.c[t], spd_inv(p.precision[t]))


def endpoint_policy(sys: LinearSystem, target: MvnDist, R, H: int) -> LqtPolicy:
    """Only the final state is penalized, by the target's negative log-likelihood."""
    zero = np.zeros((sys.dx, sys.dx))
    R = np.asarray(R, dtype=float)
    cost = QuadCost(
        (zero,) * H + (target.precision,),
        (target.mean,) * (H + 1),
        (R,) * H,
    )
    return lqt_solve(sys, cost)


def project_psd(Q):
    w, V = np.linalg.eigh(symmetrize(Q))
    if np.any(w < 0):
        warnings.warn("indefinite state cost projected onto the PSD cone", PsdProjectionWarning)
        w = np.clip(w, 0.0, None)
    return symmetrize((V * w) @ V.T)


class ConservativeCost:
    """Quadratic approximation of ``-log p(x)`` from the fitted state marginal.

    At a query state the component with the highest marginal responsibility is
    moment matched; its precision and mean become the state weight and target.
    """

    def __init__(self, model: BgmmPosterior, state_idx: Optional[Sequence[int]] = None):
        idx = list(model.split.in_idx if state_idx is None else state_idx)
        mix = posterior_predictive_mixture(model, include_prior_component=False)
        self.marginal = mix.marginal(idx)
        self.scorer = MixtureScorer(self.marginal)
        self.targets = []
        for comp in self.marginal.components:
            mvn = moment_match_component(comp)
            self.targets.append((project_psd(mvn.precision), mvn.mean))

    def __call__(self, x_now):
        """``(Q_hat, g_hat, k)`` at ``x_now``."""
        k = int(np.argmax(self.scorer.log_joint(x_now)))
        Q, g = self.targets[k]
        return Q, g, k


class ConservativePolicy:
    """Receding-horizon LQT toward the local mode of the state marginal.

    Replans at every call. The cost only depends on which component is active,
    so plans are cached per component.
    """

    def __init__(self, model: BgmmPosterior, sys: LinearSystem, R, H: int = 50, state_idx=None):
        self.sys = sys
        self.R = np.asarray(R, dtype=float)
        self.H = H
        self.cost = ConservativeCost(model, state_idx)
        self._plans = {}

    def plan(self, x_now) -> LqtPolicy:
        Q, g, k = self.cost(x_now)
        if k not in self._plans:
            self._plans[k] = lqt_solve(self.sys, QuadCost.constant(Q, g, self.R, self.H))
        return self._plans[k]

    def __call__(self, x, t=0):
        return policy_at(self.plan(x), 0, x)


def conservative_policy(model: BgmmPosterior, sys: LinearSystem, R, H: int, x_now, state_idx=None) -> LqtPolicy:
    """One receding-horizon plan from ``x_now``; callers apply its first step."""
    Q, g, _ = ConservativeCost(model, state_idx)(x_now)
    return lqt_solve(sys, QuadCost.constant(Q, g, np.asarray(R, dtype=float), H))

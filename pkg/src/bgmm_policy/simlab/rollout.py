"""Rollout engine for velocity-controlled point masses."""

from dataclasses import dataclass

import numpy as np

from ..distributions import MvnDist
from ..fusion import MixtureOfMvn
from ..regression import ConditionalMixture, moment_match_mixture, sample_conditional

HORIZON = "horizon"
CONVERGED = "converged"
DIVERGED = "diverged"


@dataclass(frozen=True)
class PointMassSystem:
    dim: int = 2
    dt: float = 0.05
    control_mode: str = "velocity"
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.control_mode != "velocity":
            raise ValueError("only velocity control is supported")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def linear_system(self):
        from ..control import LinearSystem

        return LinearSystem.integrator(self.dim, self.dt)


@dataclass(frozen=True)
class RolloutResult:
    states: np.ndarray
    controls: np.ndarray
    entropy: np.ndarray
    termination: str


def _entropy(out):
    if isinstance(out, MvnDist):
        return out.entropy()
    if isinstance(out, MixtureOfMvn):
        return out.moment_match().entropy()
    if isinstance(out, ConditionalMixture):
        return moment_match_mixture(out).entropy_proxy
    return np.nan


def _mean(out):
    if isinstance(out, MvnDist):
        return out.mean
    if isinstance(out, MixtureOfMvn):
        return out.weights @ out.means
    if isinstance(out, ConditionalMixture):
        return moment_match_mixture(out).mean
    raise TypeError(f"policy returned unsupported {type(out).__name__}")


def _sample(out, rng):
    if isinstance(out, MvnDist):
        return rng.multivariate_normal(out.mean, out.cov, method="cholesky")
    if isinstance(out, MixtureOfMvn):
        k = rng.choice(len(out), p=out.weights)
        return rng.multivariate_normal(out.means[k], out.covs[k], method="cholesky")
    if isinstance(out, ConditionalMixture):
        return sample_conditional(out, 1, int(rng.integers(2**63)))[0]
    raise TypeError(f"policy returned unsupported {type(out).__name__}")


def rollout(policy, sys: PointMassSystem, x0, steps: int, action_mode="mean", seed=None,
            bound=np.inf, converge_tol=None) -> RolloutResult:
    """Integrate ``x_{t+1} = x_t + dt u_t + noise`` under ``policy(x, t)``.

    ``action_mode`` is ``"mean"`` or ``"sample"`` (seeded). The run stops as
    ``diverged`` when a state leaves the ball of radius ``bound`` or turns
    non-finite, and as ``converged`` when a step moves less than
    ``converge_tol``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if action_mode not in ("mean", "sample"):
        raise ValueError(f"unknown action mode {action_mode!r}")
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    states, controls, ent = [x.copy()], [], []
    termination = HORIZON
    for t in range(steps):
        out = policy(x, t)
        u = _mean(out) if action_mode == "mean" else _sample(out, rng)
        controls.append(u)
        ent.append(_entropy(out))
        with np.errstate(over="ignore", invalid="ignore"):
            # a blow-up is reported as divergence below
            x_next = x + sys.dt * u
        if sys.noise_std > 0:
            x_next = x_next + sys.noise_std * rng.standard_normal(sys.dim)
        step = np.linalg.norm(x_next - x)
        x = x_next
        states.append(x.copy())
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > bound:
            termination = DIVERGED
            break
        if converge_tol is not None and step < converge_tol:
            termination = CONVERGED
            break
    return RolloutResult(np.array(states), np.array(controls), np.array(ent), termination)

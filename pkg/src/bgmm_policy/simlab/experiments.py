"""Entropy maps, flow fields and the start-perturbation experiment."""

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..bgmm import BgmmPosterior
from ..control import ConservativePolicy, endpoint_policy
from ..distributions import MvnDist
from ..fusion import FixedPrecisionPolicy, ProductPolicy, heuristic_expert_precision
from ..regression import moment_match_mixture
from .policies import GLOBAL, PER_COMPONENT, ImitationPolicy, ScriptedGoalPolicy, regressor_for
from .rollout import DIVERGED, PointMassSystem, RolloutResult, rollout
from .scenarios import Band, DemoSet, Trajectory

SUCCESS = "success"
TOUCH = "touch"
FAILURE = "failure"

EXPERTS = ("imitation", "conservative", "endpoint", "goal")
RECIPE_ALIASES = {"oc": "endpoint"}


@dataclass(frozen=True)
class Grid:
    """Regular 2D grid: ``nx`` nodes over ``[x0, x1]`` and ``ny`` over ``[y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("grid bounds must be increasing")

    @classmethod
    def parse(cls, text: str):
        """``"x0:x1:nx,y0:y1:ny"``, e.g. ``"-2:2:41,-1.5:1.5:31"``."""
        try:
            xs, ys = text.split(",")
            x0, x1, nx = xs.split(":")
            y0, y1, ny = ys.split(":")
            return cls(float(x0), float(x1), float(y0), float(y1), int(nx), int(ny))
        except ValueError as exc:
            raise ValueError(f"bad grid {text!r}; expected 'x0:x1:nx,y0:y1:ny' ({exc})") from None

    @classmethod
    def around(cls, demos: DemoSet, factor=1.5, n=41):
        c, r = demos.centroid, demos.radius * factor
        return cls(c[0] - r, c[0] + r, c[1] - r, c[1] + r, n, n)

    @property
    def xs(self):
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def ys(self):
        return np.linspace(self.y0, self.y1, self.ny)

    def nodes(self):
        """``(ny, nx, 2)`` node coordinates, row-major in y."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y], axis=-1)

    def to_dict(self):
        return {"x0": self.x0, "x1": self.x1, "y0": self.y0, "y1": self.y1, "nx": self.nx, "ny": self.ny}


def entropy_map(model: BgmmPosterior, grid: Grid, dof: Optional[float] = None,
                include_prior: Optional[bool] = None) -> np.ndarray:
    """Entropy proxy of ``p(u | x)`` at every node, shape ``(ny, nx)``."""
    reg = regressor_for(model, include_prior=include_prior, dof=dof)
    nodes = grid.nodes()
    out = np.empty(nodes.shape[:2])
    for i in range(grid.ny):
        for j in range(grid.nx):
            out[i, j] = moment_match_mixture(reg.condition(nodes[i, j])).entropy_proxy
    return out


def flow_field(model: BgmmPosterior, grid: Grid, include_prior: Optional[bool] = None) -> np.ndarray:
    """Expected command at every node, shape ``(ny, nx, d_u)``."""
    reg = regressor_for(model, include_prior=include_prior)
    nodes = grid.nodes()
    out = np.empty(nodes.shape[:2] + (reg.split.d_out,))
    for i in range(grid.ny):
        for j in range(grid.nx):
            out[i, j] = moment_match_mixture(reg.condition(nodes[i, j])).mean
    return out


def entropy_ratio(model: BgmmPosterior, near, far, dof: Optional[float] = None) -> float:
    """``exp(H_far - H_near)``, the ratio of entropy powers at two states.

    Differential entropies can be negative, so their plain quotient has no
    fixed sign; the exponentiated difference is positive and scale-free.
    """
    reg = regressor_for(model, dof=dof)
    h_near = moment_match_mixture(reg.condition(np.asarray(near, dtype=float))).entropy_proxy
    h_far = moment_match_mixture(reg.condition(np.asarray(far, dtype=float))).entropy_proxy
    return float(np.exp(h_far - h_near))


# ---------------------------------------------------------------------------
# recipes


@dataclass(frozen=True)
class RecipeParams:
    imitation_form: str = PER_COMPONENT
    control_weight: float = 0.1
    conservative_horizon: int = 50
    endpoint_std: float = 0.03
    endpoint_horizon: int = 100
    heuristic_c: float = 10.0


def parse_recipe(recipe: str) -> tuple:
    names = tuple(RECIPE_ALIASES.get(p.strip(), p.strip()) for p in recipe.split("+"))
    bad = [n for n in names if n not in EXPERTS]
    if not names or bad:
        raise ValueError(f"unknown experts {bad} in recipe {recipe!r}; expected '+'-joined {EXPERTS}")
    if len(set(names)) != len(names):
        raise ValueError(f"recipe {recipe!r} repeats an expert")
    return names


def build_policy(recipe: str, model: BgmmPosterior, sys: PointMassSystem, goal=None,
                 params: RecipeParams = RecipeParams()):
    """Product of the experts named in ``recipe`` (``'+'``-separated)."""
    names = parse_recipe(recipe)
    lsys = sys.linear_system()
    R = params.control_weight * np.eye(lsys.du)
    imitation = ImitationPolicy(model, params.imitation_form)
    experts = []
    for name in names:
        if name == "imitation":
            experts.append(imitation)
        elif name == "conservative":
            experts.append(ConservativePolicy(model, lsys, R, params.conservative_horizon))
        else:
            if goal is None:
                raise ValueError(f"expert {name!r} needs a goal")
            goal = np.asarray(goal, dtype=float)
            if name == "endpoint":
                target = MvnDist(goal, params.endpoint_std**2 * np.eye(len(goal)))
                experts.append(endpoint_policy(lsys, target, R, params.endpoint_horizon))
            else:
                means = np.stack([c.mu0 for c in model.components])[:, list(model.split.in_idx)]
                centre = model.weights @ means / model.weights.sum()
                at_mean = ImitationPolicy(model, GLOBAL)(centre)
                prec = heuristic_expert_precision(at_mean, params.heuristic_c)
                scripted = ScriptedGoalPolicy(goal)
                experts.append(FixedPrecisionPolicy(lambda x, t: scripted(x, t).mean, prec))
    return experts[0] if len(experts) == 1 else ProductPolicy(experts)


# ---------------------------------------------------------------------------
# start-perturbation experiment


@dataclass(frozen=True)
class Outcome:
    reached: bool
    entered: bool
    grazed: bool
    diverged: bool

    @property
    def label(self):
        if self.reached and not self.grazed:
            return SUCCESS
        if self.reached and not self.entered:
            return TOUCH
        return FAILURE


def classify(result: RolloutResult, goal, band: Optional[Band], r_goal: float, margin: float) -> Outcome:
    """Without a goal, a run counts as reached when it completes without diverging."""
    reached = result.termination != DIVERGED
    if goal is not None:
        reached = reached and bool(np.linalg.norm(result.states[-1] - goal) <= r_goal)
    entered = band is not None and band.path_hits(result.states)
    grazed = band is not None and band.path_hits(result.states, margin)
    return Outcome(reached, entered, grazed, result.termination == DIVERGED)


@dataclass(frozen=True)
class ShiftSettings:
    n_trials: int = 100
    perturbation_scale: float = 0.1
    steps: int = 100
    action_mode: str = "sample"
    r_goal: float = 0.1
    touch_margin: float = 0.05
    bound_factor: float = 10.0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass(frozen=True)
class TrialRecord:
    policy: str
    trial: int
    start: np.ndarray
    result: RolloutResult
    outcome: Outcome


@dataclass(frozen=True)
class ShiftReport:
    records: tuple
    policies: tuple

    def rates(self, policy: str) -> Dict[str, float]:
        rec = [r for r in self.records if r.policy == policy]
        n = len(rec)
        labels = [r.outcome.label for r in rec]
        return {
            "n_trials": n,
            SUCCESS: labels.count(SUCCESS) / n,
            TOUCH: labels.count(TOUCH) / n,
            FAILURE: labels.count(FAILURE) / n,
            "diverged": sum(r.outcome.diverged for r in rec) / n,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", "n_trials", SUCCESS, TOUCH, FAILURE, "diverged"])
        for p in self.policies:
            r = self.rates(p)
            w.writerow([p, r["n_trials"], repr(r[SUCCESS]), repr(r[TOUCH]), repr(r[FAILURE]), repr(r["diverged"])])
        return buf.getvalue()

    def trajectories(self, dt: float):
        return [rollout_trajectory(r.result, dt) for r in self.records]


def rollout_trajectory(result: RolloutResult, dt: float) -> Trajectory:
    """The executed ``(x_t, u_t)`` pairs; the state reached after the last command is dropped."""
    n = len(result.controls)
    return Trajectory(result.states[:n], result.controls, dt * np.arange(n))


def thread_count(default: int = 1) -> int:
    """Worker cap from ``BGMM_THREADS``; results never depend on it."""
    raw = os.environ.get("BGMM_THREADS")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BGMM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"BGMM_THREADS must be a positive integer, got {raw!r}")
    return n


def trial_start(demos: DemoSet, scale: float, seed: int, trial: int):
    """A random demonstrated start, displaced uniformly within ``scale`` data radii.

    Returns the start and a rollout seed, both drawn from the trial's own stream.
    """
    rng = np.random.default_rng([seed, trial])
    starts = demos.starts
    base = starts[rng.integers(len(starts))]
    angle = rng.uniform(0.0, 2 * np.pi)
    r = scale * demos.radius * np.sqrt(rng.uniform())
    start = base + r * np.array([np.cos(angle), np.sin(angle)])
    return start, int(rng.integers(2**63))


def shift_experiment(policies: Dict[str, Callable], demos: DemoSet, settings: ShiftSettings = ShiftSettings(),
                     seed: int = 0, sys: Optional[PointMassSystem] = None,
                     threads: Optional[int] = None) -> ShiftReport:
    """Roll every policy from the same perturbed starts and score the outcomes.

    Every trial owns the RNG stream ``(seed, trial)``, so the report is
    identical for any worker count.
    """
    sys = PointMassSystem(dt=demos.dt) if sys is None else sys
    bound = settings.bound_factor * demos.radius
    goal = None if demos.goal is None else np.asarray(demos.goal, dtype=float)

    def run(task):
        name, trial = task
        start, rseed = trial_start(demos, settings.perturbation_scale, seed, trial)
        res = rollout(policies[name], sys, start, settings.steps, settings.action_mode, rseed, bound=bound)
        return TrialRecord(name, trial, start, res,
                           classify(res, goal, demos.band, settings.r_goal, settings.touch_margin))

    tasks = [(name, i) for name in policies for i in range(settings.n_trials)]
    workers = thread_count() if threads is None else threads
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, tasks))
    else:
        records = [run(t) for t in tasks]
    return ShiftReport(tuple(records), tuple(policies))


def divergence_rate(policy, demos: DemoSet, n_trials: int = 100, radius_factor: float = 3.0,
                    bound_factor: float = 10.0, steps: int = 400, seed: int = 0,
                    action_mode: str = "mean", sys: Optional[PointMassSystem] = None) -> float:
    """Fraction of rollouts from ``radius_factor`` data radii that leave ``bound_factor`` radii.

    Starts lie on the circle of radius ``radius_factor * R`` around the
    demonstration centroid, at uniformly random angles.
    """
    sys = PointMassSystem(dt=demos.dt) if sys is None else sys
    c, R = demos.centroid, demos.radius
    n_div = 0
    for i in range(n_trials):
        rng = np.random.default_rng([seed, i])
        a = rng.uniform(0.0, 2 * np.pi)
        x0 = c + radius_factor * R * np.array([np.cos(a), np.sin(a)])
        res = rollout(policy, sys, x0, steps, action_mode, int(rng.integers(2**63)),
                      bound=bound_factor * R)
        n_div += res.termination == DIVERGED
    return n_div / n_trials


def band_hit_rate(policy, demos: DemoSet, starts: Sequence, steps: int, action_mode: str, seed: int = 0) -> float:
    sys = PointMassSystem(dt=demos.dt)
    hits = 0
    for i, x0 in enumerate(starts):
        res = rollout(policy, sys, x0, steps, action_mode, seed=None if action_mode == "mean" else [seed, i])
        hits += demos.band.path_hits(res.states)
    return hits / len(starts)

"""Synthetic 2D demonstration sets.

Every demonstrator is a noisy tracking controller around a reference path;
states are the exact integration of the recorded commands, so controls equal
the finite-difference velocities of the states.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

S_CURVE = "s_curve"
OBSTACLE_BIMODAL = "obstacle_bimodal"
LIMIT_CYCLE = "limit_cycle"
ENDPOINT_REACH = "endpoint_reach"
SCENARIOS = (S_CURVE, OBSTACLE_BIMODAL, LIMIT_CYCLE, ENDPOINT_REACH)

DT = 0.05
TRACKING_GAIN = 4.0

GOAL_HOLD = 40
OBSTACLE_HOLD = 10

OBSTACLE_START = np.array([-1.5, 0.0])
FORK_LENGTH = 1.2


@dataclass(frozen=True)
class Band:
    """Axis-aligned rectangular obstacle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, p, margin=0.0):
        p = np.atleast_2d(p)
        return (
            (p[:, 0] >= self.x0 - margin)
            & (p[:, 0] <= self.x1 + margin)
            & (p[:, 1] >= self.y0 - margin)
            & (p[:, 1] <= self.y1 + margin)
        )

    def segment_hits(self, a, b, margin=0.0, n_sub=8):
        """Whether the segment ``a -> b`` enters the (inflated) band."""
        s = np.linspace(0.0, 1.0, n_sub + 1)[:, None]
        return bool(np.any(self.contains(a + s * (b - a), margin)))

    def path_hits(self, states, margin=0.0):
        if len(states) < 2:
            return bool(np.any(self.contains(states, margin)))
        return any(self.segment_hits(a, b, margin) for a, b in zip(states[:-1], states[1:]))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    controls: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        if not (len(self.states) == len(self.controls) == len(self.timestamps)):
            raise ValueError("states, controls and timestamps must have equal length")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.controls))):
            raise ValueError("trajectory contains non-finite values")


@dataclass(frozen=True)
class DemoSet:
    trajectories: tuple
    scenario: str
    dt: float = DT
    goal: Optional[np.ndarray] = None
    band: Optional[Band] = None
    seed: int = 0
    noise_std: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def joint(self):
        """Stacked joint observations ``[x, u]``, one row per time step."""
        return np.vstack([np.hstack([t.states, t.controls]) for t in self.trajectories])

    @property
    def states(self):
        return np.vstack([t.states for t in self.trajectories])

    @property
    def centroid(self):
        return self.states.mean(axis=0)

    @property
    def radius(self):
        """Largest distance of a demonstrated state from the centroid."""
        return float(np.max(np.linalg.norm(self.states - self.centroid, axis=1)))

    @property
    def starts(self):
        return np.stack([t.states[0] for t in self.trajectories])


def _ease(s):
    """Progress with full speed at the start and zero speed at the end."""
    return 1.0 - (1.0 - s) ** 2


def _track(ref, dref, x0, noise, dt):
    """Noisy tracking of a reference; returns states and the executed controls."""
    n = len(ref)
    states = np.empty((n, 2))
    controls = np.empty((n, 2))
    x = np.array(x0, dtype=float)
    for t in range(n):
        u = dref[t] + TRACKING_GAIN * (ref[t] - x) + noise[t]
        states[t] = x
        controls[t] = u
        x = x + dt * u
    return states, controls


def _reference(path, duration, dt):
    steps = int(round(duration / dt))
    s = np.arange(steps) * dt / duration
    tau = _ease(s)
    dtau = 2.0 * (1.0 - s) / duration
    eps = 1e-6
    p = path(tau)
    dp = (path(tau + eps) - path(tau - eps)) / (2 * eps)
    return p, dp * dtau[:, None]


def _hold(ref, dref, goal, steps):
    """Append ``steps`` reference samples resting on the goal."""
    ref = np.vstack([ref, np.repeat(goal[None], steps, axis=0)])
    return ref, np.vstack([dref, np.zeros((steps, 2))])


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


def _obstacle_path(side, height):
    """Leaves the common start at an angle, clears the band, merges at the goal."""

    def path(tau):
        x = OBSTACLE_START[0] + (1.0 - OBSTACLE_START[0]) * tau
        rise = np.clip((x - OBSTACLE_START[0]) / FORK_LENGTH, 0.0, 1.0)
        rise = rise * (2.0 - rise)
        bump = rise * (1.0 - _smoothstep((x - 0.3) / 0.6))
        return np.stack([x, side * height * bump], axis=1)

    return path


def _s_path(offset):
    def path(tau):
        y = 0.55 * np.sin(2 * np.pi * tau) * (1.0 - tau) + offset * (1.0 - tau) ** 2
        return np.stack([-1.0 + 2.0 * tau, y], axis=1)

    return path


def _reach_path(start_y, bend):
    def path(tau):
        x = -1.0 + 2.0 * tau
        y = start_y * (1.0 - tau) + bend * np.sin(np.pi * tau)
        return np.stack([x, y], axis=1)

    return path


def generate_demos(scenario: str, n_demos: int, seed: int, noise_std: float = 0.05) -> DemoSet:
    """Deterministic demonstrations for one of :data:`SCENARIOS`."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if n_demos < 1:
        raise ValueError("n_demos must be >= 1")
    rng = np.random.default_rng(seed)
    dt = DT
    trajs = []
    goal = None
    band = None
    if scenario == OBSTACLE_BIMODAL:
        goal = np.array([1.0, 0.0])
        band = Band(-0.25, 0.25, -0.4, 0.4)
        duration = 2.2
        steps = int(round(duration / dt)) + OBSTACLE_HOLD
        for i in range(n_demos):
            if i % 2 == 0:
                height = 0.55 + 0.03 * rng.standard_normal()
                noise = noise_std * rng.standard_normal((steps, 2))
                side = 1.0
            else:
                # mirror image of the previous demonstration
                side, noise = -1.0, noise * [1.0, -1.0]
            ref, dref = _hold(*_reference(_obstacle_path(side, height), duration, dt), goal, OBSTACLE_HOLD)
            states, controls = _track(ref, dref, ref[0], noise, dt)
            trajs.append((states, controls))
    elif scenario == S_CURVE:
        goal = np.array([1.0, 0.0])
        for _ in range(n_demos):
            offset = 0.15 * rng.standard_normal()
            ref, dref = _hold(*_reference(_s_path(offset), 6.25, dt), goal, GOAL_HOLD)
            noise = noise_std * rng.standard_normal((len(ref), 2))
            states, controls = _track(ref, dref, ref[0], noise, dt)
            trajs.append((states, controls))
    elif scenario == ENDPOINT_REACH:
        goal = np.array([1.0, 0.0])
        for _ in range(n_demos):
            start_y = rng.uniform(-0.6, 0.6)
            bend = 0.25 * rng.standard_normal()
            ref, dref = _hold(*_reference(_reach_path(start_y, bend), 4.0, dt), goal, GOAL_HOLD)
            noise = noise_std * rng.standard_normal((len(ref), 2))
            states, controls = _track(ref, dref, ref[0], noise, dt)
            trajs.append((states, controls))
    else:
        omega = 1.0
        steps = int(round(1.5 * 2 * np.pi / omega / dt))
        for _ in range(n_demos):
            phase = rng.uniform(0, 2 * np.pi)
            ang = phase + omega * dt * np.arange(steps)
            ref = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            dref = omega * np.stack([-np.sin(ang), np.cos(ang)], axis=1)
            noise = noise_std * rng.standard_normal((steps, 2))
            states, controls = _track(ref, dref, ref[0] * (1.0 + 0.03 * rng.standard_normal()), noise, dt)
            trajs.append((states, controls))
    trajectories = tuple(
        Trajectory(s, u, dt * np.arange(len(s))) for s, u in trajs
    )
    return DemoSet(trajectories, scenario, dt, goal, band, seed, noise_std)

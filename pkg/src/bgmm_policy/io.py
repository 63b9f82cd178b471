"""Trajectory files: JSONL, one ``{traj_id, t, x, u}`` object per time step.

Python's float repr is the shortest string that round-trips to the same
binary64 value, so plain JSON numbers are exact in both directions.
"""

import json
from collections import OrderedDict

import numpy as np

from .simlab.scenarios import DT, DemoSet, Trajectory

KEYS = ("traj_id", "t", "x", "u")


class DemoFileError(ValueError):
    """Malformed trajectory file; the message carries the line number."""


def _row(traj_id, t, x, u):
    return json.dumps(
        {"traj_id": int(traj_id), "t": float(t), "x": [float(v) for v in x], "u": [float(v) for v in u]},
        allow_nan=False,
        separators=(",", ":"),
    )


def dumps_trajectories(trajectories) -> str:
    lines = []
    for i, traj in enumerate(trajectories):
        for t, x, u in zip(traj.timestamps, traj.states, traj.controls):
            lines.append(_row(i, t, x, u))
    return "".join(line + "\n" for line in lines)


def write_trajectories(path, trajectories) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_trajectories(trajectories))


def _real_list(value, name, lineno):
    if not isinstance(value, list) or not value:
        raise DemoFileError(f"line {lineno}: {name!r} must be a non-empty array")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DemoFileError(f"line {lineno}: {name!r} must contain only numbers")
    arr = np.array(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DemoFileError(f"line {lineno}: {name!r} contains non-finite values")
    return arr


def parse_trajectories(lines) -> tuple:
    """Trajectories in order of first appearance of their ``traj_id``."""
    groups = OrderedDict()
    arity = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DemoFileError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DemoFileError(f"line {lineno}: expected an object")
        missing = [k for k in KEYS if k not in obj]
        extra = sorted(set(obj) - set(KEYS))
        if missing:
            raise DemoFileError(f"line {lineno}: missing keys {missing}")
        if extra:
            raise DemoFileError(f"line {lineno}: unknown keys {extra}")
        tid = obj["traj_id"]
        if isinstance(tid, bool) or not isinstance(tid, int):
            raise DemoFileError(f"line {lineno}: 'traj_id' must be an integer")
        t = obj["t"]
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not np.isfinite(t):
            raise DemoFileError(f"line {lineno}: 't' must be a finite number")
        x = _real_list(obj["x"], "x", lineno)
        u = _real_list(obj["u"], "u", lineno)
        if arity is None:
            arity = (len(x), len(u))
        elif (len(x), len(u)) != arity:
            raise DemoFileError(
                f"line {lineno}: x/u arity {(len(x), len(u))} differs from the file's {arity}"
            )
        g = groups.setdefault(tid, ([], [], []))
        if g[0] and not t > g[0][-1]:
            raise DemoFileError(f"line {lineno}: t must be strictly increasing within traj_id {tid}")
        g[0].append(float(t))
        g[1].append(x)
        g[2].append(u)
    if not groups:
        raise DemoFileError("file contains no trajectory rows")
    return tuple(
        Trajectory(np.array(xs), np.array(us), np.array(ts)) for ts, xs, us in groups.values()
    )


def read_trajectories(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        return parse_trajectories(fh)


def read_demos(path, scenario="file") -> DemoSet:
    trajs = read_trajectories(path)
    steps = np.concatenate([np.diff(t.timestamps) for t in trajs if len(t.timestamps) > 1] or [[DT]])
    return DemoSet(trajs, scenario, float(np.median(steps)))


def write_demos(path, demos: DemoSet) -> None:
    write_trajectories(path, demos.trajectories)

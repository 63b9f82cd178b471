"""``bgmm`` command line: gen-demos, train, predict, rollout, bench, plot.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
Outputs are pure functions of (inputs, seed); wall-clock figures only ever
appear under a separate ``timing`` key or on stderr.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import bench as bench_mod
from . import svg
from .bgmm import Dataset, load_model, save_model, vb_fit
from .config import ConfigError, check_scenario, load_config
from .distributions import BlockSplit
from .errors import FitError, MomentUndefinedError, SingularMatrixError, SolverError
from .io import DemoFileError, read_demos, read_trajectories, write_demos, write_trajectories
from .regression import moment_match_mixture
from .simlab.experiments import Grid, build_policy, entropy_map, flow_field, shift_experiment
from .simlab.policies import regressor_for
from .simlab.rollout import PointMassSystem
from .simlab.scenarios import SCENARIOS, generate_demos

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

PLOT_KINDS = ("flowfield", "entropy_map", "rollouts")


class UsageError(ValueError):
    pass


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


# ---------------------------------------------------------------------------
# verbs


def cmd_gen_demos(args):
    cfg = load_config(args.config)
    exp = cfg.experiment
    scenario = check_scenario(args.scenario or exp.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    n = exp.n_demos if args.n_demos is None else args.n_demos
    if n < 1:
        raise UsageError("--n-demos must be >= 1")
    demos = generate_demos(scenario, n, seed, exp.noise_std)
    write_demos(args.out, demos)
    print(f"wrote {len(demos.trajectories)} trajectories ({len(demos.joint())} rows) to {args.out}")
    return EXIT_OK


def _train(demos, cfg, seed):
    x_dim = demos.trajectories[0].states.shape[1]
    u_dim = demos.trajectories[0].controls.shape[1]
    if (x_dim, u_dim) != (cfg.system.state_dim, cfg.system.control_dim):
        raise UsageError(
            f"demo arity (x={x_dim}, u={u_dim}) does not match system dims "
            f"(state_dim={cfg.system.state_dim}, control_dim={cfg.system.control_dim})"
        )
    Z = demos.joint()
    data = Dataset(Z, BlockSplit.first(x_dim, u_dim))
    prior = cfg.prior.build(Z)
    return vb_fit(data, prior, cfg.weight_prior.build(), cfg.fit.build(seed))


def cmd_train(args):
    cfg = load_config(args.config)
    demos = read_demos(args.demos)
    seed = cfg.seed if args.seed is None else args.seed
    t0 = time.perf_counter()
    post = _train(demos, cfg, seed)
    wall = time.perf_counter() - t0
    save_model(post, args.out)
    summary = {
        "result": {
            "n_components": post.n_components,
            "final_elbo": post.elbo_trace[-1] if post.elbo_trace else None,
            "n_iter": post.n_iter,
            "prior_weight": post.prior_weight,
            "model": str(args.out),
        },
        "timing": {"wall_s": wall},
    }
    sys.stdout.write(_dump_json(summary))
    return EXIT_OK


def _parse_vector(text, where):
    text = text.strip()
    try:
        if text.startswith("["):
            vals = json.loads(text)
        else:
            vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{where}: cannot parse a real vector from {text!r}") from None
    if not isinstance(vals, list) or not vals or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals
    ):
        raise UsageError(f"{where}: expected a non-empty list of numbers")
    x = np.array(vals, dtype=float)
    if not np.all(np.isfinite(x)):
        raise UsageError(f"{where}: non-finite entries")
    return x


def _queries(args):
    if args.x is not None:
        return [_parse_vector(args.x, "--x")]
    qs = [_parse_vector(line, f"stdin line {i}") for i, line in enumerate(sys.stdin, start=1) if line.strip()]
    if not qs:
        raise UsageError("no queries: pass --x or one vector per line on stdin")
    return qs


def predict_report(post, queries):
    reg = regressor_for(post)
    d_in = post.split.d_in
    rows, latency = [], []
    for i, x in enumerate(queries):
        if x.shape != (d_in,):
            raise UsageError(f"query {i} has {x.size} entries, the model expects {d_in}")
        t0 = time.perf_counter()
        cm = reg.condition(x)
        mm = moment_match_mixture(cm)
        latency.append(time.perf_counter() - t0)
        rows.append({
            "x": _floats(x),
            "weights": _floats(cm.weights),
            "components": [
                {"loc": _floats(m), "scale": _floats(s), "dof": float(v)}
                for m, s, v in zip(cm.locs, cm.scales, cm.dofs)
            ],
            "moment_matched": {"mean": _floats(mm.mean), "cov": _floats(mm.cov),
                               "entropy_proxy": float(mm.entropy_proxy)},
            "far_query": bool(cm.far_query),
        })
    timing = {"per_query_s": latency, "median_s": float(np.median(latency))}
    return {"queries": rows}, timing


def cmd_predict(args):
    post = load_model(args.model)
    result, timing = predict_report(post, _queries(args))
    _emit(_dump_json({"result": result, "timing": timing}), args.out)
    return EXIT_OK


def cmd_rollout(args):
    cfg = load_config(args.config)
    exp = cfg.experiment
    scenario = check_scenario(args.scenario or exp.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    post = load_model(args.model)
    recipes = [r.strip() for r in (args.recipe or cfg.policy.recipe).split(",") if r.strip()]
    if not recipes:
        raise UsageError("empty recipe")
    demos = generate_demos(scenario, exp.n_demos, seed, exp.noise_std)
    psys = PointMassSystem(dim=cfg.system.state_dim, dt=cfg.system.dt)
    params = cfg.policy.params(exp.steps)
    policies = {r: build_policy(r, post, psys, demos.goal, params) for r in recipes}
    report = shift_experiment(policies, demos, exp.shift_settings(), seed, psys)
    os.makedirs(args.out, exist_ok=True)
    traj_path = os.path.join(args.out, "trajectories.jsonl")
    csv_path = os.path.join(args.out, "metrics.csv")
    write_trajectories(traj_path, report.trajectories(psys.dt))
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_csv())
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_bench(args):
    if args.iterations < 1000:
        raise UsageError("--iterations must be >= 1000")
    report = bench_mod.run_suite(args.suite, args.iterations)
    out = {"suite": report["suite"], "hardware": report["hardware"], "timing": report["results"]}
    _emit(_dump_json(out), args.out)
    return EXIT_OK


def _load_model_artifact(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError:
        obj = None
    if not isinstance(obj, dict) or "components" not in obj:
        raise UsageError(f"{path} is not a model file")
    return load_model(path)


def default_grid(post, n=25):
    idx = list(post.split.in_idx)
    means = np.stack([c.mu0[idx] for c in post.components])
    lo, hi = means.min(axis=0), means.max(axis=0)
    pad = np.maximum(0.5 * (hi - lo), 0.5)
    lo, hi = lo - pad, hi + pad
    return Grid(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]), n, n)


def cmd_plot(args):
    if args.kind in ("flowfield", "entropy_map"):
        post = _load_model_artifact(args.artifact)
        if post.split.d_in != 2:
            raise UsageError(f"{args.kind} needs a 2D state, the model has {post.split.d_in}")
        grid = Grid.parse(args.grid) if args.grid else default_grid(post)
        if args.kind == "entropy_map":
            text = svg.entropy_map_svg(grid.xs, grid.ys, entropy_map(post, grid), "entropy map")
        else:
            if post.split.d_out != 2:
                raise UsageError("flowfield needs a 2D command")
            text = svg.flowfield_svg(grid.xs, grid.ys, flow_field(post, grid), "flow field")
    else:
        try:
            trajs = read_trajectories(args.artifact)
        except DemoFileError as exc:
            raise UsageError(f"{args.artifact} is not a trajectory file: {exc}") from None
        text = svg.rollouts_svg([t.states for t in trajs])
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="bgmm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-demos", help="write synthetic demonstrations as JSONL")
    g.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}")
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--n-demos", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_demos)

    t = sub.add_parser("train", help="fit a model to a demonstration file")
    t.add_argument("--demos", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    q = sub.add_parser("predict", help="conditional report for --x or stdin queries")
    q.add_argument("--model", required=True)
    q.add_argument("--x", help="comma-separated input vector (write --x=-1,2 for a leading minus); "
                   "otherwise one vector per stdin line")
    q.add_argument("--out")
    q.set_defaults(fn=cmd_predict)

    r = sub.add_parser("rollout", help="run a fusion recipe on a scenario, write JSONL + CSV")
    r.add_argument("--model", required=True)
    r.add_argument("--config")
    r.add_argument("--recipe", help="e.g. imitation+conservative+endpoint; comma-separate several")
    r.add_argument("--scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(fn=cmd_rollout)

    b = sub.add_parser("bench", help="timing suite")
    b.add_argument("--suite", choices=bench_mod.SUITES, required=True)
    b.add_argument("--iterations", type=int, default=1000)
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)

    pl = sub.add_parser("plot", help="write a static SVG")
    pl.add_argument("artifact", help="model JSON (flowfield, entropy_map) or trajectory JSONL (rollouts)")
    pl.add_argument("--kind", choices=PLOT_KINDS, required=True)
    pl.add_argument("--grid", help="x0:x1:nx,y0:y1:ny (write --grid=-2:2:41,... for a leading minus)")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.fn(args)
    except (FitError, SingularMatrixError, SolverError, MomentUndefinedError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"bgmm {args.verb}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DemoFileError, UsageError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"bgmm {args.verb}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

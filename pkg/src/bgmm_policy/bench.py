"""Micro-benchmarks for the fusion products and conditional queries."""

import os
import platform
import time

import numpy as np

from .distributions import BlockSplit, MvnDist, MvtDist, MvtMixture
from .fusion import MixtureOfMvn, fuse_mixture_mixture, fuse_mixture_mvn
from .regression import MixtureRegressor

SUITES = ("fusion", "predict")


def hardware_descriptor() -> str:
    return (
        f"{platform.machine()} {platform.processor() or 'unknown-cpu'}; "
        f"{os.cpu_count()} logical cpus; {platform.system()} {platform.release()}; "
        f"python {platform.python_version()}; numpy {np.__version__}"
    )


def _random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.5 * np.eye(d)


def random_mvn_mixture(rng, K, d) -> MixtureOfMvn:
    w = rng.dirichlet(np.ones(K))
    return MixtureOfMvn(w, rng.standard_normal((K, d)), np.stack([_random_spd(rng, d) for _ in range(K)]))


def random_t_mixture(rng, K, d) -> MvtMixture:
    comps = tuple(MvtDist(rng.standard_normal(d), _random_spd(rng, d), 5.0 + rng.uniform(0, 20)) for _ in range(K))
    return MvtMixture(rng.dirichlet(np.ones(K)), comps)


def time_call(fn, iterations=1000, warmup=50):
    """Median and 95th percentile wall time in seconds; warm-up calls are discarded."""
    for _ in range(warmup):
        fn()
    samples = np.empty(iterations)
    for i in range(iterations):
        t0 = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - t0
    return {"median_s": float(np.median(samples)), "p95_s": float(np.percentile(samples, 95)),
            "iterations": iterations}


def bench_fusion(iterations=1000, K=25, d=7, seed=0):
    rng = np.random.default_rng(seed)
    a = random_mvn_mixture(rng, K, d)
    b = random_mvn_mixture(rng, K, d)
    e = MvnDist(rng.standard_normal(d), _random_spd(rng, d))
    return {
        f"mixture{K}_x_mixture{K}_d{d}": time_call(lambda: fuse_mixture_mixture(a, b), iterations),
        f"mixture{K}_x_mvn_d{d}": time_call(lambda: fuse_mixture_mvn(a, e), iterations),
    }


def bench_predict(iterations=1000, K=25, d_in=7, d_out=7, seed=0):
    rng = np.random.default_rng(seed)
    mix = random_t_mixture(rng, K, d_in + d_out)
    reg = MixtureRegressor(mix, BlockSplit.first(d_in, d_out))
    queries = rng.standard_normal((iterations + 50, d_in))
    it = iter(range(len(queries)))

    def query():
        reg.summary(queries[next(it)])

    return {f"condition_K{K}_d{d_in + d_out}": time_call(query, iterations)}


def run_suite(name: str, iterations=1000):
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    results = bench_fusion(iterations) if name == "fusion" else bench_predict(iterations)
    return {"suite": name, "hardware": hardware_descriptor(), "results": results}

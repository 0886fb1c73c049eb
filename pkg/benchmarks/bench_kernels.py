#!/usr/bin/env python3
"""Time the numba kernels against their fallbacks on the same inputs.

Both paths live in one process: the compiled functions are warmed up once
so compilation is excluded, and outputs are checked for bit-equality.

    python benchmarks/bench_kernels.py --d 4 --L 6 --sweeps 20
"""

import argparse
import json
import time

import numpy as np

from topostab import kernels
from topostab.dynamics import RateFunction
from topostab.lattice import build_lattice


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_sweep(geom, beta, sweeps, repeat, seed):
    rng = np.random.default_rng(seed)
    P = geom.n_plaquettes
    choices = rng.integers(0, P, size=sweeps * P)
    uniforms = rng.random(sweeps * P)
    accept = RateFunction("glauber", beta).acceptance(4)
    table = np.ascontiguousarray(geom.plaq_links)

    def run(kernel):
        spins = np.zeros(P, dtype=np.uint8)
        syn = np.zeros(geom.n_links, dtype=np.uint8)
        res = kernel(spins, syn, table, accept, choices, uniforms)
        return spins, res

    run(kernels._flip_sweep_jit)  # compile
    t_jit, (s_jit, r_jit) = best_of(lambda: run(kernels._flip_sweep_jit), repeat)
    t_py, (s_py, r_py) = best_of(lambda: run(kernels._flip_sweep_py), 1)
    assert np.array_equal(s_jit, s_py) and tuple(r_jit) == tuple(r_py), "backends disagree"
    return {"kernel": "flip_sweep", "attempts": int(choices.size), "numba_s": t_jit, "fallback_s": t_py}


def bench_components(geom, density, repeat, seed):
    rng = np.random.default_rng(seed)
    mask = (rng.random(geom.n_links) < density).astype(np.uint8)
    ln = np.ascontiguousarray(geom.link_nodes)
    kernels._component_sizes_jit(mask, ln, geom.n_nodes)
    t_jit, a = best_of(lambda: kernels._component_sizes_jit(mask, ln, geom.n_nodes), repeat)
    t_np, b = best_of(lambda: kernels._component_sizes_np(mask, ln, geom.n_nodes), repeat)
    assert np.array_equal(a, b), "backends disagree"
    return {"kernel": "component_sizes", "links": int(mask.sum()), "numba_s": t_jit, "fallback_s": t_np}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--sweeps", type=int, default=5)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    if not kernels.JIT_ENABLED:
        raise SystemExit("numba is disabled (TOPOSTAB_DISABLE_JIT); nothing to compare")
    geom = build_lattice(args.d, args.L)
    for row in (
        bench_sweep(geom, args.beta, args.sweeps, args.repeat, args.seed),
        bench_components(geom, 0.05, args.repeat, args.seed),
    ):
        row["speedup"] = row["fallback_s"] / row["numba_s"]
        print(json.dumps(row))


if __name__ == "__main__":
    main()

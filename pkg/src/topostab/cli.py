"""Command-line experiment runner.

Every output file starts with the generating spec (a ``# spec {...}`` line
for CSV, a ``{"spec": ...}`` record for JSON/JSONL) so runs can be replayed
with ``--replay``.  Stochastic commands refuse to run without ``--seed``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("topostab")

CSV_COLUMNS = ["d", "L", "beta", "estimator", "value", "stderr", "n", "seed"]
STOCHASTIC = {"sample", "peierls", "one-step", "trajectory", "decode-bench"}


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    kind: str
    d: int = 3
    L: list = field(default_factory=lambda: [4])
    beta: list = field(default_factory=lambda: [1.0])
    rates: str = "glauber"
    n: int = 1000
    burn_in: int | None = None
    thinning: int = 1
    observable: str = "x"
    axes: list | None = None
    offset: int = 0
    c: float | None = None
    thresholds: list = field(default_factory=lambda: [4, 6, 8, 10, 12])
    times: list = field(default_factory=lambda: [0, 1, 2, 5, 10, 20, 50])
    chains: int = 64
    max_length: int = 24
    system: str = "kitaev2d"
    seed: int | None = None
    jobs: int = 1
    out: str | None = None

    def validate(self):
        if self.kind in STOCHASTIC and self.seed is None:
            raise ValueError(f"{self.kind} needs an explicit --seed")
        if self.d not in (2, 3, 4):
            raise ValueError(f"d must be 2, 3 or 4, got {self.d}")
        if any(int(L) < 2 for L in self.L):
            raise ValueError("every L must be at least 2")
        if any(b < 0 for b in self.beta):
            raise ValueError("beta must be non-negative")
        if self.n < 16 and self.kind in ("peierls", "one-step"):
            raise ValueError("need at least 16 samples for batch-means errors")
        if self.rates not in ("glauber", "metropolis"):
            raise ValueError(f"unknown rate family {self.rates!r}")
        if self.observable not in ("x", "z"):
            raise ValueError("observable must be 'x' or 'z'")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**data)


# the acceptance criteria as runnable experiments
PRESETS = {
    "peierls-3d": dict(kind="peierls", d=3, L=[6], beta=[2.5], n=20000, thinning=2,
                       thresholds=[4, 6, 8, 10, 12, 14, 16], seed=6),
    "one-step-4d": dict(kind="one-step", d=4, L=[3, 4, 5], beta=[3.0], n=100000, c=2.0, seed=7),
    "oracle-kitaev": dict(kind="oracle", system="kitaev2d", beta=[1.0]),
    "asymmetry-3d": dict(kind="trajectory", d=3, L=[6], beta=[3.0], chains=64,
                         times=[0, 1, 2, 5, 10, 20, 50, 100, 200], seed=8),
    "decode-bench": dict(kind="decode-bench", d=4, L=[8], n=1000, max_length=24, seed=2),
}


def _parse_list(text, cast):
    if isinstance(text, (list, tuple)):
        return [cast(x) for x in text]
    return [cast(x) for x in str(text).replace(",", " ").split()]


_CASTS = {
    "d": int, "n": int, "burn_in": int, "thinning": int, "offset": int, "chains": int,
    "max_length": int, "seed": int, "jobs": int,
    "L": lambda v: _parse_list(v, int), "beta": lambda v: _parse_list(v, float),
    "thresholds": lambda v: _parse_list(v, int), "times": lambda v: _parse_list(v, int),
    "axes": lambda v: _parse_list(v, int),
    "c": lambda v: None if str(v).lower() in ("none", "box") else float(v),
}


def load_config(path) -> dict:
    """Read ``key = value`` pairs from the ``[experiment]`` section (or top level)."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "L" distinct from "l"
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser.read_string(text)
    section = parser["experiment"] if parser.has_section("experiment") else parser.defaults()
    out = {}
    for k, v in section.items():
        k = k.replace("-", "_")
        out[k] = _CASTS.get(k, str)(v)
    return out


# ---------------------------------------------------------------- runners


def _task_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def _rates(spec, beta):
    from .dynamics import RateFunction

    return RateFunction(spec.rates, beta)


class CsvSink:
    def __init__(self, spec: ExperimentSpec, path):
        self.fh = open(path, "w", newline="") if path else sys.stdout
        self.owned = bool(path)
        self.fh.write(f"# spec {spec.to_json()}\n")
        self.writer = csv.DictWriter(self.fh, CSV_COLUMNS, lineterminator="\n")
        self.writer.writeheader()
        self.fh.flush()

    def write(self, row: dict):
        row = dict(row)
        for k in ("value", "stderr", "beta"):
            row[k] = repr(float(row[k]))
        self.writer.writerow(row)
        self.fh.flush()

    def close(self):
        if self.owned:
            self.fh.close()


def _peierls_task(args):
    spec, L, beta, idx = args
    from .dynamics import estimate_loop_tail, iter_gibbs, max_loop_lengths
    from .lattice import build_lattice

    g = build_lattice(spec.d, L)
    seed = _task_seed(spec.seed, idx)
    samples = iter_gibbs(g, _rates(spec, beta), spec.n, seed, spec.burn_in, spec.thinning)
    lengths = max_loop_lengths(g, samples)
    return [estimate_loop_tail(g, None, l, beta, spec.seed, lengths) for l in spec.thresholds], lengths


def run_peierls(spec: ExperimentSpec, sink: CsvSink):
    from .dynamics import EstimatorResult, fit_tail_slope

    tasks = [(spec, L, b, i) for i, (L, b) in enumerate((L, b) for L in spec.L for b in spec.beta)]
    for (_, L, beta, _), (results, lengths) in zip(tasks, _map(spec, _peierls_task, tasks)):
        for r in results:
            sink.write(r.row())
        slope, err, _ = fit_tail_slope(spec.thresholds, [r.value for r in results], len(lengths))
        sink.write(EstimatorResult("peierls_slope", slope, err, len(lengths), beta, L, spec.d, spec.seed).row())


def _one_step_task(args):
    spec, L, beta, idx = args
    from .decoder import DressedObservable
    from .dynamics import estimate_one_step_sum, iter_gibbs
    from .homology import Frame
    from .lattice import build_lattice, dual_plane

    g = build_lattice(spec.d, L)
    axes = tuple(spec.axes) if spec.axes else tuple(range(spec.d - 2)) if spec.d > 2 else ()
    obs = DressedObservable(g, dual_plane(g, axes or (0,), spec.offset), Frame.default(spec.d), spec.c)
    seed = _task_seed(spec.seed, idx)
    samples = iter_gibbs(g, _rates(spec, beta), spec.n, seed, spec.burn_in, spec.thinning)
    return estimate_one_step_sum(g, samples, obs, beta, spec.seed)


def run_one_step(spec: ExperimentSpec, sink: CsvSink):
    from .dynamics import EstimatorResult, decay_rate_bound

    tasks = [(spec, L, b, i) for i, (L, b) in enumerate((L, b) for L in spec.L for b in spec.beta)]
    width = 4  # a plaquette flip toggles its four links
    for (_, L, beta, _), r in zip(tasks, _map(spec, _one_step_task, tasks)):
        sink.write(r.row())
        h = _rates(spec, beta).h_max(width)
        sink.write(EstimatorResult("decay_rate_bound", decay_rate_bound(r.value, h),
                                   decay_rate_bound(r.stderr, h), r.n, beta, L, spec.d, spec.seed).row())


def _map(spec, fn, tasks):
    if spec.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            yield from pool.map(fn, tasks)
    else:
        for t in tasks:
            yield fn(t)


def run_trajectory(spec: ExperimentSpec, fh):
    from .dynamics import ObservableSpec, autocorr_trajectory
    from .lattice import build_lattice

    fh.write(json.dumps({"spec": json.loads(spec.to_json())}) + "\n")
    for i, (L, beta) in enumerate((L, b) for L in spec.L for b in spec.beta):
        g = build_lattice(spec.d, L)
        default_axes = (1, 2) if spec.observable == "z" else tuple(range(spec.d - 2)) or (0,)
        obs = ObservableSpec(spec.observable, tuple(spec.axes or default_axes), spec.offset, spec.c)
        res = autocorr_trajectory(g, beta, _rates(spec, beta), obs, spec.times, spec.chains,
                                  _task_seed(spec.seed, i), spec.burn_in)
        for t, m, e in zip(res.times, res.mean, res.stderr):
            fh.write(json.dumps({"d": spec.d, "L": L, "beta": beta, "observable": spec.observable,
                                 "t": int(t), "mean": float(m), "stderr": float(e),
                                 "n": res.n_chains}) + "\n")
            fh.flush()


def run_oracle(spec: ExperimentSpec) -> dict:
    from . import davies

    beta = spec.beta[0]
    if spec.system == "kitaev2d":
        full, reduced, stars, plaqs, logical = davies.kitaev_2d(2)
        X = davies.pauli(davies.pauli_on(full.n, {j: "X" for j in logical}))
        gen = davies.DaviesGenerator(full, beta)
        check = davies.verify_classical_reduction(full, reduced, stars, plaqs, logical, beta)
        rate = davies.decay_rate(full, beta, X, gen)
        bound = davies.upper_bound_rate(full, beta, X, gen)
        residuals = {"classical_reduction": check["residual"], **_generator_residuals(gen, spec)}
        out = {"rate": rate, "bound": bound, "dissipation": check["quantum"],
               "classical": check["classical"], "residuals": residuals}
    else:
        system = davies.SmallSystem.from_json(Path(spec.system).read_text())
        gen = davies.DaviesGenerator(system, beta)
        H = system.H
        out = {"rate": davies.decay_rate(system, beta, H, gen) if np.abs(H).max() > 0 else 0.0,
               "bound": davies.upper_bound_rate(system, beta, H, gen),
               "residuals": _generator_residuals(gen, spec)}
    out["spec"] = json.loads(spec.to_json())
    if any(v > 1e-8 for v in out["residuals"].values()):
        raise InvariantViolation(f"oracle residuals too large: {out['residuals']}")
    if out["bound"] < out["rate"] * (1 - 1e-12) and spec.system == "kitaev2d":
        raise InvariantViolation("upper bound below exact rate")
    return out


def _generator_residuals(gen, spec) -> dict:
    rng = np.random.default_rng(0 if spec.seed is None else spec.seed)
    D = gen.system.dim
    A = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    A = A + A.conj().T
    B = rng.normal(size=(D, D))
    B = B + B.T
    return {
        "identity": float(np.abs(gen(np.eye(D))).max()),
        "stationarity": abs(np.trace(gen.rho @ gen(A))),
        "detailed_balance": abs(gen.inner(B, gen.dissipator(A)) - gen.inner(gen.dissipator(B), A)),
    }


def run_decode_bench(spec: ExperimentSpec, sink: CsvSink):
    from .decoder import _close_links, close_loop_steps, random_confined_loop, surface_within_box
    from .dynamics import EstimatorResult, batch_means
    from .homology import Frame, boundary, empty_spins
    from .lattice import build_lattice

    for i, L in enumerate(spec.L):
        g = build_lattice(spec.d, L)
        rng = np.random.default_rng(_task_seed(spec.seed, i))
        loops = [random_confined_loop(g, rng, spec.max_length) for _ in range(spec.n)]
        _close_links.cache_clear()
        times, ratios = [], []
        for lp in loops:
            t0 = time.perf_counter()
            surface, steps = close_loop_steps(g, lp, Frame.default(g.d))
            times.append(time.perf_counter() - t0)
            S = empty_spins(g)
            S[surface] = 1
            if set(np.flatnonzero(boundary(g, S))) != lp.link_set:
                raise InvariantViolation("closure boundary differs from the loop")
            if steps > len(lp) / 2 or not surface_within_box(g, lp, surface):
                raise InvariantViolation("closure exceeded its step or box budget")
            ratios.append(steps / len(lp))
        for name, vals in (("close_seconds", times), ("steps_per_link", ratios)):
            m, e = batch_means(vals)
            sink.write(EstimatorResult(name, m, e, len(vals), float("nan"), L, spec.d, spec.seed).row())


def run_sample(spec: ExperimentSpec, fh):
    from .dynamics import iter_gibbs
    from .homology import encode_config
    from .lattice import build_lattice

    fh.write(json.dumps({"spec": json.loads(spec.to_json())}) + "\n")
    g = build_lattice(spec.d, spec.L[0])
    beta = spec.beta[0]
    for S in iter_gibbs(g, _rates(spec, beta), spec.n, _task_seed(spec.seed, 0), spec.burn_in, spec.thinning):
        fh.write(json.dumps({"config": encode_config(g, S)}) + "\n")
    fh.flush()


def lattice_info(d: int, L: int) -> dict:
    from .lattice import build_lattice, representative_planes

    g = build_lattice(d, L)
    return {"d": d, "L": L, "cells": [g.n_cells(k) for k in range(d + 1)],
            "spins": g.n_plaquettes, "winding_bits": len(representative_planes(g)),
            "plaquettes_per_link": int(g.link_plaqs.shape[1])}


def run_verify(seed: int = 0) -> dict:
    """Quick invariant suite; raises :class:`InvariantViolation` on the first failure."""
    from . import davies
    from .decoder import close_loop, random_confined_loop
    from .homology import boundary, flip_cube, winding_label
    from .lattice import build_lattice, primal_plane

    rng = np.random.default_rng(seed)
    report = {}
    for d, L in ((3, 3), (4, 3)):
        g = build_lattice(d, L)
        for _ in range(50):
            S = rng.integers(0, 2, g.n_plaquettes, dtype=np.uint8)
            K = boundary(g, S)
            if np.any(K[g.node_links].sum(axis=1) & 1):
                raise InvariantViolation("boundary of a boundary is not empty")
            c = int(rng.integers(g.n_cubes))
            if not np.array_equal(boundary(g, flip_cube(g, S, c)), K):
                raise InvariantViolation("cube flip changed the syndrome")
            P = primal_plane(g, (0, 1), int(rng.integers(L)))
            Z = P.mask(g.n_plaquettes)
            if not np.array_equal(winding_label(g, Z), winding_label(g, flip_cube(g, Z, c))):
                raise InvariantViolation("cube flip changed a winding label")
        report[f"homology_d{d}_L{L}"] = "ok"
    g = build_lattice(4, 8)
    for _ in range(50):
        lp = random_confined_loop(g, rng)
        if set(np.flatnonzero(boundary(g, close_loop(g, lp)))) != lp.link_set:
            raise InvariantViolation("closure boundary differs from the loop")
    report["decoder"] = "ok"
    oracle = run_oracle(ExperimentSpec("oracle", beta=[1.0], seed=seed))
    report["oracle_residuals"] = oracle["residuals"]
    return report


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topostab", description="Thermal stability experiments on toric codes.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    info = sub.add_parser("lattice-info", help="cell counts of a torus")
    info.add_argument("--d", type=int, required=True)
    info.add_argument("--L", type=int, required=True)

    for name, helptext in (
        ("sample", "write Gibbs samples as serialized configurations"),
        ("peierls", "loop-length tail probabilities and their log slope"),
        ("one-step", "one-step sum of the dressed observable per L"),
        ("trajectory", "autocorrelation of a dressed observable in time"),
        ("oracle", "exact Davies decay rate, bound and residuals"),
        ("decode-bench", "closure correctness and speed on random loops"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="key = value file with spec fields")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--replay", help="rerun the spec embedded in an earlier output")
        sp.add_argument("--d", type=int)
        sp.add_argument("--L", type=lambda v: _parse_list(v, int))
        sp.add_argument("--beta", type=lambda v: _parse_list(v, float))
        sp.add_argument("--rates", choices=["glauber", "metropolis"])
        sp.add_argument("--n", type=int)
        sp.add_argument("--burn-in", type=int)
        sp.add_argument("--thinning", type=int)
        sp.add_argument("--observable", choices=["x", "z"])
        sp.add_argument("--axes", type=lambda v: _parse_list(v, int))
        sp.add_argument("--offset", type=int)
        sp.add_argument("--c", type=_CASTS["c"], help="short-loop fraction, or 'box'")
        sp.add_argument("--thresholds", type=lambda v: _parse_list(v, int))
        sp.add_argument("--times", type=lambda v: _parse_list(v, int))
        sp.add_argument("--chains", type=int)
        sp.add_argument("--max-length", type=int)
        sp.add_argument("--system", help="'kitaev2d' or a JSON system file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--out", help="output path (stdout if omitted)")

    v = sub.add_parser("verify", help="run the quick invariant suite")
    v.add_argument("--seed", type=int, default=0)
    return p


def read_embedded_spec(path) -> dict:
    first = Path(path).read_text().splitlines()[0]
    if first.startswith("# spec "):
        return json.loads(first[len("# spec "):])
    data = json.loads(first)
    if "spec" not in data:
        raise ValueError(f"{path} carries no spec")
    return data["spec"]


def spec_from_args(args) -> ExperimentSpec:
    kind = args.command
    data: dict = {}
    if args.replay:
        data.update(read_embedded_spec(args.replay))
    if args.preset:
        preset = dict(PRESETS[args.preset])
        if preset["kind"] != kind:
            raise ValueError(f"preset {args.preset} is for '{preset['kind']}', not '{kind}'")
        data.update(preset)
    if args.config:
        data.update(load_config(args.config))
    for f in dataclasses.fields(ExperimentSpec):
        val = getattr(args, f.name, None)
        if val is not None and f.name != "kind":
            data[f.name] = val
    data["kind"] = kind
    return ExperimentSpec.from_dict(data).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "lattice-info":
            print(json.dumps(lattice_info(args.d, args.L)))
            return 0
        if args.command == "verify":
            print(json.dumps(run_verify(args.seed), indent=2))
            return 0
        spec = spec_from_args(args)
        if spec.kind == "oracle":
            text = json.dumps(run_oracle(spec), indent=2)
            if spec.out:
                Path(spec.out).write_text(text + "\n")
            else:
                print(text)
            return 0
        if spec.kind in ("trajectory", "sample"):
            fh = open(spec.out, "w") if spec.out else sys.stdout
            try:
                (run_trajectory if spec.kind == "trajectory" else run_sample)(spec, fh)
            finally:
                if spec.out:
                    fh.close()
            return 0
        sink = CsvSink(spec, spec.out)
        try:
            {"peierls": run_peierls, "one-step": run_one_step, "decode-bench": run_decode_bench}[spec.kind](spec, sink)
        finally:
            sink.close()
        return 0
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

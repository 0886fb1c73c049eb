"""Classical single-flip dynamics of the Z2 gauge model and its estimators.

Energies are counted in excited syndrome cells (one unit per excited link
for the X-type model, per excited cube for the Z-type model).  The usual
factor of two in the stabilizer Hamiltonian is absorbed into ``beta``.
Time is measured in sweeps: one sweep is ``n_plaquettes`` flip attempts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .decoder import DressedObservable, measure_dressed, measure_dressed_z, z_plane_observable_3d
from .homology import DEFAULT_C, Frame, boundary
from .kernels import component_sizes, flip_sweep
from .lattice import LatticeGeometry, dual_plane, primal_plane

log = logging.getLogger(__name__)

__all__ = [
    "RateFunction",
    "ChainState",
    "EstimatorResult",
    "ObservableSpec",
    "energy",
    "local_energy_delta",
    "mcmc_step",
    "iter_gibbs",
    "sample_gibbs",
    "batch_means",
    "max_loop_lengths",
    "estimate_loop_tail",
    "estimate_one_step_sum",
    "one_step_terms",
    "decay_rate_bound",
    "autocorr_trajectory",
    "fidelity_lower_bound",
    "fit_tail_slope",
    "make_observable",
]


@dataclass(frozen=True)
class RateFunction:
    """Transition rate as a function of the energy change of a move.

    ``glauber``: ``1 / (1 + exp(beta dE))``; ``metropolis``:
    ``min(1, exp(-beta dE))``; ``custom``: an explicit ``{dE: rate}`` table,
    which must satisfy ``r(dE) / r(-dE) = exp(-beta dE)``.
    """

    family: str = "glauber"
    beta: float = 1.0
    table: dict | None = None

    def __post_init__(self):
        if self.family not in ("glauber", "metropolis", "custom"):
            raise ValueError(f"unknown rate family {self.family!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.family == "custom":
            if not self.table:
                raise ValueError("custom rates need a table")
            for de, r in self.table.items():
                if r <= 0:
                    raise ValueError(f"rate for dE={de} must be positive")
                if -de in self.table:
                    ratio = r / self.table[-de]
                    if not np.isclose(ratio, np.exp(-self.beta * de), rtol=1e-9, atol=0):
                        raise ValueError(f"custom table violates detailed balance at dE={de}")

    @classmethod
    def from_spectral(cls, spectral: Callable, beta: float, gaps, energy_unit: float = 2.0) -> "RateFunction":
        """Rates induced by a bath spectral function.

        A move with cell-count change ``dE`` changes the Hamiltonian energy by
        ``energy_unit * dE``; the bath absorbs that, so the rate is
        ``spectral(-energy_unit * dE)``.  ``beta`` is the Hamiltonian inverse
        temperature; the returned table lives at ``beta * energy_unit``.
        """
        table = {int(g): float(spectral(-energy_unit * g, beta)) for g in gaps}
        return cls("custom", beta * energy_unit, table)

    def rate(self, dE):
        dE = np.asarray(dE, dtype=float)
        if self.family == "glauber":
            return 0.5 * (1.0 - np.tanh(0.5 * self.beta * dE))
        if self.family == "metropolis":
            return np.minimum(1.0, np.exp(-self.beta * dE))
        try:
            out = np.vectorize(lambda x: self.table[int(round(x))])(dE)
        except KeyError as exc:
            raise ValueError(f"no custom rate for dE={exc.args[0]}") from None
        return out.astype(float)

    def gaps(self, width: int) -> np.ndarray:
        """Energy changes reachable by one flip toggling ``width`` cells."""
        return np.arange(-width, width + 1, 2)

    def h_max(self, width: int = 4) -> float:
        """Largest rate among energy-lowering (or neutral) moves."""
        g = self.gaps(width)
        return float(np.max(self.rate(g[g <= 0])))

    def acceptance(self, width: int) -> np.ndarray:
        """Acceptance table indexed by ``dE + width`` for the flip kernel."""
        dE = np.arange(-width, width + 1)
        probs = np.zeros(dE.shape, dtype=float)
        reachable = (dE - width) % 2 == 0
        probs[reachable] = self.rate(dE[reachable])
        top = probs.max()
        if top > 1.0:
            probs /= top
        return probs


@dataclass(frozen=True)
class EstimatorResult:
    name: str
    value: float
    stderr: float
    n: int
    beta: float
    L: int
    d: int
    seed: int | None = None

    def row(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "beta": self.beta,
            "estimator": self.name,
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n,
            "seed": self.seed,
        }


def batch_means(values, n_batches: int = 32) -> tuple[float, float]:
    """Mean and batch-means standard error (at least 16 batches)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("no samples")
    n_batches = max(16, min(n_batches, n))
    if n < 16:
        raise ValueError(f"batch means needs at least 16 samples, got {n}")
    size = n // n_batches
    means = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(values.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))


def energy(geom: LatticeGeometry, S) -> int:
    """Number of excited links of ``S``."""
    return int(boundary(geom, S).sum())


def _cube_syndrome(geom, S):
    return (np.asarray(S, dtype=np.uint8)[geom.cube_plaqs].sum(axis=1) & 1).astype(np.uint8)


@dataclass
class ChainState:
    """Mutable chain: spins, incrementally maintained syndrome, energy.

    ``syndrome_kind`` is ``"links"`` for the plaquette-spin gauge model
    (excitations are loops) or ``"cubes"`` for its dual coupling
    (excitations are excited cubes).
    """

    geom: LatticeGeometry
    spins: np.ndarray
    syndrome_kind: str = "links"
    seed: int | None = None
    syndrome: np.ndarray = field(init=False)
    energy: int = field(init=False)
    sweeps: int = field(default=0, init=False)

    def __post_init__(self):
        self.spins = np.array(self.spins, dtype=np.uint8)
        if self.spins.shape != (self.geom.n_plaquettes,):
            raise ValueError("spin configuration has the wrong length")
        if self.syndrome_kind == "links":
            self.table = self.geom.plaq_links
        elif self.syndrome_kind == "cubes":
            if self.geom.d < 3:
                raise ValueError("cube syndrome needs d >= 3")
            self.table = self.geom.plaq_cubes
        else:
            raise ValueError(f"unknown syndrome kind {self.syndrome_kind!r}")
        self.syndrome = self.full_syndrome()
        self.energy = int(self.syndrome.sum())
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def cold(cls, geom, syndrome_kind="links", seed=None) -> "ChainState":
        return cls(geom, np.zeros(geom.n_plaquettes, dtype=np.uint8), syndrome_kind, seed)

    def full_syndrome(self) -> np.ndarray:
        if self.syndrome_kind == "links":
            return boundary(self.geom, self.spins)
        return _cube_syndrome(self.geom, self.spins)

    def check_integrity(self):
        if not np.array_equal(self.syndrome, self.full_syndrome()) or self.energy != int(self.syndrome.sum()):
            raise RuntimeError("cached syndrome diverged from the spin configuration")

    def sweep(self, rates: RateFunction, n_sweeps: int = 1) -> int:
        """Run ``n_sweeps`` sweeps of random-site flip attempts; returns accepted moves."""
        P = self.geom.n_plaquettes
        accept = rates.acceptance(self.table.shape[1])
        total = 0
        for _ in range(n_sweeps):
            choices = self.rng.integers(0, P, size=P)
            uniforms = self.rng.random(P)
            de, n = flip_sweep(self.spins, self.syndrome, self.table, accept, choices, uniforms)
            self.energy += de
            total += n
            self.sweeps += 1
        return total


def local_energy_delta(geom: LatticeGeometry, state: ChainState, j: int) -> int:
    """Energy change of flipping plaquette ``j`` in ``state``."""
    cells = state.table[j]
    return int(np.sum(1 - 2 * state.syndrome[cells].astype(np.int64)))


def mcmc_step(state: ChainState, rates: RateFunction, rng=None) -> bool:
    """One flip attempt at a uniformly chosen plaquette."""
    rng = rng if rng is not None else state.rng
    j = int(rng.integers(state.geom.n_plaquettes))
    accept = rates.acceptance(state.table.shape[1])
    de = local_energy_delta(state.geom, state, j)
    if rng.random() < accept[de + state.table.shape[1]]:
        state.spins[j] ^= 1
        state.syndrome[state.table[j]] ^= 1
        state.energy += de
        return True
    return False


def _default_burn_in(geom):
    return 100 * geom.L


def _stationarity(trace) -> bool:
    trace = np.asarray(trace, dtype=float)
    if trace.size < 4:
        return True
    half = trace.size // 2
    a, b = trace[:half], trace[half:]
    spread = np.sqrt(a.var() / a.size + b.var() / b.size)
    return bool(abs(a.mean() - b.mean()) <= 4 * spread + 1e-12)


def iter_gibbs(
    geom: LatticeGeometry,
    rates: RateFunction,
    n: int,
    seed: int,
    burn_in: int | None = None,
    thinning: int = 1,
    syndrome_kind: str = "links",
    state: ChainState | None = None,
    check_every: int = 1000,
) -> Iterator[np.ndarray]:
    """Yield ``n`` spin configurations from one chain (views; copy to keep)."""
    if thinning < 1:
        raise ValueError("thinning must be at least 1")
    burn_in = _default_burn_in(geom) if burn_in is None else burn_in
    if burn_in < 1:
        raise ValueError("burn_in must be at least 1")
    state = state or ChainState.cold(geom, syndrome_kind, seed)
    trace = []
    for _ in range(burn_in):
        state.sweep(rates)
        trace.append(state.energy)
    if not _stationarity(trace):
        log.warning("energy trace not stationary after %d burn-in sweeps (d=%d L=%d)", burn_in, geom.d, geom.L)
    for i in range(n):
        state.sweep(rates, thinning)
        if check_every and (i + 1) % check_every == 0:
            state.check_integrity()
        yield state.spins


@dataclass
class SampleSet:
    configs: list
    energies: np.ndarray
    burn_in_trace: np.ndarray
    stationary: bool

    def __len__(self):
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def __getitem__(self, i):
        return self.configs[i]


def sample_gibbs(
    geom: LatticeGeometry,
    beta: float,
    rates: RateFunction | None = None,
    burn_in: int | None = None,
    thinning: int = 1,
    n: int = 100,
    seed: int = 0,
    syndrome_kind: str = "links",
) -> SampleSet:
    """Draw ``n`` Gibbs samples; deterministic given ``seed``."""
    rates = rates or RateFunction("glauber", beta)
    if not np.isclose(rates.beta, beta):
        raise ValueError("rate function beta differs from the requested beta")
    burn_in = _default_burn_in(geom) if burn_in is None else burn_in
    state = ChainState.cold(geom, syndrome_kind, seed)
    trace = []
    for _ in range(burn_in):
        state.sweep(rates)
        trace.append(state.energy)
    configs, energies = [], []
    for cfg in iter_gibbs(geom, rates, n, seed, burn_in=1, thinning=thinning, state=state):
        configs.append(cfg.copy())
        energies.append(state.energy)
    trace = np.array(trace)
    return SampleSet(configs, np.array(energies), trace, _stationarity(trace))


def max_loop_lengths(geom: LatticeGeometry, samples: Iterable) -> np.ndarray:
    """Length of the longest syndrome loop in each sample (0 when none)."""
    out = []
    for S in samples:
        sizes = component_sizes(boundary(geom, S), geom.link_nodes, geom.n_nodes)
        out.append(int(sizes[0]) if sizes.size else 0)
    return np.array(out, dtype=np.int64)


def estimate_loop_tail(
    geom: LatticeGeometry,
    samples,
    l_threshold: int,
    beta: float = float("nan"),
    seed: int | None = None,
    lengths: np.ndarray | None = None,
) -> EstimatorResult:
    """Fraction of samples containing a loop with at least ``l_threshold`` links."""
    lengths = max_loop_lengths(geom, samples) if lengths is None else np.asarray(lengths)
    if lengths.size == 0:
        raise ValueError("no samples")
    hits = (lengths >= l_threshold).astype(float) if l_threshold > 0 else np.ones(lengths.size)
    value, err = batch_means(hits)
    return EstimatorResult(f"loop_tail_{l_threshold}", value, err, int(lengths.size), beta, geom.L, geom.d, seed)


def one_step_terms(observable: DressedObservable, S) -> float:
    """``sum_j (1 - T(S) T(sigma_j S))`` for one configuration."""
    value, after = observable.flip_values(S)
    return float(np.sum(1 - value * after))


def estimate_one_step_sum(
    geom: LatticeGeometry,
    samples,
    observable: DressedObservable,
    beta: float = float("nan"),
    seed: int | None = None,
    validate_fraction: float = 0.01,
    validate_sites: int = 4,
) -> EstimatorResult:
    """Gibbs average of the one-step sum of a dressed observable.

    A random ``validate_fraction`` of samples is re-measured from scratch at
    ``validate_sites`` random plaquettes (always including those near
    loops, if any) and must agree with the incremental look-ahead.
    """
    rng = np.random.default_rng(None if seed is None else seed + 7919)
    terms = []
    for S in samples:
        value, after = observable.flip_values(S)
        terms.append(float(np.sum(1 - value * after)))
        if validate_fraction and rng.random() < validate_fraction:
            for j in rng.integers(0, geom.n_plaquettes, size=validate_sites):
                flipped = np.array(S, dtype=np.uint8)
                flipped[j] ^= 1
                direct = measure_dressed(geom, flipped, observable.T, observable.frame, observable.c).dressed
                if direct != after[j]:
                    raise RuntimeError(f"incremental look-ahead disagrees with full measurement at plaquette {j}")
    if not terms:
        raise ValueError("no samples")
    value, err = batch_means(terms)
    return EstimatorResult("one_step_sum", value, err, len(terms), beta, geom.L, geom.d, seed)


def fit_tail_slope(thresholds, probs, n: int, min_count: int = 10) -> tuple[float, float, int]:
    """Weighted least-squares slope of ``log P(loop >= l)`` against ``l``.

    Only thresholds with at least ``min_count`` hits out of ``n`` samples
    enter; weights are the hit counts (binomial variance of the log).
    Returns ``(slope, stderr, points used)``; the slope is ``nan`` when fewer
    than two thresholds qualify.
    """
    l = np.asarray(thresholds, dtype=float)
    p = np.asarray(probs, dtype=float)
    counts = p * n
    keep = counts >= min_count
    if keep.sum() < 2:
        return float("nan"), float("nan"), int(keep.sum())
    l, p, w = l[keep], p[keep], counts[keep] / np.maximum(1.0 - p[keep], 1e-12)
    A = np.vstack([l, np.ones_like(l)]).T
    W = np.diag(w)
    cov = np.linalg.inv(A.T @ W @ A)
    coef = cov @ A.T @ W @ np.log(p)
    return float(coef[0]), float(np.sqrt(cov[0, 0])), int(keep.sum())


def decay_rate_bound(one_step_sum: float, h_max: float) -> float:
    """Decay-rate bound ``4 h_max * one_step_sum``."""
    if one_step_sum < 0 or h_max < 0:
        raise ValueError("one-step sum and h_max must be non-negative")
    return 4.0 * h_max * one_step_sum


def fidelity_lower_bound(ax: float, az: float) -> float:
    """Average-fidelity lower bound from the X and Z autocorrelations."""
    for v in (ax, az):
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"autocorrelation {v} outside [-1, 1]")
    return 0.5 * (ax + az)


@dataclass(frozen=True)
class ObservableSpec:
    """Which dressed observable to track.

    ``kind="x"``: X-type on the dual plane (4D) or dual line (3D) spanning
    ``axes``.  ``kind="z"``: Z-type on the primal plane spanning ``axes``;
    it evolves under the cube-syndrome dynamics.
    """

    kind: str = "x"
    axes: tuple = (0, 1)
    offset: int = 0
    c: float | None = None
    frame: tuple | None = None


def make_observable(geom: LatticeGeometry, spec: ObservableSpec):
    """Return ``(callable S -> +-1, syndrome kind of the dynamics it needs)``."""
    frame = Frame(tuple(spec.frame)) if spec.frame else Frame.default(geom.d)
    if spec.kind == "x":
        obs = DressedObservable(geom, dual_plane(geom, spec.axes, spec.offset), frame, spec.c)
        return obs.value, "links"
    if spec.kind == "z":
        P = primal_plane(geom, spec.axes, spec.offset)
        if geom.d == 4:
            return (lambda S: measure_dressed_z(geom, S, P, frame, spec.c).dressed), "cubes"
        return (lambda S: z_plane_observable_3d(geom, S, P, frame)), "cubes"
    raise ValueError(f"unknown observable kind {spec.kind!r}")


@dataclass
class TrajectoryResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_chains: int
    per_chain: np.ndarray = field(repr=False)


def autocorr_trajectory(
    geom: LatticeGeometry,
    beta: float,
    rates: RateFunction | None,
    spec: ObservableSpec,
    times,
    n_chains: int,
    seed: int,
    burn_in: int | None = None,
) -> TrajectoryResult:
    """Average of ``T(0) T(t)`` over independent equilibrated chains.

    ``times`` are sweep counts after equilibration (non-decreasing integers).
    """
    times = np.asarray(times, dtype=np.int64)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("time grid must be a non-empty non-decreasing list of sweep counts")
    rates = rates or RateFunction("glauber", beta)
    observe, kind = make_observable(geom, spec)
    burn_in = _default_burn_in(geom) if burn_in is None else burn_in
    seeds = np.random.SeedSequence(seed).spawn(n_chains)
    prods = np.empty((n_chains, times.size))
    for c, ss in enumerate(seeds):
        state = ChainState.cold(geom, kind, ss)
        if burn_in:
            state.sweep(rates, burn_in)
        t0 = observe(state.spins)
        now = 0
        for i, t in enumerate(times):
            if t > now:
                state.sweep(rates, int(t - now))
                now = int(t)
            prods[c, i] = t0 * observe(state.spins)
        state.check_integrity()
    mean = prods.mean(axis=0)
    err = prods.std(axis=0, ddof=1) / np.sqrt(n_chains) if n_chains > 1 else np.zeros(times.size)
    return TrajectoryResult(times, mean, err, n_chains, prods)

"""Exact Gibbs averages by enumerating every spin configuration.

Feasible up to 2**26 states (e.g. d=3, L=2 with 24 plaquettes).  Each state
``s`` is an integer whose bit ``j`` is spin ``j``.  Syndromes are packed into
integers the same way, and are computed for all states at once by splitting
the spin bits into a high and a low half.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .decoder import DressedObservable
from .homology import Frame, boundary, loop_is_short, loops_from_links
from .kernels import component_sizes
from .lattice import LatticeGeometry

MAX_STATES_LOG2 = 26


def _masks(tables, width):
    # per spin: integer with the bits of the syndrome cells it toggles
    out = np.zeros(len(tables), dtype=np.uint64)
    for j, cells in enumerate(tables):
        for c in cells:
            out[j] ^= np.uint64(1) << np.uint64(c)
    return out


def _span_table(masks):
    # XOR of masks[j] over set bits j for every integer below 2**len(masks)
    table = np.zeros(1 << len(masks), dtype=np.uint64)
    for j, m in enumerate(masks):
        half = 1 << j
        table[half : 2 * half] = table[:half] ^ m
    return table


@dataclass(eq=False)
class ExactEnsemble:
    """All 2**P configurations of a tiny lattice with their Gibbs weights."""

    geom: LatticeGeometry
    beta: float

    def __post_init__(self):
        P, n_links = self.geom.n_plaquettes, self.geom.n_links
        if P > MAX_STATES_LOG2:
            raise ValueError(f"2**{P} states exceeds the enumeration cap of 2**{MAX_STATES_LOG2}")
        if n_links > 64:
            raise ValueError("syndromes must fit in 64 bits")
        lo_bits = P // 2
        masks = _masks(self.geom.plaq_links, 4)
        lo = _span_table(masks[:lo_bits])
        hi = _span_table(masks[lo_bits:])
        self.lo_bits = lo_bits
        self.syndromes = (hi[:, None] ^ lo[None, :]).ravel()
        self.energies = np.bitwise_count(self.syndromes).astype(np.int64)
        w = np.exp(-self.beta * (self.energies - self.energies.min()))
        self.weights = w / w.sum()

    @property
    def n_states(self) -> int:
        return self.syndromes.size

    def spins(self, s: int) -> np.ndarray:
        return ((int(s) >> np.arange(self.geom.n_plaquettes)) & 1).astype(np.uint8)

    def links(self, K: int) -> np.ndarray:
        return ((int(K) >> np.arange(self.geom.n_links)) & 1).astype(np.uint8)

    @cached_property
    def unique(self):
        keys, inverse = np.unique(self.syndromes, return_inverse=True)
        return keys, inverse

    @cached_property
    def syndrome_probs(self) -> np.ndarray:
        keys, inverse = self.unique
        return np.bincount(inverse, weights=self.weights, minlength=keys.size)

    @cached_property
    def max_loop(self) -> np.ndarray:
        keys, _ = self.unique
        g = self.geom
        out = np.zeros(keys.size, dtype=np.int64)
        for i, K in enumerate(keys):
            sizes = component_sizes(self.links(K), g.link_nodes, g.n_nodes)
            out[i] = sizes[0] if sizes.size else 0
        return out

    def loop_tail(self, l_threshold: int) -> float:
        """Exact probability that some loop has at least ``l_threshold`` links."""
        if l_threshold <= 0:
            return 1.0
        return float(self.syndrome_probs[self.max_loop >= l_threshold].sum())

    def loop_component_prob(self, loop_links) -> float:
        """Exact probability that the given link set appears as a whole loop."""
        keys, _ = self.unique
        target = 0
        for e in loop_links:
            target |= 1 << int(e)
        g = self.geom
        nodes = {int(n) for e in loop_links for n in g.link_nodes[e]}
        touching = 0
        for n in nodes:
            for e in g.node_links[n]:
                touching |= 1 << int(e)
        others = touching & ~target
        k = keys.astype(object)
        hit = np.array([(int(K) & touching) == target and (int(K) & others) == 0 for K in k])
        return float(self.syndrome_probs[hit].sum())

    def dressed_values(self, observable: DressedObservable) -> np.ndarray:
        """Dressed value of every state, as an int8 array."""
        g = self.geom
        keys, inverse = self.unique
        correction = np.ones(keys.size, dtype=np.int8)
        frame = observable.frame
        for i, K in enumerate(keys):
            links = np.flatnonzero(self.links(K))
            if links.size == 0:
                continue
            loops = loops_from_links(g, links, frame)
            if all(loop_is_short(g, lp, observable.c) for lp in loops):
                parity = sum(observable._info(lp).cross for lp in loops) & 1
                correction[i] = -1 if parity else 1
        t_bits = np.uint64(0)
        for j in observable.T.plaquettes:
            t_bits |= np.uint64(1) << np.uint64(int(j))
        states = np.arange(self.n_states, dtype=np.uint64)
        raw = np.where(np.bitwise_count(states & t_bits) & 1, -1, 1).astype(np.int8)
        return raw * correction[inverse]

    def one_step_sum(self, observable: DressedObservable) -> float:
        """Exact ``sum_j sum_S pi(S) (1 - T(S) T(sigma_j S))``."""
        T = self.dressed_values(observable).astype(np.int8)
        states = np.arange(self.n_states, dtype=np.int64)
        total = 0.0
        for j in range(self.geom.n_plaquettes):
            partner = T[states ^ (1 << j)]
            total += float(np.dot(self.weights, 1 - T * partner))
        return total

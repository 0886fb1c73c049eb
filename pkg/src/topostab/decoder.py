"""Measuring bare and dressed topological observables from a spin snapshot.

The dressed value of a dual plane ``T`` is its raw spin parity corrected by
the parity of ``|surface ∩ T|`` over confined surfaces that close each
syndrome loop.  Surfaces come from repeatedly shrinking a loop by two links
(:func:`reduce_loop`) until nothing is left (:func:`close_loop`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .homology import (
    DEFAULT_C,
    Frame,
    Loop,
    _steps_from,
    boundary,
    decompose_loops,
    empty_spins,
    is_cycle,
    link_components,
    links_short,
    loop_is_short,
    loops_from_links,
)
from .lattice import LatticeGeometry, Plane, primal_plane

__all__ = [
    "Frame",
    "Walk",
    "MeasurementRecord",
    "canonical_walk",
    "reduce_loop",
    "close_loop",
    "close_loop_steps",
    "bare_observable",
    "measure_dressed",
    "DressedObservable",
    "dual_spins",
    "measure_dressed_z",
    "z_plane_observable_3d",
    "random_confined_loop",
    "surface_within_box",
]


class WindingLoopError(ValueError):
    """The walk went all the way round a loop without turning back."""


@dataclass(frozen=True)
class Step:
    link: int
    tail: int
    head: int
    axis: int
    sign: int


@dataclass(frozen=True)
class Walk:
    steps: tuple[Step, ...]  # prefix including the stop step as the last entry
    opposite: int  # index into ``steps`` of the last step antiparallel to the stop step

    @property
    def stop(self) -> Step:
        return self.steps[-1]

    @property
    def segment(self) -> tuple[Step, ...]:
        return self.steps[self.opposite + 1 : -1]


def _walk_links(geom, links: frozenset, frame: Frame) -> Walk:
    if not links:
        raise ValueError("cannot walk an empty loop")
    pos = geom.positions
    link_nodes = geom.link_nodes
    nodes = {int(n) for e in links for n in link_nodes[e]}
    node = min(nodes, key=lambda n: frame.position_key(pos[n]))
    used = set()
    steps: list[Step] = []
    seen_dirs = set()
    node_links = geom.node_links
    while True:
        options = []
        for e in node_links[node]:
            e = int(e)
            if e in links and e not in used:
                nxt, axis, sign = _steps_from(geom, node, e)
                opposite = (axis, -sign) in seen_dirs
                options.append((opposite, frame.rank(axis, sign), e, nxt, axis, sign))
        if not options:
            if len(used) == len(links):
                raise WindingLoopError("loop has no antiparallel pair; it winds the torus")
            raise WindingLoopError("walk closed a winding sub-cycle before turning back")
        opposite, _, e, nxt, axis, sign = min(options)
        used.add(e)
        steps.append(Step(e, node, nxt, axis, sign))
        if opposite:
            back = max(i for i, s in enumerate(steps[:-1]) if s.axis == axis and s.sign == -sign)
            return Walk(tuple(steps), back)
        seen_dirs.add((axis, sign))
        node = nxt


def canonical_walk(geom: LatticeGeometry, loop: Loop, frame: Frame | None = None) -> Walk:
    """Walk a loop from its frame-minimal node until it is forced to turn back.

    At each node the walk takes the unused loop link whose direction ranks
    first in ``frame``, avoiding directions antiparallel to earlier steps when
    it can.  It stops on the first step that is antiparallel to an earlier
    one; ``Walk.opposite`` indexes the most recent such earlier step, so every
    step in between is perpendicular to the pair.
    """
    return _walk_links(geom, loop.link_set, frame or Frame.default(geom.d))


def _strip(geom, walk: Walk) -> list[int]:
    # plaquette swept by each segment link when pushed back along the stop direction
    stop = walk.stop
    a, s = stop.axis, -stop.sign
    out = []
    for st in walk.segment:
        tail = geom.link_nodes[st.link, 0]
        corner = np.array(geom.positions[tail])
        if s > 0:
            corner[a] -= 1
        pair = tuple(sorted((a, st.axis)))
        rank = geom.axes_sets[2].index(pair)
        out.append(rank * geom.volume + geom.node_index(corner))
    return out


def _reduce_links(geom, links: frozenset, frame: Frame):
    walk = _walk_links(geom, links, frame)
    strip = _strip(geom, walk)
    cur = set(links)
    for p in strip:
        cur.symmetric_difference_update(int(e) for e in geom.plaq_links[p])
    return strip, cur


def reduce_loop(geom: LatticeGeometry, loop: Loop, frame: Frame | None = None):
    """One shrinking step: returns ``(strip plaquettes, residual loops)``."""
    frame = frame or Frame.default(geom.d)
    strip, residual = _reduce_links(geom, loop.link_set, frame)
    return np.array(sorted(strip), dtype=np.int64), loops_from_links(geom, residual, frame)


@lru_cache(maxsize=1 << 16)
def _close_links(geom, links: frozenset, frame: Frame):
    surface = set()
    steps = 0
    pending = [links]
    while pending:
        cur = pending.pop()
        strip, residual = _reduce_links(geom, cur, frame)
        steps += 1
        surface.symmetric_difference_update(strip)
        if residual:
            pending.extend(lp.link_set for lp in loops_from_links(geom, residual, frame))
    return tuple(sorted(surface)), steps


def close_loop_steps(geom: LatticeGeometry, loop: Loop, frame: Frame | None = None):
    """Surface plaquettes closing ``loop`` and the number of reduction steps used."""
    surface, steps = _close_links(geom, loop.link_set, frame or Frame.default(geom.d))
    return np.array(surface, dtype=np.int64), steps


def close_loop(geom: LatticeGeometry, loop: Loop, frame: Frame | None = None) -> np.ndarray:
    """Spin configuration whose boundary is exactly ``loop``."""
    surface, _ = close_loop_steps(geom, loop, frame)
    S = empty_spins(geom)
    S[surface] = 1
    return S


def _min_image(geom, node, base):
    delta = np.asarray(geom.positions[node], dtype=np.int64) - base
    return (delta + geom.L // 2) % geom.L - geom.L // 2


def random_confined_loop(geom: LatticeGeometry, rng, max_length: int = 24, box: int = 3, max_tries: int = 1000) -> Loop:
    """Boundary component of a random plaquette blob inside a ``box``-wide cube.

    The blob grows from one plaquette by adding plaquettes that share a link
    and keep every corner inside the box; a component of its boundary with
    at most ``max_length`` links is returned.
    """
    if 2 * box >= geom.L:
        raise ValueError(f"box {box} too wide for L={geom.L}")
    corners = geom.plaq_nodes
    for _ in range(max_tries):
        seed = int(rng.integers(geom.n_plaquettes))
        base = np.asarray(geom.positions[corners[seed, 0]], dtype=np.int64)
        blob = {seed}
        frontier = [seed]
        target = int(rng.integers(1, 4 * box * box))
        while frontier and len(blob) < target:
            p = frontier[int(rng.integers(len(frontier)))]
            e = int(rng.choice(geom.plaq_links[p]))
            q = int(rng.choice(geom.link_plaqs[e]))
            if q in blob:
                continue
            rel = np.array([_min_image(geom, n, base) for n in corners[q]])
            if rel.min() < 0 or rel.max() > box:
                continue
            blob.add(q)
            frontier.append(q)
        S = empty_spins(geom)
        S[list(blob)] = 1
        K = boundary(geom, S)
        loops = [lp for lp in decompose_loops(geom, K) if 0 < len(lp) <= max_length]
        if loops:
            return loops[int(rng.integers(len(loops)))]
    raise RuntimeError("could not draw a confined loop")


def surface_within_box(geom: LatticeGeometry, loop: Loop, surface, margin: int = 1) -> bool:
    """Whether every surface corner lies in the loop's bounding box grown by ``margin``."""
    base = np.asarray(geom.positions[loop.nodes[0]], dtype=np.int64)
    rel = np.array([_min_image(geom, n, base) for n in loop.nodes])
    lo, hi = rel.min(axis=0) - margin, rel.max(axis=0) + margin
    for p in np.asarray(surface, dtype=np.int64):
        r = np.array([_min_image(geom, n, base) for n in geom.plaq_nodes[p]])
        if np.any(r < lo) or np.any(r > hi):
            return False
    return True


def bare_observable(geom: LatticeGeometry, S, T: Plane) -> int:
    """Spin parity over ``T``: +1 for an even number of flipped plaquettes."""
    S = np.asarray(S)
    if S.shape != (geom.n_plaquettes,):
        raise ValueError(f"spin configuration must have length {geom.n_plaquettes}")
    return -1 if int(S[T.plaquettes].sum()) & 1 else 1


@dataclass
class MeasurementRecord:
    raw: int
    loops: list[int]
    short: list[bool]
    long_loop_present: bool
    crossings: int
    dressed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "raw": self.raw,
                "loops": self.loops,
                "long_loop_present": self.long_loop_present,
                "crossings": self.crossings,
                "dressed": self.dressed,
            }
        )


def _crossing(geom, loop, T_mask, frame):
    surface, _ = _close_links(geom, loop.link_set, frame)
    return int(T_mask[list(surface)].sum()) & 1


def measure_dressed(
    geom: LatticeGeometry,
    S,
    T: Plane,
    frame: Frame | None = None,
    c: float | None = DEFAULT_C,
) -> MeasurementRecord:
    """Run the five-step measurement of the dressed observable on ``T``.

    Long loops switch the syndrome correction off (it is taken to be +1).
    """
    frame = frame or Frame.default(geom.d)
    raw = bare_observable(geom, S, T)
    K = boundary(geom, S)
    if not is_cycle(geom, K):
        raise ValueError("syndrome is not a cycle")
    comps = link_components(geom, np.flatnonzero(K))
    short = [links_short(geom, comp, c) for comp in comps]
    long_present = not all(short)
    crossings = 0
    if not long_present:
        T_mask = T.mask(geom.n_plaquettes)
        for comp in comps:
            surface, _ = _close_links(geom, comp, frame)
            crossings ^= int(T_mask[list(surface)].sum()) & 1
    dressed = raw * (-1 if crossings else 1)
    return MeasurementRecord(raw, [len(comp) for comp in comps], short, long_present, crossings, dressed)


@dataclass
class _LoopInfo:
    links: frozenset
    short: bool
    cross: int

    @property
    def nodes(self):
        return self._nodes


@dataclass(eq=False)
class DressedObservable:
    """Dressed observable on one plane, with exact single-flip look-ahead.

    :meth:`flip_values` returns the dressed value after flipping each spin in
    turn.  Only loops touching a corner of the flipped plaquette can change,
    so those are re-decomposed and re-closed; every other loop keeps its
    cached closure.  The result equals ``measure_dressed`` on each flipped
    configuration.
    """

    geom: LatticeGeometry
    T: Plane
    frame: Frame | None = None
    c: float | None = DEFAULT_C
    _single: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.frame = self.frame or Frame.default(self.geom.d)
        self.T_mask = self.T.mask(self.geom.n_plaquettes)
        self.T_sign = np.where(self.T_mask, -1, 1).astype(np.int8)

    def _info(self, loop):
        return self._info_links(loop.link_set)

    def _info_links(self, links: frozenset):
        short = links_short(self.geom, links, self.c)
        cross = 0
        if short:
            surface, _ = _close_links(self.geom, links, self.frame)
            cross = int(self.T_mask[list(surface)].sum()) & 1
        info = _LoopInfo(links, short, cross)
        ln = self.geom.adjacency[0]
        info._nodes = {n for e in links for n in ln[e]}
        return info

    def _single_flip_table(self):
        # closure data for the elementary loop around every plaquette
        if self._single is None:
            g = self.geom
            short = np.zeros(g.n_plaquettes, dtype=bool)
            cross = np.zeros(g.n_plaquettes, dtype=np.int64)
            for j in range(g.n_plaquettes):
                (lp,) = loops_from_links(g, g.plaq_links[j], self.frame)
                info = self._info(lp)
                short[j], cross[j] = info.short, info.cross
            self._single = (short, cross)
        return self._single

    def value(self, S) -> int:
        return measure_dressed(self.geom, S, self.T, self.frame, self.c).dressed

    def flip_values(self, S, plaquettes=None) -> tuple[int, np.ndarray]:
        """Dressed value of ``S`` and of ``sigma_j S`` for each ``j``."""
        g = self.geom
        S = np.asarray(S, dtype=np.uint8)
        raw = -1 if int(S[self.T.plaquettes].sum()) & 1 else 1
        js = np.arange(g.n_plaquettes) if plaquettes is None else np.asarray(plaquettes, dtype=np.int64)
        if self.c is not None and self.c * g.L < 4:
            # no loop can be short: the correction is always off
            return raw, raw * self.T_sign[js].astype(np.int64)
        K = boundary(g, S)
        if not is_cycle(g, K):
            raise ValueError("syndrome is not a cycle")
        infos = [self._info_links(comp) for comp in link_components(g, np.flatnonzero(K))]
        all_short = all(i.short for i in infos)
        total_cross = sum(i.cross for i in infos) & 1
        value = raw * (-1 if (all_short and total_cross) else 1)

        raw_after = raw * self.T_sign[js].astype(np.int64)

        node_owner = {}
        for k, info in enumerate(infos):
            for n in info.nodes:
                node_owner.setdefault(n, set()).add(k)
        corners = g.plaq_nodes[js]
        near = np.zeros(len(js), dtype=bool)
        if node_owner:
            touched = np.zeros(g.n_nodes, dtype=bool)
            touched[list(node_owner)] = True
            near = touched[corners].any(axis=1)

        out = np.empty(len(js), dtype=np.int64)
        far = ~near
        if far.any() and not all_short:
            out[far] = raw_after[far]
        elif far.any():
            single_short, single_cross = self._single_flip_table()
            jf = js[far]
            parity = (total_cross + single_cross[jf]) & 1
            out[far] = raw_after[far] * np.where(single_short[jf] & (parity == 1), -1, 1)

        for idx in np.flatnonzero(near):
            j = int(js[idx])
            hit = set()
            for n in corners[idx]:
                hit |= node_owner.get(int(n), set())
            links = set()
            for k in hit:
                links ^= infos[k].links
            links ^= {int(e) for e in g.plaq_links[j]}
            rest = [infos[k] for k in range(len(infos)) if k not in hit]
            if not all(i.short for i in rest):
                out[idx] = raw_after[idx]
                continue
            new = [self._info_links(comp) for comp in link_components(g, links)]
            short_after = all(i.short for i in rest) and all(i.short for i in new)
            cross_after = (sum(i.cross for i in rest) + sum(i.cross for i in new)) & 1
            out[idx] = raw_after[idx] * (-1 if (short_after and cross_after) else 1)
        return value, out


def dual_spins(geom: LatticeGeometry, S) -> np.ndarray:
    """Spin configuration carried to the dual 4-torus (plaquette p -> dual(p))."""
    dual = geom.dual_maps[2]
    out = np.empty_like(np.asarray(S, dtype=np.uint8))
    out[dual] = S
    return out


def _dual_image(geom, P: Plane) -> Plane:
    return Plane("dual", P.axes, P.offset, np.sort(geom.dual_maps[2][P.plaquettes]))


def measure_dressed_z(geom: LatticeGeometry, S, P: Plane, frame=None, c=DEFAULT_C) -> MeasurementRecord:
    """Z-type dressed observable on a primal plane of the 4-torus.

    ``S`` holds sigma_z outcomes.  The cube syndrome of ``S`` is the link
    syndrome of its dual image, so the X-type routine runs unchanged there.
    """
    if geom.d != 4 or P.kind != "primal":
        raise ValueError("Z-type dressed observable needs a primal plane in d=4")
    return measure_dressed(geom, dual_spins(geom, S), _dual_image(geom, P), frame, c)


def _torus_step(delta, L):
    delta %= L
    return delta if delta <= L // 2 else delta - L


def z_plane_observable_3d(geom: LatticeGeometry, S, P: Plane, frame: Frame | None = None) -> int:
    """Z-type observable of the 3D model, dressed by greedy defect pairing.

    Excited cubes (odd parity) are point defects.  They are paired greedily by
    torus distance and joined by axis-ordered dual paths; the path plaquettes
    correct the raw parity on the primal plane ``P``.  Point defects carry no
    energy barrier, so this observable is not expected to be stable.
    """
    if geom.d != 3 or P.kind != "primal":
        raise ValueError("3D Z observable needs a primal plane in d=3")
    frame = frame or Frame.default(3)
    S = np.asarray(S, dtype=np.uint8)
    L = geom.L
    defects = list(np.flatnonzero(S[geom.cube_plaqs].sum(axis=1) & 1))
    pos = geom.positions
    P_mask = P.mask(geom.n_plaquettes)
    parity = int(S[P.plaquettes].sum()) & 1
    while defects:
        best = None
        for i in range(len(defects)):
            for k in range(i + 1, len(defects)):
                delta = [_torus_step(int(pos[defects[k]][a] - pos[defects[i]][a]), L) for a in range(3)]
                dist = sum(abs(x) for x in delta)
                if best is None or dist < best[0]:
                    best = (dist, i, k, delta)
        _, i, k, delta = best
        cur = np.array(pos[defects[i]])
        for a in frame.order:
            step = 1 if delta[a] > 0 else -1
            plane_rank = geom.axes_sets[2].index(tuple(b for b in range(3) if b != a))
            for _ in range(abs(delta[a])):
                face = cur.copy()
                if step > 0:
                    face[a] += 1
                parity ^= int(P_mask[plane_rank * geom.volume + geom.node_index(face)])
                cur[a] += step
        defects = [x for n, x in enumerate(defects) if n not in (i, k)]
    return -1 if parity else 1


def z_plane_3d(geom: LatticeGeometry, axes=(1, 2), offset=0) -> Plane:
    return primal_plane(geom, axes, offset)

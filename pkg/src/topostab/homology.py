"""Z2 boundary calculus on plaquette configurations.

Spin configurations are ``uint8`` arrays of 0/1 over plaquettes (1 = flipped
relative to the all-down configuration); link configurations are the same
over links.  The boundary of a spin configuration is its syndrome: the set
of links touching an odd number of flipped plaquettes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import LatticeGeometry, Plane, representative_planes

__all__ = [
    "DEFAULT_C",
    "Frame",
    "Loop",
    "NotACycleError",
    "LongLoopError",
    "empty_spins",
    "empty_links",
    "boundary",
    "xor",
    "flip_cube",
    "is_cycle",
    "decompose_loops",
    "loops_from_links",
    "link_components",
    "links_short",
    "loop_extent",
    "is_short",
    "loop_is_short",
    "winding_label",
    "shortest_config",
    "homology_class",
    "encode_config",
    "decode_config",
]

DEFAULT_C = 1 / 8


class NotACycleError(ValueError):
    """A link configuration with an odd-degree node."""


class LongLoopError(ValueError):
    """The syndrome contains a loop above the short threshold."""


@dataclass(frozen=True)
class Frame:
    """Axis priority for walking loops; positive before negative on each axis."""

    order: tuple[int, ...]

    @classmethod
    def default(cls, d: int) -> "Frame":
        return cls(tuple(range(d)))

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"frame order must be a permutation of range(d), got {self.order}")

    def rank(self, axis: int, sign: int) -> int:
        return 2 * self.order.index(axis) + (0 if sign > 0 else 1)

    def position_key(self, position) -> tuple:
        return tuple(int(position[a]) for a in self.order)


@dataclass(frozen=True, eq=False)
class Loop:
    """One connected component of a syndrome, stored as a closed walk.

    ``links[i]`` is traversed from ``nodes[i]`` to ``nodes[i + 1]``;
    ``nodes[-1] == nodes[0]``.
    """

    links: tuple[int, ...]
    nodes: tuple[int, ...]

    def __len__(self):
        return len(self.links)

    @cached_property
    def link_set(self) -> frozenset:
        return frozenset(self.links)

    @cached_property
    def node_set(self) -> frozenset:
        return frozenset(self.nodes)


def empty_spins(geom: LatticeGeometry) -> np.ndarray:
    return np.zeros(geom.n_plaquettes, dtype=np.uint8)


def empty_links(geom: LatticeGeometry) -> np.ndarray:
    return np.zeros(geom.n_links, dtype=np.uint8)


def _check(arr, n, what):
    arr = np.asarray(arr)
    if arr.shape != (n,):
        raise ValueError(f"{what} configuration must have length {n}, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def boundary(geom: LatticeGeometry, S) -> np.ndarray:
    """Syndrome of ``S``: links with an odd number of flipped incident plaquettes."""
    S = _check(S, geom.n_plaquettes, "spin")
    return (S[geom.link_plaqs].sum(axis=1) & 1).astype(np.uint8)


def xor(S1, S2) -> np.ndarray:
    S1 = np.asarray(S1, dtype=np.uint8)
    S2 = np.asarray(S2, dtype=np.uint8)
    if S1.shape != S2.shape:
        raise ValueError(f"size mismatch: {S1.shape} vs {S2.shape}")
    return S1 ^ S2


def flip_cube(geom: LatticeGeometry, S, cube: int) -> np.ndarray:
    """Flip the six faces of one elementary cube (a continuous deformation)."""
    if geom.d < 3:
        raise ValueError("no cubes in d=2")
    if not 0 <= cube < geom.n_cubes:
        raise ValueError(f"cube index {cube} out of range")
    out = _check(S, geom.n_plaquettes, "spin").copy()
    out[geom.cube_plaqs[cube]] ^= 1
    return out


def is_cycle(geom: LatticeGeometry, K) -> bool:
    K = _check(K, geom.n_links, "link")
    deg = K[geom.node_links].sum(axis=1)
    return not np.any(deg & 1)


def _steps_from(geom, node, link):
    tail, head = geom.link_nodes[link]
    axis = int(geom.link_axis[link])
    if tail == node:
        return int(head), axis, 1
    return int(tail), axis, -1


def _euler_circuit(geom, links, frame):
    adj: dict[int, list[int]] = {}
    for e in links:
        t, h = geom.link_nodes[e]
        adj.setdefault(int(t), []).append(e)
        adj.setdefault(int(h), []).append(e)
    pos = geom.positions
    start = min(adj, key=lambda n: frame.position_key(pos[n]))
    used = set()

    def best_exit(node):
        best = None
        for e in adj[node]:
            if e in used:
                continue
            nxt, axis, sign = _steps_from(geom, node, e)
            key = (frame.rank(axis, sign), e)
            if best is None or key < best[0]:
                best = (key, e, nxt)
        return best

    # Hierholzer with frame priority at every branching node
    stack = [(start, None)]
    circuit = []
    while stack:
        node, via = stack[-1]
        step = best_exit(node)
        if step is None:
            circuit.append((node, via))
            stack.pop()
        else:
            _, e, nxt = step
            used.add(e)
            stack.append((nxt, e))
    circuit.reverse()
    nodes = tuple(n for n, _ in circuit)
    walk = tuple(e for _, e in circuit[1:])
    return Loop(walk, nodes)


def link_components(geom: LatticeGeometry, links) -> list[frozenset]:
    """Node-connected components of a set of link indices."""
    remaining = set(int(e) for e in links)
    link_nodes, node_links = geom.adjacency
    comps = []
    while remaining:
        seed = remaining.pop()
        comp = [seed]
        todo = [seed]
        while todo:
            e = todo.pop()
            for n in link_nodes[e]:
                for f in node_links[n]:
                    if f in remaining:
                        remaining.discard(f)
                        comp.append(f)
                        todo.append(f)
        comps.append(frozenset(comp))
    comps.sort(key=min)
    return comps


def loops_from_links(geom: LatticeGeometry, links, frame: Frame | None = None) -> list[Loop]:
    """Node-connected components of a set of link indices, as closed walks.

    No parity check; callers pass sets that are known to be cycles.
    """
    frame = frame or Frame.default(geom.d)
    return [_euler_circuit(geom, sorted(comp), frame) for comp in link_components(geom, links)]


def decompose_loops(geom: LatticeGeometry, K, frame: Frame | None = None) -> list[Loop]:
    """Split a cycle into node-connected components, each as a closed walk."""
    K = _check(K, geom.n_links, "link")
    if not is_cycle(geom, K):
        raise NotACycleError("link configuration has a node of odd degree")
    return loops_from_links(geom, np.flatnonzero(K), frame)


def loop_extent(geom: LatticeGeometry, loop: Loop):
    """Per-axis unwrapped extent of a loop, or ``None`` if the loop winds the torus."""
    pos = geom.positions
    d = geom.d
    coords = {loop.nodes[0]: np.array(pos[loop.nodes[0]], dtype=np.int64)}
    cur = coords[loop.nodes[0]]
    for e, a, b in zip(loop.links, loop.nodes[:-1], loop.nodes[1:]):
        _, axis, sign = _steps_from(geom, a, e)
        cur = cur.copy()
        cur[axis] += sign
        seen = coords.get(b)
        if seen is None:
            coords[b] = cur
        elif not np.array_equal(seen, cur):
            return None
    arr = np.array(list(coords.values())).reshape(-1, d)
    return arr.max(axis=0) - arr.min(axis=0)


def is_short(loop, L: int, c: float = DEFAULT_C) -> bool:
    """Length criterion: a loop is short when it has at most ``c * L`` links."""
    if c <= 0:
        raise ValueError(f"short-loop fraction must be positive, got {c}")
    n = loop if isinstance(loop, (int, np.integer)) else len(loop)
    return n <= c * L


def loop_is_short(geom: LatticeGeometry, loop: Loop, c: float | None = DEFAULT_C) -> bool:
    """Shortness used by the decoder.

    With a numeric ``c`` this is :func:`is_short`, plus the requirement that
    the loop does not wind the torus (only possible when ``c >= 1``).  With ``c=None`` a loop is
    short when its bounding box spans fewer than ``L/2`` steps on every axis
    (the confinement criterion; the only useful one on small tori).
    """
    if c is not None and not is_short(loop, geom.L, c):
        return False
    ext = loop_extent(geom, loop)
    if c is not None:
        return ext is not None
    return ext is not None and bool(np.all(2 * ext < geom.L))


def links_short(geom: LatticeGeometry, links, c: float | None = DEFAULT_C) -> bool:
    """:func:`loop_is_short` for a component given as a link set (no walk needed)."""
    links = frozenset(int(e) for e in links)
    if c is not None and not is_short(len(links), geom.L, c):
        return False
    link_nodes, _ = geom.adjacency
    axis_of = geom.link_axis
    adj: dict[int, list[int]] = {}
    for e in links:
        t, h = link_nodes[e]
        adj.setdefault(t, []).append(e)
        adj.setdefault(h, []).append(e)
    start = next(iter(adj))
    coords = {start: tuple(int(v) for v in geom.positions[start])}
    todo = [start]
    while todo:
        node = todo.pop()
        here = coords[node]
        for e in adj[node]:
            t, h = link_nodes[e]
            a = int(axis_of[e])
            nxt, step = (h, 1) if t == node else (t, -1)
            cur = here[:a] + (here[a] + step,) + here[a + 1 :]
            seen = coords.get(nxt)
            if seen is None:
                coords[nxt] = cur
                todo.append(nxt)
            elif seen != cur:
                return False
    if c is not None:
        return True
    arr = np.array(list(coords.values()))
    return bool(np.all(2 * (arr.max(axis=0) - arr.min(axis=0)) < geom.L))


def winding_label(geom: LatticeGeometry, S, planes: list[Plane] | None = None) -> np.ndarray:
    """Winding parities of a closed configuration against each dual plane/line."""
    S = _check(S, geom.n_plaquettes, "spin")
    if boundary(geom, S).any():
        raise ValueError("winding label needs a configuration without boundary")
    planes = planes if planes is not None else representative_planes(geom)
    return np.array([int(S[T.plaquettes].sum() & 1) for T in planes], dtype=np.uint8)


def shortest_config(geom: LatticeGeometry, K, c: float | None = DEFAULT_C, frame: Frame | None = None) -> np.ndarray:
    """Confined surface whose boundary is ``K``, built loop by loop."""
    from .decoder import close_loop

    frame = frame or Frame.default(geom.d)
    S = empty_spins(geom)
    for loop in decompose_loops(geom, K, frame):
        if not loop_is_short(geom, loop, c):
            raise LongLoopError(f"long loop of length {len(loop)} present")
        S ^= close_loop(geom, loop, frame)
    return S


def homology_class(geom: LatticeGeometry, S, c: float | None = DEFAULT_C, frame: Frame | None = None) -> np.ndarray:
    """Label of ``S`` relative to the shortest configuration of its syndrome."""
    S = _check(S, geom.n_plaquettes, "spin")
    star = shortest_config(geom, boundary(geom, S), c, frame)
    return winding_label(geom, S ^ star)


_KINDS = {"nodes": 0, "links": 1, "plaquettes": 2, "cubes": 3}


def encode_config(geom: LatticeGeometry, bits, kind: str = "plaquettes") -> str:
    """Serialize a cell configuration as ``topostab:d=..:L=..:<kind>:<hex>``.

    Bit ``i`` of the payload (MSB first) is cell ``i`` in canonical order.
    """
    n = geom.n_cells(_KINDS[kind])
    bits = _check(bits, n, kind)
    payload = np.packbits(bits).tobytes().hex()
    return f"topostab:d={geom.d}:L={geom.L}:{kind}:{payload}"


def decode_config(text: str):
    """Inverse of :func:`encode_config`; returns ``(d, L, kind, bits)``."""
    from .lattice import build_lattice

    try:
        tag, d, L, kind, payload = text.strip().split(":")
        if tag != "topostab" or not d.startswith("d=") or not L.startswith("L="):
            raise ValueError
        d, L = int(d[2:]), int(L[2:])
    except ValueError:
        raise ValueError(f"not a serialized configuration: {text[:40]!r}") from None
    if kind not in _KINDS:
        raise ValueError(f"unknown cell kind {kind!r}")
    n = build_lattice(d, L).n_cells(_KINDS[kind])
    raw = np.frombuffer(bytes.fromhex(payload), dtype=np.uint8)
    if raw.size != (n + 7) // 8:
        raise ValueError(f"payload holds {raw.size} bytes, expected {(n + 7) // 8}")
    return d, L, kind, np.unpackbits(raw)[:n].astype(np.uint8)

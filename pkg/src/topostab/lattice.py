"""Hypercubic toroidal cell complexes in 2, 3 and 4 dimensions.

A k-cell is an axis-aligned unit k-cube: a lower corner ``position`` on the
periodic grid ``Z_L^d`` plus the k coordinate axes it spans.  Cells of each
dimension are indexed as ``rank(axes) * L**d + node_index(position)`` where
``rank`` is the lexicographic rank of the axes subset among
``itertools.combinations(range(d), k)`` and ``node_index`` is the C-order
ravel of the position (axis 0 most significant).

All incidence tables are precomputed as flat ``int64`` arrays:

* ``faces[k]`` has shape ``(N_k, 2k)``; for each spanned axis ``a`` (in
  order) it lists the face at the lower corner and the face shifted by
  ``+e_a``.
* ``cofaces[k]`` has shape ``(N_k, 2(d-k))``; for each axis ``b`` not
  spanned it lists the coface at the same corner and the one shifted by
  ``-e_b``.

For a link ``faces[1]`` is ``(tail, head)``; traversing a link from tail to
head is a step in the ``+axis`` direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np

__all__ = [
    "CellId",
    "LatticeGeometry",
    "Plane",
    "build_lattice",
    "incident_cells",
    "dual_plane",
    "primal_plane",
    "representative_planes",
]


@dataclass(frozen=True)
class CellId:
    k: int
    position: tuple[int, ...]
    axes: tuple[int, ...]

    def __post_init__(self):
        if len(self.axes) != self.k or len(set(self.axes)) != self.k:
            raise ValueError(f"cell of dimension {self.k} needs {self.k} distinct axes, got {self.axes}")
        if tuple(sorted(self.axes)) != self.axes:
            object.__setattr__(self, "axes", tuple(sorted(self.axes)))


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """Immutable d-dimensional torus of linear size L with incidence tables."""

    d: int
    L: int
    axes_sets: tuple = field(repr=False)
    positions: np.ndarray = field(repr=False)
    faces: tuple = field(repr=False)
    cofaces: tuple = field(repr=False)

    @property
    def volume(self) -> int:
        return self.L**self.d

    def n_cells(self, k: int) -> int:
        return len(self.axes_sets[k]) * self.volume

    @property
    def n_nodes(self) -> int:
        return self.volume

    @property
    def n_links(self) -> int:
        return self.n_cells(1)

    @property
    def n_plaquettes(self) -> int:
        return self.n_cells(2)

    @property
    def n_cubes(self) -> int:
        return self.n_cells(3) if self.d >= 3 else 0

    # named views of the tables the other modules lean on
    @property
    def link_nodes(self) -> np.ndarray:
        return self.faces[1]

    @property
    def node_links(self) -> np.ndarray:
        return self.cofaces[0]

    @property
    def plaq_links(self) -> np.ndarray:
        return self.faces[2]

    @property
    def link_plaqs(self) -> np.ndarray:
        return self.cofaces[1]

    @property
    def cube_plaqs(self) -> np.ndarray:
        return self.faces[3]

    @property
    def plaq_cubes(self) -> np.ndarray:
        return self.cofaces[2]

    @cached_property
    def adjacency(self) -> tuple[list, list]:
        """``(link_nodes, node_links)`` as nested Python lists for scalar-heavy loops."""
        return self.link_nodes.tolist(), self.node_links.tolist()

    @cached_property
    def link_axis(self) -> np.ndarray:
        return np.repeat(np.arange(self.d), self.volume)

    @cached_property
    def plaq_axes(self) -> np.ndarray:
        """(n_plaquettes, 2) array with the two axes spanned by each plaquette."""
        pairs = np.array(self.axes_sets[2], dtype=np.int64)
        return np.repeat(pairs, self.volume, axis=0)

    @cached_property
    def plaq_nodes(self) -> np.ndarray:
        """(n_plaquettes, 4) corner nodes: x, x+e_a, x+e_a+e_b, x+e_b."""
        links = self.plaq_links
        ln = self.link_nodes
        # faces order: (b)@x, (b)@x+e_a, (a)@x, (a)@x+e_b
        x = ln[links[:, 2], 0]
        xa = ln[links[:, 2], 1]
        xab = ln[links[:, 1], 1]
        xb = ln[links[:, 0], 1]
        return np.stack([x, xa, xab, xb], axis=1)

    def node_index(self, position) -> int:
        pos = np.mod(np.asarray(position, dtype=np.int64), self.L)
        return int(np.ravel_multi_index(tuple(pos), (self.L,) * self.d))

    def index(self, cell: CellId) -> int:
        if not 0 <= cell.k <= self.d or len(cell.position) != self.d:
            raise ValueError(f"{cell} is not a cell of a {self.d}-dimensional lattice")
        try:
            rank = self.axes_sets[cell.k].index(cell.axes)
        except ValueError:
            raise ValueError(f"axes {cell.axes} invalid for d={self.d}") from None
        if any(a >= self.d for a in cell.axes):
            raise ValueError(f"axes {cell.axes} invalid for d={self.d}")
        return rank * self.volume + self.node_index(cell.position)

    def cell(self, k: int, idx: int) -> CellId:
        if not 0 <= idx < self.n_cells(k):
            raise ValueError(f"{k}-cell index {idx} out of range")
        rank, node = divmod(int(idx), self.volume)
        return CellId(k, tuple(int(v) for v in self.positions[node]), self.axes_sets[k][rank])

    def cell_position(self, k: int, idx) -> np.ndarray:
        return self.positions[np.asarray(idx) % self.volume]

    @cached_property
    def dual_maps(self) -> tuple:
        """Self-duality of the 4-torus: k-cell index -> (4-k)-cell index.

        A cell spanning axes A at x maps to the cell spanning the complement
        of A at ``x - sum(e_b for b not in A)``.
        """
        if self.d != 4:
            raise ValueError("cell duality is only defined for d=4")
        maps = []
        for k in range(5):
            out = np.empty(self.n_cells(k), dtype=np.int64)
            for rank, axes in enumerate(self.axes_sets[k]):
                comp = tuple(b for b in range(4) if b not in axes)
                crank = self.axes_sets[4 - k].index(comp)
                shift = np.zeros(4, dtype=np.int64)
                shift[list(comp)] = -1
                pos = np.mod(self.positions + shift, self.L)
                nodes = np.ravel_multi_index(pos.T, (self.L,) * 4)
                out[rank * self.volume : (rank + 1) * self.volume] = crank * self.volume + nodes
            maps.append(out)
        return tuple(maps)


def build_lattice(d: int, L: int) -> LatticeGeometry:
    """Build the d-dimensional periodic cubic complex of linear size L."""
    if d not in (2, 3, 4):
        raise ValueError(f"dimension must be 2, 3 or 4, got {d}")
    if L < 2:
        raise ValueError(f"linear size must be at least 2, got {L}")
    shape = (L,) * d
    V = L**d
    positions = np.array(np.unravel_index(np.arange(V), shape), dtype=np.int64).T
    axes_sets = tuple(tuple(combinations(range(d), k)) for k in range(d + 1))

    def shifted(axis, step):
        pos = positions.copy()
        pos[:, axis] = (pos[:, axis] + step) % L
        return np.ravel_multi_index(pos.T, shape)

    plus = [shifted(a, 1) for a in range(d)]
    minus = [shifted(a, -1) for a in range(d)]
    node_ids = np.arange(V)

    faces = [np.zeros((V, 0), dtype=np.int64)]
    for k in range(1, d + 1):
        table = np.empty((len(axes_sets[k]) * V, 2 * k), dtype=np.int64)
        for rank, axes in enumerate(axes_sets[k]):
            rows = slice(rank * V, (rank + 1) * V)
            for i, a in enumerate(axes):
                sub = tuple(x for x in axes if x != a)
                base = axes_sets[k - 1].index(sub) * V
                table[rows, 2 * i] = base + node_ids
                table[rows, 2 * i + 1] = base + plus[a]
        faces.append(table)

    cofaces = []
    for k in range(d):
        table = np.empty((len(axes_sets[k]) * V, 2 * (d - k)), dtype=np.int64)
        for rank, axes in enumerate(axes_sets[k]):
            rows = slice(rank * V, (rank + 1) * V)
            others = [b for b in range(d) if b not in axes]
            for i, b in enumerate(others):
                sup = tuple(sorted(axes + (b,)))
                base = axes_sets[k + 1].index(sup) * V
                table[rows, 2 * i] = base + node_ids
                table[rows, 2 * i + 1] = base + minus[b]
        cofaces.append(table)
    cofaces.append(np.zeros((V, 0), dtype=np.int64))

    for t in faces + cofaces:
        t.setflags(write=False)
    positions.setflags(write=False)
    return LatticeGeometry(d, L, axes_sets, positions, tuple(faces), tuple(cofaces))


def incident_cells(geom: LatticeGeometry, cell: CellId, k: int) -> set[CellId]:
    """Boundary (k = cell.k - 1) or coboundary (k = cell.k + 1) cells of ``cell``."""
    idx = geom.index(cell)
    if k == cell.k - 1 and cell.k >= 1:
        row = geom.faces[cell.k][idx]
    elif k == cell.k + 1 and cell.k < geom.d:
        row = geom.cofaces[cell.k][idx]
    else:
        raise ValueError(f"no incidence between dimension {cell.k} and {k}")
    return {geom.cell(k, int(i)) for i in row}


@dataclass(frozen=True, eq=False)
class Plane:
    """A homologically nontrivial set of plaquettes.

    ``kind == "dual"``: a plane (4D) or line (3D) of the dual lattice.  It
    spans the listed ``axes``; its plaquettes span the complementary axes and
    sit at the fixed complementary coordinates ``offset``.  Every cube meets
    it in 0 or 2 plaquettes, so its spin parity is a bare observable.

    ``kind == "primal"``: a closed primal surface whose plaquettes span
    ``axes`` at fixed complementary coordinates ``offset``.
    """

    kind: str
    axes: tuple[int, ...]
    offset: tuple[int, ...]
    plaquettes: np.ndarray = field(repr=False)

    def mask(self, n_plaquettes: int) -> np.ndarray:
        out = np.zeros(n_plaquettes, dtype=bool)
        out[self.plaquettes] = True
        return out

    def __len__(self):
        return len(self.plaquettes)


def _plane_plaquettes(geom, plaq_axes, fixed_axes, offset):
    rank = geom.axes_sets[2].index(tuple(sorted(plaq_axes)))
    pos = geom.positions
    sel = np.ones(geom.volume, dtype=bool)
    for a, o in zip(fixed_axes, offset):
        sel &= pos[:, a] == o
    return np.sort(rank * geom.volume + np.flatnonzero(sel)).astype(np.int64)


def _normalize(geom, axes, offset, n_axes):
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(a) for a in axes)
    if len(axes) != n_axes or len(set(axes)) != n_axes or any(not 0 <= a < geom.d for a in axes):
        raise ValueError(f"need {n_axes} distinct axes in range(d), got {axes}")
    comp = tuple(b for b in range(geom.d) if b not in axes)
    if isinstance(offset, (int, np.integer)):
        offset = (int(offset),) * len(comp)
    offset = tuple(int(o) for o in offset)
    if len(offset) != len(comp) or any(not 0 <= o < geom.L for o in offset):
        raise ValueError(f"offset {offset} must give {len(comp)} coordinates in [0, {geom.L})")
    return tuple(sorted(axes)), comp, offset


def dual_plane(geom: LatticeGeometry, axes, offset=0) -> Plane:
    """Dual plane spanning ``axes`` (a pair in 4D, a single axis in 3D)."""
    if geom.d not in (3, 4):
        raise ValueError("dual planes are defined for d=3 (lines) and d=4 (planes)")
    axes, comp, offset = _normalize(geom, axes, offset, geom.d - 2)
    return Plane("dual", axes, offset, _plane_plaquettes(geom, comp, comp, offset))


def primal_plane(geom: LatticeGeometry, axes, offset=0) -> Plane:
    """Closed primal plane of plaquettes spanning the axis pair ``axes``."""
    if geom.d not in (3, 4):
        raise ValueError("primal planes are used for d=3 and d=4")
    axes, comp, offset = _normalize(geom, axes, offset, 2)
    return Plane("primal", axes, offset, _plane_plaquettes(geom, axes, comp, offset))


def representative_planes(geom: LatticeGeometry) -> list[Plane]:
    """One dual plane (4D) or dual line (3D) per homology generator, offset 0."""
    return [dual_plane(geom, axes, 0) for axes in combinations(range(geom.d), geom.d - 2)]

from itertools import combinations
from math import comb

import numpy as np
import pytest

from topostab.lattice import (
    CellId,
    build_lattice,
    dual_plane,
    incident_cells,
    primal_plane,
    representative_planes,
)


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("L", [2, 3, 4, 5, 6])
def test_cell_counts(d, L):
    g = build_lattice(d, L)
    for k in range(d + 1):
        assert g.n_cells(k) == comb(d, k) * L**d


def test_known_sizes():
    g = build_lattice(3, 4)
    assert (g.n_links, g.n_plaquettes, g.n_cubes) == (192, 192, 64)
    g = build_lattice(4, 2)
    assert (g.n_links, g.n_plaquettes, g.n_cubes) == (64, 96, 64)


@pytest.mark.parametrize("d,L", [(2, 2), (3, 2), (3, 3), (4, 2), (4, 3)])
def test_incidence_shapes_and_symmetry(d, L):
    g = build_lattice(d, L)
    assert g.plaq_links.shape == (g.n_plaquettes, 4)
    assert g.link_plaqs.shape == (g.n_links, 2 * (d - 1))
    if d >= 3:
        assert g.cube_plaqs.shape == (g.n_cubes, 6)
    # no repeated entries, even when L=2 makes neighbours coincide modulo L
    for table in (g.plaq_links, g.link_plaqs, g.link_nodes):
        assert all(len(set(row)) == len(row) for row in table)
    pairs_down = {(int(e), p) for p in range(g.n_plaquettes) for e in g.plaq_links[p]}
    pairs_up = {(e, int(p)) for e in range(g.n_links) for p in g.link_plaqs[e]}
    assert pairs_down == pairs_up
    if d >= 3:
        down = {(int(p), c) for c in range(g.n_cubes) for p in g.cube_plaqs[c]}
        up = {(p, int(c)) for p in range(g.n_plaquettes) for c in g.plaq_cubes[p]}
        assert down == up


def test_link_orientation():
    g = build_lattice(3, 4)
    for e in range(g.n_links):
        t, h = g.link_nodes[e]
        a = g.link_axis[e]
        step = (g.positions[h] - g.positions[t]) % 4
        expect = np.zeros(3, dtype=int)
        expect[a] = 1
        assert np.array_equal(step, expect)


def test_deterministic_tables():
    a, b = build_lattice(4, 3), build_lattice(4, 3)
    for k in range(1, 5):
        assert np.array_equal(a.faces[k], b.faces[k])


def test_index_roundtrip():
    g = build_lattice(4, 3)
    for k in range(5):
        for idx in range(0, g.n_cells(k), 7):
            assert g.index(g.cell(k, idx)) == idx


def test_cellid_wraps_and_sorts():
    g = build_lattice(3, 4)
    a = CellId(2, (5, -1, 3), (2, 0))
    assert a.axes == (0, 2)
    assert g.index(a) == g.index(CellId(2, (1, 3, 3), (0, 2)))


def test_cellid_rejects_bad_axes():
    with pytest.raises(ValueError):
        CellId(2, (0, 0, 0), (1, 1))
    with pytest.raises(ValueError):
        build_lattice(3, 3).index(CellId(2, (0, 0, 0), (2, 3)))


@pytest.mark.parametrize("d,L", [(1, 3), (5, 3), (3, 1), (3, 0)])
def test_build_rejects(d, L):
    with pytest.raises(ValueError):
        build_lattice(d, L)


def test_incident_cells_examples():
    g3, g4 = build_lattice(3, 4), build_lattice(4, 3)
    p = CellId(2, (1, 2, 3), (0, 1))
    links = incident_cells(g3, p, 1)
    assert len(links) == 4 and all(c.k == 1 for c in links)
    assert len(incident_cells(g3, CellId(1, (0, 0, 0), (2,)), 2)) == 4
    assert len(incident_cells(g4, CellId(1, (0, 0, 0, 0), (2,)), 2)) == 6
    assert len(incident_cells(g3, CellId(3, (0, 0, 0), (0, 1, 2)), 2)) == 6
    with pytest.raises(ValueError):
        incident_cells(g3, p, 0)


def test_incident_cells_at_L2_has_distinct_neighbours():
    g = build_lattice(3, 2)
    assert len(incident_cells(g, CellId(3, (0, 0, 0), (0, 1, 2)), 2)) == 6
    assert len(incident_cells(g, CellId(1, (1, 1, 1), (0,)), 2)) == 4


def test_dual_plane_4d():
    g = build_lattice(4, 4)
    for axes in combinations(range(4), 2):
        for off in (0, (1, 3)):
            T = dual_plane(g, axes, off)
            assert len(T) == 16
            hits = T.mask(g.n_plaquettes)[g.cube_plaqs].sum(axis=1)
            assert set(np.unique(hits)) <= {0, 2}


def test_complementary_planes_meet_once():
    g = build_lattice(4, 3)
    for axes in combinations(range(4), 2):
        comp = tuple(b for b in range(4) if b not in axes)
        T = dual_plane(g, axes, (1, 2))
        P = primal_plane(g, comp, (0, 2))
        assert len(set(T.plaquettes) & set(P.plaquettes)) == 1


def test_dual_line_3d():
    g = build_lattice(3, 4)
    T = dual_plane(g, 0, (2, 1))
    assert len(T) == 4
    hits = T.mask(g.n_plaquettes)[g.cube_plaqs].sum(axis=1)
    assert set(np.unique(hits)) == {0, 2}
    assert len(representative_planes(g)) == 3
    assert len(representative_planes(build_lattice(4, 2))) == 6


@pytest.mark.parametrize("axes,offset", [((0, 0), 0), ((0, 1), 4), ((0, 1), (0,))])
def test_dual_plane_rejects(axes, offset):
    with pytest.raises(ValueError):
        dual_plane(build_lattice(4, 4), axes, offset)


def test_self_duality_preserves_incidence():
    g = build_lattice(4, 3)
    maps = g.dual_maps
    for k in range(4):
        assert sorted(maps[k]) == list(range(g.n_cells(4 - k)))
        # x in faces(y) iff dual(y) in faces(dual(x))
        down = {(int(f), c) for c in range(g.n_cells(k + 1)) for f in g.faces[k + 1][c]}
        dual_pairs = {(int(maps[k + 1][c]), int(maps[k][f])) for f, c in down}
        up = {(int(f), c) for c in range(g.n_cells(4 - k)) for f in g.faces[4 - k][c]}
        assert dual_pairs == up

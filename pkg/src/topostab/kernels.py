"""Hot inner loops: single-spin-flip sweeps and syndrome component census.

Every kernel exists twice: a numba-compiled loop and a numpy/Python
fallback.  Which one the public names bind to is decided by
``TOPOSTAB_DISABLE_JIT`` (see :mod:`topostab._jit`).  Both consume the same
pre-drawn random numbers, so the two paths produce bit-identical chains.
"""

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._jit import JIT_ENABLED, njit

__all__ = ["flip_sweep", "component_sizes", "JIT_ENABLED"]


def _flip_sweep_py(spins, syndrome, table, accept, choices, uniforms):
    # accept[dE + width] is the acceptance probability of a move with gap dE
    width = table.shape[1]
    d_energy = 0
    n_acc = 0
    for t in range(choices.shape[0]):
        j = choices[t]
        de = 0
        for c in range(width):
            de += 1 - 2 * np.int64(syndrome[table[j, c]])
        if uniforms[t] < accept[de + width]:
            spins[j] ^= 1
            for c in range(width):
                syndrome[table[j, c]] ^= 1
            d_energy += de
            n_acc += 1
    return d_energy, n_acc


_flip_sweep_jit = njit(_flip_sweep_py)


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


_find_jit = njit(_find)


@njit
def _component_sizes_jit(mask, link_nodes, n_nodes):
    parent = np.arange(n_nodes)
    n_links = mask.shape[0]
    for e in range(n_links):
        if mask[e]:
            a = _find_jit(parent, link_nodes[e, 0])
            b = _find_jit(parent, link_nodes[e, 1])
            if a != b:
                parent[a] = b
    counts = np.zeros(n_nodes, dtype=np.int64)
    for e in range(n_links):
        if mask[e]:
            counts[_find_jit(parent, link_nodes[e, 0])] += 1
    out = counts[counts > 0]
    return np.sort(out)[::-1]


def _component_sizes_np(mask, link_nodes, n_nodes):
    links = np.flatnonzero(mask)
    if links.size == 0:
        return np.zeros(0, dtype=np.int64)
    ends = link_nodes[links]
    graph = coo_matrix((np.ones(links.size), (ends[:, 0], ends[:, 1])), shape=(n_nodes, n_nodes))
    _, labels = connected_components(graph, directed=False)
    counts = np.bincount(labels[ends[:, 0]])
    counts = counts[counts > 0]
    return np.sort(counts)[::-1].astype(np.int64)


if JIT_ENABLED:
    _flip_sweep_impl = _flip_sweep_jit
    _component_sizes_impl = _component_sizes_jit
else:
    _flip_sweep_impl = _flip_sweep_py
    _component_sizes_impl = _component_sizes_np


def flip_sweep(spins, syndrome, table, accept, choices, uniforms):
    """Run ``len(choices)`` flip attempts in place.

    ``table[j]`` lists the syndrome cells toggled by flipping spin ``j``.
    Returns ``(energy change, accepted moves)`` in units of excited cells.
    """
    de, n = _flip_sweep_impl(spins, syndrome, table, accept, choices, uniforms)
    return int(de), int(n)


def component_sizes(mask, link_nodes, n_nodes):
    """Sizes (link counts) of the node-connected components of ``mask``, descending."""
    return _component_sizes_impl(np.ascontiguousarray(mask, dtype=np.uint8), link_nodes, n_nodes)

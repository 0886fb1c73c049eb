"""Exact Davies generators for small spin systems (at most 10 spins).

The generator is applied to operators directly in the energy eigenbasis;
the 4**n x 4**n superoperator is only materialized on request for n <= 5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .dynamics import RateFunction
from .lattice import build_lattice

__all__ = [
    "MAX_SPINS",
    "pauli",
    "flat_spectral",
    "TabulatedSpectral",
    "SmallSystem",
    "DaviesGenerator",
    "bohr_decompose",
    "apply_generator",
    "liouville_inner",
    "gibbs_state",
    "decay_rate",
    "dissipation",
    "upper_bound_rate",
    "kitaev_2d",
    "classical_decay_rate",
    "verify_classical_reduction",
]

MAX_SPINS = 10
BOHR_TOL = 1e-9

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(label: str) -> np.ndarray:
    """Dense Pauli product; character ``i`` acts on spin ``i`` (leftmost factor)."""
    out = np.ones((1, 1), dtype=complex)
    for ch in label.upper():
        try:
            out = np.kron(out, _PAULI[ch])
        except KeyError:
            raise ValueError(f"bad Pauli label {label!r}") from None
    return out


def pauli_on(n: int, ops: dict[int, str]) -> str:
    return "".join(ops.get(i, "I") for i in range(n))


def flat_spectral(omega, beta):
    """Minimal KMS-consistent bath: rate 1 for omega >= 0, exp(-beta|omega|) below."""
    omega = np.asarray(omega, dtype=float)
    return np.where(omega >= 0, 1.0, np.exp(-beta * np.abs(omega)))


@dataclass(frozen=True)
class TabulatedSpectral:
    """Spectral function given on omega >= 0 and extended to omega < 0 by KMS."""

    table: dict

    def __call__(self, omega, beta):
        omega = float(omega)
        for w, v in self.table.items():
            if abs(abs(omega) - float(w)) <= BOHR_TOL:
                return v if omega >= 0 else v * np.exp(-beta * abs(omega))
        raise KeyError(f"no spectral value tabulated for omega={omega:g}")


@dataclass(eq=False)
class SmallSystem:
    """Spins with a Pauli-sum Hamiltonian, coupled to baths through Pauli operators."""

    n: int
    hamiltonian: list  # [(pauli label, coefficient), ...]
    couplings: list | None = None  # pauli labels; default X and Z on every spin
    spectral: Callable = flat_spectral

    def __post_init__(self):
        if not 1 <= self.n <= MAX_SPINS:
            raise ValueError(f"oracle handles 1..{MAX_SPINS} spins, got {self.n}")
        for label, _ in self.hamiltonian:
            if len(label) != self.n:
                raise ValueError(f"term {label!r} does not act on {self.n} spins")
        if self.couplings is None:
            self.couplings = [pauli_on(self.n, {i: p}) for i in range(self.n) for p in "XZ"]
        for label in self.couplings:
            if len(label) != self.n:
                raise ValueError(f"coupling {label!r} does not act on {self.n} spins")
        H = self.H
        if not np.allclose(H, H.conj().T, atol=1e-12):
            raise ValueError("Hamiltonian is not Hermitian")

    @property
    def dim(self) -> int:
        return 2**self.n

    @cached_property
    def H(self) -> np.ndarray:
        H = np.zeros((self.dim, self.dim), dtype=complex)
        for label, coeff in self.hamiltonian:
            H += coeff * pauli(label)
        return H

    @cached_property
    def coupling_ops(self) -> list[np.ndarray]:
        return [pauli(label) for label in self.couplings]

    @cached_property
    def eig(self):
        E, V = np.linalg.eigh(self.H)
        # snap degenerate levels together so Bohr gaps merge exactly
        levels = E.copy()
        start = 0
        for i in range(1, len(E) + 1):
            if i == len(E) or E[i] - E[i - 1] > BOHR_TOL:
                levels[start:i] = E[start:i].mean()
                start = i
        return levels, V

    def is_ergodic(self) -> bool:
        """Whether only multiples of the identity commute with H and every coupling."""
        if self.n > 5:
            raise ValueError("commutant check materializes 4**n matrices; n <= 5 only")
        eye = np.eye(self.dim)
        blocks = [np.kron(A, eye) - np.kron(eye, A.T) for A in [self.H] + self.coupling_ops]
        M = np.vstack(blocks)
        sv = np.linalg.svd(M, compute_uv=False)
        return int(np.sum(sv < 1e-9 * max(1.0, sv.max()))) == 1

    @classmethod
    def from_json(cls, payload) -> "SmallSystem":
        if isinstance(payload, str):
            payload = json.loads(payload)
        spectral = payload.get("spectral", "flat")
        if spectral == "flat":
            spectral = flat_spectral
        else:
            spectral = TabulatedSpectral({float(k): float(v) for k, v in spectral.items()})
        return cls(
            int(payload["n"]),
            [(str(lbl), float(c)) for lbl, c in payload["hamiltonian"]],
            payload.get("couplings"),
            spectral,
        )


def gibbs_state(system: SmallSystem, beta: float) -> np.ndarray:
    E, V = system.eig
    w = np.exp(-beta * (E - E.min()))
    w /= w.sum()
    return (V * w) @ V.conj().T


def liouville_inner(rho, X, Y) -> complex:
    """``Tr(rho X^dagger Y)``."""
    return complex(np.trace(rho @ X.conj().T @ Y))


@dataclass
class BohrComponent:
    alpha: int
    omega: float
    op: np.ndarray  # in the computational basis


def _cluster(values, tol):
    # labels grouping sorted values whose consecutive gaps are <= tol
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    breaks = np.concatenate([[0], np.cumsum(np.diff(sorted_vals) > tol)])
    labels = np.empty_like(breaks)
    labels[order] = breaks
    centers = np.array([sorted_vals[breaks == k].mean() for k in range(breaks[-1] + 1)])
    return labels, centers


def _bohr_in_eigenbasis(system, alpha):
    E, V = system.eig
    A = V.conj().T @ system.coupling_ops[alpha] @ V
    gaps = E[None, :] - E[:, None]  # P_i S P_j carries omega = E_j - E_i
    labels, centers = _cluster(gaps.ravel(), BOHR_TOL)
    labels = labels.reshape(gaps.shape)
    # make the frequency set exactly symmetric so KMS pairs match
    centers = 0.5 * (centers - centers[::-1])
    out = []
    for k, w in enumerate(centers):
        comp = np.where(labels == k, A, 0)
        if np.abs(comp).max() > 1e-13:
            out.append((float(w), comp))
    return out


def bohr_decompose(system: SmallSystem, alpha: int) -> dict[float, np.ndarray]:
    """Frequency components of coupling ``alpha``: ``{omega: S_alpha(omega)}``.

    ``S(omega)`` lowers the energy by ``omega``; the components sum to the
    coupling and ``S(-omega) = S(omega)^dagger``.
    """
    _, V = system.eig
    return {w: V @ comp @ V.conj().T for w, comp in _bohr_in_eigenbasis(system, alpha)}


class DaviesGenerator:
    """Heisenberg-picture Davies generator of ``system`` at inverse temperature ``beta``."""

    def __init__(self, system: SmallSystem, beta: float):
        self.system = system
        self.beta = float(beta)
        E, V = system.eig
        self.E, self.V = E, V
        self.H_eig = np.diag(E).astype(complex)
        self.components = []
        anti = np.zeros((system.dim, system.dim), dtype=complex)
        for alpha in range(len(system.couplings)):
            for w, comp in _bohr_in_eigenbasis(system, alpha):
                rate = float(system.spectral(w, self.beta))
                self.components.append((alpha, w, rate, comp))
                anti += rate * comp.conj().T @ comp
        self._anti = anti
        pos = [w for _, w, _, _ in self.components if w >= -BOHR_TOL]
        self.h_max = max(float(system.spectral(w, self.beta)) for w in pos) if pos else 0.0

    def to_eig(self, X):
        return self.V.conj().T @ X @ self.V

    def from_eig(self, X):
        return self.V @ X @ self.V.conj().T

    def _dis_eig(self, X):
        out = -0.5 * (self._anti @ X + X @ self._anti)
        for _, _, rate, S in self.components:
            out += rate * (S.conj().T @ X @ S)
        return out

    def dissipator(self, X) -> np.ndarray:
        return self.from_eig(self._dis_eig(self.to_eig(np.asarray(X, dtype=complex))))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=complex)
        Xe = self.to_eig(X)
        ham = 1j * (self.H_eig @ Xe - Xe @ self.H_eig)
        return self.from_eig(ham + self._dis_eig(Xe))

    @cached_property
    def rho(self) -> np.ndarray:
        return gibbs_state(self.system, self.beta)

    def inner(self, X, Y) -> complex:
        return liouville_inner(self.rho, X, Y)

    def matrix(self, dissipative_only: bool = False) -> np.ndarray:
        """Superoperator on column-stacked operators (n <= 5)."""
        if self.system.n > 5:
            raise ValueError("superoperator materialization limited to n <= 5")
        D = self.system.dim
        apply = self.dissipator if dissipative_only else self
        M = np.empty((D * D, D * D), dtype=complex)
        for k in range(D * D):
            B = np.zeros(D * D, dtype=complex)
            B[k] = 1
            M[:, k] = apply(B.reshape(D, D, order="F")).reshape(-1, order="F")
        return M


def apply_generator(system: SmallSystem, beta: float, X) -> np.ndarray:
    return DaviesGenerator(system, beta)(X)


def _centered(gen, X):
    X = np.asarray(X, dtype=complex)
    mean = np.trace(gen.rho @ X)
    Xc = X - mean * np.eye(X.shape[0])
    norm = gen.inner(Xc, Xc).real
    return Xc, norm


def dissipation(system: SmallSystem, beta: float, X, generator: DaviesGenerator | None = None) -> float:
    """``-Re <X, L X>_beta`` without normalization."""
    gen = generator or DaviesGenerator(system, beta)
    X = np.asarray(X, dtype=complex)
    return -gen.inner(X, gen(X)).real


def decay_rate(system: SmallSystem, beta: float, X, generator: DaviesGenerator | None = None) -> float:
    """Normalized decay rate of ``X`` after removing its Gibbs mean."""
    gen = generator or DaviesGenerator(system, beta)
    Xc, norm = _centered(gen, X)
    if norm <= 1e-14:
        raise ValueError("observable is proportional to the identity")
    return -gen.inner(Xc, gen(Xc)).real / norm


def upper_bound_rate(system: SmallSystem, beta: float, X, generator: DaviesGenerator | None = None) -> float:
    """``2 h_max sum_alpha <[S_alpha, X], [S_alpha, X]>_beta`` for an eigenvector of ``[H, .]``."""
    gen = generator or DaviesGenerator(system, beta)
    X = np.asarray(X, dtype=complex)
    C = system.H @ X - X @ system.H
    xx = np.vdot(X, X).real
    if xx > 0:
        lam = np.vdot(X, C) / xx
        if np.linalg.norm(C - lam * X) > 1e-8 * max(1.0, np.linalg.norm(X)):
            raise ValueError("observable is not an eigenvector of [H, .]")
    total = 0.0
    for S in system.coupling_ops:
        K = S @ X - X @ S
        total += gen.inner(K, K).real
    return 2.0 * gen.h_max * total


def kitaev_2d(L: int = 2, spectral: Callable = flat_spectral):
    """2D toric code with spins on the links of an L x L torus.

    Returns ``(full system, reduced system, stars, plaquettes, logical)``:
    the full model couples through X and Z on every spin; the reduced one
    keeps only the star terms and Z couplings.  ``logical`` is the support
    of a homologically nontrivial X string.
    """
    geom = build_lattice(2, L)
    n = geom.n_links
    if n > MAX_SPINS:
        raise ValueError(f"{n} spins exceed the oracle cap")
    stars = [tuple(int(e) for e in row) for row in geom.node_links]
    plaqs = [tuple(int(e) for e in row) for row in geom.plaq_links]
    H = [(pauli_on(n, {e: "X" for e in s}), -1.0) for s in stars]
    H += [(pauli_on(n, {e: "Z" for e in c}), -1.0) for c in plaqs]
    full = SmallSystem(n, H, None, spectral)
    reduced = SmallSystem(n, H[: len(stars)], [pauli_on(n, {i: "Z"}) for i in range(n)], spectral)
    # axis-0 links crossing the dual line x0 = 0
    logical = tuple(int(e) for e in range(geom.volume) if geom.positions[e][0] == 0)
    return full, reduced, stars, plaqs, logical


def classical_decay_rate(n: int, stars, support, rates: RateFunction, normalize: bool = True) -> float:
    """Decay rate of ``prod_{j in support} x_j`` under single-spin-flip dynamics.

    Spins are X eigenvalues; energy is the number of frustrated stars at
    inverse temperature ``rates.beta``; spin ``j`` flips at ``rates.rate(dE)``.
    """
    states = np.arange(2**n)
    bits = ((states[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.int64)
    star_idx = [list(s) for s in stars]
    ex = np.zeros(states.size, dtype=np.int64)
    for s in star_idx:
        ex += bits[:, s].sum(axis=1) & 1
    pi = np.exp(-rates.beta * (ex - ex.min()))
    pi /= pi.sum()
    f = np.where(bits[:, list(support)].sum(axis=1) & 1, -1.0, 1.0)
    numer = 0.0
    for j in range(n):
        partner = states ^ (1 << (n - 1 - j))
        r = rates.rate(ex[partner] - ex)
        numer += float(np.sum(pi * r * f * (f - f[partner])))
    if not normalize:
        return numer
    norm = 1.0 - float(pi @ f) ** 2
    if norm <= 1e-14:
        raise ValueError("observable is constant under the Gibbs measure")
    return numer / norm


def verify_classical_reduction(full: SmallSystem, reduced: SmallSystem, stars, plaqs, support, beta: float) -> dict:
    """Compare ``-Tr(rho X L X)`` for ``X = prod_{j in support} sigma_x^j`` across models.

    ``quantum`` uses the full model, ``quantum_reduced`` the star-only model
    with Z couplings, ``classical`` enumerates spin configurations with the
    rates of :class:`RateFunction`.  The ``*_rate`` entries are normalized
    after removing the Gibbs mean (absent for constant observables).
    """
    support = tuple(int(j) for j in support)
    for c in plaqs:
        if len(set(c) & set(support)) % 2:
            raise ValueError("observable anticommutes with a plaquette term")
    X = pauli(pauli_on(full.n, {j: "X" for j in support}))
    gen_full = DaviesGenerator(full, beta)
    gen_red = DaviesGenerator(reduced, beta)
    width = max(sum(1 for s in stars if j in s) for j in range(full.n))
    rates = RateFunction.from_spectral(
        lambda w, b: float(full.spectral(w, b)), beta, range(-width, width + 1), energy_unit=2.0
    )
    out = {
        "quantum": dissipation(full, beta, X, gen_full),
        "quantum_reduced": dissipation(reduced, beta, X, gen_red),
        "classical": classical_decay_rate(full.n, stars, support, rates, normalize=False),
    }
    if support:
        out["quantum_rate"] = decay_rate(full, beta, X, gen_full)
        out["classical_rate"] = classical_decay_rate(full.n, stars, support, rates)
    out["residual"] = abs(out["quantum"] - out["classical"])
    return out

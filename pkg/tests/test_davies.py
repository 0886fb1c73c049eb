import numpy as np
import pytest
from scipy.linalg import expm

from topostab.davies import (
    DaviesGenerator,
    SmallSystem,
    TabulatedSpectral,
    apply_generator,
    bohr_decompose,
    decay_rate,
    dissipation,
    flat_spectral,
    gibbs_state,
    kitaev_2d,
    liouville_inner,
    pauli,
    upper_bound_rate,
    verify_classical_reduction,
)


def rand_herm(rng, D):
    A = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    return A + A.conj().T


def two_level():
    return SmallSystem(1, [("Z", 1.0)], ["X"])


def chain3():
    # transverse-field chain: non-degenerate, irrational Bohr spectrum
    return SmallSystem(3, [("ZZI", 1.0), ("IZZ", 0.7), ("XII", 0.3), ("IXI", 0.45), ("IIX", 0.2)])


def test_pauli_products():
    assert np.allclose(pauli("XY"), np.kron(pauli("X"), pauli("Y")))
    assert np.allclose(pauli("Z") @ pauli("X"), 1j * pauli("Y"))
    with pytest.raises(ValueError):
        pauli("XQ")


def test_system_validation():
    with pytest.raises(ValueError):
        SmallSystem(11, [("I" * 11, 1.0)])
    with pytest.raises(ValueError):
        SmallSystem(2, [("X", 1.0)])
    with pytest.raises(ValueError):
        SmallSystem(1, [("Y", 1j)])
    s = SmallSystem(2, [("ZZ", 1.0)])
    assert s.couplings == ["XI", "ZI", "IX", "IZ"]


def test_bohr_two_level():
    comps = bohr_decompose(two_level(), 0)
    assert sorted(comps) == [-2.0, 2.0]
    lower = comps[2.0]
    # |0> has energy +1 under H = Z; S(2) moves it to |1>
    assert np.allclose(lower, [[0, 0], [1, 0]])
    assert np.allclose(lower + comps[-2.0], pauli("X"))
    assert np.allclose(comps[-2.0], lower.conj().T)


@pytest.mark.parametrize("make", [two_level, chain3])
def test_bohr_invariants(make):
    s = make()
    H = s.H
    for a in range(len(s.couplings)):
        comps = bohr_decompose(s, a)
        assert np.allclose(sum(comps.values()), s.coupling_ops[a], atol=1e-12)
        for w, op in comps.items():
            partner = next(v for k, v in comps.items() if abs(k + w) < 1e-8)
            assert np.allclose(partner, op.conj().T, atol=1e-12)
            assert np.allclose(H @ op - op @ H, -w * op, atol=1e-10)


@pytest.mark.parametrize("make", [two_level, chain3])
@pytest.mark.parametrize("beta", [0.3, 1.7])
def test_generator_basics(make, beta):
    s = make()
    gen = DaviesGenerator(s, beta)
    D = s.dim
    assert np.abs(gen(np.eye(D))).max() <= 1e-12
    rng = np.random.default_rng(0)
    for _ in range(3):
        X, Y = rand_herm(rng, D), rand_herm(rng, D)
        assert abs(np.trace(gen.rho @ gen(X))) <= 1e-10
        lhs = gen.inner(Y, gen.dissipator(X))
        rhs = gen.inner(gen.dissipator(Y), X)
        assert abs(lhs - rhs) <= 1e-10
    assert np.allclose(apply_generator(s, beta, pauli("Z" * s.n)), gen(pauli("Z" * s.n)))


def test_dissipator_commutes_with_hamiltonian_derivation():
    s = chain3()
    gen = DaviesGenerator(s, 0.9)
    rng = np.random.default_rng(3)
    X = rand_herm(rng, s.dim)
    delta = lambda A: s.H @ A - A @ s.H
    assert np.abs(delta(gen.dissipator(X)) - gen.dissipator(delta(X))).max() <= 1e-10


def test_spectrum_positive_and_kernel_trivial():
    s = chain3()
    assert s.is_ergodic()
    gen = DaviesGenerator(s, 1.1)
    M = gen.matrix(dissipative_only=True)
    # symmetric in the Liouville inner product, so eigenvalues are real
    ev = np.linalg.eigvals(M)
    assert ev.real.max() <= 1e-10
    full = np.linalg.eigvals(gen.matrix())
    assert np.sum(np.abs(full) < 1e-9) == 1


def test_non_ergodic_detected():
    s = SmallSystem(2, [("ZI", 1.0), ("IZ", 1.0)], ["XI", "ZI"])
    assert not s.is_ergodic()


def test_semigroup_relaxes_to_gibbs_mean():
    s = chain3()
    beta = 0.8
    gen = DaviesGenerator(s, beta)
    M = gen.matrix()
    rng = np.random.default_rng(5)
    X = rand_herm(rng, s.dim)
    D = s.dim
    Xt = (expm(60.0 * M) @ X.reshape(-1, order="F")).reshape(D, D, order="F")
    target = np.trace(gen.rho @ X) * np.eye(D)
    assert np.abs(Xt - target).max() < 1e-8


def test_two_level_closed_forms():
    s = two_level()
    Z = pauli("Z")
    for beta in (0.0, 0.5, 2.0):
        assert decay_rate(s, beta, Z) == pytest.approx(1 + np.exp(-2 * beta), rel=1e-12)
        bound = upper_bound_rate(s, beta, Z)
        assert bound == pytest.approx(8.0)
        assert dissipation(s, beta, Z) <= bound


def test_decay_rate_of_conserved_quantity():
    s = chain3()
    gen = DaviesGenerator(s, 1.0)
    H = s.H
    r = decay_rate(s, 1.0, H, gen)
    assert r >= -1e-10
    # the Hamiltonian part drops out of <X, L X> for X commuting with H
    Hc = H - np.trace(gen.rho @ H) * np.eye(s.dim)
    assert abs(gen.inner(Hc, 1j * (H @ Hc - Hc @ H))) < 1e-12
    with pytest.raises(ValueError):
        decay_rate(s, 1.0, 3 * np.eye(s.dim))


def test_decay_rate_nonnegative_random():
    s = chain3()
    gen = DaviesGenerator(s, 2.0)
    rng = np.random.default_rng(8)
    for _ in range(5):
        assert decay_rate(s, 2.0, rand_herm(rng, s.dim), gen) >= -1e-10


def test_upper_bound_requires_eigenvector():
    s = two_level()
    assert upper_bound_rate(s, 1.0, np.eye(2)) == 0.0
    with pytest.raises(ValueError):
        upper_bound_rate(s, 1.0, pauli("X") + pauli("Z"))
    # S(omega) itself is an eigenvector of [H, .]
    low = bohr_decompose(s, 0)[2.0]
    assert upper_bound_rate(s, 1.0, low) >= dissipation(s, 1.0, low) - 1e-12


def test_tabulated_spectral():
    tab = TabulatedSpectral({2.0: 0.5})
    s = SmallSystem(1, [("Z", 1.0)], ["X"], tab)
    assert decay_rate(s, 1.0, pauli("Z")) == pytest.approx(0.5 * (1 + np.exp(-2.0)))
    with pytest.raises(KeyError):
        DaviesGenerator(SmallSystem(1, [("Z", 2.0)], ["X"], tab), 1.0)


def test_liouville_inner_and_gibbs():
    s = chain3()
    rho = gibbs_state(s, 0.6)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert liouville_inner(rho, np.eye(8), np.eye(8)).real == pytest.approx(1.0)


def test_flat_spectral_kms():
    for w in (0.5, 2.0, 4.0):
        for beta in (0.3, 1.0):
            assert flat_spectral(-w, beta) == pytest.approx(np.exp(-beta * w) * flat_spectral(w, beta))


@pytest.fixture(scope="module")
def kitaev():
    return kitaev_2d(2)


def test_kitaev_structure(kitaev):
    full, reduced, stars, plaqs, logical = kitaev
    assert full.n == 8 and len(stars) == 4 and len(plaqs) == 4
    assert len(full.couplings) == 16 and len(reduced.couplings) == 8
    assert len(logical) == 2


@pytest.mark.parametrize("beta", [0.4, 1.0, 2.5])
def test_classical_reduction(kitaev, beta):
    full, reduced, stars, plaqs, logical = kitaev
    out = verify_classical_reduction(full, reduced, stars, plaqs, logical, beta)
    assert out["residual"] <= 1e-8
    assert abs(out["quantum_reduced"] - out["classical"]) <= 1e-8
    assert abs(out["quantum_rate"] - out["classical_rate"]) <= 1e-8


def test_classical_reduction_trivial_and_stabilizer(kitaev):
    full, reduced, stars, plaqs, _ = kitaev
    out = verify_classical_reduction(full, reduced, stars, plaqs, (), 1.0)
    assert abs(out["quantum"]) < 1e-12 and out["classical"] == 0.0
    out = verify_classical_reduction(full, reduced, stars, plaqs, stars[1], 1.0)
    assert out["residual"] <= 1e-8 and out["classical"] > 0


def test_classical_reduction_precondition(kitaev):
    full, reduced, stars, plaqs, _ = kitaev
    with pytest.raises(ValueError):
        verify_classical_reduction(full, reduced, stars, plaqs, (0,), 1.0)


def test_kitaev_bound_dominates(kitaev):
    full, _, _, _, logical = kitaev
    X = pauli("".join("X" if j in logical else "I" for j in range(8)))
    gen = DaviesGenerator(full, 1.0)
    assert upper_bound_rate(full, 1.0, X, gen) >= dissipation(full, 1.0, X, gen)

import numpy as np
import pytest

from topostab.decoder import DressedObservable, close_loop
from topostab.dynamics import (
    ChainState,
    ObservableSpec,
    RateFunction,
    autocorr_trajectory,
    batch_means,
    decay_rate_bound,
    energy,
    estimate_loop_tail,
    estimate_one_step_sum,
    fidelity_lower_bound,
    fit_tail_slope,
    iter_gibbs,
    local_energy_delta,
    max_loop_lengths,
    mcmc_step,
    one_step_terms,
    sample_gibbs,
)
from topostab.homology import Frame, boundary, decompose_loops, empty_spins
from topostab.lattice import build_lattice, dual_plane


@pytest.mark.parametrize("family", ["glauber", "metropolis"])
@pytest.mark.parametrize("beta", [0.0, 0.7, 3.0])
def test_rate_ratio(family, beta):
    r = RateFunction(family, beta)
    for dE in (-4, -2, 0, 2, 4):
        assert r.rate(dE) > 0
        assert np.isclose(r.rate(dE) * np.exp(beta * dE), r.rate(-dE), rtol=1e-12)


def test_glauber_infinite_temperature():
    acc = RateFunction("glauber", 0.0).acceptance(4)
    assert np.allclose(acc[::2], 0.5)


def test_custom_table_validation():
    beta = 1.0
    good = {-2: 1.0, 0: 1.0, 2: np.exp(-2.0)}
    assert RateFunction("custom", beta, good).rate(2) == pytest.approx(np.exp(-2.0))
    with pytest.raises(ValueError):
        RateFunction("custom", beta, {-2: 1.0, 2: 0.5})
    with pytest.raises(ValueError):
        RateFunction("custom", beta, {2: 1.0}).rate(4)
    with pytest.raises(ValueError):
        RateFunction("bogus", beta)


def test_from_spectral_is_metropolis_at_doubled_beta():
    from topostab.davies import flat_spectral

    r = RateFunction.from_spectral(flat_spectral, 0.8, [-4, -2, 0, 2, 4])
    m = RateFunction("metropolis", 1.6)
    assert r.beta == pytest.approx(1.6)
    for dE in (-4, -2, 0, 2, 4):
        assert r.rate(dE) == pytest.approx(m.rate(dE))


def test_h_max():
    assert RateFunction("glauber", 2.0).h_max() == pytest.approx(1 / (1 + np.exp(-8.0)))
    assert RateFunction("metropolis", 2.0).h_max() == 1.0


def test_energy_examples():
    g = build_lattice(3, 6)
    assert energy(g, empty_spins(g)) == 0
    S = empty_spins(g)
    S[5] = 1
    assert energy(g, S) == 4
    # a confined surface removed by closing its loop lowers the energy by its length
    S[[5, 5 + 1]] = 1
    S[200] = 1
    K = boundary(g, S)
    big = max(decompose_loops(g, K), key=len)
    assert energy(g, S ^ close_loop(g, big)) == energy(g, S) - len(big)


def test_local_energy_delta():
    g = build_lattice(3, 4)
    st = ChainState.cold(g)
    assert local_energy_delta(g, st, 0) == 4
    # one neighbour through each link of plaquette 7 excites all four of its links
    S = empty_spins(g)
    for e in g.plaq_links[7]:
        other = [p for p in g.link_plaqs[e] if p != 7][0]
        S[other] ^= 1
    st = ChainState(g, S)
    assert local_energy_delta(g, st, 7) == -4
    deltas = {local_energy_delta(g, st, j) for j in range(g.n_plaquettes)}
    assert deltas <= {-4, -2, 0, 2, 4}


def test_mcmc_step_keeps_syndrome():
    g = build_lattice(3, 3)
    st = ChainState.cold(g, seed=1)
    r = RateFunction("glauber", 0.3)
    for _ in range(2000):
        mcmc_step(st, r)
    st.check_integrity()
    st.sweep(r, 20)
    st.check_integrity()
    assert st.sweeps == 20


def test_cube_syndrome_chain():
    g = build_lattice(4, 3)
    st = ChainState.cold(g, "cubes", seed=2)
    st.sweep(RateFunction("glauber", 0.5), 5)
    st.check_integrity()
    assert st.table.shape[1] == 4
    with pytest.raises(ValueError):
        ChainState.cold(g, "faces")


def test_detailed_balance_exact():
    g = build_lattice(3, 3)
    rng = np.random.default_rng(0)
    for family in ("glauber", "metropolis"):
        r = RateFunction(family, 1.3)
        acc = r.acceptance(4)
        for _ in range(200):
            S = rng.integers(0, 2, g.n_plaquettes, dtype=np.uint8)
            j = int(rng.integers(g.n_plaquettes))
            F = S.copy()
            F[j] ^= 1
            E0, E1 = energy(g, S), energy(g, F)
            lhs = np.exp(-1.3 * E0) * acc[E1 - E0 + 4]
            rhs = np.exp(-1.3 * E1) * acc[E0 - E1 + 4]
            assert lhs == pytest.approx(rhs, rel=1e-12)


def test_sampling_deterministic_and_cold():
    g = build_lattice(3, 4)
    a = sample_gibbs(g, 10.0, n=50, seed=3, burn_in=20)
    b = sample_gibbs(g, 10.0, n=50, seed=3, burn_in=20)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(energy(g, S) == 0 for S in a)
    c = sample_gibbs(g, 0.5, n=20, seed=4, burn_in=20)
    assert not all(np.array_equal(x, y) for x, y in zip(c, sample_gibbs(g, 0.5, n=20, seed=5, burn_in=20)))


def test_infinite_temperature_link_density():
    g = build_lattice(3, 4)
    s = sample_gibbs(g, 0.0, n=400, seed=9, burn_in=10)
    dens = s.energies / g.n_links
    m, err = batch_means(dens)
    assert abs(m - 0.5) < 3 * err + 1e-3


def test_sampling_rejects_bad_args():
    g = build_lattice(3, 3)
    with pytest.raises(ValueError):
        list(iter_gibbs(g, RateFunction("glauber", 1.0), 3, 0, thinning=0))
    with pytest.raises(ValueError):
        sample_gibbs(g, 1.0, RateFunction("glauber", 2.0), n=3)


def test_batch_means():
    m, e = batch_means(np.ones(64))
    assert (m, e) == (1.0, 0.0)
    with pytest.raises(ValueError):
        batch_means(np.ones(8))
    rng = np.random.default_rng(0)
    x = rng.normal(size=32000)
    m, e = batch_means(x)
    assert abs(e - 1 / np.sqrt(32000)) < 0.5 / np.sqrt(32000)


def test_loop_tail_basics():
    g = build_lattice(3, 4)
    s = sample_gibbs(g, 1.0, n=64, seed=1, burn_in=20)
    lengths = max_loop_lengths(g, s)
    assert estimate_loop_tail(g, s, 0, 1.0).value == 1.0
    tails = [estimate_loop_tail(g, s, l, 1.0, lengths=lengths).value for l in range(0, 30, 2)]
    assert all(a >= b for a, b in zip(tails, tails[1:]))
    with pytest.raises(ValueError):
        estimate_loop_tail(g, [], 4)


def test_one_step_cold_and_bounded():
    g = build_lattice(4, 3)
    obs = DressedObservable(g, dual_plane(g, (0, 1)), Frame.default(4), None)
    cold = [empty_spins(g)] * 16
    assert estimate_one_step_sum(g, cold, obs).value == 0.0
    s = sample_gibbs(g, 1.2, n=16, seed=2, burn_in=10)
    res = estimate_one_step_sum(g, s, obs, 1.2, 2, validate_fraction=1.0)
    assert 0.0 <= res.value <= 2 * g.n_plaquettes
    assert res.value == pytest.approx(np.mean([one_step_terms(obs, S) for S in s]))


def test_one_step_all_long_equals_twice_plane_size():
    # with c = 1/8 at desk-scale L every loop is long, so only the raw value moves
    g = build_lattice(4, 3)
    T = dual_plane(g, (0, 1))
    obs = DressedObservable(g, T, Frame.default(4), 1 / 8)
    s = sample_gibbs(g, 0.4, n=16, seed=2, burn_in=10)
    assert estimate_one_step_sum(g, s, obs).value == pytest.approx(2 * len(T))


def test_decay_rate_bound():
    assert decay_rate_bound(0, 0.7) == 0
    assert decay_rate_bound(0.25, 0.5) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        decay_rate_bound(-1, 1)


def test_fidelity_bound():
    assert fidelity_lower_bound(1, 1) == 1
    eps, t = 0.01, 3.0
    assert fidelity_lower_bound(np.exp(-eps * t), np.exp(-eps * t)) == pytest.approx(np.exp(-eps * t))
    assert fidelity_lower_bound(1, 0) == 0.5
    with pytest.raises(ValueError):
        fidelity_lower_bound(1.5, 0)


def test_fit_tail_slope():
    l = np.arange(4, 16, 2)
    slope, err, used = fit_tail_slope(l, np.exp(-0.9 * l), 10**9)
    assert slope == pytest.approx(-0.9) and used == len(l)
    assert np.isnan(fit_tail_slope(l, np.zeros(len(l)), 100)[0])


def test_trajectory_basics():
    g = build_lattice(3, 4)
    spec = ObservableSpec("x", (0,), 0, None)
    res = autocorr_trajectory(g, 0.0, None, spec, [0, 2, 5, 10], 40, seed=1, burn_in=5)
    assert res.mean[0] == 1.0
    assert abs(res.mean[-1]) < 0.35
    again = autocorr_trajectory(g, 0.0, None, spec, [0, 2, 5, 10], 40, seed=1, burn_in=5)
    assert np.array_equal(res.per_chain, again.per_chain)
    with pytest.raises(ValueError):
        autocorr_trajectory(g, 0.0, None, spec, [5, 2], 4, seed=1)


def test_trajectory_z_observable_runs():
    g = build_lattice(3, 4)
    res = autocorr_trajectory(g, 1.0, None, ObservableSpec("z", (1, 2)), [0, 1], 4, seed=0, burn_in=2)
    assert res.mean[0] == 1.0

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backflow import potts, rate, replica


def brute_energy(lat):
    # bond walk written directly from the geometry rule, no shared helpers
    els = replica.elements(lat.q)
    total = 0.0
    for t in range(lat.ly):
        for x in range(lat.lx):
            if t % 2 == 0:
                partner = x ^ 1
            else:
                partner = (x + 1) % lat.lx if x % 2 else (x - 1) % lat.lx
            for y in (x, partner):
                up = lat.boundary[y] if t == lat.ly - 1 else lat.spins[t + 1, y]
                g = replica.compose(replica.inverse(els[lat.spins[t, x]]), els[up])
                total += replica.bond_energy(g, lat.p[t])
    return total


def test_boundary_row_centered():
    row = potts.boundary_row(40, 20)
    assert np.flatnonzero(row == replica.SWAP_LABEL).tolist() == list(range(10, 30))
    assert np.all(potts.boundary_row(40, 0) == 0)
    with pytest.raises(ValueError):
        potts.boundary_row(40, 41)


def test_odd_width_rejected():
    with pytest.raises(ValueError):
        potts.build_lattice(7, 4, 3, [0.1] * 4, 0)


def test_short_schedule_rejected():
    with pytest.raises(ValueError):
        potts.build_lattice(8, 10, 3, [0.1] * 5, 0)


def test_geometry_bond_count_and_degree():
    lat = potts.build_lattice(40, 50, 3, [0.2] * 50, 0)
    bonds = list(lat.bonds())
    assert len(bonds) == lat.n_bonds == 2 * 40 * 49 + 2 * 40
    up = np.zeros((50, 40), int)
    down = np.zeros((50, 40), int)
    for _, (t, x), upper, _ in bonds:
        up[t, x] += 1
        if upper is not None:
            down[upper] += 1
    assert np.all(up == 2)
    assert np.all(down[1:] == 2) and np.all(down[0] == 0)
    # each neighbouring pair of layers forms 2x2 complete blocks
    for t in range(49):
        assert np.all(lat.partner[t][lat.partner[t]] == np.arange(40))


def test_identity_energy_zero_and_nonmarkovian_layer():
    lat = potts.build_lattice(8, 6, 3, [0.2] * 6, 0)
    assert potts.total_energy(lat) == 0.0
    p = [0.2, 0.2, -0.5, 0.2, 0.2, 0.2]
    lat = potts.build_lattice(8, 6, 3, p, 0)
    assert potts.total_energy(lat) == pytest.approx(2 * 8 * -math.log(1.5))


@given(seed=st.integers(0, 10_000), l_a=st.integers(0, 8))
@settings(max_examples=20, deadline=None)
def test_energy_matches_bond_walk(seed, l_a):
    lat = potts.build_lattice(8, 6, 3, [0.25] * 6, l_a, init="random", seed=seed)
    assert potts.total_energy(lat) == pytest.approx(brute_energy(lat), rel=1e-12)
    assert potts.local_energy(lat).sum() == pytest.approx(potts.total_energy(lat), rel=1e-12)


def test_boundary_energy_identity_bulk():
    lat = potts.build_lattice(8, 4, 3, [0.3] * 4, 4)
    # four fixed swaps, each meeting identity spins through two bonds
    assert potts.boundary_energy(lat) == pytest.approx(8 * -math.log(0.3))
    assert potts.total_energy(lat) == pytest.approx(potts.boundary_energy(lat))


@pytest.mark.parametrize("row,expected_power", [(0, 2), (2, 4), (4, 4)])
def test_single_site_gibbs_ratio(row, expected_power):
    p = 0.2
    lat = potts.build_lattice(8, 5, 3, [p] * 5, 0)
    e0 = potts.total_energy(lat)
    lat.spins[row, 3] = 4  # a 3-cycle
    # acceptance of the proposal min(1, e^{-dE}) = p^(number of incident bonds)
    assert math.exp(-(potts.total_energy(lat) - e0)) == pytest.approx(p ** expected_power)


def test_metropolis_same_label_always_accepted():
    lat = potts.build_lattice(2, 1, 2, [0.1], 0)  # Q=2: only two labels
    potts.seed_sampler(0)
    acc = [potts.metropolis_step(lat) for _ in range(2000)]
    assert np.mean(acc) > 0.5 - 0.05  # half of proposals repeat the label


def test_boundary_immutable_and_seed_determinism():
    sched = rate.discretize(rate.RateProfile.lorentzian(0.2), 0.5, 12, 0.2)
    a = potts.build_lattice(8, 12, 3, sched, 4, init="random", seed=5)
    b = a.copy()
    row = a.boundary.copy()
    cfg = potts.McConfig(n_therm=200, n_sample_stride=3, n_measurements=50, seed=9)
    ra = potts.run_chain(a, cfg)
    rb = potts.run_chain(b, cfg)
    assert np.array_equal(a.boundary, row)
    np.testing.assert_array_equal(ra.total, rb.total)
    np.testing.assert_array_equal(a.spins, b.spins)
    np.testing.assert_allclose(ra.total, ra.total)  # no NaNs
    assert np.all((a.spins >= 0) & (a.spins < 6))


def test_chain_records_consistent_energies():
    lat = potts.build_lattice(8, 6, 3, [0.25] * 6, 2, init="random", seed=1)
    r = potts.run_chain(lat, potts.McConfig(n_therm=50, n_sample_stride=2, n_measurements=10, seed=1))
    assert r.total[-1] == pytest.approx(potts.total_energy(lat))
    assert r.boundary[-1] == pytest.approx(potts.boundary_energy(lat))
    assert r.local.shape == (6, 8)
    assert r.misaligned.shape == (6,)
    assert np.all((r.misaligned >= 0) & (r.misaligned <= 1))


def test_wolff_rejection_at_identity_boundary():
    # l_A = 0 and every spin aligned: any accepted flip of a boundary-touching
    # cluster raises the energy, so the flip is accepted with prob < 1
    lat = potts.build_lattice(4, 1, 3, [0.3], 0)
    potts.seed_sampler(2)
    sizes = [potts.wolff_step(lat.copy()) for _ in range(300)]
    assert any(s < 0 for s in sizes)


def test_clamped_layer_never_split():
    sched = rate.discretize(rate.RateProfile.lorentzian(0.2), 0.5, 16, 1.0)
    lat = potts.build_lattice(8, 16, 3, sched, 4, init="identity")
    r = potts.run_chain(lat, potts.McConfig(n_therm=2000, n_sample_stride=5, n_measurements=200, seed=4))
    assert np.all(r.misaligned[8:12] < math.exp(-replica.DEFAULT_CLAMP + 10))


@pytest.mark.parametrize("algorithm", ["wolff", "metropolis"])
def test_stationarity_two_site_toy(algorithm):
    lat = potts.build_lattice(2, 1, 3, [0.3], 1)
    exact = potts.exact_gibbs(lat)
    hist = potts.state_histogram(lat, algorithm, 1000, 200_000, seed=3)
    tv = 0.5 * np.abs(hist / hist.sum() - exact).sum()
    assert tv < 0.02


def test_autocorrelation_and_batches():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20000)
    assert potts.autocorrelation_time(x) == pytest.approx(0.5, abs=0.1)
    ar = np.zeros(20000)
    for i in range(1, len(ar)):
        ar[i] = 0.9 * ar[i - 1] + x[i]
    # AR(1): tau = (1 + phi) / (2 (1 - phi)) = 9.5
    assert potts.autocorrelation_time(ar) == pytest.approx(9.5, rel=0.25)
    assert potts.batch_stderr(x) == pytest.approx(1 / math.sqrt(len(x)), rel=0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        potts.McConfig(algorithm="heatbath")
    with pytest.raises(ValueError):
        potts.McConfig(n_measurements=0)

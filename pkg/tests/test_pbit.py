import math

import numpy as np
import pytest

from pbitnqs import fixedpoint as fx
from pbitnqs.pbit import (PbitNetwork, activation_table, all_states, boltzmann_distribution,
                          color_classes, gibbs_sweep, network_from_text, network_to_text,
                          pbit_input, pbit_update, sample, state_index, update_order)

from conftest import total_variation


def star(n_leaves, weight, bias_center=0.0):
    couplers = {(0, k): weight for k in range(1, n_leaves + 1)}
    h = np.zeros(n_leaves + 1)
    h[0] = bias_center
    return PbitNetwork.from_couplers(n_leaves + 1, couplers, h)


def random_network(rng, n, wscale=0.5, hscale=0.5, density=1.0):
    w = np.triu(rng.normal(0, wscale, (n, n)), 1)
    w *= rng.random((n, n)) < density
    return PbitNetwork.from_dense(w + w.T, rng.normal(0, hscale, n))


def brute_force_boltzmann(net):
    """Independent oracle: loop over states and couplers explicitly."""
    p = []
    for k in range(1 << net.n):
        m = [1 if (k >> i) & 1 else -1 for i in range(net.n)]
        e = sum(w * m[i] * m[j] for (i, j), w in net.couplers().items())
        e += sum(h * mi for h, mi in zip(net.biases, m))
        p.append(math.exp(e))
    z = sum(p)
    return np.array(p) / z


# -- construction ---------------------------------------------------------

def test_weights_symmetric_and_quantized():
    net = PbitNetwork.from_couplers(3, {(2, 0): 0.3, (1, 2): -1.06}, [0.1, 0, 0])
    assert net.weight(0, 2) == net.weight(2, 0) == fx.quantize(0.3)
    assert net.weight(1, 2).value == -1.0
    assert net.weight(1, 1).raw == 0
    assert net.weight(0, 1).raw == 0
    assert list(map(tuple, net.edges)) == [(0, 2), (1, 2)]
    d = net.dense_weights()
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 1), (1, 0)], [(0, 5)]])
def test_invalid_couplers_rejected(edges):
    with pytest.raises(ValueError):
        PbitNetwork(3, edges, [8] * len(edges), [0, 0, 0])


def test_zero_size_network_rejected():
    with pytest.raises(ValueError):
        PbitNetwork(0, [], [], [])


# -- pbit_input / pbit_update ---------------------------------------------

def test_input_bias_only():
    net = PbitNetwork(1, [], [], fx.quantize_raw([0.5]))
    assert pbit_input(net, 0) == 0.5


def test_input_sums_six_neighbours():
    net = star(6, 1.0)
    net.state[:] = 1
    assert pbit_input(net, 0) == 6.0


def test_input_saturates():
    net = star(70, 1.0)
    net.state[:] = 1
    assert pbit_input(net, 0) == 63.875
    net.state[:] = -1
    assert pbit_input(net, 0) == -64.0


def test_input_index_checked():
    with pytest.raises(IndexError):
        pbit_input(star(2, 1.0), 3)


@pytest.mark.parametrize("I, r, expected", [
    (0.0, -0.3, 1), (0.0, 0.3, -1), (63.875, 0.999999, 1), (63.875, -1.0, 1),
    (-64.0, -0.999999, -1),
])
def test_update_rule(I, r, expected):
    assert pbit_update(I, r) == expected


def test_conditional_probability_with_frozen_neighbours():
    # neighbours pinned by saturated biases: tanh(63.875) == 1.0 in float64
    net = PbitNetwork.from_couplers(4, {(0, 1): 0.5, (0, 2): -0.25, (0, 3): 0.125},
                                    [0.125, 63.875, 63.875, -64.0])
    b = sample(net, 200_000, 1, 10, seed=3)
    assert np.all(b.rows[:, 1:] == [1, 1, -1])
    I = 0.125 + 0.5 - 0.25 - 0.125
    p = (1 + math.tanh(I)) / 2
    se = math.sqrt(p * (1 - p) / len(b))
    assert abs((b.rows[:, 0] == 1).mean() - p) < 4 * se


# -- sweeps and sampling --------------------------------------------------

def test_sweep_keeps_bipolar_states(rng):
    net = random_network(rng, 10)
    for _ in range(5):
        gibbs_sweep(net)
        assert set(np.unique(net.state)) <= {-1, 1}


def test_zero_network_gives_fair_coins():
    net = PbitNetwork(8, [], [], np.zeros(8))
    b = sample(net, 10_000, 1, 0, seed=1)
    se = 1 / math.sqrt(len(b))
    assert np.all(np.abs(b.rows.mean(axis=0)) < 4 * se)


def test_brute_force_oracle_matches_vectorised(rng):
    net = random_network(rng, 5)
    assert np.allclose(boltzmann_distribution(net), brute_force_boltzmann(net), rtol=1e-12)


def test_two_strongly_coupled_pbits_align():
    net = PbitNetwork.from_couplers(2, {(0, 1): 10.0}, [0, 0])
    p = brute_force_boltzmann(net)
    p_equal = p[0] + p[3]
    assert p_equal == pytest.approx(math.exp(10) / (math.exp(10) + math.exp(-10)))
    b = sample(net, 20_000, 1, 50, seed=7)
    assert np.mean(b.rows[:, 0] == b.rows[:, 1]) > 0.999


def test_bias_only_means(rng):
    h = 0.375
    net = PbitNetwork(6, [], [], fx.quantize_raw(np.full(6, h)))
    b = sample(net, 20_000, 1, 0, seed=11)
    se = math.sqrt((1 - math.tanh(h) ** 2) / len(b))
    assert np.all(np.abs(b.rows.mean(axis=0) - math.tanh(h)) < 4 * se)


def test_ferromagnetic_cell_prefers_aligned_states():
    w = {(i, 4 + j): 2.0 for i in range(4) for j in range(4)}
    net = PbitNetwork.from_couplers(8, w, np.zeros(8))
    p = brute_force_boltzmann(net)
    aligned = p[0] + p[255]
    assert aligned > 0.99
    b = sample(net, 20_000, 1, 100, seed=2)
    k = state_index(b.rows)
    assert np.mean((k == 0) | (k == 255)) > 0.98


@pytest.mark.parametrize("update", ["sequential", "colored"])
def test_eight_pbit_distribution_matches_enumeration(rng, update):
    net = random_network(rng, 8, density=0.6)
    b = sample(net, 200_000, 1, 100, seed=5, update=update)
    emp = np.bincount(state_index(b.rows), minlength=256) / len(b)
    assert total_variation(emp, brute_force_boltzmann(net)) < 0.05


def test_sample_is_seed_deterministic(rng):
    net = random_network(rng, 12)
    a = sample(net, 3, 2, 5, seed=99)
    b = sample(net, 3, 2, 5, seed=99)
    c = sample(net, 3, 2, 5, seed=100)
    assert a == b
    assert a.rows.shape == (3, 12)
    assert (a.seed, a.sweeps_per_sample, a.burn_in_sweeps) == (99, 2, 5)
    assert a != c


def test_sample_arguments_validated():
    net = PbitNetwork(2, [], [], [0, 0])
    with pytest.raises(ValueError):
        sample(net, 0, 1, 0, seed=0)
    with pytest.raises(ValueError):
        sample(net, 1, 0, 0, seed=0)


def test_colored_order_uses_independent_sets(rng):
    net = random_network(rng, 15, density=0.3)
    classes = color_classes(net)
    d = net.dense_weights()
    for cls in classes:
        assert np.all(d[np.ix_(cls, cls)] == 0)
    assert sorted(update_order(net, "colored")) == list(range(15))


def test_lut_activation_table():
    exact = activation_table("tanh")
    lut = activation_table("lut")
    assert len(exact) == len(lut) == 1024
    assert np.max(np.abs(lut - exact)) <= 2.0 ** -9
    with pytest.raises(ValueError):
        activation_table("cordic")


def test_lut_mode_samples_close_to_exact(rng):
    net = random_network(rng, 6)
    b = sample(net, 100_000, 1, 50, seed=4, activation="lut")
    emp = np.bincount(state_index(b.rows), minlength=64) / len(b)
    assert total_variation(emp, boltzmann_distribution(net)) < 0.05


def test_all_states_indexing():
    s = all_states(3)
    assert np.array_equal(state_index(s), np.arange(8))
    assert list(s[5]) == [1, -1, 1]


def test_network_text_round_trip(rng):
    net = random_network(rng, 7)
    back = network_from_text(network_to_text(net))
    assert back.same_parameters(net)


@pytest.mark.parametrize("text, line", [
    ("n 3\nbias 0 0.5\ncoupler 0 9 1.0\n", 3),
    ("n 3\nbogus\n", 2),
    ("bias 0 1\n", 1),
    ("n 2\ncoupler 0 1 x\n", 2),
])
def test_network_text_errors_name_the_line(text, line):
    with pytest.raises(ValueError, match=f"line {line}"):
        network_from_text(text)

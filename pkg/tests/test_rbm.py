import itertools
import math
import struct

import numpy as np
import pytest

from pbitnqs.pbit import all_states
from pbitnqs.rbm import (RbmParams, checkpoint_bytes, checkpoint_from_bytes,
                         effective_sampler_params, load_checkpoint, log_derivatives, log_psi,
                         psi_ratio_flip, psi_ratios_all, save_checkpoint)

from conftest import random_rbm


def hidden_sum_log_psi(v, p):
    """log sum_h exp(a.v + b.h + v W h) by explicit enumeration of h."""
    total = 0.0
    for h in itertools.product([-1, 1], repeat=p.nh):
        h = np.array(h, dtype=float)
        total += math.exp(p.a @ v + p.b @ h + v @ p.W @ h)
    return math.log(total)


def joint_visible_marginal(a, b, W):
    """Visible marginal of exp(a.v + b.h + v W h) by enumerating (v, h) jointly."""
    nv, nh = W.shape
    marg = np.zeros(1 << nv)
    for k, v in enumerate(all_states(nv)):
        for h in itertools.product([-1, 1], repeat=nh):
            h = np.array(h, dtype=float)
            marg[k] += math.exp(a @ v + b @ h + v @ W @ h)
    return marg / marg.sum()


def flip(v, i):
    v = np.array(v, dtype=float)
    v[i] *= -1
    return v


def test_zero_params_log_psi():
    p = RbmParams.zeros(12, 48)
    v = np.ones(12)
    assert log_psi(v, p) == pytest.approx(48 * math.log(2), abs=1e-12)
    assert 48 * math.log(2) == pytest.approx(33.27106, abs=1e-5)
    p.a[0] = 0.5
    assert log_psi(v, p) == pytest.approx(0.5 + 48 * math.log(2), abs=1e-12)


def test_log_psi_matches_hidden_sum(rng):
    p = random_rbm(rng, 3, 2, scale=0.7)
    for v in all_states(3):
        assert log_psi(v, p) == pytest.approx(hidden_sum_log_psi(v, p), rel=1e-12)


def test_log_psi_batched_matches_rows(rng):
    p = random_rbm(rng, 5, 7)
    s = all_states(5)
    assert np.allclose(log_psi(s, p), [log_psi(v, p) for v in s])


def test_length_mismatch():
    with pytest.raises(ValueError):
        log_psi(np.ones(4), RbmParams.zeros(3, 2))
    with pytest.raises(ValueError):
        log_derivatives(np.ones(4), RbmParams.zeros(3, 2))
    with pytest.raises(IndexError):
        psi_ratio_flip(np.ones(3), 3, RbmParams.zeros(3, 2))


def test_ratio_zero_params():
    p = RbmParams.zeros(6, 12)
    for i in range(6):
        assert psi_ratio_flip(np.ones(6), i, p) == 1.0


def test_ratio_consistency_and_involution(rng):
    for _ in range(20):
        p = random_rbm(rng, 6, 9, scale=0.5)
        v = rng.choice([-1.0, 1.0], size=6)
        for i in range(6):
            r = psi_ratio_flip(v, i, p)
            assert r == pytest.approx(math.exp(log_psi(flip(v, i), p) - log_psi(v, p)), rel=1e-12)
            assert r * psi_ratio_flip(flip(v, i), i, p) == pytest.approx(1.0, rel=1e-12)


def test_all_ratios_match_single_ratios(rng):
    p = random_rbm(rng, 5, 4)
    s = all_states(5)
    R = psi_ratios_all(s, p)
    for k, v in enumerate(s):
        assert np.allclose(R[k], [psi_ratio_flip(v, i, p) for i in range(5)], rtol=1e-12)


def test_log_derivatives_zero_params():
    p = RbmParams.zeros(4, 8)
    v = np.array([1.0, -1, -1, 1])
    O = log_derivatives(v, p)
    assert O.shape == (4 + 8 + 32,)
    assert np.array_equal(O[:4], v)
    assert np.all(O[4:] == 0)


def test_log_derivative_single_weight():
    p = RbmParams([0.0], [0.0], [[0.3]])
    O = log_derivatives(np.array([1.0]), p)
    assert O[2] == pytest.approx(0.29131, abs=1e-5)
    h = 1e-5
    fd = (log_psi([1.0], RbmParams([0.0], [0.0], [[0.3 + h]]))
          - log_psi([1.0], RbmParams([0.0], [0.0], [[0.3 - h]]))) / (2 * h)
    assert O[2] == pytest.approx(fd, rel=1e-8)


def test_log_derivatives_match_finite_differences(rng):
    h = 1e-5
    for _ in range(5):
        p = random_rbm(rng, 4, 3, scale=0.5)
        v = rng.choice([-1.0, 1.0], size=4)
        O = log_derivatives(v, p)
        x = p.flat()
        for k in range(len(x)):
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            fd = (log_psi(v, RbmParams.from_flat(xp, 4, 3))
                  - log_psi(v, RbmParams.from_flat(xm, 4, 3))) / (2 * h)
            assert abs(O[k] - fd) <= 1e-6 * max(abs(fd), 1e-3)


def test_parameter_ordering_round_trip(rng):
    p = random_rbm(rng, 3, 5)
    x = p.flat()
    assert np.array_equal(x[:3], p.a)
    assert np.array_equal(x[3:8], p.b)
    assert np.array_equal(x[8:], p.W.reshape(-1))
    q = RbmParams.from_flat(x, 3, 5)
    assert np.array_equal(q.W, p.W)


def test_spin_flip_symmetry_without_biases(rng):
    p = random_rbm(rng, 8, 16)
    p.a[:] = 0
    p.b[:] = 0
    s = all_states(8)
    assert np.array_equal(log_psi(s, p), log_psi(-s, p))
    p.b[0] = 0.4     # a hidden bias breaks the symmetry
    assert not np.allclose(log_psi(s, p), log_psi(-s, p))


def test_random_init_statistics():
    p = RbmParams.random(12, 4, 0.01, seed=0)
    assert (p.nv, p.nh, p.alpha) == (12, 48, 4)
    assert np.std(p.W) == pytest.approx(0.01, rel=0.1)


def test_non_finite_params_rejected():
    with pytest.raises(ValueError):
        RbmParams([np.nan], [0.0], [[0.0]])


def test_effective_params_zero():
    sp = effective_sampler_params(RbmParams.zeros(3, 2), "psi2-duplicate")
    assert sp.duplication == 2
    assert sp.b.shape == (4,) and sp.W.shape == (3, 4)
    assert not sp.a.any() and not sp.b.any() and not sp.W.any()


def test_duplicated_marginal_is_psi_squared(rng):
    p = random_rbm(rng, 3, 2, scale=0.6)
    sp = effective_sampler_params(p, "psi2-duplicate")
    marg = joint_visible_marginal(sp.a, sp.b, sp.W)
    psi2 = np.exp(2 * log_psi(all_states(3), p))
    psi2 /= psi2.sum()
    assert np.max(np.abs(marg / psi2 - 1)) < 1e-10


def test_reweight_marginal_is_psi(rng):
    p = random_rbm(rng, 3, 2, scale=0.6)
    sp = effective_sampler_params(p, "psi-reweight")
    marg = joint_visible_marginal(sp.a, sp.b, sp.W)
    psi = np.exp(log_psi(all_states(3), p))
    assert np.max(np.abs(marg / (psi / psi.sum()) - 1)) < 1e-10


def test_unknown_mode():
    with pytest.raises(ValueError):
        effective_sampler_params(RbmParams.zeros(2, 2), "psi3")


def test_checkpoint_layout(rng, tmp_path):
    p = random_rbm(rng, 2, 3)
    data = checkpoint_bytes(p)
    assert data[:4] == b"RBM1"
    assert struct.unpack("<II", data[4:12]) == (2, 3)
    assert len(data) == 12 + 8 * (2 + 3 + 6)
    assert struct.unpack("<d", data[12:20])[0] == p.a[0]
    assert struct.unpack("<d", data[-8:])[0] == p.W[1, 2]
    path = tmp_path / "p.rbm"
    save_checkpoint(path, p)
    q = load_checkpoint(path)
    assert np.array_equal(q.flat(), p.flat())


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        checkpoint_from_bytes(b"RBM2" + bytes(8))
    with pytest.raises(ValueError):
        checkpoint_from_bytes(b"RBM1" + struct.pack("<II", 1, 1) + bytes(7))

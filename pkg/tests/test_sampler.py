"""Gibbs machinery checked against exhaustive enumeration.

Statistical assertions run on fixed seeds with sample sizes giving
comfortable margins, so they are deterministic in practice.
"""

import numpy as np
import pytest

from cdbm.model_core import (
    Dbm2Params,
    FlatBmParams,
    all_binary_states,
    energy_dbm_batch,
    exact_enumerate,
    exact_visible_marginal,
    pack_state_indices,
)
from cdbm.sampler import (
    ParticleSet,
    conditional_flat,
    dbm_gibbs_clamped,
    dbm_gibbs_free,
    flat_gibbs_sweep,
    generate_digits,
    init_particles,
    mean_representation,
)
from cdbm.util import child_rng, logsumexp, sigmoid

from conftest import random_dbm, random_flat


def enumerated_conditional(m, x, i):
    """p(x_i=1 | x_-i) from the two unnormalized state probabilities."""
    x1 = np.asarray(x, float).copy()
    x0 = x1.copy()
    x1[i], x0[i] = 1.0, 0.0
    from cdbm.model_core import energy_flat
    e1, e0 = energy_flat(m, x1), energy_flat(m, x0)
    return 1.0 / (1.0 + np.exp(e1 - e0))


def dbm_joint_tv(m, n_sweeps, seed, n_chains=100, burn_in=500):
    enum = exact_enumerate(m)
    p = init_particles(m, n_chains, child_rng(seed, 0))
    rng = child_rng(seed, 1)
    counts = np.zeros(enum.n_states)
    sweeps_per_chain = burn_in + n_sweeps // n_chains
    for sweep in range(sweeps_per_chain):
        p = dbm_gibbs_free(m, p, rng)
        if sweep >= burn_in:
            np.add.at(counts, pack_state_indices(p.xs, p.ys, p.zs), 1)
    return 0.5 * np.abs(counts / counts.sum() - enum.probs).sum()


class TestConditionalFlat:
    def test_decoupled_unit(self):
        m = FlatBmParams(np.zeros((3, 3)), np.array([0.7, -1.2, 0.0]),
                         np.full(3, 0.5))
        x = np.array([1.0, 0.0, 1.0])
        for i in range(3):
            assert conditional_flat(m, x, i) == pytest.approx(
                float(sigmoid(m.b[i])), abs=1e-15)

    def test_zero_row_gives_half(self):
        m = random_flat(np.random.default_rng(0), 4)
        W = m.W.copy()
        W[0, :] = W[:, 0] = 0.0
        b = m.b.copy()
        b[0] = 0.0
        m2 = FlatBmParams(W, b, m.beta)
        assert conditional_flat(m2, np.ones(4), 0) == 0.5

    def test_matches_enumerated_conditional_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            m = random_flat(rng, 5)
            x = (rng.random(5) < 0.5).astype(float)
            for i in range(5):
                assert conditional_flat(m, x, i) == pytest.approx(
                    enumerated_conditional(m, x, i), abs=1e-12)

    def test_chain_empirical_conditional(self):
        # long single-site chain; empirical conditionals of well-visited
        # context patterns stay within 0.01 of the formula
        m = random_flat(np.random.default_rng(2), 6, w_scale=0.4)
        rng = child_rng(3, 0)
        X = (rng.random((50, 6)) < 0.5).astype(float)
        ones = np.zeros(1 << 6)
        visits = np.zeros(1 << 6)
        for _ in range(4000):
            X = flat_gibbs_sweep(m, X, rng)
            idx = pack_state_indices(X)
            ctx = idx & ~1  # pattern of units 1..5 with unit 0 cleared
            np.add.at(visits, ctx, 1)
            np.add.at(ones, ctx, X[:, 0])
        mask = visits >= 5000
        assert mask.any()
        for ctx in np.flatnonzero(mask):
            x = ((ctx >> np.arange(6)) & 1).astype(float)
            expected = conditional_flat(m, x, 0)
            assert ones[ctx] / visits[ctx] == pytest.approx(
                expected, abs=0.01)

    def test_index_out_of_range(self):
        m = random_flat(np.random.default_rng(4), 3)
        with pytest.raises(IndexError):
            conditional_flat(m, np.zeros(3), 3)


class TestParticleSet:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError, match="binary"):
            ParticleSet(np.full((2, 3), 0.5), np.zeros((2, 2)),
                        np.zeros((2, 2)))

    def test_rejects_mismatched_rows(self):
        with pytest.raises(ValueError, match="row counts"):
            ParticleSet(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros((2, 2)))


class TestFreeSampler:
    def test_zero_model_is_fair_coin(self):
        m = Dbm2Params.zeros(4, 3, 2)
        p = init_particles(m, 1, child_rng(0, 0))
        rng = child_rng(0, 1)
        total = np.zeros(9)
        n_sweeps = 10_000
        for _ in range(n_sweeps):
            p = dbm_gibbs_free(m, p, rng)
            total += np.concatenate([p.xs[0], p.ys[0], p.zs[0]])
        assert np.all(total / n_sweeps > 0.47)
        assert np.all(total / n_sweeps < 0.53)

    def test_joint_distribution_matches_enumeration(self):
        m = random_dbm(np.random.default_rng(5), 4, 3, 3, w_scale=0.7)
        assert dbm_joint_tv(m, 1_000_000, seed=11) < 0.02

    def test_deterministic_trajectory(self):
        m = random_dbm(np.random.default_rng(6), 5, 4, 3)
        outs = []
        for _ in range(2):
            p = init_particles(m, 7, child_rng(42, 0))
            rng = child_rng(42, 1)
            for _ in range(25):
                p = dbm_gibbs_free(m, p, rng)
            outs.append(np.concatenate([p.xs, p.ys, p.zs], axis=1))
        assert np.array_equal(outs[0], outs[1])

    def test_states_stay_binary(self):
        m = random_dbm(np.random.default_rng(7), 4, 3, 2)
        p = init_particles(m, 5, child_rng(1, 0))
        rng = child_rng(1, 1)
        for _ in range(50):
            p = dbm_gibbs_free(m, p, rng)
            for arr in (p.xs, p.ys, p.zs):
                assert np.isin(arr, (0.0, 1.0)).all()

    def test_dimension_mismatch(self):
        m = random_dbm(np.random.default_rng(8), 4, 3, 2)
        p = init_particles(m, 3, child_rng(2, 0))
        bad = ParticleSet(p.xs[:, :3], p.ys, p.zs)
        with pytest.raises(ValueError):
            dbm_gibbs_free(m, bad, child_rng(2, 1))


class TestClampedSampler:
    def test_decoupled_hidden_statistics(self):
        mx, my, mz = 3, 4, 2
        b = np.array([1.0, -1.0, 0.3, 0.0])
        m = Dbm2Params(np.zeros((my, mx)), np.zeros((mz, my)), np.zeros(mx),
                       b, np.zeros(mz), np.full(mx, 0.5), np.full(my, 0.5),
                       np.full(mz, 0.5))
        rng = child_rng(3, 0)
        X = (rng.random((2000, mx)) < 0.5).astype(float)
        Y, Z = dbm_gibbs_clamped(m, X, np.zeros((2000, my)),
                                 np.zeros((2000, mz)), 1, rng)
        assert np.abs(Y.mean(axis=0) - sigmoid(b)).max() < 0.04

    def test_visible_layer_never_written(self):
        m = random_dbm(np.random.default_rng(9), 4, 3, 2)
        X = (np.random.default_rng(10).random((6, 4)) < 0.5).astype(float)
        X_copy = X.copy()
        dbm_gibbs_clamped(m, X, np.zeros((6, 3)), np.zeros((6, 2)), 20,
                          child_rng(4, 0))
        assert np.array_equal(X, X_copy)

    def test_conditional_matches_enumeration(self):
        m = random_dbm(np.random.default_rng(11), 3, 3, 2, w_scale=0.7)
        x = np.array([1.0, 0.0, 1.0])
        hid = all_binary_states(5)
        ys, zs = hid[:, :3], hid[:, 3:]
        Xb = np.broadcast_to(x, (hid.shape[0], 3))
        logp = -energy_dbm_batch(m, Xb, ys, zs)
        cond = np.exp(logp - logsumexp(logp))

        n_chains = 100
        X = np.broadcast_to(x, (n_chains, 3)).copy()
        rng = child_rng(5, 0)
        Y = (rng.random((n_chains, 3)) < 0.5).astype(float)
        Z = (rng.random((n_chains, 2)) < 0.5).astype(float)
        counts = np.zeros(1 << 5)
        for sweep in range(10_500):
            Y, Z = dbm_gibbs_clamped(m, X, Y, Z, 1, rng)
            if sweep >= 500:
                np.add.at(counts, pack_state_indices(Y, Z), 1)
        assert 0.5 * np.abs(counts / counts.sum() - cond).sum() < 0.02

    def test_steps_validation(self):
        m = random_dbm(np.random.default_rng(12), 3, 2, 2)
        with pytest.raises(ValueError):
            dbm_gibbs_clamped(m, np.zeros((1, 3)), np.zeros((1, 2)),
                              np.zeros((1, 2)), 0, child_rng(0, 0))


class TestMeanRepresentation:
    def test_decoupled_means(self):
        b = np.array([0.5, -0.5, 1.5])
        m = Dbm2Params(np.zeros((3, 2)), np.zeros((2, 3)), np.zeros(2), b,
                       np.zeros(2), np.full(2, 0.5), np.full(3, 0.5),
                       np.full(2, 0.5))
        my, _ = mean_representation(m, np.zeros((4, 2)), steps=4000,
                                    rng=child_rng(6, 0))
        assert np.abs(my - sigmoid(b)).max() < 0.02

    def test_bounded_unit_interval(self):
        m = random_dbm(np.random.default_rng(13), 4, 3, 2)
        my, mz = mean_representation(m, (np.random.default_rng(14)
                                         .random((5, 4)) < 0.5).astype(float),
                                     steps=3, rng=child_rng(7, 0))
        for arr in (my, mz):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_matches_exact_conditional_means(self):
        m = random_dbm(np.random.default_rng(15), 3, 3, 2, w_scale=0.7)
        x = np.array([0.0, 1.0, 1.0])
        hid = all_binary_states(5)
        ys, zs = hid[:, :3], hid[:, 3:]
        Xb = np.broadcast_to(x, (hid.shape[0], 3))
        logp = -energy_dbm_batch(m, Xb, ys, zs)
        cond = np.exp(logp - logsumexp(logp))
        my, mz = mean_representation(m, x, steps=10_000, rng=child_rng(8, 0))
        assert np.abs(my[0] - cond @ ys).max() < 0.02
        assert np.abs(mz[0] - cond @ zs).max() < 0.02


class TestGenerateDigits:
    def test_zero_model_salt_and_pepper(self):
        m = Dbm2Params.zeros(6, 3, 2)
        samples = generate_digits(m, 1000, burn_in=5, thin=1,
                                  rng=child_rng(9, 0))
        assert np.isin(samples, (0.0, 1.0)).all()
        assert 0.47 < samples.mean() < 0.53

    def test_deterministic(self):
        m = random_dbm(np.random.default_rng(16), 4, 3, 2)
        a = generate_digits(m, 20, burn_in=10, thin=2, rng=child_rng(10, 0))
        b = generate_digits(m, 20, burn_in=10, thin=2, rng=child_rng(10, 0))
        assert np.array_equal(a, b)

    def test_marginal_matches_enumeration(self):
        m = random_dbm(np.random.default_rng(17), 3, 3, 2, w_scale=0.7)
        px = exact_visible_marginal(m)
        samples = generate_digits(m, 4000, burn_in=300, thin=3,
                                  rng=child_rng(11, 0))
        counts = np.zeros(px.size)
        np.add.at(counts, pack_state_indices(samples), 1)
        assert 0.5 * np.abs(counts / counts.sum() - px).sum() < 0.05

    def test_count_validation(self):
        with pytest.raises(ValueError):
            generate_digits(Dbm2Params.zeros(2, 2, 2), 0)

"""Shared fixtures: random model generators, a trained tiny DBM reused by
the AIS tests, synthetic clustered data and the acceptance report hook."""

import numpy as np
import pytest

from cdbm.model_core import (
    Dbm2Params,
    FlatBmParams,
    all_binary_states,
    exact_visible_marginal,
)
from cdbm.trainer import TrainConfig, train

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_flat(rng, m, w_scale=0.6, b_scale=0.5):
    W = rng.normal(0.0, w_scale, (m, m))
    return FlatBmParams.from_couplings(W, rng.normal(0.0, b_scale, m),
                                       rng.uniform(0.1, 0.9, m))


def random_dbm(rng, mx, my, mz, w_scale=0.8, b_scale=0.3):
    return Dbm2Params(
        rng.normal(0.0, w_scale, (my, mx)), rng.normal(0.0, w_scale, (mz, my)),
        rng.normal(0.0, b_scale, mx), rng.normal(0.0, b_scale, my),
        rng.normal(0.0, b_scale, mz),
        rng.uniform(0.2, 0.8, mx), rng.uniform(0.2, 0.8, my),
        rng.uniform(0.2, 0.8, mz))


def sample_visible(model, n, rng):
    """Exact draws from the visible marginal of a small DBM."""
    px = exact_visible_marginal(model)
    states = all_binary_states(model.n_visible)
    return states[rng.choice(px.size, size=n, p=px)]


def clustered_bits(n, width, n_classes, rng, flip=0.08):
    """Class-prototype binary patterns with bit-flip noise, plus labels."""
    protos = (rng.random((n_classes, width)) < 0.5).astype(np.float64)
    labels = rng.integers(0, n_classes, n)
    X = protos[labels]
    flips = rng.random((n, width)) < flip
    X = np.where(flips, 1.0 - X, X)
    return X, labels


@pytest.fixture(scope="session")
def tiny_trained_dbm():
    """8-4-4 DBM trained by PCD on data from a random target model."""
    rng = np.random.default_rng(7)
    target = random_dbm(rng, 8, 4, 4, w_scale=0.8, b_scale=0.3)
    data = sample_visible(target, 2000, rng)
    cfg = TrainConfig(learning_rate=0.02, minibatch_size=25, epochs=15, seed=5)
    _, theta_avg, _, _ = train(data, cfg, my=4, mz=4)
    test = sample_visible(target, 50, np.random.default_rng(8))
    return theta_avg, test

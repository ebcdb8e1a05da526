"""Bernoulli/Gibbs machinery for flat BMs and two-layer DBMs.

All randomness flows through numpy Generator objects (PCG64 via
``numpy.random.default_rng``): identical seeds reproduce identical
trajectories bit for bit.  Parallel chains derive independent streams from a
master seed with ``util.child_rng(seed, chain_index)``.

One DBM sweep follows the block order of the training loop: the middle layer
y is refreshed first from (x, z), then x and z are refreshed from the fresh
y.  The clamped variant updates y then z and never writes x.
"""

from dataclasses import dataclass

import numpy as np

from .model_core import Dbm2Params, FlatBmParams
from .util import sigmoid


@dataclass
class ParticleSet:
    """Persistent fantasy states, one row per particle, entries in {0, 1}."""

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        n = self.xs.shape[0]
        if self.ys.shape[0] != n or self.zs.shape[0] != n:
            raise ValueError("particle layers must have equal row counts")
        for name, arr in (("xs", self.xs), ("ys", self.ys), ("zs", self.zs)):
            if not np.isin(arr, (0.0, 1.0)).all():
                raise ValueError(f"{name} must be binary")

    @property
    def n_particles(self):
        return self.xs.shape[0]


def init_particles(m: Dbm2Params, n_particles, rng) -> ParticleSet:
    """Fresh particles drawn as Bernoulli samples at the model offsets."""
    return ParticleSet(
        xs=_bernoulli(np.broadcast_to(m.alpha, (n_particles, m.n_visible)), rng),
        ys=_bernoulli(np.broadcast_to(m.beta, (n_particles, m.n_hidden)), rng),
        zs=_bernoulli(np.broadcast_to(m.gamma, (n_particles, m.n_top)), rng),
    )


def _bernoulli(p, rng):
    return (rng.random(p.shape) < p).astype(np.float64)


def conditional_flat(m: FlatBmParams, x, i) -> float:
    """p(x_i = 1 | x_-i) = sigm(b_i + sum_{j!=i} W_ij (x - beta)_j)."""
    if not 0 <= i < m.n_units:
        raise IndexError(f"unit index {i} out of range for M={m.n_units}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.n_units,):
        raise ValueError("state length must match the model")
    xi = x - m.beta
    # diag(W) = 0, so the full row dot product already excludes j = i
    return float(sigmoid(m.b[i] + m.W[i] @ xi))


def flat_gibbs_sweep(m: FlatBmParams, X, rng):
    """One single-site Gibbs sweep (units visited in index order) over a
    batch of states.  Returns a new array; the input is not modified."""
    X = np.array(X, dtype=np.float64)
    Xi = X - m.beta
    for i in range(m.n_units):
        p = sigmoid(m.b[i] + Xi @ m.W[i])
        X[:, i] = (rng.random(X.shape[0]) < p).astype(np.float64)
        Xi[:, i] = X[:, i] - m.beta[i]
    return X


def flat_gibbs_sample(m: FlatBmParams, n_samples, rng, n_chains=64,
                      burn_in=1000):
    """Approximate model samples from parallel single-site Gibbs chains.

    Chains start at Bernoulli(sigm(b)) states, discard ``burn_in`` sweeps,
    then contribute one state per sweep until ``n_samples`` rows are
    collected.
    """
    n_chains = min(n_chains, n_samples)
    X = _bernoulli(np.broadcast_to(sigmoid(m.b), (n_chains, m.n_units)), rng)
    for _ in range(burn_in):
        X = flat_gibbs_sweep(m, X, rng)
    out = np.empty((n_samples, m.n_units))
    filled = 0
    while filled < n_samples:
        X = flat_gibbs_sweep(m, X, rng)
        take = min(n_chains, n_samples - filled)
        out[filled:filled + take] = X[:take]
        filled += take
    return out


def _free_sweep(m: Dbm2Params, X, Y, Z, rng, scale=1.0):
    """One full alternation on raw arrays: y from (x, z), then x and z from
    the fresh y.  ``scale`` multiplies every activation, which equals running
    the sweep under the model with couplings and biases scaled by it."""
    act_y = (X - m.alpha) @ m.W.T + (Z - m.gamma) @ m.V + m.b
    Y = _bernoulli(sigmoid(scale * act_y), rng)
    Yc = Y - m.beta
    X = _bernoulli(sigmoid(scale * (Yc @ m.W + m.a)), rng)
    Z = _bernoulli(sigmoid(scale * (Yc @ m.V.T + m.c)), rng)
    return X, Y, Z


def _clamped_sweep(m: Dbm2Params, X, Y, Z, rng, scale=1.0):
    """Clamped alternation: y from (x, z), then z from the fresh y; x is
    read-only."""
    act_y = (X - m.alpha) @ m.W.T + (Z - m.gamma) @ m.V + m.b
    Y = _bernoulli(sigmoid(scale * act_y), rng)
    Z = _bernoulli(sigmoid(scale * ((Y - m.beta) @ m.V.T + m.c)), rng)
    return Y, Z


def dbm_gibbs_free(m: Dbm2Params, p: ParticleSet, rng) -> ParticleSet:
    """Advance free-running particles by one full Gibbs alternation."""
    if p.xs.shape[1] != m.n_visible or p.ys.shape[1] != m.n_hidden \
            or p.zs.shape[1] != m.n_top:
        raise ValueError("particle dimensions do not match the model")
    X, Y, Z = _free_sweep(m, p.xs, p.ys, p.zs, rng)
    return ParticleSet(X, Y, Z)


def dbm_gibbs_clamped(m: Dbm2Params, x_data, ys, zs, steps, rng):
    """Run ``steps`` clamped alternations with the visible layer fixed to
    ``x_data`` (one row per sample).  Returns the final (ys, zs)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X = np.asarray(x_data, dtype=np.float64)
    Y, Z = np.asarray(ys, dtype=np.float64), np.asarray(zs, dtype=np.float64)
    for _ in range(steps):
        Y, Z = _clamped_sweep(m, X, Y, Z, rng)
    return Y, Z


def mean_representation(m: Dbm2Params, x_data, steps=100, rng=None):
    """Per-unit mean of the sampled hidden states over ``steps`` clamped
    sweeps, one row per data sample.

    The average is taken over the binary states visited after each sweep
    (not over their pre-sampling probabilities), starting from hidden states
    drawn at the offsets.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    X = np.atleast_2d(np.asarray(x_data, dtype=np.float64))
    n = X.shape[0]
    Y = _bernoulli(np.broadcast_to(m.beta, (n, m.n_hidden)), rng)
    Z = _bernoulli(np.broadcast_to(m.gamma, (n, m.n_top)), rng)
    sum_y = np.zeros_like(Y)
    sum_z = np.zeros_like(Z)
    for _ in range(steps):
        Y, Z = _clamped_sweep(m, X, Y, Z, rng)
        sum_y += Y
        sum_z += Z
    return sum_y / steps, sum_z / steps


def generate_digits(m: Dbm2Params, n, burn_in=1000, thin=50, rng=None):
    """Visible samples from a free-running chain: after ``burn_in`` sweeps,
    emit the visible state every ``thin`` sweeps until ``n`` rows exist."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    if rng is None:
        rng = np.random.default_rng()
    p = init_particles(m, 1, rng)
    X, Y, Z = p.xs, p.ys, p.zs
    for _ in range(burn_in):
        X, Y, Z = _free_sweep(m, X, Y, Z, rng)
    out = np.empty((n, m.n_visible))
    for k in range(n):
        for _ in range(thin):
            X, Y, Z = _free_sweep(m, X, Y, Z, rng)
        out[k] = X[0]
    return out

"""Persistent contrastive divergence training of a two-layer centered DBM.

The update loop keeps two sets of statistics per minibatch: a data chain
whose visible layer is clamped to the batch (hidden layers re-drawn at the
offsets each time, then a few clamped sweeps), and persistent free particles
advanced one sweep per update.  Gradients are the difference of centered
outer products, averaged over the batch on the data side and over the
particles on the model side so the learning rate is batch-size independent.

Offsets are fixed at initialization and never trained.  A running Polyak-
style average of the parameters is maintained alongside the live ones:
``theta_avg <- kc/(k+kc) * theta + k/(k+kc) * theta_avg`` with k the number
of completed updates, which forgets all but roughly the trailing 10% of the
trajectory for kc = 10.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .model_core import Dbm2Params, energy_dbm_batch
from .sampler import ParticleSet, _bernoulli, _clamped_sweep, _free_sweep
from .util import child_rng, logit, sigmoid

EPOCH_GRID = tuple(10.0 ** p for p in (0.0, 0.5, 1.0, 1.5, 2.0))


class DivergenceError(RuntimeError):
    """Raised when parameters leave the finite range during training."""

    def __init__(self, update, detail):
        super().__init__(
            f"training diverged at update {update}: {detail}")
        self.update = update


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    minibatch_size: int = 25
    n_particles: int = 25
    data_gibbs_steps: int = 5
    model_gibbs_steps: int = 1
    epochs: float = 10.0
    b0: float = 0.0
    c0: float = 0.0
    beta0: float = None   # default: sigm(b0)
    gamma0: float = None  # default: sigm(c0)
    averaging_kc: int = 10
    seed: int = 0

    def __post_init__(self):
        # zero is allowed as a degenerate value (pure-sampling updates)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for name in ("minibatch_size", "n_particles", "data_gibbs_steps",
                     "model_gibbs_steps", "averaging_kc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def offset_hidden(self):
        return float(sigmoid(self.b0)) if self.beta0 is None else self.beta0

    def offset_top(self):
        return float(sigmoid(self.c0)) if self.gamma0 is None else self.gamma0


@dataclass
class TrainState:
    theta: Dbm2Params
    theta_avg: Dbm2Params
    particles: ParticleSet
    k: int = 0


@dataclass
class MetricsLog:
    """Per-update scalars; written out as CSV by the CLI."""

    header = ("update", "epoch", "mean_abs_dW", "mean_abs_dV",
              "free_energy_proxy")
    rows: list = field(default_factory=list)

    def append(self, update, epoch, mean_abs_dw, mean_abs_dv, fe_proxy):
        self.rows.append((update, epoch, mean_abs_dw, mean_abs_dv, fe_proxy))


def init_model(data, cfg: TrainConfig, mx=None, my=400, mz=100) -> TrainState:
    """Zero couplings; visible biases matched to the (clamped) data means;
    hidden biases and offsets from the configuration.

    Data means are clamped to [eps, 1-eps] with eps = 1/(N+2) before the
    inverse sigmoid so constant pixel columns stay finite.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("data must be a non-empty 2-D binary matrix")
    if mx is None:
        mx = data.shape[1]
    elif mx != data.shape[1]:
        raise ValueError("mx does not match the data width")
    eps = 1.0 / (data.shape[0] + 2.0)
    mean = np.clip(data.mean(axis=0), eps, 1.0 - eps)
    a = logit(mean)
    beta = cfg.offset_hidden()
    gamma = cfg.offset_top()
    theta = Dbm2Params(
        W=np.zeros((my, mx)), V=np.zeros((mz, my)),
        a=a, b=np.full(my, float(cfg.b0)), c=np.full(mz, float(cfg.c0)),
        alpha=sigmoid(a), beta=np.full(my, beta), gamma=np.full(mz, gamma))
    rng = child_rng(cfg.seed, 0)
    particles = ParticleSet(
        xs=_bernoulli(np.broadcast_to(theta.alpha, (cfg.n_particles, mx)), rng),
        ys=_bernoulli(np.broadcast_to(theta.beta, (cfg.n_particles, my)), rng),
        zs=_bernoulli(np.broadcast_to(theta.gamma, (cfg.n_particles, mz)), rng))
    return TrainState(theta=theta, theta_avg=theta, particles=particles, k=0)


def pcd_update(state: TrainState, minibatch, cfg: TrainConfig, rng,
               metrics: MetricsLog = None, updates_per_epoch=None) -> TrainState:
    """One persistent-CD parameter update; returns the new state.

    Raises DivergenceError before returning if any parameter became
    non-finite, so no checkpoint can ever contain NaN/Inf.
    """
    m = state.theta
    X_d = np.asarray(minibatch, dtype=np.float64)
    if X_d.ndim != 2 or X_d.shape[1] != m.n_visible:
        raise ValueError("minibatch width does not match the model")
    n_b = X_d.shape[0]

    # data chain: hidden layers re-drawn at the offsets, then clamped sweeps
    Y_d = _bernoulli(np.broadcast_to(m.beta, (n_b, m.n_hidden)), rng)
    Z_d = _bernoulli(np.broadcast_to(m.gamma, (n_b, m.n_top)), rng)
    for _ in range(cfg.data_gibbs_steps):
        Y_d, Z_d = _clamped_sweep(m, X_d, Y_d, Z_d, rng)

    # free chain
    X_m, Y_m, Z_m = state.particles.xs, state.particles.ys, state.particles.zs
    for _ in range(cfg.model_gibbs_steps):
        X_m, Y_m, Z_m = _free_sweep(m, X_m, Y_m, Z_m, rng)
    n_p = X_m.shape[0]

    xc_d, yc_d, zc_d = X_d - m.alpha, Y_d - m.beta, Z_d - m.gamma
    xc_m, yc_m, zc_m = X_m - m.alpha, Y_m - m.beta, Z_m - m.gamma
    eta = cfg.learning_rate
    dW = eta * (yc_d.T @ xc_d / n_b - yc_m.T @ xc_m / n_p)
    dV = eta * (zc_d.T @ yc_d / n_b - zc_m.T @ yc_m / n_p)
    da = eta * (X_d.mean(axis=0) - X_m.mean(axis=0))
    db = eta * (Y_d.mean(axis=0) - Y_m.mean(axis=0))
    dc = eta * (Z_d.mean(axis=0) - Z_m.mean(axis=0))

    new = (m.W + dW, m.V + dV, m.a + da, m.b + db, m.c + dc)
    for arr, name in zip(new, ("W", "V", "a", "b", "c")):
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(state.k, f"non-finite entries in {name}")
    theta = Dbm2Params(*new, m.alpha, m.beta, m.gamma)

    # Polyak-style running average, applied with k = completed updates so
    # the first update copies theta into theta_avg exactly.
    k, kc = state.k, cfg.averaging_kc
    w_new = kc / (k + kc)
    avg = state.theta_avg
    theta_avg = Dbm2Params(
        w_new * theta.W + (1 - w_new) * avg.W,
        w_new * theta.V + (1 - w_new) * avg.V,
        w_new * theta.a + (1 - w_new) * avg.a,
        w_new * theta.b + (1 - w_new) * avg.b,
        w_new * theta.c + (1 - w_new) * avg.c,
        m.alpha, m.beta, m.gamma)

    if metrics is not None:
        fe = float(np.mean(energy_dbm_batch(theta, X_m, Y_m, Z_m)))
        epoch = (state.k + 1) / updates_per_epoch if updates_per_epoch else math.nan
        metrics.append(state.k + 1, epoch, float(np.mean(np.abs(dW))),
                       float(np.mean(np.abs(dV))), fe)

    return TrainState(theta=theta, theta_avg=theta_avg,
                      particles=ParticleSet(X_m, Y_m, Z_m), k=state.k + 1)


def checkpoint_updates(epochs, updates_per_epoch):
    """Map the checkpoint epoch grid to update counts within budget."""
    total = int(math.floor(epochs * updates_per_epoch))
    out = {}
    for e in EPOCH_GRID:
        k = int(math.floor(e * updates_per_epoch))
        if k <= total and k > 0:
            out.setdefault(k, _epoch_tag(e))
    return out, total


def _epoch_tag(e):
    if abs(e - round(e)) < 1e-9:
        return str(int(round(e)))
    return f"{e:.2f}"


def train(data, cfg: TrainConfig, my=400, mz=100, snapshot_hook=None):
    """Run PCD over seeded epoch shuffles of ``data``.

    Returns (theta_final, theta_avg, metrics, snapshots) where snapshots
    maps epoch tags to the averaged parameters at the checkpoint grid
    {1, 10^0.5, 10, 10^1.5, 100} intersected with the epoch budget.
    ``snapshot_hook(tag, theta_avg)`` is called as each snapshot is taken.
    """
    data = np.asarray(data, dtype=np.float64)
    state = init_model(data, cfg, my=my, mz=mz)
    n = data.shape[0]
    updates_per_epoch = max(1, math.ceil(n / cfg.minibatch_size))
    grid, total_updates = checkpoint_updates(cfg.epochs, updates_per_epoch)

    metrics = MetricsLog()
    snapshots = {}
    rng = child_rng(cfg.seed, 1)
    shuffle_rng = child_rng(cfg.seed, 2)
    k = 0
    while k < total_updates:
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            if k >= total_updates:
                break
            batch = data[order[start:start + cfg.minibatch_size]]
            state = pcd_update(state, batch, cfg, rng, metrics=metrics,
                               updates_per_epoch=updates_per_epoch)
            k = state.k
            if k in grid:
                tag = grid[k]
                snapshots[tag] = state.theta_avg
                if snapshot_hook is not None:
                    snapshot_hook(tag, state.theta_avg)
    return state.theta, state.theta_avg, metrics, snapshots

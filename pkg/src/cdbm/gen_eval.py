"""Annealed-importance-sampling estimate of the DBM log-likelihood.

The intractable probability p(x) = Psi(theta, x) / Z(theta) is split into
two partition-function ratios against the all-zero base model, for which
Psi(0, x) / Z(0) = 2^(-Mx) holds exactly:

* Z(theta)/Z(0) from free-running annealed chains (weights omega),
* Psi(theta, x)/Psi(0, x) from chains with x clamped (weights nu).

Chains anneal along theta_k = lambda_k * theta with
lambda_k = 1 - (1 - k/K)^2, so interpolation starts with large parameter
increments and finishes with vanishing ones.  Offsets are not annealed:
they define the centering of states, not interaction strength, and the
k = 0 model must reduce to independent uniform units.

Each annealing step accumulates the weight at the current state before the
Gibbs transition targeting the new interpolant runs (the estimator in
Neal's formulation, unbiased for E[omega] at every chain length; at K = 1
it degenerates to plain importance sampling from the base model).  Since
the energy is linear in the annealed parameters, the per-step increment is
(lambda_k - lambda_{k-1}) times the unscaled negative energy.

Log weights are combined exclusively through log-sum-exp; raw weights are
never exponentiated in full.
"""

from dataclasses import dataclass

import numpy as np

from .model_core import Dbm2Params, energy_dbm_batch
from .sampler import _bernoulli, _clamped_sweep, _free_sweep
from .util import child_rng, logmeanexp


@dataclass(frozen=True)
class AisConfig:
    k_steps: int = 2500
    n_free_runs: int = 500
    n_clamped_runs_per_point: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k_steps < 1:
            raise ValueError("k_steps must be >= 1")
        if self.n_free_runs < 1 or self.n_clamped_runs_per_point < 1:
            raise ValueError("run counts must be >= 1")


@dataclass(frozen=True)
class AisResult:
    """Raw per-run log weights plus the assembled estimate.

    ``loglik_estimate`` is recomputable from the stored weights:
    mean over points of logmeanexp(clamped row) minus logmeanexp(free)
    minus Mx log 2.
    """

    log_weights_free: np.ndarray
    log_weights_clamped: np.ndarray  # (n_points, runs_per_point)
    log_z_ratio_estimate: float
    per_point_log_psi_ratio: np.ndarray
    loglik_estimate: float
    k_steps: int
    n_visible: int
    seed: int

    def recompute_loglik(self) -> float:
        per_point = logmeanexp(self.log_weights_clamped, axis=1)
        return float(np.mean(per_point) - logmeanexp(self.log_weights_free)
                     - self.n_visible * np.log(2.0))


def anneal_lambda(k, k_steps) -> float:
    """Interpolation coefficient 1 - (1 - k/K)^2 in [0, 1]."""
    if not 0 <= k <= k_steps:
        raise ValueError("annealing step out of range")
    return 1.0 - (1.0 - k / k_steps) ** 2


def anneal_schedule(theta: Dbm2Params, k, k_steps) -> Dbm2Params:
    """Interpolated model at annealing step k: couplings and biases scaled
    by anneal_lambda, offsets untouched."""
    return theta.scaled(anneal_lambda(k, k_steps))


def ais_free_weights(theta: Dbm2Params, n_runs, k_steps, rng):
    """Log importance weights of ``n_runs`` free annealing chains, run as
    one vectorized batch (rows evolve independently)."""
    n = n_runs
    X = _bernoulli(np.full((n, theta.n_visible), 0.5), rng)
    Y = _bernoulli(np.full((n, theta.n_hidden), 0.5), rng)
    Z = _bernoulli(np.full((n, theta.n_top), 0.5), rng)
    log_w = np.zeros(n)
    lam_prev = 0.0
    for k in range(1, k_steps + 1):
        lam = anneal_lambda(k, k_steps)
        # energy is linear in the scaled parameters: the log p* increment
        # between consecutive interpolants is (dlam) * (-E under theta)
        log_w += (lam - lam_prev) * (-energy_dbm_batch(theta, X, Y, Z))
        X, Y, Z = _free_sweep(theta, X, Y, Z, rng, scale=lam)
        lam_prev = lam
    if not np.all(np.isfinite(log_w)):
        raise FloatingPointError("non-finite AIS log weight")
    return log_w


def ais_free_run(theta: Dbm2Params, cfg: AisConfig, rng) -> float:
    """Single free-running annealed chain; returns its log weight."""
    return float(ais_free_weights(theta, 1, cfg.k_steps, rng)[0])


def ais_clamped_weights(theta: Dbm2Params, X_data, runs_per_point, k_steps,
                        rng):
    """Log weights of clamped chains, ``runs_per_point`` per data row.

    Returns an (n_points, runs_per_point) array.  All chains advance in one
    batch; the visible layer stays fixed to the data throughout.
    """
    X_data = np.atleast_2d(np.asarray(X_data, dtype=np.float64))
    n_pts = X_data.shape[0]
    X = np.repeat(X_data, runs_per_point, axis=0)
    n = X.shape[0]
    Y = _bernoulli(np.full((n, theta.n_hidden), 0.5), rng)
    Z = _bernoulli(np.full((n, theta.n_top), 0.5), rng)
    log_w = np.zeros(n)
    lam_prev = 0.0
    for k in range(1, k_steps + 1):
        lam = anneal_lambda(k, k_steps)
        log_w += (lam - lam_prev) * (-energy_dbm_batch(theta, X, Y, Z))
        Y, Z = _clamped_sweep(theta, X, Y, Z, rng, scale=lam)
        lam_prev = lam
    if not np.all(np.isfinite(log_w)):
        raise FloatingPointError("non-finite AIS log weight")
    return log_w.reshape(n_pts, runs_per_point)


def ais_clamped_run(theta: Dbm2Params, x, cfg: AisConfig, rng) -> float:
    """Single clamped annealed chain for one data point."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (theta.n_visible,):
        raise ValueError("x length must equal the visible layer size")
    return float(ais_clamped_weights(theta, x[None, :], 1, cfg.k_steps,
                                     rng)[0, 0])


def estimate_loglik(theta: Dbm2Params, test_data,
                    cfg: AisConfig = AisConfig()) -> AisResult:
    """Average test log-likelihood via the two-ratio decomposition.

    Uses ``cfg.n_free_runs`` chains for log Z(theta)/Z(0) and
    ``cfg.n_clamped_runs_per_point`` chains per test point for the clamped
    ratios (a single run per point gives the slightly pessimistic
    lower-bound flavor of the estimator).
    """
    test_data = np.atleast_2d(np.asarray(test_data, dtype=np.float64))
    if test_data.shape[0] == 0:
        raise ValueError("test data must be non-empty")
    if test_data.shape[1] != theta.n_visible:
        raise ValueError("test data width must equal the visible layer size")

    free_w = ais_free_weights(theta, cfg.n_free_runs, cfg.k_steps,
                              child_rng(cfg.seed, 0))
    clamped_w = ais_clamped_weights(theta, test_data,
                                    cfg.n_clamped_runs_per_point,
                                    cfg.k_steps, child_rng(cfg.seed, 1))
    log_z_ratio = float(logmeanexp(free_w))
    per_point = np.asarray(logmeanexp(clamped_w, axis=1), dtype=np.float64)
    loglik = float(np.mean(per_point) - log_z_ratio
                   - theta.n_visible * np.log(2.0))
    return AisResult(
        log_weights_free=free_w, log_weights_clamped=clamped_w,
        log_z_ratio_estimate=log_z_ratio,
        per_point_log_psi_ratio=per_point, loglik_estimate=loglik,
        k_steps=cfg.k_steps, n_visible=theta.n_visible, seed=cfg.seed)

"""Parameter containers, energy functions and exact small-model oracles.

Two model families live here:

* ``FlatBmParams`` -- a fully connected Boltzmann machine over binary units
  with centered states xi = x - beta.  The energy uses the half convention
  ``E(x) = -1/2 xi' W xi - xi' b`` so that the single-site conditional is
  exactly ``sigm(b_i + sum_{j!=i} W_ij xi_j)``.
* ``Dbm2Params`` -- a two-layer deep Boltzmann machine (visible x, hidden y,
  top z) with per-layer offsets alpha/beta/gamma and bipartite couplings
  W (y-x) and V (z-y).

Everything with <= ``MAX_ENUM_UNITS`` total units can be enumerated exactly,
which is the ground truth the samplers, gradients, Hessian products and AIS
estimators are tested against.
"""

from dataclasses import dataclass

import numpy as np

from .util import logsumexp, sigmoid

MAX_ENUM_UNITS = 20


def _as_readonly(a, dtype=np.float64):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


def _check_offsets(name, v, strict=True):
    lo = np.any(v <= 0.0) if strict else np.any(v < 0.0)
    hi = np.any(v >= 1.0) if strict else np.any(v > 1.0)
    if lo or hi:
        bound = "strictly inside (0, 1)" if strict else "within [0, 1]"
        raise ValueError(f"{name} offsets must lie {bound}")


@dataclass(frozen=True)
class FlatBmParams:
    """Symmetric fully connected BM with zero self-couplings.

    W : (M, M) symmetric, zero diagonal
    b : (M,) biases
    beta : (M,) offsets in (0, 1)
    """

    W: np.ndarray
    b: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        W = _as_readonly(self.W)
        b = _as_readonly(self.b)
        beta = _as_readonly(self.beta)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("W must be square")
        m = W.shape[0]
        if b.shape != (m,) or beta.shape != (m,):
            raise ValueError("b and beta must match the unit count of W")
        if not np.array_equal(W, W.T):
            raise ValueError("W must be symmetric")
        if np.any(np.diag(W) != 0.0):
            raise ValueError("W must have a zero diagonal")
        for arr, name in ((W, "W"), (b, "b")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        # Endpoints allowed: the flat model doubles as an analysis oracle
        # where the uncentered (beta = 0) form must be representable.
        _check_offsets("beta", beta, strict=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "beta", beta)

    @property
    def n_units(self):
        return self.W.shape[0]

    @classmethod
    def from_couplings(cls, W, b, beta):
        """Build from an arbitrary square W: keep one triangle, mirror it,
        zero the diagonal."""
        W = np.asarray(W, dtype=np.float64)
        sym = np.triu(W, k=1)
        sym = sym + sym.T
        return cls(sym, b, beta)


@dataclass(frozen=True)
class Dbm2Params:
    """Two-layer DBM parameters.

    W : (My, Mx) visible-to-hidden couplings
    V : (Mz, My) hidden-to-top couplings
    a, b, c : layer biases
    alpha, beta, gamma : layer offsets in (0, 1)
    """

    W: np.ndarray
    V: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        W = _as_readonly(self.W)
        V = _as_readonly(self.V)
        if W.ndim != 2 or V.ndim != 2:
            raise ValueError("W and V must be matrices")
        my, mx = W.shape
        mz, my2 = V.shape
        if my2 != my:
            raise ValueError("V column count must equal W row count")
        vecs = {"a": (self.a, mx), "b": (self.b, my), "c": (self.c, mz),
                "alpha": (self.alpha, mx), "beta": (self.beta, my),
                "gamma": (self.gamma, mz)}
        coerced = {}
        for name, (v, dim) in vecs.items():
            v = _as_readonly(v)
            if v.shape != (dim,):
                raise ValueError(f"{name} must have length {dim}")
            coerced[name] = v
        for name in ("a", "b", "c"):
            if not np.all(np.isfinite(coerced[name])):
                raise ValueError(f"{name} contains non-finite entries")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(V))):
            raise ValueError("couplings contain non-finite entries")
        for name in ("alpha", "beta", "gamma"):
            _check_offsets(name, coerced[name])
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)
        for name, v in coerced.items():
            object.__setattr__(self, name, v)

    @property
    def n_visible(self):
        return self.W.shape[1]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    @property
    def n_top(self):
        return self.V.shape[0]

    @property
    def n_units(self):
        return self.n_visible + self.n_hidden + self.n_top

    def scaled(self, factor):
        """Couplings and biases multiplied by ``factor``; offsets untouched.

        Offsets parameterize the state centering, not interaction strength,
        so annealing schedules leave them fixed.
        """
        return Dbm2Params(self.W * factor, self.V * factor,
                          self.a * factor, self.b * factor, self.c * factor,
                          self.alpha, self.beta, self.gamma)

    @classmethod
    def zeros(cls, mx, my, mz, alpha=0.5, beta=0.5, gamma=0.5):
        return cls(np.zeros((my, mx)), np.zeros((mz, my)),
                   np.zeros(mx), np.zeros(my), np.zeros(mz),
                   np.full(mx, float(alpha)), np.full(my, float(beta)),
                   np.full(mz, float(gamma)))


def _check_state(x, dim, name="state"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ValueError(f"{name} has length {x.shape[-1]}, expected {dim}")
    return x


def energy_flat(m: FlatBmParams, x) -> float:
    """Energy -1/2 xi'W xi - xi'b with xi = x - beta."""
    x = _check_state(x, m.n_units, "x")
    xi = x - m.beta
    return float(-0.5 * xi @ m.W @ xi - xi @ m.b)


def energy_flat_batch(m: FlatBmParams, X):
    """Energies of a batch of states, rows of X."""
    X = _check_state(X, m.n_units, "X")
    Xi = X - m.beta
    return -0.5 * np.einsum("ij,ij->i", Xi @ m.W, Xi) - Xi @ m.b


def energy_dbm(m: Dbm2Params, x, y, z) -> float:
    """Energy of one joint DBM state (x, y, z)."""
    return float(energy_dbm_batch(m, np.atleast_2d(x), np.atleast_2d(y),
                                  np.atleast_2d(z))[0])


def energy_dbm_batch(m: Dbm2Params, X, Y, Z):
    """Energies of a batch of joint states (rows of X, Y, Z)."""
    X = _check_state(X, m.n_visible, "x")
    Y = _check_state(Y, m.n_hidden, "y")
    Z = _check_state(Z, m.n_top, "z")
    Xc = X - m.alpha
    Yc = Y - m.beta
    Zc = Z - m.gamma
    pair1 = np.einsum("ij,ij->i", Yc @ m.W, Xc)
    pair2 = np.einsum("ij,ij->i", Zc @ m.V, Yc)
    return -(pair1 + pair2 + Xc @ m.a + Yc @ m.b + Zc @ m.c)


def uncenter(m: FlatBmParams) -> FlatBmParams:
    """Equivalent parameters with all offsets removed (beta = 0).

    The Gibbs distribution is invariant: absorbing the offsets shifts the
    bias to b' = b - W beta and changes the energy only by a constant.
    """
    b_prime = m.b - m.W @ m.beta
    return FlatBmParams(m.W, b_prime, np.zeros(m.n_units))


def all_binary_states(n_units):
    """All 2^n binary vectors; row i holds the bits of i, LSB first."""
    if n_units > MAX_ENUM_UNITS:
        raise ValueError(f"enumeration capped at {MAX_ENUM_UNITS} units")
    idx = np.arange(1 << n_units, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n_units)) & 1).astype(np.float64)


def pack_state_indices(*layers):
    """Integer index of concatenated binary states, first layer in the low
    bits.  Must stay consistent with the row order of all_binary_states."""
    offset = 0
    idx = 0
    for layer in layers:
        layer = np.asarray(layer)
        bits = np.rint(layer).astype(np.int64)
        idx = idx + (bits << np.arange(offset, offset + layer.shape[-1])).sum(axis=-1)
        offset += layer.shape[-1]
    return idx


@dataclass(frozen=True)
class ExactEnumeration:
    """Exhaustive Gibbs distribution of a small model.

    ``xs``/``ys``/``zs`` are the per-layer state tables aligned with
    ``probs``; ``ys``/``zs`` are None for flat models.  Joint state i sits at
    index ``pack_state_indices(xs[i], ys[i], zs[i])`` == i.
    """

    log_p_star: np.ndarray
    log_z: float
    probs: np.ndarray
    xs: np.ndarray
    ys: np.ndarray = None
    zs: np.ndarray = None

    @property
    def n_states(self):
        return self.probs.shape[0]

    def mean_state(self):
        """Expected value of each unit under the model."""
        parts = [self.probs @ self.xs]
        if self.ys is not None:
            parts += [self.probs @ self.ys, self.probs @ self.zs]
        return np.concatenate(parts)


def exact_enumerate(m) -> ExactEnumeration:
    """Exact state probabilities and log partition function.

    Accepts either model family; refuses models with more than
    ``MAX_ENUM_UNITS`` total units.
    """
    if isinstance(m, FlatBmParams):
        states = all_binary_states(m.n_units)
        log_p_star = -energy_flat_batch(m, states)
        ys = zs = None
        xs = states
    elif isinstance(m, Dbm2Params):
        states = all_binary_states(m.n_units)
        xs = states[:, :m.n_visible]
        ys = states[:, m.n_visible:m.n_visible + m.n_hidden]
        zs = states[:, m.n_visible + m.n_hidden:]
        log_p_star = -energy_dbm_batch(m, xs, ys, zs)
    else:
        raise TypeError(f"cannot enumerate {type(m).__name__}")
    log_z = logsumexp(log_p_star)
    probs = np.exp(log_p_star - log_z)
    return ExactEnumeration(log_p_star, log_z, probs, xs, ys, zs)


def exact_visible_marginal(m: Dbm2Params):
    """p(x) for every visible configuration, indexed by packed x bits."""
    enum = exact_enumerate(m)
    n_x = 1 << m.n_visible
    return enum.probs.reshape(-1, n_x).sum(axis=0)


def exact_log_psi(m: Dbm2Params, x) -> float:
    """log sum_{y,z} exp(-E(x, y, z)) for one clamped visible vector."""
    x = _check_state(x, m.n_visible, "x")
    n_hid = m.n_hidden + m.n_top
    if n_hid > MAX_ENUM_UNITS:
        raise ValueError(f"enumeration capped at {MAX_ENUM_UNITS} units")
    hid = all_binary_states(n_hid)
    ys = hid[:, :m.n_hidden]
    zs = hid[:, m.n_hidden:]
    X = np.broadcast_to(x, (hid.shape[0], m.n_visible))
    return logsumexp(-energy_dbm_batch(m, X, ys, zs))


def exact_loglik_flat(m: FlatBmParams, data) -> float:
    """Average exact log-likelihood of data rows under a flat BM."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    enum = exact_enumerate(m)
    return float(np.mean(-energy_flat_batch(m, data) - enum.log_z))


def exact_loglik_dbm(m: Dbm2Params, data) -> float:
    """Average exact log-likelihood log p(x) of visible rows under a DBM."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    enum = exact_enumerate(m)
    log_psis = np.array([exact_log_psi(m, x) for x in data])
    return float(np.mean(log_psis) - enum.log_z)


def exact_loglik_gradient(m: FlatBmParams, data):
    """Exact gradient of the average data log-likelihood.

    Returns (dW, db) where dW = <xi xi'>_data - <xi xi'>_model with the
    diagonal zeroed (no self-couplings) and db = <xi>_data - <xi>_model.
    The model expectations come from exhaustive enumeration.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("data must contain at least one state")
    _check_state(data, m.n_units, "data")
    enum = exact_enumerate(m)

    xi_d = data - m.beta
    second_d = xi_d.T @ xi_d / data.shape[0]
    mean_d = xi_d.mean(axis=0)

    xi_m = enum.xs - m.beta
    second_m = (xi_m * enum.probs[:, None]).T @ xi_m
    mean_m = enum.probs @ xi_m

    dW = second_d - second_m
    dW = 0.5 * (dW + dW.T)
    np.fill_diagonal(dW, 0.0)
    db = mean_d - mean_m
    return dW, db

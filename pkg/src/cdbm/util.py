"""Small numerical helpers shared across the package."""

import os
import tempfile

import numpy as np


def sigmoid(x):
    """Elementwise logistic function, overflow-safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    """Inverse of the logistic function; requires p strictly inside (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("logit requires values strictly inside (0, 1)")
    return np.log(p) - np.log1p(-p)


def logsumexp(x, axis=None):
    """log(sum(exp(x))) without overflow; -inf inputs are handled."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(np.squeeze(out))
    return np.squeeze(out, axis=axis)


def logmeanexp(x, axis=None):
    """log(mean(exp(x))) via logsumexp."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size if axis is None else x.shape[axis]
    return logsumexp(x, axis=axis) - np.log(n)


def child_rng(seed, *stream):
    """Deterministic child generator for (seed, stream...) tuples.

    Streams derived from the same master seed with distinct stream indices
    are statistically independent (numpy SeedSequence composition, PCG64).
    """
    return np.random.default_rng([int(seed)] + [int(s) for s in stream])


def atomic_write_bytes(path, payload: bytes):
    """Write a file atomically (temp file + rename in the target directory)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))

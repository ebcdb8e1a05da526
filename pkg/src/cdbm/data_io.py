"""Dataset ingestion and file emitters.

Handles the classic IDX container used by the MNIST distribution files,
thresholding to binary pixels, seeded subsetting, 8-bit binary PGM output
and the native checkpoint format:

    magic "CDBM0001" (8 bytes)
    Mx, My, Mz as little-endian uint32
    row-major float64 arrays W, V, a, b, c, alpha, beta, gamma
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .model_core import Dbm2Params
from .util import atomic_write_bytes, atomic_write_text

CHECKPOINT_MAGIC = b"CDBM0001"

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxFormatError(ValueError):
    """Malformed IDX payload; ``code`` is one of magic/dtype/truncated."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class IdxTensor:
    dtype_code: int
    dims: tuple
    values: np.ndarray


@dataclass(frozen=True)
class BinarizedDataset:
    """Flattened binary images plus labels and provenance checksum."""

    X: np.ndarray
    labels: np.ndarray
    source_checksum: str
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.X.shape[0]


def parse_idx(payload: bytes) -> IdxTensor:
    """Decode one IDX tensor, validating magic, dtype and payload length."""
    if len(payload) < 4:
        raise IdxFormatError("truncated", "header shorter than 4 bytes")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", payload[:4])
    if zero1 != 0 or zero2 != 0:
        raise IdxFormatError("magic", "first two magic bytes must be zero")
    if dtype_code not in _IDX_DTYPES:
        raise IdxFormatError("dtype", f"unsupported dtype code 0x{dtype_code:02x}")
    header_len = 4 + 4 * ndim
    if len(payload) < header_len:
        raise IdxFormatError("truncated", "dimension list truncated")
    dims = struct.unpack(f">{ndim}I", payload[4:header_len])
    dtype = _IDX_DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = header_len + count * dtype.itemsize
    if len(payload) < expected:
        raise IdxFormatError(
            "truncated",
            f"payload holds {len(payload) - header_len} bytes, "
            f"expected {count * dtype.itemsize}")
    if len(payload) > expected:
        raise IdxFormatError("truncated", "trailing bytes after tensor data")
    values = np.frombuffer(payload, dtype=dtype, count=count,
                           offset=header_len).reshape(dims)
    return IdxTensor(dtype_code, dims, values)


def serialize_idx(tensor: IdxTensor) -> bytes:
    header = struct.pack(">BBBB", 0, 0, tensor.dtype_code, len(tensor.dims))
    header += struct.pack(f">{len(tensor.dims)}I", *tensor.dims)
    data = np.ascontiguousarray(tensor.values,
                                dtype=_IDX_DTYPES[tensor.dtype_code])
    return header + data.tobytes()


def load_idx(path) -> IdxTensor:
    with open(path, "rb") as fh:
        return parse_idx(fh.read())


def binarize(images: IdxTensor, labels=None, threshold=0.5) -> BinarizedDataset:
    """Threshold pixel bytes to bits: 1 iff pixel/255 > threshold.

    For the default 0.5 this puts the boundary between 127 and 128
    (127/255 < 0.5 < 128/255).  Images are flattened to one row per sample.
    """
    vals = np.asarray(images.values)
    if vals.ndim < 2:
        raise ValueError("image tensor must have at least 2 dimensions")
    n = vals.shape[0]
    flat = vals.reshape(n, -1).astype(np.float64)
    bits = (flat / 255.0 > threshold).astype(np.uint8)
    checksum = hashlib.sha256(
        np.ascontiguousarray(vals).tobytes()).hexdigest()
    if labels is None:
        lab = np.zeros(n, dtype=np.int64)
    else:
        lab = np.asarray(labels.values if isinstance(labels, IdxTensor)
                         else labels).astype(np.int64).reshape(-1)
        if lab.shape[0] != n:
            raise ValueError("label count does not match image count")
    return BinarizedDataset(bits, lab, checksum,
                            meta={"image_shape": vals.shape[1:]})


def subset(dataset: BinarizedDataset, n, seed) -> BinarizedDataset:
    """Seeded uniform sample of ``n`` rows without replacement."""
    if n > dataset.n_samples:
        raise ValueError(
            f"requested {n} samples from a dataset of {dataset.n_samples}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(dataset.n_samples, size=n, replace=False)
    labels = dataset.labels[idx]
    counts = {int(k): int(v) for k, v in
              zip(*np.unique(labels, return_counts=True))}
    meta = dict(dataset.meta)
    meta.update({"subset_seed": int(seed), "subset_indices": idx.tolist(),
                 "label_counts": counts})
    return BinarizedDataset(dataset.X[idx], labels, dataset.source_checksum,
                            meta=meta)


def _to_bytes01(img01):
    return np.rint(np.clip(img01, 0.0, 1.0) * 255.0).astype(np.uint8)


def _normalize01(img):
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi - lo == 0.0:
        # degenerate image: uniform mid gray
        return np.full_like(img, 128.0 / 255.0)
    return (img - lo) / (hi - lo)


def write_pgm(values, path):
    """Write one grayscale image as binary PGM (P5), min-max normalized."""
    img = np.asarray(values, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("write_pgm expects a 2-D array")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    _write_pgm_bytes(_to_bytes01(_normalize01(img)), path)


def _write_pgm_bytes(bytes_img, path):
    h, w = bytes_img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + bytes_img.tobytes())
    except OSError as exc:
        raise OSError(f"failed writing PGM to {path}: {exc}") from exc


def read_pgm(path):
    """Parse a binary PGM written by this module; returns uint8 pixels."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path} is not a binary PGM")
    w, h = map(int, parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=w * h)
    return pixels.reshape(h, w)


def write_filter_grid(filters, grid_shape, path, tile_shape=None):
    """Tile per-filter images into one PGM with 1-pixel black separators.

    Each tile is min-max normalized independently so every filter uses the
    full gray range.
    """
    filters = np.asarray(filters, dtype=np.float64)
    if not np.all(np.isfinite(filters)):
        raise ValueError("filters contain non-finite values")
    if filters.ndim == 2:
        if tile_shape is None:
            side = int(round(filters.shape[1] ** 0.5))
            if side * side != filters.shape[1]:
                raise ValueError("cannot infer square tile shape")
            tile_shape = (side, side)
        filters = filters.reshape(-1, *tile_shape)
    rows, cols = grid_shape
    if rows * cols < filters.shape[0]:
        raise ValueError("grid too small for the filter count")
    th, tw = filters.shape[1:]
    canvas = np.zeros((rows * (th + 1) - 1, cols * (tw + 1) - 1))
    for k in range(filters.shape[0]):
        r, c = divmod(k, cols)
        canvas[r * (th + 1):r * (th + 1) + th,
               c * (tw + 1):c * (tw + 1) + tw] = _normalize01(filters[k])
    _write_pgm_bytes(_to_bytes01(canvas), path)


def layer1_filters(m: Dbm2Params):
    """First-layer filters: one row of W per hidden unit, in input space."""
    return m.W.copy()


def layer2_filters(m: Dbm2Params):
    """Top-layer filters backprojected linearly through the middle layer."""
    return m.V @ m.W


def save_checkpoint(m: Dbm2Params, path):
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<III", m.n_visible, m.n_hidden, m.n_top)
    for arr in (m.W, m.V, m.a, m.b, m.c, m.alpha, m.beta, m.gamma):
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path) -> Dbm2Params:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError(f"{path}: truncated header")
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    mx, my, mz = struct.unpack_from("<III", blob, len(CHECKPOINT_MAGIC))
    sizes = [my * mx, mz * my, mx, my, mz, mx, my, mz]
    offset = len(CHECKPOINT_MAGIC) + 12
    expected = offset + 8 * sum(sizes)
    if len(blob) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(blob)} bytes, expected {expected}")
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(blob, dtype="<f8", count=size,
                                    offset=offset).astype(np.float64))
        offset += 8 * size
    W, V, a, b, c, alpha, beta, gamma = arrays
    try:
        return Dbm2Params(W.reshape(my, mx), V.reshape(mz, my),
                          a, b, c, alpha, beta, gamma)
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid parameters: {exc}") from exc


def write_csv(path, header, rows):
    """Plain UTF-8 CSV with LF line endings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)

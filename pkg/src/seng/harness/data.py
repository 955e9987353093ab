"""Dataset sources: synthetic blobs, NTK regression data and IDX files."""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODES = {(v.kind, v.itemsize): k for k, v in IDX_DTYPES.items()}


class IdxFormatError(ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: Optional[np.ndarray] = None
    y_test: Optional[np.ndarray] = None
    task: str = "classification"

    @property
    def input_shape(self):
        return self.x_train.shape[1:]

    @property
    def n_outputs(self):
        if self.task == "classification":
            return int(self.y_train.max()) + 1
        return 1 if self.y_train.ndim == 1 else self.y_train.shape[1]


def synthetic_classification(n=512, dim=16, separation=2.0, n_test=256, seed=0):
    """Two balanced Gaussian blobs centred at +/- ``separation`` along axis 0."""
    rng = np.random.default_rng([seed, 101])

    def draw(count):
        y = np.repeat([0, 1], [count - count // 2, count // 2])
        centre = np.zeros(dim)
        centre[0] = separation
        x = rng.standard_normal((count, dim)) + np.where(y[:, None] == 1, centre, -centre)
        perm = rng.permutation(count)
        return x[perm], y[perm]

    x_train, y_train = draw(n)
    x_test, y_test = draw(n_test)
    return Dataset(x_train, y_train, x_test, y_test)


def ntk_regression(n=20, dim=8, seed=0):
    """Unit-norm inputs with Gaussian targets, as a regression dataset."""
    rng = np.random.default_rng([seed, 202])
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = rng.standard_normal((n, 1))
    return Dataset(x, y, task="regression")


def load_idx(path, raw=False):
    """Read an IDX file.

    Unsigned-byte data with two or more dimensions (images) is returned as
    float64 scaled to [0, 1]; 1-D unsigned-byte data (labels) as int64.
    ``raw=True`` returns the stored values with their native dtype.
    """
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise IdxFormatError("file shorter than the magic number", len(data))
    if data[0] != 0 or data[1] != 0:
        raise IdxFormatError("bad magic number", 0)
    code, ndim = data[2], data[3]
    if code not in IDX_DTYPES:
        raise IdxFormatError(f"unknown element type 0x{code:02x}", 2)
    if ndim == 0:
        raise IdxFormatError("zero dimensions", 3)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError("truncated dimension header", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    dtype = IDX_DTYPES[code]
    expected = header + int(np.prod(dims)) * dtype.itemsize
    if len(data) < expected:
        raise IdxFormatError(f"truncated payload, expected {expected} bytes", len(data))
    arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)
    arr = arr.astype(dtype.newbyteorder("="))
    if raw:
        return arr
    if code == 0x08:
        return arr.astype(np.int64) if ndim == 1 else arr.astype(np.float64) / 255.0
    return arr


def save_idx(path, array):
    array = np.asarray(array)
    key = (array.dtype.kind, array.dtype.itemsize)
    if key not in _CODES:
        raise ValueError(f"dtype {array.dtype} has no IDX code")
    code = _CODES[key]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(IDX_DTYPES[code]).tobytes())


def idx_dataset(images, labels, test_fraction=0.2, seed=0):
    x = load_idx(images)
    y = load_idx(labels)
    if len(x) != len(y):
        raise ValueError(f"{len(x)} images but {len(y)} labels")
    if x.ndim == 3:
        x = x[:, None]
    perm = np.random.default_rng([seed, 303]).permutation(len(x))
    cut = len(x) - int(round(test_fraction * len(x)))
    tr, te = perm[:cut], perm[cut:]
    return Dataset(x[tr], y[tr], x[te] if len(te) else None, y[te] if len(te) else None)

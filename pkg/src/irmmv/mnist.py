"""Reader and writer for the IDX3 image format used by MNIST."""
from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .errors import FormatError

IDX3_MAGIC = 0x00000803
DOWNLOAD_HINT = (
    "MNIST images not found at {path!r}. Download 'train-images-idx3-ubyte.gz' "
    "from a MNIST mirror (for example https://storage.googleapis.com/cvdf-datasets/mnist/) "
    "and pass its path; gzip-compressed files are read directly."
)


def _read_bytes(path) -> bytes:
    if not os.path.exists(path):
        raise FileNotFoundError(DOWNLOAD_HINT.format(path=str(path)))
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def decode_idx3(raw: bytes, count: int = None) -> np.ndarray:
    """Parse IDX3 bytes into a ``(count, rows, cols)`` uint8 array."""
    if len(raw) < 16:
        raise FormatError("truncated IDX3 header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX3_MAGIC:
        raise FormatError(f"bad magic 0x{magic:08x}, expected 0x{IDX3_MAGIC:08x}")
    if count is None:
        count = n
    if count < 1 or count > n:
        raise FormatError(f"requested {count} images, file holds {n}")
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise FormatError(f"truncated IDX3 payload: need {need} bytes, have {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(
        count, rows, cols
    )


def encode_idx3(images: np.ndarray) -> bytes:
    """Inverse of ``decode_idx3`` for a ``(count, rows, cols)`` uint8 array."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise FormatError("expected a 3-D uint8 array")
    header = struct.pack(">IIII", IDX3_MAGIC, *images.shape)
    return header + np.ascontiguousarray(images).tobytes()


def load_mnist_idx(images_path, count: int = 500) -> np.ndarray:
    """First ``count`` images as an ``(rows*cols) x count`` matrix in [0, 1].

    Column ``j`` is image ``j`` flattened row-major and divided by 255.
    """
    imgs = decode_idx3(_read_bytes(images_path), count)
    return imgs.reshape(imgs.shape[0], -1).T.astype(np.float64) / 255.0


def images_to_bytes(x: np.ndarray, rows: int = 28, cols: int = 28) -> bytes:
    """Re-encode a matrix produced by ``load_mnist_idx``."""
    x = np.asarray(x)
    imgs = np.rint(x.T * 255.0).astype(np.uint8).reshape(x.shape[1], rows, cols)
    return encode_idx3(imgs)

"""Dataset ingestion: IDX (MNIST), the LDLT raw tensor format, and Omniglot pools.

Samples are stored column-wise: ``LabeledSet.x`` has shape (d, N).
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "LabeledSet",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxDimensionError",
    "parse_idx",
    "encode_idx",
    "load_mnist",
    "MNIST_FILES",
    "normalize_flatten",
    "unflatten",
    "RawTensorError",
    "read_raw_tensor",
    "write_raw_tensor",
    "rotate90",
    "omniglot_prepare",
    "load_omniglot",
]


@dataclass(frozen=True)
class LabeledSet:
    """Column-stacked samples ``x`` (d, N) in [0, 1] with labels ``y`` in ``0..n_classes-1``."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[1] != y.shape[0]:
            raise ValueError(f"x {x.shape} and y {y.shape} do not describe the same samples")
        if x.shape[1] < 1:
            raise ValueError("a LabeledSet needs at least one sample")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
            raise ValueError("features must be finite and within [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def __len__(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, n_classes: int | None = None, labels=None) -> LabeledSet:
        idx = np.asarray(idx)
        y = self.y[idx] if labels is None else labels
        return LabeledSet(self.x[:, idx], y, self.n_classes if n_classes is None else n_classes)

    def of_class(self, c: int) -> np.ndarray:
        """Samples of class ``c`` as a (d, N_c) array."""
        return self.x[:, self.y == c]


# ---------------------------------------------------------------------------
# IDX

class IdxError(ValueError):
    """Base class for IDX decoding failures."""


class IdxMagicError(IdxError):
    """Magic number is not a known IDX header."""


class IdxTruncatedError(IdxError):
    """File ends before the declared header or payload."""


class IdxDimensionError(IdxError):
    """Declared dimensions are zero-rank or overflow the addressable size."""


_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.kind + str(v.itemsize): k for k, v in _IDX_TYPES.items()}
_MAX_PAYLOAD = 1 << 40


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an IDX buffer into a native-endian array.

    The header is two zero bytes, a type code, a rank byte and one big-endian
    u32 per dimension. Bytes past the declared payload are ignored.
    """
    buf = memoryview(buf)
    if len(buf) < 4:
        raise IdxTruncatedError("IDX header shorter than 4 bytes")
    zero, code, rank = struct.unpack(">HBB", buf[:4])
    if zero != 0 or code not in _IDX_TYPES:
        raise IdxMagicError(f"bad IDX magic 0x{bytes(buf[:4]).hex()}")
    if rank == 0:
        raise IdxDimensionError("IDX rank must be at least 1")
    head = 4 + 4 * rank
    if len(buf) < head:
        raise IdxTruncatedError(f"IDX header declares {rank} dims but the file ends early")
    dims = struct.unpack(f">{rank}I", buf[4:head])
    dtype = _IDX_TYPES[code]
    count = 1
    for n in dims:
        count *= n
        if count * dtype.itemsize > _MAX_PAYLOAD:
            raise IdxDimensionError(f"IDX dims {dims} overflow the supported payload size")
    nbytes = count * dtype.itemsize
    if len(buf) - head < nbytes:
        raise IdxTruncatedError(f"IDX payload is {len(buf) - head} bytes, header declares {nbytes}")
    out = np.frombuffer(buf, dtype=dtype, count=count, offset=head)
    return out.astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def encode_idx(arr: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx`."""
    arr = np.asarray(arr)
    key = arr.dtype.kind + str(arr.dtype.itemsize)
    if key not in _IDX_CODES:
        raise IdxError(f"dtype {arr.dtype} has no IDX type code")
    code = _IDX_CODES[key]
    header = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.astype(_IDX_TYPES[code]).tobytes()


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_maybe_gz(path: Path) -> bytes:
    for cand in (path, path.with_name(path.name + ".gz")):
        if cand.exists():
            raw = cand.read_bytes()
            return gzip.decompress(raw) if cand.suffix == ".gz" else raw
    raise FileNotFoundError(path)


def load_mnist(data_dir, split: str = "train") -> LabeledSet:
    """Load an official MNIST split (raw or ``.gz`` IDX files) from ``data_dir``."""
    img_name, lbl_name = MNIST_FILES[split]
    data_dir = Path(data_dir)
    try:
        images = parse_idx(_read_maybe_gz(data_dir / img_name))
        labels = parse_idx(_read_maybe_gz(data_dir / lbl_name))
    except FileNotFoundError as exc:
        raise FileNotFoundError(
            f"MNIST {split} split not found in {data_dir}: expected {img_name} and {lbl_name} "
            f"(optionally gzipped)"
        ) from exc
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise IdxDimensionError(f"image dims {images.shape} do not match label dims {labels.shape}")
    return LabeledSet(normalize_flatten(images), labels.astype(np.int64), 10)


def normalize_flatten(images: np.ndarray) -> np.ndarray:
    """(N, H, W) uint8 images -> (H*W, N) float64 columns in [0, 1], row-major flattening."""
    images = np.asarray(images)
    n = images.shape[0]
    return np.ascontiguousarray(images.reshape(n, -1).T, dtype=np.float64) / 255.0


def unflatten(x: np.ndarray, height: int = 28, width: int = 28) -> np.ndarray:
    """(H*W, N) columns in [0, 1] -> (N, H, W) uint8 images."""
    return np.rint(np.asarray(x).T * 255.0).astype(np.uint8).reshape(-1, height, width)


# ---------------------------------------------------------------------------
# LDLT raw tensors: b"LDLT" | u8 version | u8 dtype | u8 rank | u32 dims... | payload (LE)

class RawTensorError(ValueError):
    """Malformed LDLT raw tensor file."""


_RAW_MAGIC = b"LDLT"
_RAW_VERSION = 1
_RAW_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}


def write_raw_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        code = 1
    elif arr.dtype.kind == "f":
        code = 0
    else:
        raise RawTensorError(f"unsupported dtype {arr.dtype}; use float64 or uint8")
    head = _RAW_MAGIC + struct.pack("<BBB", _RAW_VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_RAW_DTYPES[code]).tobytes()


def read_raw_tensor(buf: bytes) -> np.ndarray:
    buf = memoryview(buf)
    if bytes(buf[:4]) != _RAW_MAGIC:
        raise RawTensorError("bad LDLT magic")
    if len(buf) < 7:
        raise RawTensorError("truncated LDLT header")
    version, code, rank = struct.unpack("<BBB", buf[4:7])
    if version != _RAW_VERSION:
        raise RawTensorError(f"unsupported LDLT version {version}")
    if code not in _RAW_DTYPES:
        raise RawTensorError(f"unknown LDLT dtype code {code}")
    head = 7 + 4 * rank
    if len(buf) < head:
        raise RawTensorError("truncated LDLT header")
    dims = struct.unpack(f"<{rank}I", buf[7:head])
    dtype = _RAW_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - head != count * dtype.itemsize:
        raise RawTensorError(
            f"LDLT payload is {len(buf) - head} bytes, header declares {count * dtype.itemsize}"
        )
    out = np.frombuffer(buf, dtype=dtype, count=count, offset=head)
    return out.astype(dtype.newbyteorder("="), copy=True).reshape(dims)


# ---------------------------------------------------------------------------
# Omniglot

def rotate90(img: np.ndarray, quarter_turns: int = 1) -> np.ndarray:
    """Rotate the last two axes counterclockwise by ``90 * quarter_turns`` degrees."""
    return np.ascontiguousarray(np.rot90(img, k=quarter_turns, axes=(-2, -1)))


_ROTATION_STEPS = {0: 0, 90: 1, 180: 2, 270: 3}


def omniglot_prepare(images: np.ndarray, rotations=(0, 90, 180, 270), n_train_chars: int = 1200,
                     rotations_as_classes: bool = True) -> tuple[LabeledSet, LabeledSet]:
    """Build train and evaluation pools from (characters, drawers, 28, 28) images.

    The first ``n_train_chars`` characters form the training pool and the
    rest the evaluation pool. With ``rotations_as_classes`` each rotation of
    a character is its own class; otherwise rotations are extra samples of
    the base character.

    ``uint8`` input is scaled by 1/255; float input must already lie in [0, 1].
    """
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[2:] != (28, 28):
        raise ValueError(f"expected (characters, drawers, 28, 28) images, got {images.shape}")
    bad = [r for r in rotations if r not in _ROTATION_STEPS]
    if bad or not rotations:
        raise ValueError(f"rotations must be multiples of 90 degrees in [0, 270], got {bad or rotations}")
    if not 0 < n_train_chars < images.shape[0]:
        raise ValueError(f"n_train_chars must split {images.shape[0]} characters into two pools")
    scaled = images / 255.0 if images.dtype == np.uint8 else images.astype(np.float64)

    def pool(chars: np.ndarray) -> LabeledSet:
        n_chars, n_draw = chars.shape[:2]
        cols, labels = [], []
        for r_i, deg in enumerate(rotations):
            rot = rotate90(chars, _ROTATION_STEPS[deg]).reshape(n_chars, n_draw, -1)
            cols.append(rot.reshape(n_chars * n_draw, -1))
            base = np.repeat(np.arange(n_chars), n_draw)
            labels.append(base * len(rotations) + r_i if rotations_as_classes else base)
        x = np.vstack(cols).T
        y = np.concatenate(labels)
        n_classes = n_chars * len(rotations) if rotations_as_classes else n_chars
        return LabeledSet(x, y, n_classes)

    return pool(scaled[:n_train_chars]), pool(scaled[n_train_chars:])


def load_omniglot(data_dir, part: str = "eval", n_train_chars: int = 1200, **kwargs) -> LabeledSet:
    """Load ``omniglot.ldlt`` from ``data_dir`` and return one pool ("train" or "eval").

    Only the requested pool is materialized; the full rotated training pool
    alone is several hundred megabytes in float64.
    """
    path = Path(data_dir) / "omniglot.ldlt"
    if not path.exists():
        raise FileNotFoundError(
            f"Omniglot tensor not found: expected {path} (see scripts/omniglot_to_ldlt.py)"
        )
    images = read_raw_tensor(path.read_bytes())
    if part == "train":
        images = np.concatenate([images[:n_train_chars], images[n_train_chars:n_train_chars + 1]])
        return omniglot_prepare(images, n_train_chars=n_train_chars, **kwargs)[0]
    if part == "eval":
        images = np.concatenate([images[:1], images[n_train_chars:]])
        return omniglot_prepare(images, n_train_chars=1, **kwargs)[1]
    raise ValueError(f"part must be 'train' or 'eval', got {part!r}")

"""Linear networks, predictor and teacher banks, and the binary checkpoint format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ldl.linalg import ShapeError, gaussian_matrix, orthonormalize_rows

__all__ = [
    "LinearNet",
    "PredictorBank",
    "TeacherBank",
    "forward",
    "loss_and_grads",
    "make_target",
    "make_teacher_bank",
    "init_predictor_bank",
    "init_from_teachers",
    "clone_bank",
    "class_scores",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_KINDS",
]


@dataclass
class LinearNet:
    """Stack of weight matrices ``[W_1, ..., W_l]``; the net computes ``W_l ... W_1 x``."""

    layers: list[np.ndarray]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a LinearNet needs at least one layer")
        self.layers = [np.ascontiguousarray(w, dtype=np.float64) for w in self.layers]
        for i, w in enumerate(self.layers):
            if w.ndim != 2:
                raise ShapeError(f"layer {i} is not a matrix: shape {w.shape}")
            if i and w.shape[1] != self.layers[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i} expects input {w.shape[1]} but layer {i - 1} "
                    f"outputs {self.layers[i - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple(w.shape for w in self.layers)

    def product(self) -> np.ndarray:
        """The single (out_dim, in_dim) matrix this net computes."""
        m = self.layers[0]
        for w in self.layers[1:]:
            m = w @ m
        return m

    def copy(self) -> LinearNet:
        return LinearNet([w.copy() for w in self.layers])


def forward(net: LinearNet, x: np.ndarray) -> np.ndarray:
    """Apply ``net`` to column-stacked samples ``x`` of shape (d, batch)."""
    if x.ndim != 2 or x.shape[0] != net.in_dim:
        raise ShapeError(f"input of shape {x.shape} does not match net input dim {net.in_dim}")
    h = x
    for w in net.layers:
        h = w @ h
    return h


def loss_and_grads(net: LinearNet, x: np.ndarray, target_out: np.ndarray):
    """Mean-over-batch squared error ``(1/N) sum_i ||net(x_i) - t_i||^2`` and its layer gradients.

    Returns
    -------
    loss : float
    grads : list of ndarray
        ``d loss / d W_i`` in layer order, same shapes as ``net.layers``.
    """
    acts = [x]
    for w in net.layers:
        acts.append(w @ acts[-1])
    if target_out.shape != acts[-1].shape:
        raise ShapeError(f"target shape {target_out.shape} != output shape {acts[-1].shape}")
    n = x.shape[1]
    resid = acts[-1] - target_out
    loss = float(np.sum(resid * resid)) / n
    back = (2.0 / n) * resid
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        grads[i] = back @ acts[i].T
        if i:
            back = net.layers[i].T @ back
    return loss, grads


@dataclass
class PredictorBank:
    """One linear predictor per class, all with the same layer shapes."""

    predictors: list[LinearNet]

    def __post_init__(self):
        if not self.predictors:
            raise ValueError("a PredictorBank needs at least one predictor")
        sig = self.predictors[0].shapes
        for c, p in enumerate(self.predictors):
            if p.shapes != sig:
                raise ShapeError(f"predictor {c} has shapes {p.shapes}, expected {sig}")

    @property
    def n_classes(self) -> int:
        return len(self.predictors)

    @property
    def class_ids(self) -> range:
        return range(len(self.predictors))

    @property
    def in_dim(self) -> int:
        return self.predictors[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.predictors[0].out_dim

    def copy(self) -> PredictorBank:
        return PredictorBank([p.copy() for p in self.predictors])


@dataclass
class TeacherBank:
    """Frozen per-class teacher matrices, each (k, d).

    ``active_rows`` is the number of leading rows per teacher that carry the
    orthonormal basis; any rows below it are zero padding.
    """

    teachers: list[np.ndarray]
    active_rows: int = field(default=0)

    def __post_init__(self):
        frozen = []
        for t in self.teachers:
            t = np.array(t, dtype=np.float64, order="C", copy=True)
            t.setflags(write=False)
            frozen.append(t)
        self.teachers = frozen
        if not self.active_rows:
            self.active_rows = self.teachers[0].shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.teachers)

    def active_block(self) -> np.ndarray:
        """All non-padding teacher rows stacked: (C * active_rows, d)."""
        return np.vstack([t[: self.active_rows] for t in self.teachers])


def make_target(layer_dims, rng: np.random.Generator) -> LinearNet:
    """Gaussian-initialized net with ``layer_dims = [d, h_1, ..., k]``."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValueError("layer_dims needs an input and an output size")
    return LinearNet([gaussian_matrix(dims[i + 1], dims[i], rng) for i in range(len(dims) - 1)])


def make_teacher_bank(n_classes: int, k: int, d: int, rng: np.random.Generator,
                      pad: bool = False) -> TeacherBank:
    """Random teachers whose rows are jointly orthonormal across all classes.

    Draws ``C`` Gaussian (n, d) blocks, orthonormalizes the stacked (C*n, d)
    matrix and splits it back per class. Without ``pad`` this requires
    ``C * k <= d`` and ``n = k``. With ``pad`` and ``C * k > d``, each teacher
    gets ``n = d // C`` orthonormal rows followed by ``k - n`` zero rows.
    """
    if n_classes < 1 or k < 1 or d < 1:
        raise ValueError("class count and dimensions must be positive")
    if n_classes * k <= d:
        n = k
    elif pad:
        n = d // n_classes
        if n < 1:
            raise ShapeError(f"cannot fit {n_classes} orthogonal teachers in dimension {d}")
    else:
        raise ShapeError(f"C*k = {n_classes * k} exceeds input dimension d = {d}")
    block = orthonormalize_rows(gaussian_matrix(n_classes * n, d, rng))
    teachers = []
    for c in range(n_classes):
        t = np.zeros((k, d))
        t[:n] = block[c * n:(c + 1) * n]
        teachers.append(t)
    return TeacherBank(teachers, active_rows=n)


def init_predictor_bank(n_classes: int, layer_dims, rng: np.random.Generator) -> PredictorBank:
    return PredictorBank([make_target(layer_dims, rng) for _ in range(n_classes)])


def init_from_teachers(tb: TeacherBank) -> PredictorBank:
    """Single-layer predictors whose weights are writable copies of the teachers."""
    return PredictorBank([LinearNet([np.array(t, copy=True)]) for t in tb.teachers])


def clone_bank(bank: PredictorBank) -> PredictorBank:
    return bank.copy()


def class_scores(bank: PredictorBank, target: LinearNet, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Squared distances ``||P_c x - Q x||^2`` for every class.

    ``x`` is a single (d,) sample or column-stacked (d, N) samples; the result
    is (C,) or (C, N) respectively. Each net is collapsed to its product
    matrix first, so one matrix product per class suffices.
    """
    single = x.ndim == 1
    xs = x[:, None] if single else x
    if xs.shape[0] != bank.in_dim or target.in_dim != bank.in_dim or target.out_dim != bank.out_dim:
        raise ShapeError(f"input {x.shape}, target {target.shapes} and bank {bank.predictors[0].shapes} disagree")
    q = target.product()
    diffs = [p.product() - q for p in bank.predictors]
    out = np.empty((bank.n_classes, xs.shape[1]))
    for start in range(0, xs.shape[1], chunk):
        block = xs[:, start:start + chunk]
        for c, dm in enumerate(diffs):
            r = dm @ block
            out[c, start:start + chunk] = np.einsum("ij,ij->j", r, r)
    return out[:, 0] if single else out


# Checkpoint layout, all little-endian:
#   b"LDLM" | u8 version | u8 kind | u32 net_count
#   per net: u32 layer_count, then (u32 rows, u32 cols) per layer
#   payload: every layer of every net, in order, as row-major float64
_MAGIC = b"LDLM"
_VERSION = 1
CHECKPOINT_KINDS = {"ldl": 0, "naive": 1, "logreg": 2, "mlp": 3}
_KIND_NAMES = {v: k for k, v in CHECKPOINT_KINDS.items()}


class CheckpointError(ValueError):
    """Malformed or unsupported checkpoint file."""


def save_checkpoint(path, kind: str, nets: list[list[np.ndarray]]) -> None:
    """Write ``nets`` (each a list of 2-D arrays) under the checkpoint ``kind`` tag."""
    if kind not in CHECKPOINT_KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    head = [_MAGIC, struct.pack("<BBI", _VERSION, CHECKPOINT_KINDS[kind], len(nets))]
    payload = []
    for layers in nets:
        head.append(struct.pack("<I", len(layers)))
        for w in layers:
            w = np.asarray(w, dtype="<f8")
            if w.ndim != 2:
                raise ShapeError(f"checkpoint layers must be matrices, got shape {w.shape}")
            head.append(struct.pack("<II", *w.shape))
            payload.append(np.ascontiguousarray(w).tobytes())
    Path(path).write_bytes(b"".join(head + payload))


def load_checkpoint(path) -> tuple[str, list[list[np.ndarray]]]:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise CheckpointError("not an LDL checkpoint (bad magic)")
    try:
        version, kind, n_nets = struct.unpack_from("<BBI", buf, 4)
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if kind not in _KIND_NAMES:
            raise CheckpointError(f"unknown checkpoint kind tag {kind}")
        off = 10
        shapes = []
        for _ in range(n_nets):
            (n_layers,) = struct.unpack_from("<I", buf, off)
            off += 4
            net = []
            for _ in range(n_layers):
                net.append(struct.unpack_from("<II", buf, off))
                off += 8
            shapes.append(net)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    total = sum(r * c for net in shapes for r, c in net) * 8
    if len(buf) - off != total:
        raise CheckpointError(f"payload is {len(buf) - off} bytes, header declares {total}")
    nets = []
    for net in shapes:
        layers = []
        for r, c in net:
            layers.append(np.frombuffer(buf, dtype="<f8", count=r * c, offset=off).reshape(r, c).astype(np.float64))
            off += r * c * 8
        nets.append(layers)
    return _KIND_NAMES[kind], nets

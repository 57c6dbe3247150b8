"""Two-layer character-level recurrent classifiers and their file format.

Model file layout (all integers little-endian)::

    b"NST1"                       magic
    uint32 version                = 1
    uint32 n, n bytes             UTF-8 JSON metadata
    float32 blobs                 parameters in canonical order (see
                                  RecurrentModel.parameter_names)
    [b"OPT1" uint32 n, n bytes JSON, float32 blobs]
                                  optional optimizer section (checkpoints)
    8 bytes                       BLAKE2b digest (digest_size=8) of every
                                  preceding byte
"""
from __future__ import annotations

import hashlib
import json
import string
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from namestate.errors import DataError
from namestate.nncore import (
    KINDS,
    CellParams,
    OptimizerState,
    cell_backward,
    cell_forward,
    init_cell,
    softmax,
    softmax_nll,
)

MAGIC = b"NST1"
OPT_TAG = b"OPT1"
FORMAT_VERSION = 1
CHECKSUM_BYTES = 8

PAD, UNK = "<pad>", "<unk>"


class ModelFileError(DataError):
    code = 10


class BadMagicError(ModelFileError):
    code = 11


class UnsupportedVersionError(ModelFileError):
    code = 12


class ChecksumError(ModelFileError):
    code = 13


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple[str, ...] = (PAD, UNK) + tuple(string.ascii_lowercase) + tuple(string.digits)

    def __post_init__(self):
        if self.symbols[:2] != (PAD, UNK) or len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary must start with pad, unk and have unique symbols")

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)


def encode_indices(name: str, vocab: Vocabulary) -> list[int]:
    if not name:
        raise ValueError("cannot encode an empty name")
    idx = vocab.index
    return [idx.get(ch, 1) for ch in name]


def encode_name(name: str, vocab: Vocabulary, dtype=np.float32) -> np.ndarray:
    """One-hot matrix of shape ``(len(name), len(vocab))``; unknown chars map to unk."""
    ids = encode_indices(name, vocab)
    out = np.zeros((len(ids), len(vocab)), dtype=dtype)
    out[np.arange(len(ids)), ids] = 1.0
    return out


@dataclass
class RecurrentModel:
    kind: str
    hidden_dim: int
    states: list[str]
    layer1: CellParams
    layer2: CellParams
    head_W: np.ndarray
    head_b: np.ndarray
    vocab: Vocabulary = field(default_factory=Vocabulary)
    metadata: dict = field(default_factory=dict)
    head_grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.states) < 2 or len(set(self.states)) != len(self.states):
            raise ValueError("state registry needs at least 2 unique entries")
        if self.layer2.input_dim != self.layer1.hidden_dim:
            raise ValueError("layer2 input must equal layer1 hidden size")
        if self.head_W.shape != (self.layer2.hidden_dim, len(self.states)):
            raise ValueError(f"output projection has shape {self.head_W.shape}")
        if not self.head_grads:
            self.head_grads = {"W": np.zeros_like(self.head_W), "b": np.zeros_like(self.head_b)}
        self.state_index = {s: i for i, s in enumerate(self.states)}

    @property
    def dtype(self):
        return self.head_W.dtype

    @staticmethod
    def parameter_names() -> list[str]:
        return [
            "layer1.W_ih", "layer1.W_hh", "layer2.W_ih", "layer2.W_hh", "head.W",
            "layer1.b_ih", "layer1.b_hh", "layer2.b_ih", "layer2.b_hh", "head.b",
        ]

    def _lookup(self, name: str, grads: bool) -> np.ndarray:
        part, key = name.split(".")
        if part == "head":
            return (self.head_grads if grads else {"W": self.head_W, "b": self.head_b})[key]
        cell = self.layer1 if part == "layer1" else self.layer2
        return (cell.grads if grads else cell.weights)[key]

    def parameters(self) -> list[np.ndarray]:
        return [self._lookup(n, False) for n in self.parameter_names()]

    def gradients(self) -> list[np.ndarray]:
        return [self._lookup(n, True) for n in self.parameter_names()]

    def zero_grad(self) -> None:
        for g in self.gradients():
            g.fill(0)

    def fresh_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(p) for n, p in zip(self.parameter_names(), self.parameters())}


def init_model(kind: str, hidden_dim: int, states: Sequence[str], seed: int = 0,
               dtype=np.float32, vocab: Optional[Vocabulary] = None) -> RecurrentModel:
    kind = kind.upper()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    vocab = vocab or Vocabulary()
    rng = np.random.default_rng(seed)
    layer1 = init_cell(kind, len(vocab), hidden_dim, rng, dtype)
    layer2 = init_cell(kind, hidden_dim, hidden_dim, rng, dtype)
    bound = 1.0 / np.sqrt(hidden_dim)
    head_W = rng.uniform(-bound, bound, (hidden_dim, len(states))).astype(dtype)
    head_b = rng.uniform(-bound, bound, len(states)).astype(dtype)
    return RecurrentModel(kind, hidden_dim, list(states), layer1, layer2, head_W, head_b, vocab,
                          metadata={"init_seed": seed, "init": "uniform(+-1/sqrt(hidden))"})


def _cell_grads(grads: dict[str, np.ndarray], layer: str) -> dict[str, np.ndarray]:
    return {k: grads[f"{layer}.{k}"] for k in ("W_ih", "W_hh", "b_ih", "b_hh")}


def _run_layer(cell: CellParams, inputs: list[np.ndarray], keep: bool):
    B = inputs[0].shape[0]
    h = np.zeros((B, cell.hidden_dim), dtype=cell.dtype)
    c = np.zeros_like(h) if cell.kind == "LSTM" else None
    outputs, caches = [], []
    for x in inputs:
        h, c, cache = cell_forward(cell, x, h, c)
        outputs.append(h)
        if keep:
            caches.append(cache)
    return outputs, caches


def forward_batch(model: RecurrentModel, names: Sequence[str], keep_caches: bool = False):
    """Logits ``(B, S)`` for names that all have the same length."""
    lengths = {len(n) for n in names}
    if len(lengths) != 1:
        raise ValueError("forward_batch needs names of equal length; bucket them first")
    L = lengths.pop()
    ids = np.array([encode_indices(n, model.vocab) for n in names])
    eye = np.eye(len(model.vocab), dtype=model.dtype)
    inputs = [eye[ids[:, t]] for t in range(L)]
    h1, c1 = _run_layer(model.layer1, inputs, keep_caches)
    h2, c2 = _run_layer(model.layer2, h1, keep_caches)
    final = h2[-1]
    logits = final @ model.head_W + model.head_b
    caches = (c1, c2, final) if keep_caches else None
    return logits, caches


def forward_name(model: RecurrentModel, name: str, keep_caches: bool = False):
    logits, caches = forward_batch(model, [name], keep_caches)
    return logits[0], caches


def backward_batch(model: RecurrentModel, caches, dlogits: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    """BPTT through both layers for one equal-length bucket, accumulating into ``grads``."""
    c1, c2, final = caches
    grads["head.W"] += final.T @ dlogits
    grads["head.b"] += dlogits.sum(axis=0)
    dh = dlogits @ model.head_W.T
    lstm = model.kind == "LSTM"
    g2 = _cell_grads(grads, "layer2")
    g1 = _cell_grads(grads, "layer1")
    L = len(c2)
    d_h1 = [None] * L
    dc = np.zeros_like(dh) if lstm else None
    for t in range(L - 1, -1, -1):
        dx, dh, dc = cell_backward(model.layer2, c2[t], dh, dc, g2)
        d_h1[t] = dx
    dh = np.zeros_like(d_h1[0])
    dc = np.zeros_like(dh) if lstm else None
    for t in range(L - 1, -1, -1):
        _, dh, dc = cell_backward(model.layer1, c1[t], dh + d_h1[t], dc, g1)


def bucket_by_length(batch: Sequence[tuple[str, int]]) -> list[list[tuple[str, int]]]:
    buckets: dict[int, list[tuple[str, int]]] = {}
    for item in batch:
        buckets.setdefault(len(item[0]), []).append(item)
    return [buckets[L] for L in sorted(buckets)]


def _bucket_loss_grads(model: RecurrentModel, bucket, batch_size: int):
    names = [n for n, _ in bucket]
    targets = np.array([t for _, t in bucket])
    logits, caches = forward_batch(model, names, keep_caches=True)
    losses, dlogits = softmax_nll(logits.astype(np.float64), targets)
    grads = model.fresh_grads()
    backward_batch(model, caches, (dlogits / batch_size).astype(model.dtype), grads)
    return float(losses.sum()), grads


def batch_forward_backward(model: RecurrentModel, batch: Sequence[tuple[str, int]],
                           threads: int = 1) -> float:
    """Mean NLL over the batch; gradients (averaged) are added to the model's buffers.

    Names are grouped by length so no padding is ever fed through the cells.
    Each length bucket gets its own gradient buffers, reduced into the model
    in ascending-length order, so results do not depend on ``threads``.
    """
    if not batch:
        raise ValueError("empty batch")
    for name, target in batch:
        if not 0 <= target < len(model.states):
            raise DataError(f"state index {target} for {name!r} outside the registry")
    buckets = bucket_by_length(batch)
    B = len(batch)
    if threads > 1 and len(buckets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: _bucket_loss_grads(model, b, B), buckets))
    else:
        results = [_bucket_loss_grads(model, b, B) for b in buckets]
    total = 0.0
    names = model.parameter_names()
    model_grads = dict(zip(names, model.gradients()))
    for loss, grads in results:
        total += loss
        for n in names:
            model_grads[n] += grads[n]
    return total / B


def predict_proba(model: RecurrentModel, names: Sequence[str], threads: int = 1) -> np.ndarray:
    """Softmax probabilities ``(len(names), S)`` in input order."""
    order: dict[int, list[int]] = {}
    for i, n in enumerate(names):
        order.setdefault(len(n), []).append(i)
    groups = [order[L] for L in sorted(order)]
    out = np.zeros((len(names), len(model.states)))

    def run(idx):
        logits, _ = forward_batch(model, [names[i] for i in idx])
        return softmax(logits.astype(np.float64))

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            probs = list(pool.map(run, groups))
    else:
        probs = [run(g) for g in groups]
    for idx, p in zip(groups, probs):
        out[idx] = p
    return out


def rank_states(model: RecurrentModel, probs: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top-k (state, probability), ties broken by state identifier."""
    order = sorted(range(len(model.states)), key=lambda i: (-probs[i], model.states[i]))
    return [(model.states[i], float(probs[i])) for i in order[:k]]


# ---------------------------------------------------------------- file format

def _blob(arrays: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)


def _section(tag: bytes, meta: dict, arrays: Sequence[np.ndarray]) -> bytes:
    doc = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return tag + struct.pack("<I", len(doc)) + doc + _blob(arrays)


def _model_meta(model: RecurrentModel) -> dict:
    return {
        "kind": model.kind,
        "hidden_dim": model.hidden_dim,
        "input_dim": len(model.vocab),
        "vocab": list(model.vocab.symbols),
        "states": model.states,
        "parameters": [[n, list(p.shape)] for n, p in zip(model.parameter_names(), model.parameters())],
        "metadata": model.metadata,
    }


def serialize(model: RecurrentModel, optimizer: Optional[OptimizerState] = None,
              extra: Optional[dict] = None) -> bytes:
    doc = json.dumps(_model_meta(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<I", len(doc)) + doc
    body += _blob(model.parameters())
    if optimizer is not None:
        buffer_names = sorted(optimizer.buffers)
        meta = {
            "kind": optimizer.kind,
            "learning_rate": optimizer.learning_rate,
            "momentum": optimizer.momentum,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
            "buffers": buffer_names,
            "extra": extra or {},
        }
        arrays = [a for name in buffer_names for a in optimizer.buffers[name]]
        body += _section(OPT_TAG, meta, arrays)
    return body + hashlib.blake2b(body, digest_size=CHECKSUM_BYTES).digest()


def save_model(model: RecurrentModel, path: str | Path, optimizer: Optional[OptimizerState] = None,
               extra: Optional[dict] = None) -> None:
    """Write atomically: the previous file at ``path`` survives a failed write."""
    path = Path(path)
    data = serialize(model, optimizer, extra)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data, self.pos, self.end = data, 0, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise ModelFileError("model file ends early")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def json(self) -> dict:
        return json.loads(self.take(self.u32()).decode("utf-8"))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)


def deserialize(data: bytes):
    """Parse bytes from :func:`serialize`; returns ``(model, optimizer_or_None, extra)``."""
    if data[:4] != MAGIC:
        raise BadMagicError("not a model file (bad magic)")
    if len(data) >= 8:
        version = struct.unpack("<I", data[4:8])[0]
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"unsupported model file version {version}")
    if len(data) < 8 + CHECKSUM_BYTES:
        raise ChecksumError("model file truncated")
    body, digest = data[:-CHECKSUM_BYTES], data[-CHECKSUM_BYTES:]
    if hashlib.blake2b(body, digest_size=CHECKSUM_BYTES).digest() != digest:
        raise ChecksumError("model file checksum mismatch (corrupted or truncated)")
    r = _Reader(data, len(body))
    r.pos = 8
    meta = r.json()
    vocab = Vocabulary(tuple(meta["vocab"]))
    arrays = {name: r.array(tuple(shape)) for name, shape in meta["parameters"]}
    kind, H, D = meta["kind"], meta["hidden_dim"], meta["input_dim"]

    def cell(layer, input_dim):
        w = {k: arrays[f"{layer}.{k}"].copy() for k in ("W_ih", "W_hh", "b_ih", "b_hh")}
        return CellParams(kind, input_dim, H, w)

    model = RecurrentModel(kind, H, list(meta["states"]), cell("layer1", D), cell("layer2", H),
                           arrays["head.W"].copy(), arrays["head.b"].copy(), vocab, meta["metadata"])
    optimizer, extra = None, {}
    if r.pos < r.end:
        if r.take(4) != OPT_TAG:
            raise ModelFileError("unknown section after parameters")
        ometa = r.json()
        params = model.parameters()
        buffers = {name: [r.array(p.shape).copy() for p in params] for name in ometa["buffers"]}
        optimizer = OptimizerState(
            kind=ometa["kind"], learning_rate=ometa["learning_rate"], momentum=ometa["momentum"],
            beta1=ometa["beta1"], beta2=ometa["beta2"], epsilon=ometa["epsilon"],
            step_count=ometa["step_count"], buffers=buffers,
        )
        extra = ometa.get("extra", {})
    if r.pos != r.end:
        raise ModelFileError("trailing bytes before checksum")
    return model, optimizer, extra


def load_model(path: str | Path) -> RecurrentModel:
    return load_checkpoint(path)[0]


def load_checkpoint(path: str | Path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    return deserialize(data)

"""Training loop with per-architecture presets, metrics and checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from namestate.corpus import SplitCorpus
from namestate.errors import DataError, NumericError
from namestate.models import (
    RecurrentModel,
    batch_forward_backward,
    init_model,
    load_checkpoint,
    save_model,
)
from namestate.nncore import OptimizerState, clip_grad_norm, optimizer_step

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "mean_loss", "wall_seconds", "shuffle_seed")


@dataclass
class TrainConfig:
    kind: str
    hidden_dim: int
    batch_size: int
    optimizer: str
    learning_rate: float
    momentum: float = 0.0
    epochs: int = 10
    seed: int = 42
    checkpoint_interval: int = 1
    clip_norm: Optional[float] = None
    dtype: str = "float32"

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("RNN", "LSTM", "GRU"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        for name in ("hidden_dim", "batch_size", "epochs", "checkpoint_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        doc = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(doc).hexdigest()[:16]


_PRESETS = {
    "RNN": dict(hidden_dim=512, batch_size=256, optimizer="sgd", learning_rate=0.005, momentum=0.9),
    "LSTM": dict(hidden_dim=512, batch_size=256, optimizer="adam", learning_rate=3e-4),
    "GRU": dict(hidden_dim=2048, batch_size=1024, optimizer="adam", learning_rate=3e-4),
}


def preset(kind: str, epochs: int = 10, **overrides) -> TrainConfig:
    """Published hyperparameters for ``kind``; any field may be overridden."""
    kind = kind.upper()
    if kind not in _PRESETS:
        raise ValueError(f"unknown model kind {kind!r}")
    params = dict(_PRESETS[kind], kind=kind, epochs=epochs)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**params)


def new_optimizer(config: TrainConfig) -> OptimizerState:
    return OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate,
                          momentum=config.momentum)


def encode_pairs(corpus: SplitCorpus, states: list[str]) -> list[tuple[str, int]]:
    index = {s: i for i, s in enumerate(states)}
    try:
        return [(name, index[state]) for name, state in corpus.train_pairs]
    except KeyError as exc:
        raise DataError(f"training state {exc.args[0]!r} not in registry") from exc


def run_epoch(model: RecurrentModel, pairs: list[tuple[str, int]], config: TrainConfig,
              optimizer: OptimizerState, epoch: int, threads: int = 1) -> float:
    """One pass over ``pairs`` shuffled with seed ``config.seed + epoch``."""
    order = np.random.default_rng(config.seed + epoch).permutation(len(pairs))
    losses = []
    for b, start in enumerate(range(0, len(pairs), config.batch_size)):
        batch = [pairs[i] for i in order[start:start + config.batch_size]]
        model.zero_grad()
        loss = batch_forward_backward(model, batch, threads)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
        grads = model.gradients()
        if config.clip_norm is not None:
            clip_grad_norm(grads, config.clip_norm)
        optimizer_step(model.parameters(), grads, optimizer)
        losses.append(loss)
    return float(np.mean(losses))


def _write_metrics(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in history:
            w.writerow((row["epoch"], repr(row["mean_loss"]), f"{row['wall_seconds']:.3f}", row["shuffle_seed"]))


def train(corpus: SplitCorpus, config: TrainConfig, out: str | Path,
          resume: Optional[str | Path] = None, threads: int = 1) -> RecurrentModel:
    """Train a model on the unique (name, state) pairs of ``corpus``.

    Writes ``metrics.csv``, ``checkpoints/epoch_NNNN.nst`` every
    ``checkpoint_interval`` epochs and at the end, and ``model.nst``.
    Resuming from a checkpoint continues with the same shuffle seeds and
    optimizer state, so the loss history matches an uninterrupted run.
    """
    if not corpus.train_pairs:
        raise DataError("corpus has no training pairs")
    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(config.dtype)

    if resume is not None:
        model, optimizer, extra = load_checkpoint(resume)
        if optimizer is None:
            raise DataError(f"{resume} has no optimizer section; not a checkpoint")
        if model.states != corpus.states:
            raise DataError("checkpoint state registry differs from the corpus")
        history = extra.get("history", [])
        start = int(extra.get("epochs_done", len(history)))
    else:
        model = init_model(config.kind, config.hidden_dim, corpus.states, seed=config.seed, dtype=dtype)
        optimizer = new_optimizer(config)
        history, start = [], 0
    model.metadata.update(config=config.to_dict(), config_digest=config.digest())

    pairs = encode_pairs(corpus, model.states)
    log.info("training %s hidden=%d on %d pairs, epochs %d..%d", config.kind, config.hidden_dim,
             len(pairs), start + 1, config.epochs)
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        loss = run_epoch(model, pairs, config, optimizer, epoch, threads)
        history.append({"epoch": epoch + 1, "mean_loss": loss,
                        "wall_seconds": time.perf_counter() - t0, "shuffle_seed": config.seed + epoch})
        log.info("epoch %d mean loss %.6f", epoch + 1, loss)
        _write_metrics(out / "metrics.csv", history)
        done = epoch + 1
        if done % config.checkpoint_interval == 0 or done == config.epochs:
            # wall time is kept out of the checkpoint so its bytes stay reproducible
            extra = {"epochs_done": done,
                     "history": [dict(h, wall_seconds=0.0) for h in history]}
            save_model(model, out / "checkpoints" / f"epoch_{done:04d}.nst", optimizer, extra)
    if not history or history[-1]["epoch"] != config.epochs:
        _write_metrics(out / "metrics.csv", history)
    save_model(model, out / "model.nst")
    return model

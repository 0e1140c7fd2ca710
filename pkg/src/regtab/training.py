"""Adam training loop with linear learning-rate decay.

Sentences are processed one by one with gradient accumulation inside each
batch, which is exactly equivalent to a padded batch for a mean loss.
Everything is deterministic given the seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import model as mdl
from .core import DataFormatError, NumericError
from .data import Corpus
from .decoding import decode_all
from .evaluation import MatchMode, match_counts, micro_prf
from .numerics import ParamStore, scale
from .tagging import encode_tags

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    decay_steps: Optional[int] = None  # defaults to the total planned steps
    clip_norm: Optional[float] = None
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise DataFormatError("learning rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise DataFormatError("batch size and epochs must be >= 1")


def lr_at(step: int, config: TrainConfig) -> float:
    """Linearly decayed rate: lr * (1 - step/total), floored at zero."""
    total = config.decay_steps
    if total is None:
        raise DataFormatError("decay_steps must be set before querying the schedule")
    if not (0 <= step <= total):
        raise DataFormatError(f"step {step} outside [0, {total}]")
    return config.lr * max(0.0, 1.0 - step / total)


class AdamState:
    """First/second moment estimates per parameter."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ParamStore):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params: ParamStore, state: AdamState, step: int, config: TrainConfig) -> None:
    """One bias-corrected Adam update at the scheduled learning rate."""
    lr = lr_at(step, config)
    t = step + 1
    b1, b2, eps = AdamState.BETA1, AdamState.BETA2, AdamState.EPS
    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            g = np.zeros_like(tensor.data)
        elif not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_gradients(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`."""
    sq = 0.0
    for _, tensor in params.items():
        if tensor.grad is not None:
            sq += float((tensor.grad * tensor.grad).sum())
    norm = float(np.sqrt(sq))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return norm


@dataclass
class TrainResult:
    params: ParamStore
    vocab: mdl.Vocabulary
    best_values: dict[str, np.ndarray]
    best_epoch: int
    best_f1: float
    metrics_lines: list[str] = field(default_factory=list)
    skipped_sentences: int = 0


def _dev_f1(dev, params, config, vocab, inventory, mode, external):
    totals = [0, 0, 0]
    for sentence, gold in dev:
        grids = mdl.predict(sentence, params, config, vocab, external)
        pred = set(decode_all(grids, sentence, inventory).triples)
        counts = match_counts(pred, set(gold), mode)
        for i in range(3):
            totals[i] += counts[i]
    return micro_prf(*totals)


def train(
    train_corpus: Corpus,
    dev_corpus: Corpus,
    model_config: mdl.ModelConfig,
    train_config: TrainConfig,
    external: Optional[mdl.ExternalEmbeddings] = None,
    match_mode: Optional[MatchMode] = None,
) -> TrainResult:
    """Fit the model; returns the best-dev-F1 parameter snapshot.

    Over-length training sentences are skipped with a warning; dev sentences
    are decoded regardless of length.  A checkpoint of the best snapshot is
    written when the config names a path.
    """
    if not train_corpus.examples:
        raise DataFormatError("training corpus is empty")
    if not dev_corpus.examples:
        raise DataFormatError("dev corpus is empty")
    mode = match_mode
    if mode is None:
        mode = MatchMode.PARTIAL if train_corpus.variant == "partial" else MatchMode.EXACT

    inventory = train_corpus.inventory
    if external is not None:
        vocab = external.vocab
    else:
        tokens = (t for sentence, _ in train_corpus.examples for t in sentence.tokens)
        vocab = mdl.Vocabulary.build(tokens, model_config.vocab_size)

    rng = np.random.default_rng(train_config.seed)
    params = mdl.init_params(
        model_config, rng, vocab, None if external is None else external.dim
    )
    state = AdamState(params)

    usable = []
    skipped = 0
    conflict_cells = 0
    for sentence, gold in train_corpus.examples:
        if sentence.n > model_config.max_len:
            skipped += 1
            log.warning("skipping over-length sentence (%d tokens)", sentence.n)
            continue
        grids, conflicts = encode_tags(sentence, list(gold), inventory)
        conflict_cells += len(conflicts)
        usable.append((sentence, grids))
    if not usable:
        raise DataFormatError("no training sentences within the maximum length")
    if conflict_cells:
        log.warning(
            "%d gold cells had competing tags; kept the higher-priority tag", conflict_cells
        )

    batches_per_epoch = (len(usable) + train_config.batch_size - 1) // train_config.batch_size
    total_steps = train_config.epochs * batches_per_epoch
    config = train_config
    if config.decay_steps is None:
        config = replace(config, decay_steps=total_steps)

    best_values = params.copy_values()
    best_f1 = -1.0
    best_epoch = -1
    metrics_lines = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        loss_total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            params.zero_grads()
            for idx in batch:
                sentence, grids = usable[idx]
                sent_loss = mdl.loss(sentence, grids, params, model_config, vocab, external)
                loss_total += float(sent_loss.data)
                # scale before backward so accumulated grads form the batch mean
                scale(sent_loss, 1.0 / len(batch)).backward()
            if config.clip_norm is not None:
                clip_gradients(params, config.clip_norm)
            adam_step(params, state, step, config)
            step += 1
        train_loss = loss_total / len(usable)

        precision, recall, f1 = _dev_f1(
            dev_corpus.examples, params, model_config, vocab, inventory, mode, external
        )
        metrics_lines.append(
            f"{epoch}\t{train_loss!r}\t{precision!r}\t{recall!r}\t{f1!r}"
        )
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best_values = params.copy_values()

    if config.checkpoint_path:
        best = ParamStore()
        for name, _ in params.items():
            best.add(name, best_values[name])
        mdl.save_model(config.checkpoint_path, best, model_config, vocab, inventory)

    return TrainResult(
        params=params,
        vocab=vocab,
        best_values=best_values,
        best_epoch=best_epoch,
        best_f1=best_f1,
        metrics_lines=metrics_lines,
        skipped_sentences=skipped,
    )

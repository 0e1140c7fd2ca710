"""The scoring network over pair tables.

Pipeline per sentence: a small windowed token encoder stands in for a
pretrained encoder, a pairwise affine map builds the N x N table, a stack
of bottleneck convolution blocks (1x1 -> 3x3 -> 1x1, layer norm + ReLU
after each convolution, residual add) turns it into a region-aware table,
and each cell gets tag logits as a shared score from the table cell plus a
per-relation residual score computed from the raw token pair.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numerics as nm
from .core import DataFormatError, RelationInventory, Sentence
from .numerics import ParamStore, Tensor
from .tagging import TAG_COUNT, TagGrid


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    relations: int
    hidden: int = 32  # table/channel width
    bottleneck: Optional[int] = None  # conv block inner width, default hidden // 2
    blocks: int = 1
    window: int = 1  # encoder context radius
    max_len: int = 100
    dtype: str = "float64"

    def __post_init__(self):
        if self.bottleneck is None:
            object.__setattr__(self, "bottleneck", max(1, self.hidden // 2))
        if self.vocab_size < 1:
            raise DataFormatError("vocab_size must be >= 1")
        if self.hidden < 4:
            raise DataFormatError("hidden size must be >= 4")
        if self.bottleneck < 1 or self.blocks < 1 or self.relations < 1:
            raise DataFormatError("bottleneck, blocks and relations must be >= 1")
        if self.window < 0 or self.max_len < 1:
            raise DataFormatError("window must be >= 0 and max_len >= 1")
        if self.dtype not in ("float64", "float32"):
            raise DataFormatError(f"unsupported dtype {self.dtype!r}")


@dataclass(frozen=True)
class Vocabulary:
    """Token -> id map; unknown tokens get the extra last id."""

    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, token_iter, max_size: int) -> "Vocabulary":
        counts = Counter(token_iter)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(t for t, _ in ranked[:max_size]))

    @property
    def unk_id(self) -> int:
        return len(self.tokens)

    @property
    def table_rows(self) -> int:
        return len(self.tokens) + 1

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def ids_of(self, sentence: Sentence) -> np.ndarray:
        return np.array([self.id_of(t) for t in sentence.tokens], dtype=np.int64)


@dataclass(frozen=True)
class ExternalEmbeddings:
    """Fixed token vectors from file, projected into the model width."""

    vocab: Vocabulary
    matrix: np.ndarray  # (vocab.table_rows, dim), unk row is all zero

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_embedding_file(path: str) -> ExternalEmbeddings:
    """Parse `token TAB v1 TAB ... TAB vd` lines into an embedding table."""
    tokens = []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataFormatError(f"{path}:{lineno}: expected token and values")
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if rows and len(vec) != len(rows[0]):
                raise DataFormatError(f"{path}:{lineno}: inconsistent vector width")
            tokens.append(parts[0])
            rows.append(vec)
    if not rows:
        raise DataFormatError(f"{path}: empty embedding file")
    if len(set(tokens)) != len(tokens):
        raise DataFormatError(f"{path}: duplicate tokens")
    matrix = np.zeros((len(rows) + 1, len(rows[0])), dtype=np.float64)
    matrix[: len(rows)] = rows
    return ExternalEmbeddings(Vocabulary(tuple(tokens)), matrix)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(
    config: ModelConfig,
    rng: np.random.Generator,
    vocab: Vocabulary,
    external_dim: Optional[int] = None,
) -> ParamStore:
    """Seeded uniform(+-1/sqrt(fan_in)) init; layer norm gains 1, biases 0."""
    dtype = np.float64 if config.dtype == "float64" else np.float32
    d = config.hidden
    db = config.bottleneck
    win = 2 * config.window + 1
    params = ParamStore()

    if external_dim is None:
        params.add("emb", _uniform(rng, (vocab.table_rows, d), d, dtype))
    else:
        params.add("emb_proj", _uniform(rng, (external_dim, d), external_dim, dtype))
    params.add("enc_w1", _uniform(rng, (win * d, d), win * d, dtype))
    params.add("enc_w2", _uniform(rng, (d, d), d, dtype))

    params.add("table_w", _uniform(rng, (2 * d, d), 2 * d, dtype))
    params.add("table_b", _uniform(rng, (d,), 2 * d, dtype))

    for k in range(config.blocks):
        params.add(f"block{k}_conv_in", _uniform(rng, (1, 1, d, db), d, dtype))
        params.add(f"block{k}_ln_in_gain", np.ones(db, dtype=dtype))
        params.add(f"block{k}_ln_in_bias", np.zeros(db, dtype=dtype))
        params.add(f"block{k}_conv_mid", _uniform(rng, (3, 3, db, db), 9 * db, dtype))
        params.add(f"block{k}_ln_mid_gain", np.ones(db, dtype=dtype))
        params.add(f"block{k}_ln_mid_bias", np.zeros(db, dtype=dtype))
        params.add(f"block{k}_conv_out", _uniform(rng, (1, 1, db, d), db, dtype))
        params.add(f"block{k}_ln_out_gain", np.ones(d, dtype=dtype))
        params.add(f"block{k}_ln_out_bias", np.zeros(d, dtype=dtype))

    params.add("score_w", _uniform(rng, (d, TAG_COUNT), d, dtype))
    params.add("score_b", _uniform(rng, (TAG_COUNT,), d, dtype))
    for r in range(config.relations):
        params.add(f"rel{r}_w", _uniform(rng, (2 * d, TAG_COUNT), 2 * d, dtype))
        params.add(f"rel{r}_b", _uniform(rng, (TAG_COUNT,), 2 * d, dtype))
    return params


@dataclass(frozen=True)
class TableRep:
    grid: Tensor  # (N, N, hidden)


@dataclass(frozen=True)
class ScoreGrids:
    shared: Tensor  # (N, N, TAG_COUNT)
    residual: tuple[Tensor, ...]  # one (N, N, TAG_COUNT) tensor per relation

    def logits(self, relation: int) -> np.ndarray:
        return self.shared.data + self.residual[relation].data

    def stacked_residual(self) -> np.ndarray:
        return np.stack([t.data for t in self.residual], axis=2)


def encode_tokens(
    sentence: Sentence,
    params: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    external: Optional[ExternalEmbeddings] = None,
    enforce_max_len: bool = True,
) -> Tensor:
    """Contextual token rows: w2 applied to ReLU(w1 applied to the window concat)."""
    if enforce_max_len and sentence.n > config.max_len:
        raise DataFormatError(
            f"sentence of length {sentence.n} exceeds max length {config.max_len}"
        )
    ids = vocab.ids_of(sentence)
    if external is None:
        emb = nm.embedding(params["emb"], ids)
    else:
        rows = Tensor(external.matrix[ids])
        emb = nm.linear(rows, params["emb_proj"])
    window = nm.window_concat(emb, config.window)
    return nm.linear(nm.relu(nm.linear(window, params["enc_w1"])), params["enc_w2"])


def build_table(token_reps: Tensor, params: ParamStore, config: ModelConfig) -> TableRep:
    """Cell (i, j) = ReLU(W [h_i; h_j] + b)."""
    pairs = nm.pair_concat(token_reps)
    return TableRep(nm.relu(nm.linear(pairs, params["table_w"], params["table_b"])))


def conv_block(table: TableRep, params: ParamStore, config: ModelConfig) -> TableRep:
    """Apply the configured number of bottleneck convolution blocks."""
    x = table.grid
    for k in range(config.blocks):
        y = nm.relu(
            nm.layer_norm(
                nm.conv2d(x, params[f"block{k}_conv_in"]),
                params[f"block{k}_ln_in_gain"],
                params[f"block{k}_ln_in_bias"],
            )
        )
        y = nm.relu(
            nm.layer_norm(
                nm.conv2d(y, params[f"block{k}_conv_mid"]),
                params[f"block{k}_ln_mid_gain"],
                params[f"block{k}_ln_mid_bias"],
            )
        )
        y = nm.relu(
            nm.layer_norm(
                nm.conv2d(y, params[f"block{k}_conv_out"]),
                params[f"block{k}_ln_out_gain"],
                params[f"block{k}_ln_out_bias"],
            )
        )
        x = nm.add(y, x)
    return TableRep(x)


def score_cells(
    region_table: TableRep,
    token_reps: Tensor,
    params: ParamStore,
    config: ModelConfig,
) -> ScoreGrids:
    """Shared logits from the region table; residual logits from raw token pairs."""
    shared = nm.linear(region_table.grid, params["score_w"], params["score_b"])
    pairs = nm.pair_concat(token_reps)
    residual = tuple(
        nm.linear(pairs, params[f"rel{r}_w"], params[f"rel{r}_b"])
        for r in range(config.relations)
    )
    return ScoreGrids(shared, residual)


def score_sentence(
    sentence: Sentence,
    params: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    external: Optional[ExternalEmbeddings] = None,
    enforce_max_len: bool = True,
) -> ScoreGrids:
    """Full forward pass to per-cell logits."""
    token_reps = encode_tokens(sentence, params, config, vocab, external, enforce_max_len)
    table = conv_block(build_table(token_reps, params, config), params, config)
    return score_cells(table, token_reps, params, config)


def predict(
    sentence: Sentence,
    params: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    external: Optional[ExternalEmbeddings] = None,
) -> list[TagGrid]:
    """Argmax tag per cell and relation; length limits do not apply here."""
    scores = score_sentence(sentence, params, config, vocab, external, enforce_max_len=False)
    grids = []
    for r in range(config.relations):
        cells = scores.logits(r).argmax(axis=-1).astype(np.int8)
        grids.append(TagGrid(r, cells))
    return grids


def loss(
    sentence: Sentence,
    gold_grids: Sequence[TagGrid],
    params: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    external: Optional[ExternalEmbeddings] = None,
) -> Tensor:
    """Cross entropy averaged over all N*N*relations cells."""
    if len(gold_grids) != config.relations:
        raise DataFormatError(
            f"expected {config.relations} gold grids, got {len(gold_grids)}"
        )
    n = sentence.n
    for grid in gold_grids:
        if grid.n != n:
            raise DataFormatError(f"gold grid size {grid.n} does not match sentence {n}")
    scores = score_sentence(sentence, params, config, vocab, external)
    total = None
    for r in range(config.relations):
        targets = gold_grids[r].cells.astype(np.int64)
        cell_losses = nm.softmax_cross_entropy(nm.add(scores.shared, scores.residual[r]), targets)
        summed = nm.sum_all(cell_losses)
        total = summed if total is None else nm.add(total, summed)
    return nm.scale(total, 1.0 / (n * n * config.relations))


def save_model(
    path: str,
    params: ParamStore,
    config: ModelConfig,
    vocab: Vocabulary,
    inventory: RelationInventory,
) -> None:
    meta = {
        "model": {
            "vocab_size": config.vocab_size,
            "relations": config.relations,
            "hidden": config.hidden,
            "bottleneck": config.bottleneck,
            "blocks": config.blocks,
            "window": config.window,
            "max_len": config.max_len,
            "dtype": config.dtype,
        },
        "vocab": list(vocab.tokens),
        "relation_names": list(inventory.names),
        "external_dim": params["emb_proj"].shape[0] if "emb_proj" in params else None,
    }
    nm.save_params(path, dict((n, t.data) for n, t in params.items()), meta)


def load_model(path: str) -> tuple[dict[str, np.ndarray], ModelConfig, Vocabulary, RelationInventory, Optional[int]]:
    values, meta = nm.load_params(path)
    try:
        config = ModelConfig(**meta["model"])
        vocab = Vocabulary(tuple(meta["vocab"]))
        inventory = RelationInventory(tuple(meta["relation_names"]))
        external_dim = meta.get("external_dim")
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: malformed model metadata ({exc})") from None
    return values, config, vocab, inventory, external_dim

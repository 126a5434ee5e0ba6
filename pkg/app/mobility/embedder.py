"""Paragraph-vector embeddings (PV-DBOW / PV-DM) of symbol and pattern sequences."""

from __future__ import annotations

import logging
import time
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainingConfig

logger = logging.getLogger(__name__)

Token = str


@dataclass
class TokenVocabulary:
    """Tokens with their corpus frequencies, most frequent first."""

    tokens: list[Token]
    counts: list[int]

    def __post_init__(self) -> None:
        self.index = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_corpus(cls, corpus: Sequence[Sequence[Token]]) -> TokenVocabulary:
        counts = Counter(token for seq in corpus for token in seq)
        ordered = sorted(counts, key=lambda token: (-counts[token], token))
        return cls(ordered, [counts[token] for token in ordered])

    def encode(self, tokens: Sequence[Token]) -> list[int]:
        """Token ids, unknown tokens dropped."""
        return [self.index[t] for t in tokens if t in self.index]

    def noise_distribution(self, exponent: float) -> torch.Tensor:
        weights = torch.tensor(self.counts, dtype=torch.float64) ** exponent
        return (weights / weights.sum()).to(torch.float32)


def as_tokens(corpus: Sequence[Sequence[object]]) -> list[list[Token]]:
    return [[str(t) for t in seq] for seq in corpus]


def negative_sampling_loss_and_grads(
    h: torch.Tensor,
    o_pos: torch.Tensor,
    o_neg: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Binary logistic loss of one positive and K noise tokens, with analytic gradients.

    Args:
        h: Hidden vectors, shape (B, dim).
        o_pos: Output vectors of the positive tokens, shape (B, dim).
        o_neg: Output vectors of the noise tokens, shape (B, K, dim).

    Returns:
        Per-row loss (B,), and the gradients with respect to h, o_pos and o_neg.
    """
    s_pos = (h * o_pos).sum(dim=-1)
    s_neg = torch.einsum("bd,bkd->bk", h, o_neg)
    loss = -F.logsigmoid(s_pos) - F.logsigmoid(-s_neg).sum(dim=-1)
    g_pos = torch.sigmoid(s_pos) - 1.0
    g_neg = torch.sigmoid(s_neg)
    grad_h = g_pos[:, None] * o_pos + torch.einsum("bk,bkd->bd", g_neg, o_neg)
    grad_pos = g_pos[:, None] * h
    grad_neg = g_neg[..., None] * h[:, None, :]
    return loss, grad_h, grad_pos, grad_neg


@dataclass
class _Pairs:
    """Flattened (sequence, target, left context) training pairs."""

    seq: torch.Tensor
    target: torch.Tensor
    context: torch.Tensor | None = None
    mask: torch.Tensor | None = None

    def __len__(self) -> int:
        return int(self.seq.shape[0])


def _build_pairs(encoded: Sequence[Sequence[int]], window: int | None) -> _Pairs:
    seq_idx: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    contexts: list[np.ndarray] = []
    for row, ids in enumerate(encoded):
        if not ids:
            continue
        ids_arr = np.asarray(ids, dtype=np.int64)
        seq_idx.append(np.full(len(ids_arr), row, dtype=np.int64))
        targets.append(ids_arr)
        if window:
            padded = np.concatenate([np.full(window, -1, dtype=np.int64), ids_arr])
            contexts.append(np.lib.stride_tricks.sliding_window_view(padded, window)[: len(ids_arr)])
    if not targets:
        empty = torch.zeros(0, dtype=torch.long)
        return _Pairs(empty, empty)
    pairs = _Pairs(torch.from_numpy(np.concatenate(seq_idx)), torch.from_numpy(np.concatenate(targets)))
    if window:
        context = torch.from_numpy(np.concatenate(contexts).copy())
        pairs.mask = context >= 0
        pairs.context = context.clamp(min=0)
    return pairs


def _uniform_init(rows: int, dim: int, generator: torch.Generator) -> torch.Tensor:
    return (torch.rand(rows, dim, generator=generator) - 0.5) / dim


def _sgd(
    docs: torch.Tensor,
    outputs: torch.Tensor,
    inputs: torch.Tensor | None,
    pairs: _Pairs,
    noise: torch.Tensor,
    config: TrainingConfig,
    epochs: int,
    generator: torch.Generator,
    update_tokens: bool,
) -> tuple[list[float], list[float]]:
    """
    Negative-sampling SGD over shuffled mini-batches of pairs.

    The learning rate decays linearly per processed pair from initial_lr to
    final_lr. Token tables stay frozen unless `update_tokens` is set.
    """
    total = epochs * len(pairs)
    step = 0
    losses: list[float] = []
    seconds: list[float] = []
    span = config.initial_lr - config.final_lr
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = torch.randperm(len(pairs), generator=generator)
        epoch_loss = 0.0
        for start in range(0, len(pairs), config.batch_size):
            idx = order[start : start + config.batch_size]
            b = idx.shape[0]
            d_idx = pairs.seq[idx]
            target = pairs.target[idx]
            negatives = torch.multinomial(noise, b * config.negatives, replacement=True, generator=generator)
            negatives = negatives.view(b, config.negatives)
            lr = config.initial_lr - span * (step + torch.arange(b, dtype=torch.float32)) / total

            if inputs is None:
                h = docs[d_idx]
                n_parts = torch.ones(b)
            else:
                ctx = pairs.context[idx]
                mask = pairs.mask[idx].to(torch.float32)
                n_parts = 1.0 + mask.sum(dim=1)
                h = (docs[d_idx] + (inputs[ctx] * mask[..., None]).sum(dim=1)) / n_parts[:, None]

            loss, grad_h, grad_pos, grad_neg = negative_sampling_loss_and_grads(
                h, outputs[target], outputs[negatives]
            )
            # The averaged hidden vector splits its gradient equally among its parts.
            delta_h = -(lr / n_parts)[:, None] * grad_h
            docs.index_add_(0, d_idx, delta_h)
            if update_tokens:
                outputs.index_add_(0, target, -lr[:, None] * grad_pos)
                outputs.index_add_(0, negatives.reshape(-1), (-lr[:, None, None] * grad_neg).reshape(-1, h.shape[1]))
                if inputs is not None:
                    ctx_delta = (delta_h[:, None, :] * mask[..., None]).reshape(-1, h.shape[1])
                    inputs.index_add_(0, ctx.reshape(-1), ctx_delta)

            epoch_loss += float(loss.sum())
            step += b
        losses.append(epoch_loss / len(pairs))
        seconds.append(time.perf_counter() - t0)
        logger.debug(f"epoch {epoch + 1}/{epochs}: loss={losses[-1]:.4f} ({seconds[-1] * 1000:.1f}ms)")
    return losses, seconds


@dataclass
class EmbeddingModel:
    """Trained paragraph vectors with their token tables."""

    config: TrainingConfig
    seq_ids: list[str]
    sequence_vectors: np.ndarray
    vocabulary: TokenVocabulary
    output_vectors: np.ndarray
    input_vectors: np.ndarray | None = None
    loss_history: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._row = {sid: i for i, sid in enumerate(self.seq_ids)}

    @property
    def dim(self) -> int:
        return self.config.dim

    def vector(self, seq_id: str) -> np.ndarray:
        return self.sequence_vectors[self._row[seq_id]]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {sid: self.sequence_vectors[i] for i, sid in enumerate(self.seq_ids)}

    @torch.no_grad()
    def infer_vectors(
        self,
        corpus: Sequence[Sequence[object]],
        epochs: int | None = None,
        seed: int | None = None,
        allow_empty: bool = False,
    ) -> np.ndarray:
        """
        Infer fresh sequence vectors for new token sequences.

        Token tables stay frozen; only the new vectors are trained by the same
        objective and schedule. Unknown tokens are dropped.

        Args:
            corpus: Token sequences to embed.
            epochs: Inference epochs; defaults to `infer_epochs`, else `epochs`.
                Zero keeps the seeded initial vectors.
            seed: Seed of initialization and sampling; defaults to the training seed.
            allow_empty: Keep the initial vector for sequences without known
                tokens instead of raising.

        Returns:
            Array of shape (len(corpus), dim).

        Raises:
            ValueError: If a sequence has no known token and allow_empty is False,
                or on negative epochs.
        """
        encoded = [self.vocabulary.encode(seq) for seq in as_tokens(corpus)]
        if not allow_empty:
            for i, ids in enumerate(encoded):
                if not ids:
                    raise ValueError(f"sequence {i}: no token is in the model vocabulary")
        if epochs is None:
            epochs = self.config.infer_epochs if self.config.infer_epochs is not None else self.config.epochs
        if epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {epochs}")
        generator = torch.Generator().manual_seed(self.config.seed if seed is None else seed)
        docs = _uniform_init(len(encoded), self.dim, generator)
        window = self.config.window if self.input_vectors is not None else None
        pairs = _build_pairs(encoded, window)
        if epochs and len(pairs) and len(self.vocabulary):
            _sgd(
                docs,
                torch.from_numpy(self.output_vectors),
                None if self.input_vectors is None else torch.from_numpy(self.input_vectors),
                pairs,
                self.vocabulary.noise_distribution(self.config.noise_exponent),
                self.config,
                epochs,
                generator,
                update_tokens=False,
            )
        return docs.numpy()

    def infer_vector(self, tokens: Sequence[object], epochs: int | None = None, seed: int | None = None) -> np.ndarray:
        return self.infer_vectors([tokens], epochs=epochs, seed=seed)[0]


@torch.no_grad()
def train_paragraph_vectors(
    corpus: Sequence[Sequence[object]],
    config: TrainingConfig,
    seq_ids: Sequence[str] | None = None,
) -> EmbeddingModel:
    """
    Train one vector per sequence with PV-DBOW or PV-DM (per `config.mode`).

    PV-DBOW predicts every token of a sequence from the sequence vector alone;
    PV-DM predicts each token from the average of the sequence vector and the
    input vectors of up to `window` preceding tokens.

    Args:
        corpus: Non-empty list of token sequences; empty sequences keep their
            initial vector.
        config: Training hyperparameters.
        seq_ids: Sequence identifiers; defaults to positions.

    Returns:
        EmbeddingModel with sequence vectors in corpus order.

    Raises:
        ValueError: On an empty corpus or mismatched id count.
    """
    if len(corpus) == 0:
        raise ValueError("training needs a non-empty corpus")
    seq_ids = list(seq_ids) if seq_ids is not None else [str(i) for i in range(len(corpus))]
    if len(seq_ids) != len(corpus):
        raise ValueError(f"{len(seq_ids)} sequence ids for {len(corpus)} sequences")

    torch.set_num_threads(config.threads)
    tokens = as_tokens(corpus)
    vocabulary = TokenVocabulary.from_corpus(tokens)
    encoded = [vocabulary.encode(seq) for seq in tokens]
    empty = sum(1 for ids in encoded if not ids)
    if empty:
        logger.warning(f"{empty} of {len(encoded)} sequences are empty and keep their initial vector")

    generator = torch.Generator().manual_seed(config.seed)
    docs = _uniform_init(len(encoded), config.dim, generator)
    outputs = torch.zeros(len(vocabulary), config.dim)
    inputs = _uniform_init(len(vocabulary), config.dim, generator) if config.mode == "pv-dm" else None

    pairs = _build_pairs(encoded, config.window if inputs is not None else None)
    losses: list[float] = []
    seconds: list[float] = []
    t0 = time.perf_counter()
    if len(pairs):
        losses, seconds = _sgd(
            docs,
            outputs,
            inputs,
            pairs,
            vocabulary.noise_distribution(config.noise_exponent),
            config,
            config.epochs,
            generator,
            update_tokens=True,
        )
    else:
        logger.warning("No token to train on; sequence vectors keep their initialization")

    logger.info(
        f"Trained {config.mode} on {len(encoded)} sequences, {len(vocabulary)} tokens, "
        f"{len(pairs)} pairs x {config.epochs} epochs "
        f"(loss {losses[0] if losses else float('nan'):.4f} -> {losses[-1] if losses else float('nan'):.4f}, "
        f"{round((time.perf_counter() - t0) * 1000, 1)}ms)"
    )
    return EmbeddingModel(
        config=config,
        seq_ids=seq_ids,
        sequence_vectors=docs.numpy(),
        vocabulary=vocabulary,
        output_vectors=outputs.numpy(),
        input_vectors=None if inputs is None else inputs.numpy(),
        loss_history=losses,
        epoch_seconds=seconds,
    )


def train_pvdbow(corpus: Sequence[Sequence[object]], config: TrainingConfig, seq_ids: Sequence[str] | None = None) -> EmbeddingModel:
    return train_paragraph_vectors(corpus, config.model_copy(update={"mode": "pv-dbow"}), seq_ids)


def train_pvdm(corpus: Sequence[Sequence[object]], config: TrainingConfig, seq_ids: Sequence[str] | None = None) -> EmbeddingModel:
    return train_paragraph_vectors(corpus, config.model_copy(update={"mode": "pv-dm"}), seq_ids)


def pattern_tokens(ids: Sequence[int]) -> list[Token]:
    return [f"sp{i}" for i in ids]


def fuse_sep(v_symbols: np.ndarray, v_patterns: np.ndarray) -> np.ndarray:
    """Average of the symbol-trained and pattern-trained vectors."""
    return (v_symbols + v_patterns) / 2.0


@dataclass
class Sqn2VecModel:
    """Symbol and pattern information fused by averaging (sep) or joint training (sim)."""

    fusion: str
    seq_ids: list[str]
    models: dict[str, EmbeddingModel]

    @property
    def config(self) -> TrainingConfig:
        return next(iter(self.models.values())).config

    @property
    def vectors(self) -> np.ndarray:
        if self.fusion == "sep":
            return fuse_sep(self.models["symbols"].sequence_vectors, self.models["patterns"].sequence_vectors)
        return self.models["joint"].sequence_vectors

    def as_dict(self) -> dict[str, np.ndarray]:
        vectors = self.vectors
        return {sid: vectors[i] for i, sid in enumerate(self.seq_ids)}

    def known(self, symbols: Sequence[object]) -> bool:
        """True if at least one symbol is in the vocabulary vectors are inferred from."""
        vocabulary = self.models["symbols" if self.fusion == "sep" else "joint"].vocabulary
        return any(str(s) in vocabulary.index for s in symbols)

    def infer(
        self,
        symbol_corpus: Sequence[Sequence[object]],
        pattern_corpus: Sequence[Sequence[int]],
        epochs: int | None = None,
        seed: int | None = None,
    ) -> np.ndarray:
        """Infer fused vectors; a sequence without patterns keeps an initial pattern vector."""
        if len(symbol_corpus) != len(pattern_corpus):
            raise ValueError("symbol and pattern corpora differ in length")
        if self.fusion == "sep":
            v1 = self.models["symbols"].infer_vectors(symbol_corpus, epochs, seed)
            v2 = self.models["patterns"].infer_vectors(
                [pattern_tokens(ids) for ids in pattern_corpus], epochs, seed, allow_empty=True
            )
            return fuse_sep(v1, v2)
        joint = [as_tokens([s])[0] + pattern_tokens(p) for s, p in zip(symbol_corpus, pattern_corpus)]
        return self.models["joint"].infer_vectors(joint, epochs, seed)


def train_sqn2vec(
    symbol_corpus: Mapping[str, Sequence[object]],
    pattern_corpus: Mapping[str, Sequence[int]],
    config: TrainingConfig,
) -> Sqn2VecModel:
    """
    Train the fused embedding of symbol and pattern sequences.

    Raises:
        ValueError: If the two corpora are not keyed by the same sequence ids.
    """
    if set(symbol_corpus) != set(pattern_corpus):
        raise ValueError("symbol and pattern corpora must share the same sequence ids")
    seq_ids = list(symbol_corpus)
    symbols = [symbol_corpus[sid] for sid in seq_ids]
    patterns = [pattern_tokens(pattern_corpus[sid]) for sid in seq_ids]

    if config.fusion == "sep":
        models = {
            "symbols": train_paragraph_vectors(symbols, config, seq_ids),
            "patterns": train_paragraph_vectors(patterns, config.model_copy(update={"seed": config.seed + 1}), seq_ids),
        }
    else:
        joint = [as_tokens([s])[0] + p for s, p in zip(symbols, patterns)]
        models = {"joint": train_paragraph_vectors(joint, config, seq_ids)}
    return Sqn2VecModel(config.fusion, seq_ids, models)


def sqn2vec_embed(
    symbol_corpus: Mapping[str, Sequence[object]],
    pattern_corpus: Mapping[str, Sequence[int]],
    config: TrainingConfig,
) -> dict[str, np.ndarray]:
    """Sequence id -> fused vector of width `config.dim`."""
    return train_sqn2vec(symbol_corpus, pattern_corpus, config).as_dict()


def aggregate_user(weekly_vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Centroid of a user's weekly vectors."""
    if len(weekly_vectors) == 0:
        raise ValueError("aggregate_user needs at least one vector")
    widths = {np.shape(v)[-1] for v in weekly_vectors}
    if len(widths) != 1:
        raise ValueError(f"weekly vectors differ in width: {sorted(widths)}")
    return np.mean(np.stack(weekly_vectors), axis=0)


def aggregate_users(seq_users: Sequence[str], vectors: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Group row vectors by user and return (sorted users, centroid matrix)."""
    rows: dict[str, list[int]] = {}
    for i, user in enumerate(seq_users):
        rows.setdefault(user, []).append(i)
    users = sorted(rows)
    if not users:
        return [], np.zeros((0, vectors.shape[1] if vectors.ndim == 2 else 0), dtype=np.float32)
    centroids = np.stack([aggregate_user(vectors[rows[u]]) for u in users])
    return users, centroids

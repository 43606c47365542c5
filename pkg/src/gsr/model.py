"""Relation-token vocabulary and a small encoder-decoder chain generator.

The decoder only ever scores ``relation tokens + [END]``, so every decoded
sequence is a relation chain. Inputs carry a task prefix (``[Index]`` or
``[Retrieval]``) so one model learns both tasks.

Checkpoint layout (little-endian)::

    b"GSRM" | version:u8 | vocab_sha256:32 bytes
    | u32 len + config JSON | u32 len + vocab JSON
    | u32 n_tensors | per tensor: u16 name len, name, u8 ndim, u32 dims..., float64 data
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import random
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .forge import IndexingSample, RetrievalSample

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GSRM"
CHECKPOINT_VERSION = 1

PAD, UNK, BOS, END, INDEX, RETRIEVAL = "[PAD]", "[UNK]", "[BOS]", "[END]", "[Index]", "[Retrieval]"
CONTROL_TOKENS = (PAD, UNK, BOS, END)
PREFIX_TOKENS = (INDEX, RETRIEVAL)
TASKS = {"index": INDEX, "retrieval": RETRIEVAL}
DTYPE = torch.float64


class ModelError(Exception):
    pass


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Token table: control tokens, task prefixes, one token per relation, then words."""

    def __init__(self, relations: Sequence[str], words: Sequence[str]):
        self.relations = list(relations)
        self.words = list(words)
        self.tokens = list(CONTROL_TOKENS) + list(PREFIX_TOKENS) + [f"[REL:{r}]" for r in self.relations] + self.words
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ModelError("duplicate tokens in vocabulary")
        self._rel_offset = len(CONTROL_TOKENS) + len(PREFIX_TOKENS)
        self.relation_index = {r: i for i, r in enumerate(self.relations)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def n_targets(self) -> int:
        """Size of the decoder output space: relations plus the end token."""
        return len(self.relations) + 1

    @property
    def end_target(self) -> int:
        return len(self.relations)

    def target_to_token(self, t: int) -> int:
        """Decoder target index -> embedding id (for feeding the next step)."""
        if t == self.end_target:
            return self.index[END]
        return self._rel_offset + t

    def to_json(self) -> dict:
        return {"relations": self.relations, "words": self.words}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["relations"], obj["words"])

    def hash(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_json(), ensure_ascii=False).encode("utf-8")).digest()


def build_vocab(
    indexing: Iterable[IndexingSample],
    retrieval: Iterable[RetrievalSample],
    relations: Sequence[str],
    min_freq: int = 1,
) -> Vocabulary:
    """Words with frequency >= ``min_freq`` plus one token per catalog relation."""
    if not relations:
        raise ModelError("relation catalog is empty")
    counts: Counter[str] = Counter()
    for s in indexing:
        counts.update(tokenize(s.pseudo_question))
    for s in retrieval:
        counts.update(tokenize(s.question))
    words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return Vocabulary(relations, words)


def encode_input(vocab: Vocabulary, task: str, question: str, max_len: int | None = None) -> list[int]:
    ids = [vocab.index[TASKS[task]]]
    unk = vocab.index[UNK]
    ids += [vocab.index.get(w, unk) for w in tokenize(question)]
    return ids[:max_len] if max_len else ids


@dataclass
class ModelConfig:
    width: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ff_width: int = 256
    max_question_tokens: int = 32
    max_hops: int = 4
    dropout: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.width % self.heads:
            raise ModelError(f"width {self.width} not divisible by heads {self.heads}")
        if self.max_hops < 1 or self.max_question_tokens < 1:
            raise ModelError("max_hops and max_question_tokens must be >= 1")


class GsrModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        self.config = config
        self.vocab = vocab
        d = config.width
        self.embed = nn.Embedding(len(vocab), d, padding_idx=vocab.pad_id, dtype=DTYPE)
        self.src_pos = nn.Embedding(config.max_question_tokens, d, dtype=DTYPE)
        self.tgt_pos = nn.Embedding(config.max_hops + 1, d, dtype=DTYPE)
        layer_kw = dict(d_model=d, nhead=config.heads, dim_feedforward=config.ff_width,
                        dropout=config.dropout, activation="gelu", batch_first=True,
                        norm_first=True, dtype=DTYPE)
        self.encoder = nn.TransformerEncoder(nn.TransformerEncoderLayer(**layer_kw), config.encoder_layers,
                                             norm=nn.LayerNorm(d, dtype=DTYPE), enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(nn.TransformerDecoderLayer(**layer_kw), config.decoder_layers,
                                             norm=nn.LayerNorm(d, dtype=DTYPE))
        self.out = nn.Linear(d, vocab.n_targets, dtype=DTYPE)
        self.scale = math.sqrt(d)

    def encode(self, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pad_mask = src.eq(self.vocab.pad_id)
        pos = torch.arange(src.size(1))
        x = self.embed(src) * self.scale + self.src_pos(pos)
        return self.encoder(x, src_key_padding_mask=pad_mask), pad_mask

    def decode(self, memory: torch.Tensor, pad_mask: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        t = tgt_in.size(1)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        y = self.embed(tgt_in) * self.scale + self.tgt_pos(torch.arange(t))
        h = self.decoder(y, memory, tgt_mask=causal, memory_key_padding_mask=pad_mask)
        return self.out(h)

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        memory, pad_mask = self.encode(src)
        return self.decode(memory, pad_mask, tgt_in)


def init_model(config: ModelConfig, vocab: Vocabulary) -> GsrModel:
    config.validate()
    # fork keeps the caller's global RNG state untouched
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = GsrModel(config, vocab)
    model.eval()
    return model


def _decoder_input(model: GsrModel, prefixes: Sequence[Sequence[int]]) -> torch.Tensor:
    vocab = model.vocab
    bos = vocab.index[BOS]
    return torch.tensor([[bos] + [vocab.target_to_token(t) for t in p] for p in prefixes], dtype=torch.long)


@torch.no_grad()
def next_token_logits(model: GsrModel, encoded: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
    """Scores over the decoder target space given question ids and a relation-target prefix."""
    if len(prefix) >= model.config.max_hops:
        raise ModelError(f"prefix length {len(prefix)} >= max hops {model.config.max_hops}")
    if any(not 0 <= t < model.vocab.end_target for t in prefix):
        raise ModelError("prefix must contain relation targets only")
    model.eval()
    src = torch.tensor([list(encoded)], dtype=torch.long)
    memory, pad_mask = model.encode(src)
    logits = model.decode(memory, pad_mask, _decoder_input(model, [prefix]))
    return logits[0, -1].numpy().copy()


def log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    z = scores - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@torch.no_grad()
def step_log_probs(model: GsrModel, memory: torch.Tensor, pad_mask: torch.Tensor,
                   prefixes: Sequence[Sequence[int]]) -> np.ndarray:
    """Batched log P(next | q, prefix) for equal-length prefixes sharing one encoded question."""
    n = len(prefixes)
    logits = model.decode(memory.expand(n, -1, -1), pad_mask.expand(n, -1), _decoder_input(model, prefixes))
    return log_softmax(logits[:, -1].numpy())


def chain_log_prob(model: GsrModel, encoded: Sequence[int], chain: Sequence[int]) -> float:
    """Sum of step log-probs of ``chain`` followed by [END] (omitted at max hops)."""
    total = 0.0
    targets = list(chain)
    if len(targets) < model.config.max_hops:
        targets.append(model.vocab.end_target)
    for i, t in enumerate(targets):
        total += float(log_softmax(next_token_logits(model, encoded, chain[:i]))[t])
    return total


# -- training -----------------------------------------------------------------

SCHEDULES = ("joint", "retrieval_only", "index_then_retrieval", "index_then_joint")


@dataclass
class TrainingRun:
    schedule: str = "joint"
    epochs: int = 40
    index_epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "adam"  # adam | sgd
    grad_clip: float = 1.0
    index_mixture: float | None = None
    seed: int = 0
    loss_curve: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    consumed: dict[str, int] = field(default_factory=lambda: {"index": 0, "retrieval": 0})

    def params(self) -> dict:
        d = asdict(self)
        for k in ("loss_curve", "epoch_losses", "consumed"):
            d.pop(k)
        return d


@dataclass
class _Example:
    task: str
    src: list[int]
    tgt: list[int]


def make_examples(model: GsrModel, indexing: Sequence[IndexingSample],
                  retrieval: Sequence[RetrievalSample]) -> tuple[list[_Example], list[_Example]]:
    vocab, cfg = model.vocab, model.config
    idx_ex, ret_ex = [], []
    for s in indexing:
        if s.relation not in vocab.relation_index:
            logger.warning("indexing relation %r not in vocabulary; skipped", s.relation)
            continue
        idx_ex.append(_Example("index", encode_input(vocab, "index", s.pseudo_question, cfg.max_question_tokens),
                               [vocab.relation_index[s.relation], vocab.end_target]))
    for s in retrieval:
        src = encode_input(vocab, "retrieval", s.question, cfg.max_question_tokens)
        for chain in s.chains:
            rels = [h.relation for h in chain]
            if not rels or len(rels) > cfg.max_hops or any(r not in vocab.relation_index for r in rels):
                continue
            tgt = [vocab.relation_index[r] for r in rels]
            if len(tgt) < cfg.max_hops:
                tgt.append(vocab.end_target)
            ret_ex.append(_Example("retrieval", src, tgt))
    return idx_ex, ret_ex


def collate(model: GsrModel, batch: Sequence[_Example]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    pad = model.vocab.pad_id
    s_len = max(len(e.src) for e in batch)
    t_len = max(len(e.tgt) for e in batch)
    src = torch.full((len(batch), s_len), pad, dtype=torch.long)
    tgt_in = torch.full((len(batch), t_len), pad, dtype=torch.long)
    labels = torch.full((len(batch), t_len), -100, dtype=torch.long)
    for i, e in enumerate(batch):
        src[i, :len(e.src)] = torch.tensor(e.src)
        prefix = _decoder_input(model, [e.tgt[:-1]])[0]
        tgt_in[i, :len(prefix)] = prefix
        labels[i, :len(e.tgt)] = torch.tensor(e.tgt)
    return src, tgt_in, labels


def batch_loss(model: GsrModel, batch: Sequence[_Example]) -> torch.Tensor:
    src, tgt_in, labels = collate(model, batch)
    logits = model(src, tgt_in)
    return nn.functional.cross_entropy(logits.reshape(-1, logits.size(-1)), labels.reshape(-1), ignore_index=-100)


def _epoch_batches(examples: list[_Example], batch_size: int, rng: random.Random) -> list[list[_Example]]:
    order = list(range(len(examples)))
    rng.shuffle(order)
    return [[examples[i] for i in order[k:k + batch_size]] for k in range(0, len(order), batch_size)]


def _mixed_batches(idx: list[_Example], ret: list[_Example], run: TrainingRun, rng: random.Random):
    if run.index_mixture is None:
        return _epoch_batches(idx + ret, run.batch_size, rng)
    n_steps = max(1, math.ceil((len(idx) + len(ret)) / run.batch_size))
    batches = []
    for _ in range(n_steps):
        pool = idx if rng.random() < run.index_mixture else ret
        batches.append([pool[rng.randrange(len(pool))] for _ in range(min(run.batch_size, len(pool)))])
    return batches


def train(
    model: GsrModel,
    indexing: Sequence[IndexingSample],
    retrieval: Sequence[RetrievalSample],
    run: TrainingRun,
) -> tuple[GsrModel, TrainingRun]:
    """Token-level cross-entropy training under one of the four schedules."""
    if run.schedule not in SCHEDULES:
        raise ModelError(f"unknown schedule {run.schedule!r}; choose from {SCHEDULES}")
    idx_ex, ret_ex = make_examples(model, indexing, retrieval)
    needs_index = run.schedule != "retrieval_only"
    if needs_index and not idx_ex:
        raise ModelError(f"schedule {run.schedule} requires indexing data")
    if not ret_ex:
        raise ModelError("retrieval corpus is empty")

    phases: list[tuple[str, int]] = []
    if run.schedule.startswith("index_then"):
        phases.append(("index", run.index_epochs))
    phases.append(("retrieval" if run.schedule.endswith("retrieval") or run.schedule == "retrieval_only"
                   else "joint", run.epochs))
    if all(n == 0 for _, n in phases):
        return model, run

    rng = random.Random(run.seed)
    if run.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=run.learning_rate, momentum=run.momentum)
    elif run.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=run.learning_rate)
    else:
        raise ModelError(f"unknown optimizer {run.optimizer!r}")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(run.seed)
        model.train()
        for phase, n_epochs in phases:
            for _ in range(n_epochs):
                if phase == "index":
                    batches = _epoch_batches(idx_ex, run.batch_size, rng)
                elif phase == "retrieval":
                    batches = _epoch_batches(ret_ex, run.batch_size, rng)
                else:
                    batches = _mixed_batches(idx_ex, ret_ex, run, rng)
                total = 0.0
                for batch in batches:
                    loss = batch_loss(model, batch)
                    opt.zero_grad()
                    loss.backward()
                    if run.grad_clip:
                        nn.utils.clip_grad_norm_(model.parameters(), run.grad_clip)
                    opt.step()
                    value = loss.item()
                    run.loss_curve.append(value)
                    total += value
                    for e in batch:
                        run.consumed[e.task] += 1
                run.epoch_losses.append(total / len(batches))
        model.eval()
    return model, run


# -- checkpoints --------------------------------------------------------------

def checkpoint_save(model: GsrModel, sink: BinaryIO) -> None:
    config = json.dumps(asdict(model.config)).encode("utf-8")
    vocab = json.dumps(model.vocab.to_json(), ensure_ascii=False).encode("utf-8")
    state = model.state_dict()
    sink.write(CHECKPOINT_MAGIC + struct.pack("<B", CHECKPOINT_VERSION) + model.vocab.hash())
    sink.write(struct.pack("<I", len(config)) + config)
    sink.write(struct.pack("<I", len(vocab)) + vocab)
    sink.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f8")
        sink.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        sink.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        sink.write(arr.tobytes())


def _read(source: BinaryIO, n: int) -> bytes:
    data = source.read(n)
    if len(data) < n:
        raise ModelError("truncated checkpoint")
    return data


def checkpoint_load(source: BinaryIO, vocab: Vocabulary | None = None) -> GsrModel:
    """Load a checkpoint; when ``vocab`` is given its hash must match the file's."""
    if _read(source, 4) != CHECKPOINT_MAGIC:
        raise ModelError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<B", _read(source, 1))
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"checkpoint version mismatch: file has {version}, expected {CHECKPOINT_VERSION}")
    stored_hash = _read(source, 32)
    if vocab is not None and vocab.hash() != stored_hash:
        raise ModelError("vocabulary hash mismatch: checkpoint was trained with a different relation-token table")
    (n,) = struct.unpack("<I", _read(source, 4))
    config = ModelConfig(**json.loads(_read(source, n)))
    (n,) = struct.unpack("<I", _read(source, 4))
    embedded = Vocabulary.from_json(json.loads(_read(source, n)))
    if embedded.hash() != stored_hash:
        raise ModelError("checkpoint vocabulary block is corrupt")
    model = GsrModel(config, vocab or embedded)
    (count,) = struct.unpack("<I", _read(source, 4))
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", _read(source, 2))
        name = _read(source, ln).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(source, 1))
        shape = struct.unpack(f"<{ndim}I", _read(source, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(_read(source, 8 * size), dtype="<f8").reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model


def save_checkpoint(model: GsrModel, path) -> None:
    with open(path, "wb") as fh:
        checkpoint_save(model, fh)


def load_checkpoint(path, vocab: Vocabulary | None = None) -> GsrModel:
    with open(path, "rb") as fh:
        return checkpoint_load(fh, vocab)


def to_bytes(model: GsrModel) -> bytes:
    buf = io.BytesIO()
    checkpoint_save(model, buf)
    return buf.getvalue()

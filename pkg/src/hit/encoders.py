"""Transformer encoders for the video and text modalities.

Video tokens are the sum of a projected expert feature, a segment embedding
indexed by the slot's validity bit, a position embedding (position within
the expert block, shared across experts) and an expert embedding. Text
tokens are the sum of a token embedding, a segment embedding and a position
embedding, framed by [CLS] and [END]. Every block's output is kept in a
``LayerTrace`` so that matching heads can tap any depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError
from .nn import LayerNorm, Linear, Module, param
from .tensor import Tensor

PAD_ID = 0
CLS_ID = 1
END_ID = 2
NUM_SPECIAL = 3


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 4
    hidden: int = 64
    intermediate: int = 64
    max_seq: int = 27
    vocab_size: int = 0
    num_experts: int = 0
    tokens_per_expert: int = 0
    input_dim: int = 0
    cls_framing: bool = False

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_heads < 1 or self.hidden % self.num_heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by num_heads {self.num_heads}")

    @property
    def video_seq_len(self) -> int:
        return self.num_experts * self.tokens_per_expert + (2 if self.cls_framing else 0)


@dataclass
class VisualInput:
    """A batch of packed video inputs; every array has a leading batch axis."""

    features: np.ndarray  # [B, S, input_dim]
    valid: np.ndarray  # [B, S] bool, drives the segment embedding and attention mask
    expert_ids: np.ndarray  # [S]
    position_ids: np.ndarray  # [S]

    def __len__(self):
        return self.features.shape[0]

    def take(self, idx) -> "VisualInput":
        return VisualInput(self.features[idx], self.valid[idx], self.expert_ids, self.position_ids)


@dataclass
class TextInput:
    ids: np.ndarray  # [B, L] int, CLS first and END after the last word
    valid: np.ndarray  # [B, L] bool

    def __len__(self):
        return self.ids.shape[0]

    def take(self, idx) -> "TextInput":
        return TextInput(self.ids[idx], self.valid[idx])


@dataclass
class LayerTrace:
    """Token features per depth: index 0 is the embedding sum, i is block i's output."""

    layers: list[Tensor]
    mask: np.ndarray
    has_cls: bool = False

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    def layer(self, i: int) -> Tensor:
        if i < 0:
            i = self.depth + 1 + i
        if not 1 <= i <= self.depth:
            raise ConfigError(f"layer {i} not in trace with {self.depth} blocks")
        return self.layers[i]


def pack_video(raw: Sequence[Sequence[np.ndarray]], config: EncoderConfig) -> VisualInput:
    """Pack ``raw[b][e]`` (rows of expert ``e`` for video ``b``) into padded slots."""
    E, P = config.num_experts, config.tokens_per_expert
    off = 1 if config.cls_framing else 0
    S = config.video_seq_len
    feats = np.zeros((len(raw), S, config.input_dim))
    valid = np.zeros((len(raw), S), dtype=bool)
    for b, experts in enumerate(raw):
        if len(experts) != E:
            raise InputError(f"video {b} has {len(experts)} experts, config expects {E}")
        for e, rows in enumerate(experts):
            rows = np.asarray(rows, dtype=np.float64).reshape(-1, config.input_dim)
            if len(rows) > P:
                raise InputError(f"video {b} expert {e} has {len(rows)} rows, limit {P}")
            start = off + e * P
            feats[b, start : start + len(rows)] = rows
            valid[b, start : start + len(rows)] = True
        if not valid[b].any():
            raise InputError(f"video {b} has no feature rows")
    if config.cls_framing:
        valid[:, 0] = True
        valid[:, -1] = True
    expert_ids = np.zeros(S, dtype=np.int64)
    position_ids = np.zeros(S, dtype=np.int64)
    expert_ids[off : off + E * P] = np.repeat(np.arange(E), P)
    position_ids[off : off + E * P] = np.tile(np.arange(P), E)
    return VisualInput(feats, valid, expert_ids, position_ids)


def pack_text(
    captions: Sequence[Sequence[int]],
    config: EncoderConfig,
    max_words: int | None = None,
    length: int | None = None,
) -> TextInput:
    """Frame word ids with [CLS]/[END], truncating to ``max_words`` and padding to ``length``."""
    if max_words is None:
        max_words = config.max_seq - 2
    framed = []
    for b, words in enumerate(captions):
        words = [int(w) for w in words][:max_words]
        for w in words:
            if not NUM_SPECIAL <= w < config.vocab_size:
                raise InputError(f"caption {b}: token id {w} outside [{NUM_SPECIAL}, {config.vocab_size})")
        framed.append([CLS_ID, *words, END_ID])
    longest = max(len(f) for f in framed)
    L = longest if length is None else length
    if L < longest or L > config.max_seq:
        raise InputError(f"text length {L} incompatible with longest caption {longest} / max_seq {config.max_seq}")
    ids = np.full((len(framed), L), PAD_ID, dtype=np.int64)
    valid = np.zeros((len(framed), L), dtype=bool)
    for b, f in enumerate(framed):
        ids[b, : len(f)] = f
        valid[b, : len(f)] = True
    return TextInput(ids, valid)


class SelfAttention(Module):
    def __init__(self, hidden: int, heads: int, rng):
        super().__init__()
        self.heads = heads
        self.wq = Linear(hidden, hidden, rng)
        self.wk = Linear(hidden, hidden, rng)
        self.wv = Linear(hidden, hidden, rng)
        self.wo = Linear(hidden, hidden, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, S, h = x.shape
        return T.transpose(T.reshape(x, (B, S, self.heads, h // self.heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        B, S, h = x.shape
        q, k, v = self._split(self.wq(x)), self._split(self.wk(x)), self._split(self.wv(x))
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(h // self.heads))
        att = T.softmax_rows(scores, mask[:, None, None, :])
        ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (B, S, h))
        return self.wo(ctx)


class Block(Module):
    """Attention, residual, norm, then ReLU feed-forward, residual, norm."""

    def __init__(self, config: EncoderConfig, rng):
        super().__init__()
        self.attn = SelfAttention(config.hidden, config.num_heads, rng)
        self.ln1 = LayerNorm(config.hidden)
        self.ff1 = Linear(config.hidden, config.intermediate, rng)
        self.ff2 = Linear(config.intermediate, config.hidden, rng)
        self.ln2 = LayerNorm(config.hidden)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = self.ln1(T.add(x, self.attn(x, mask)))
        return self.ln2(T.add(x, self.ff2(T.relu(self.ff1(x)))))


class _Encoder(Module):
    def __init__(self, config: EncoderConfig, rng):
        super().__init__()
        self.config = config
        blocks = [Block(config, rng) for _ in range(config.num_layers)]
        for i, block in enumerate(blocks):
            setattr(self, f"layer{i}", block)
        object.__setattr__(self, "blocks", blocks)
        # instances encoded so far; retrieval accounting reads this
        object.__setattr__(self, "calls", 0)

    def run_blocks(self, x: Tensor, mask: np.ndarray, has_cls: bool) -> LayerTrace:
        object.__setattr__(self, "calls", self.calls + x.shape[0])
        layers = [x]
        for block in self.blocks:
            x = block(x, mask)
            layers.append(x)
        return LayerTrace(layers, mask, has_cls)


class VideoEncoder(_Encoder):
    def __init__(self, config: EncoderConfig, rng):
        super().__init__(config, rng)
        h = config.hidden
        if config.num_experts < 1 or config.tokens_per_expert < 1:
            raise ConfigError("video encoder needs num_experts and tokens_per_expert >= 1")
        if config.input_dim != h:
            self.proj = Linear(config.input_dim, h, rng)
        self.segment = param(rng, (2, h))
        self.position = param(rng, (config.tokens_per_expert, h))
        self.expert = param(rng, (config.num_experts, h))
        if config.cls_framing:
            self.cls = param(rng, (h,))
            self.end = param(rng, (h,))

    def build_visual_input(self, batch: VisualInput) -> tuple[Tensor, np.ndarray]:
        cfg = self.config
        if batch.features.shape[1:] != (cfg.video_seq_len, cfg.input_dim):
            raise InputError(
                f"visual input shape {batch.features.shape[1:]} != "
                f"{(cfg.video_seq_len, cfg.input_dim)}"
            )
        feats = Tensor(batch.features)
        x = self.proj(feats) if cfg.input_dim != cfg.hidden else feats
        x = T.add(x, self.segment[batch.valid.astype(np.int64)])
        if cfg.cls_framing:
            body = slice(1, -1)
            inner = T.add(self.position[batch.position_ids[body]], self.expert[batch.expert_ids[body]])
            frame = T.concat(
                [T.reshape(self.cls, (1, -1)), inner, T.reshape(self.end, (1, -1))], axis=0
            )
            x = T.add(x, frame)
        else:
            x = T.add(x, T.add(self.position[batch.position_ids], self.expert[batch.expert_ids]))
        return x, batch.valid

    def __call__(self, batch: VisualInput) -> LayerTrace:
        x, mask = self.build_visual_input(batch)
        return self.run_blocks(x, mask, self.config.cls_framing)


class TextEncoder(_Encoder):
    def __init__(self, config: EncoderConfig, rng):
        super().__init__(config, rng)
        if config.vocab_size <= NUM_SPECIAL:
            raise ConfigError(f"vocab_size must exceed {NUM_SPECIAL}")
        h = config.hidden
        self.token = param(rng, (config.vocab_size, h))
        self.segment = param(rng, (2, h))
        self.position = param(rng, (config.max_seq, h))

    def build_text_input(self, batch: TextInput) -> tuple[Tensor, np.ndarray]:
        L = batch.ids.shape[1]
        if L > self.config.max_seq:
            raise InputError(f"text length {L} exceeds max_seq {self.config.max_seq}")
        if batch.ids.max() >= self.config.vocab_size or batch.ids.min() < 0:
            raise InputError(f"token id outside vocabulary of size {self.config.vocab_size}")
        x = T.add(self.token[batch.ids], self.segment[batch.valid.astype(np.int64)])
        x = T.add(x, self.position[np.arange(L)])
        return x, batch.valid

    def __call__(self, batch: TextInput) -> LayerTrace:
        x, mask = self.build_text_input(batch)
        return self.run_blocks(x, mask, True)

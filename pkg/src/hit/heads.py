"""Token aggregation, projection heads and per-level unit embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoders import LayerTrace
from .errors import ConfigError
from .nn import BatchNorm, Linear, Module
from .tensor import Tensor

AGGREGATIONS = ("mean", "max", "cls")


class ProjectionHead(Module):
    """linear -> batch norm -> relu -> linear."""

    def __init__(self, d_in: int, proj_hidden: int, out_dim: int, rng):
        super().__init__()
        self.lin1 = Linear(d_in, proj_hidden, rng)
        self.bn = BatchNorm(proj_hidden)
        self.lin2 = Linear(proj_hidden, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.relu(self.bn(self.lin1(x))))


@dataclass
class LevelEmbedding:
    """Unit vectors for one instance, one per matching level (feature level first)."""

    levels: list[np.ndarray]

    @property
    def feature_level(self) -> np.ndarray:
        return self.levels[0]

    @property
    def semantic_level(self) -> np.ndarray:
        return self.levels[-1]


def aggregate(tokens: Tensor, mask, method: str = "mean", has_cls: bool = False) -> Tensor:
    if method == "mean":
        return T.masked_mean_pool(tokens, mask)
    if method == "max":
        return T.masked_max_pool(tokens, mask)
    if method == "cls":
        if not has_cls:
            raise ConfigError("cls aggregation needs inputs framed with a [CLS] token")
        return tokens[..., 0, :]
    raise ConfigError(f"unknown aggregation {method!r}; expected one of {AGGREGATIONS}")


def extract_level(
    trace: LayerTrace,
    layer: int,
    aggregation: str = "mean",
    head: ProjectionHead | None = None,
) -> Tensor:
    """Pool the tokens of ``layer``, project, and normalize to the unit sphere.

    ``head=None`` skips the projection, which is handy for testing the pooling
    path on its own.
    """
    pooled = aggregate(trace.layer(layer), trace.mask, aggregation, trace.has_cls)
    out = pooled if head is None else head(pooled)
    return T.l2_normalize(out)


def extract_feature_level(trace, aggregation="mean", head=None) -> Tensor:
    return extract_level(trace, 1, aggregation, head)


def extract_semantic_level(trace, aggregation="mean", head=None) -> Tensor:
    return extract_level(trace, -1, aggregation, head)


class ModalityTower(Module):
    """An encoder plus one projection head per matching level."""

    def __init__(self, encoder, taps: Sequence[int], proj_hidden: int, out_dim: int, aggregation: str, rng):
        super().__init__()
        if aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {aggregation!r}")
        self.encoder = encoder
        object.__setattr__(self, "taps", list(taps))
        object.__setattr__(self, "aggregation", aggregation)
        for i, layer in enumerate(self.taps):
            depth = encoder.config.num_layers
            if not (1 <= layer <= depth or -depth <= layer <= -1):
                raise ConfigError(f"level tap {layer} outside encoder depth {depth}")
            setattr(self, f"head{i}", ProjectionHead(encoder.config.hidden, proj_hidden, out_dim, rng))

    @property
    def heads(self) -> list[ProjectionHead]:
        return [getattr(self, f"head{i}") for i in range(len(self.taps))]

    def __call__(self, batch) -> list[Tensor]:
        trace = self.encoder(batch)
        return [
            extract_level(trace, layer, self.aggregation, head)
            for layer, head in zip(self.taps, self.heads)
        ]

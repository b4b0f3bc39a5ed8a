"""Memory banks of key embeddings and the momentum mirror between query and key encoders."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor

UNIT_TOL = 1e-6


class MemoryBank:
    """Fixed-capacity FIFO of unit vectors.

    ``cursor`` points at the oldest row, which is also where the next batch is
    written.
    """

    def __init__(self, capacity: int, dim: int, rng: np.random.Generator | None = None):
        if capacity < 0:
            raise ConfigError(f"bank capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        if capacity and rng is not None:
            rows = rng.normal(size=(capacity, dim))
            self.storage = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        else:
            self.storage = np.zeros((capacity, dim))
        self.cursor = 0

    def __len__(self):
        return self.capacity

    def check_batch_size(self, batch_size: int) -> None:
        if self.capacity and self.capacity % batch_size:
            raise ConfigError(f"batch size {batch_size} does not divide bank capacity {self.capacity}")

    def enqueue(self, keys) -> None:
        keys = np.asarray(keys.data if isinstance(keys, Tensor) else keys, dtype=np.float64)
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ContractError(f"expected keys of shape [B, {self.dim}], got {keys.shape}")
        if self.capacity == 0:
            return
        self.check_batch_size(len(keys))
        err = np.max(np.abs(np.linalg.norm(keys, axis=1) - 1.0))
        if err > UNIT_TOL:
            raise ContractError(f"bank keys must be unit norm (max deviation {err:.3g})")
        slots = (self.cursor + np.arange(len(keys))) % self.capacity
        self.storage[slots] = keys
        self.cursor = int(slots[-1] + 1) % self.capacity

    def snapshot(self) -> np.ndarray:
        """Copy of the contents, oldest row first. Never carries gradient."""
        return np.roll(self.storage, -self.cursor, axis=0)

    negatives = snapshot


class MomentumMirror:
    """Pairs each query parameter with the identically named key parameter."""

    def __init__(self, query: Mapping[str, Tensor], key: Mapping[str, Tensor], momentum: float = 0.999):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        missing = set(query) ^ set(key)
        if missing:
            raise ConfigError(f"unpaired parameters: {sorted(missing)}")
        self.momentum = momentum
        self.pairs: list[tuple[str, Tensor, Tensor]] = []
        for name in query:
            q, k = query[name], key[name]
            if q.shape != k.shape:
                raise ConfigError(f"parameter {name!r}: query {q.shape} vs key {k.shape}")
            self.pairs.append((name, q, k))

    def init_key_from_query(self) -> None:
        for _, q, k in self.pairs:
            k.data = q.data.copy()
            k.requires_grad = False
            k.grad = None

    def momentum_update(self) -> None:
        """key <- m * key + (1 - m) * query, written as query + m * (key - query)."""
        m = self.momentum
        for _, q, k in self.pairs:
            k.data = q.data + m * (k.data - q.data)

"""Dual-stream retrieval: encode each instance once, fuse per-level cosines, rank, report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .heads import LevelEmbedding
from .tensor import no_grad

RECALL_KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    medr: float

    @property
    def recall_sum(self) -> float:
        return self.r1 + self.r5 + self.r10


@dataclass(frozen=True)
class EvalResult:
    v2t: RetrievalReport
    t2v: RetrievalReport

    @property
    def rsum(self) -> float:
        return self.v2t.recall_sum + self.t2v.recall_sum

    def lines(self) -> list[str]:
        return [
            f"dir={r.direction} r1={r.r1:.17g} r5={r.r5:.17g} r10={r.r10:.17g} "
            f"medr={r.medr:.17g} rsum={self.rsum:.17g}"
            for r in (self.v2t, self.t2v)
        ]

    def to_dict(self) -> dict:
        out = {"rsum": self.rsum}
        for r in (self.v2t, self.t2v):
            out[r.direction] = {"r1": r.r1, "r5": r.r5, "r10": r.r10, "medr": r.medr}
        return out


def fuse_similarity(a: LevelEmbedding, b: LevelEmbedding, weights: Sequence[float] | None = None) -> float:
    """Sum over levels of the (optionally weighted) cosine between matching level vectors."""
    if len(a.levels) != len(b.levels):
        raise ConfigError(f"level count mismatch: {len(a.levels)} vs {len(b.levels)}")
    weights = [1.0] * len(a.levels) if weights is None else list(weights)
    if len(weights) != len(a.levels):
        raise ConfigError(f"{len(weights)} fusion weights for {len(a.levels)} levels")
    return float(sum(w * np.dot(x, y) for w, x, y in zip(weights, a.levels, b.levels)))


def fused_matrix(
    videos: Sequence[np.ndarray], texts: Sequence[np.ndarray], weights: Sequence[float] | None = None
) -> np.ndarray:
    """[M, N] fused scores from per-level embedding matrices ([M, d] and [N, d] per level)."""
    if len(videos) != len(texts):
        raise ConfigError(f"level count mismatch: {len(videos)} vs {len(texts)}")
    weights = [1.0] * len(videos) if weights is None else list(weights)
    if len(weights) != len(videos):
        raise ConfigError(f"{len(weights)} fusion weights for {len(videos)} levels")
    return sum(w * (v @ t.T) for w, v, t in zip(weights, videos, texts))


def rank(scores: np.ndarray) -> np.ndarray:
    """1-based rank of the index-aligned true item in each row of ``scores``.

    Items scoring strictly higher rank ahead; ties go to the lower gallery index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise ContractError(f"need a non-empty [queries, gallery] matrix, got {scores.shape}")
    n = scores.shape[0]
    if scores.shape[1] < n:
        raise ContractError("gallery smaller than query set; truth is index-aligned")
    truth = scores[np.arange(n), np.arange(n)][:, None]
    higher = (scores > truth).sum(axis=1)
    cols = np.arange(scores.shape[1])[None, :]
    tied_before = ((scores == truth) & (cols < np.arange(n)[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def metrics(ranks, direction: str = "v2t") -> RetrievalReport:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ContractError("metrics need at least one rank")
    recalls = [100.0 * np.count_nonzero(ranks <= k) / ranks.size for k in RECALL_KS]
    return RetrievalReport(direction, *recalls, float(np.median(ranks)))


def evaluate_scores(scores: np.ndarray) -> EvalResult:
    """Video-to-text ranks along rows, text-to-video ranks along columns."""
    return EvalResult(metrics(rank(scores), "v2t"), metrics(rank(scores.T), "t2v"))


def build_index(tower, batch, chunk: int = 64) -> list[np.ndarray]:
    """Encode every instance in ``batch`` exactly once with ``tower`` (eval mode, no tape)."""
    was_training = tower.training
    tower.eval()
    parts = []
    try:
        with no_grad():
            for start in range(0, len(batch), chunk):
                idx = np.arange(start, min(start + chunk, len(batch)))
                parts.append([lv.data for lv in tower(batch.take(idx))])
    finally:
        tower.train(was_training)
    return [np.concatenate([p[i] for p in parts]) for i in range(len(parts[0]))]


def evaluate(video_tower, text_tower, videos, texts, weights=None, chunk: int = 64) -> EvalResult:
    """M + N encoder passes, then an [M, N] fused score matrix."""
    v = build_index(video_tower, videos, chunk)
    t = build_index(text_tower, texts, chunk)
    return evaluate_scores(fused_matrix(v, t, weights))

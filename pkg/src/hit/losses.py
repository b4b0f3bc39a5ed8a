"""Contrastive objectives: bank InfoNCE, in-batch InfoNCE and max-violation triplet ranking."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

DEFAULT_TEMPERATURE = 0.07
DEFAULT_MARGIN = 0.2


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def similarity_rows(queries: Tensor, positive_keys, bank) -> Tensor:
    """Cosines of each query against its positive key (column 0) and every bank row.

    Inputs are unit vectors, so a dot product is the cosine. Keys and bank are
    treated as constants: no gradient flows into them.
    """
    keys = _array(positive_keys)
    bank = _array(bank)
    d = queries.shape[-1]
    if keys.shape != queries.shape or (bank.size and bank.shape[-1] != d):
        raise ContractError(
            f"dimension mismatch: queries {queries.shape}, keys {keys.shape}, bank {bank.shape}"
        )
    pos = T.sum(T.mul(queries, keys), axis=-1, keepdims=True)
    if bank.shape[0] == 0:
        return pos
    neg = T.matmul(queries, Tensor(bank.reshape(-1, d).T))
    return T.concat([pos, neg], axis=-1)


def infonce(similarities, temperature: float = DEFAULT_TEMPERATURE) -> Tensor:
    """Per-row ``-log softmax(s / temperature)[0]``; the positive sits in column 0."""
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    sims = similarities if isinstance(similarities, Tensor) else Tensor(similarities)
    logp = T.log_softmax_rows(T.scale(sims, 1.0 / temperature))
    return T.scale(logp[..., 0], -1.0)


def infonce_in_batch(queries: Tensor, keys, temperature: float = DEFAULT_TEMPERATURE) -> Tensor:
    """Per-row InfoNCE where row i's positive is key i and the other batch keys are negatives."""
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    keys = _array(keys)
    if keys.shape != queries.shape:
        raise ContractError(f"dimension mismatch: queries {queries.shape}, keys {keys.shape}")
    logits = T.scale(T.matmul(queries, Tensor(keys.T)), 1.0 / temperature)
    logp = T.log_softmax_rows(logits)
    n = queries.shape[0]
    return T.scale(logp[np.arange(n), np.arange(n)], -1.0)


def level_loss(vt_losses: Tensor, tv_losses: Tensor) -> Tensor:
    """Batch mean of the video-to-text plus text-to-video per-row losses."""
    if vt_losses.shape[0] == 0 or tv_losses.shape[0] == 0:
        raise ContractError("level_loss needs a non-empty batch")
    if vt_losses.shape != tv_losses.shape:
        raise ContractError(f"direction batch mismatch: {vt_losses.shape} vs {tv_losses.shape}")
    return T.add(T.mean(vt_losses), T.mean(tv_losses))


def bank_level_loss(video_q, text_q, video_k, text_k, video_bank, text_bank, temperature) -> Tensor:
    """Video queries against text keys and the text bank, and the reverse."""
    vt = infonce(similarity_rows(video_q, text_k, text_bank), temperature)
    tv = infonce(similarity_rows(text_q, video_k, video_bank), temperature)
    return level_loss(vt, tv)


def total_loss(level_losses: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Weighted sum of per-level losses (feature level weighted by alpha, semantic by beta)."""
    if len(level_losses) != len(weights):
        raise ContractError(f"{len(level_losses)} level losses but {len(weights)} weights")
    out = None
    for loss, w in zip(level_losses, weights):
        term = T.scale(loss if isinstance(loss, Tensor) else Tensor(loss), w)
        out = term if out is None else T.add(out, term)
    return out


def triplet_ranking_loss(similarity: Tensor, margin: float = DEFAULT_MARGIN) -> Tensor:
    """Hardest-negative hinge in both directions, summed, averaged over the batch.

    ``similarity[i, j]`` scores video i against text j; the diagonal holds the
    matching pairs.
    """
    n = similarity.shape[0]
    if similarity.ndim != 2 or similarity.shape[1] != n:
        raise ContractError(f"triplet loss needs a square matrix, got {similarity.shape}")
    if n < 2:
        raise ContractError("triplet loss needs a batch of at least 2")
    diag = T.reshape(similarity[np.arange(n), np.arange(n)], (n, 1))
    off = ~np.eye(n, dtype=bool)
    total = None
    for sims in (similarity, T.transpose(similarity)):
        hinge = T.add(T.sub(sims, diag), margin)
        worst = T.masked_max_pool(T.reshape(hinge, (n, n, 1)), off)
        term = T.sum(T.relu(worst))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / n)

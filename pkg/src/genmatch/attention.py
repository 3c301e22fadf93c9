"""Additive attention over batch-major flattened memories.

Scores are v . tanh(W_m m_j + W_q q + b), softmax-normalized over unmasked
positions; the context is the weight-averaged memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Parameter, Tensor


@dataclass
class AttentionParams:
    w_memory: Parameter   # (M, A)
    w_query: Parameter    # (S, A)
    bias: Parameter       # (A,)
    v: Parameter          # (A, 1)

    def all(self) -> list[Parameter]:
        return [self.w_memory, self.w_query, self.bias, self.v]


# Score layers start 3x wider than plain glorot: with unit-scale inputs the
# tanh units then sit in their curved region, where the additive query can
# actually shift the per-position ranking (near zero the query is only a
# constant offset and the scorer stays query-blind).
_SCORE_INIT_GAIN = 3.0


def init_attention(store: ParamStore, prefix: str, memory_dim: int, query_dim: int,
                   proj_dim: int, rng: np.random.Generator) -> AttentionParams:
    def scaled(fan_in, fan_out):
        return _SCORE_INIT_GAIN * ad.glorot(rng, fan_in, fan_out)

    return AttentionParams(
        w_memory=store.create(f"{prefix}.w_memory", scaled(memory_dim, proj_dim)),
        w_query=store.create(f"{prefix}.w_query", scaled(query_dim, proj_dim)),
        bias=store.create(f"{prefix}.bias", np.zeros(proj_dim)),
        v=store.create(f"{prefix}.v", scaled(proj_dim, 1)),
    )


def _scores(query: Tensor, memory_flat: Tensor, length: int,
            params: AttentionParams) -> Tensor:
    """Unnormalized scores, shape (B, length)."""
    batch = query.data.shape[0]
    proj = ad.add(ad.matmul(memory_flat, params.w_memory),
                  ad.repeat_rows(ad.matmul(query, params.w_query), length))
    scores = ad.matmul(ad.tanh(ad.add(proj, params.bias)), params.v)
    return ad.reshape(scores, (batch, length))


def additive_attention(query: Tensor, memory_flat: Tensor, mask: np.ndarray,
                       params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Attend a (B, S) query over a (B*T, M) memory.

    Returns (context (B, M), weights (B, T)); weights carry zero mass on
    masked positions and sum to 1 over each row.
    """
    if memory_flat.data.shape[0] == 0:
        raise ValueError("attention over an empty memory")
    length = mask.shape[1]
    weights = ad.masked_softmax(_scores(query, memory_flat, length, params), mask)
    batch = query.data.shape[0]
    context = ad.sum_groups(
        ad.mul(memory_flat, ad.reshape(weights, (batch * length, 1))), length)
    return context, weights


def additive_attention_multi(query: Tensor, memories, params: AttentionParams) -> Tensor:
    """Attend over several memories jointly (one softmax across all of them).

    ``memories`` is a list of (memory_flat, mask) pairs sharing the memory
    dimension. Returns the combined context vector.
    """
    if not memories:
        raise ValueError("attention needs at least one memory")
    batch = query.data.shape[0]
    lengths = [mask.shape[1] for _, mask in memories]
    scores = [_scores(query, flat, length, params)
              for (flat, _), length in zip(memories, lengths)]
    joint = ad.masked_softmax(ad.concat(scores, axis=1),
                              np.concatenate([mask for _, mask in memories], axis=1))
    context = None
    offset = 0
    for (flat, _), length in zip(memories, lengths):
        piece = ad.slice_cols(joint, offset, offset + length)
        summed = ad.sum_groups(ad.mul(flat, ad.reshape(piece, (batch * length, 1))), length)
        context = summed if context is None else ad.add(context, summed)
        offset += length
    return context

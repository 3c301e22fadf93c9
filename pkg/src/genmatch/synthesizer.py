"""Answer synthesis: a GRU decoder with additive attention over the
feature-augmented passage and question encodings.

Each step reads the previous word embedding and the previous context
vector, produces a new hidden state, attends over the combined memory,
and projects [hidden ; context] to vocabulary logits. Decoding is greedy
and stops at the end token or a length cap; training is teacher-forced
with mean per-token cross-entropy against the correct option's tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, additive_attention_multi, init_attention
from .autodiff import ParamStore, Parameter, Tensor
from .corpus import BOS, EOS, PAD, Vocabulary
from .encoders import ContextualEncoding

DEFAULT_MAX_DECODE = 30


@dataclass
class DecoderParams:
    gru: ad.GRUCellParams        # input = [word emb ; context]
    attention: AttentionParams
    init_w: Parameter            # (4H, Hd) from [pooled question ; pooled passage]
    init_b: Parameter
    out_w: Parameter             # (Hd + 2H, |V|)
    out_b: Parameter

    @property
    def hidden(self) -> int:
        return self.gru.hidden

    def all(self) -> list[Parameter]:
        return (self.gru.all() + self.attention.all()
                + [self.init_w, self.init_b, self.out_w, self.out_b])


def init_decoder(store: ParamStore, embed_dim: int, hidden: int, vocab_size: int,
                 rng: np.random.Generator) -> DecoderParams:
    memory_dim = 2 * hidden
    return DecoderParams(
        gru=ad.init_gru_cell(store, "decoder.gru", embed_dim + memory_dim, hidden, rng),
        attention=init_attention(store, "decoder.attention", memory_dim, hidden,
                                 hidden, rng),
        init_w=store.create("decoder.init_w", ad.glorot(rng, 2 * memory_dim, hidden)),
        init_b=store.create("decoder.init_b", np.zeros(hidden)),
        out_w=store.create("decoder.out_w", ad.glorot(rng, hidden + memory_dim, vocab_size)),
        out_b=store.create("decoder.out_b", np.zeros(vocab_size)),
    )


@dataclass
class DecoderState:
    hidden: Tensor        # (B, Hd)
    word_embedding: Tensor  # (B, De), embedding of the previously emitted token
    context: Tensor       # (B, 2H), previous attention context


@dataclass
class DecoderMemory:
    """Concatenated attention memory: passage (feature-augmented) then question."""

    parts: list[tuple[Tensor, np.ndarray]]

    @classmethod
    def from_encodings(cls, passage: ContextualEncoding,
                       question: ContextualEncoding) -> "DecoderMemory":
        return cls(parts=[(passage.flat, passage.mask), (question.flat, question.mask)])


def attention_context(state_hidden: Tensor, memory: DecoderMemory,
                      params: AttentionParams) -> Tensor:
    """Context vector for the current decoder state."""
    return additive_attention_multi(state_hidden, memory.parts, params)


def initial_state(passage: ContextualEncoding, question: ContextualEncoding,
                  word_table: Parameter | Tensor, batch: int,
                  params: DecoderParams) -> DecoderState:
    pooled = ad.concat([question.mean_pooled(), passage.mean_pooled()], axis=1)
    hidden = ad.tanh(ad.add(ad.matmul(pooled, params.init_w), params.init_b))
    bos = ad.gather_rows(word_table, np.full(batch, BOS, dtype=np.int64))
    context = Tensor(np.zeros((batch, 2 * passage.hidden)))
    return DecoderState(hidden=hidden, word_embedding=bos, context=context)


def decode_step(state: DecoderState, memory: DecoderMemory,
                params: DecoderParams) -> tuple[Tensor, Tensor, Tensor]:
    """One step: returns (vocab logits, new hidden, new context). The caller
    picks the next input token and builds the next state."""
    x = ad.concat([state.word_embedding, state.context], axis=1)
    hidden = ad.gru_cell(x, state.hidden, params.gru)
    context = attention_context(hidden, memory, params.attention)
    logits = ad.add(ad.matmul(ad.concat([hidden, context], axis=1), params.out_w),
                    params.out_b)
    return logits, hidden, context


@dataclass(frozen=True)
class GeneratedAnswer:
    """Greedy decode result. ``token_ids`` is the raw emitted sequence
    (end token included when emitted); surface tokens strip it."""

    token_ids: tuple[int, ...]
    surface_tokens: tuple[str, ...]
    text: str
    token_logprobs: tuple[float, ...]


def generate_answer(passage: ContextualEncoding, question: ContextualEncoding,
                    word_table, params: DecoderParams, vocab: Vocabulary,
                    max_length: int = DEFAULT_MAX_DECODE) -> list[GeneratedAnswer]:
    """Greedy decoding for a batch; pure function of (parameters, inputs)."""
    batch = passage.batch
    memory = DecoderMemory.from_encodings(passage, question)
    emitted: list[list[int]] = [[] for _ in range(batch)]
    logprobs: list[list[float]] = [[] for _ in range(batch)]
    finished = np.zeros(batch, dtype=bool)
    with ad.no_grad():
        state = initial_state(passage, question, word_table, batch, params)
        for _ in range(max_length):
            logits, hidden, context = decode_step(state, memory, params)
            logp = ad.log_softmax(logits).data
            choice = logits.data.copy()
            choice[:, PAD] = -np.inf  # padding and start tokens are never emitted
            choice[:, BOS] = -np.inf
            picks = np.argmax(choice, axis=1)
            for b in range(batch):
                if finished[b]:
                    continue
                emitted[b].append(int(picks[b]))
                logprobs[b].append(float(logp[b, picks[b]]))
                if picks[b] == EOS:
                    finished[b] = True
            if finished.all():
                break
            state = DecoderState(hidden=hidden,
                                 word_embedding=ad.gather_rows(word_table, picks),
                                 context=context)
    answers = []
    for ids, lps in zip(emitted, logprobs):
        surface = tuple(vocab.token_for(i) for i in ids if i != EOS)
        answers.append(GeneratedAnswer(token_ids=tuple(ids), surface_tokens=surface,
                                       text=" ".join(surface),
                                       token_logprobs=tuple(lps)))
    return answers


def teacher_targets(option_ids: list[list[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build teacher-forcing arrays from per-instance gold token ids.

    Returns (inputs, targets, mask) of shape (B, L): inputs start with the
    begin token, targets end with the end token.
    """
    if any(len(ids) == 0 for ids in option_ids):
        raise ValueError("empty synthesis target")
    width = max(len(ids) for ids in option_ids) + 1
    batch = len(option_ids)
    inputs = np.full((batch, width), PAD, dtype=np.int64)
    targets = np.full((batch, width), PAD, dtype=np.int64)
    mask = np.zeros((batch, width), dtype=ad.default_dtype())
    for b, ids in enumerate(option_ids):
        seq = list(ids) + [EOS]
        inputs[b, 0] = BOS
        inputs[b, 1:len(seq)] = seq[:-1]
        targets[b, :len(seq)] = seq
        mask[b, :len(seq)] = 1.0
    return inputs, targets, mask


def synthesis_loss(passage: ContextualEncoding, question: ContextualEncoding,
                   word_table, params: DecoderParams,
                   target_ids: list[list[int]]) -> Tensor:
    """Teacher-forced mean per-token cross-entropy of the gold sequence,
    averaged per instance and then over the batch."""
    inputs, targets, mask = teacher_targets(target_ids)
    batch, width = targets.shape
    memory = DecoderMemory.from_encodings(passage, question)
    state = initial_state(passage, question, word_table, batch, params)
    position_nll = []
    for t in range(width):
        logits, hidden, context = decode_step(state, memory, params)
        logp = ad.log_softmax(logits)
        position_nll.append(ad.neg(ad.take_per_row(logp, targets[:, t])))
        if t + 1 < width:
            state = DecoderState(hidden=hidden,
                                 word_embedding=ad.gather_rows(word_table, inputs[:, t + 1]),
                                 context=context)
    nll = ad.concat(position_nll, axis=1)                      # (B, L)
    per_instance = ad.sum_last(ad.mul_const(nll, mask))        # (B, 1)
    lengths = mask.sum(axis=1, keepdims=True)
    return ad.mean(ad.mul_const(per_instance, 1.0 / lengths))

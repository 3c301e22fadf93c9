"""Sequence encoders: character-aware word embeddings and bidirectional GRU
contextual encodings.

Sequences travel through the graph as flat 2-D tensors. An embedded
sequence is laid out position-major, (T*B, D) with row ``t*B + b``, so a
recurrent loop can slice one (B, D) step at a time; a contextual encoding
is laid out batch-major, (B*T, 2H) with row ``b*T + t``, which is what the
attention ops consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Parameter, Tensor
from .corpus import CharVocabulary


@dataclass
class BiGRUParams:
    forward: ad.GRUCellParams
    backward: ad.GRUCellParams

    @property
    def hidden(self) -> int:
        return self.forward.hidden

    def all(self) -> list[Parameter]:
        return self.forward.all() + self.backward.all()


def init_bigru(store: ParamStore, prefix: str, input_dim: int, hidden: int,
               rng: np.random.Generator) -> BiGRUParams:
    return BiGRUParams(
        forward=ad.init_gru_cell(store, f"{prefix}.fwd", input_dim, hidden, rng),
        backward=ad.init_gru_cell(store, f"{prefix}.bwd", input_dim, hidden, rng),
    )


@dataclass
class EmbeddedSequence:
    """Per-position input vectors with masked positions zeroed."""

    flat: Tensor              # (T*B, D), position-major
    mask: np.ndarray          # (B, T)
    batch: int
    length: int
    _steps: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.flat.data.shape[1]

    def step(self, t: int) -> Tensor:
        if not self._steps:
            self._steps = [ad.slice_rows(self.flat, t * self.batch, (t + 1) * self.batch)
                           for t in range(self.length)]
        return self._steps[t]

    def with_extra_channels(self, channels: np.ndarray) -> "EmbeddedSequence":
        """Append constant per-position channels (position-major (T*B, C))."""
        extra = Tensor(channels)
        return EmbeddedSequence(flat=ad.concat([self.flat, extra], axis=1),
                                mask=self.mask, batch=self.batch, length=self.length)


@dataclass
class ContextualEncoding:
    """Per-position forward/backward state concatenations plus final states."""

    flat: Tensor              # (B*T, 2H), batch-major
    mask: np.ndarray          # (B, T)
    batch: int
    length: int
    hidden: int
    final_forward: Tensor     # (B, H), state at the last unmasked position
    final_backward: Tensor    # (B, H), state at the first unmasked position

    def final_concat(self) -> Tensor:
        return ad.concat([self.final_forward, self.final_backward], axis=1)

    def mean_pooled(self) -> Tensor:
        return ad.masked_mean_positions(self.flat, self.mask, self.length)

    def positions(self) -> np.ndarray:
        """(B, T, 2H) view of the values, for inspection in tests."""
        return self.flat.data.reshape(self.batch, self.length, 2 * self.hidden)


def embed_ids(table: Parameter | Tensor, ids: np.ndarray, mask: np.ndarray,
              dropout_rate: float = 0.0,
              rng: np.random.Generator | None = None) -> EmbeddedSequence:
    """Gather embedding rows for padded (B, T) ids into a position-major
    flat sequence, zeroing masked positions."""
    batch, length = ids.shape
    flat_ids = ids.T.reshape(-1)
    flat = ad.gather_rows(table, flat_ids)
    flat = ad.mul_const(flat, mask.T.reshape(-1, 1))
    flat = ad.dropout(flat, dropout_rate, rng)
    return EmbeddedSequence(flat=flat, mask=mask, batch=batch, length=length)


def bigru_encode(seq: EmbeddedSequence, params: BiGRUParams,
                 dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None) -> ContextualEncoding:
    """Run both directions over the sequence; masked positions neither
    advance the recurrent state nor emit output vectors."""
    if seq.dim != params.forward.input_dim:
        raise ValueError(f"input dim {seq.dim} != encoder dim {params.forward.input_dim}")
    batch, length, hidden = seq.batch, seq.length, params.hidden
    zero = Tensor(np.zeros((batch, hidden), dtype=seq.flat.data.dtype))

    fwd_states: list[Tensor] = []
    h = zero
    for t in range(length):
        candidate = ad.gru_cell(seq.step(t), h, params.forward)
        h = ad.binary_select(seq.mask[:, t:t + 1], candidate, h)
        fwd_states.append(h)
    final_forward = h

    bwd_states: list[Tensor] = [None] * length
    h = zero
    for t in reversed(range(length)):
        candidate = ad.gru_cell(seq.step(t), h, params.backward)
        h = ad.binary_select(seq.mask[:, t:t + 1], candidate, h)
        bwd_states[t] = h
    final_backward = h

    outputs = [ad.mul_const(ad.concat([fwd_states[t], bwd_states[t]], axis=1),
                            seq.mask[:, t:t + 1])
               for t in range(length)]
    flat = ad.regroup_rows(ad.concat(outputs, axis=0), length, batch)
    flat = ad.dropout(flat, dropout_rate, rng)
    return ContextualEncoding(flat=flat, mask=seq.mask, batch=batch, length=length,
                              hidden=hidden, final_forward=final_forward,
                              final_backward=final_backward)


# ---------------------------------------------------------------------------
# character-level features


@dataclass
class CharEncoderParams:
    table: Parameter          # (char vocab, char dim)
    gru: BiGRUParams

    @property
    def feature_dim(self) -> int:
        return 2 * self.gru.hidden


def init_char_encoder(store: ParamStore, char_vocab: CharVocabulary, char_dim: int,
                      char_hidden: int, rng: np.random.Generator) -> CharEncoderParams:
    table = store.create("char.table",
                         rng.uniform(-0.1, 0.1, size=(len(char_vocab), char_dim)))
    gru = init_bigru(store, "char.gru", char_dim, char_hidden, rng)
    return CharEncoderParams(table=table, gru=gru)


def char_embed_tokens(tokens: list[str], params: CharEncoderParams,
                      char_vocab: CharVocabulary) -> Tensor:
    """Encode each token's character sequence, returning the concatenation
    of final forward/backward states, one row per token."""
    if any(not tok for tok in tokens):
        raise ValueError("cannot char-embed an empty token")
    width = max(len(tok) for tok in tokens)
    ids = np.zeros((len(tokens), width), dtype=np.int64)
    mask = np.zeros((len(tokens), width), dtype=ad.default_dtype())
    for i, tok in enumerate(tokens):
        ids[i, :len(tok)] = char_vocab.ids(tok)
        mask[i, :len(tok)] = 1.0
    seq = embed_ids(params.table, ids, mask)
    enc = bigru_encode(seq, params.gru)
    return enc.final_concat()


def char_embed(token: str, params: CharEncoderParams,
               char_vocab: CharVocabulary) -> Tensor:
    """Character feature vector for a single token."""
    return char_embed_tokens([token], params, char_vocab)


def embed_with_chars(word_table: Parameter, char_params: CharEncoderParams | None,
                     char_vocab: CharVocabulary | None, ids: np.ndarray,
                     surfaces: list, mask: np.ndarray, dropout_rate: float = 0.0,
                     rng: np.random.Generator | None = None) -> EmbeddedSequence:
    """Word rows concatenated with per-token character features.

    Character vectors are computed once per distinct surface form in the
    batch (so out-of-vocabulary words still get their own characters) and
    gathered back per position.
    """
    batch, length = ids.shape
    word_flat = ad.gather_rows(word_table, ids.T.reshape(-1))
    pieces = [word_flat]
    if char_params is not None:
        distinct: dict[str, int] = {}
        pointer = np.zeros((length, batch), dtype=np.int64)
        for b in range(batch):
            row = surfaces[b]
            for t in range(length):
                if mask[b, t] <= 0:
                    continue
                tok = row[t]
                slot = distinct.setdefault(tok, len(distinct))
                pointer[t, b] = slot
        char_matrix = char_embed_tokens(list(distinct), char_params, char_vocab)
        pieces.append(ad.gather_rows(char_matrix, pointer.reshape(-1)))
    flat = pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=1)
    flat = ad.mul_const(flat, mask.T.reshape(-1, 1))
    flat = ad.dropout(flat, dropout_rate, rng)
    return EmbeddedSequence(flat=flat, mask=mask, batch=batch, length=length)


# ---------------------------------------------------------------------------
# evidence indicator channels


@dataclass(frozen=True)
class EvidenceFeatures:
    """Start/end indicator channels over a padded passage block."""

    start_indicators: np.ndarray  # (B, P) of {0,1}
    end_indicators: np.ndarray

    @classmethod
    def from_spans(cls, spans, lengths, width: int) -> "EvidenceFeatures":
        dtype = ad.default_dtype()
        start = np.zeros((len(spans), width), dtype=dtype)
        end = np.zeros((len(spans), width), dtype=dtype)
        for b, (span, n) in enumerate(zip(spans, lengths)):
            s, e = span
            if not 0 <= s <= e < n:
                raise ValueError(f"span ({s}, {e}) invalid for length {n}")
            start[b, s] = 1.0
            end[b, e] = 1.0
        return cls(start_indicators=start, end_indicators=end)

    def channels_position_major(self) -> np.ndarray:
        """(T*B, 2) block ready to append to an embedded passage."""
        return np.stack([self.start_indicators.T.reshape(-1),
                         self.end_indicators.T.reshape(-1)], axis=1)


def encode_with_features(seq: EmbeddedSequence, features: EvidenceFeatures,
                         params: BiGRUParams, dropout_rate: float = 0.0,
                         rng: np.random.Generator | None = None) -> ContextualEncoding:
    """Append the two indicator channels to each position and re-encode."""
    if features.start_indicators.shape != seq.mask.shape:
        raise ValueError("feature block does not match the sequence layout")
    augmented = seq.with_extra_channels(features.channels_position_major())
    return bigru_encode(augmented, params, dropout_rate, rng)

import numpy as np
import pytest

from genmatch import autodiff as ad
from genmatch.autodiff import ParamStore, Tensor, check_gradients, tensor_sum
from genmatch.corpus import CharVocabulary
from genmatch.encoders import (
    ContextualEncoding,
    EmbeddedSequence,
    EvidenceFeatures,
    bigru_encode,
    char_embed,
    char_embed_tokens,
    embed_ids,
    embed_with_chars,
    encode_with_features,
    init_bigru,
    init_char_encoder,
)


def make_sequence(rng, batch, length, dim, mask=None):
    mask = mask if mask is not None else np.ones((batch, length))
    data = rng.standard_normal((length * batch, dim))
    data *= mask.T.reshape(-1, 1)
    return EmbeddedSequence(flat=Tensor(data), mask=mask.astype(float),
                            batch=batch, length=length)


def encoder(rng, dim, hidden, store=None, prefix="enc"):
    store = store or ParamStore()
    return init_bigru(store, prefix, dim, hidden, rng), store


# ---------------------------------------------------------------------------
# BiGRU encoding


def test_length_one_sequence_concatenates_both_directions():
    rng = np.random.default_rng(0)
    params, _ = encoder(rng, 3, 4)
    seq = make_sequence(rng, 2, 1, 3)
    enc = bigru_encode(seq, params)
    fwd = ad.gru_cell(seq.step(0), Tensor(np.zeros((2, 4))), params.forward)
    bwd = ad.gru_cell(seq.step(0), Tensor(np.zeros((2, 4))), params.backward)
    np.testing.assert_array_equal(enc.positions()[:, 0, :4], fwd.data)
    np.testing.assert_array_equal(enc.positions()[:, 0, 4:], bwd.data)
    np.testing.assert_array_equal(enc.final_forward.data, fwd.data)


def test_reversing_input_swaps_direction_halves():
    rng = np.random.default_rng(1)
    params, _ = encoder(rng, 3, 4)
    data = rng.standard_normal((3, 3))  # one instance, 3 positions
    fwdseq = EmbeddedSequence(flat=Tensor(data), mask=np.ones((1, 3)), batch=1, length=3)
    revseq = EmbeddedSequence(flat=Tensor(data[::-1].copy()), mask=np.ones((1, 3)),
                              batch=1, length=3)
    enc = bigru_encode(fwdseq, params)
    renc = bigru_encode(revseq, params)
    # Swapping the direction parameters on the reversed input reproduces the
    # original encoding with halves exchanged and positions reversed.
    swapped = type(params)(forward=params.backward, backward=params.forward)
    senc = bigru_encode(revseq, swapped)
    orig = enc.positions()[0]
    mirrored = senc.positions()[0][::-1]
    np.testing.assert_allclose(orig[:, :4], mirrored[:, 4:], atol=1e-12)
    np.testing.assert_allclose(orig[:, 4:], mirrored[:, :4], atol=1e-12)
    assert not np.allclose(renc.positions(), enc.positions())


def test_per_position_dimension_is_twice_hidden():
    rng = np.random.default_rng(2)
    params, _ = encoder(rng, 5, 128)
    seq = make_sequence(rng, 1, 2, 5)
    enc = bigru_encode(seq, params)
    assert enc.positions().shape == (1, 2, 256)
    assert enc.final_concat().data.shape == (1, 256)


def test_masked_padding_does_not_change_unmasked_outputs():
    rng = np.random.default_rng(3)
    params, _ = encoder(rng, 3, 4)
    length = 5
    data = rng.standard_normal((length, 3))
    full = EmbeddedSequence(flat=Tensor(data.copy()), mask=np.ones((1, length)),
                            batch=1, length=length)
    padded_data = np.vstack([data, rng.standard_normal((2, 3))])
    mask = np.array([[1.0] * length + [0.0, 0.0]])
    padded_data *= mask.T
    padded = EmbeddedSequence(flat=Tensor(padded_data), mask=mask, batch=1, length=length + 2)
    enc_full = bigru_encode(full, params)
    enc_padded = bigru_encode(padded, params)
    np.testing.assert_array_equal(enc_full.positions()[0],
                                  enc_padded.positions()[0][:length])
    np.testing.assert_array_equal(enc_full.final_forward.data, enc_padded.final_forward.data)
    np.testing.assert_array_equal(enc_full.final_backward.data, enc_padded.final_backward.data)
    # masked positions emit zero vectors
    np.testing.assert_array_equal(enc_padded.positions()[0][length:], 0.0)


def test_encoding_deterministic():
    rng = np.random.default_rng(4)
    params, _ = encoder(rng, 3, 4)
    seq = make_sequence(rng, 2, 3, 3)
    first = bigru_encode(seq, params)
    second = bigru_encode(seq, params)
    np.testing.assert_array_equal(first.positions(), second.positions())


def test_dim_mismatch_rejected():
    rng = np.random.default_rng(5)
    params, _ = encoder(rng, 3, 4)
    seq = make_sequence(rng, 2, 3, 7)
    with pytest.raises(ValueError):
        bigru_encode(seq, params)


def test_encoder_gradients_pass_check():
    rng = np.random.default_rng(6)
    params, store = encoder(rng, 3, 4)
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    seq = make_sequence(rng, 2, 3, 3, mask=mask)
    readout = rng.random((2 * 3, 8))

    def loss_fn():
        enc = bigru_encode(seq, params)
        return tensor_sum(ad.mul_const(enc.flat, readout))

    report = check_gradients(store.all(), loss_fn, tolerance=1e-4)
    assert report.passed, report.summary()


# ---------------------------------------------------------------------------
# char features


def charvocab():
    return CharVocabulary.build([["cat", "dog", "a"]])


def test_char_embed_deterministic_and_shaped():
    rng = np.random.default_rng(7)
    store = ParamStore()
    params = init_char_encoder(store, charvocab(), char_dim=3, char_hidden=25, rng=rng)
    one = char_embed("cat", params, charvocab())
    two = char_embed("cat", params, charvocab())
    np.testing.assert_array_equal(one.data, two.data)
    assert one.data.shape == (1, 50)


def test_char_embed_single_character_token():
    rng = np.random.default_rng(8)
    store = ParamStore()
    params = init_char_encoder(store, charvocab(), char_dim=3, char_hidden=25, rng=rng)
    out = char_embed("a", params, charvocab())
    assert out.data.shape == (1, 2 * 25)


def test_char_embed_zero_weights_zero_output():
    rng = np.random.default_rng(9)
    store = ParamStore()
    params = init_char_encoder(store, charvocab(), char_dim=3, char_hidden=4, rng=rng)
    for p in params.gru.all():
        p.data[...] = 0.0
    out = char_embed("dog", params, charvocab())
    np.testing.assert_array_equal(out.data, np.zeros((1, 8)))


def test_char_embed_rejects_empty_token():
    rng = np.random.default_rng(10)
    store = ParamStore()
    params = init_char_encoder(store, charvocab(), char_dim=3, char_hidden=4, rng=rng)
    with pytest.raises(ValueError):
        char_embed("", params, charvocab())


def test_embed_with_chars_identical_tokens_share_vectors():
    rng = np.random.default_rng(11)
    store = ParamStore()
    cv = charvocab()
    word_table = store.create("emb", rng.standard_normal((6, 4)))
    params = init_char_encoder(store, cv, char_dim=3, char_hidden=2, rng=rng)
    ids = np.array([[4, 5, 4]])
    surfaces = [["cat", "dog", "cat"]]
    mask = np.ones((1, 3))
    seq = embed_with_chars(word_table, params, cv, ids, surfaces, mask)
    assert seq.dim == 4 + 4
    pos = seq.flat.data.reshape(3, 1, 8)
    np.testing.assert_array_equal(pos[0, 0], pos[2, 0])
    assert not np.array_equal(pos[0, 0], pos[1, 0])


# ---------------------------------------------------------------------------
# evidence feature channels


def test_feature_indicators_basic_span():
    f = EvidenceFeatures.from_spans([(1, 3)], [5], width=5)
    np.testing.assert_array_equal(f.start_indicators, [[0, 1, 0, 0, 0]])
    np.testing.assert_array_equal(f.end_indicators, [[0, 0, 0, 1, 0]])


def test_feature_indicators_single_token_span():
    f = EvidenceFeatures.from_spans([(2, 2)], [5], width=5)
    np.testing.assert_array_equal(f.start_indicators, [[0, 0, 1, 0, 0]])
    np.testing.assert_array_equal(f.end_indicators, [[0, 0, 1, 0, 0]])


def test_feature_indicators_reject_invalid():
    with pytest.raises(ValueError):
        EvidenceFeatures.from_spans([(3, 1)], [5], width=5)
    with pytest.raises(ValueError):
        EvidenceFeatures.from_spans([(0, 6)], [5], width=7)


def test_changing_features_changes_forward_positions_at_and_after():
    rng = np.random.default_rng(12)
    store = ParamStore()
    params = init_bigru(store, "syn", 3 + 2, 4, rng)
    seq = make_sequence(rng, 1, 5, 3)
    enc_a = encode_with_features(seq, EvidenceFeatures.from_spans([(1, 2)], [5], 5), params)
    enc_b = encode_with_features(seq, EvidenceFeatures.from_spans([(2, 2)], [5], 5), params)
    a, b = enc_a.positions()[0], enc_b.positions()[0]
    hidden = 4
    np.testing.assert_array_equal(a[0, :hidden], b[0, :hidden])  # before change
    assert not np.allclose(a[1, :hidden], b[1, :hidden])         # at change
    assert not np.allclose(a[3, :hidden], b[3, :hidden])         # after change


def test_feature_length_mismatch_rejected():
    rng = np.random.default_rng(13)
    store = ParamStore()
    params = init_bigru(store, "syn", 5, 4, rng)
    seq = make_sequence(rng, 1, 5, 3)
    with pytest.raises(ValueError):
        encode_with_features(seq, EvidenceFeatures.from_spans([(0, 1)], [4], 4), params)


def test_embed_ids_zeroes_masked_positions():
    rng = np.random.default_rng(14)
    store = ParamStore()
    table = store.create("t", rng.standard_normal((5, 3)))
    ids = np.array([[4, 2, 0]])
    mask = np.array([[1.0, 1.0, 0.0]])
    seq = embed_ids(table, ids, mask)
    np.testing.assert_array_equal(seq.flat.data[2 * 1:], np.zeros((1, 3)))

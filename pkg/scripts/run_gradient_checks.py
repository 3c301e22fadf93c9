#!/usr/bin/env python3
"""Finite-difference verification of every parameterized module on small
randomized shapes; prints one report table per module.

    python3 scripts/run_gradient_checks.py [--tolerance 1e-4]
"""

import argparse
import time

import numpy as np

from genmatch import autodiff as ad
from genmatch.autodiff import ParamStore, Tensor, check_gradients
from genmatch.corpus import CharVocabulary
from genmatch.encoders import (
    ContextualEncoding,
    bigru_encode,
    embed_with_chars,
    init_bigru,
    init_char_encoder,
)
from genmatch.extractor import EvidenceSpan, init_extractor, pool_question, predict_span, span_loss
from genmatch.selector import bilinear_score, init_bilinear, selection_loss
from genmatch.synthesizer import init_decoder, synthesis_loss


def encoding(data, batch, length, hidden):
    return ContextualEncoding(flat=Tensor(data), mask=np.ones((batch, length)),
                              batch=batch, length=length, hidden=hidden,
                              final_forward=Tensor(np.zeros((batch, hidden))),
                              final_backward=Tensor(np.zeros((batch, hidden))))


def encoder_check(rng, tolerance):
    store = ParamStore()
    chars = CharVocabulary.build([["ab", "ba", "cab"]])
    emb = store.create("emb", rng.standard_normal((7, 3)) * 0.4)
    char_params = init_char_encoder(store, chars, 2, 2, rng)
    params = init_bigru(store, "enc", 7, 4, rng)
    ids = np.array([[4, 5, 6, 4], [5, 6, 0, 0]])
    surfaces = [["ab", "ba", "cab", "ab"], ["ba", "cab", "", ""]]
    mask = np.array([[1.0] * 4, [1.0, 1.0, 0.0, 0.0]])
    readout = rng.random((8, 8))

    def loss():
        seq = embed_with_chars(emb, char_params, chars, ids, surfaces, mask)
        return ad.tensor_sum(ad.mul_const(bigru_encode(seq, params).flat, readout))

    return check_gradients(store.all(), loss, tolerance=tolerance)


def extractor_check(rng, tolerance):
    store = ParamStore()
    params = init_extractor(store, 3, rng)
    passage = rng.standard_normal((2 * 6, 6))
    question = rng.standard_normal((2 * 3, 6))

    def loss():
        qv = pool_question(encoding(question, 2, 3, 3), params)
        dists, _ = predict_span(encoding(passage, 2, 6, 3), qv, params, max_span=4)
        return span_loss(dists, [EvidenceSpan(1, 3), EvidenceSpan(0, 0)])

    return check_gradients(store.all(), loss, tolerance=tolerance)


def decoder_check(rng, tolerance):
    store = ParamStore()
    table = store.create("emb", rng.standard_normal((8, 3)) * 0.4)
    params = init_decoder(store, 3, 3, 8, rng)
    passage = rng.standard_normal((1 * 5, 6))
    question = rng.standard_normal((1 * 3, 6))

    def loss():
        return synthesis_loss(encoding(passage, 1, 5, 3), encoding(question, 1, 3, 3),
                              table, params, [[4, 6, 5]])

    return check_gradients(store.all(), loss, tolerance=tolerance)


def selector_check(rng, tolerance):
    store = ParamStore()
    w_att = init_bilinear(store, 2)
    w_att.data[...] = rng.standard_normal((4, 4)) * 0.3
    answers = rng.standard_normal((2, 4))
    options = rng.standard_normal((8, 4))

    def loss():
        return selection_loss(bilinear_score(Tensor(answers), Tensor(options), w_att),
                              np.array([0, 3]))

    return check_gradients(store.all(), loss, tolerance=tolerance)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tolerance", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    checks = {"encoders": encoder_check, "extractor": extractor_check,
              "decoder": decoder_check, "selector": selector_check}
    failures = 0
    started = time.perf_counter()
    for name, runner in checks.items():
        report = runner(rng, args.tolerance)
        print(f"== {name} ==")
        print(report.summary())
        print()
        failures += 0 if report.passed else 1
    print(f"{len(checks) - failures}/{len(checks)} modules passed "
          f"in {time.perf_counter() - started:.1f}s")
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()

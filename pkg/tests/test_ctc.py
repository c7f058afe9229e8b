import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ovlasr.core import Vocabulary
from ovlasr.ctc import (DecoderState, beam_decode, beam_decode_step, ctc_loss, greedy_decode,
                        nonspeaker_normalized_loss, transfer_context)
from ovlasr.lm import NGramLM

from oracles import fd_gradient, labeling_logprobs, rel_error, targets_up_to

V3 = Vocabulary(("<b>", "a", "b"))


def vocab_of(V):
    return Vocabulary(("<b>",) + tuple("abcdefg"[:V - 1]))


def test_uniform_two_frames():
    loss, _ = ctc_loss(np.zeros((2, 2)), [1])
    assert loss == pytest.approx(-math.log(0.75), abs=1e-12)


def test_one_hot_alignment_has_near_zero_loss():
    path = [0, 1, 1, 0, 2, 0, 1]
    x = np.zeros((len(path), 3))
    x[np.arange(len(path)), path] = 30.0
    loss, _ = ctc_loss(x, [1, 2, 1])
    assert loss <= 1e-6


def test_infeasible_target():
    loss, g = ctc_loss(np.zeros((1, 2)), [1, 1])
    assert loss == math.inf and not g.any()
    assert ctc_loss(np.zeros((2, 2)), [1, 1])[0] == math.inf
    assert ctc_loss(np.zeros((3, 2)), [1, 1])[0] < math.inf


@pytest.mark.parametrize("T", range(1, 7))
@pytest.mark.parametrize("V", [2, 3, 4])
def test_loss_matches_enumeration(T, V):
    rng = np.random.default_rng(100 * T + V)
    x = rng.normal(0, 2, (T, V))
    ref = labeling_logprobs(x)
    for tgt in targets_up_to(V, 4):
        loss, _ = ctc_loss(x, list(tgt))
        if tgt in ref:
            assert loss == pytest.approx(-ref[tgt], abs=1e-6)
        else:
            assert loss == math.inf


@pytest.mark.parametrize("seed", range(20))
def test_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    T, V = int(rng.integers(2, 7)), int(rng.integers(2, 5))
    x = rng.normal(0, 1.5, (T, V))
    tgt = [int(k) for k in rng.integers(1, V, size=rng.integers(0, (T + 1) // 2 + 1))]
    loss, g = ctc_loss(x, tgt)
    if loss == math.inf:
        return
    fd = fd_gradient(lambda z: ctc_loss(z, tgt)[0], x.copy())
    assert rel_error(g, fd) < 1e-4


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-5, 5)), st.integers(0, 4), st.floats(-50, 50))
def test_shift_invariance(x, row, c):
    y = x.copy()
    y[row] += c
    tgt = [1, 2]
    assert ctc_loss(x, tgt)[0] == pytest.approx(ctc_loss(y, tgt)[0], abs=1e-9)


def test_nonspeaker_rule():
    x = np.zeros((7, 3))
    x[:, 0] = 1.0
    x[[0, 2, 3, 5, 6], 1] = 3.0          # 5 frames with non-blank argmax
    raw, _ = ctc_loss(x, [])
    loss, _, k = nonspeaker_normalized_loss(x)
    assert k == 5 and loss == pytest.approx(raw / 5)
    blank_only = np.zeros((4, 3))
    blank_only[:, 0] = 2.0
    raw, _ = ctc_loss(blank_only, [])
    loss, _, k = nonspeaker_normalized_loss(blank_only)
    assert k == 0 and loss == raw


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(2, 3), st.integers(0, 10**6))
def test_nonspeaker_matches_enumeration(T, V, seed):
    x = np.random.default_rng(seed).normal(0, 2, (T, V))
    ref = -labeling_logprobs(x)[()]
    k = int(np.sum(x.argmax(axis=1) != 0))
    loss, _, kk = nonspeaker_normalized_loss(x)
    assert kk == k
    assert loss == pytest.approx(ref / max(1, k), abs=1e-9)
    assert loss <= ctc_loss(x, [])[0] + 1e-12


def test_greedy_examples():
    def onehot(path, V=3):
        x = np.zeros((len(path), V))
        x[np.arange(len(path)), path] = 5.0
        return x
    assert greedy_decode(onehot([1, 1, 0, 2, 2])) == [(1, 0), (2, 3)]
    assert greedy_decode(onehot([0, 0, 0])) == []
    assert greedy_decode(onehot([1, 0, 1])) == [(1, 0), (1, 2)]


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 12), st.integers(2, 5), st.integers(0, 10**6), st.booleans())
def test_width_one_equals_greedy(T, V, seed, quantize):
    x = np.random.default_rng(seed).normal(0, 2, (T, V))
    if quantize:
        x = np.round(x)          # provoke exact ties
    assert beam_decode(x, vocab_of(V), width=1) == greedy_decode(x)


@pytest.mark.parametrize("seed", range(40))
def test_exhaustive_beam_finds_best_labeling(seed):
    rng = np.random.default_rng(seed)
    T, V = int(rng.integers(1, 6)), int(rng.integers(2, 4))
    x = rng.normal(0, 1.5, (T, V))
    ref = labeling_logprobs(x)
    best = max(ref, key=ref.get)
    got = tuple(k for k, _ in beam_decode(x, vocab_of(V), width=V ** T))
    assert got == best


def test_lm_can_forbid_a_token():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, (30, 3))
    x[::3, 2] += 4.0
    assert any(k == 2 for k, _ in beam_decode(x, V3, width=4))
    lm = NGramLM.from_unigram({"a": 1.0, "b": 1e-30, "</s>": 1.0}, weight=10.0)
    assert all(k != 2 for k, _ in beam_decode(x, V3, lm=lm, width=4))


def test_beam_state_invariants():
    rng = np.random.default_rng(0)
    st_ = DecoderState(vocab_of(4), width=3)
    for row in rng.normal(0, 1, (20, 4)):
        beam_decode_step(st_, row)
        assert len(st_.beam) <= 3
        assert len({id(e.node) for e in st_.beam}) == len(st_.beam)
        assert all(np.isfinite(e.total) for e in st_.beam)


def test_transfer_into_fresh_decoder():
    lm = NGramLM.train([["a", "b", "a"]], order=3)
    src = DecoderState(V3, lm, 4)
    x = np.full((6, 3), -5.0)
    x[[0, 1], 1] = 5
    x[[2], 0] = 5
    x[[3, 4], 2] = 5
    x[5, 0] = 5
    for row in x:
        src.step(row)
    ctx = src.best().node.ctx
    dst = DecoderState(V3, lm, 4, affiliation="B")
    transfer_context(src, dst)
    assert dst.context == ctx and dst.affiliation == "B"
    assert [k for k, _ in src.emitted] == [1, 2] and not src.pending


def test_self_transfer_commits_only():
    src = DecoderState(V3, None, 4)
    x = np.full((3, 3), -5.0)
    x[:, 1] = 5
    for row in x:
        src.step(row)
    transfer_context(src, src)
    assert [k for k, _ in src.emitted] == [1] and not src.pending


@pytest.mark.parametrize("seed", range(30))
def test_transfer_equals_single_decoder(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 2, (24, 4))
    cut = int(rng.integers(1, 23))
    voc = vocab_of(4)
    one = DecoderState(voc, None, 1)
    for row in x:
        one.step(row)
    one.finalize()
    a, b = DecoderState(voc, None, 1), DecoderState(voc, None, 1)
    for row in x[:cut]:
        a.step(row)
    transfer_context(a, b)
    for row in x[cut:]:
        b.step(row)
    b.finalize()
    assert a.emitted + b.emitted == one.emitted == greedy_decode(x)

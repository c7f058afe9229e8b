import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovlasr.acoustic import frame_truth, oracle_si_forward
from ovlasr.core import Segment, make_rng
from ovlasr.detection import (OVERLAP, SINGLE, CollarRegion, HeadTrainConfig, ModeRun, OverlapHead,
                              collar_bce_loss, detect_changes, detect_overlap, frame_runs, head_accuracy,
                              head_loss, merge_runs, nonspeech_turns, postprocess_modes, smooth_decisions,
                              train_overlap_head)
from ovlasr.evaluation import detection_f1
from ovlasr.mixer import sample_corpus, synth_pool

from oracles import fd_gradient, rel_error

O = lambda a, b: ModeRun(a, b, OVERLAP)
S = lambda a, b, spk: ModeRun(a, b, SINGLE, spk)


# ---------------------------------------------------------------- head

def separable(n=400, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim)
    X = rng.normal(size=(n, dim))
    margin = X @ w
    keep = np.abs(margin) > 0.5
    return X[keep], (margin[keep] > 0).astype(float)


def test_head_has_h_plus_one_parameters(noiseless_head):
    assert noiseless_head.n_params == 17
    assert OverlapHead.zeros(768).n_params == 769


def test_separable_training():
    X, y = separable()
    head, hist = train_overlap_head(X, y, OverlapHead.zeros(X.shape[1]), HeadTrainConfig(lr=1.0, epochs=200),
                                    make_rng(0))
    assert head_accuracy(head, X, y) >= 0.99
    assert hist[-1] < hist[0]


def test_zero_lr_head_unchanged():
    X, y = separable()
    init = OverlapHead(np.random.default_rng(1).normal(size=X.shape[1]), 0.3)
    head, _ = train_overlap_head(X, y, init, HeadTrainConfig(lr=0.0, epochs=5, batch_size=32), make_rng(0))
    assert np.array_equal(head.weights, init.weights) and head.bias == init.bias


def test_single_class_rejected():
    with pytest.raises(ValueError):
        train_overlap_head(np.zeros((5, 3)), np.ones(5), OverlapHead.zeros(3), HeadTrainConfig(), make_rng(0))


def test_head_gradient_finite_differences():
    X, y = separable(n=60, dim=5)
    head = OverlapHead(np.random.default_rng(3).normal(size=5), -0.2)
    _, gw, gb = head_loss(head, X, y)
    theta = np.concatenate([head.weights, [head.bias]])

    def f(t):
        return head_loss(OverlapHead(t[:-1].copy(), float(t[-1])), X, y)[0]

    num = fd_gradient(f, theta, h=1e-5)
    assert rel_error(np.concatenate([gw, [gb]]), num) < 1e-4


# ---------------------------------------------------------------- detect_overlap

def test_constant_probabilities():
    assert detect_overlap(np.zeros(100)) == [(0, 100, SINGLE)]
    assert detect_overlap(np.ones(100)) == [(0, 100, OVERLAP)]


def smoothing_oracle(flags, width):
    """Independent reference: explicit median window, then repeated absorption of the
    shortest short run, edge runs only while the run count exceeds ceil(T / width)."""
    x = list(flags)
    T = len(x)
    med = []
    for t in range(T):
        win = [x[min(max(t + d, 0), T - 1)] for d in range(-(width // 2), width // 2 + 1)]
        med.append(sum(win) * 2 > len(win))
    while True:
        runs, i = [], 0
        while i < T:
            j = i
            while j < T and med[j] == med[i]:
                j += 1
            runs.append((j - i, i))
            i = j
        cand = [r for r in runs[1:-1] if r[0] < width]
        if not cand and len(runs) > -(-T // width):
            cand = [r for r in {runs[0], runs[-1]} if r[0] < width]
        if not cand:
            return med
        length, start = min(cand)
        for t in range(start, start + length):
            med[t] = not med[t]


@pytest.mark.parametrize("T", list(range(1, 13)) + [50, 101, 750])
@pytest.mark.parametrize("phase", [0, 1])
def test_alternating_is_bounded(T, phase):
    p = np.where((np.arange(T) + phase) % 2 == 0, 0.51, 0.49)
    runs = detect_overlap(p)
    assert len(runs) <= math.ceil(T / 5)
    flags = [lab == OVERLAP for a, b, lab in runs for _ in range(b - a)]
    assert flags == smoothing_oracle(p >= 0.5, 5)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=120))
def test_smoothing_matches_oracle_and_bound(flags):
    out = smooth_decisions(np.array(flags), 5)
    assert [bool(v) for v in out] == smoothing_oracle(flags, 5)
    runs = frame_runs(out)
    assert all(b - a >= 5 for a, b, _ in runs[1:-1])
    assert len(runs) <= max(math.ceil(len(flags) / 5), 2 + (len(flags) - 2) // 5)


def test_runs_cover_all_frames():
    p = np.concatenate([np.zeros(30), np.ones(40), np.zeros(30)])
    assert detect_overlap(p) == [(0, 30, SINGLE), (30, 70, OVERLAP), (70, 100, SINGLE)]


def test_noiseless_f1_is_one(vocab, noiseless, noiseless_head):
    pool = synth_pool(6, 3, make_rng(11, "pool"), vocab)
    for m in sample_corpus(pool, 10, make_rng(11, "mix")):
        truth = frame_truth(m.stream, vocab)
        out = oracle_si_forward(truth, noiseless, make_rng(0), vocab)
        runs = detect_overlap(out, noiseless_head)
        pred = [(a / 50, b / 50) for a, b, lab in runs if lab == OVERLAP]
        score = detection_f1(m.overlap, pred, n_frames=truth.frames)
        assert score.f1 == 1.0


# ---------------------------------------------------------------- post-processing rules

def test_rule_one():
    assert postprocess_modes([O(0, 4), S(4, 4.8, "A"), O(4.8, 9)]) == [O(0, 9)]


def test_rule_two():
    assert postprocess_modes([S(0, 5, "A"), O(5, 5.5), S(5.5, 10, "A")]) == [S(0, 10, "A")]


def test_rule_two_needs_same_speaker():
    runs = [S(0, 5, "A"), O(5, 5.5), S(5.5, 10, "B")]
    assert postprocess_modes(runs) == runs


def test_merge_runs_joins_equal_neighbours():
    assert merge_runs([S(0, 1, "A"), S(1, 2, "A"), S(2, 3, "B")]) == [S(0, 2, "A"), S(2, 3, "B")]


@st.composite
def run_lists(draw):
    n = draw(st.integers(1, 12))
    t = 0.0
    out = []
    for _ in range(n):
        d = draw(st.sampled_from([0.2, 0.5, 0.8, 1.0, 1.5, 3.0]))
        if draw(st.booleans()):
            out.append(O(t, t + d))
        else:
            out.append(S(t, t + d, draw(st.sampled_from("AB"))))
        t += d
    return out


@settings(max_examples=10_000, deadline=None)
@given(run_lists())
def test_postprocess_idempotent_and_rules_hold(runs):
    once = postprocess_modes(runs)
    assert postprocess_modes(once) == once
    assert once[0].start_s == runs[0].start_s and abs(once[-1].end_s - runs[-1].end_s) < 1e-9
    for a, b in zip(once, once[1:]):
        assert abs(a.end_s - b.start_s) < 1e-9
        assert a.key() != b.key()
    for r in once:
        if r.label == SINGLE:
            assert r.duration_s >= 1.0 - 1e-9
    for left, r, right in zip(once, once[1:], once[2:]):
        if r.label == OVERLAP and r.duration_s < 1.0 - 1e-9:
            assert not (left.label == right.label == SINGLE and left.speaker == right.speaker)


# ---------------------------------------------------------------- collar loss

def test_collar_loss_examples():
    loss, g = collar_bce_loss(np.zeros(100), [])
    assert loss == pytest.approx(0.0, abs=1e-9)
    c = [CollarRegion(0.4, 0.8)]        # frames 20..39
    for t in (20, 27, 39):
        p = np.zeros(100)
        p[t] = 1.0
        assert collar_bce_loss(p, c)[0] == pytest.approx(0.0, abs=1e-9)


def test_collar_peak_outside_costs_more():
    c = [CollarRegion(0.4, 0.8)]
    inside, outside = np.zeros(100), np.zeros(100)
    inside[39] = 0.7
    outside[40] = 0.7
    assert collar_bce_loss(outside, c)[0] > collar_bce_loss(inside, c)[0]


@settings(max_examples=200, deadline=None)
@given(st.integers(20, 39), st.integers(20, 39), st.floats(0.05, 0.95))
def test_collar_loss_position_invariant(t1, t2, h):
    c = [CollarRegion(0.4, 0.8)]
    p1, p2 = np.full(100, 0.01), np.full(100, 0.01)
    p1[t1] = h
    p2[t2] = h
    assert collar_bce_loss(p1, c)[0] == collar_bce_loss(p2, c)[0]


def test_collar_gradient_finite_differences():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.05, 0.95, 60)
    collars = [CollarRegion(0.2, 0.4), CollarRegion(0.8, 1.0)]
    _, g = collar_bce_loss(p, collars)
    num = fd_gradient(lambda x: collar_bce_loss(x, collars)[0], p.copy(), h=1e-7)
    assert rel_error(g, num) < 1e-4


def test_empty_collar_skipped(caplog):
    loss, _ = collar_bce_loss(np.zeros(10), [CollarRegion(0.101, 0.105)])
    assert loss == pytest.approx(0.0, abs=1e-9)
    assert "empty" in caplog.text


# ---------------------------------------------------------------- changes

def test_detect_changes_examples():
    assert detect_changes(np.zeros(200)) == []
    p = np.zeros(200)
    p[100] = 0.9
    assert detect_changes(p) == [2.0]
    p[105] = 0.95
    assert detect_changes(p, min_gap_s=0.5) == [2.1]


def peak_oracle(p, thr, gap):
    peaks = [t for t in range(len(p)) if p[t] >= thr
             and (t == 0 or p[t] > p[t - 1]) and (t == len(p) - 1 or p[t] >= p[t + 1])]
    kept = []
    for t in sorted(peaks, key=lambda t: (-p[t], t)):
        if all(abs(t - k) >= gap for k in kept):
            kept.append(t)
    return sorted(kept)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=0, max_size=80), st.floats(0.1, 0.9))
def test_detect_changes_matches_oracle(p, thr):
    p = np.array(p)
    got = [round(t * 50) for t in detect_changes(p, thr, 0.2)]
    assert got == peak_oracle(p, thr, 10)
    assert all(b - a >= 10 for a, b in zip(got, got[1:]))


def test_nonspeech_turns_examples():
    ta = nonspeech_turns([Segment(0, 5.0, "A"), Segment(6.0, 8.0, "B")])
    assert ta.collars == [CollarRegion(5.0, 6.0)]
    tb = nonspeech_turns([Segment(0, 5.0, "A"), Segment(9.0, 10.0, "A")])
    assert tb.boundaries == [5.0, 9.0] and len(tb.collars) == 2
    tc = nonspeech_turns([Segment(0, 5.0, "A"), Segment(6.5, 8.0, "A")])
    assert tc.boundaries == [] and tc.collars == []

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovlasr.core import AnnotatedStream, Segment, make_rng
from ovlasr.mixer import (INTERRUPTION, TRANSITION, MixSpec, concatenate, mix, overlap_intervals,
                          overlap_stats, read_bundle, read_overlap_tsv, read_pool, sample_corpus,
                          sample_spec, synth_pool, write_bundle, write_pool)

from conftest import unit

# chi-square critical value, 9 degrees of freedom, upper tail 0.01
CHI2_9_P01 = 21.666


def single(spk, length, e=None):
    return AnnotatedStream([Segment(0.0, length, spk)], length,
                           embeddings={spk: e if e is not None else unit(1, 0)})


def test_transition_example():
    m = mix(single("A", 10), single("B", 5), MixSpec(TRANSITION, 8.0))
    assert m.overlap == [(8.0, 10.0)]
    assert m.duration_s == 13.0
    assert m.active_speakers(9.0) == {"A", "B"} and m.active_speakers(11.0) == {"B"}


def test_degenerate_transition():
    eps = 0.02
    m = mix(single("A", 10), single("B", 5), MixSpec(TRANSITION, 10 - eps))
    (a, b), = m.overlap
    assert b - a == pytest.approx(eps)


def test_interruption_example():
    m = mix(single("A", 20), single("B", 3), MixSpec(INTERRUPTION, 10.0, 1.0, 0.5))
    assert m.overlap == [(10.0, 13.0)]
    assert m.duration_s == 20.0
    assert all("A" in m.active_speakers(t) for t in np.arange(0, 20, 0.5))


def test_mix_errors():
    with pytest.raises(ValueError):
        mix(single("A", 10), single("A", 5), MixSpec(TRANSITION, 8.0))
    with pytest.raises(ValueError):
        mix(single("A", 3), single("B", 5), MixSpec(INTERRUPTION, 0.0))
    with pytest.raises(ValueError):
        mix(single("A", 10), single("B", 5), MixSpec(TRANSITION, 10.0))
    with pytest.raises(ValueError):
        mix(single("A", 50), single("B", 5), MixSpec(TRANSITION, 8.0))
    with pytest.raises(ValueError):
        MixSpec(INTERRUPTION, 1.0, 1.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.integers(50, 2000), st.integers(50, 2000), st.booleans(), st.floats(0, 1))
def test_overlap_is_activity_intersection(fa, fb, interrupt, u):
    la, lb = fa / 50, fb / 50
    if interrupt:
        if lb > la:
            la, lb = lb, la
        spec = MixSpec(INTERRUPTION, round(u * (la - lb) * 50) / 50)
    else:
        spec = MixSpec(TRANSITION, min(max(round(u * la * 50) / 50, 0.02), la - 0.02))
    m = mix(single("A", la), single("B", lb), spec)
    lo, hi = max(0.0, spec.shift_s), min(la, spec.shift_s + lb)
    expect = [(lo, hi)] if hi > lo else []
    for got in (m.overlap, overlap_intervals(m.stream.segments, m.duration_s)):
        assert len(got) == len(expect)
        assert np.allclose(np.ravel(got), np.ravel(expect), atol=1e-6)


def test_audio_is_gain_weighted_sum(vocab):
    pool = synth_pool(2, 1, make_rng(0), vocab, audio=True, len_range=(3, 4))
    a, b = (pool[0], pool[1]) if pool[0].duration_s >= pool[1].duration_s else (pool[1], pool[0])
    spec = MixSpec(INTERRUPTION, 0.2, 0.8, 1.3)
    if b.duration_s + 0.2 > a.duration_s:
        spec = MixSpec(INTERRUPTION, 0.0, 0.8, 1.3)
    m = mix(a, b, spec)
    xa = a.audio.samples.astype(float) * 0.8
    xb = b.audio.samples.astype(float) * 1.3
    off = int(round(spec.shift_s * 16000))
    ref = np.zeros(len(m.audio_float))
    ref[:len(xa)] += xa
    ref[off:off + len(xb)] += xb
    assert np.array_equal(m.audio_float, ref)
    assert len(m.stream.audio.samples) == len(ref)


def test_sample_corpus_determinism_and_empty(vocab):
    pool = synth_pool(4, 2, make_rng(1), vocab)
    assert sample_corpus(pool, 0, make_rng(2)) == []
    a = sample_corpus(pool, 5, make_rng(2))
    b = sample_corpus(pool, 5, make_rng(2))
    assert [m.stream.segments for m in a] == [m.stream.segments for m in b]
    assert [m.spec for m in a] == [m.spec for m in b]
    with pytest.raises(ValueError):
        sample_corpus([p for p in pool if p.speakers == pool[0].speakers], 1, make_rng(0))


def test_sample_corpus_respects_max_overlap(vocab):
    pool = synth_pool(4, 3, make_rng(5), vocab, len_range=(2, 12))
    for m in sample_corpus(pool, 40, make_rng(6), max_overlap_s=4.0):
        assert all(b - a <= 4.0 + 1e-6 for a, b in m.overlap)


def test_transition_overlap_histogram_matches_sampler():
    rng = make_rng(123)
    la, lb = 10.0, 5.0
    ov = np.array([la - sample_spec(la, lb, TRANSITION, rng).shift_s for _ in range(1000)])
    lo, hi = 0.2, 5.0
    assert ov.min() >= lo - 1e-9 and ov.max() <= hi + 1e-9
    # shifts are quantized to 0.02 s, so use bin edges on half-grid points
    edges = np.linspace(lo, hi, 11)
    edges[0], edges[-1] = lo - 0.01, hi + 0.01
    counts, _ = np.histogram(ov, edges)
    grid = np.round(np.arange(lo, hi + 1e-9, 0.02), 2)
    weight = np.ones(len(grid))
    weight[[0, -1]] = 0.5        # rounding maps half a grid step onto each endpoint
    p = np.histogram(grid, edges, weights=weight)[0] / weight.sum()
    chi2 = float(np.sum((counts - 1000 * p) ** 2 / (1000 * p)))
    assert chi2 < CHI2_9_P01


def test_interruption_gain_range():
    rng = make_rng(4)
    gains = [sample_spec(10, 3, INTERRUPTION, rng).gain_b for _ in range(500)]
    assert 0.25 <= min(gains) and max(gains) <= 2.0
    logs = np.log(gains)
    assert abs(np.mean(logs) - (np.log(0.25) + np.log(2)) / 2) < 0.1


def test_overlap_stats_examples():
    none = overlap_stats(single("A", 5))
    assert none.fraction == 0 and none.histogram == []
    m = mix(single("A", 10), single("B", 5), MixSpec(TRANSITION, 8.0))
    st_ = overlap_stats(m)
    assert st_.fraction == pytest.approx(2 / 13, abs=1e-12)
    assert st_.by_cardinality == pytest.approx({1: 11.0, 2: 2.0})


def test_overlap_stats_84_percent_fixture():
    def pair(ov, length=6.0):
        return AnnotatedStream([Segment(0, length, "A"), Segment(length - ov, 2 * length - ov, "B")],
                               2 * length - ov)
    streams = [pair(4.2), pair(0.4), pair(0.4)]
    s = overlap_stats(streams)
    assert s.duration_share_longer_than(1.0) == pytest.approx(0.84)
    at_1s = [c for c in s.cumulative if abs(c[0] - 1.0) < 1e-9][0]
    assert at_1s[1] == pytest.approx(0.84)
    assert sum(h[2] for h in s.histogram) == 3
    assert sum(h[3] for h in s.histogram) == pytest.approx(5.0)


def test_overlap_stats_reproducible(tmp_path, vocab):
    pool = synth_pool(4, 2, make_rng(3), vocab)
    mixes = sample_corpus(pool, 6, make_rng(4))
    write_bundle(mixes[0].stream, tmp_path / "b", mixes[0].overlap)
    back = read_bundle(tmp_path / "b", vocab)
    assert overlap_stats(back).fraction == pytest.approx(overlap_stats(mixes[0]).fraction, abs=1e-9)
    assert np.allclose(read_overlap_tsv(tmp_path / "b" / "overlap.tsv"), mixes[0].overlap, atol=1e-3)


def test_bundle_and_pool_round_trip(tmp_path, vocab):
    pool = synth_pool(3, 2, make_rng(7), vocab, audio=True, len_range=(2, 3))
    write_pool(pool, tmp_path / "pool")
    back = read_pool(tmp_path / "pool", vocab)
    assert [p.segments for p in back] == [p.segments for p in pool]
    assert all(np.array_equal(x.audio.samples, y.audio.samples) for x, y in zip(back, pool))
    m = sample_corpus(pool, 1, make_rng(8))[0]
    write_bundle(m.stream, tmp_path / "mix")
    got = read_bundle(tmp_path / "mix", vocab)
    assert got.segments == m.stream.segments
    assert np.array_equal(got.audio.samples, m.stream.audio.samples)
    for k, e in m.stream.embeddings.items():
        assert np.allclose(got.embeddings[k], e, atol=1e-5)
    with pytest.raises(FileNotFoundError):
        read_bundle(tmp_path / "nothing")


def test_concatenate_offsets():
    s = concatenate([single("A", 2), single("B", 3)], gap_s=1.0)
    assert s.duration_s == 6.0
    assert [(x.start_s, x.end_s) for x in s.segments] == [(0, 2), (3, 6)]

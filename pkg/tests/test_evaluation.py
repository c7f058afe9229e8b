import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovlasr.core import Segment
from ovlasr.evaluation import (FIG2A_HEADER, TABLE_HEADER, TableRow, detection_f1, emit_report, read_table,
                               region_wer, segment_word_times, wer)
from ovlasr.mixer import overlap_stats
from ovlasr.orchestrator import HypWord

from oracles import edit_distance


def test_wer_examples():
    assert wer("a b c".split(), "a x c".split()) == (pytest.approx(100 / 3), 1, 0, 0)
    assert wer(["a"], ["a"])[0] == 0.0
    assert wer("a b".split(), "a c b".split()) == (50.0, 0, 1, 0)
    assert wer([], ["a", "b"]) == (200.0, 0, 2, 0)


def test_wer_prefers_substitution():
    assert wer(["a"], ["b"]) == (100.0, 1, 0, 0)


def test_wer_exhaustive_against_brute_force():
    seqs = [list(s) for n in range(5) for s in itertools.product("abc", repeat=n)]
    for r in seqs:
        for h in seqs:
            _, s, i, d = wer(r, h)
            assert s + i + d == edit_distance(r, h)
            assert i - d == len(h) - len(r)


@settings(max_examples=500, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=6), st.lists(st.sampled_from("abc"), max_size=6))
def test_wer_brute_force_up_to_six(r, h):
    _, s, i, d = wer(r, h)
    assert s + i + d == edit_distance(r, h)


def refs_and_hyp(vocab):
    a = Segment(0.0, 4.0, "A", ("one", "two", "three"))
    b = Segment(2.0, 5.0, "B", ("four", "five"))
    refs = {"A": [a], "B": [b]}
    hyp = {"A": segment_word_times(a, vocab), "B": segment_word_times(b, vocab)}
    return refs, hyp


def test_region_wer_perfect_and_empty_overlap(vocab):
    refs, hyp = refs_and_hyp(vocab)
    ov = [(2.0, 4.0)]
    out = region_wer(refs, hyp, ov, vocab)
    assert out.overall_rate == out.single_rate == out.overlap_rate == 0.0
    n_ov = out.overlap.ref
    assert n_ov > 0
    cut = {s: [w for w in ws if not 2.0 <= (w.start_s + w.end_s) / 2 < 4.0] for s, ws in hyp.items()}
    out = region_wer(refs, cut, ov, vocab)
    assert out.overlap_rate == 100.0 and out.overlap.dele == n_ov
    assert out.single_rate == 0.0


def test_region_wer_swap_across_speakers(vocab):
    refs, hyp = refs_and_hyp(vocab)
    moved = hyp["A"][0]
    hyp = {"A": hyp["A"][1:], "B": sorted(hyp["B"] + [moved], key=lambda w: w.start_s)}
    out = region_wer(refs, hyp, [], vocab)
    assert (out.overall.ins, out.overall.dele, out.overall.sub) == (1, 1, 0)


def test_region_wer_unattributed_are_insertions(vocab):
    refs, hyp = refs_and_hyp(vocab)
    hyp["<unattributed>"] = [HypWord("noise", 0.1, 0.2)]
    out = region_wer(refs, hyp, [], vocab)
    assert out.overall.ins == 1 and out.overall.ref == 5


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5))
def test_weighted_mean_property(drop_single, drop_overlap, seed):
    from ovlasr.core import DEFAULT_VOCAB as vocab
    refs = {"A": [Segment(0.0, 6.0, "A", ("one", "two", "three", "four", "five", "six"))],
            "B": [Segment(2.0, 8.0, "B", ("seven", "eight", "nine", "ten", "eleven", "twelve"))]}
    hyp = {s: segment_word_times(segs[0], vocab) for s, segs in refs.items()}
    ov = [(2.0, 6.0)]
    rng = np.random.default_rng(seed)
    words = [(s, w) for s, ws in hyp.items() for w in ws]
    single = [x for x in words if not 2.0 <= (x[1].start_s + x[1].end_s) / 2 < 6.0]
    over = [x for x in words if 2.0 <= (x[1].start_s + x[1].end_s) / 2 < 6.0]
    drop = {id(x[1]) for x in rng.permutation(np.array(single, dtype=object))[:drop_single]}
    drop |= {id(x[1]) for x in rng.permutation(np.array(over, dtype=object))[:drop_overlap]}
    cut = {s: [w for w in ws if id(w) not in drop] for s, ws in hyp.items()}
    out = region_wer(refs, cut, ov, vocab)
    lo, hi = sorted([out.single_rate, out.overlap_rate])
    assert lo - 1e-9 <= out.overall_rate <= hi + 1e-9
    assert out.overall.ref == out.single.ref + out.overlap.ref == 12


def test_detection_f1_examples():
    assert detection_f1([(0, 10)], [(0, 10)]).f1 == 1.0
    assert detection_f1([(0, 5)], [(5, 10)]).f1 == 0.0
    s = detection_f1([(0, 10)], [(0, 5)])
    assert (s.precision, s.recall) == (1.0, 0.5) and s.f1 == pytest.approx(2 / 3)
    assert detection_f1([], []).f1 == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 400), st.integers(1, 100)), max_size=5),
       st.lists(st.tuples(st.integers(0, 400), st.integers(1, 100)), max_size=5))
def test_detection_f1_cross_identity(a, b):
    ta = [(s / 50, (s + d) / 50) for s, d in a]
    tb = [(s / 50, (s + d) / 50) for s, d in b]
    ab = detection_f1(ta, tb, n_frames=500)
    ba = detection_f1(tb, ta, n_frames=500)
    assert ab.precision == ba.recall and ab.recall == ba.precision and ab.f1 == pytest.approx(ba.f1)


def test_report_single_baseline_row(tmp_path):
    from ovlasr.core import AnnotatedStream
    stats = overlap_stats(AnnotatedStream([Segment(0, 3, "A")], 3.0))
    text = emit_report([TableRow("SI model (baseline)", 1, 1.0, {"*": 12.5})], stats, tmp_path, plots=False)
    rows = read_table(tmp_path / "table1.csv")
    assert rows[0] == TABLE_HEADER
    assert rows[1] == ["SI model (baseline)", "1", "1.00", "12.50", "12.50", "12.50", "12.50"]
    assert read_table(tmp_path / "fig2a.csv") == [FIG2A_HEADER]
    assert "(empty)" in text


def test_report_grid_shape_and_plots(tmp_path):
    from ovlasr.core import AnnotatedStream
    rows = [TableRow("SI model (baseline)", 1, 1.0, {"*": 20.0})]
    for n, hw in ((2, 1.5), (3, 1.8), (4, 2.0)):
        rows.append(TableRow(f"SI+SC (N={n})", n, hw, {m: 10.0 + n for m in ("MEAN", "MEDIAN", "MEDOID", "LAST")}))
    rows.append(TableRow("SC model only", 4, 2.0, {"*": 30.0}))
    st_ = overlap_stats([AnnotatedStream([Segment(0, 6, "A"), Segment(5, 9, "B")], 9.0)])
    emit_report(rows, st_, tmp_path)
    table = read_table(tmp_path / "table1.csv")
    assert len(table) == 6
    grid = [r[3:] for r in table[2:5]]
    assert sum(1 for r in grid for c in r if c) == 12
    assert [r[2] for r in table[2:5]] == ["1.50", "1.80", "2.00"]
    assert list(tmp_path.glob("*.png"))
    with pytest.raises(ValueError):
        emit_report([], st_, tmp_path)

"""WER by region and speaker, detection scores, and Table/histogram report files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .acoustic import align_segment
from .core import Segment, Vocabulary
from .orchestrator import HypWord, SpeakerTranscript

SINGLE_REGION, OVERLAP_REGION = "single", "overlap"


# ---------------------------------------------------------------- WER

def edit_counts(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimum-cost alignment.

    Among equal-cost alignments the one with the most substitutions wins.
    """
    n, m = len(ref), len(hyp)
    # cost, -subs as a lexicographic pair
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    S = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diff = ref[i - 1] != hyp[j - 1]
            cands = [
                (D[i - 1, j - 1] + diff, -(S[i - 1, j - 1] + diff)),
                (D[i - 1, j] + 1, -S[i - 1, j]),
                (D[i, j - 1] + 1, -S[i, j - 1]),
            ]
            c, s = min(cands)
            D[i, j], S[i, j] = c, -s
    cost, subs = int(D[n, m]), int(S[n, m])
    # cost = subs + ins + del and ins - del = m - n
    rest = cost - subs
    ins = (rest + (m - n)) // 2
    dels = rest - ins
    return subs, ins, dels


def wer(ref: Sequence, hyp: Sequence) -> tuple[float, int, int, int]:
    """Returns ``(rate %, S, I, D)``; an empty reference divides by 1."""
    s, i, d = edit_counts(list(ref), list(hyp))
    return 100.0 * (s + i + d) / max(1, len(ref)), s, i, d


@dataclass
class Counts:
    ref: int = 0
    sub: int = 0
    ins: int = 0
    dele: int = 0

    def add(self, ref: int, s: int, i: int, d: int) -> None:
        self.ref += ref
        self.sub += s
        self.ins += i
        self.dele += d

    @property
    def errors(self) -> int:
        return self.sub + self.ins + self.dele

    @property
    def rate(self) -> float:
        return 100.0 * self.errors / max(1, self.ref)


@dataclass
class WerBreakdown:
    overall: Counts = field(default_factory=Counts)
    single: Counts = field(default_factory=Counts)
    overlap: Counts = field(default_factory=Counts)
    per_speaker: dict[str, dict[str, Counts]] = field(default_factory=dict)

    @property
    def overall_rate(self) -> float:
        return self.overall.rate

    @property
    def single_rate(self) -> float:
        return self.single.rate

    @property
    def overlap_rate(self) -> float:
        return self.overlap.rate

    def merge(self, other: "WerBreakdown") -> "WerBreakdown":
        for mine, theirs in ((self.overall, other.overall), (self.single, other.single),
                             (self.overlap, other.overlap)):
            mine.add(theirs.ref, theirs.sub, theirs.ins, theirs.dele)
        for spk, regions in other.per_speaker.items():
            mine = self.per_speaker.setdefault(spk, {})
            for r, c in regions.items():
                mine.setdefault(r, Counts()).add(c.ref, c.sub, c.ins, c.dele)
        return self


def segment_word_times(seg: Segment, vocab: Vocabulary, frame_rate: float = 50.0) -> list[HypWord]:
    """Reference word timings implied by the evenly spread label alignment."""
    pos = align_segment(seg, vocab, frame_rate)
    out = []
    k = 0
    for w in seg.words:
        frames = [f for _, f in pos[k:k + len(w)]]
        out.append(HypWord(w, frames[0] / frame_rate, (frames[-1] + 1) / frame_rate))
        k += len(w) + (1 if vocab.space is not None else 0)
    return out


def in_regions(t: float, regions: Sequence[tuple[float, float]]) -> bool:
    return any(a <= t < b for a, b in regions)


def region_wer(refs: Mapping[str, Sequence[Segment]], hyps: Mapping[str, Sequence[HypWord]] | Sequence[SpeakerTranscript],
               overlap_regions: Sequence[tuple[float, float]], vocab: Vocabulary,
               frame_rate: float = 50.0) -> WerBreakdown:
    """Per speaker and region WER; a word's region is decided by its midpoint.

    Hypothesis speakers absent from the references count as insertions.
    """
    if not isinstance(hyps, Mapping):
        hyps = {t.speaker: t.words for t in hyps}
    out = WerBreakdown()
    ref_words = {s: [w for seg in segs for w in segment_word_times(seg, vocab, frame_rate)]
                 for s, segs in refs.items()}
    speakers = sorted(set(ref_words) | set(hyps))
    for spk in speakers:
        rw = sorted(ref_words.get(spk, []), key=lambda w: w.start_s)
        hw = sorted(hyps.get(spk, []), key=lambda w: w.start_s)
        regions = {}
        for name, want in ((SINGLE_REGION, False), (OVERLAP_REGION, True)):
            r = [w.text for w in rw if in_regions((w.start_s + w.end_s) / 2, overlap_regions) == want]
            h = [w.text for w in hw if in_regions((w.start_s + w.end_s) / 2, overlap_regions) == want]
            _, s, i, d = wer(r, h)
            c = Counts()
            c.add(len(r), s, i, d)
            regions[name] = c
            (out.overlap if want else out.single).add(len(r), s, i, d)
        tot = Counts()
        for c in regions.values():
            tot.add(c.ref, c.sub, c.ins, c.dele)
        regions["overall"] = tot
        out.per_speaker[spk] = regions
        out.overall.add(tot.ref, tot.sub, tot.ins, tot.dele)
    return out


# ---------------------------------------------------------------- detection scores

@dataclass(frozen=True)
class DetectionScore:
    precision: float
    recall: float
    f1: float
    event_precision: float = 0.0
    event_recall: float = 0.0
    event_f1: float = 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def rasterize(intervals: Iterable[tuple[float, float]], n_frames: int, frame_rate: float) -> np.ndarray:
    out = np.zeros(n_frames, dtype=bool)
    for a, b in intervals:
        out[max(0, round(a * frame_rate)):min(n_frames, round(b * frame_rate))] = True
    return out


def detection_f1(truth: Sequence[tuple[float, float]], predicted: Sequence[tuple[float, float]],
                 frame_rate: float = 50.0, collar_s: float = 0.25,
                 n_frames: int | None = None) -> DetectionScore:
    """Frame-level scores plus event matching of interval onsets and offsets within a collar."""
    if n_frames is None:
        n_frames = max([round(b * frame_rate) for _, b in list(truth) + list(predicted)] + [0])
    t = rasterize(truth, n_frames, frame_rate)
    p = rasterize(predicted, n_frames, frame_rate)
    tp = int(np.sum(t & p))
    prec = tp / int(p.sum()) if p.sum() else 0.0
    rec = tp / int(t.sum()) if t.sum() else 0.0
    # events: greedy one-to-one matching where both edges lie within the collar
    used = set()
    hits = 0
    for a, b in sorted(predicted):
        for j, (c, d) in enumerate(sorted(truth)):
            if j not in used and abs(a - c) <= collar_s + 1e-9 and abs(b - d) <= collar_s + 1e-9:
                used.add(j)
                hits += 1
                break
    ep = hits / len(predicted) if predicted else 0.0
    er = hits / len(truth) if truth else 0.0
    return DetectionScore(prec, rec, _f1(prec, rec), ep, er, _f1(ep, er))


def change_f1(truth_s: Sequence[float], predicted_s: Sequence[float], collar_s: float = 0.25) -> DetectionScore:
    """Event scores for change points (each matched at most once)."""
    used = set()
    hits = 0
    for p in sorted(predicted_s):
        for j, t in enumerate(sorted(truth_s)):
            if j not in used and abs(p - t) <= collar_s + 1e-9:
                used.add(j)
                hits += 1
                break
    pr = hits / len(predicted_s) if predicted_s else 0.0
    rc = hits / len(truth_s) if truth_s else 0.0
    return DetectionScore(pr, rc, _f1(pr, rc), pr, rc, _f1(pr, rc))


# ---------------------------------------------------------------- reports

TABLE_HEADER = ["model", "N", "HW", "WER_MEAN", "WER_MEDIAN", "WER_MEDOID", "WER_LAST"]
METHOD_ORDER = ("MEAN", "MEDIAN", "MEDOID", "LAST")


@dataclass
class TableRow:
    model: str
    n: int
    hw: float
    wer: dict[str, float]       # method -> WER; a single entry repeats across columns

    def cells(self) -> list[str]:
        if set(self.wer) == {"*"}:
            vals = [self.wer["*"]] * 4
        else:
            vals = [self.wer.get(m) for m in METHOD_ORDER]
        return [self.model, str(self.n), f"{self.hw:.2f}"] + ["" if v is None else f"{v:.2f}" for v in vals]


def write_table(rows: Sequence[TableRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in rows:
            w.writerow(r.cells())


def read_table(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def histogram_rows(stats) -> list[list[str]]:
    return [[f"{lo:.2f}", f"{hi:.2f}", str(n), f"{d:.2f}", f"{100 * share:.2f}"]
            for (lo, hi, n, d), (_, share, _) in zip(stats.histogram, stats.cumulative)]


FIG2A_HEADER = ["bin_start_s", "bin_end_s", "count", "duration_s", "cum_duration_longer_pct"]
FIG2B_HEADER = ["speakers", "duration_s", "share_pct"]


def write_fig2(stats, dir_path) -> tuple[Path, Path]:
    d = Path(dir_path)
    a, b = d / "fig2a.csv", d / "fig2b.csv"
    with open(a, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIG2A_HEADER)
        w.writerows(histogram_rows(stats))
    total = sum(stats.by_cardinality.values())
    with open(b, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIG2B_HEADER)
        for n, dur in sorted(stats.by_cardinality.items()):
            w.writerow([str(n), f"{dur:.2f}", f"{100 * dur / total:.2f}" if total else "0.00"])
    return a, b


def ascii_bars(labels: Sequence[str], values: Sequence[float], width: int = 40, fmt: str = "{:.2f}") -> str:
    if not labels:
        return "(empty)\n"
    top = max(values) if values and max(values) > 0 else 1.0
    lw = max(len(s) for s in labels)
    lines = []
    for lab, v in zip(labels, values):
        n = int(round(width * v / top))
        lines.append(f"{lab.rjust(lw)} | {'#' * n}{' ' * (width - n)} {fmt.format(v)}")
    return "\n".join(lines) + "\n"


def ascii_table(rows: Sequence[TableRow]) -> str:
    cells = [TABLE_HEADER] + [r.cells() for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(TABLE_HEADER))]
    return "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(len(widths))) for c in cells) + "\n"


def emit_report(rows: Sequence[TableRow], stats, out_dir, plots: bool = True) -> str:
    """Writes table1.csv, fig2a.csv, fig2b.csv (and PNG figures); returns the ASCII charts."""
    if not rows:
        raise ValueError("no evaluated configuration")
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_table(rows, d / "table1.csv")
    write_fig2(stats, d)
    text = ascii_table(rows)
    text += "\noverlap durations (count per bin)\n"
    text += ascii_bars([f"{lo:.1f}-{hi:.1f}s" for lo, hi, _, _ in stats.histogram],
                       [n for _, _, n, _ in stats.histogram], fmt="{:.0f}")
    text += "\nshare of overlap time in overlaps longer than x (%)\n"
    text += ascii_bars([f">{x:.1f}s" for x, _, _ in stats.cumulative],
                       [100 * s for _, s, _ in stats.cumulative])
    text += "\nspeech time by number of simultaneous speakers (s)\n"
    text += ascii_bars([str(n) for n in sorted(stats.by_cardinality)],
                       [stats.by_cardinality[n] for n in sorted(stats.by_cardinality)])
    if plots:
        from .plotting import plot_report
        plot_report(rows, stats, d)
    return text

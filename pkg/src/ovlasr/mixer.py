"""Synthetic overlapping-speech mixtures with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (SAMPLE_RATE, AnnotatedStream, AudioStream, Segment, Vocabulary, make_rng,
                   normalize, read_annotation, read_embeddings, read_wav, write_annotation,
                   write_embeddings, write_wav)

TRANSITION = "TRANSITION"
INTERRUPTION = "INTERRUPTION"
MIN_LEN_S, MAX_LEN_S = 1.0, 45.0

LEXICON = tuple("""
the of and to in is it you that he was for on are with as his they be at one have this from
or had by hot word but what some we can out other were all there when up use your how said
an each she which do their time if will way about many then them write would like so these
her long make thing see him two has look more day could go come did number sound no most
people my over know water than call first who may down side been now find any new work part
take get place made live where after back little only round man year came show every good
me give our under name very through just form sentence great think say help low line differ
turn cause much mean before move right boy old too same tell does set three want air well
also play small end put home read hand port large spell add even land here must big high
such follow act why ask men change went light kind off need house picture try us again
animal point mother world near build self earth father head stand own page should country
""".split())


# ---------------------------------------------------------------- speakers and pools

def speaker_embeddings(n: int, dim: int, rng: np.random.Generator, max_cos: float = 0.5,
                       max_tries: int = 100000) -> np.ndarray:
    """Unit vectors whose pairwise cosine similarity stays below ``max_cos``."""
    out: list[np.ndarray] = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise ValueError(f"cannot place {n} speakers in {dim} dimensions with cos < {max_cos}")
        v = normalize(rng.normal(size=dim))
        if all(float(v @ u) < max_cos for u in out):
            out.append(v)
    return np.array(out).reshape(n, dim)


def jitter_embedding(center: np.ndarray, jitter: float, rng: np.random.Generator) -> np.ndarray:
    return normalize(center + rng.normal(0.0, jitter, len(center)))


def random_words(n_chars: int, rng: np.random.Generator, lexicon: Sequence[str] = LEXICON) -> list[str]:
    words: list[str] = []
    length = -1
    while length < n_chars:
        w = lexicon[int(rng.integers(len(lexicon)))]
        words.append(w)
        length += len(w) + 1
    return words


def segment_duration(words: Sequence[str], vocab: Vocabulary, frame_rate: float,
                     frames_per_label: int) -> float:
    n = len(vocab.encode(words)) + (1 if words and vocab.space is not None else 0)
    return n * frames_per_label / frame_rate


def tone_audio(segments: Sequence[Segment], duration_s: float, vocab: Vocabulary,
               voices: dict[str, float], frame_rate: float = 50.0) -> np.ndarray:
    """Float waveform: a short tone burst per emitted label, pitched per speaker."""
    from .acoustic import align_segment

    n = int(round(duration_s * SAMPLE_RATE))
    out = np.zeros(n)
    hop = int(SAMPLE_RATE / frame_rate)
    t = np.arange(2 * hop) / SAMPLE_RATE
    env = np.hanning(2 * hop)
    for seg in segments:
        base = voices.get(seg.speaker, 1.0)
        for lab, f in align_segment(seg, vocab, frame_rate):
            a = f * hop
            burst = 6000.0 * env * np.sin(2 * np.pi * (150.0 + 45.0 * lab) * base * t)
            b = min(n, a + len(burst))
            out[a:b] += burst[:b - a]
    return out


def to_pcm(x: np.ndarray) -> AudioStream:
    return AudioStream(np.clip(np.round(x), -32768, 32767).astype(np.int16))


def synth_pool(n_speakers: int, utts_per_speaker: int, rng: np.random.Generator,
               vocab: Vocabulary, dim: int = 16, frame_rate: float = 50.0,
               frames_per_label: int = 4, len_range: tuple[float, float] = (2.0, 8.0),
               audio: bool = False, max_cos: float = 0.5) -> list[AnnotatedStream]:
    """Single-speaker utterances; each stream carries its speaker's true embedding."""
    centers = speaker_embeddings(n_speakers, dim, rng, max_cos)
    pool = []
    for s in range(n_speakers):
        spk = f"S{s:03d}"
        voice = 0.8 + 0.4 * (s % 7) / 6
        for _ in range(utts_per_speaker):
            target = rng.uniform(*len_range)
            chars = max(1, int(target * frame_rate / frames_per_label) - 1)
            words = random_words(chars, rng)
            while segment_duration(words, vocab, frame_rate, frames_per_label) > max(len_range[1], MIN_LEN_S) and len(words) > 1:
                words.pop()
            dur = segment_duration(words, vocab, frame_rate, frames_per_label)
            seg = Segment(0.0, dur, spk, tuple(words))
            au = to_pcm(tone_audio([seg], dur, vocab, {spk: voice}, frame_rate)) if audio else None
            pool.append(AnnotatedStream([seg], dur, au, {spk: centers[s]}))
    return pool


# ---------------------------------------------------------------- mixing

@dataclass(frozen=True)
class MixSpec:
    scenario: str
    shift_s: float
    gain_a: float = 1.0
    gain_b: float = 1.0

    def __post_init__(self):
        if self.scenario not in (TRANSITION, INTERRUPTION):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.gain_a <= 0 or self.gain_b <= 0:
            raise ValueError("gains must be positive")
        if self.shift_s < 0:
            raise ValueError("shift must be non-negative")


@dataclass
class Mixture:
    stream: AnnotatedStream
    spec: MixSpec
    overlap: list[tuple[float, float]]
    audio_float: np.ndarray | None = None

    @property
    def references(self) -> dict[str, list[Segment]]:
        return {s: self.stream.speaker_segments(s) for s in self.stream.speakers}

    @property
    def embeddings(self) -> dict[str, np.ndarray]:
        return self.stream.embeddings

    @property
    def duration_s(self) -> float:
        return self.stream.duration_s

    def active_speakers(self, t: float) -> set[str]:
        return {s.speaker for s in self.stream.segments if s.start_s <= t < s.end_s}


def _shift(seg: Segment, dt: float) -> Segment:
    return Segment(round(seg.start_s + dt, 6), round(seg.end_s + dt, 6), seg.speaker, seg.words)


def mix(seg_a: AnnotatedStream, seg_b: AnnotatedStream, spec: MixSpec,
        rng: np.random.Generator | None = None) -> Mixture:
    """Place B at ``spec.shift_s`` relative to A and sum the sources.

    ``rng`` is accepted for interface symmetry; all randomness lives in the spec.
    """
    spk_a, spk_b = seg_a.speakers, seg_b.speakers
    if len(spk_a) != 1 or len(spk_b) != 1:
        raise ValueError("mix expects single-speaker inputs")
    if spk_a == spk_b:
        raise ValueError("cannot mix two segments of the same speaker")
    len_a, len_b = seg_a.duration_s, seg_b.duration_s
    for n, length in (("A", len_a), ("B", len_b)):
        if not MIN_LEN_S - 1e-9 <= length <= MAX_LEN_S + 1e-9:
            raise ValueError(f"segment {n} length {length:.3f}s outside [{MIN_LEN_S}, {MAX_LEN_S}]")
    sh = spec.shift_s
    if spec.scenario == TRANSITION:
        if not 0 < sh < len_a:
            raise ValueError("transition shift must lie in (0, len(A))")
    else:
        if len_b > len_a:
            raise ValueError("interruption requires B no longer than A")
        if sh + len_b > len_a + 1e-9:
            raise ValueError("interruption must lie within A")
    total = max(len_a, sh + len_b)
    segs = list(seg_a.segments) + [_shift(s, sh) for s in seg_b.segments]
    ov_a, ov_b = max(0.0, sh), min(len_a, sh + len_b)
    overlap = [(round(ov_a, 6), round(ov_b, 6))] if ov_b > ov_a else []

    audio_f = None
    audio = None
    if seg_a.audio is not None and seg_b.audio is not None:
        n = int(round(total * SAMPLE_RATE))
        audio_f = np.zeros(n)
        a = seg_a.audio.samples.astype(np.float64) * spec.gain_a
        b = seg_b.audio.samples.astype(np.float64) * spec.gain_b
        audio_f[:len(a)] += a
        off = int(round(sh * SAMPLE_RATE))
        audio_f[off:off + len(b)] += b[:n - off]
        audio = to_pcm(audio_f)
    emb = {**seg_a.embeddings, **seg_b.embeddings}
    stream = AnnotatedStream(segs, round(total, 6), audio, emb)
    return Mixture(stream, spec, overlap, audio_f)


def sample_spec(len_a: float, len_b: float, scenario: str, rng: np.random.Generator,
                min_overlap_s: float = 0.2, frame_rate: float = 50.0,
                max_overlap_s: float | None = None) -> MixSpec:
    """Transition shift ~ U(max(0, lenA-lenB, lenA-max_overlap), lenA-min_overlap) so that
    B outlasts A; interruption offset ~ U(0, lenA-lenB) with gain_b log-uniform in [0.25, 2]."""
    q = lambda x: round(x * frame_rate) / frame_rate
    if scenario == TRANSITION:
        lo, hi = max(0.0, len_a - len_b), len_a - min_overlap_s
        if max_overlap_s is not None:
            lo = max(lo, len_a - max_overlap_s)
        if hi <= lo:
            hi = lo + (len_a - lo) / 2
        sh = q(rng.uniform(lo, hi))
        sh = min(max(sh, 1.0 / frame_rate), len_a - 1.0 / frame_rate)
        return MixSpec(TRANSITION, sh)
    sh = q(rng.uniform(0.0, len_a - len_b))
    gain = float(np.exp(rng.uniform(np.log(0.25), np.log(2.0))))
    return MixSpec(INTERRUPTION, sh, 1.0, gain)


def sample_corpus(pool: Sequence[AnnotatedStream], count: int, rng: np.random.Generator,
                  interruption_ratio: float = 0.5, min_overlap_s: float = 0.2,
                  frame_rate: float = 50.0, max_overlap_s: float | None = None) -> list[Mixture]:
    """Mixtures of random pairs of pool items from different speakers."""
    by_spk: dict[str, list[int]] = {}
    for i, s in enumerate(pool):
        by_spk.setdefault(s.speakers[0], []).append(i)
    if len(by_spk) < 2:
        raise ValueError("pool needs at least two speakers")
    spks = sorted(by_spk)
    out = []
    for _ in range(count):
        sa, sb = rng.choice(len(spks), 2, replace=False)
        a = pool[by_spk[spks[sa]][int(rng.integers(len(by_spk[spks[sa]])))]]
        b = pool[by_spk[spks[sb]][int(rng.integers(len(by_spk[spks[sb]])))]]
        scenario = INTERRUPTION if rng.random() < interruption_ratio else TRANSITION
        if scenario == INTERRUPTION and b.duration_s > a.duration_s:
            a, b = b, a
        if scenario == INTERRUPTION and b.duration_s == a.duration_s:
            scenario = TRANSITION
        if scenario == INTERRUPTION and max_overlap_s is not None and b.duration_s > max_overlap_s:
            scenario = TRANSITION
        spec = sample_spec(a.duration_s, b.duration_s, scenario, rng, min_overlap_s, frame_rate,
                           max_overlap_s)
        out.append(mix(a, b, spec))
    return out


def concatenate(streams: Sequence[AnnotatedStream], gap_s: float = 1.0) -> AnnotatedStream:
    """Sequential composition with ``gap_s`` of silence between items."""
    segs, emb, t = [], {}, 0.0
    audio = []
    has_audio = all(s.audio is not None for s in streams)
    for i, s in enumerate(streams):
        segs += [_shift(x, t) for x in s.segments]
        emb.update(s.embeddings)
        if has_audio:
            audio.append(s.audio.samples)
            if i < len(streams) - 1:
                audio.append(np.zeros(int(round(gap_s * SAMPLE_RATE)), dtype=np.int16))
        t = round(t + s.duration_s + (gap_s if i < len(streams) - 1 else 0.0), 6)
    au = AudioStream(np.concatenate(audio)) if has_audio and audio else None
    return AnnotatedStream(segs, t, au, emb)


# ---------------------------------------------------------------- statistics

@dataclass
class OverlapStats:
    total_s: float
    overlap_s: float
    by_cardinality: dict[int, float]
    instances: list[float]
    bin_width_s: float = 0.5
    histogram: list[tuple[float, float, int, float]] = field(default_factory=list)
    cumulative: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.overlap_s / self.total_s if self.total_s > 0 else 0.0

    def duration_share_longer_than(self, x: float) -> float:
        total = sum(self.instances)
        return sum(d for d in self.instances if d > x) / total if total > 0 else 0.0

    def count_share_longer_than(self, x: float) -> float:
        return sum(1 for d in self.instances if d > x) / len(self.instances) if self.instances else 0.0


def activity_sweep(segments: Sequence[Segment], duration_s: float) -> list[tuple[float, float, int]]:
    """Piecewise-constant count of simultaneously active speakers."""
    events: dict[float, int] = {0.0: 0, duration_s: 0}
    for s in segments:
        events[s.start_s] = events.get(s.start_s, 0) + 1
        events[s.end_s] = events.get(s.end_s, 0) - 1
    times = sorted(events)
    out = []
    level = 0
    for a, b in zip(times, times[1:]):
        level += events[a]
        if b > a:
            out.append((a, b, level))
    return out


def overlap_intervals(segments: Sequence[Segment], duration_s: float | None = None) -> list[tuple[float, float]]:
    if duration_s is None:
        duration_s = max((s.end_s for s in segments), default=0.0)
    out: list[tuple[float, float]] = []
    for a, b, n in activity_sweep(segments, duration_s):
        if n >= 2:
            if out and abs(out[-1][1] - a) < 1e-12:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
    return out


def overlap_stats(streams, bin_width_s: float = 0.5) -> OverlapStats:
    if isinstance(streams, (AnnotatedStream, Mixture)):
        streams = [streams]
    total = 0.0
    card: dict[int, float] = {}
    inst: list[float] = []
    for s in streams:
        st = s.stream if isinstance(s, Mixture) else s
        total += st.duration_s
        for a, b, n in activity_sweep(st.segments, st.duration_s):
            card[n] = card.get(n, 0.0) + (b - a)
        inst += [b - a for a, b in overlap_intervals(st.segments, st.duration_s)]
    ov = sum(d for n, d in card.items() if n >= 2)
    stats = OverlapStats(total, ov, dict(sorted(card.items())), inst, bin_width_s)
    if inst:
        nb = int(math.floor(max(inst) / bin_width_s)) + 1
        counts = np.zeros(nb, dtype=int)
        durs = np.zeros(nb)
        for d in inst:
            k = min(nb - 1, int(math.floor(d / bin_width_s)))
            counts[k] += 1
            durs[k] += d
        stats.histogram = [(k * bin_width_s, (k + 1) * bin_width_s, int(counts[k]), float(durs[k]))
                           for k in range(nb)]
        stats.cumulative = [(k * bin_width_s, stats.duration_share_longer_than(k * bin_width_s),
                             stats.count_share_longer_than(k * bin_width_s)) for k in range(nb)]
    return stats


# ---------------------------------------------------------------- bundles on disk

def write_pool(pool: Sequence[AnnotatedStream], directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    emb = {}
    for i, s in enumerate(pool):
        write_annotation(s.segments, d / f"utt{i:05d}.tsv")
        if s.audio is not None:
            write_wav(s.audio, d / f"utt{i:05d}.wav")
        emb.update(s.embeddings)
    write_embeddings(sorted(emb.items()), d / "embeddings.tsv")


def read_pool(directory, vocab: Vocabulary | None = None) -> list[AnnotatedStream]:
    d = Path(directory)
    if not (d / "embeddings.tsv").exists():
        raise FileNotFoundError(f"{d}: missing embeddings.tsv")
    emb = dict(read_embeddings(d / "embeddings.tsv"))
    pool = []
    for p in sorted(d.glob("utt*.tsv")):
        segs = read_annotation(p, vocab)
        if not segs:
            continue
        spks = {s.speaker for s in segs}
        if len(spks) != 1:
            raise ValueError(f"{p}: pool items must be single-speaker")
        wav = p.with_suffix(".wav")
        audio = read_wav(wav) if wav.exists() else None
        dur = audio.duration_s if audio is not None else max(s.end_s for s in segs)
        spk = spks.pop()
        pool.append(AnnotatedStream(segs, dur, audio, {spk: emb[spk]} if spk in emb else {}))
    return pool


def write_bundle(stream: AnnotatedStream, directory, overlap: Sequence[tuple[float, float]] | None = None) -> None:
    """Per-speaker annotation TSVs, ``overlap.tsv``, ``embeddings.tsv`` and optional WAV."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for spk in stream.speakers:
        write_annotation(stream.speaker_segments(spk), d / f"spk_{spk}.tsv")
    if overlap is None:
        overlap = overlap_intervals(stream.segments, stream.duration_s)
    (d / "overlap.tsv").write_text("".join(f"{a:.3f}\t{b:.3f}\n" for a, b in overlap), encoding="utf-8")
    write_embeddings(sorted(stream.embeddings.items()), d / "embeddings.tsv")
    (d / "duration.txt").write_text(f"{stream.duration_s:.3f}\n", encoding="utf-8")
    if stream.audio is not None:
        write_wav(stream.audio, d / "audio.wav")


def read_bundle(directory, vocab: Vocabulary | None = None) -> AnnotatedStream:
    d = Path(directory)
    files = sorted(d.glob("spk_*.tsv"))
    if not files:
        raise FileNotFoundError(f"{d}: no spk_*.tsv reference files")
    segs = [s for p in files for s in read_annotation(p, vocab)]
    emb = dict(read_embeddings(d / "embeddings.tsv")) if (d / "embeddings.tsv").exists() else {}
    wav = d / "audio.wav"
    audio = read_wav(wav) if wav.exists() else None
    if (d / "duration.txt").exists():
        dur = float((d / "duration.txt").read_text().strip())
    else:
        dur = max((s.end_s for s in segs), default=0.0)
    return AnnotatedStream(segs, dur, audio, emb)


def read_overlap_tsv(path) -> list[tuple[float, float]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            a, b = line.split("\t")
            out.append((float(a), float(b)))
    return out


# ---------------------------------------------------------------- toy token-stream task

@dataclass
class ToyTaskConfig:
    n_symbols: int = 7          # plus blank => V = 8
    dim: int = 16
    n_speakers: int = 30
    min_tokens: int = 2
    max_tokens: int = 4
    spacing: int = 3            # frames per token slot
    jitter: float = 0.05
    max_cos: float = 0.3
    interruption_ratio: float = 0.5

    @property
    def n_labels(self) -> int:
        return self.n_symbols + 1

    @property
    def n_inputs(self) -> int:
        return self.n_labels * self.dim


def toy_speakers(cfg: ToyTaskConfig, seed: int) -> np.ndarray:
    return speaker_embeddings(cfg.n_speakers, cfg.dim, make_rng(seed, "toy-speakers"), cfg.max_cos)


def toy_corpus(n: int, cfg: ToyTaskConfig, speakers: np.ndarray, rng: np.random.Generator):
    """Two-speaker token-frame mixtures for the FiLM toy model.

    A frame where speaker s emits label k contributes ``gain * onehot(k) (x) e_s``
    to the input, so speaker identity is only recoverable jointly with the
    conditioning embedding. Each item also names a random non-speaking speaker.
    """
    from .acoustic import ToyExample

    V, D, sp = cfg.n_labels, cfg.dim, cfg.spacing
    out = []
    for _ in range(n):
        a, b, c = rng.choice(len(speakers), 3, replace=False)
        la = [int(x) for x in rng.integers(1, V, size=rng.integers(cfg.min_tokens, cfg.max_tokens + 1))]
        lb = [int(x) for x in rng.integers(1, V, size=rng.integers(cfg.min_tokens, cfg.max_tokens + 1))]
        if len(lb) > len(la):
            la, lb = lb, la
        gain_b = 1.0
        if rng.random() < cfg.interruption_ratio:
            off = int(rng.integers(0, (len(la) - len(lb)) * sp + 1))
            gain_b = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
        else:
            off = int(rng.integers(1, len(la) * sp))
        T = max(len(la) * sp, off + len(lb) * sp) + 1
        x = np.zeros((T, V, D))
        for k, lab in enumerate(la):
            x[k * sp, lab] += speakers[a]
        for k, lab in enumerate(lb):
            x[off + k * sp + 1, lab] += gain_b * speakers[b]
        out.append(ToyExample(
            x.reshape(T, V * D), {"A": la, "B": lb},
            {"A": jitter_embedding(speakers[a], cfg.jitter, rng),
             "B": jitter_embedding(speakers[b], cfg.jitter, rng)},
            jitter_embedding(speakers[c], cfg.jitter, rng)))
    return out

"""Domain types, corpus file formats and seeded randomness."""

from __future__ import annotations

import math
import wave
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_RATE = 16000
NONSPEECH = "<nonspeech>"
BLANK = "<b>"
SPACE = " "


class FormatError(ValueError):
    """Malformed corpus file; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------- randomness

def make_rng(seed: int, *keys) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional path of derivation keys.

    Keys may be ints or strings; strings are hashed with CRC32 so derived
    streams are stable across processes and platforms.
    """
    spawn = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=spawn)
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------- vocabulary

@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    blank_index: int = 0

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary symbols must be unique")
        if not 0 <= self.blank_index < len(self.tokens):
            raise ValueError("blank_index out of range")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def characters(cls, alphabet: str = "abcdefghijklmnopqrstuvwxyz") -> "Vocabulary":
        return cls((BLANK, SPACE) + tuple(alphabet), 0)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def blank(self) -> int:
        return self.blank_index

    @property
    def space(self) -> int | None:
        return self._index.get(SPACE)

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def encode(self, words: Sequence[str]) -> list[int]:
        """Label ids for a word sequence: characters joined by the space token."""
        labels: list[int] = []
        for i, w in enumerate(words):
            if i and self.space is not None:
                labels.append(self.space)
            for ch in w:
                if ch not in self._index or self._index[ch] == self.blank_index:
                    raise KeyError(ch)
                labels.append(self._index[ch])
        return labels

    def decode(self, labels: Iterable[int]) -> list[str]:
        text = "".join(self.tokens[i] for i in labels if i != self.blank_index)
        return text.split()

    def validate_words(self, words: Sequence[str]) -> None:
        for w in words:
            for ch in w:
                if ch not in self._index or ch in (BLANK, SPACE):
                    raise KeyError(ch)


DEFAULT_VOCAB = Vocabulary.characters()


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class AudioStream:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise ValueError("audio must be mono")
        object.__setattr__(self, "samples", s.astype(np.int16, copy=False))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float
    speaker: str
    words: tuple[str, ...] = ()

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise ValueError(f"invalid segment times [{self.start_s}, {self.end_s})")
        if not self.speaker:
            raise ValueError("empty speaker id")
        object.__setattr__(self, "words", tuple(self.words))

    @property
    def text(self) -> str:
        return " ".join(self.words)

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


@dataclass
class AnnotatedStream:
    """Audio (optional in symbolic mode) plus time-aligned speaker segments."""

    segments: list[Segment]
    duration_s: float
    audio: AudioStream | None = None
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.segments = sorted(self.segments, key=lambda s: (s.start_s, s.speaker))
        if self.audio is not None:
            self.duration_s = self.audio.duration_s
        by_spk: dict[str, float] = {}
        for s in self.segments:
            if s.end_s > self.duration_s + 1e-9:
                raise ValueError(f"segment {s} exceeds stream duration {self.duration_s}")
            if by_spk.get(s.speaker, -math.inf) > s.start_s + 1e-9:
                raise ValueError(f"overlapping segments for speaker {s.speaker}")
            by_spk[s.speaker] = s.end_s

    @property
    def speakers(self) -> list[str]:
        return sorted({s.speaker for s in self.segments if s.speaker != NONSPEECH})

    def speaker_segments(self, speaker: str) -> list[Segment]:
        return [s for s in self.segments if s.speaker == speaker]


# ---------------------------------------------------------------- annotation TSV

def read_annotation(path, vocab: Vocabulary | None = None) -> list[Segment]:
    segments = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise FormatError("start/end are not numbers", lineno) from None
        if not end > start:
            raise FormatError(f"end {end} <= start {start}", lineno)
        if start < 0:
            raise FormatError("negative start time", lineno)
        words = tuple(parts[3].split())
        if vocab is not None:
            try:
                vocab.validate_words(words)
            except KeyError as e:
                raise FormatError(f"unknown token {e.args[0]!r}", lineno) from None
        if not parts[2]:
            raise FormatError("empty speaker id", lineno)
        segments.append(Segment(start, end, parts[2], words))
    segments.sort(key=lambda s: (s.start_s, s.speaker))
    return segments


def format_time(t: float) -> str:
    return f"{t:.3f}"


def write_annotation(segments: Sequence[Segment], path) -> None:
    lines = [
        f"{format_time(s.start_s)}\t{format_time(s.end_s)}\t{s.speaker}\t{s.text}\n"
        for s in segments
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------- embedding TSV

def read_embeddings(path) -> list[tuple[str, np.ndarray]]:
    out = []
    dim = None
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            spk, values = line.split("\t")
            vec = np.array([float(x) for x in values.split(",")])
        except ValueError:
            raise FormatError("expected speaker_id<TAB>v1,v2,...", lineno) from None
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise FormatError(f"dimension {len(vec)} differs from {dim}", lineno)
        try:
            out.append((spk, normalize(vec)))
        except ValueError:
            raise FormatError("zero vector cannot be normalized", lineno) from None
    return out


def write_embeddings(items: Iterable[tuple[str, np.ndarray]], path) -> None:
    lines = [f"{spk}\t{','.join(f'{x:.6g}' for x in vec)}\n" for spk, vec in items]
    Path(path).write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------- WAV

def read_wav(path) -> AudioStream:
    with wave.open(str(path), "rb") as w:
        if w.getcomptype() != "NONE":
            raise FormatError(f"unsupported WAV encoding {w.getcomptype()}")
        if w.getnchannels() != 1:
            raise FormatError(f"expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise FormatError(f"expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        if w.getframerate() != SAMPLE_RATE:
            raise FormatError(f"expected {SAMPLE_RATE} Hz, got {w.getframerate()} Hz")
        data = w.readframes(w.getnframes())
    return AudioStream(np.frombuffer(data, dtype="<i2").copy())


def write_wav(audio: AudioStream, path) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(audio.samples.astype("<i2").tobytes())

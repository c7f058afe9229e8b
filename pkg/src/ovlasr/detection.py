"""Overlap detection head, mode post-processing and speaker-change detection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Segment

log = logging.getLogger(__name__)

SINGLE = "SINGLE"
OVERLAP = "OVERLAP"
EPS = 1e-12


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class ModeRun:
    start_s: float
    end_s: float
    label: str
    speaker: str | None = None

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def key(self):
        return (self.label, self.speaker if self.label == SINGLE else None)


@dataclass(frozen=True)
class CollarRegion:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError("collar must have start < end")


@dataclass
class OverlapHead:
    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, dim: int) -> "OverlapHead":
        return cls(np.zeros(dim), 0.0)

    @property
    def n_params(self) -> int:
        return len(self.weights) + 1

    def prob(self, hidden: np.ndarray) -> np.ndarray:
        return _sigmoid(np.asarray(hidden) @ self.weights + self.bias)

    def copy(self) -> "OverlapHead":
        return OverlapHead(self.weights.copy(), float(self.bias))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


# ---------------------------------------------------------------- head training

def head_loss(head: OverlapHead, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy and its gradient w.r.t. weights and bias."""
    z = X @ head.weights + head.bias
    # log(1+exp(z)) - y*z, stable
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    r = (_sigmoid(z) - y) / len(y)
    return loss, X.T @ r, float(r.sum())


@dataclass
class HeadTrainConfig:
    lr: float = 5.0
    epochs: int = 200
    batch_size: int = 0     # 0 = full batch


def train_overlap_head(X: np.ndarray, y: np.ndarray, head: OverlapHead, hyper: HeadTrainConfig,
                       rng: np.random.Generator) -> tuple[OverlapHead, list[float]]:
    """Logistic regression on frozen features; only the head's H+1 values change."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("overlap head training data contains a single class")
    head = head.copy()
    history = []
    n = len(y)
    bs = hyper.batch_size or n
    for _ in range(hyper.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for b in range(0, n, bs):
            idx = order[b:b + bs]
            _, gw, gb = head_loss(head, X[idx], y[idx])
            head.weights -= hyper.lr * gw
            head.bias -= hyper.lr * gb
        history.append(head_loss(head, X, y)[0])
    return head, history


def head_accuracy(head: OverlapHead, X: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((head.prob(X) >= threshold) == (np.asarray(y) > 0.5)))


# ---------------------------------------------------------------- overlap detection

def frame_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal runs of equal values: ``(start, end, value)``."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    bounds = np.concatenate([[0], cuts, [len(labels)]])
    return [(int(a), int(b), int(labels[a])) for a, b in zip(bounds[:-1], bounds[1:])]


def median_smooth(flags: np.ndarray, width: int) -> np.ndarray:
    """Binary median filter of odd ``width`` with edge-value padding."""
    x = np.asarray(flags, dtype=np.int64)
    h = width // 2
    padded = np.pad(x, h, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, 2 * h + 1).sum(axis=1) * 2 > 2 * h + 1


def smooth_decisions(flags: np.ndarray, width: int = 5) -> np.ndarray:
    """Median filter, then absorb runs shorter than ``width`` (shortest, then earliest, first).

    The median filter alone leaves period-2 alternation untouched; the second pass
    removes it. Runs touching either end of the window are kept, as the median
    filter with edge padding also keeps them, unless the window would still hold
    more than ``ceil(T / width)`` runs.
    """
    if width <= 1 or len(flags) == 0:
        return np.asarray(flags, dtype=bool)
    out = median_smooth(flags, width)
    budget = math.ceil(len(out) / width)
    while True:
        runs = frame_runs(out)
        short = [r for r in runs[1:-1] if r[1] - r[0] < width]
        if not short and len(runs) > budget:
            short = [r for r in (runs[0], runs[-1]) if r[1] - r[0] < width]
        if not short:
            return out
        a, b, v = min(short, key=lambda r: (r[1] - r[0], r[0]))
        out[a:b] = not v


def detect_overlap(probs_or_output, head: OverlapHead | None = None, threshold: float = 0.5,
                   min_run_s: float = 0.0, frame_rate: float = 50.0, smooth: int = 5,
                   ) -> list[tuple[int, int, str]]:
    """Frame-level overlap decisions as label runs ``(start_frame, end_frame, label)``.

    Accepts an :class:`AcousticOutput` plus head, or a precomputed probability vector.
    """
    if head is not None:
        probs = head.prob(probs_or_output.hidden)
    else:
        probs = np.asarray(probs_or_output, dtype=np.float64)
    flags = smooth_decisions(probs >= threshold, smooth)
    runs = [(a, b, OVERLAP if v else SINGLE) for a, b, v in frame_runs(flags)]
    min_frames = round(min_run_s * frame_rate)
    if min_frames > 1 and len(runs) > 1:
        flags = flags.copy()
        for a, b, lab in runs:
            if b - a < min_frames:
                flags[a:b] = lab != OVERLAP
        runs = [(a, b, OVERLAP if v else SINGLE) for a, b, v in frame_runs(flags)]
    return runs


def overlap_flags(runs: Sequence[tuple[int, int, str]], length: int) -> np.ndarray:
    out = np.zeros(length, dtype=bool)
    for a, b, lab in runs:
        if lab == OVERLAP:
            out[a:b] = True
    return out


# ---------------------------------------------------------------- post-processing

def merge_runs(runs: Sequence[ModeRun]) -> list[ModeRun]:
    out: list[ModeRun] = []
    for r in runs:
        if out and out[-1].key() == r.key() and abs(out[-1].end_s - r.start_s) < 1e-9:
            out[-1] = replace(out[-1], end_s=r.end_s)
        else:
            out.append(r if r.label == SINGLE else replace(r, speaker=None))
    return out


def postprocess_modes(runs: Sequence[ModeRun], min_s: float = 1.0) -> list[ModeRun]:
    """Short single-speaker runs become overlap; short overlaps between the same
    speaker become that speaker; adjacent equal runs merge."""
    eps = 1e-9
    step1 = [replace(r, label=OVERLAP, speaker=None) if r.label == SINGLE and r.duration_s < min_s - eps
             else r for r in runs]
    step1 = merge_runs(step1)
    step2 = list(step1)
    for i in range(1, len(step1) - 1):
        r, left, right = step1[i], step1[i - 1], step1[i + 1]
        if (r.label == OVERLAP and r.duration_s < min_s - eps
                and left.label == SINGLE and right.label == SINGLE
                and left.speaker is not None and left.speaker == right.speaker):
            step2[i] = replace(r, label=SINGLE, speaker=left.speaker)
    return merge_runs(step2)


# ---------------------------------------------------------------- speaker change

def _collar_frames(c: CollarRegion, frame_rate: float, T: int) -> tuple[int, int]:
    return max(0, round(c.start_s * frame_rate)), min(T, round(c.end_s * frame_rate))


def collar_bce_loss(change_probs: np.ndarray, collars: Sequence[CollarRegion],
                    frame_rate: float = 50.0) -> tuple[float, np.ndarray]:
    """Frame-wise negatives outside collars, one max-pooled positive per collar."""
    p = np.clip(np.asarray(change_probs, dtype=np.float64), EPS, 1.0 - EPS)
    T = len(p)
    inside = np.zeros(T, dtype=bool)
    spans = []
    for c in collars:
        a, b = _collar_frames(c, frame_rate, T)
        if b <= a:
            log.warning("collar %.3f-%.3f is empty after frame quantization; skipped", c.start_s, c.end_s)
            continue
        inside[a:b] = True
        spans.append((a, b))
    grad = np.zeros(T)
    out = ~inside
    loss = float(-np.sum(np.log1p(-p[out])))
    grad[out] = 1.0 / (1.0 - p[out])
    for a, b in spans:
        t = a + int(np.argmax(p[a:b]))
        loss += float(-math.log(p[t]))
        grad[t] += -1.0 / p[t]
    return loss, grad


def detect_changes(change_probs: np.ndarray, threshold: float = 0.5, min_gap_s: float = 0.5,
                   frame_rate: float = 50.0) -> list[float]:
    """Local maxima above threshold; peaks closer than ``min_gap_s`` keep the higher one."""
    p = np.asarray(change_probs, dtype=np.float64)
    T = len(p)
    peaks = []
    for t in range(T):
        if p[t] < threshold:
            continue
        left = p[t - 1] if t > 0 else -np.inf
        right = p[t + 1] if t + 1 < T else -np.inf
        if p[t] > left and p[t] >= right:
            peaks.append(t)
    gap = min_gap_s * frame_rate
    kept: list[int] = []
    for t in sorted(peaks, key=lambda t: (-p[t], t)):
        if all(abs(t - k) >= gap for k in kept):
            kept.append(t)
    return [t / frame_rate for t in sorted(kept)]


@dataclass
class TurnAnnotation:
    collars: list[CollarRegion] = field(default_factory=list)
    boundaries: list[float] = field(default_factory=list)


def nonspeech_turns(segments: Sequence[Segment], context_s: float = 3.0,
                    boundary_width_s: float = 0.02) -> TurnAnnotation:
    """Speaker-change collars between turns and boundaries around long non-speech.

    A change between different speakers gets a collar over the inter-word gap.
    Non-speech longer than ``context_s`` is a turn of its own, so both of its
    edges are boundaries (each marked by a ``boundary_width_s`` collar).
    """
    out = TurnAnnotation()
    segs = sorted(segments, key=lambda s: (s.start_s, s.end_s))
    prev_end, prev_spk = None, None
    for s in segs:
        if prev_end is not None:
            gap = s.start_s - prev_end
            if gap > context_s:
                out.boundaries += [prev_end, s.start_s]
                out.collars += [CollarRegion(prev_end, prev_end + boundary_width_s),
                                CollarRegion(s.start_s - boundary_width_s, s.start_s)]
            elif s.speaker != prev_spk:
                if gap > 0:
                    out.collars.append(CollarRegion(prev_end, s.start_s))
                    out.boundaries.append(prev_end)
                else:
                    out.boundaries.append(s.start_s)
        if prev_end is None or s.end_s >= prev_end:
            prev_end, prev_spk = s.end_s, s.speaker
    return out


def truth_change_frames(segments: Sequence[Segment], frame_rate: float, context_s: float = 3.0) -> list[int]:
    return sorted({round(b * frame_rate) for b in nonspeech_turns(segments, context_s).boundaries})

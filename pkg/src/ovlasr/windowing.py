"""Window unfolding of an unbounded frame stream and exactly-once aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class WindowingConfig:
    window_s: float = 15.0
    edge_s: float = 3.0
    operation_s: float = 9.0
    frame_rate: float = 50.0

    def __post_init__(self):
        if min(self.window_s, self.edge_s, self.operation_s, self.frame_rate) <= 0:
            raise ValueError("windowing parameters must be positive")
        if abs(self.window_s - (self.operation_s + 2 * self.edge_s)) > 1e-9:
            raise ValueError("window_s must equal operation_s + 2*edge_s")
        for name in ("window_s", "edge_s", "operation_s"):
            n = getattr(self, name) * self.frame_rate
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"{name}*frame_rate must be integral")

    @property
    def window_frames(self) -> int:
        return round(self.window_s * self.frame_rate)

    @property
    def edge_frames(self) -> int:
        return round(self.edge_s * self.frame_rate)

    @property
    def hop_frames(self) -> int:
        return round(self.operation_s * self.frame_rate)

    @classmethod
    def from_frames(cls, edge: int, operation: int, frame_rate: float = 1.0) -> "WindowingConfig":
        return cls((operation + 2 * edge) / frame_rate, edge / frame_rate, operation / frame_rate, frame_rate)


@dataclass
class Window:
    index: int
    global_start_frame: int
    frames: Any
    is_last: bool = False

    @property
    def length(self) -> int:
        return len(self.frames)


def num_windows(length: int, cfg: WindowingConfig) -> int:
    if length <= 0:
        raise ValueError("empty stream")
    w, hop = cfg.window_frames, cfg.hop_frames
    if length <= w:
        return 1
    return 1 + -(-(length - w) // hop)


def window_span(index: int, length: int, cfg: WindowingConfig) -> tuple[int, int]:
    start = index * cfg.hop_frames
    return start, min(start + cfg.window_frames, length)


def operation_span(index: int, n_windows: int, length: int, cfg: WindowingConfig) -> tuple[int, int]:
    """Global frame range emitted by window ``index`` during aggregation."""
    start, end = window_span(index, length, cfg)
    lo = start if index == 0 else start + cfg.edge_frames
    hi = end if index == n_windows - 1 else start + cfg.edge_frames + cfg.hop_frames
    return lo, hi


def unfold(stream_frames: Sequence, cfg: WindowingConfig) -> list[Window]:
    length = len(stream_frames)
    n = num_windows(length, cfg)
    out = []
    for i in range(n):
        a, b = window_span(i, length, cfg)
        out.append(Window(i, a, stream_frames[a:b], is_last=i == n - 1))
    return out


def aggregate(windows: Sequence[Window], cfg: WindowingConfig):
    """Stitch per-window frame outputs back into one stream.

    Each output frame comes from exactly one window: its operation region,
    plus the leading edge of the first window and the trailing edge of the
    last one.
    """
    if not windows:
        raise ValueError("no windows")
    n = len(windows)
    length = windows[-1].global_start_frame + windows[-1].length
    if num_windows(length, cfg) != n:
        raise ValueError("window list inconsistent with config")
    parts = []
    for i, w in enumerate(windows):
        if w.index != i or w.global_start_frame != i * cfg.hop_frames:
            raise ValueError(f"window {i} inconsistent with config")
        expected = window_span(i, length, cfg)
        if w.length != expected[1] - expected[0]:
            raise ValueError(f"window {i} has {w.length} frames, expected {expected[1] - expected[0]}")
        lo, hi = operation_span(i, n, length, cfg)
        parts.append(w.frames[lo - w.global_start_frame:hi - w.global_start_frame])
    if isinstance(parts[0], np.ndarray):
        return np.concatenate(parts)
    out = []
    for p in parts:
        out.extend(p)
    return out


class StreamingWindower:
    """Incremental unfolding for a stream whose length is learned only at the end.

    Window ``i`` is released once a frame beyond its coverage has arrived (so it
    is certainly not the last) or when the stream is closed. This yields the
    same windows, in the same order, as :func:`unfold` on the full stream.
    """

    def __init__(self, cfg: WindowingConfig):
        self.cfg = cfg
        self.available = 0
        self.next_index = 0
        self.closed = False

    def push(self, n_frames: int) -> list[tuple[int, int, int, bool]]:
        self.available += n_frames
        return self._release()

    def close(self) -> list[tuple[int, int, int, bool]]:
        self.closed = True
        return self._release()

    def _release(self) -> list[tuple[int, int, int, bool]]:
        """Returns (index, start_frame, end_frame, is_last) tuples."""
        out = []
        cfg = self.cfg
        while True:
            i = self.next_index
            start = i * cfg.hop_frames
            end = start + cfg.window_frames
            if self.closed:
                if self.available == 0:
                    return out
                n = num_windows(self.available, cfg)
                if i >= n:
                    return out
                a, b = window_span(i, self.available, cfg)
                out.append((i, a, b, i == n - 1))
            elif self.available > end:
                out.append((i, start, end, False))
            else:
                return out
            self.next_index += 1


def iter_operation_spans(length: int, cfg: WindowingConfig) -> Iterator[tuple[int, int, int]]:
    n = num_windows(length, cfg)
    for i in range(n):
        lo, hi = operation_span(i, n, length, cfg)
        yield i, lo, hi

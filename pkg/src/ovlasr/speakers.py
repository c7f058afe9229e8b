"""Speaker profiles, online identification with enrollment, and embedding selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import make_rng, normalize, read_embeddings, write_embeddings

MEAN, MEDIAN, MEDOID, LAST = "MEAN", "MEDIAN", "MEDOID", "LAST"
METHODS = (MEAN, MEDIAN, MEDOID, LAST)


@dataclass
class SpeakerProfile:
    id: str
    history: list[np.ndarray]
    last_active_s: float = 0.0

    def __post_init__(self):
        if not self.history:
            raise ValueError("speaker profile needs at least one embedding")
        self.history = [normalize(e) for e in self.history]


def medoid_index(history) -> int:
    """Index minimizing mean cosine distance to the other elements (earliest on ties)."""
    H = np.asarray(history, dtype=np.float64)
    n = len(H)
    if n == 1:
        return 0
    dist = 1.0 - H @ H.T
    np.fill_diagonal(dist, 0.0)
    mean = dist.sum(axis=1) / (n - 1)
    return int(np.argmin(mean))     # argmin returns the first minimum


def select_embedding(profile: SpeakerProfile, method: str = LAST) -> np.ndarray:
    h = profile.history
    if len(h) == 1:
        return h[0].copy()
    if method == LAST:
        return h[-1].copy()
    if method == MEAN:
        return normalize(np.mean(h, axis=0))
    if method == MEDIAN:
        return normalize(np.median(h, axis=0))
    if method == MEDOID:
        return h[medoid_index(h)].copy()
    raise ValueError(f"unknown selection method {method!r}; expected one of {METHODS}")


@dataclass
class SpeakerStore:
    accept_threshold: float = 0.6
    snippet_s: float = 2.0
    profiles: dict[str, SpeakerProfile] = field(default_factory=dict)
    _counter: int = 0
    _touch: int = 0
    _order: dict[str, tuple[float, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.profiles)

    def __contains__(self, spk: str) -> bool:
        return spk in self.profiles

    def _new_id(self) -> str:
        while True:
            self._counter += 1
            sid = f"spk{self._counter:04d}"
            if sid not in self.profiles:
                return sid

    def _mark(self, spk: str, now_s: float) -> None:
        self._touch += 1
        p = self.profiles[spk]
        p.last_active_s = max(p.last_active_s, now_s)
        self._order[spk] = (p.last_active_s, self._touch)

    def enroll(self, e: np.ndarray, now_s: float = 0.0, speaker_id: str | None = None) -> str:
        sid = speaker_id or self._new_id()
        if sid in self.profiles:
            raise ValueError(f"speaker {sid} already enrolled")
        self.profiles[sid] = SpeakerProfile(sid, [normalize(e)], now_s)
        self._mark(sid, now_s)
        return sid

    def match(self, e: np.ndarray, method: str = LAST) -> tuple[str | None, float]:
        """Best-scoring profile and its cosine similarity; the store is not modified."""
        best, best_sim = None, -np.inf
        for sid in sorted(self.profiles):
            sim = float(np.dot(e, select_embedding(self.profiles[sid], method)))
            if sim > best_sim:
                best, best_sim = sid, sim
        return best, best_sim

    def identify(self, e: np.ndarray, now_s: float) -> str:
        e = normalize(e)
        sid, sim = self.match(e, LAST)
        if sid is None or sim < self.accept_threshold:
            return self.enroll(e, now_s)
        self.profiles[sid].history.append(e)
        self._mark(sid, now_s)
        return sid

    def recency(self) -> list[str]:
        """All ids, most recently active first."""
        return sorted(self.profiles, key=lambda s: self._order[s], reverse=True)

    def recent_speakers(self, n: int) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self.recency()[:n]

    def copy(self) -> "SpeakerStore":
        out = SpeakerStore(self.accept_threshold, self.snippet_s)
        out.profiles = {k: SpeakerProfile(p.id, [h.copy() for h in p.history], p.last_active_s)
                        for k, p in self.profiles.items()}
        out._counter, out._touch, out._order = self._counter, self._touch, dict(self._order)
        return out

    # ------------------------------------------------------------ snapshot

    def save(self, emb_path, recency_path) -> None:
        """One embedding line per history element plus ``id<TAB>last_active_s`` lines."""
        items = [(sid, h) for sid in sorted(self.profiles) for h in self.profiles[sid].history]
        write_embeddings(items, emb_path)
        lines = [f"{sid}\t{self.profiles[sid].last_active_s:.3f}\n" for sid in reversed(self.recency())]
        Path(recency_path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, emb_path, recency_path, **kw) -> "SpeakerStore":
        store = cls(**kw)
        hist: dict[str, list[np.ndarray]] = {}
        for sid, e in read_embeddings(emb_path):
            hist.setdefault(sid, []).append(e)
        for line in Path(recency_path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            sid, t = line.split("\t")
            if sid not in hist:
                raise ValueError(f"recency entry for unknown speaker {sid}")
            store.profiles[sid] = SpeakerProfile(sid, hist.pop(sid), float(t))
            store._mark(sid, float(t))
        if hist:
            raise ValueError(f"speakers without recency entries: {sorted(hist)}")
        return store


def identify(store: SpeakerStore, e: np.ndarray, now_s: float) -> str:
    return store.identify(e, now_s)


def recent_speakers(store: SpeakerStore, n: int) -> list[str]:
    return store.recent_speakers(n)


# An embedding source maps a time interval to an embedding of whoever speaks
# there, or None when it cannot tell.
EmbeddingSource = Callable[[float, float], "np.ndarray | None"]


class TruthEmbeddingSource:
    """Stand-in extractor: the dominant reference speaker's embedding, jittered."""

    def __init__(self, segments, embeddings: dict[str, np.ndarray], jitter: float = 0.0, seed: int = 0):
        self.segments = list(segments)
        self.embeddings = embeddings
        self.jitter = jitter
        self.seed = seed

    def dominant(self, a: float, b: float) -> str | None:
        cover: dict[str, float] = {}
        for s in self.segments:
            ov = min(b, s.end_s) - max(a, s.start_s)
            if ov > 0 and s.speaker in self.embeddings:
                cover[s.speaker] = cover.get(s.speaker, 0.0) + ov
        if not cover:
            return None
        return max(sorted(cover), key=lambda k: cover[k])

    def __call__(self, a: float, b: float):
        spk = self.dominant(a, b)
        if spk is None:
            return None
        e = self.embeddings[spk]
        if self.jitter > 0:
            rng = make_rng(self.seed, "embed", round(a * 1000), round(b * 1000))
            e = e + rng.normal(0.0, self.jitter, len(e))
        return normalize(e)

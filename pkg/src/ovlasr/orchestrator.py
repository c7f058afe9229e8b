"""Windowed SI/SC pipeline: mode switching, decoder pool, sentence emission, cost."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .acoustic import AcousticOutput, FrameTruth, OracleParams, frame_truth, oracle_si_forward
from .core import Vocabulary, make_rng
from .ctc import DecoderState, transfer_context
from .detection import (OVERLAP, SINGLE, HeadTrainConfig, ModeRun, OverlapHead, detect_changes,
                        detect_overlap, merge_runs, postprocess_modes, train_overlap_head)
from .lm import BOS, NGramLM
from .speakers import LAST, METHODS, SpeakerStore, select_embedding
from .windowing import WindowingConfig, num_windows, window_span

log = logging.getLogger(__name__)

UNATTRIBUTED = "<unattributed>"
SI_ONLY, SI_SC, SC_ONLY = "SI", "SI+SC", "SC"


class AcousticModels(Protocol):
    def si(self, start: int, end: int) -> AcousticOutput: ...


class ModelContractError(RuntimeError):
    pass


class SIOnlyModels:
    """Exposes only the SI path of a model pair (an SC-free build)."""

    def __init__(self, models):
        self._m = models

    def si(self, start: int, end: int) -> AcousticOutput:
        return self._m.si(start, end)


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class CostModel:
    feature_share: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.feature_share < 1.0:
            raise ValueError("feature_share must lie in (0, 1)")

    @property
    def transformer_share(self) -> float:
        return 1.0 - self.feature_share

    def window_cost(self, k: int) -> float:
        # f + max(1,k)*t written so that k <= 1 gives exactly 1.0
        return 1.0 + (max(1, k) - 1) * self.transformer_share


@dataclass
class OrchestratorConfig:
    n_recent: int = 2
    embed_method: str = LAST
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    cost: CostModel = field(default_factory=CostModel)
    overlap_threshold: float = 0.5
    change_threshold: float = 0.5
    change_min_gap_s: float = 0.5
    accept_threshold: float = 0.6
    min_mode_s: float = 1.0
    smooth_frames: int = 5
    beam_width: int = 8
    label_prune: float = 3.0        # skip labels this far (nats) below the frame's best
    pause_s: float = 0.8
    single_from_sc: bool = True     # text of SINGLE sub-runs inside MULTI windows
    system: str = SI_SC
    force_single: bool = False

    def __post_init__(self):
        if self.n_recent < 1:
            raise ValueError("n_recent must be >= 1")
        if self.embed_method not in METHODS:
            raise ValueError(f"embed_method must be one of {METHODS}")
        if self.system not in (SI_ONLY, SI_SC, SC_ONLY):
            raise ValueError(f"unknown system {self.system!r}")
        if self.system == SI_ONLY:
            self.force_single = True


# ---------------------------------------------------------------- outputs

@dataclass(frozen=True)
class HypWord:
    text: str
    start_s: float
    end_s: float


@dataclass(frozen=True)
class Sentence:
    speaker: str
    start_s: float
    end_s: float
    text: str
    words: tuple[HypWord, ...] = ()

    def record(self) -> str:
        return f"{self.speaker}\t{self.start_s:.3f}\t{self.end_s:.3f}\t{self.text}"


@dataclass
class SpeakerTranscript:
    speaker: str
    words: list[HypWord] = field(default_factory=list)
    sentences: list[Sentence] = field(default_factory=list)


@dataclass(frozen=True)
class WindowRecord:
    index: int
    start: int
    end: int
    op_start: int
    op_end: int
    mode: str
    k: int
    cost: float


@dataclass
class PipelineResult:
    transcripts: list[SpeakerTranscript]
    timeline: list[ModeRun]
    windows: list[WindowRecord]
    sentences: list[Sentence]
    detected_overlap: list[tuple[int, int]]   # raw detector runs, global frames
    trace: list[tuple[int, int, tuple[int, ...], str]]
    hw: float

    def transcript(self, speaker: str) -> SpeakerTranscript | None:
        return next((t for t in self.transcripts if t.speaker == speaker), None)


# ---------------------------------------------------------------- small pieces

def mode_decision(timeline: Sequence[ModeRun], op_start_s: float, op_end_s: float) -> str:
    """MULTI iff an OVERLAP run intersects the operation region."""
    eps = 1e-9
    covered = op_start_s
    for r in sorted(timeline, key=lambda r: r.start_s):
        if r.end_s <= op_start_s + eps or r.start_s >= op_end_s - eps:
            continue
        if r.start_s > covered + eps:
            raise ValueError(f"timeline gap at {covered:.3f}s")
        covered = max(covered, r.end_s)
    if covered < op_end_s - eps:
        raise ValueError(f"timeline gap at {covered:.3f}s")
    for r in timeline:
        if r.label == OVERLAP and r.start_s < op_end_s - eps and r.end_s > op_start_s + eps:
            return "MULTI"
    return "SINGLE"


def cost_report(windows: Sequence[WindowRecord] | Sequence[tuple[str, int]], cost: CostModel) -> float:
    """Mean per-window cost; a window is charged f + max(1, k)*t."""
    if not windows:
        return 1.0
    ks = [w.k if isinstance(w, WindowRecord) else w[1] for w in windows]
    return float(np.mean([cost.window_cost(k) for k in ks]))


def tokens_to_words(tokens: Sequence[tuple[int, int]], vocab: Vocabulary, frame_rate: float,
                    pause_s: float) -> list[tuple[str, int, int, int]]:
    """Group character tokens into words: ``(text, first_frame, end_frame, last_token_index)``.

    Words break at the space label and at character gaps of at least ``pause_s``.
    """
    out = []
    cur: list[tuple[int, int]] = []
    last_i = -1
    gap = pause_s * frame_rate
    space = vocab.space

    def close():
        if cur:
            text = "".join(vocab.tokens[l] for l, _ in cur)
            out.append((text, cur[0][1], cur[-1][1] + 1, last_i))

    for i, (lab, f) in enumerate(tokens):
        if lab == space:
            close()
            cur = []
            continue
        if cur and f - cur[-1][1] >= gap:
            close()
            cur = []
        cur.append((lab, f))
        last_i = i
    close()
    return out


def punctuate_stub(words: Sequence[HypWord], pause_s: float = 0.8) -> list[list[HypWord]]:
    """Split timed words into sentences at pauses of at least ``pause_s``."""
    out: list[list[HypWord]] = []
    for w in words:
        if out and w.start_s - out[-1][-1].end_s < pause_s - 1e-9:
            out[-1].append(w)
        else:
            out.append([w])
    return out


def sentence_text(words: Sequence[HypWord]) -> str:
    s = " ".join(w.text for w in words)
    return (s[:1].upper() + s[1:] + ".") if s else ""


def merge_transcripts(transcripts: Sequence[SpeakerTranscript]) -> list[str]:
    sents = [s for t in transcripts for s in t.sentences]
    sents.sort(key=lambda s: (s.start_s, s.speaker))
    return [f"[{s.speaker}] {s.text}" for s in sents]


# ---------------------------------------------------------------- pipeline

class Pipeline:
    """Processes windows in stream order and emits committed sentences."""

    def __init__(self, cfg: OrchestratorConfig, models, embed_source, store: SpeakerStore,
                 head: OverlapHead | None, vocab: Vocabulary, lm: NGramLM | None = None):
        if not cfg.force_single and head is None:
            raise ValueError("an overlap head is required unless the detector is forced negative")
        self.cfg = cfg
        self.models = models
        self.source = embed_source
        self.store = store
        self.head = head
        self.vocab = vocab
        self.fr = cfg.windowing.frame_rate
        n = cfg.n_recent
        self.decoders = [DecoderState(vocab, lm, cfg.beam_width, cfg.label_prune) for _ in range(n)]
        self._taken = [0] * n
        self._used = [-1] * n
        self.active: int | None = None
        self.pending: dict[str, list[tuple[int, int]]] = {}
        self.words: dict[str, list[HypWord]] = {}
        self.sentences: list[Sentence] = []
        self.timeline: list[ModeRun] = []
        self.windows: list[WindowRecord] = []
        self.detected: list[tuple[int, int]] = []
        self.trace: list[tuple[int, int, tuple[int, ...], str]] = []
        self.processed = 0
        self._finished = False

    # ------------------------------------------------------------ decoders

    def _collect(self, i: int) -> None:
        d = self.decoders[i]
        new = d.emitted[self._taken[i]:]
        self._taken[i] = len(d.emitted)
        if new:
            spk = d.affiliation or UNATTRIBUTED
            buf = self.pending.setdefault(spk, [])
            buf.extend(new)
            buf.sort(key=lambda x: x[1])

    def _finalize(self, i: int) -> None:
        self.decoders[i].finalize()
        self._collect(i)

    def _decoder_for(self, spk: str | None, busy: set[int] = frozenset()) -> int:
        for i, d in enumerate(self.decoders):
            if d.affiliation == spk:
                return i
        free = [i for i in range(len(self.decoders)) if i not in busy]
        if not free:
            raise ModelContractError("decoder pool exhausted")
        unaff = [i for i in free if self.decoders[i].affiliation is None]
        i = unaff[0] if unaff else min(free, key=lambda j: (self._used[j], j))
        self._finalize(i)
        if i != self.active:
            # a reassigned decoder starts clean; SINGLE hand-overs then seed it via transfer
            self.decoders[i].reset((BOS,), None)
        self.decoders[i].affiliation = spk
        return i

    def _feed(self, i: int, logits: np.ndarray, a: int, fa: int, fb: int) -> None:
        d = self.decoders[i]
        for t in range(fa, fb):
            d.step(logits[t - a], t)
        self._used[i] = fb

    # ------------------------------------------------------------ segmentation

    def _provisional(self, emb, prov: list[tuple[str, np.ndarray]]) -> str:
        sid, sim = self.store.match(emb, LAST)
        if sid is not None and sim >= self.store.accept_threshold:
            return sid
        for name, e in prov:
            if float(emb @ e) >= self.store.accept_threshold:
                return name
        name = f"?{len(prov)}"
        prov.append((name, emb))
        return name

    def _segment(self, si: AcousticOutput, a: int, b: int) -> list[ModeRun]:
        cfg, fr = self.cfg, self.fr
        T = b - a
        if cfg.force_single:
            raw = [(0, T, SINGLE)]
        else:
            raw = detect_overlap(si, self.head, cfg.overlap_threshold, frame_rate=fr,
                                 smooth=cfg.smooth_frames)
        changes = [round(c * fr) for c in detect_changes(si.change_prob, cfg.change_threshold,
                                                          cfg.change_min_gap_s, fr)]
        prov: list[tuple[str, np.ndarray]] = []
        runs = []
        for s, e, lab in raw:
            if lab == OVERLAP:
                runs.append(ModeRun((a + s) / fr, (a + e) / fr, OVERLAP))
                continue
            bounds = [s] + [c for c in changes if s < c < e] + [e]
            for x, y in zip(bounds, bounds[1:]):
                emb = self.source((a + x) / fr, (a + y) / fr)
                spk = None if emb is None else self._provisional(emb, prov)
                runs.append(ModeRun((a + x) / fr, (a + y) / fr, SINGLE, spk))
        self._raw = raw
        if cfg.force_single:
            return merge_runs(runs)
        return postprocess_modes(runs, cfg.min_mode_s)

    def _identify(self, ra: int, rb: int, now: int) -> str | None:
        """Identify the speaker of a single-speaker run (enrolling if new)."""
        emb = self.source(ra / self.fr, rb / self.fr)
        if emb is None:
            return None
        return self.store.identify(emb, now / self.fr)

    # ------------------------------------------------------------ windows

    def process_window(self, index: int, a: int, b: int, is_last: bool) -> list[Sentence]:
        cfg, fr = self.cfg, self.fr
        wc = cfg.windowing
        lo = a if index == 0 else a + wc.edge_frames
        hi = b if is_last else min(b, a + wc.edge_frames + wc.hop_frames)
        if lo != self.processed:
            raise ValueError(f"window {index} starts its operation region at {lo}, expected {self.processed}")
        si = self.models.si(a, b)
        if si.frames != b - a:
            raise ModelContractError(f"SI model returned {si.frames} frames for a {b - a}-frame window")
        modes = self._segment(si, a, b)
        for s, e, lab in self._raw:
            s2, e2 = max(a + s, lo), min(a + e, hi)
            if lab == OVERLAP and e2 > s2:
                if self.detected and self.detected[-1][1] == s2:
                    self.detected[-1] = (self.detected[-1][0], e2)
                else:
                    self.detected.append((s2, e2))
        clipped = []
        for r in modes:
            ra, rb = round(r.start_s * fr), round(r.end_s * fr)
            fa, fb = max(ra, lo), min(rb, hi)
            if fb > fa:
                clipped.append((fa, fb, r.label, r.speaker, ra, rb))
        mode = mode_decision(modes, lo / fr, hi / fr)

        # an SC-only system has no SI text path, so it conditions on the recent speakers everywhere
        fan_out = mode == "MULTI" or cfg.system == SC_ONLY
        recent = self.store.recent_speakers(cfg.n_recent) if fan_out and len(self.store) else []
        targets = {s: select_embedding(self.store.profiles[s], cfg.embed_method) for s in recent}
        sc_out: dict[str, AcousticOutput] = {}

        def sc(spk: str) -> AcousticOutput:
            if spk not in sc_out:
                if not hasattr(self.models, "sc"):
                    raise ModelContractError("SC path requested but no SC model is loaded")
                e = targets.get(spk)
                if e is None:
                    e = select_embedding(self.store.profiles[spk], cfg.embed_method)
                sc_out[spk] = self.models.sc(a, b, e, spk)
            return sc_out[spk]

        if fan_out:
            for s in recent:
                sc(s)

        prev_fed: set[int] = set()
        for fa, fb, lab, _, ra, rb in clipped:
            if lab == OVERLAP and recent:
                idx = []
                for s in recent:
                    idx.append(self._decoder_for(s, busy=set(idx)))
                for s, i in zip(recent, idx):
                    self._feed(i, sc(s).ctc_logits, a, fa, fb)
                self.trace.append((fa, fb, tuple(idx), OVERLAP))
                if self.active not in idx:
                    self.active = idx[0]
                prev_fed = set(idx)
                continue
            spk = self._identify(ra, rb, fb) if lab == SINGLE else None
            if spk is None:
                # non-speech (or undetectable overlap): the running decoder keeps consuming
                if self.active is None:
                    self.active = self._decoder_for(None)
                i = self.active
                logits = si.ctc_logits
            else:
                keep = {self.active} if self.active is not None and len(self.decoders) > 1 else set()
                i = self._decoder_for(spk, busy=keep)
                if self.active is not None and self.active != i and i not in prev_fed:
                    transfer_context(self.decoders[self.active], self.decoders[i])
                    self._collect(self.active)
                    self._collect(i)
                elif self.active is not None and self.active != i:
                    self._finalize(self.active)
                use_sc = (cfg.system == SC_ONLY) or (mode == "MULTI" and spk in targets and cfg.single_from_sc)
                logits = sc(spk).ctc_logits if use_sc else si.ctc_logits
            self._feed(i, logits, a, fa, fb)
            self.trace.append((fa, fb, (i,), SINGLE))
            self.active = i
            prev_fed = {i}

        for i in range(len(self.decoders)):
            self._finalize(i)
        k = len(sc_out)
        self.windows.append(WindowRecord(index, a, b, lo, hi, mode, k,
                                         cfg.cost.window_cost(k)))
        for fa, fb, lab, spk, _, _ in clipped:
            run = ModeRun(fa / fr, fb / fr, lab, spk if lab == SINGLE else None)
            self.timeline = merge_runs(self.timeline + [run])
        self.processed = hi
        return self._emit(hi / fr, flush=False)

    def _emit(self, now_s: float, flush: bool) -> list[Sentence]:
        fr, pause = self.fr, self.cfg.pause_s
        out = []
        for spk in sorted(self.pending):
            toks = self.pending[spk]
            words = tokens_to_words(toks, self.vocab, fr, pause)
            if not words:
                continue
            timed = [HypWord(t, s / fr, e / fr) for t, s, e, _ in words]
            groups = punctuate_stub(timed, pause)
            consumed = -1
            pos = 0
            for g in groups:
                last = pos + len(g) - 1
                more = last + 1 < len(words)
                done = flush or more or now_s - g[-1].end_s >= pause - 1e-9
                if not done:
                    break
                out.append(Sentence(spk, g[0].start_s, g[-1].end_s, sentence_text(g), tuple(g)))
                self.words.setdefault(spk, []).extend(g)
                consumed = words[last][3]
                pos = last + 1
            if consumed >= 0:
                self.pending[spk] = toks[consumed + 1:]
        out.sort(key=lambda s: (s.start_s, s.speaker))
        self.sentences.extend(out)
        return out

    def finish(self) -> list[Sentence]:
        if self._finished:
            return []
        self._finished = True
        for i in range(len(self.decoders)):
            self._finalize(i)
        return self._emit(self.processed / self.fr, flush=True)

    def result(self) -> PipelineResult:
        by_spk: dict[str, SpeakerTranscript] = {}
        for s in self.sentences:
            t = by_spk.setdefault(s.speaker, SpeakerTranscript(s.speaker))
            t.sentences.append(s)
            t.words.extend(s.words)
        return PipelineResult([by_spk[k] for k in sorted(by_spk)], list(self.timeline), list(self.windows),
                              list(self.sentences), list(self.detected), list(self.trace),
                              cost_report(self.windows, self.cfg.cost))


def process_stream(n_frames: int, cfg: OrchestratorConfig, models, embed_source, store: SpeakerStore,
                   head: OverlapHead | None, vocab: Vocabulary, lm: NGramLM | None = None) -> PipelineResult:
    """Batch run over a stream of ``n_frames`` frames."""
    p = Pipeline(cfg, models, embed_source, store, head, vocab, lm)
    n = num_windows(n_frames, cfg.windowing)
    for i in range(n):
        a, b = window_span(i, n_frames, cfg.windowing)
        p.process_window(i, a, b, i == n - 1)
    p.finish()
    return p.result()


# ---------------------------------------------------------------- oracle helpers

def oracle_head_features(truths: Sequence[FrameTruth], params: OracleParams, vocab: Vocabulary,
                         seed: int) -> tuple[np.ndarray, np.ndarray]:
    X, y = [], []
    for j, tr in enumerate(truths):
        out = oracle_si_forward(tr, params, make_rng(seed, "head-features", j), vocab)
        X.append(out.hidden)
        y.append((tr.n_active >= 2).astype(float))
    return np.concatenate(X), np.concatenate(y)


def fit_oracle_head(params: OracleParams, vocab: Vocabulary, seed: int = 0, n_mixtures: int = 24,
                    hyper: HeadTrainConfig | None = None) -> tuple[OverlapHead, list[float]]:
    """Train an overlap head on SI-oracle features of freshly synthesized mixtures."""
    from .mixer import sample_corpus, synth_pool

    pool = synth_pool(8, 4, make_rng(seed, "head-pool"), vocab, dim=16)
    mixes = sample_corpus(pool, n_mixtures, make_rng(seed, "head-mix"))
    truths = [frame_truth(m.stream, vocab) for m in mixes]
    X, y = oracle_head_features(truths, params, vocab, seed)
    head = OverlapHead.zeros(X.shape[1])
    return train_overlap_head(X, y, head, hyper or HeadTrainConfig(), make_rng(seed, "head-train"))


def map_speakers(hyp_words: dict[str, Sequence[HypWord]], refs: dict[str, Sequence]) -> dict[str, str]:
    """Greedy one-to-one mapping of hypothesis ids to reference ids by time overlap."""
    score = []
    for h, words in hyp_words.items():
        for r, segs in refs.items():
            ov = sum(max(0.0, min(w.end_s, s.end_s) - max(w.start_s, s.start_s)) for w in words for s in segs)
            if ov > 0:
                score.append((-ov, h, r))
    out: dict[str, str] = {}
    used = set()
    for _, h, r in sorted(score):
        if h not in out and r not in used:
            out[h] = r
            used.add(r)
    return out

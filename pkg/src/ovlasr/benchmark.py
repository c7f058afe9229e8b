"""Seeded oracle benchmark: SI-only baseline versus SI+SC over a grid of N and methods."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .acoustic import OracleModels, OracleParams, frame_truth
from .core import DEFAULT_VOCAB, AnnotatedStream, Vocabulary, make_rng
from .detection import OverlapHead
from .evaluation import TableRow, WerBreakdown, detection_f1, region_wer
from .mixer import Mixture, overlap_intervals, sample_corpus, synth_pool
from .orchestrator import (SC_ONLY, SI_ONLY, SI_SC, CostModel, OrchestratorConfig,
                           PipelineResult, fit_oracle_head, process_stream)
from .speakers import LAST, METHODS, SpeakerStore, TruthEmbeddingSource

BASELINE_NAME = "SI model (baseline)"
SC_ONLY_NAME = "SC model only"


@dataclass
class BenchmarkConfig:
    n_mixtures: int = 100
    seed: int = 0
    noise_std: float = 0.5
    overlap_confusion: float = 0.5
    pool_speakers: int = 20
    utts_per_speaker: int = 6
    len_range: tuple[float, float] = (2.0, 16.0)
    max_overlap_s: float = 4.0
    max_distractors: int = 2        # extra enrolled speakers per stream, 0..max uniformly
    embed_jitter: float = 0.1
    feature_share: float = 0.3

    def oracle(self) -> OracleParams:
        return OracleParams(overlap_confusion=self.overlap_confusion, noise_std=self.noise_std,
                            change_noise_std=0.05 if self.noise_std > 0 else 0.0)


@dataclass
class StreamCase:
    """A stream with everything needed to rerun it under any configuration."""

    stream: AnnotatedStream
    overlap: list[tuple[float, float]]
    distractors: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0


@dataclass
class RunSummary:
    system: str
    n: int
    method: str
    wer: WerBreakdown
    hw: float
    f1: list[float]
    n_windows: int


def build_cases(cfg: BenchmarkConfig, vocab: Vocabulary = DEFAULT_VOCAB) -> list[StreamCase]:
    pool = synth_pool(cfg.pool_speakers, cfg.utts_per_speaker, make_rng(cfg.seed, "bench-pool"), vocab,
                      len_range=cfg.len_range)
    mixes = sample_corpus(pool, cfg.n_mixtures, make_rng(cfg.seed, "bench-mix"),
                          max_overlap_s=cfg.max_overlap_s)
    return cases_from_mixtures(mixes, pool_embeddings(pool), cfg.max_distractors, cfg.seed)


def pool_embeddings(streams: Sequence[AnnotatedStream]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for s in streams:
        out.update(s.embeddings)
    return out


def cases_from_mixtures(mixes: Sequence[Mixture | AnnotatedStream], known: dict[str, np.ndarray],
                        max_distractors: int, seed: int) -> list[StreamCase]:
    cases = []
    for j, m in enumerate(mixes):
        stream = m.stream if isinstance(m, Mixture) else m
        ov = m.overlap if isinstance(m, Mixture) else overlap_intervals(stream.segments, stream.duration_s)
        others = sorted(set(known) - set(stream.speakers))
        rng = make_rng(seed, "distractors", j)
        n = int(rng.integers(0, max_distractors + 1)) if others else 0
        pick = sorted(rng.choice(len(others), size=min(n, len(others)), replace=False))
        cases.append(StreamCase(stream, list(ov), {others[i]: known[others[i]] for i in pick}, seed + j))
    return cases


def case_store(case: StreamCase, accept_threshold: float = 0.6) -> SpeakerStore:
    """Distractors first, the stream's own speakers last so they lead the recency list."""
    store = SpeakerStore(accept_threshold)
    for spk, e in case.distractors.items():
        store.enroll(e, 0.0, spk)
    for spk in case.stream.speakers:
        store.enroll(case.stream.embeddings[spk], 0.0, spk)
    return store


def run_case(case: StreamCase, ocfg: OrchestratorConfig, params: OracleParams, head: OverlapHead | None,
             vocab: Vocabulary = DEFAULT_VOCAB, embed_jitter: float = 0.0) -> PipelineResult:
    truth = frame_truth(case.stream, vocab)
    models = OracleModels(truth, params, vocab, seed=case.seed)
    source = TruthEmbeddingSource(case.stream.segments, case.stream.embeddings, embed_jitter, case.seed)
    store = case_store(case, ocfg.accept_threshold)
    return process_stream(truth.frames, ocfg, models, source, store, head, vocab)


def run_system(cases: Sequence[StreamCase], system: str, n: int, method: str, params: OracleParams,
               head: OverlapHead | None, cost: CostModel, vocab: Vocabulary = DEFAULT_VOCAB,
               embed_jitter: float = 0.0) -> RunSummary:
    ocfg = OrchestratorConfig(n_recent=n, embed_method=method, system=system, cost=cost)
    total = WerBreakdown()
    f1, costs = [], []
    for case in cases:
        res = run_case(case, ocfg, params, head, vocab, embed_jitter)
        refs = {s: case.stream.speaker_segments(s) for s in case.stream.speakers}
        total = total.merge(region_wer(refs, res.transcripts, case.overlap, vocab))
        nf = int(round(case.stream.duration_s * 50))
        f1.append(detection_f1(case.overlap, [(a / 50, b / 50) for a, b in res.detected_overlap],
                               n_frames=nf).f1)
        costs.extend(w.cost for w in res.windows)
    hw = float(np.mean(costs)) if costs else 1.0
    return RunSummary(system, n, method, total, hw, f1, len(costs))


@dataclass
class BenchmarkResult:
    baseline: RunSummary
    grid: dict[tuple[int, str], RunSummary]
    sc_only: RunSummary | None

    def rows(self) -> list[TableRow]:
        rows = [TableRow(BASELINE_NAME, 1, self.baseline.hw, {"*": self.baseline.wer.overall_rate})]
        for n in sorted({k[0] for k in self.grid}):
            cells = {m: self.grid[(n, m)].wer.overall_rate for m in METHODS if (n, m) in self.grid}
            hw = next(self.grid[(n, m)].hw for m in METHODS if (n, m) in self.grid)
            rows.append(TableRow(f"SI+SC (N={n})", n, hw, cells))
        if self.sc_only is not None:
            rows.append(TableRow(SC_ONLY_NAME, self.sc_only.n, self.sc_only.hw,
                                 {"*": self.sc_only.wer.overall_rate}))
        return rows


def run_grid(cases: Sequence[StreamCase], cfg: BenchmarkConfig, ns: Sequence[int] = (2, 3, 4),
             methods: Sequence[str] = METHODS, sc_only_n: int | None = 4, head: OverlapHead | None = None,
             vocab: Vocabulary = DEFAULT_VOCAB) -> BenchmarkResult:
    params = cfg.oracle()
    if head is None:
        head, _ = fit_oracle_head(params, vocab, seed=cfg.seed)
    cost = CostModel(cfg.feature_share)
    kw = dict(vocab=vocab, embed_jitter=cfg.embed_jitter)
    base = run_system(cases, SI_ONLY, 1, LAST, params, head, cost, **kw)
    grid = {(n, m): run_system(cases, SI_SC, n, m, params, head, cost, **kw) for n in ns for m in methods}
    sc = run_system(cases, SC_ONLY, sc_only_n, LAST, params, head, cost, **kw) if sc_only_n else None
    return BenchmarkResult(base, grid, sc)

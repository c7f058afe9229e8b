"""Acoustic-model contract, deterministic oracle models and the FiLM toy model."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import AnnotatedStream, Segment, Vocabulary, make_rng
from .ctc import ctc_loss, greedy_decode, nonspeaker_normalized_loss, softmax


@dataclass
class AcousticOutput:
    ctc_logits: np.ndarray          # T x V
    change_prob: np.ndarray         # T
    overlap_prob: np.ndarray        # T
    hidden: np.ndarray              # T x H

    def __post_init__(self):
        T = len(self.ctc_logits)
        for name in ("change_prob", "overlap_prob", "hidden"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} length differs from logits")
        if not np.all(np.isfinite(self.ctc_logits)) or not np.all(np.isfinite(self.hidden)):
            raise ValueError("non-finite acoustic output")

    @property
    def frames(self) -> int:
        return len(self.ctc_logits)


@dataclass(frozen=True)
class OracleParams:
    clean_confidence: float = 8.0
    overlap_confusion: float = 0.5
    noise_std: float = 0.5
    sc_match_threshold: float = 0.8
    change_noise_std: float = 0.05
    hidden_dim: int = 16

    def __post_init__(self):
        if not 0.0 <= self.overlap_confusion <= 1.0:
            raise ValueError("overlap_confusion must lie in [0, 1]")
        if self.noise_std < 0 or self.change_noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if not -1.0 <= self.sc_match_threshold <= 1.0:
            raise ValueError("sc_match_threshold must lie in [-1, 1]")


# ---------------------------------------------------------------- frame truth

def segment_labels(seg: Segment, vocab: Vocabulary) -> list[int]:
    """CTC labels of a segment: its characters plus a closing word separator."""
    labels = vocab.encode(seg.words)
    if labels and vocab.space is not None:
        labels.append(vocab.space)
    return labels


def align_segment(seg: Segment, vocab: Vocabulary, frame_rate: float) -> list[tuple[int, int]]:
    """Evenly spread label emissions over the segment; ``(label, frame)`` pairs."""
    a, b = round(seg.start_s * frame_rate), round(seg.end_s * frame_rate)
    labels = segment_labels(seg, vocab)
    n, nf = len(labels), b - a
    if n and nf < 2 * n:
        raise ValueError(f"segment {seg.start_s:.3f}-{seg.end_s:.3f} too short for {n} labels "
                         f"at {frame_rate} frames/s")
    return [(lab, a + (k * nf) // n) for k, lab in enumerate(labels)]


@dataclass
class FrameTruth:
    """Per-frame ground truth of a stream (or a slice of one)."""

    speakers: list[str]
    labels: np.ndarray          # S x T label ids, blank where silent
    active: np.ndarray          # S x T bool
    onset: np.ndarray           # S x T frame at which the covering segment started
    embeddings: dict[str, np.ndarray]
    change: np.ndarray          # T bool, speaker-turn boundaries
    start_frame: int = 0

    @property
    def frames(self) -> int:
        return self.labels.shape[1]

    def window(self, a: int, b: int) -> "FrameTruth":
        a0, b0 = a - self.start_frame, b - self.start_frame
        return FrameTruth(self.speakers, self.labels[:, a0:b0], self.active[:, a0:b0],
                          self.onset[:, a0:b0], self.embeddings, self.change[a0:b0], a)

    @property
    def n_active(self) -> np.ndarray:
        return self.active.sum(axis=0)

    def active_speakers(self) -> list[str]:
        return [s for i, s in enumerate(self.speakers) if self.active[i].any()]


def frame_truth(stream: AnnotatedStream, vocab: Vocabulary, frame_rate: float = 50.0,
                context_s: float = 3.0) -> FrameTruth:
    from .detection import truth_change_frames

    T = max(1, math.ceil(stream.duration_s * frame_rate - 1e-9))
    speakers = stream.speakers
    idx = {s: i for i, s in enumerate(speakers)}
    labels = np.full((len(speakers), T), vocab.blank, dtype=np.int64)
    active = np.zeros((len(speakers), T), dtype=bool)
    onset = np.zeros((len(speakers), T), dtype=np.int64)
    for seg in stream.segments:
        if seg.speaker not in idx:
            continue
        i = idx[seg.speaker]
        a, b = round(seg.start_s * frame_rate), min(T, round(seg.end_s * frame_rate))
        active[i, a:b] = True
        onset[i, a:b] = a
        for lab, f in align_segment(seg, vocab, frame_rate):
            if f < T:
                labels[i, f] = lab
    change = np.zeros(T, dtype=bool)
    for f in truth_change_frames(stream.segments, frame_rate, context_s):
        if 0 <= f < T:
            change[f] = True
    return FrameTruth(speakers, labels, active, onset, dict(stream.embeddings), change)


# ---------------------------------------------------------------- oracles

def uncertainty_features(logits: np.ndarray, dim: int) -> np.ndarray:
    """Softmax distribution sorted in descending order, truncated/zero-padded to ``dim``."""
    p = -np.sort(-softmax(logits), axis=1)
    T, V = p.shape
    if V >= dim:
        return p[:, :dim].copy()
    return np.concatenate([p, np.zeros((T, dim - V))], axis=1)


def _finish(logits: np.ndarray, change: np.ndarray, params: OracleParams, rng) -> AcousticOutput:
    T = len(logits)
    cp = change.astype(np.float64)
    if params.change_noise_std > 0:
        cp = cp + np.abs(rng.normal(0.0, params.change_noise_std, T)) * np.where(change, -1.0, 1.0)
    cp = np.clip(cp, 0.0, 1.0)
    return AcousticOutput(logits, cp, np.zeros(T), uncertainty_features(logits, params.hidden_dim))


def oracle_si_forward(window: FrameTruth, params: OracleParams, rng: np.random.Generator,
                      vocab: Vocabulary) -> AcousticOutput:
    """Speaker-independent oracle: confident on single speech, confused under overlap."""
    S, T = window.labels.shape
    V = len(vocab)
    noise = rng.normal(0.0, params.noise_std, (T, V)) if params.noise_std > 0 else np.zeros((T, V))
    flips = rng.random(T)
    picks = rng.random(T)
    label = np.full(T, vocab.blank, dtype=np.int64)
    conf = np.full(T, params.clean_confidence)
    for t in range(T):
        act = np.flatnonzero(window.active[:, t])
        if len(act) == 1:
            label[t] = window.labels[act[0], t]
        elif len(act) >= 2:
            order = sorted(act, key=lambda i: (window.onset[i, t], i))
            dominant, others = order[0], order[1:]
            src = dominant
            if flips[t] < params.overlap_confusion:
                src = others[min(int(picks[t] * len(others)), len(others) - 1)]
            label[t] = window.labels[src, t]
            conf[t] = params.clean_confidence / 2
    logits = noise
    logits[np.arange(T), label] += conf
    return _finish(logits, window.change, params, rng)


def match_speaker(window: FrameTruth, target: np.ndarray, threshold: float) -> int | None:
    best, best_sim = None, -math.inf
    for i, spk in enumerate(window.speakers):
        if not window.active[i].any() or spk not in window.embeddings:
            continue
        sim = float(np.dot(target, window.embeddings[spk]))
        if sim > best_sim:
            best, best_sim = i, sim
    return best if best is not None and best_sim >= threshold else None


def oracle_sc_forward(window: FrameTruth, target: np.ndarray, params: OracleParams,
                      rng: np.random.Generator, vocab: Vocabulary) -> AcousticOutput:
    """Speaker-conditioned oracle: the matched speaker's labels, or all blank."""
    S, T = window.labels.shape
    V = len(vocab)
    noise = rng.normal(0.0, params.noise_std, (T, V)) if params.noise_std > 0 else np.zeros((T, V))
    label = np.full(T, vocab.blank, dtype=np.int64)
    conf = np.full(T, params.clean_confidence)
    i = match_speaker(window, np.asarray(target, dtype=np.float64), params.sc_match_threshold)
    if i is not None:
        label = window.labels[i].copy()
        overlapped = window.active[i] & (window.n_active >= 2)
        conf[overlapped] = params.clean_confidence / 2
    logits = noise
    logits[np.arange(T), label] += conf
    return _finish(logits, np.zeros(T, dtype=bool), params, rng)


class OracleModels:
    """SI and SC oracle pair bound to one stream's ground truth.

    Each call derives its own generator from ``seed`` and the call site, so the
    SI pass of a window draws identical noise whether or not SC passes run.
    """

    def __init__(self, truth: FrameTruth, params: OracleParams, vocab: Vocabulary, seed: int = 0):
        self.truth = truth
        self.params = params
        self.vocab = vocab
        self.seed = seed

    def si(self, start: int, end: int) -> AcousticOutput:
        return oracle_si_forward(self.truth.window(start, end), self.params,
                                 make_rng(self.seed, "si", start, end), self.vocab)

    def sc(self, start: int, end: int, target: np.ndarray, tag: str = "") -> AcousticOutput:
        return oracle_sc_forward(self.truth.window(start, end), target, self.params,
                                 make_rng(self.seed, "sc", start, end, tag), self.vocab)


# ---------------------------------------------------------------- FiLM

@dataclass
class FiLMParams:
    gamma_map: np.ndarray   # H x D
    beta_map: np.ndarray    # H x D

    def __post_init__(self):
        if self.gamma_map.shape != self.beta_map.shape:
            raise ValueError("gamma_map and beta_map shapes differ")

    def gamma(self, e: np.ndarray) -> np.ndarray:
        return self.gamma_map @ e

    def beta(self, e: np.ndarray) -> np.ndarray:
        return self.beta_map @ e


def film(features: np.ndarray, embedding: np.ndarray, p: FiLMParams) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    embedding = np.asarray(embedding, dtype=np.float64)
    H, D = p.gamma_map.shape
    if features.ndim != 2 or features.shape[1] != H or embedding.shape != (D,):
        raise ValueError(f"shape mismatch: features {features.shape}, embedding {embedding.shape}, "
                         f"FiLM expects (*, {H}) and ({D},)")
    return features * p.gamma(embedding) + p.beta(embedding)


# ---------------------------------------------------------------- toy SC model

PARAM_NAMES = ("feat_w", "feat_b", "gamma_map", "beta_map", "post_w", "post_b", "out_w", "out_b")


@dataclass
class ToySCModel:
    """featurizer -> FiLM -> tanh layer -> linear CTC output."""

    feat_w: np.ndarray      # F x H
    feat_b: np.ndarray      # H
    gamma_map: np.ndarray   # H x D
    beta_map: np.ndarray    # H x D
    post_w: np.ndarray      # H x H
    post_b: np.ndarray      # H
    out_w: np.ndarray       # H x V
    out_b: np.ndarray       # V

    @classmethod
    def init(cls, n_in: int, dim: int, hidden: int, n_out: int, rng: np.random.Generator,
             blank: int = 0, blank_bias: float = 0.0) -> "ToySCModel":
        out_b = np.zeros(n_out)
        out_b[blank] = blank_bias
        return cls(
            feat_w=rng.normal(0, 1 / math.sqrt(n_in), (n_in, hidden)),
            feat_b=np.zeros(hidden),
            gamma_map=rng.normal(0, 1.0, (hidden, dim)),
            beta_map=rng.normal(0, 0.1, (hidden, dim)),
            post_w=rng.normal(0, 1 / math.sqrt(hidden), (hidden, hidden)),
            post_b=np.zeros(hidden),
            out_w=rng.normal(0, 1 / math.sqrt(hidden), (hidden, n_out)),
            out_b=out_b,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "ToySCModel":
        return ToySCModel(**{k: v.copy() for k, v in self.params().items()})

    @property
    def film_params(self) -> FiLMParams:
        return FiLMParams(self.gamma_map, self.beta_map)

    def forward(self, x: np.ndarray, e: np.ndarray, cache: bool = False):
        z = x @ self.feat_w + self.feat_b
        u = film(z, e, self.film_params)
        h = np.tanh(u @ self.post_w + self.post_b)
        o = h @ self.out_w + self.out_b
        if cache:
            return o, (x, e, z, h)
        return o

    def backward(self, d_out: np.ndarray, cache) -> dict[str, np.ndarray]:
        x, e, z, h = cache
        g = {}
        g["out_w"] = h.T @ d_out
        g["out_b"] = d_out.sum(axis=0)
        dh = d_out @ self.out_w.T
        da = dh * (1.0 - h * h)
        g["post_w"] = (film(z, e, self.film_params)).T @ da
        g["post_b"] = da.sum(axis=0)
        du = da @ self.post_w.T
        gamma = self.gamma_map @ e
        g["gamma_map"] = np.outer((du * z).sum(axis=0), e)
        g["beta_map"] = np.outer(du.sum(axis=0), e)
        dz = du * gamma
        g["feat_w"] = x.T @ dz
        g["feat_b"] = dz.sum(axis=0)
        return g


@dataclass
class ToyExample:
    """One symbolic two-speaker mixture for the toy SC task."""

    x: np.ndarray                       # T x F input features
    targets: dict[str, list[int]]       # reference labels per participant
    cond: dict[str, np.ndarray]         # conditioning embedding per participant
    absent: np.ndarray                  # non-speaking speaker embedding


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 8
    normalize_speaking: bool = False
    clip: float = 5.0
    lr_decay: float = 1.0   # per-epoch multiplicative


@dataclass
class TrainResult:
    model: ToySCModel
    losses: list[float] = field(default_factory=list)
    divisors: list[float] = field(default_factory=list)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, batch_seed: int):
        super().__init__(f"{message} (batch seed {batch_seed})")
        self.batch_seed = batch_seed


def example_loss(model: ToySCModel, ex: ToyExample, blank: int = 0,
                 normalize_speaking: bool = False, grads: bool = True):
    """Three conditioned passes: each participant, then the non-speaker.

    Returns ``(loss, grads, k)`` with ``k`` the non-speaker divisor.
    """
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in model.params().items()} if grads else None
    passes = [(ex.cond[s], ex.targets[s]) for s in sorted(ex.targets)] + [(ex.absent, None)]
    k_ns = 0
    for e, tgt in passes:
        o, cache = model.forward(ex.x, e, cache=True)
        if tgt is None:
            loss, d, k_ns = nonspeaker_normalized_loss(o, blank)
        else:
            loss, d = ctc_loss(o, tgt, blank)
            if normalize_speaking:
                n = max(1, len(tgt))
                loss, d = loss / n, d / n
        total += loss
        if grads:
            for name, gv in model.backward(d, cache).items():
                acc[name] += gv
    return total, acc, k_ns


def toy_sc_train(corpus: Sequence[ToyExample], model: ToySCModel, hyper: TrainConfig,
                 rng: np.random.Generator, blank: int = 0,
                 on_epoch: Callable[[int, ToySCModel], None] | None = None) -> TrainResult:
    """SGD with momentum over mini-batches; three passes per example."""
    model = model.copy()
    vel = {k: np.zeros_like(v) for k, v in model.params().items()}
    result = TrainResult(model)
    n = len(corpus)
    for epoch in range(hyper.epochs):
        lr = hyper.lr * hyper.lr_decay ** epoch
        order = rng.permutation(n)
        ep_loss, ep_k = 0.0, []
        for b in range(0, n, hyper.batch_size):
            idx = order[b:b + hyper.batch_size]
            batch_seed = int(epoch * n + b)
            gsum = {k: np.zeros_like(v) for k, v in model.params().items()}
            bl = 0.0
            for i in idx:
                loss, g, k = example_loss(model, corpus[i], blank, hyper.normalize_speaking)
                bl += loss
                ep_k.append(k)
                for name in gsum:
                    gsum[name] += g[name]
            if not math.isfinite(bl):
                raise DivergenceError("training loss is not finite", batch_seed)
            norm = math.sqrt(sum(float(np.sum(v * v)) for v in gsum.values())) / len(idx)
            scale = 1.0 / len(idx)
            if hyper.clip and norm > hyper.clip:
                scale *= hyper.clip / norm
            for name, p in model.params().items():
                vel[name] = hyper.momentum * vel[name] - lr * scale * gsum[name]
                p += vel[name]
            ep_loss += bl
        result.losses.append(ep_loss / max(1, n))
        result.divisors.append(float(np.mean(ep_k)) if ep_k else 0.0)
        if on_epoch:
            on_epoch(epoch, model)
    return result


def toy_decode(model: ToySCModel, ex: ToyExample, e: np.ndarray, blank: int = 0) -> list[int]:
    return [lab for lab, _ in greedy_decode(model.forward(ex.x, e), blank)]


def label_edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    d = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, d[0] = d[0], i
        for j, y in enumerate(b, 1):
            prev, d[j] = d[j], min(d[j] + 1, d[j - 1] + 1, prev + (x != y))
    return d[-1]


@dataclass
class ToyScores:
    token_accuracy: float       # 1 - label edit distance / reference labels, target passes
    empty_rate: float           # share of absent-speaker passes that decode to nothing


def toy_scores(model: ToySCModel, corpus: Sequence[ToyExample], blank: int = 0) -> ToyScores:
    err = n = empty = 0
    for ex in corpus:
        for s in sorted(ex.targets):
            err += label_edit_distance(ex.targets[s], toy_decode(model, ex, ex.cond[s], blank))
            n += len(ex.targets[s])
        empty += not toy_decode(model, ex, ex.absent, blank)
    return ToyScores(1.0 - err / max(1, n), empty / max(1, len(corpus)))


@dataclass
class ToyRecipe:
    n_train: int = 3000
    n_test: int = 500
    hidden: int = 16
    blank_bias: float = -2.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.03, epochs=20, batch_size=16,
                                                                   lr_decay=0.9))


def run_toy_recipe(recipe: ToyRecipe, seed: int = 0, task=None,
                   on_epoch: Callable[[int, ToySCModel], None] | None = None):
    """Train the FiLM toy model on synthetic mixtures; returns (TrainResult, held-out ToyScores)."""
    from .mixer import ToyTaskConfig, toy_corpus, toy_speakers

    task = task or ToyTaskConfig()
    speakers = toy_speakers(task, seed)
    train = toy_corpus(recipe.n_train, task, speakers, make_rng(seed, "toy-train"))
    test = toy_corpus(recipe.n_test, task, speakers, make_rng(seed, "toy-test"))
    init = ToySCModel.init(task.n_inputs, task.dim, recipe.hidden, task.n_labels,
                           make_rng(seed, "toy-init"), blank_bias=recipe.blank_bias)
    res = toy_sc_train(train, init, recipe.train, make_rng(seed, "toy-sgd"), on_epoch=on_epoch)
    return res, toy_scores(res.model, test)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"OVSC"
VERSION = 1


def save_tensors(tensors: dict[str, np.ndarray], path) -> None:
    """Little-endian container: magic, u32 version, u32 count, then records of
    u32 name length, UTF-8 name, u32 ndim, u32 dims, float32 data."""
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(tensors))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an OVSC checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (nd,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{nd}I", data, pos)
        pos += 4 * nd
        size = int(np.prod(shape)) if nd else 1
        out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out


def save_model(model: ToySCModel, path) -> None:
    save_tensors(model.params(), path)


def load_model(path) -> ToySCModel:
    t = load_tensors(path)
    missing = set(PARAM_NAMES) - set(t)
    if missing:
        raise ValueError(f"checkpoint lacks {sorted(missing)}")
    return ToySCModel(**{k: t[k] for k in PARAM_NAMES})

"""CTC loss, greedy and prefix-beam decoding, and transferable decoder state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cmp_to_key
from typing import Sequence

import numpy as np

from .core import Vocabulary
from .lm import BOS, NGramLM, lm_word

NEG_INF = -math.inf


def _lae(a: float, b: float) -> float:
    """Scalar log(exp(a) + exp(b))."""
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=-1, keepdims=True)
    return x - m - np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit ``target`` (repeats need a blank between)."""
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def ctc_loss(logits: np.ndarray, target: Sequence[int], blank: int = 0) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``logits``.

    Infeasible targets return ``(inf, zeros)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    T, V = logits.shape
    target = list(target)
    if T == 0 or min_frames(target) > T:
        return math.inf, np.zeros_like(logits)
    lp = log_softmax(logits)
    ext = _extend(target, blank)
    S = len(ext)
    emit = lp[:, ext]                                   # T x S
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]

    log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    if not np.isfinite(log_p):
        return math.inf, np.zeros_like(logits)
    gamma = alpha + beta - emit                          # log occupancy * P
    occ = np.full((T, V), NEG_INF)
    for s in range(S):
        occ[:, ext[s]] = np.logaddexp(occ[:, ext[s]], gamma[:, s])
    grad = np.exp(lp) - np.exp(occ - log_p)
    return float(-log_p), grad


def nonspeaker_normalized_loss(logits: np.ndarray, blank: int = 0) -> tuple[float, np.ndarray, int]:
    """Empty-target CTC loss divided by the number of non-blank argmax frames.

    Returns ``(loss, grad, k)``; the divisor ``max(1, k)`` is treated as a
    constant for the gradient.
    """
    loss, grad = ctc_loss(logits, [], blank)
    k = int(np.sum(np.argmax(logits, axis=1) != blank))
    d = max(1, k)
    return loss / d, grad / d, k


def greedy_decode(logits: np.ndarray, blank: int = 0) -> list[tuple[int, int]]:
    """Argmax path, repeats collapsed, blanks dropped; ``(label, first_frame)`` pairs."""
    path = np.argmax(np.asarray(logits), axis=1)
    out = []
    prev = blank
    for t, k in enumerate(path):
        k = int(k)
        if k != blank and k != prev:
            out.append((k, t))
        prev = k
    return out


# ---------------------------------------------------------------- beam search

class _Node:
    """Interned prefix-trie node, so prefix identity is object identity."""

    __slots__ = ("label", "parent", "ctx", "children", "depth")

    def __init__(self, label, parent, ctx):
        self.label = label
        self.parent = parent
        self.ctx = ctx
        self.children = {}
        self.depth = 0 if parent is None else parent.depth + 1

    def child(self, label: int, ctx_len: int, word: str) -> "_Node":
        node = self.children.get(label)
        if node is None:
            ctx = (self.ctx + (word,))[-ctx_len:] if ctx_len else ()
            node = self.children[label] = _Node(label, self, ctx)
        return node

    def labels(self) -> list[int]:
        out = []
        n = self
        while n.parent is not None:
            out.append(n.label)
            n = n.parent
        return out[::-1]


def _unroll(cons) -> list:
    out = []
    while cons is not None:
        out.append(cons[0])
        cons = cons[1]
    return out[::-1]


def _path_cmp(a, b) -> int:
    """Lexicographic comparison of two equal-length cons paths.

    Walks back from the newest element until the lists share a tail; the
    last difference seen is the earliest one in time.
    """
    diff = 0
    while a is not b:
        if a is None or b is None:
            return -1 if a is None else 1
        if a[0] != b[0]:
            diff = -1 if a[0] < b[0] else 1
        a, b = a[1], b[1]
    return diff


def _path_less(a, b) -> bool:
    return _path_cmp(a, b) < 0


@dataclass
class _Entry:
    node: _Node
    pb: float = NEG_INF
    pnb: float = NEG_INF
    vb: float = NEG_INF
    vnb: float = NEG_INF
    path_b: tuple | None = None
    path_nb: tuple | None = None
    times: tuple | None = None      # cons list of token start frames
    last: int | None = None         # label of the most recent non-blank emission
    tscore: float = NEG_INF         # viterbi score of the source that set ``times``
    tpath: tuple | None = None

    @property
    def total(self) -> float:
        return _lae(self.pb, self.pnb)

    @property
    def viterbi(self) -> float:
        return max(self.vb, self.vnb)

    @property
    def best_path(self):
        if self.vb > self.vnb or (self.vb == self.vnb and self.path_b is not None
                                  and (self.path_nb is None or _path_less(self.path_b, self.path_nb))):
            return self.path_b
        return self.path_nb


@dataclass
class DecoderState:
    """Prefix-beam state of one speaker-attributed decoder."""

    vocab: Vocabulary
    lm: NGramLM | None = None
    width: int = 8
    label_prune: float = math.inf
    affiliation: str | None = None
    emitted: list[tuple[int, int]] = field(default_factory=list)
    frame: int = 0
    root: _Node = None
    beam: list[_Entry] = None

    def __post_init__(self):
        if self.root is None:
            self.reset((BOS,), None)

    # ------------------------------------------------------------ helpers

    @property
    def ctx_len(self) -> int:
        return self.lm.order - 1 if self.lm is not None else 2

    @property
    def context(self) -> tuple:
        return self.best().node.ctx

    def reset(self, ctx: tuple, last: int | None, pb: float = 0.0, pnb: float = NEG_INF) -> None:
        ctx = ctx[-self.ctx_len:] if self.ctx_len else ()
        self.root = _Node(None, None, ctx)
        self.beam = [_Entry(self.root, pb=pb, pnb=pnb, vb=pb, vnb=pnb, last=last)]

    def best(self) -> _Entry:
        best = self.beam[0]
        for e in self.beam[1:]:
            if e.total > best.total:
                best = e
        return best

    def hypothesis(self) -> list[tuple[int, int]]:
        """Committed plus best uncommitted tokens."""
        e = self.best()
        return self.emitted + list(zip(e.node.labels(), _unroll(e.times)))

    @property
    def pending(self) -> bool:
        return any(e.node is not self.root for e in self.beam)

    # ------------------------------------------------------------ decoding

    def _lm_score(self, node: _Node, label: int) -> float:
        if self.lm is None:
            return 0.0
        word = lm_word(self.vocab.tokens[label])
        return self.lm.weight * self.lm.logprob(word, node.ctx) + self.lm.insertion_bonus

    def step(self, frame_logits: np.ndarray, t: int | None = None) -> "DecoderState":
        t = self.frame if t is None else t
        lp = log_softmax(np.asarray(frame_logits, dtype=np.float64)).tolist()
        blank = self.vocab.blank
        floor = max(lp) - self.label_prune
        cands = [c for c in range(len(lp)) if c != blank and lp[c] >= floor]
        lp_blank = lp[blank]
        new: dict[int, _Entry] = {}

        def get(node: _Node, carried: int | None) -> _Entry:
            e = new.get(id(node))
            if e is None:
                last = carried if node.parent is None else node.label
                e = new[id(node)] = _Entry(node, last=last)
            return e

        for e in self.beam:
            tot = e.total
            v = e.viterbi
            bp = e.best_path
            n = get(e.node, e.last)
            n.pb = _lae(n.pb, tot + lp_blank)
            _offer(n, "b", v + lp_blank, (blank, bp), e.times)
            if e.last is not None and e.pnb > NEG_INF:
                n.pnb = _lae(n.pnb, e.pnb + lp[e.last])
                _offer(n, "nb", e.vnb + lp[e.last], (e.last, e.path_nb), e.times)
            for c in cands:
                if c == e.last:
                    src, vsrc, vpath = e.pb, e.vb, e.path_b
                else:
                    src, vsrc, vpath = tot, v, bp
                if src == NEG_INF:
                    continue
                bonus = self._lm_score(e.node, c)
                child = e.node.child(c, self.ctx_len, lm_word(self.vocab.tokens[c]))
                m = get(child, None)
                m.pnb = _lae(m.pnb, src + lp[c] + bonus)
                _offer(m, "nb", vsrc + lp[c] + bonus, (c, vpath), (t, e.times))

        ranked = sorted(new.values(), key=_rank_key)
        self.beam = _stable_tiebreak(ranked, max(1, self.width))
        self.frame = t + 1
        return self

    def finalize(self) -> "DecoderState":
        """Commit the best hypothesis; the beam collapses to its end state."""
        e = self.best()
        self.emitted.extend(zip(e.node.labels(), _unroll(e.times)))
        tot = e.total
        self.reset(e.node.ctx, e.last, e.pb - tot, e.pnb - tot)
        return self


def _offer(e: _Entry, which: str, score: float, path, times) -> None:
    if which == "b":
        cur, curp = e.vb, e.path_b
    else:
        cur, curp = e.vnb, e.path_nb
    if score > cur or (score == cur and score > NEG_INF and _path_less(path, curp)):
        if which == "b":
            e.vb, e.path_b = score, path
        else:
            e.vnb, e.path_nb = score, path
    if score > e.tscore or (score == e.tscore and score > NEG_INF and _path_less(path, e.tpath)):
        e.tscore, e.tpath, e.times = score, path, times


def _rank_key(e: _Entry):
    return (-e.viterbi, -e.total)


def _stable_tiebreak(entries: list[_Entry], width: int) -> list[_Entry]:
    """Keep ``width`` entries; an exact Viterbi tie across the cut is resolved
    in favour of the lexicographically smaller best path."""
    if len(entries) <= width:
        return entries
    v = entries[width - 1].viterbi
    if entries[width].viterbi != v:
        return entries[:width]
    i = width - 1
    while i > 0 and entries[i - 1].viterbi == v:
        i -= 1
    j = width
    while j < len(entries) and entries[j].viterbi == v:
        j += 1
    group = sorted(entries[i:j], key=cmp_to_key(lambda x, y: _path_cmp(x.best_path, y.best_path)))
    return entries[:i] + group[:width - i]


def beam_decode_step(state: DecoderState, frame_logits: np.ndarray, lm: NGramLM | None = None,
                     width: int | None = None, t: int | None = None) -> DecoderState:
    if lm is not None:
        state.lm = lm
    if width is not None:
        state.width = width
    return state.step(frame_logits, t)


def beam_decode(logits: np.ndarray, vocab: Vocabulary, lm: NGramLM | None = None, width: int = 8,
                label_prune: float = math.inf) -> list[tuple[int, int]]:
    st = DecoderState(vocab, lm, width, label_prune)
    for row in np.asarray(logits):
        st.step(row)
    return st.finalize().emitted


def transfer_context(src: DecoderState, dst: DecoderState) -> DecoderState:
    """Finalize ``src`` and seed ``dst`` with its LM context and end state.

    ``dst`` keeps its affiliation and previously committed text; any
    uncommitted hypothesis in ``dst`` is committed first.
    """
    src.finalize()
    if dst is src:
        return dst
    if dst.pending:
        dst.finalize()
    e = src.beam[0]
    dst.reset(src.root.ctx, e.last, e.pb, e.pnb)
    dst.frame = src.frame
    return dst

"""Backoff n-gram language model with ARPA text serialization.

Tokens are arbitrary strings. Witten-Bell discounting is used for training;
the backoff weights make every context distribution sum to one over the
vocabulary (plus ``</s>``).
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
SPACE_WORD = "<sp>"
LOG10 = math.log(10.0)
NEG_INF_LOG10 = -99.0


def lm_word(symbol: str) -> str:
    return SPACE_WORD if symbol == " " else symbol


class NGramLM:
    def __init__(self, order: int, probs: dict[tuple, float], backoffs: dict[tuple, float],
                 weight: float = 0.5, insertion_bonus: float = 0.0):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.probs = probs          # n-gram tuple -> log10 p
        self.backoffs = backoffs    # context tuple -> log10 backoff weight
        self.weight = weight
        self.insertion_bonus = insertion_bonus
        self.vocab = sorted({g[-1] for g in probs if len(g) == 1})
        self._cache: dict[tuple, float] = {}

    # ------------------------------------------------------------ scoring

    def log10prob(self, word: str, context: Sequence[str] = ()) -> float:
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        key = ctx + (word,)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        bow = 0.0
        while True:
            p = self.probs.get(ctx + (word,))
            if p is not None:
                val = bow + p
                break
            if not ctx:
                val = NEG_INF_LOG10
                break
            bow += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]
        self._cache[key] = val
        return val

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        """Natural-log probability."""
        return self.log10prob(word, context) * LOG10

    def sentence_logprob(self, words: Sequence[str]) -> float:
        ctx = [BOS]
        total = 0.0
        for w in list(words) + [EOS]:
            total += self.logprob(w, ctx)
            ctx.append(w)
        return total

    # ------------------------------------------------------------ training

    @classmethod
    def train(cls, sentences: Iterable[Sequence[str]], order: int = 3,
              vocab: Iterable[str] = (), **kw) -> "NGramLM":
        counts: list[dict[tuple, dict[str, int]]] = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
        words = set(vocab)
        for sent in sentences:
            seq = [BOS] * max(1, order - 1) + list(sent) + [EOS]
            words.update(sent)
            start = max(1, order - 1)
            for i in range(start, len(seq)):
                for n in range(order):
                    counts[n][tuple(seq[i - n:i])][seq[i]] += 1
        words.add(EOS)
        words.discard(BOS)
        vocab_sorted = sorted(words)

        probs: dict[tuple, float] = {}
        backoffs: dict[tuple, float] = {}
        uni = counts[0][()]
        total = sum(uni.values())
        for w in vocab_sorted:
            probs[(w,)] = math.log10((uni.get(w, 0) + 1) / (total + len(vocab_sorted)))
        probs[(BOS,)] = NEG_INF_LOG10

        def full_p(word: str, ctx: tuple) -> float:
            bow = 0.0
            while True:
                p = probs.get(ctx + (word,))
                if p is not None:
                    return 10 ** (bow + p)
                bow += backoffs.get(ctx, 0.0)
                ctx = ctx[1:]

        for n in range(1, order):
            for ctx, nxt in sorted(counts[n].items()):
                c = sum(nxt.values())
                t = len(nxt)
                lower = sum(full_p(w, ctx[1:]) for w in nxt)
                rest = 1.0 - lower
                if rest <= 1e-12 or len(nxt) >= len(vocab_sorted):
                    for w, k in nxt.items():
                        probs[ctx + (w,)] = math.log10(k / c)
                    backoffs[ctx] = NEG_INF_LOG10
                    continue
                for w, k in nxt.items():
                    probs[ctx + (w,)] = math.log10(k / (c + t))
                backoffs[ctx] = math.log10((t / (c + t)) / rest)
        return cls(order, probs, backoffs, **kw)

    @classmethod
    def from_unigram(cls, dist: dict[str, float], **kw) -> "NGramLM":
        z = sum(dist.values())
        probs = {(w,): (math.log10(p / z) if p > 0 else NEG_INF_LOG10) for w, p in dist.items()}
        return cls(1, probs, {}, **kw)

    # ------------------------------------------------------------ ARPA

    def to_arpa(self) -> str:
        by_order: dict[int, list[tuple]] = defaultdict(list)
        for g in self.probs:
            by_order[len(g)].append(g)
        lines = ["", "\\data\\"]
        for n in range(1, self.order + 1):
            lines.append(f"ngram {n}={len(by_order[n])}")
        for n in range(1, self.order + 1):
            lines.append("")
            lines.append(f"\\{n}-grams:")
            for g in sorted(by_order[n]):
                row = f"{self.probs[g]:.7f}\t{' '.join(g)}"
                if n < self.order and g in self.backoffs:
                    row += f"\t{self.backoffs[g]:.7f}"
                lines.append(row)
        lines += ["", "\\end\\", ""]
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_arpa(), encoding="utf-8")

    @classmethod
    def from_arpa(cls, text: str, **kw) -> "NGramLM":
        probs: dict[tuple, float] = {}
        backoffs: dict[tuple, float] = {}
        declared: dict[int, int] = {}
        section = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
                continue
            if line == "\\end\\":
                break
            m = re.fullmatch(r"\\(\d+)-grams:", line)
            if m:
                section = int(m.group(1))
                continue
            if section == "data":
                m = re.fullmatch(r"ngram (\d+)\s*=\s*(\d+)", line)
                if not m:
                    raise ValueError(f"bad ARPA header line: {line!r}")
                declared[int(m.group(1))] = int(m.group(2))
            elif isinstance(section, int):
                parts = line.split()
                n = section
                if len(parts) not in (n + 1, n + 2):
                    raise ValueError(f"bad {n}-gram line: {line!r}")
                g = tuple(parts[1:n + 1])
                probs[g] = float(parts[0])
                if len(parts) == n + 2:
                    backoffs[g] = float(parts[n + 1])
        if not declared:
            raise ValueError("missing \\data\\ section")
        order = max(declared)
        for n, cnt in declared.items():
            got = sum(1 for g in probs if len(g) == n)
            if got != cnt:
                raise ValueError(f"ARPA declares {cnt} {n}-grams, found {got}")
        return cls(order, probs, backoffs, **kw)

    @classmethod
    def load(cls, path, **kw) -> "NGramLM":
        return cls.from_arpa(Path(path).read_text(encoding="utf-8"), **kw)

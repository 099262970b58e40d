"""ARPA-format n-gram language model with standard back-off lookup.

Scores are converted from the file's log10 to natural log once at load time.
Queries take an explicit context tuple, so the model object itself is
immutable and shared across decoding streams.
"""

from __future__ import annotations

import math

from .errors import InputError

LOG10_TO_LN = math.log(10.0)
BOS = "<s>"
UNK = "<unk>"


class ArpaLanguageModel:
    def __init__(self, order: int, tables: list[dict[tuple[str, ...], tuple[float, float]]]):
        # tables[n-1]: n-gram tuple -> (ln prob, ln backoff weight)
        self.order = order
        self.tables = tables
        self.unk_logprob = None
        if (UNK,) in tables[0]:
            self.unk_logprob = tables[0][(UNK,)][0]

    @classmethod
    def from_file(cls, path) -> "ArpaLanguageModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_text(cls, text: str) -> "ArpaLanguageModel":
        lines = iter(text.splitlines())
        counts: dict[int, int] = {}
        for line in lines:
            if line.strip() == "\\data\\":
                break
        else:
            raise InputError("ARPA text has no \\data\\ section")
        for line in lines:
            line = line.strip()
            if not line:
                continue
            if line.startswith("ngram"):
                lhs, n = line.split("=")
                counts[int(lhs.split()[1])] = int(n)
            else:
                break
        if not counts:
            raise InputError("ARPA text declares no n-gram counts")
        order = max(counts)
        tables: list[dict] = [dict() for _ in range(order)]
        current = None
        # `line` currently holds the first section marker
        pending = [line] if line.startswith("\\") else []
        for line in pending + list(lines):
            line = line.strip()
            if not line:
                continue
            if line == "\\end\\":
                break
            if line.startswith("\\") and line.endswith("-grams:"):
                current = int(line[1:].split("-")[0])
                continue
            if current is None:
                continue
            parts = line.split()
            logp = float(parts[0]) * LOG10_TO_LN
            words = tuple(parts[1 : 1 + current])
            backoff = 0.0
            if len(parts) > 1 + current:
                backoff = float(parts[1 + current]) * LOG10_TO_LN
            tables[current - 1][words] = (logp, backoff)
        return cls(order, tables)

    def start_state(self) -> tuple[str, ...]:
        return (BOS,) if self.order > 1 else ()

    def next_state(self, state: tuple[str, ...], word: str) -> tuple[str, ...]:
        if self.order == 1:
            return ()
        return (state + (word,))[-(self.order - 1):]

    def score(self, state: tuple[str, ...], word: str) -> float:
        """ln P(word | state) with back-off to shorter contexts."""
        return self._score(tuple(state), word)

    def _score(self, context: tuple[str, ...], word: str) -> float:
        ngram = context + (word,)
        n = len(ngram)
        if n <= self.order:
            hit = self.tables[n - 1].get(ngram)
            if hit is not None:
                return hit[0]
        if not context:
            if self.unk_logprob is not None:
                return self.unk_logprob
            raise InputError(f"word {word!r} not in language model (and no <unk>)")
        bo_entry = self.tables[len(context) - 1].get(context)
        backoff = bo_entry[1] if bo_entry is not None else 0.0
        return backoff + self._score(context[1:], word)

    def vocab(self) -> list[str]:
        return [w for (w,) in self.tables[0].keys()]


def write_arpa(path, unigrams, bigrams=None) -> None:
    """Write a small ARPA file from ln-domain tables (helper for demos/tests).

    unigrams: {word: (ln_prob, ln_backoff)}; bigrams: {(w1, w2): ln_prob}.
    """
    bigrams = bigrams or {}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        fh.write(f"ngram 1={len(unigrams)}\n")
        if bigrams:
            fh.write(f"ngram 2={len(bigrams)}\n")
        fh.write("\n\\1-grams:\n")
        for word, (lp, bo) in unigrams.items():
            fh.write(f"{lp / LOG10_TO_LN:.6f}\t{word}\t{bo / LOG10_TO_LN:.6f}\n")
        if bigrams:
            fh.write("\n\\2-grams:\n")
            for (w1, w2), lp in bigrams.items():
                fh.write(f"{lp / LOG10_TO_LN:.6f}\t{w1} {w2}\n")
        fh.write("\n\\end\\\n")

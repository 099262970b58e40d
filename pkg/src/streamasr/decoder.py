"""Online lexicon-constrained CTC beam search with n-gram shallow fusion.

The beam tracks alignment hypotheses keyed by (trie node, last token, LM
state); hypotheses landing on the same key are merged (max-score by default,
log-sum-exp optional). Per frame, expansion is limited to the top-K tokens by
acoustic posterior, and when the blank posterior exceeds a threshold only the
blank is proposed. Word completions reset the trie position to the root and
apply the weighted LM score plus a word insertion bonus.

Decoding is incremental: each chunk of emission rows extends the search and
yields the best word sequence split into a finalized prefix (never retracted)
and a tentative suffix (subject to correction). Every H chunks the word
prefix common to all live hypotheses is moved to the finalized buffer, which
bounds per-hypothesis history memory without changing any score.

A greedy decoder (per-frame argmax, CTC collapse) with word timestamps is
included for latency measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .lexicon import TokenSet, Trie
from .lm import ArpaLanguageModel


@dataclass(frozen=True)
class DecoderConfig:
    beam_size: int = 50
    top_k: int = 50
    blank_threshold: float = 0.95
    lm_weight: float = 1.0
    word_score: float = 0.0
    history_prune_chunks: int | None = 16
    merge: str = "max"  # or "logsumexp"
    complete_partial_words: bool = False  # drop trailing in-trie partials by default

    def __post_init__(self):
        if self.beam_size < 1 or self.top_k < 1:
            raise InputError("beam_size and top_k must be >= 1")
        if self.merge not in ("max", "logsumexp"):
            raise InputError(f"unknown merge rule {self.merge!r}")


class _WordLink:
    """Immutable backward-linked word history shared between hypotheses."""

    __slots__ = ("word", "frame", "prev", "depth")

    def __init__(self, word: str, frame: int, prev: "_WordLink | None"):
        self.word = word
        self.frame = frame
        self.prev = prev
        self.depth = 1 if prev is None else prev.depth + 1


def _chain_words(link: _WordLink | None) -> list[tuple[str, int]]:
    out: list[tuple[str, int]] = []
    while link is not None:
        out.append((link.word, link.frame))
        link = link.prev
    out.reverse()
    return out


class Hypothesis:
    __slots__ = ("node", "last", "am", "lm", "n_words", "chain", "lm_state", "merged")

    def __init__(self, node, last, am, lm, n_words, chain, lm_state, merged=None):
        self.node = node
        self.last = last
        self.am = am
        self.lm = lm
        self.n_words = n_words
        self.chain = chain
        self.lm_state = lm_state
        # ranking score; equals total() under max merge, log-sum-exp otherwise
        self.merged = merged

    def total(self, cfg: DecoderConfig) -> float:
        return self.am + cfg.lm_weight * self.lm + cfg.word_score * self.n_words

    def rank_score(self, cfg: DecoderConfig) -> float:
        return self.merged if self.merged is not None else self.total(cfg)

    def words(self) -> list[tuple[str, int]]:
        return _chain_words(self.chain)


@dataclass
class DecodedWord:
    word: str
    end_frame: int  # emission frame whose transition completed the word


@dataclass
class PartialTranscript:
    finalized: list[DecodedWord]
    tentative: list[DecodedWord]

    def words(self) -> list[str]:
        return [w.word for w in self.finalized] + [w.word for w in self.tentative]


@dataclass
class Transcript:
    words: list[DecodedWord]
    score: float


class DecoderState:
    """Per-stream beam, finalized word prefix, and chunk counter."""

    def __init__(
        self,
        token_set: TokenSet,
        trie: Trie,
        lm: ArpaLanguageModel | None = None,
        config: DecoderConfig | None = None,
    ):
        self.token_set = token_set
        self.trie = trie
        self.lm = lm
        self.config = config or DecoderConfig()
        lm_state = lm.start_state() if lm is not None else ()
        self.beam: list[Hypothesis] = [
            Hypothesis(trie.root, token_set.blank, 0.0, 0.0, 0, None, lm_state)
        ]
        self.finalized: list[DecodedWord] = []
        self.frame_index = 0
        self.chunk_count = 0

    def best(self) -> Hypothesis:
        cfg = self.config
        return min(self.beam, key=lambda h: _rank_key(h, cfg))

    def partial(self) -> PartialTranscript:
        tentative = [DecodedWord(w, f) for w, f in self.best().words()]
        return PartialTranscript(list(self.finalized), tentative)


def _rank_key(h: Hypothesis, cfg: DecoderConfig):
    # higher score first; ties: lower token index, then shorter word history
    return (-h.rank_score(cfg), h.last, h.n_words)


def acoustic_prune(row: np.ndarray, k: int, blank: int | None = None) -> list[int]:
    """Indices of the K most probable tokens (ties to the lower index).

    When a blank index is given it is always retained, even outside the top K.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    n = row.shape[0]
    if k >= n:
        return list(range(n))
    order = np.argsort(-row, kind="stable")  # stable: equal scores keep index order
    keep = {int(i) for i in order[:k]}
    if blank is not None:
        keep.add(blank)
    return sorted(keep)


def decode_chunk(state: DecoderState, emissions: np.ndarray) -> PartialTranscript:
    """Extend the beam with new emission rows; returns finalized + tentative words."""
    emissions = np.asarray(emissions)
    if emissions.size and emissions.shape[1] != len(state.token_set):
        raise InputError(
            f"emission width {emissions.shape[1]} != token set size {len(state.token_set)}"
        )
    cfg = state.config
    blank = state.token_set.blank
    if not emissions.size:
        return state.partial()  # heartbeat: state untouched
    for row in emissions:
        _advance(state, row.astype(np.float64), blank, cfg)
        state.frame_index += 1
    state.chunk_count += 1
    if cfg.history_prune_chunks and state.chunk_count % cfg.history_prune_chunks == 0:
        prune_history(state)
    return state.partial()


def _advance(state: DecoderState, row: np.ndarray, blank: int, cfg: DecoderConfig) -> None:
    if math.exp(row[blank]) > cfg.blank_threshold:
        candidates = [blank]
    else:
        candidates = acoustic_prune(row, cfg.top_k, blank)

    trie = state.trie
    lm = state.lm
    frame = state.frame_index
    merged: dict[tuple, Hypothesis] = {}

    def propose(hyp: Hypothesis) -> None:
        key = (hyp.node, hyp.last, hyp.lm_state)
        cur = merged.get(key)
        if cur is None:
            merged[key] = hyp
            return
        if cfg.merge == "logsumexp":
            a, b = cur.rank_score(cfg), hyp.rank_score(cfg)
            keep = cur if (a, -cur.last, -cur.n_words) >= (b, -hyp.last, -hyp.n_words) else hyp
            keep.merged = _logaddexp(a, b)
            merged[key] = keep
            return
        a, b = cur.total(cfg), hyp.total(cfg)
        if (b, -hyp.last, -hyp.n_words) > (a, -cur.last, -cur.n_words):
            merged[key] = hyp

    for hyp in state.beam:
        # blank: no label emitted, trie position unchanged
        propose(
            Hypothesis(
                hyp.node, blank, hyp.am + row[blank], hyp.lm, hyp.n_words, hyp.chain, hyp.lm_state
            )
        )
        children = trie.children[hyp.node]
        for tok in candidates:
            if tok == blank:
                continue
            if tok == hyp.last:
                # repeated token collapses onto the same label
                propose(
                    Hypothesis(
                        hyp.node, tok, hyp.am + row[tok], hyp.lm, hyp.n_words, hyp.chain,
                        hyp.lm_state,
                    )
                )
                continue
            child = children.get(tok)
            if child is None:
                continue
            am = hyp.am + row[tok]
            propose(Hypothesis(child, tok, am, hyp.lm, hyp.n_words, hyp.chain, hyp.lm_state))
            for word in trie.words[child]:
                if lm is not None:
                    lm_add = lm.score(hyp.lm_state, word)
                    lm_state = lm.next_state(hyp.lm_state, word)
                else:
                    lm_add, lm_state = 0.0, ()
                propose(
                    Hypothesis(
                        trie.root,
                        tok,
                        am,
                        hyp.lm + lm_add,
                        hyp.n_words + 1,
                        _WordLink(word, frame, hyp.chain),
                        lm_state,
                    )
                )

    beam = sorted(merged.values(), key=lambda h: _rank_key(h, cfg))
    state.beam = beam[: cfg.beam_size]


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def prune_history(state: DecoderState) -> DecoderState:
    """Move the word prefix shared by every hypothesis to the finalized buffer.

    Scores are untouched; only per-hypothesis history storage shrinks, so the
    final transcript is unchanged.
    """
    if not state.beam:
        return state
    histories = [h.words() for h in state.beam]
    shortest = min(len(w) for w in histories)
    common = 0
    for i in range(shortest):
        first = histories[0][i]
        if all(words[i] == first for words in histories[1:]):
            common += 1
        else:
            break
    if common == 0:
        return state
    for word, frame in histories[0][:common]:
        state.finalized.append(DecodedWord(word, frame))
    for hyp, words in zip(state.beam, histories):
        link = None
        for word, frame in words[common:]:
            link = _WordLink(word, frame, link)
        hyp.chain = link
    return state


def finalize(state: DecoderState) -> Transcript:
    """Complete decoding at end of stream.

    The best hypothesis wins; a trailing partial in-trie word is dropped
    (never force-completed) unless configured otherwise. Idempotent: the
    state is not consumed.
    """
    if not state.beam:
        return Transcript(list(state.finalized), 0.0)
    best = state.best()
    words = list(state.finalized)
    words.extend(DecodedWord(w, f) for w, f in best.words())
    if state.config.complete_partial_words and best.node != state.trie.root:
        completion = _cheapest_completion(state.trie, best.node)
        if completion is not None:
            words.append(DecodedWord(completion, state.frame_index - 1))
    return Transcript(words, best.total(state.config))


def _cheapest_completion(trie: Trie, node: int) -> str | None:
    # breadth-first to the nearest word-end below this node
    frontier = [node]
    seen = {node}
    while frontier:
        nxt = []
        for n in frontier:
            if trie.words[n]:
                return sorted(trie.words[n])[0]
            for child in trie.children[n].values():
                if child not in seen:
                    seen.add(child)
                    nxt.append(child)
        frontier = nxt
    return None


# ---------------------------------------------------------------------------
# greedy decoding with word timestamps
# ---------------------------------------------------------------------------


@dataclass
class GreedyWord:
    text: str
    start_frame: int
    end_frame: int  # first-occurrence frame of the word's last token

    def availability_ms(self, stride_ms: float, future_context_ms: float) -> float:
        return self.end_frame * stride_ms + future_context_ms


@dataclass
class GreedyResult:
    token_ids: list[int]
    token_frames: list[int]  # frame of each surviving token's first occurrence
    words: list[GreedyWord]


def greedy_decode(emissions: np.ndarray, token_set: TokenSet) -> GreedyResult:
    """Per-frame argmax, collapsed by the CTC rule (drop repeats, then blanks)."""
    emissions = np.asarray(emissions)
    if emissions.size and emissions.shape[1] != len(token_set):
        raise InputError(
            f"emission width {emissions.shape[1]} != token set size {len(token_set)}"
        )
    token_ids: list[int] = []
    frames: list[int] = []
    prev = None
    for t, row in enumerate(emissions):
        tok = int(np.argmax(row))
        if tok != prev and tok != token_set.blank:
            token_ids.append(tok)
            frames.append(t)
        prev = tok
    return GreedyResult(token_ids, frames, _group_words(token_ids, frames, token_set))


def _group_words(token_ids, frames, token_set: TokenSet) -> list[GreedyWord]:
    marker = token_set.word_marker
    words: list[GreedyWord] = []
    cur_text, cur_start, cur_end = "", 0, 0
    for tok, frame in zip(token_ids, frames):
        text = token_set.tokens[tok]
        starts_word = marker is not None and text.startswith(marker)
        if starts_word and cur_text:
            words.append(GreedyWord(cur_text, cur_start, cur_end))
            cur_text = ""
        if not cur_text:
            cur_start = frame
            cur_text = text[len(marker):] if starts_word else text
        else:
            cur_text += text
        cur_end = frame
        if marker is None:
            words.append(GreedyWord(cur_text, cur_start, cur_end))
            cur_text = ""
    if cur_text:
        words.append(GreedyWord(cur_text, cur_start, cur_end))
    return words

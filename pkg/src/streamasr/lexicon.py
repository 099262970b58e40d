"""Token set and word lexicon, compiled to a token trie for decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError


@dataclass
class TokenSet:
    """Ordered token strings with a reserved blank index.

    ``word_marker`` is an optional prefix marking word-initial subword units,
    used by the greedy decoder to group tokens into words.
    """

    tokens: list[str]
    blank: int
    word_marker: str | None = None

    def __post_init__(self):
        if not 0 <= self.blank < len(self.tokens):
            raise InputError(f"blank index {self.blank} outside token set")
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("duplicate token strings in token set")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_file(cls, path) -> "TokenSet":
        """One token per line; header lines declare the blank (and marker):

            #blank <token>
            #marker <prefix>
        """
        blank_token = None
        marker = None
        tokens: list[str] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#blank"):
                    blank_token = line.split(None, 1)[1]
                elif line.startswith("#marker"):
                    marker = line.split(None, 1)[1]
                elif line.startswith("#"):
                    continue
                else:
                    tokens.append(line)
        if blank_token is None:
            raise InputError(f"{path}: missing '#blank <token>' header")
        if blank_token not in tokens:
            raise InputError(f"{path}: blank token {blank_token!r} not in token list")
        return cls(tokens, tokens.index(blank_token), marker)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#blank {self.tokens[self.blank]}\n")
            if self.word_marker:
                fh.write(f"#marker {self.word_marker}\n")
            for tok in self.tokens:
                fh.write(tok + "\n")


class Trie:
    """Token-id trie; each node lists the words whose spelling ends there."""

    def __init__(self):
        self.children: list[dict[int, int]] = [{}]
        self.words: list[list[str]] = [[]]

    @property
    def root(self) -> int:
        return 0

    def insert(self, token_ids: tuple[int, ...], word: str) -> None:
        node = 0
        for tok in token_ids:
            nxt = self.children[node].get(tok)
            if nxt is None:
                nxt = len(self.children)
                self.children[node][tok] = nxt
                self.children.append({})
                self.words.append([])
            node = nxt
        if word not in self.words[node]:
            self.words[node].append(word)

    def __len__(self) -> int:
        return len(self.children)


@dataclass
class Lexicon:
    """Map word -> one or more token spellings."""

    entries: dict[str, list[tuple[int, ...]]] = field(default_factory=dict)

    def add(self, word: str, spelling: tuple[int, ...]) -> None:
        self.entries.setdefault(word, [])
        if spelling not in self.entries[word]:
            self.entries[word].append(spelling)

    def compile(self) -> Trie:
        trie = Trie()
        for word, spellings in self.entries.items():
            for spelling in spellings:
                if not spelling:
                    raise InputError(f"word {word!r} has an empty spelling")
                trie.insert(spelling, word)
        return trie

    @classmethod
    def from_file(cls, path, token_set: TokenSet) -> "Lexicon":
        """One entry per line: ``word<TAB>tok1 tok2 ...``."""
        lex = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                if "\t" not in line:
                    raise InputError(f"{path}:{ln}: expected 'word<TAB>tokens'")
                word, spelling_str = line.split("\t", 1)
                ids = []
                for tok in spelling_str.split():
                    if tok not in token_set.index:
                        raise InputError(f"{path}:{ln}: token {tok!r} not in token set")
                    ids.append(token_set.index[tok])
                lex.add(word, tuple(ids))
        return lex

    def to_file(self, path, token_set: TokenSet) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word, spellings in self.entries.items():
                for spelling in spellings:
                    toks = " ".join(token_set.tokens[i] for i in spelling)
                    fh.write(f"{word}\t{toks}\n")

"""Tokenization, vowel lexicon, song structure and corpus/lexicon/vocabulary I/O."""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator


class DataError(ValueError):
    """Raised for malformed corpus/lexicon/vocabulary inputs."""


# Closed set of special token surfaces.
BOS = "[B]"
EOS = "[E]"
SEP = "[S]"
MASK = "[M]"
KEY = "[K]"
KEY_SEP = "[W]"
GEN = "[G]"
PAD = "[PAD]"
UNK = "[UNK]"

SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, SEP, MASK, KEY, KEY_SEP, GEN)

HAN = "han-character"
LATIN = "latin-word"
SPECIAL = "special"

_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2A6DF),
)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


@dataclass(frozen=True)
class Token:
    surface: str
    kind: str = HAN

    def __post_init__(self):
        if self.kind == HAN and len(self.surface) != 1:
            raise ValueError(f"han token must be one code point: {self.surface!r}")
        if self.kind == LATIN and any(c.isspace() for c in self.surface):
            raise ValueError(f"latin token contains whitespace: {self.surface!r}")
        if self.kind == SPECIAL and self.surface not in SPECIAL_TOKENS:
            raise ValueError(f"unknown special token: {self.surface!r}")


def special(surface: str) -> Token:
    return Token(surface, SPECIAL)


def tokenize(text: str) -> list[Token]:
    """Split text into per-character han tokens and whitespace-free latin words.

    Every CJK code point becomes its own token; maximal non-CJK, non-space runs
    become single latin-word tokens. Unknown symbols fall into the latin class.
    """
    tokens: list[Token] = []
    buf: list[str] = []

    def flush():
        if buf:
            tokens.append(Token("".join(buf), LATIN))
            buf.clear()

    for ch in text:
        if ch.isspace():
            flush()
        elif is_cjk(ch):
            flush()
            tokens.append(Token(ch, HAN))
        else:
            buf.append(ch)
    flush()
    return tokens


def detokenize(tokens: Iterable[Token]) -> str:
    """Inverse of tokenize modulo collapsed whitespace."""
    out: list[str] = []
    prev_latin = False
    for tok in tokens:
        if tok.kind == LATIN and prev_latin:
            out.append(" ")
        out.append(tok.surface)
        prev_latin = tok.kind == LATIN
    return "".join(out)


@dataclass(frozen=True)
class Song:
    """Ordered sentences of tokens; the unit of rewriting and evaluation."""

    sentences: tuple[tuple[Token, ...], ...]
    title: str | None = None

    def __post_init__(self):
        if not self.sentences:
            raise DataError("song has no sentences")
        for i, sent in enumerate(self.sentences):
            if not sent:
                raise DataError(f"sentence {i} is empty")
            for tok in sent:
                if tok.kind == SPECIAL:
                    raise DataError(f"special token {tok.surface} inside sentence {i}")

    @classmethod
    def from_lines(cls, lines: Iterable[str], title: str | None = None) -> "Song":
        sentences = tuple(tuple(tokenize(line)) for line in lines)
        return cls(sentences=sentences, title=title)

    @property
    def num_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def lines(self) -> list[str]:
        return [detokenize(s) for s in self.sentences]

    def token_at(self, sentence: int, index: int) -> Token:
        return self.sentences[sentence][index]

    def to_record(self) -> dict:
        rec = {"lines": self.lines()}
        if self.title is not None:
            rec["title"] = self.title
        return rec


@dataclass(frozen=True, order=True)
class Vowel:
    id: int
    name: str


class VowelLexicon:
    """Total token-surface -> vowel map with a NO_VOWEL fallback class.

    Vowel ids are dense 0..V-1 over the names present in the table (sorted);
    NO_VOWEL gets id V and the empty name.
    """

    def __init__(self, entries: dict[str, str]):
        names = sorted(set(entries.values()))
        self._vowels = {name: Vowel(i, name) for i, name in enumerate(names)}
        self.no_vowel = Vowel(len(names), "")
        self._entries = {surf: self._vowels[name] for surf, name in entries.items()}

    @property
    def vowels(self) -> list[Vowel]:
        return sorted(self._vowels.values())

    @property
    def num_classes(self) -> int:
        return len(self._vowels)

    def vowel_of(self, token: Token | str) -> Vowel:
        surface = token.surface if isinstance(token, Token) else token
        return self._entries.get(surface, self.no_vowel)

    def by_name(self, name: str) -> Vowel:
        if name == "":
            return self.no_vowel
        if name not in self._vowels:
            raise DataError(f"unknown vowel name: {name!r}")
        return self._vowels[name]

    def entries(self) -> dict[str, str]:
        return {surf: v.name for surf, v in self._entries.items()}

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for surf in sorted(self._entries):
            h.update(f"{surf}\t{self._entries[surf].name}\n".encode())
        return h.hexdigest()


class Vocabulary:
    """Dense token-surface <-> id bijection including all special tokens."""

    def __init__(self, surfaces: Iterable[str]):
        self._surfaces = list(surfaces)
        self._ids = {s: i for i, s in enumerate(self._surfaces)}
        if len(self._ids) != len(self._surfaces):
            raise DataError("duplicate surfaces in vocabulary")
        missing = [s for s in SPECIAL_TOKENS if s not in self._ids]
        if missing:
            raise DataError(f"vocabulary missing special tokens: {missing}")

    def __len__(self) -> int:
        return len(self._surfaces)

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def id(self, surface: str) -> int:
        return self._ids.get(surface, self._ids[UNK])

    def surface(self, idx: int) -> str:
        return self._surfaces[idx]

    @property
    def surfaces(self) -> list[str]:
        return list(self._surfaces)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self._ids[s] for s in SPECIAL_TOKENS)

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self._surfaces).encode()).hexdigest()


def build_vocabulary(corpus: Iterable[Song], min_count: int = 1) -> Vocabulary:
    """Corpus tokens with frequency >= min_count, plus specials and UNK.

    Non-special surfaces are ordered by (frequency desc, surface lexicographic)
    so the result is deterministic.
    """
    corpus = list(corpus)
    if not corpus:
        raise DataError("empty corpus")
    counts: Counter[str] = Counter()
    for song in corpus:
        for sent in song.sentences:
            counts.update(tok.surface for tok in sent)
    threshold = max(min_count, 1)
    kept = sorted(
        (s for s, c in counts.items() if c >= threshold),
        key=lambda s: (-counts[s], s),
    )
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


# ---------------------------------------------------------------------------
# File formats


def iter_corpus(path: str | Path) -> Iterator[Song]:
    """Newline-delimited JSON records {"title": str?, "lines": [str]}."""
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid record: {e}") from e
            if not isinstance(rec, dict) or "lines" not in rec:
                raise DataError(f"{path}:{lineno}: record must have a 'lines' field")
            try:
                yield Song.from_lines(rec["lines"], title=rec.get("title"))
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e


def load_corpus(path: str | Path) -> list[Song]:
    songs = list(iter_corpus(path))
    if not songs:
        raise DataError(f"{path}: empty corpus")
    return songs


def save_corpus(songs: Iterable[Song], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for song in songs:
            f.write(json.dumps(song.to_record(), ensure_ascii=False) + "\n")


def load_lexicon(path: str | Path) -> VowelLexicon:
    """Two-column TSV `surface<TAB>vowel-name`; duplicate surfaces: last wins."""
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.rstrip("\n")
            if not raw or raw.startswith("#"):
                continue
            parts = raw.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 'surface<TAB>vowel'")
            surface, vowel = parts
            if surface in entries and entries[surface] != vowel:
                warnings.warn(
                    f"{path}:{lineno}: duplicate surface {surface!r}, last entry wins"
                )
            entries[surface] = vowel
    if not entries:
        raise DataError(f"{path}: empty lexicon")
    return VowelLexicon(entries)


def load_vocabulary(path: str | Path) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        surfaces = [line.rstrip("\n") for line in f if line.rstrip("\n")]
    return Vocabulary(surfaces)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in vocab.surfaces:
            f.write(s + "\n")


def default_lexicon() -> VowelLexicon:
    """The shipped pinyin-finals table."""
    ref = resources.files("versewright").joinpath("data/finals.tsv")
    with resources.as_file(ref) as p:
        return load_lexicon(p)


def default_content_words() -> set[str]:
    """The shipped noun/verb word list backing keyword extraction."""
    ref = resources.files("versewright").joinpath("data/content_words.txt")
    words = set()
    for line in ref.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return words

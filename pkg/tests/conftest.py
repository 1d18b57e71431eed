import numpy as np
import pytest

from versewright.masking import MaskPlan, MaskScheme
from versewright.text import (
    Song,
    Token,
    VowelLexicon,
    build_vocabulary,
    default_lexicon,
)


@pytest.fixture(scope="session")
def shipped_lexicon():
    return default_lexicon()


@pytest.fixture
def tiny_lexicon():
    # three vowel classes over a six-token vocabulary
    return VowelLexicon({"来": "ai", "开": "ai", "走": "ou", "手": "ou", "天": "ian", "年": "ian"})


@pytest.fixture
def hand_song():
    # end vowels ai, ai, ou, ai; end tokens 来 来 走 开
    return Song.from_lines(["我来", "你来", "我走", "花开"])


def make_synthetic_song(rng: np.random.Generator, chars: list[str], max_sents=6, max_len=6) -> Song:
    n_sents = int(rng.integers(2, max_sents + 1))
    lines = []
    for _ in range(n_sents):
        n = int(rng.integers(1, max_len + 1))
        lines.append("".join(rng.choice(chars, size=n)))
    return Song.from_lines(lines)


def full_mask(song: Song) -> MaskPlan:
    masked = frozenset(
        (si, ti) for si, s in enumerate(song.sentences) for ti in range(len(s))
    )
    return MaskPlan(MaskScheme.ALL, masked, frozenset())


@pytest.fixture
def synthetic_chars(shipped_lexicon):
    # chinese characters with known finals, for random song construction
    return [s for s in shipped_lexicon.entries()][:60]

"""Rhyme and content evaluation metrics with a pluggable sentence embedder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch

from .masking import MaskPlan, MaskScheme, assemble_example
from .model import Seq2SeqModel, collate, token_loss
from .text import PAD, Song, Token, Vocabulary, VowelLexicon

RHYME_WINDOWS = (1, 2, 3, 4)


class SentenceEmbedder(Protocol):
    def embed(self, sentence: Sequence[Token]) -> np.ndarray: ...


class EncoderMeanEmbedder:
    """Mean-pooled encoder token vectors of the trained model."""

    def __init__(self, model: Seq2SeqModel, vocab: Vocabulary, lexicon: VowelLexicon):
        self.model = model
        self.vocab = vocab
        self.lexicon = lexicon

    @torch.no_grad()
    def embed(self, sentence: Sequence[Token]) -> np.ndarray:
        song = Song(sentences=(tuple(sentence),))
        plan = MaskPlan(MaskScheme.TOKEN, frozenset(), frozenset())
        ex = assemble_example(song, plan, self.model.config.order, self.vocab, self.lexicon)
        batch = collate([_with_dummy_target(ex)], self.vocab.id(PAD))
        memory = self.model.encode(batch)
        # body positions: skip [K], [B]; drop trailing [S], [E]
        start, stop = 2, 2 + len(sentence)
        return memory[0, start:stop].mean(dim=0).cpu().numpy()


def _with_dummy_target(ex):
    # collate requires at least one decoder step; the encoder output ignores it
    from dataclasses import replace

    return replace(
        ex,
        decoder_input_tokens=(0,),
        target_tokens=(0,),
        dec_global=(0,),
        dec_sentence=(0,),
        dec_local=(0,),
        target_vowel_labels=(-1,),
        target_positions=((0, 0),),
    )


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# Diversity


def distinct_n(song: Song, n: int) -> float:
    """Unique n-grams over total n-grams; n-grams never cross sentence
    boundaries. Songs shorter than n contribute 0."""
    grams = []
    for sent in song.sentences:
        surfaces = tuple(t.surface for t in sent)
        grams.extend(surfaces[i : i + n] for i in range(len(surfaces) - n + 1))
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def diversity(song: Song) -> float:
    return sum(distinct_n(song, n) for n in range(1, 5)) / 4


# ---------------------------------------------------------------------------
# Coherence


def local_sts(song: Song, embedder: SentenceEmbedder) -> float | None:
    if len(song.sentences) < 2:
        return None
    embs = [embedder.embed(s) for s in song.sentences]
    sims = [_cosine(embs[i], embs[i + 1]) for i in range(len(embs) - 1)]
    return float(np.mean(sims))


def global_sts(song: Song, embedder: SentenceEmbedder) -> float | None:
    n = len(song.sentences)
    if n < 2:
        return None
    embs = [embedder.embed(s) for s in song.sentences]
    sims = [
        _cosine(embs[i], embs[j]) for i in range(n - 1) for j in range(i + 1, n)
    ]
    return float(np.mean(sims))


def coherence(song: Song, embedder: SentenceEmbedder) -> float | None:
    g, l = global_sts(song, embedder), local_sts(song, embedder)
    if g is None or l is None:
        return None
    return (g + l) / 2


# ---------------------------------------------------------------------------
# Perplexity


@torch.no_grad()
def perplexity(
    model: Seq2SeqModel, vocab: Vocabulary, lexicon: VowelLexicon, song: Song
) -> float:
    """Self-model perplexity: exp of the mean token NLL under full-song
    masking with teacher forcing (natural log; not comparable with external
    language-model judges)."""
    masked = frozenset(
        (si, ti) for si, s in enumerate(song.sentences) for ti in range(len(s))
    )
    plan = MaskPlan(MaskScheme.ALL, masked, frozenset())
    ex = assemble_example(song, plan, model.config.order, vocab, lexicon)
    batch = collate([ex], vocab.id(PAD))
    model.eval()
    logits = model(batch)
    return float(torch.exp(token_loss(logits, batch["targets"], batch["dec_pad_mask"])))


# ---------------------------------------------------------------------------
# Controllability


def keyword_recall(keywords: Sequence[Sequence[str]], song: Song) -> float | None:
    """Fraction of keywords whose token sequence appears contiguously inside
    a single sentence of the song."""
    if not keywords:
        return None
    sent_surfaces = [tuple(t.surface for t in s) for s in song.sentences]
    hits = 0
    for kw in keywords:
        kw = tuple(kw)
        found = any(
            surfaces[i : i + len(kw)] == kw
            for surfaces in sent_surfaces
            for i in range(len(surfaces) - len(kw) + 1)
        )
        hits += found
    return hits / len(keywords)


def vowel_accuracy(
    required_vowels: dict[tuple[int, int], str], song: Song, lexicon: VowelLexicon
) -> float | None:
    if not required_vowels:
        return None
    correct = 0
    for (si, ti), name in required_vowels.items():
        tok = song.sentences[si][ti]
        correct += lexicon.vowel_of(tok).name == name
    return correct / len(required_vowels)


# ---------------------------------------------------------------------------
# Rhyme metrics (over eligible sentences: end token has a vowel)


def _end_vowels(song: Song, lexicon: VowelLexicon) -> list[int | None]:
    out = []
    for sent in song.sentences:
        v = lexicon.vowel_of(sent[-1])
        out.append(None if v.id == lexicon.no_vowel.id else v.id)
    return out


def local_rhyme_n(song: Song, n: int, lexicon: VowelLexicon) -> float:
    """Fraction of eligible sentences with at least one same-end-vowel
    eligible sentence within n positions before or after."""
    vowels = _end_vowels(song, lexicon)
    eligible = [i for i, v in enumerate(vowels) if v is not None]
    if len(eligible) < 2:
        return 0.0
    rhymed = 0
    for i in eligible:
        lo, hi = max(0, i - n), min(len(vowels) - 1, i + n)
        if any(j != i and vowels[j] == vowels[i] for j in range(lo, hi + 1)):
            rhymed += 1
    return rhymed / len(eligible)


def rhyme_l(song: Song, lexicon: VowelLexicon) -> float:
    return sum(local_rhyme_n(song, n, lexicon) for n in RHYME_WINDOWS) / len(RHYME_WINDOWS)


def rhyme_g(song: Song, lexicon: VowelLexicon) -> float:
    """1 - unique end vowels / eligible sentence count."""
    vowels = [v for v in _end_vowels(song, lexicon) if v is not None]
    if not vowels:
        return 0.0
    return 1 - len(set(vowels)) / len(vowels)


def dist_rw(song: Song) -> float:
    """Unique end words over total end words."""
    ends = [s[-1].surface for s in song.sentences]
    return len(set(ends)) / len(ends)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class SongMetrics:
    diversity: float
    dist_rw: float
    rhyme_l: float
    rhyme_g: float
    local_rhyme_n: dict[int, float]
    local_sts: float | None = None
    global_sts: float | None = None
    coherence: float | None = None
    ppl: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "diversity": self.diversity,
            "dist_rw": self.dist_rw,
            "rhyme_l": self.rhyme_l,
            "rhyme_g": self.rhyme_g,
            **{f"local_rhyme_{n}": v for n, v in self.local_rhyme_n.items()},
            "local_sts": self.local_sts,
            "global_sts": self.global_sts,
            "coherence": self.coherence,
            "self_ppl": self.ppl,
            "flags": self.flags,
        }


def song_metrics(
    song: Song,
    lexicon: VowelLexicon,
    embedder: SentenceEmbedder | None = None,
    model: Seq2SeqModel | None = None,
    vocab: Vocabulary | None = None,
) -> SongMetrics:
    flags = []
    if len(song.sentences) < 2:
        flags.append("single-sentence: coherence omitted")
    vowels = [v for v in _end_vowels(song, lexicon) if v is not None]
    if len(vowels) < 2:
        flags.append("fewer than 2 vowel-bearing line ends: rhyme metrics degenerate")
    m = SongMetrics(
        diversity=diversity(song),
        dist_rw=dist_rw(song),
        rhyme_l=rhyme_l(song, lexicon),
        rhyme_g=rhyme_g(song, lexicon),
        local_rhyme_n={n: local_rhyme_n(song, n, lexicon) for n in RHYME_WINDOWS},
        flags=flags,
    )
    if embedder is not None:
        m.local_sts = local_sts(song, embedder)
        m.global_sts = global_sts(song, embedder)
        m.coherence = coherence(song, embedder)
    if model is not None and vocab is not None:
        m.ppl = perplexity(model, vocab, lexicon, song)
    for name in ("diversity", "dist_rw", "rhyme_l", "rhyme_g"):
        value = getattr(m, name)
        assert 0.0 <= value <= 1.0, f"{name} out of [0,1]: {value}"
    return m


_MEAN_FIELDS = (
    "diversity",
    "local_sts",
    "global_sts",
    "coherence",
    "self_ppl",
    "dist_rw",
    "rhyme_l",
    "rhyme_g",
)


@dataclass
class MetricReport:
    per_song: list[dict]
    means: dict[str, float | None]
    deltas: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"per_song": self.per_song, "means": self.means, "deltas": self.deltas}

    def table(self) -> str:
        """Plain-text table with a fixed column order."""
        cols = list(_MEAN_FIELDS)
        header = "  ".join(f"{c:>10}" for c in cols)
        fmt = lambda v: "       n/a" if v is None else f"{v:10.3f}"
        rows = ["  ".join(fmt(self.means.get(c)) for c in cols)]
        if self.deltas:
            rows.append(
                "  ".join(
                    fmt(self.deltas.get("delta_" + c)) if ("delta_" + c) in self.deltas else "          "
                    for c in cols
                )
            )
        return header + "\n" + "\n".join(rows)


def _mean(values: list[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def report(
    corpus: Sequence[Song],
    lexicon: VowelLexicon,
    embedder: SentenceEmbedder | None = None,
    model: Seq2SeqModel | None = None,
    vocab: Vocabulary | None = None,
    reference_corpus: Sequence[Song] | None = None,
) -> MetricReport:
    records = [
        song_metrics(s, lexicon, embedder, model, vocab).to_record() for s in corpus
    ]
    means = {f: _mean([r.get(f) for r in records]) for f in _MEAN_FIELDS}
    deltas = {}
    if reference_corpus is not None:
        ref = report(reference_corpus, lexicon, embedder, model, vocab)
        for f in ("diversity", "coherence", "self_ppl"):
            a, b = means.get(f), ref.means.get(f)
            if a is not None and b is not None:
                deltas["delta_" + f] = abs(a - b)
    return MetricReport(per_song=records, means=means, deltas=deltas)

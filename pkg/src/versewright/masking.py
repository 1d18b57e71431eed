"""Mask plans, keyword prompts and assembly of encoder/decoder training examples."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .text import (
    BOS,
    EOS,
    GEN,
    KEY,
    KEY_SEP,
    MASK,
    SEP,
    DataError,
    Song,
    Token,
    Vocabulary,
    VowelLexicon,
    tokenize,
)

VOWEL_KEEP_PROB = 0.2
MAX_KEYWORDS = 5
ABSENT = -1  # no vowel label at this target step


class MaskScheme(str, Enum):
    TOKEN = "token"
    SENT = "sent"
    ALL = "all"


@dataclass(frozen=True)
class OrderConfig:
    """Token order within sentences and direction of the local position channel.

    The default (reversed tokens, sequential local positions) puts the rhyming
    end character first in each sentence with local position 0.
    """

    token_order: str = "reversed"  # "reversed" | "sequential"
    local_position_order: str = "sequential"  # "sequential" | "reversed"

    def __post_init__(self):
        if self.token_order not in ("reversed", "sequential"):
            raise ValueError(f"bad token_order: {self.token_order}")
        if self.local_position_order not in ("sequential", "reversed"):
            raise ValueError(f"bad local_position_order: {self.local_position_order}")


@dataclass(frozen=True)
class MaskPlan:
    scheme: MaskScheme
    masked_positions: frozenset[tuple[int, int]]
    vowel_kept_positions: frozenset[tuple[int, int]]
    keyword_list: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if not self.vowel_kept_positions <= self.masked_positions:
            raise ValueError("vowel_kept_positions must be a subset of masked_positions")
        if len(self.keyword_list) > MAX_KEYWORDS:
            raise ValueError(f"at most {MAX_KEYWORDS} keywords allowed")

    def with_keywords(self, keywords: Sequence[Sequence[str]]) -> "MaskPlan":
        return replace(self, keyword_list=tuple(tuple(k) for k in keywords))

    def is_masked(self, sentence: int, index: int) -> bool:
        return (sentence, index) in self.masked_positions


def _random_composition(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    """Split `total` into `parts` non-negative integers, uniformly at random."""
    if parts == 1:
        return [total]
    cuts = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    prev = -1
    out = []
    for c in cuts:
        out.append(int(c - prev - 1))
        prev = c
    out.append(int(total + parts - 2 - prev))
    return out


def _sample_fragments(length: int, masked: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Place `masked` tokens as 1..3 contiguous fragments inside a sentence."""
    nfrag = min(int(rng.integers(1, 4)), masked)
    sizes = [s + 1 for s in _random_composition(masked - nfrag, nfrag, rng)]
    gaps = _random_composition(length - masked, nfrag + 1, rng)
    spans = []
    pos = 0
    for size, gap in zip(sizes, gaps):
        pos += gap
        spans.append((pos, size))
        pos += size
    return spans


def sample_mask_plan(
    song: Song,
    scheme: MaskScheme,
    rng: np.random.Generator,
    ratio: float | None = None,
) -> MaskPlan:
    """Draw a mask plan per scheme; ratios are U(0,1) with ceiling rounding
    unless `ratio` forces a fixed value."""
    masked: set[tuple[int, int]] = set()
    if scheme is MaskScheme.ALL:
        for si, sent in enumerate(song.sentences):
            masked.update((si, ti) for ti in range(len(sent)))
    elif scheme is MaskScheme.SENT:
        r = float(rng.random()) if ratio is None else ratio
        count = math.ceil(r * len(song.sentences))
        chosen = rng.choice(len(song.sentences), size=count, replace=False)
        for si in chosen:
            masked.update((int(si), ti) for ti in range(len(song.sentences[si])))
    elif scheme is MaskScheme.TOKEN:
        for si, sent in enumerate(song.sentences):
            r = float(rng.random()) if ratio is None else ratio
            count = math.ceil(r * len(sent))
            if count == 0:
                continue
            for start, size in _sample_fragments(len(sent), count, rng):
                masked.update((si, ti) for ti in range(start, start + size))
    else:
        raise ValueError(f"unknown scheme: {scheme}")

    kept = {pos for pos in masked if rng.random() < VOWEL_KEEP_PROB}
    return MaskPlan(scheme, frozenset(masked), frozenset(kept))


def masked_fragments(song: Song, plan: MaskPlan) -> list[tuple[int, int, int]]:
    """Contiguous masked runs as (sentence, start, length), in original order."""
    frags = []
    for si, sent in enumerate(song.sentences):
        start = None
        for ti in range(len(sent) + 1):
            if ti < len(sent) and plan.is_masked(si, ti):
                if start is None:
                    start = ti
            elif start is not None:
                frags.append((si, start, ti - start))
                start = None
    return frags


def extract_keywords(
    song: Song,
    plan: MaskPlan,
    content_lexicon: set[str],
    rng: np.random.Generator,
) -> tuple[tuple[str, ...], ...]:
    """Greedy longest-match content words fully inside masked fragments,
    then a uniform 0..min(5, found) sample without replacement, in order."""
    max_len = max((len(w) for w in content_lexicon), default=0)
    candidates: list[tuple[str, ...]] = []
    for si, start, length in masked_fragments(song, plan):
        surfaces = [song.sentences[si][start + k].surface for k in range(length)]
        i = 0
        while i < length:
            match = None
            for wlen in range(min(max_len, length - i), 0, -1):
                word = "".join(surfaces[i : i + wlen])
                if word in content_lexicon:
                    match = wlen
                    candidates.append(tuple(surfaces[i : i + wlen]))
                    break
            i += match if match else 1
    limit = min(MAX_KEYWORDS, len(candidates))
    count = int(rng.integers(0, limit + 1))
    if count == 0:
        return ()
    idx = np.sort(rng.choice(len(candidates), size=count, replace=False))
    return tuple(candidates[int(i)] for i in idx)


def build_prompt(keywords: Sequence[Sequence[str]]) -> list[Token]:
    """[K] k00.. [W] k10.. [W] ... [W]; an empty keyword list yields just [K]."""
    if len(keywords) > MAX_KEYWORDS:
        raise ValueError(f"at most {MAX_KEYWORDS} keywords allowed")
    toks = [Token(KEY, "special")]
    for kw in keywords:
        for surf in kw:
            toks.extend(tokenize(surf))
        toks.append(Token(KEY_SEP, "special"))
    return toks


@dataclass(frozen=True)
class TrainingExample:
    """Assembled encoder/decoder sequences with four position channels.

    Decoder position channels copy those of the corresponding masked encoder
    positions; target_vowel_labels is ABSENT except on vowel-kept positions
    whose ground-truth vowel exists.
    """

    encoder_tokens: tuple[int, ...]
    encoder_vowels: tuple[int, ...]
    enc_global: tuple[int, ...]
    enc_sentence: tuple[int, ...]
    enc_local: tuple[int, ...]
    decoder_input_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]
    dec_global: tuple[int, ...]
    dec_sentence: tuple[int, ...]
    dec_local: tuple[int, ...]
    target_vowel_labels: tuple[int, ...]
    target_positions: tuple[tuple[int, int], ...]  # (sentence, token) per target step

    def __post_init__(self):
        n = len(self.target_tokens)
        if len(self.decoder_input_tokens) != n:
            raise ValueError("decoder input/target length mismatch")
        if not (len(self.dec_global) == len(self.dec_sentence) == len(self.dec_local) == n):
            raise ValueError("decoder channel length mismatch")
        if len(self.target_vowel_labels) != n or len(self.target_positions) != n:
            raise ValueError("target annotation length mismatch")


def sentence_encoder_order(length: int, order: OrderConfig) -> list[int]:
    """Original token indices of a sentence in encoder order."""
    idx = list(range(length))
    return idx[::-1] if order.token_order == "reversed" else idx


def sentence_local_positions(length: int, order: OrderConfig) -> list[int]:
    """Local position values along encoder order."""
    pos = list(range(length))
    return pos[::-1] if order.local_position_order == "reversed" else pos


def assemble_example(
    song: Song,
    plan: MaskPlan,
    order: OrderConfig,
    vocab: Vocabulary,
    lexicon: VowelLexicon,
    vowel_inputs: dict[tuple[int, int], int] | None = None,
    max_len: int | None = None,
) -> TrainingExample:
    """Build the encoder sequence (prompt ++ [B] ++ masked sentences ++ [E])
    and the decoder sequences over the masked positions in encoder order.

    `vowel_inputs` overrides the encoder vowel id at kept positions; by default
    the ground-truth vowel from the song is used (training convention). Keys of
    the override must be masked positions.
    """
    no_vowel = lexicon.num_classes
    mask_vowel = lexicon.num_classes + 1

    if vowel_inputs is None:
        vowel_inputs = {}
        for si, ti in plan.vowel_kept_positions:
            vowel_inputs[(si, ti)] = lexicon.vowel_of(song.sentences[si][ti]).id
    else:
        bad = set(vowel_inputs) - plan.masked_positions
        if bad:
            raise ValueError(f"vowel inputs on unmasked positions: {sorted(bad)}")

    enc_tokens: list[int] = []
    enc_vowels: list[int] = []
    enc_sent: list[int] = []
    enc_local: list[int] = []
    # Channels of each masked position, recorded as the encoder is laid out.
    targets: list[int] = []
    dec_sent: list[int] = []
    dec_local: list[int] = []
    dec_global: list[int] = []
    labels: list[int] = []
    positions: list[tuple[int, int]] = []

    def push(token_id: int, vowel_id: int, sent_pos: int, local_pos: int):
        enc_tokens.append(token_id)
        enc_vowels.append(vowel_id)
        enc_sent.append(sent_pos)
        enc_local.append(local_pos)

    prompt = build_prompt(plan.keyword_list)
    for j, tok in enumerate(prompt):
        push(vocab.id(tok.surface), no_vowel, 0, j)
    push(vocab.id(BOS), no_vowel, 0, 0)

    num_sents = len(song.sentences)
    for si, sent in enumerate(song.sentences):
        enc_idx = sentence_encoder_order(len(sent), order)
        locals_ = sentence_local_positions(len(sent), order)
        for k, ti in enumerate(enc_idx):
            tok = sent[ti]
            true_vowel = lexicon.vowel_of(tok).id
            if plan.is_masked(si, ti):
                kept = (si, ti) in vowel_inputs
                vowel_in = vowel_inputs[(si, ti)] if kept else mask_vowel
                gpos = len(enc_tokens)
                push(vocab.id(MASK), vowel_in, si + 1, locals_[k])
                targets.append(vocab.id(tok.surface))
                dec_sent.append(si + 1)
                dec_local.append(locals_[k])
                dec_global.append(gpos)
                if kept and vowel_inputs[(si, ti)] < lexicon.num_classes:
                    labels.append(vowel_inputs[(si, ti)])
                else:
                    labels.append(ABSENT)
                positions.append((si, ti))
            else:
                push(vocab.id(tok.surface), true_vowel, si + 1, locals_[k])
        push(vocab.id(SEP), no_vowel, si + 1, len(sent))
    push(vocab.id(EOS), no_vowel, num_sents + 1, 0)

    if max_len is not None and len(enc_tokens) > max_len:
        raise DataError(f"sequence too long: {len(enc_tokens)} > {max_len}")

    dec_inputs = [vocab.id(GEN)] + targets[:-1] if targets else []
    return TrainingExample(
        encoder_tokens=tuple(enc_tokens),
        encoder_vowels=tuple(enc_vowels),
        enc_global=tuple(range(len(enc_tokens))),
        enc_sentence=tuple(enc_sent),
        enc_local=tuple(enc_local),
        decoder_input_tokens=tuple(dec_inputs),
        target_tokens=tuple(targets),
        dec_global=tuple(dec_global),
        dec_sentence=tuple(dec_sent),
        dec_local=tuple(dec_local),
        target_vowel_labels=tuple(labels),
        target_positions=tuple(positions),
    )


# ---------------------------------------------------------------------------
# Mask-spec wire format (shared by CLI, service and UI)


def plan_to_spec(song: Song, plan: MaskPlan, required_vowels: dict[tuple[int, int], str] | None = None) -> dict:
    spec: dict = {
        "spans": [
            {"sentence": si, "start": start, "length": length}
            for si, start, length in masked_fragments(song, plan)
        ],
        "keywords": ["".join(kw) for kw in plan.keyword_list],
    }
    if required_vowels:
        spec["required_vowels"] = [
            {"sentence": si, "token": ti, "vowel": name}
            for (si, ti), name in sorted(required_vowels.items())
        ]
    return spec


def spec_to_plan(song: Song, spec: dict) -> tuple[MaskPlan, dict[tuple[int, int], str]]:
    """Parse the mask-spec wire format against a song, validating bounds."""
    masked: set[tuple[int, int]] = set()
    for span in spec.get("spans", []):
        si, start, length = span["sentence"], span["start"], span["length"]
        if not (0 <= si < len(song.sentences)):
            raise DataError(f"span sentence {si} out of range")
        if length < 1 or start < 0 or start + length > len(song.sentences[si]):
            raise DataError(f"span {span} out of bounds for sentence {si}")
        masked.update((si, ti) for ti in range(start, start + length))

    required: dict[tuple[int, int], str] = {}
    for rv in spec.get("required_vowels", []):
        pos = (rv["sentence"], rv["token"])
        if pos not in masked:
            raise DataError(f"required vowel at unmasked position {pos}")
        required[pos] = rv["vowel"]

    keywords = tuple(
        tuple(t.surface for t in tokenize(kw)) for kw in spec.get("keywords", [])
    )
    plan = MaskPlan(
        MaskScheme.TOKEN,
        frozenset(masked),
        frozenset(required),
        keyword_list=keywords,
    )
    return plan, required


def load_mask_spec(path) -> dict:
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid mask-spec: {e}") from e

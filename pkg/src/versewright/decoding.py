"""Constrained autoregressive generation: top-K sampling, the end-character
rhyme adjustment, vowel constraints, and splicing outputs back into the song."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .masking import MaskPlan, assemble_example
from .model import Seq2SeqModel
from .text import Song, Token, Vocabulary, VowelLexicon, is_cjk

PROB_TOL = 1e-9


class DegenerateDistribution(ValueError):
    pass


class NoVowelSupport(ValueError):
    pass


@dataclass
class DecodeConfig:
    k: int = 32
    lam: float = 1.4  # boost for tokens whose vowel is already an end vowel
    gamma: float = 0.3  # damp for tokens already used as end characters
    vowel_mode: str = "soft"  # "soft" | "hard"
    seed: int = 0
    temperature: float = 1.0
    init_history_from_source: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lam <= 0 or self.gamma <= 0:
            raise ValueError("lambda and gamma must be > 0")
        if self.vowel_mode not in ("soft", "hard"):
            raise ValueError(f"bad vowel_mode: {self.vowel_mode}")


@dataclass
class RhymeHistory:
    """Running end-character token ids and end-vowel ids of decoded sentences."""

    e_history: set[int] = field(default_factory=set)
    v_history: set[int] = field(default_factory=set)

    def update(self, token_id: int, vowel_id: int, no_vowel_id: int) -> None:
        self.e_history.add(token_id)
        if vowel_id != no_vowel_id:
            self.v_history.add(vowel_id)


@dataclass(frozen=True)
class RewriteRequest:
    song: Song
    plan: MaskPlan
    required_vowels: dict[tuple[int, int], str] = field(default_factory=dict)
    config: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        bad = set(self.required_vowels) - self.plan.masked_positions
        if bad:
            raise ValueError(f"required vowels at unmasked positions: {sorted(bad)}")


@dataclass
class DecodeReport:
    seed: int
    end_tokens: list[str] = field(default_factory=list)
    end_vowels: list[str] = field(default_factory=list)
    fallback_events: list[dict] = field(default_factory=list)
    conflicts: list[dict] = field(default_factory=list)


def token_vowel_ids(lexicon: VowelLexicon, vocab: Vocabulary) -> np.ndarray:
    """Vowel id per vocabulary index (NO_VOWEL id for unmapped surfaces)."""
    return np.array([lexicon.vowel_of(s).id for s in vocab.surfaces], dtype=np.int64)


def adjust_end_distribution(
    p: np.ndarray,
    history: RhymeHistory,
    lam: float,
    gam: float,
    vowel_ids: np.ndarray,
) -> np.ndarray:
    """Reweight the end-character distribution: multiply by lambda for tokens
    whose vowel is in the end-vowel history and by gamma for tokens already
    used as end characters, then renormalize."""
    if lam <= 0 or gam <= 0:
        raise ValueError("lambda and gamma must be > 0")
    total = p.sum()
    if total <= 0:
        raise DegenerateDistribution("all-zero probability vector")
    w = np.ones_like(p)
    if history.v_history:
        w = np.where(np.isin(vowel_ids, list(history.v_history)), lam, 1.0)
    if history.e_history:
        idx = np.fromiter(history.e_history, dtype=np.int64)
        g = np.ones_like(p)
        g[idx] = gam
        w = w * g
    out = p * w
    return out / out.sum()


def apply_vowel_constraint(
    p: np.ndarray,
    required_vowel_id: int,
    mode: str,
    vowel_ids: np.ndarray,
) -> np.ndarray:
    """soft: no-op (the constraint acts through the encoder vowel input);
    hard: zero out tokens with a different vowel and renormalize."""
    if mode == "soft":
        return p
    keep = vowel_ids == required_vowel_id
    masked = np.where(keep, p, 0.0)
    total = masked.sum()
    if total <= 0:
        raise NoVowelSupport(f"no token in support carries vowel id {required_vowel_id}")
    return masked / total


def top_k_sample(
    p: np.ndarray, k: int, rng: np.random.Generator, temperature: float = 1.0
) -> int:
    """Sample from the k most probable tokens (ties by ascending id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if temperature != 1.0:
        p = np.power(p, 1.0 / temperature)
        p = p / p.sum()
    order = np.lexsort((np.arange(len(p)), -p))
    top = order[: min(k, len(p))]
    if k == 1:
        return int(top[0])
    weights = p[top]
    weights = weights / weights.sum()
    return int(top[rng.choice(len(top), p=weights)])


@dataclass
class GenerationResult:
    token_ids: list[int]
    surfaces: list[str]
    positions: list[tuple[int, int]]  # (sentence, token index), encoder order
    report: DecodeReport


def init_history(
    song: Song,
    plan: MaskPlan,
    lexicon: VowelLexicon,
    vocab: Vocabulary,
) -> RhymeHistory:
    """Seed the history with end characters of fully unmasked source sentences."""
    history = RhymeHistory()
    for si, sent in enumerate(song.sentences):
        if any(plan.is_masked(si, ti) for ti in range(len(sent))):
            continue
        end = sent[-1]
        vowel = lexicon.vowel_of(end)
        history.update(vocab.id(end.surface), vowel.id, lexicon.no_vowel.id)
    return history


@torch.no_grad()
def generate(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    lexicon: VowelLexicon,
    request: RewriteRequest,
) -> GenerationResult:
    """Decode exactly one token per masked position, in encoder order.

    At each sentence-end step the rhyme adjustment is applied and the history
    updated with the sampled token; positions with a required vowel get the
    soft/hard vowel constraint; special tokens are never sampled.
    """
    cfg = request.config
    song, plan = request.song, request.plan
    rng = np.random.default_rng(cfg.seed)
    vowel_ids = token_vowel_ids(lexicon, vocab)
    report = DecodeReport(seed=cfg.seed)

    vowel_inputs = {
        pos: lexicon.by_name(name).id for pos, name in request.required_vowels.items()
    }
    example = assemble_example(
        song,
        plan,
        model.config.order,
        vocab,
        lexicon,
        vowel_inputs=vowel_inputs,
        max_len=model.config.max_positions,
    )
    n_targets = len(example.target_positions)
    if n_targets == 0:
        return GenerationResult([], [], [], report)

    model.eval()
    device = next(model.parameters()).device
    one = lambda seq: torch.tensor([list(seq)], dtype=torch.long, device=device)
    enc_batch = {
        "enc_tokens": one(example.encoder_tokens),
        "enc_vowels": one(example.encoder_vowels),
        "enc_global": one(example.enc_global),
        "enc_sentence": one(example.enc_sentence),
        "enc_local": one(example.enc_local),
        "enc_pad_mask": torch.zeros(1, len(example.encoder_tokens), dtype=torch.bool, device=device),
    }
    memory = model.encode(enc_batch)

    history = (
        init_history(song, plan, lexicon, vocab)
        if cfg.init_history_from_source
        else RhymeHistory()
    )
    special_ids = sorted(vocab.special_ids)
    gen_id = example.decoder_input_tokens[0]
    sampled: list[int] = []

    for t in range(n_targets):
        dec_tokens = [gen_id] + sampled
        dec_batch = {
            "dec_tokens": one(dec_tokens),
            "dec_global": one(example.dec_global[: t + 1]),
            "dec_sentence": one(example.dec_sentence[: t + 1]),
            "dec_local": one(example.dec_local[: t + 1]),
        }
        dec_in = model.embed_decoder(dec_batch)
        causal = torch.triu(
            torch.ones(t + 1, t + 1, dtype=torch.bool, device=device), diagonal=1
        )
        out = model.decoder(
            dec_in,
            memory,
            tgt_mask=causal,
            memory_key_padding_mask=enc_batch["enc_pad_mask"],
        )
        logits = model.out_proj(out)[0, -1]
        p = F.softmax(logits.double(), dim=-1).cpu().numpy()
        p[special_ids] = 0.0
        p = p / p.sum()

        si, ti = example.target_positions[t]
        is_end = ti == len(song.sentences[si]) - 1
        pos = (si, ti)

        if is_end:
            p = adjust_end_distribution(p, history, cfg.lam, cfg.gamma, vowel_ids)
        if pos in vowel_inputs:
            if is_end and history.v_history:
                report.conflicts.append(
                    {"sentence": si, "token": ti, "note": "end adjustment and required vowel both applied"}
                )
            try:
                p = apply_vowel_constraint(p, vowel_inputs[pos], cfg.vowel_mode, vowel_ids)
            except NoVowelSupport:
                report.fallback_events.append(
                    {
                        "sentence": si,
                        "token": ti,
                        "vowel": request.required_vowels[pos],
                        "reason": "no vocabulary support, fell back to soft",
                    }
                )
        tok = top_k_sample(p, cfg.k, rng, cfg.temperature)
        sampled.append(tok)
        if is_end:
            history.update(tok, int(vowel_ids[tok]), lexicon.no_vowel.id)
            report.end_tokens.append(vocab.surface(tok))
            report.end_vowels.append(lexicon.vowel_of(vocab.surface(tok)).name)

    surfaces = [vocab.surface(i) for i in sampled]
    return GenerationResult(sampled, surfaces, list(example.target_positions), report)


def splice(song: Song, plan: MaskPlan, fragments: GenerationResult | Sequence[tuple[tuple[int, int], str]]) -> Song:
    """Replace masked positions with generated surfaces; everything else is
    byte-identical and sentence lengths are preserved."""
    if isinstance(fragments, GenerationResult):
        pairs = list(zip(fragments.positions, fragments.surfaces))
    else:
        pairs = list(fragments)
    if len(pairs) != len(plan.masked_positions):
        raise ValueError(
            f"fragment count {len(pairs)} != masked positions {len(plan.masked_positions)}"
        )
    replacement = dict(pairs)
    new_sentences = []
    for si, sent in enumerate(song.sentences):
        out = []
        for ti, tok in enumerate(sent):
            if plan.is_masked(si, ti):
                surf = replacement[(si, ti)]
                kind = "han-character" if len(surf) == 1 and is_cjk(surf) else "latin-word"
                out.append(Token(surf, kind))
            else:
                out.append(tok)
        new_sentences.append(tuple(out))
    return Song(sentences=tuple(new_sentences), title=song.title)


def rewrite(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    lexicon: VowelLexicon,
    request: RewriteRequest,
) -> tuple[Song, GenerationResult]:
    result = generate(model, vocab, lexicon, request)
    return splice(request.song, request.plan, result), result

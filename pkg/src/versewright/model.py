"""Encoder-decoder with summed embedding channels, token loss and the
restricted vowel loss (probability mass over same-vowel vocabulary tokens)."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .masking import (
    ABSENT,
    MaskScheme,
    OrderConfig,
    TrainingExample,
    assemble_example,
    extract_keywords,
    sample_mask_plan,
)
from .text import PAD, Song, Vocabulary, VowelLexicon

CHECKPOINT_MAGIC = "VERSEWRIGHT-CKPT-v1"
EPS = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    num_vowels: int
    layers: int = 2
    heads: int = 4
    d_model: int = 128
    ffw: int = 512
    dropout: float = 0.1
    max_positions: int = 512
    max_sentences: int = 64
    order: OrderConfig = field(default_factory=OrderConfig)
    alpha: float = 1.0  # weight of the vowel loss in the total objective

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if min(self.layers, self.heads, self.d_model, self.ffw, self.vocab_size) <= 0:
            raise ValueError("all dims must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if isinstance(self.order, dict):
            self.order = OrderConfig(**self.order)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["order"] = asdict(self.order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Seq2SeqModel(nn.Module):
    """Transformer encoder-decoder. Encoder inputs sum token, global, sentence,
    local position and vowel embeddings; decoder inputs omit the vowel channel
    and reuse the position channels of the masked encoder slot they predict."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        # vowel rows: classes, NO_VOWEL, masked-vowel sentinel
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.vowel_emb = nn.Embedding(config.num_vowels + 2, d)
        self.global_emb = nn.Embedding(config.max_positions, d)
        self.sentence_emb = nn.Embedding(config.max_sentences + 2, d)
        self.local_emb = nn.Embedding(config.max_positions, d)
        self.emb_dropout = nn.Dropout(config.dropout)

        enc_layer = nn.TransformerEncoderLayer(
            d, config.heads, config.ffw, config.dropout, batch_first=True
        )
        dec_layer = nn.TransformerDecoderLayer(
            d, config.heads, config.ffw, config.dropout, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(enc_layer, config.layers)
        self.decoder = nn.TransformerDecoder(dec_layer, config.layers)
        self.out_proj = nn.Linear(d, config.vocab_size)

    def embed_encoder(self, batch: dict) -> torch.Tensor:
        x = (
            self.tok_emb(batch["enc_tokens"])
            + self.global_emb(batch["enc_global"])
            + self.sentence_emb(batch["enc_sentence"])
            + self.local_emb(batch["enc_local"])
            + self.vowel_emb(batch["enc_vowels"])
        )
        return self.emb_dropout(x)

    def embed_decoder(self, batch: dict) -> torch.Tensor:
        x = (
            self.tok_emb(batch["dec_tokens"])
            + self.global_emb(batch["dec_global"])
            + self.sentence_emb(batch["dec_sentence"])
            + self.local_emb(batch["dec_local"])
        )
        return self.emb_dropout(x)

    def encode(self, batch: dict) -> torch.Tensor:
        return self.encoder(
            self.embed_encoder(batch), src_key_padding_mask=batch["enc_pad_mask"]
        )

    def forward(self, batch: dict) -> torch.Tensor:
        memory = self.encode(batch)
        dec_in = self.embed_decoder(batch)
        t = dec_in.shape[1]
        causal = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=dec_in.device), diagonal=1
        )
        out = self.decoder(
            dec_in,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=batch["dec_pad_mask"],
            memory_key_padding_mask=batch["enc_pad_mask"],
        )
        return self.out_proj(out)


def collate(
    examples: Sequence[TrainingExample], pad_id: int, device: str = "cpu"
) -> dict:
    """Pad a batch of TrainingExamples into index tensors plus padding masks."""

    def pad_to(seqs, width, value):
        return torch.tensor(
            [list(s) + [value] * (width - len(s)) for s in seqs],
            dtype=torch.long,
            device=device,
        )

    enc_w = max(len(e.encoder_tokens) for e in examples)
    dec_w = max((len(e.target_tokens) for e in examples), default=0)
    if dec_w == 0:
        raise ValueError("batch has no target positions")
    batch = {
        "enc_tokens": pad_to([e.encoder_tokens for e in examples], enc_w, pad_id),
        "enc_vowels": pad_to([e.encoder_vowels for e in examples], enc_w, 0),
        "enc_global": pad_to([e.enc_global for e in examples], enc_w, 0),
        "enc_sentence": pad_to([e.enc_sentence for e in examples], enc_w, 0),
        "enc_local": pad_to([e.enc_local for e in examples], enc_w, 0),
        "dec_tokens": pad_to([e.decoder_input_tokens for e in examples], dec_w, pad_id),
        "dec_global": pad_to([e.dec_global for e in examples], dec_w, 0),
        "dec_sentence": pad_to([e.dec_sentence for e in examples], dec_w, 0),
        "dec_local": pad_to([e.dec_local for e in examples], dec_w, 0),
        "targets": pad_to([e.target_tokens for e in examples], dec_w, pad_id),
        "vowel_labels": pad_to([e.target_vowel_labels for e in examples], dec_w, ABSENT),
    }
    batch["enc_pad_mask"] = torch.tensor(
        [[False] * len(e.encoder_tokens) + [True] * (enc_w - len(e.encoder_tokens)) for e in examples],
        device=device,
    )
    batch["dec_pad_mask"] = torch.tensor(
        [[False] * len(e.target_tokens) + [True] * (dec_w - len(e.target_tokens)) for e in examples],
        device=device,
    )
    return batch


def token_loss(logits: torch.Tensor, targets: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood (natural log) over unpadded target steps."""
    keep = ~pad_mask
    if not bool(keep.any()):
        raise ValueError("all target positions are padded")
    flat_logits = logits[keep]
    flat_targets = targets[keep]
    return F.cross_entropy(flat_logits, flat_targets)


def vowel_indicator_matrix(lexicon: VowelLexicon, vocab: Vocabulary) -> torch.Tensor:
    """(num_classes, N) 0/1 matrix: row v marks vocabulary tokens whose vowel is v."""
    mat = torch.zeros(lexicon.num_classes, len(vocab))
    for i, surface in enumerate(vocab.surfaces):
        v = lexicon.vowel_of(surface)
        if v.id < lexicon.num_classes:
            mat[v.id, i] = 1.0
    return mat


def vowel_loss(
    logits: torch.Tensor,
    vowel_labels: torch.Tensor,
    indicator: torch.Tensor,
) -> tuple[torch.Tensor, int]:
    """Restricted vowel loss: -log of the summed probability of all vocabulary
    tokens sharing the labeled vowel, averaged over labeled steps.

    Returns (loss, number of labeled steps); loss is 0 when nothing is labeled.
    """
    labeled = vowel_labels != ABSENT
    count = int(labeled.sum())
    if count == 0:
        return logits.sum() * 0.0, 0
    probs = F.softmax(logits[labeled], dim=-1)  # (M, N)
    mass = probs @ indicator.to(probs.dtype).T  # (M, num_classes)
    picked = mass.gather(1, vowel_labels[labeled].unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(EPS)).mean(), count


def total_loss(
    logits: torch.Tensor,
    batch: dict,
    indicator: torch.Tensor,
    alpha: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    tl = token_loss(logits, batch["targets"], batch["dec_pad_mask"])
    vl, _ = vowel_loss(logits, batch["vowel_labels"], indicator)
    return tl + alpha * vl, tl, vl


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainSchedule:
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    schemes: tuple[MaskScheme, ...] = (MaskScheme.TOKEN, MaskScheme.SENT, MaskScheme.ALL)
    log_path: str | None = None


def make_batch(
    songs: Sequence[Song],
    config: ModelConfig,
    vocab: Vocabulary,
    lexicon: VowelLexicon,
    rng: np.random.Generator,
    schemes: Sequence[MaskScheme],
    content_words: set[str] | None = None,
) -> dict:
    examples = []
    for song in songs:
        scheme = schemes[int(rng.integers(0, len(schemes)))]
        plan = sample_mask_plan(song, scheme, rng)
        if not plan.masked_positions:
            plan = sample_mask_plan(song, MaskScheme.ALL, rng)
        if content_words:
            plan = plan.with_keywords(extract_keywords(song, plan, content_words, rng))
        examples.append(
            assemble_example(song, plan, config.order, vocab, lexicon, max_len=config.max_positions)
        )
    return collate(examples, vocab.id(PAD))


def train(
    config: ModelConfig,
    corpus: Sequence[Song],
    vocab: Vocabulary,
    lexicon: VowelLexicon,
    schedule: TrainSchedule,
    content_words: set[str] | None = None,
    model: Seq2SeqModel | None = None,
) -> tuple[Seq2SeqModel, list[dict]]:
    """Single-stage training with per-step resampled mask plans; the scheme is
    drawn uniformly per song. Returns the model and the step log."""
    torch.manual_seed(schedule.seed)
    rng = np.random.default_rng(schedule.seed)
    if model is None:
        model = Seq2SeqModel(config)
    model.train()
    indicator = vowel_indicator_matrix(lexicon, vocab)
    opt = torch.optim.AdamW(
        model.parameters(), lr=schedule.lr, weight_decay=schedule.weight_decay
    )
    log: list[dict] = []
    log_file = open(schedule.log_path, "a", encoding="utf-8") if schedule.log_path else None
    try:
        if schedule.steps == 0:
            # Record the initial losses so a zero-step run still leaves a log.
            idx = rng.integers(0, len(corpus), size=min(schedule.batch_size, len(corpus)))
            batch = make_batch(
                [corpus[int(i)] for i in idx], config, vocab, lexicon, rng,
                schedule.schemes, content_words,
            )
            with torch.no_grad():
                model.eval()
                _, tl, vl = total_loss(model(batch), batch, indicator, config.alpha)
            rec = {"step": 0, "token_loss": float(tl.detach()), "vowel_loss": float(vl.detach()),
                   "lr": schedule.lr, "seed": schedule.seed}
            log.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
        for step in range(schedule.steps):
            idx = rng.integers(0, len(corpus), size=min(schedule.batch_size, len(corpus)))
            songs = [corpus[int(i)] for i in idx]
            batch = make_batch(songs, config, vocab, lexicon, rng, schedule.schemes, content_words)
            logits = model(batch)
            loss, tl, vl = total_loss(logits, batch, indicator, config.alpha)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}: {loss}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            rec = {
                "step": step,
                "token_loss": float(tl.detach()),
                "vowel_loss": float(vl.detach()),
                "lr": schedule.lr,
                "seed": schedule.seed,
            }
            log.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
    finally:
        if log_file:
            log_file.close()
    model.eval()
    return model, log


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    path: str | Path,
    model: Seq2SeqModel,
    vocab: Vocabulary,
    lexicon: VowelLexicon,
    seed: int = 0,
    extra: dict | None = None,
) -> None:
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "config": model.config.to_dict(),
        "vocab": vocab.surfaces,
        "lexicon_hash": lexicon.content_hash(),
        "state_dict": model.state_dict(),
        "seed": seed,
        "torch_rng": torch.get_rng_state(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[Seq2SeqModel, Vocabulary, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a versewright checkpoint")
    config = ModelConfig.from_dict(payload["config"])
    model = Seq2SeqModel(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    vocab = Vocabulary(payload["vocab"])
    return model, vocab, payload

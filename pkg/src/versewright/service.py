"""Stateless HTTP facade over rewriting, mask sampling and metrics."""

from __future__ import annotations

import secrets
from typing import Literal

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import masking, metrics
from .decoding import DecodeConfig, RewriteRequest, rewrite
from .masking import MaskScheme, sample_mask_plan, spec_to_plan
from .model import load_checkpoint
from .text import DataError, Song, Vocabulary, VowelLexicon, default_lexicon, load_lexicon

CORPUS_CAP = 200


class SongRecord(BaseModel):
    title: str | None = None
    lines: list[str]

    @classmethod
    def from_song(cls, song: Song) -> "SongRecord":
        return cls(title=song.title, lines=song.lines())

    def to_song(self) -> Song:
        return Song.from_lines(self.lines, title=self.title)


class Span(BaseModel):
    sentence: int
    start: int
    length: int


class RequiredVowel(BaseModel):
    sentence: int
    token: int
    vowel: str


class MaskSpec(BaseModel):
    spans: list[Span] = Field(default_factory=list)
    required_vowels: list[RequiredVowel] = Field(default_factory=list)
    keywords: list[str] = Field(default_factory=list, max_length=masking.MAX_KEYWORDS)

    def to_dict(self) -> dict:
        return self.model_dump()


class RewriteBody(BaseModel):
    song: SongRecord
    mask: MaskSpec
    k: int = 32
    lam: float = Field(default=1.4, alias="lambda")
    gamma: float = 0.3
    vowel_mode: Literal["soft", "hard"] = "soft"
    temperature: float = 1.0
    seed: int | None = None

    model_config = {"populate_by_name": True}


class RewriteResponse(BaseModel):
    song: SongRecord
    provenance: list[list[str]]
    end_tokens: list[str]
    end_vowels: list[str]
    fallback_events: list[dict]
    conflicts: list[dict]
    seed: int


class MaskSampleBody(BaseModel):
    song: SongRecord
    scheme: Literal["token", "sent", "all"]
    ratio: float | None = None
    seed: int | None = None


class MetricsBody(BaseModel):
    song: SongRecord | None = None
    songs: list[SongRecord] | None = None


def _error(status: int, code: str, message: str, path: str = "") -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "path": path},
    )


def create_app(
    checkpoint_path: str | None = None,
    lexicon_path: str | None = None,
    model=None,
    vocab: Vocabulary | None = None,
    lexicon: VowelLexicon | None = None,
) -> FastAPI:
    app = FastAPI(title="versewright rewrite service")

    if lexicon is None:
        lexicon = load_lexicon(lexicon_path) if lexicon_path else default_lexicon()
    if model is None and checkpoint_path is not None:
        model, vocab, _ = load_checkpoint(checkpoint_path)
    app.state.model = model
    app.state.vocab = vocab
    app.state.lexicon = lexicon
    app.state.request_count = 0

    @app.exception_handler(RequestValidationError)
    async def schema_error(request: Request, exc: RequestValidationError):
        return _error(400, "schema_violation", str(exc.errors()[:3]), str(request.url.path))

    @app.exception_handler(DataError)
    async def data_error(request: Request, exc: DataError):
        return _error(422, "invariant_failure", str(exc), str(request.url.path))

    @app.middleware("http")
    async def count(request: Request, call_next):
        app.state.request_count += 1
        return await call_next(request)

    def _require_model():
        if app.state.model is None:
            return _error(503, "no_checkpoint", "service started without a checkpoint")
        return None

    def _vocab_mismatch(song: Song) -> list[str]:
        return sorted(
            {t.surface for s in song.sentences for t in s if t.surface not in app.state.vocab}
        )

    @app.post("/rewrite")
    def post_rewrite(body: RewriteBody):
        err = _require_model()
        if err:
            return err
        song = body.song.to_song()
        unknown = _vocab_mismatch(song)
        if unknown:
            return _error(
                409, "vocabulary_mismatch",
                f"tokens unknown to the checkpoint vocabulary: {unknown[:10]}",
                "/rewrite",
            )
        plan, required = spec_to_plan(song, body.mask.to_dict())
        for name in set(required.values()):
            app.state.lexicon.by_name(name)  # raises DataError on unknown vowel
        seed = body.seed if body.seed is not None else secrets.randbelow(2**31)
        cfg = DecodeConfig(
            k=body.k, lam=body.lam, gamma=body.gamma,
            vowel_mode=body.vowel_mode, seed=seed, temperature=body.temperature,
        )
        request = RewriteRequest(song=song, plan=plan, required_vowels=required, config=cfg)
        out, result = rewrite(app.state.model, app.state.vocab, app.state.lexicon, request)
        provenance = [
            ["generated" if plan.is_masked(si, ti) else "original" for ti in range(len(sent))]
            for si, sent in enumerate(out.sentences)
        ]
        return RewriteResponse(
            song=SongRecord.from_song(out),
            provenance=provenance,
            end_tokens=result.report.end_tokens,
            end_vowels=result.report.end_vowels,
            fallback_events=result.report.fallback_events,
            conflicts=result.report.conflicts,
            seed=seed,
        )

    @app.post("/mask/sample")
    def post_mask_sample(body: MaskSampleBody):
        song = body.song.to_song()
        seed = body.seed if body.seed is not None else secrets.randbelow(2**31)
        rng = np.random.default_rng(seed)
        plan = sample_mask_plan(song, MaskScheme(body.scheme), rng, ratio=body.ratio)
        spec = masking.plan_to_spec(song, plan)
        spec["seed"] = seed
        return spec

    @app.post("/metrics")
    def post_metrics(body: MetricsBody):
        records = body.songs if body.songs is not None else ([body.song] if body.song else [])
        if not records:
            return _error(400, "schema_violation", "provide 'song' or 'songs'", "/metrics")
        if len(records) > CORPUS_CAP:
            return _error(413, "corpus_too_large", f"at most {CORPUS_CAP} songs", "/metrics")
        songs = [r.to_song() for r in records]
        embedder = None
        model = app.state.model
        if model is not None:
            embedder = metrics.EncoderMeanEmbedder(model, app.state.vocab, app.state.lexicon)
        rep = metrics.report(
            songs, app.state.lexicon, embedder=embedder,
            model=model, vocab=app.state.vocab,
        )
        return rep.to_record()

    @app.get("/meta")
    def get_meta():
        lex = app.state.lexicon
        meta = {
            "vowels": [v.name for v in lex.vowels],
            "num_vowel_classes": lex.num_classes,
            "defaults": {"lambda": 1.4, "gamma": 0.3, "k": 32},
            "max_keywords": masking.MAX_KEYWORDS,
        }
        if app.state.model is not None:
            meta["model"] = app.state.model.config.to_dict()
            meta["vocab_size"] = len(app.state.vocab)
        return meta

    return app

"""Command-line entry points: train, rewrite, eval, mask-preview, serve."""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics as metrics_mod
from .decoding import DecodeConfig, RewriteRequest, rewrite as do_rewrite
from .masking import (
    MaskScheme,
    OrderConfig,
    load_mask_spec,
    sample_mask_plan,
    spec_to_plan,
)
from .model import (
    ModelConfig,
    TrainSchedule,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train as train_model,
)
from .text import (
    DataError,
    build_vocabulary,
    default_content_words,
    default_lexicon,
    load_corpus,
    load_lexicon,
)

EXIT_DATA = 3
EXIT_INTERNAL = 4


def _setup_determinism(seed: int) -> None:
    import torch

    torch.manual_seed(seed)
    if os.environ.get("VERSEWRIGHT_DETERMINISTIC") == "1":
        torch.use_deterministic_algorithms(True)


def _record_config(out: Path | None, command: str, params: dict) -> None:
    if out is None:
        return
    path = Path(str(out) + ".run.json")
    path.write_text(
        json.dumps({"command": command, "params": params}, ensure_ascii=False, indent=2)
    )


def guarded(f):
    """Map data errors to exit 3 and internal assertions to exit 4."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (DataError, TrainingDiverged, FileNotFoundError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_DATA)
        except AssertionError as e:
            click.echo(f"internal error: {e}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


@click.group()
def main():
    """Syllable-exact lyric rewriting with rhyme and keyword control."""


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=200, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--alpha", default=1.0, show_default=True, help="vowel loss weight")
@click.option("--layers", default=2, show_default=True)
@click.option("--heads", default=4, show_default=True)
@click.option("--d-model", default=128, show_default=True)
@click.option("--ffw", default=512, show_default=True)
@click.option("--dropout", default=0.1, show_default=True)
@click.option("--min-count", default=1, show_default=True)
@click.option("--token-order", type=click.Choice(["reversed", "sequential"]), default="reversed")
@click.option("--local-position-order", type=click.Choice(["sequential", "reversed"]), default="sequential")
@guarded
def train(corpus, lexicon, out, steps, batch_size, lr, seed, alpha, layers, heads,
          d_model, ffw, dropout, min_count, token_order, local_position_order):
    """Train a model and write a checkpoint plus a step log."""
    _setup_determinism(seed)
    songs = load_corpus(corpus)
    lex = load_lexicon(lexicon) if lexicon else default_lexicon()
    vocab = build_vocabulary(songs, min_count=min_count)
    config = ModelConfig(
        vocab_size=len(vocab), num_vowels=lex.num_classes,
        layers=layers, heads=heads, d_model=d_model, ffw=ffw, dropout=dropout,
        order=OrderConfig(token_order, local_position_order), alpha=alpha,
    )
    schedule = TrainSchedule(
        steps=steps, batch_size=batch_size, lr=lr, seed=seed,
        log_path=str(out) + ".log.jsonl",
    )
    model, log = train_model(
        config, songs, vocab, lex, schedule, content_words=default_content_words()
    )
    save_checkpoint(out, model, vocab, lex, seed=seed)
    _record_config(Path(out), "train", {
        "corpus": str(corpus), "lexicon": str(lexicon), "steps": steps,
        "batch_size": batch_size, "lr": lr, "seed": seed, "alpha": alpha,
        "layers": layers, "heads": heads, "d_model": d_model, "ffw": ffw,
        "dropout": dropout, "min_count": min_count,
        "token_order": token_order, "local_position_order": local_position_order,
    })
    if log:
        click.echo(
            f"trained {steps} steps: token_loss {log[0]['token_loss']:.4f} "
            f"-> {log[-1]['token_loss']:.4f}"
        )
    click.echo(f"checkpoint written to {out}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--song", "song_path", required=True, type=click.Path(exists=True),
              help="corpus-format file; the first record is rewritten")
@click.option("--index", default=0, show_default=True)
@click.option("--mask-spec", required=True, type=click.Path(exists=True))
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--lambda", "lam", default=1.4, show_default=True)
@click.option("--gamma", default=0.3, show_default=True)
@click.option("--k", default=32, show_default=True)
@click.option("--vowel-mode", type=click.Choice(["soft", "hard"]), default="soft")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@guarded
def rewrite(checkpoint, song_path, index, mask_spec, lexicon, lam, gamma, k,
            vowel_mode, seed, out):
    """Rewrite the masked spans of a song under the decode constraints."""
    _setup_determinism(seed)
    model, vocab, _ = load_checkpoint(checkpoint)
    lex = load_lexicon(lexicon) if lexicon else default_lexicon()
    songs = load_corpus(song_path)
    if not (0 <= index < len(songs)):
        raise DataError(f"--index {index} out of range for {len(songs)} songs")
    song = songs[index]
    spec = load_mask_spec(mask_spec)
    plan, required = spec_to_plan(song, spec)
    cfg = DecodeConfig(k=k, lam=lam, gamma=gamma, vowel_mode=vowel_mode, seed=seed)
    request = RewriteRequest(song=song, plan=plan, required_vowels=required, config=cfg)
    new_song, result = do_rewrite(model, vocab, lex, request)
    for si, sent in enumerate(new_song.sentences):
        assert len(sent) == len(song.sentences[si]), "sentence length changed"
    for line in new_song.lines():
        click.echo(line)
    payload = {
        "song": new_song.to_record(),
        "report": {
            "seed": seed,
            "end_tokens": result.report.end_tokens,
            "end_vowels": result.report.end_vowels,
            "fallback_events": result.report.fallback_events,
            "conflicts": result.report.conflicts,
        },
    }
    if out:
        Path(out).write_text(json.dumps(payload, ensure_ascii=False, indent=2))
        _record_config(Path(out), "rewrite", {
            "checkpoint": str(checkpoint), "song": str(song_path), "index": index,
            "mask_spec": str(mask_spec), "lambda": lam, "gamma": gamma, "k": k,
            "vowel_mode": vowel_mode, "seed": seed,
        })


@main.command("eval")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--reference", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@guarded
def eval_cmd(corpus, reference, checkpoint, lexicon, out):
    """Evaluate rhyme and content metrics; add delta columns vs a reference."""
    songs = load_corpus(corpus)
    lex = load_lexicon(lexicon) if lexicon else default_lexicon()
    model = vocab = embedder = None
    if checkpoint:
        model, vocab, _ = load_checkpoint(checkpoint)
        embedder = metrics_mod.EncoderMeanEmbedder(model, vocab, lex)
    else:
        click.echo("warning: no checkpoint, coherence and self-ppl reported n/a", err=True)
    ref_songs = load_corpus(reference) if reference else None
    rep = metrics_mod.report(
        songs, lex, embedder=embedder, model=model, vocab=vocab,
        reference_corpus=ref_songs,
    )
    click.echo(rep.table())
    if rep.deltas:
        click.echo(" ".join(f"{k}={v:.3f}" for k, v in rep.deltas.items()))
    if out:
        with open(out, "w", encoding="utf-8") as f:
            for rec in rep.per_song:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            f.write(json.dumps({"means": rep.means, "deltas": rep.deltas},
                               ensure_ascii=False) + "\n")
        _record_config(Path(out), "eval", {
            "corpus": str(corpus), "reference": str(reference),
            "checkpoint": str(checkpoint), "lexicon": str(lexicon),
        })


@main.command("mask-preview")
@click.option("--song", "song_path", required=True, type=click.Path(exists=True))
@click.option("--index", default=0, show_default=True)
@click.option("--scheme", type=click.Choice(["token", "sent", "all"]), required=True)
@click.option("--ratio", type=float, default=None)
@click.option("--seed", default=0, show_default=True)
@guarded
def mask_preview(song_path, index, scheme, ratio, seed):
    """Render a sampled mask plan with masked spans bracketed."""
    songs = load_corpus(song_path)
    song = songs[index]
    rng = np.random.default_rng(seed)
    plan = sample_mask_plan(song, MaskScheme(scheme), rng, ratio=ratio)
    for si, sent in enumerate(song.sentences):
        parts = []
        for ti, tok in enumerate(sent):
            if plan.is_masked(si, ti):
                mark = "*" if (si, ti) in plan.vowel_kept_positions else ""
                parts.append(f"[{tok.surface}{mark}]")
            else:
                parts.append(tok.surface)
        click.echo("".join(parts))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@guarded
def serve(checkpoint, lexicon, host, port):
    """Start the HTTP rewrite service over one loaded checkpoint."""
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_path=checkpoint, lexicon_path=lexicon)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

"""Syllable-exact lyric rewriting with keyword, vowel and end-rhyme control."""

from .text import (
    Song,
    Token,
    Vocabulary,
    Vowel,
    VowelLexicon,
    build_vocabulary,
    default_lexicon,
    load_corpus,
    load_lexicon,
    tokenize,
)
from .masking import MaskPlan, MaskScheme, OrderConfig, assemble_example, sample_mask_plan
from .model import ModelConfig, Seq2SeqModel, TrainSchedule, load_checkpoint, save_checkpoint, train
from .decoding import DecodeConfig, RewriteRequest, RhymeHistory, generate, rewrite, splice

__version__ = "0.1.0"

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from versewright.metrics import (
    EncoderMeanEmbedder,
    coherence,
    dist_rw,
    distinct_n,
    diversity,
    global_sts,
    keyword_recall,
    local_rhyme_n,
    local_sts,
    perplexity,
    report,
    rhyme_g,
    rhyme_l,
    song_metrics,
    vowel_accuracy,
)
from versewright.model import ModelConfig, Seq2SeqModel
from versewright.text import Song, build_vocabulary

from conftest import make_synthetic_song


class TestDistinct:
    def test_all_unique(self):
        song = Song.from_lines(["后来我们"])
        assert distinct_n(song, 1) == 1.0

    def test_repeats(self):
        song = Song.from_lines(["来来来来"])
        assert distinct_n(song, 1) == 0.25
        assert distinct_n(song, 2) == pytest.approx(1 / 3)

    def test_no_cross_boundary_grams(self):
        # sentences [a,b] and [b,a]: the gram (b,b) across the boundary
        # must not exist, so both bigrams are unique
        song = Song.from_lines(["天来", "来天"])
        assert distinct_n(song, 2) == 1.0

    def test_short_song_zero(self):
        song = Song.from_lines(["来"])
        assert distinct_n(song, 2) == 0.0

    def test_diversity_mean(self):
        song = Song.from_lines(["来来来来"])
        expected = (0.25 + 1 / 3 + 0.5 + 1.0) / 4
        assert diversity(song) == pytest.approx(expected)


class FakeEmbedder:
    """Maps each sentence to a fixed vector keyed by its first character."""

    def __init__(self, table):
        self.table = table

    def embed(self, sentence):
        return np.array(self.table[sentence[0].surface], dtype=float)


class TestCoherence:
    def test_three_sentence_example(self):
        song = Song.from_lines(["一来", "二来", "三走"])
        emb = FakeEmbedder({"一": [1, 0], "二": [1, 0], "三": [0, 1]})
        assert local_sts(song, emb) == pytest.approx(0.5)
        assert global_sts(song, emb) == pytest.approx(1 / 3)
        assert coherence(song, emb) == pytest.approx((0.5 + 1 / 3) / 2)

    def test_identical_sentences_perfect(self):
        song = Song.from_lines(["一来", "一来"])
        emb = FakeEmbedder({"一": [2, 1]})
        assert coherence(song, emb) == pytest.approx(1.0)

    def test_single_sentence_none(self):
        song = Song.from_lines(["一来"])
        emb = FakeEmbedder({"一": [1, 0]})
        assert local_sts(song, emb) is None
        assert global_sts(song, emb) is None
        assert coherence(song, emb) is None

    def test_zero_vector_cosine_is_zero(self):
        song = Song.from_lines(["一来", "二来"])
        emb = FakeEmbedder({"一": [0, 0], "二": [1, 0]})
        assert local_sts(song, emb) == 0.0


class TestControllability:
    def test_keyword_recall_hit_and_miss(self):
        song = Song.from_lines(["爱情故事", "风吹过"])
        assert keyword_recall([("爱", "情")], song) == 1.0
        assert keyword_recall([("爱", "情"), ("大", "海")], song) == 0.5

    def test_keyword_must_stay_within_sentence(self):
        song = Song.from_lines(["我爱", "情歌"])
        assert keyword_recall([("爱", "情")], song) == 0.0

    def test_no_keywords_none(self):
        assert keyword_recall([], Song.from_lines(["后来"])) is None

    def test_vowel_accuracy(self, tiny_lexicon):
        song = Song.from_lines(["我来", "我走"])
        required = {(0, 1): "ai", (1, 1): "ai"}
        assert vowel_accuracy(required, song, tiny_lexicon) == 0.5
        assert vowel_accuracy({}, song, tiny_lexicon) is None


class TestRhyme:
    def test_hand_song_local_windows(self, hand_song, tiny_lexicon):
        # end vowels ai ai ou ai
        assert local_rhyme_n(hand_song, 1, tiny_lexicon) == pytest.approx(0.5)
        assert local_rhyme_n(hand_song, 2, tiny_lexicon) == pytest.approx(0.75)
        assert local_rhyme_n(hand_song, 3, tiny_lexicon) == pytest.approx(0.75)
        assert local_rhyme_n(hand_song, 4, tiny_lexicon) == pytest.approx(0.75)

    def test_hand_song_rhyme_l(self, hand_song, tiny_lexicon):
        assert rhyme_l(hand_song, tiny_lexicon) == pytest.approx(0.6875)

    def test_hand_song_rhyme_g(self, hand_song, tiny_lexicon):
        assert rhyme_g(hand_song, tiny_lexicon) == pytest.approx(0.5)

    def test_hand_song_dist_rw(self, hand_song, tiny_lexicon):
        assert dist_rw(hand_song) == pytest.approx(0.75)

    def test_perfect_rhyme(self, tiny_lexicon):
        song = Song.from_lines(["我来", "花开", "我来"])
        assert rhyme_l(song, tiny_lexicon) == 1.0
        assert rhyme_g(song, tiny_lexicon) == pytest.approx(2 / 3)

    def test_no_eligible_ends(self, tiny_lexicon):
        song = Song.from_lines(["来我", "开花"])  # ends 我/花 are unmapped
        assert rhyme_l(song, tiny_lexicon) == 0.0
        assert rhyme_g(song, tiny_lexicon) == 0.0

    def test_ineligible_ends_skipped(self, tiny_lexicon):
        # middle sentence ends in an unmapped char; the outer two still rhyme
        song = Song.from_lines(["我来", "来我", "花开"])
        assert local_rhyme_n(song, 2, tiny_lexicon) == 1.0

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        chars = ["来", "开", "走", "手", "天", "年", "我", "你"]
        from versewright.text import VowelLexicon

        lex = VowelLexicon({"来": "ai", "开": "ai", "走": "ou", "手": "ou",
                            "天": "ian", "年": "ian"})
        song = make_synthetic_song(rng, chars, max_sents=6, max_len=4)
        ends = [s[-1].surface for s in song.sentences]
        vowels = [lex.vowel_of(s[-1]).id for s in song.sentences]
        nv = lex.no_vowel.id
        eligible = [i for i, v in enumerate(vowels) if v != nv]
        for n in (1, 2, 3, 4):
            if len(eligible) < 2:
                expected = 0.0
            else:
                hits = sum(
                    any(
                        abs(j - i) <= n and j != i and vowels[j] == vowels[i]
                        for j in eligible
                    )
                    for i in eligible
                )
                expected = hits / len(eligible)
            assert local_rhyme_n(song, n, lex) == pytest.approx(expected)
        elig_vowels = [vowels[i] for i in eligible]
        expected_g = 1 - len(set(elig_vowels)) / len(elig_vowels) if elig_vowels else 0.0
        assert rhyme_g(song, lex) == pytest.approx(expected_g)
        assert dist_rw(song) == pytest.approx(len(set(ends)) / len(ends))

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_local_rhyme_monotone_in_window(self, shipped_lexicon, seed):
        rng = np.random.default_rng(seed)
        chars = [s for s in shipped_lexicon.entries()][:30]
        song = make_synthetic_song(rng, chars)
        values = [local_rhyme_n(song, n, shipped_lexicon) for n in (1, 2, 3, 4)]
        assert values == sorted(values)


@pytest.fixture(scope="module")
def setup(shipped_lexicon):
    songs = [Song.from_lines(["我来你来", "我走花开"])]
    vocab = build_vocabulary(songs)
    config = ModelConfig(
        vocab_size=len(vocab), num_vowels=shipped_lexicon.num_classes,
        layers=1, heads=2, d_model=16, ffw=32, dropout=0.0,
        max_positions=64, max_sentences=8,
    )
    torch.manual_seed(0)
    model = Seq2SeqModel(config)
    model.eval()
    return model, vocab, shipped_lexicon, songs[0]


class TestModelMetrics:
    def test_perplexity_bounds(self, setup):
        model, vocab, lexicon, song = setup
        ppl = perplexity(model, vocab, lexicon, song)
        # an untrained model sits near uniform over the vocabulary
        assert 1.0 <= ppl <= 10 * len(vocab)

    def test_embedder_shape_and_determinism(self, setup):
        model, vocab, lexicon, song = setup
        emb = EncoderMeanEmbedder(model, vocab, lexicon)
        a = emb.embed(song.sentences[0])
        b = emb.embed(song.sentences[0])
        assert a.shape == (model.config.d_model,)
        assert np.array_equal(a, b)

    def test_embedder_distinguishes_sentences(self, setup):
        model, vocab, lexicon, song = setup
        emb = EncoderMeanEmbedder(model, vocab, lexicon)
        a = emb.embed(song.sentences[0])
        b = emb.embed(song.sentences[1])
        assert not np.allclose(a, b)


class TestReports:
    def test_song_metrics_flags(self, tiny_lexicon):
        m = song_metrics(Song.from_lines(["我来"]), tiny_lexicon)
        assert any("single-sentence" in f for f in m.flags)
        assert any("rhyme metrics degenerate" in f for f in m.flags)

    def test_record_keys(self, hand_song, tiny_lexicon):
        rec = song_metrics(hand_song, tiny_lexicon).to_record()
        for key in ("diversity", "dist_rw", "rhyme_l", "rhyme_g", "local_rhyme_1",
                    "local_sts", "coherence", "self_ppl", "flags"):
            assert key in rec
        assert rec["self_ppl"] is None

    def test_report_means(self, hand_song, tiny_lexicon):
        rep = report([hand_song, hand_song], tiny_lexicon)
        assert rep.means["rhyme_l"] == pytest.approx(0.6875)
        assert rep.means["self_ppl"] is None

    def test_report_deltas_vs_self_are_zero(self, hand_song, tiny_lexicon):
        rep = report([hand_song], tiny_lexicon, reference_corpus=[hand_song])
        assert rep.deltas["delta_diversity"] == pytest.approx(0.0)

    def test_table_renders(self, hand_song, tiny_lexicon):
        rep = report([hand_song], tiny_lexicon, reference_corpus=[hand_song])
        text = rep.table()
        assert "diversity" in text and "n/a" in text

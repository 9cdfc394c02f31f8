"""Text normalization and subword tokenization."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_st import text as tp


def test_normalize_basic():
    assert tp.normalize_text("Hello, World!") == "hello world"


def test_normalize_whitespace_collapse():
    assert tp.normalize_text("  a  b ") == "a b"


def test_normalize_apostrophe():
    assert tp.normalize_text("don't stop") == "dont stop"


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=40))
def test_normalize_idempotent(s):
    once = tp.normalize_text(s)
    assert tp.normalize_text(once) == once


# ---------------------------------------------------------------------------
# BPE learning


def test_first_merge_is_most_frequent_pair():
    corpus = ["aaab"] * 10
    # floor: specials + {a, b⟨/w⟩} = 6; one merge slot
    model = tp.learn_bpe(corpus, target_vocab=7)
    assert model.merges[0] == ("a", "a")


def test_no_repeated_pairs_gives_character_vocab():
    model = tp.learn_bpe(["abcd", "efgh"], target_vocab=50)
    assert model.merges == []
    assert model.size == len(tp.SPECIALS) + 8


def test_learning_is_deterministic():
    corpus = ["the cat sat", "the bat", "a cat"]
    m1 = tp.learn_bpe(corpus, target_vocab=30)
    m2 = tp.learn_bpe(corpus, target_vocab=30)
    assert m1.merges == m2.merges
    assert m1.vocab == m2.vocab


def test_vocab_never_exceeds_target():
    corpus = ["abab abab", "ababab"]
    for target in (8, 10, 12):
        try:
            model = tp.learn_bpe(corpus, target_vocab=target)
        except tp.VocabularyError:
            continue
        assert model.size <= target


def test_target_too_small_reports_floor():
    with pytest.raises(tp.VocabularyError, match="floor"):
        tp.learn_bpe(["abc"], target_vocab=5)


# ---------------------------------------------------------------------------
# encode / decode


def test_character_mode_space_symbol():
    model = tp.learn_character_model(["a b"])
    seq = tp.encode("a b", model)
    assert seq.ids == [model.vocab["a"], model.vocab[" "], model.vocab["b"]]


def test_bpe_merge_application():
    model = tp.learn_bpe(["aaab"] * 10, target_vocab=7)
    assert model.merges == [("a", "a")]
    pieces = tp.segment_word("aaab", model)
    assert pieces == ["aa", "a", "b" + tp.WORD_END]


def test_round_trip_both_modes():
    corpus = ["hello world", "held low worlds"]
    for model in (tp.learn_character_model(corpus), tp.learn_bpe(corpus, target_vocab=40)):
        for line in corpus:
            seq = tp.encode(line, model)
            assert tp.decode(seq, model) == line


def test_decode_empty():
    model = tp.learn_character_model(["ab"])
    assert tp.decode(tp.TokenSequence([], "character"), model) == ""


def test_decode_renders_unk():
    model = tp.learn_character_model(["ab"])
    out = tp.decode(tp.TokenSequence([model.vocab["a"], tp.UNK_ID], "character"), model)
    assert out == "a" + tp.UNK_GLYPH


def test_decode_out_of_range():
    model = tp.learn_character_model(["ab"])
    with pytest.raises(tp.VocabularyError):
        tp.decode(tp.TokenSequence([999], "character"), model)


def test_encode_unknown_symbol_absorbed():
    model = tp.learn_bpe(["aa bb"] * 3, target_vocab=12)
    seq = tp.encode("zz", model)
    assert all(i == tp.UNK_ID for i in seq.ids)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abcd", min_size=1, max_size=6), min_size=1, max_size=5))
def test_round_trip_property(words):
    line = " ".join(words)
    corpus = ["abcd dcba abab", line]
    char_model = tp.learn_character_model(corpus)
    bpe_model = tp.learn_bpe(corpus, target_vocab=60)
    for model in (char_model, bpe_model):
        assert tp.decode(tp.encode(line, model), model) == line


def test_encode_of_decode_identity():
    corpus = ["abc cab", "bca"]
    model = tp.learn_bpe(corpus, target_vocab=30)
    seq = tp.encode("abc cab", model)
    again = tp.encode(tp.decode(seq, model), model)
    assert again.ids == seq.ids


# ---------------------------------------------------------------------------
# persistence


def test_model_file_round_trip(tmp_path):
    corpus = ["the cat sat on the mat", "a cat sat"]
    for model in (tp.learn_bpe(corpus, target_vocab=30), tp.learn_character_model(corpus)):
        path = tmp_path / f"{model.mode}.vocab"
        tp.save_subword_model(model, path)
        loaded = tp.load_subword_model(path)
        assert loaded.mode == model.mode
        assert loaded.merges == model.merges
        assert loaded.vocab == model.vocab
        assert loaded.content_hash() == model.content_hash()


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "junk.vocab"
    path.write_text("not a model\n")
    with pytest.raises(tp.VocabularyError):
        tp.load_subword_model(path)

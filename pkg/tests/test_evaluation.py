"""Edit-distance, BLEU, and stream-segmentation metric tests."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_edit_distance, brute_min_segmentation
from cascade_st.evaluation import (
    EvaluationError,
    corpus_bleu,
    corpus_wer,
    mwer_segment,
    read_reference_file,
    wer,
    write_reference_file,
)

words_st = st.lists(st.sampled_from(["a", "b", "c"]), min_size=0, max_size=8)


# ---------------------------------------------------------------------------
# wer
# ---------------------------------------------------------------------------


def test_wer_identity():
    alignment = wer("a b c".split(), "a b c".split())
    assert alignment.errors == 0
    assert alignment.wer == 0.0
    assert alignment.hits == 3
    assert alignment.pairs == (("a", "a"), ("b", "b"), ("c", "c"))


def test_wer_single_substitution():
    alignment = wer("a b c".split(), "a x c".split())
    assert alignment.substitutions == 1
    assert alignment.insertions == 0
    assert alignment.deletions == 0
    assert alignment.hits == 2
    assert alignment.wer == pytest.approx(1 / 3)
    assert ("b", "x") in alignment.pairs


def test_wer_can_exceed_one():
    alignment = wer(["a"], "a b c".split())
    assert alignment.insertions == 2
    assert alignment.hits == 1
    assert alignment.wer == 2.0


def test_wer_empty_hypothesis_is_all_deletions():
    alignment = wer("a b".split(), [])
    assert alignment.deletions == 2
    assert alignment.wer == 1.0
    assert alignment.pairs == (("a", None), ("b", None))


def test_wer_empty_reference_rejected():
    with pytest.raises(EvaluationError):
        wer([], ["a"])


def test_wer_tie_prefers_hit_over_editing():
    # del(a)+hit(b) and sub(a->b)+ins/del chains tie in cost only through
    # the hit; the alignment must keep the matching word aligned
    alignment = wer("a b".split(), ["b"])
    assert alignment.hits == 1
    assert alignment.deletions == 1
    assert alignment.substitutions == 0


def test_wer_tie_prefers_substitution_over_indel_chain():
    # "a b" vs "b a" admits sub+sub and del+hit+ins at equal cost 2
    alignment = wer("a b".split(), "b a".split())
    assert alignment.errors == 2
    assert alignment.substitutions == 2
    assert alignment.insertions == 0
    assert alignment.deletions == 0


def test_wer_matches_brute_force_exhaustively():
    # every pair over a two-letter alphabet, ref 1..4 words, hyp 0..4 words
    def all_seqs(max_len):
        out = [()]
        frontier = [()]
        for _ in range(max_len):
            frontier = [seq + (w,) for seq in frontier for w in ("a", "b")]
            out.extend(frontier)
        return out

    for ref in all_seqs(4):
        if not ref:
            continue
        for hyp in all_seqs(4):
            alignment = wer(ref, hyp)
            assert alignment.errors == brute_edit_distance(ref, hyp)
            assert alignment.hits + alignment.substitutions + alignment.deletions == len(ref)
            assert alignment.hits + alignment.substitutions + alignment.insertions == len(hyp)


@given(words_st.filter(len), words_st)
@settings(max_examples=150, deadline=None)
def test_wer_alignment_counts_are_consistent(ref, hyp):
    alignment = wer(ref, hyp)
    assert alignment.errors == brute_edit_distance(ref, hyp)
    assert alignment.hits + alignment.substitutions + alignment.deletions == len(ref)
    assert [r for r, _ in alignment.pairs if r is not None] == ref
    assert [h for _, h in alignment.pairs if h is not None] == hyp


@given(words_st.filter(len), words_st.filter(len), words_st.filter(len))
@settings(max_examples=100, deadline=None)
def test_edit_distance_triangle_inequality(x, y, z):
    assert wer(x, z).errors <= wer(x, y).errors + wer(y, z).errors


def test_corpus_wer_pools_counts():
    pairs = [("a b".split(), "a b".split()), (["c"], "c d e".split())]
    # 0 errors over 2 words plus 2 insertions over 1 word
    assert corpus_wer(pairs) == pytest.approx(2 / 3)


# ---------------------------------------------------------------------------
# corpus BLEU
# ---------------------------------------------------------------------------


def bleu_from_counts(precisions, ref_len, hyp_len):
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(sum(math.log(p) for p in precisions) / 4)


def test_bleu_of_self_is_100():
    pairs = [("a b c d e".split(),) * 2, ("x y".split(),) * 2]
    report = corpus_bleu({"talk": pairs})
    assert report.per_talk["talk"].bleu == pytest.approx(100.0)
    assert report.average == pytest.approx(100.0)


def test_bleu_one_extra_word():
    # hand counts: p1 = 4/5; smoothed p2 = (3+1)/(4+1), p3 = (2+1)/(3+1),
    # p4 = (1+1)/(2+1); hypothesis longer than reference so BP = 1
    report = corpus_bleu({"t": [("a b c d".split(), "a b c d e".split())]})
    talk = report.per_talk["t"]
    assert talk.precisions == pytest.approx((4 / 5, 4 / 5, 3 / 4, 2 / 3))
    assert talk.brevity_penalty == 1.0
    expected = bleu_from_counts((4 / 5, 4 / 5, 3 / 4, 2 / 3), 4, 5)
    assert talk.bleu == pytest.approx(expected, abs=1e-4)
    assert talk.bleu == pytest.approx(75.2127, abs=1e-3)


def test_bleu_brevity_penalty():
    # perfect prefix, short hypothesis: all precisions 1 after smoothing,
    # BP = exp(1 - 5/3)
    report = corpus_bleu({"t": [("a b c d e".split(), "a b c".split())]})
    talk = report.per_talk["t"]
    assert talk.precisions == pytest.approx((1.0, 1.0, 1.0, 1.0))
    assert talk.brevity_penalty == pytest.approx(math.exp(1 - 5 / 3))
    assert talk.bleu == pytest.approx(100.0 * math.exp(1 - 5 / 3), abs=1e-4)


def test_bleu_zero_unigram_overlap_is_zero():
    report = corpus_bleu({"t": [("a b".split(), "x y".split())]})
    assert report.per_talk["t"].bleu == 0.0


def test_bleu_clips_repeated_words():
    # hyp "a a a" vs ref "a b": unigram matches clip at the reference count
    report = corpus_bleu({"t": [("a b".split(), "a a a".split())]})
    talk = report.per_talk["t"]
    assert talk.precisions == pytest.approx((1 / 3, 1 / 3, 1 / 2, 1.0))
    expected = bleu_from_counts((1 / 3, 1 / 3, 1 / 2, 1.0), 2, 3)
    assert talk.bleu == pytest.approx(expected, abs=1e-4)


def test_bleu_pools_counts_within_talk():
    # two pairs pooled at the count level: p1 = (2+1)/(2+2), not a mean of
    # the per-sentence precisions
    pairs = [(["a", "b"], ["a", "b"]), (["c", "d"], ["x", "c"])]
    report = corpus_bleu({"t": pairs})
    assert report.per_talk["t"].precisions[0] == pytest.approx(3 / 4)


def test_bleu_pair_order_within_talk_is_irrelevant():
    pairs = [("a b c d".split(), "a b c d e".split()), ("x y".split(), "x z".split())]
    forward = corpus_bleu({"t": pairs})
    backward = corpus_bleu({"t": pairs[::-1]})
    assert forward.per_talk["t"].bleu == pytest.approx(backward.per_talk["t"].bleu)


def test_bleu_average_is_unweighted_over_talks():
    long_pair = (["a"] * 40, ["a"] * 40)
    short_pair = ("a b c d".split(), "a b c d e".split())
    report = corpus_bleu({"big": [long_pair], "small": [short_pair]})
    expected = (report.per_talk["big"].bleu + report.per_talk["small"].bleu) / 2
    assert report.average == pytest.approx(expected)
    assert report.per_talk["big"].bleu == pytest.approx(100.0)


def test_bleu_degrades_when_correct_word_replaced():
    ref = "a b c d e f".split()
    good = corpus_bleu({"t": [(ref, "a b c d e f".split())]}).average
    worse = corpus_bleu({"t": [(ref, "a b c q e f".split())]}).average
    assert worse < good


def test_bleu_empty_talk_rejected():
    with pytest.raises(EvaluationError):
        corpus_bleu({"t": []})
    with pytest.raises(EvaluationError):
        corpus_bleu({})


def test_bleu_empty_hypothesis_scores_zero():
    report = corpus_bleu({"t": [("a b".split(), [])]})
    assert report.per_talk["t"].bleu == 0.0


# ---------------------------------------------------------------------------
# mwer segmentation
# ---------------------------------------------------------------------------


def test_mwer_exact_stream_recovers_boundaries():
    refs = ["a b".split(), "c d e".split(), ["f"]]
    stream = "a b c d e f".split()
    result = mwer_segment(stream, refs)
    assert result.errors == 0
    assert result.wer == 0.0
    assert list(result.segments) == [tuple(r) for r in refs]


def test_mwer_rotation_example():
    stream = "b a c d".split()
    refs = ["a b".split(), "c d".split()]
    result = mwer_segment(stream, refs)
    assert result.errors == brute_min_segmentation(stream, refs) == 2
    assert [w for seg in result.segments for w in seg] == stream
    assert len(result.segments) == 2


def test_mwer_one_word_stream_two_references():
    result = mwer_segment(["b"], [["a"], ["b"]])
    assert result.errors == 1
    assert result.segments == ((), ("b",))


def test_mwer_empty_stream_gives_empty_segments():
    refs = ["a b".split(), ["c"]]
    result = mwer_segment([], refs)
    assert result.segments == ((), ())
    assert result.errors == 3
    assert result.wer == 1.0


def test_mwer_empty_references_rejected():
    with pytest.raises(EvaluationError):
        mwer_segment(["a"], [])
    with pytest.raises(EvaluationError):
        mwer_segment(["a"], [[], []])


def test_mwer_matches_brute_force_exhaustively():
    # every stream over {a, b} up to 5 words against fixed 2-segment refs
    refs = [["a", "b"], ["b"]]
    streams = [()]
    frontier = [()]
    for _ in range(5):
        frontier = [seq + (w,) for seq in frontier for w in ("a", "b")]
        streams.extend(frontier)
    for stream in streams:
        result = mwer_segment(stream, refs)
        assert result.errors == brute_min_segmentation(stream, refs)
        assert tuple(w for seg in result.segments for w in seg) == stream


@given(
    st.lists(st.sampled_from("ab"), max_size=10),
    st.lists(st.lists(st.sampled_from("ab"), min_size=1, max_size=4), min_size=1, max_size=3),
)
@settings(max_examples=150, deadline=None)
def test_mwer_matches_brute_force_random(stream, refs):
    result = mwer_segment(stream, refs)
    assert result.errors == brute_min_segmentation(stream, refs)
    assert len(result.segments) == len(refs)
    assert [w for seg in result.segments for w in seg] == stream


@given(
    st.lists(st.sampled_from("abc"), min_size=1, max_size=10),
    st.lists(st.lists(st.sampled_from("abc"), min_size=1, max_size=4), min_size=1, max_size=3),
)
@settings(max_examples=100, deadline=None)
def test_mwer_beats_proportional_segmentation(stream, refs):
    result = mwer_segment(stream, refs)
    total_ref = sum(len(r) for r in refs)
    bounds = [0]
    for ref in refs:
        bounds.append(min(len(stream), bounds[-1] + round(len(ref) / total_ref * len(stream))))
    bounds[-1] = len(stream)
    naive = sum(
        brute_edit_distance(refs[k], stream[bounds[k] : bounds[k + 1]])
        for k in range(len(refs))
    )
    assert result.errors <= naive


# ---------------------------------------------------------------------------
# reference files
# ---------------------------------------------------------------------------


def test_reference_file_round_trip(tmp_path):
    talks = {
        "talk1": [("0", "a b c"), ("1", "d e")],
        "talk2": [("0", "f")],
    }
    path = tmp_path / "refs.tsv"
    write_reference_file(path, talks)
    assert read_reference_file(path) == talks


def test_reference_file_rejects_duplicates(tmp_path):
    path = tmp_path / "refs.tsv"
    path.write_text("t\t0\ta\nt\t0\tb\n", encoding="utf-8")
    with pytest.raises(EvaluationError, match="duplicate"):
        read_reference_file(path)


def test_reference_file_rejects_malformed_lines(tmp_path):
    path = tmp_path / "refs.tsv"
    path.write_text("t\t0\n", encoding="utf-8")
    with pytest.raises(EvaluationError, match="expected"):
        read_reference_file(path)

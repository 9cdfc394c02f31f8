"""Synthetic task generator: determinism, rule bijectivity, dataset layout."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_st.audio import load_features
from cascade_st.data import read_manifest
from cascade_st.synthetic import (
    RULES,
    SHIFT_OFFSET,
    SyntheticTaskSpec,
    TaskError,
    apply_rule,
    generate_synthetic_task,
    render_words,
    source_words,
    target_words,
    word_frequency_hz,
)

TINY = dict(vocab_size=4, min_len=2, max_len=3, train_size=8, dev_size=4,
            test_size=4, talk_size=3, token_seconds=0.05)


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


# -- spec validation ---------------------------------------------------------

def test_vocab_of_one_rejected():
    with pytest.raises(TaskError):
        SyntheticTaskSpec(vocab_size=1)


def test_unknown_rule_rejected():
    with pytest.raises(TaskError):
        SyntheticTaskSpec(rule="sort")


def test_tones_beyond_nyquist_rejected():
    with pytest.raises(TaskError):
        SyntheticTaskSpec(vocab_size=32, tone_base_hz=500.0, tone_step_hz=300.0,
                          sample_rate=16000)


def test_bad_length_range_rejected():
    with pytest.raises(TaskError):
        SyntheticTaskSpec(min_len=5, max_len=3)


def test_spec_dict_round_trip():
    spec = SyntheticTaskSpec(seed=7, vocab_size=6, rule="shift")
    assert SyntheticTaskSpec.from_dict(spec.to_dict()) == spec


# -- word inventories --------------------------------------------------------

def test_word_lists_unique_and_disjoint():
    src = source_words(32)
    tgt = target_words(32)
    assert len(set(src)) == 32
    assert len(set(tgt)) == 32
    assert not set(src) & set(tgt)


def test_word_frequencies_increase():
    spec = SyntheticTaskSpec()
    freqs = [word_frequency_hz(spec, i) for i in range(spec.vocab_size)]
    assert all(b > a for a, b in zip(freqs, freqs[1:]))


# -- translation rules -------------------------------------------------------

@given(st.lists(st.integers(0, 7), min_size=1, max_size=10))
def test_reverse_is_an_involution(indices):
    once = apply_rule("reverse", indices, 8)
    assert apply_rule("reverse", once, 8) == indices


@given(st.lists(st.integers(0, 7), min_size=1, max_size=10))
def test_local_reorder_is_an_involution(indices):
    once = apply_rule("local-reorder", indices, 8)
    assert apply_rule("local-reorder", once, 8) == indices


def test_shift_rotates_the_vocabulary():
    assert apply_rule("shift", [0, 1, 7], 8) == [
        SHIFT_OFFSET % 8, (1 + SHIFT_OFFSET) % 8, (7 + SHIFT_OFFSET) % 8]


@settings(max_examples=30)
@given(st.sampled_from(RULES), st.lists(st.integers(0, 5), min_size=1, max_size=9))
def test_rules_are_length_preserving_bijections(rule, indices):
    out = apply_rule(rule, indices, 6)
    assert len(out) == len(indices)
    assert all(0 <= i < 6 for i in out)
    # injective on sequences: recover the input from the output
    if rule == "reverse":
        back = out[::-1]
    elif rule == "shift":
        back = [(i - SHIFT_OFFSET) % 6 for i in out]
    else:
        back = apply_rule(rule, out, 6)
    assert back == indices


def test_local_reorder_swaps_adjacent_pairs():
    assert apply_rule("local-reorder", [0, 1, 2, 3, 4], 8) == [1, 0, 3, 2, 4]


# -- rendering ---------------------------------------------------------------

def test_noiseless_rendering_is_deterministic():
    spec = SyntheticTaskSpec(noise_level=0.0)
    a = render_words(spec, [0, 3, 1], rng=None)
    b = render_words(spec, [0, 3, 1], rng=None)
    assert np.array_equal(a.samples, b.samples)


def test_noise_requires_a_generator():
    spec = SyntheticTaskSpec(noise_level=0.05)
    with pytest.raises(TaskError):
        render_words(spec, [0, 1], rng=None)


def test_rendering_length_matches_word_count():
    spec = SyntheticTaskSpec(noise_level=0.0, token_seconds=0.05)
    wave = render_words(spec, [0, 1, 2, 3], rng=None)
    assert wave.samples.size == 4 * int(round(0.05 * spec.sample_rate))
    assert wave.sample_rate == spec.sample_rate


def test_samples_stay_in_range():
    spec = SyntheticTaskSpec(noise_level=0.2)
    wave = render_words(spec, [0, 1], rng=np.random.default_rng(0))
    assert np.abs(wave.samples).max() <= 0.99


# -- dataset generation ------------------------------------------------------

def test_generation_is_byte_identical_across_runs(tmp_path):
    spec = SyntheticTaskSpec(seed=11, **TINY)
    generate_synthetic_task(spec, tmp_path / "a")
    generate_synthetic_task(spec, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_different_seeds_differ(tmp_path):
    generate_synthetic_task(SyntheticTaskSpec(seed=1, **TINY), tmp_path / "a")
    generate_synthetic_task(SyntheticTaskSpec(seed=2, **TINY), tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")


def test_generated_layout_and_manifests(tmp_path):
    spec = SyntheticTaskSpec(seed=3, **TINY)
    manifests = generate_synthetic_task(spec, tmp_path)
    assert set(manifests) == {"train", "dev", "test"}
    sizes = {"train": 8, "dev": 4, "test": 4}
    src_inventory = set(source_words(spec.vocab_size))
    tgt_inventory = set(target_words(spec.vocab_size))
    for split, size in sizes.items():
        manifest = read_manifest(manifests[split], check_paths=True)
        assert len(manifest.records) == size
        for record in manifest.records:
            words = record.source_text.split()
            assert spec.min_len <= len(words) <= spec.max_len
            assert set(words) <= src_inventory
            assert set(record.target_text.split()) <= tgt_inventory
            assert len(record.target_text.split()) == len(words)
            feats = load_features(manifest.audio_path(record))
            assert feats.frames.shape[1] == 240


def test_talk_grouping(tmp_path):
    spec = SyntheticTaskSpec(seed=3, **TINY)
    manifests = generate_synthetic_task(spec, tmp_path)
    manifest = read_manifest(manifests["train"])
    talks = [r.talk_id for r in manifest.records]
    # talk_size=3 over 8 utterances: 3 + 3 + 2
    assert talks == [f"train-talk{i // 3:03d}" for i in range(8)]


def test_translation_follows_the_rule(tmp_path):
    spec = SyntheticTaskSpec(seed=5, rule="reverse", **TINY)
    manifests = generate_synthetic_task(spec, tmp_path)
    src = source_words(spec.vocab_size)
    tgt = target_words(spec.vocab_size)
    manifest = read_manifest(manifests["dev"])
    for record in manifest.records:
        indices = [src.index(w) for w in record.source_text.split()]
        expected = " ".join(tgt[i] for i in indices[::-1])
        assert record.target_text == expected


def test_task_json_round_trips(tmp_path):
    spec = SyntheticTaskSpec(seed=9, **TINY)
    generate_synthetic_task(spec, tmp_path)
    stored = json.loads((tmp_path / "task.json").read_text())
    assert SyntheticTaskSpec.from_dict(stored) == spec

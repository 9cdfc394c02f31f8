"""Synthetic speech-translation tasks with known, learnable structure.

Each vocabulary word is rendered as a pure tone at its own frequency, so
an utterance is a tone sequence; the translation side applies a bijective
sequence rule, so perfect recognition and translation are achievable and
measurable. Everything is deterministic under the task seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, extract_features, save_features, write_wav
from .data import ManifestRecord, write_manifest

__all__ = [
    "SyntheticTaskSpec",
    "TaskError",
    "RULES",
    "source_words",
    "target_words",
    "apply_rule",
    "render_words",
    "generate_synthetic_task",
]

RULES = ("reverse", "shift", "local-reorder")
SHIFT_OFFSET = 5  # vocabulary rotation used by the "shift" rule

_SOURCE_CONSONANTS = "bdgklmnprstvz"
_TARGET_CONSONANTS = "chfjqwxy"
_VOWELS = "aeiou"


class TaskError(ValueError):
    """Raised for unsatisfiable task specifications."""


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Everything needed to regenerate a dataset byte-for-byte."""

    seed: int = 0
    vocab_size: int = 16
    min_len: int = 3
    max_len: int = 8
    rule: str = "reverse"
    tone_base_hz: float = 320.0
    tone_step_hz: float = 90.0
    token_seconds: float = 0.12
    sample_rate: int = 16000
    noise_level: float = 0.01
    train_size: int = 600
    dev_size: int = 60
    test_size: int = 120
    talk_size: int = 10

    def __post_init__(self):
        if self.vocab_size < 2:
            raise TaskError("vocabulary needs at least 2 words")
        if self.vocab_size > len(_SOURCE_CONSONANTS) * len(_VOWELS):
            raise TaskError(f"at most {len(_SOURCE_CONSONANTS) * len(_VOWELS)} source words available")
        if self.vocab_size > len(_TARGET_CONSONANTS) * len(_VOWELS) * 2:
            raise TaskError("target word list exhausted")
        if self.rule not in RULES:
            raise TaskError(f"unknown rule {self.rule!r}; choose from {RULES}")
        if not 1 <= self.min_len <= self.max_len:
            raise TaskError("need 1 <= min_len <= max_len")
        if self.talk_size < 1:
            raise TaskError("talk_size must be >= 1")
        top = self.tone_base_hz + self.tone_step_hz * (self.vocab_size - 1)
        if top >= self.sample_rate / 2:
            raise TaskError("tone frequencies exceed the Nyquist limit")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        return cls(**d)


def source_words(n: int) -> list[str]:
    """First n consonant-vowel source words ("ba", "be", ...)."""
    words = [c + v for c in _SOURCE_CONSONANTS for v in _VOWELS]
    return words[:n]


def target_words(n: int) -> list[str]:
    """First n target-side words, drawn from a disjoint consonant set."""
    words = [c + v for c in _TARGET_CONSONANTS for v in _VOWELS]
    words += [c + v + "n" for c in _TARGET_CONSONANTS for v in _VOWELS]
    return words[:n]


def word_frequency_hz(spec: SyntheticTaskSpec, index: int) -> float:
    return spec.tone_base_hz + spec.tone_step_hz * index


def apply_rule(rule: str, indices: list[int], vocab_size: int) -> list[int]:
    """Bijective sequence transformations defining the translation task."""
    if rule == "reverse":
        return indices[::-1]
    if rule == "shift":
        return [(i + SHIFT_OFFSET) % vocab_size for i in indices]
    if rule == "local-reorder":
        out = list(indices)
        for k in range(0, len(out) - 1, 2):
            out[k], out[k + 1] = out[k + 1], out[k]
        return out
    raise TaskError(f"unknown rule {rule!r}")


def render_words(
    spec: SyntheticTaskSpec, indices: list[int], rng: np.random.Generator | None
) -> Waveform:
    """One tone per word, with short fades to avoid boundary clicks.

    ``rng`` supplies additive noise and may be None when noise_level is 0,
    in which case the rendering depends only on the word sequence.
    """
    n = int(round(spec.token_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    fade = min(n // 4, int(0.005 * spec.sample_rate))
    envelope = np.ones(n)
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        envelope[:fade] = ramp
        envelope[-fade:] = ramp[::-1]
    parts = [
        0.3 * np.sin(2.0 * np.pi * word_frequency_hz(spec, i) * t) * envelope
        for i in indices
    ]
    samples = np.concatenate(parts)
    if spec.noise_level > 0:
        if rng is None:
            raise TaskError("noise_level > 0 requires a generator")
        samples = samples + rng.normal(0.0, spec.noise_level, samples.size)
    return Waveform(np.clip(samples, -0.99, 0.99), spec.sample_rate)


def _split_sizes(spec: SyntheticTaskSpec) -> dict[str, int]:
    return {"train": spec.train_size, "dev": spec.dev_size, "test": spec.test_size}


def generate_synthetic_task(spec: SyntheticTaskSpec, out_dir) -> dict[str, Path]:
    """Emit waveforms, cached features, and per-split manifests under out_dir.

    Returns the manifest path per split. Utterances are grouped into
    pseudo-talks of ``talk_size`` consecutive utterances. The text rng and
    each utterance's noise rng are seeded from (seed, split, index), so any
    subset regenerates identically.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "feat").mkdir(parents=True, exist_ok=True)
    src_words = source_words(spec.vocab_size)
    tgt_words = target_words(spec.vocab_size)

    manifests: dict[str, Path] = {}
    for split_idx, (split, size) in enumerate(_split_sizes(spec).items()):
        text_rng = np.random.default_rng([spec.seed, split_idx])
        records = []
        for i in range(size):
            length = int(text_rng.integers(spec.min_len, spec.max_len + 1))
            indices = [int(k) for k in text_rng.integers(0, spec.vocab_size, length)]
            source = " ".join(src_words[k] for k in indices)
            target = " ".join(
                tgt_words[k] for k in apply_rule(spec.rule, indices, spec.vocab_size)
            )
            noise_rng = (
                np.random.default_rng([spec.seed, split_idx, i, 1])
                if spec.noise_level > 0
                else None
            )
            wave = render_words(spec, indices, noise_rng)
            utt_id = f"{split}-{i:05d}"
            write_wav(out / "wav" / f"{utt_id}.wav", wave)
            save_features(extract_features(wave), out / "feat" / f"{utt_id}.feat")
            records.append(
                ManifestRecord(
                    utt_id=utt_id,
                    talk_id=f"{split}-talk{i // spec.talk_size:03d}",
                    audio=f"feat/{utt_id}.feat",
                    source_text=source,
                    target_text=target,
                )
            )
        manifest_path = out / f"{split}.tsv"
        write_manifest(manifest_path, records)
        manifests[split] = manifest_path

    (out / "task.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifests

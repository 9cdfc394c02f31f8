"""Dataset manifests, feature loading, and padded batch assembly."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import text
from .audio import FeatureMatrix, extract_features, load_features, read_wav
from .text import PAD_ID, SubwordModel

__all__ = [
    "DataError",
    "ManifestRecord",
    "Manifest",
    "EncodedUtterance",
    "Batch",
    "read_manifest",
    "write_manifest",
    "load_utterance_features",
    "encode_manifest",
    "pad_batch",
    "granularity_of",
]

_COLUMNS = ("utt_id", "talk_id", "audio", "source", "target")


class DataError(ValueError):
    """Raised for malformed manifests or unloadable utterances."""


@dataclass(frozen=True)
class ManifestRecord:
    """One utterance: identifiers, audio location, and the two text sides."""

    utt_id: str
    talk_id: str
    audio: str
    source_text: str
    target_text: str


@dataclass
class Manifest:
    """Ordered utterance records plus the directory audio paths resolve against."""

    records: list[ManifestRecord]
    base_dir: Path

    def __post_init__(self) -> None:
        ids = [r.utt_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate utterance ids: {', '.join(dupes[:5])}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def by_talk(self) -> dict[str, list[ManifestRecord]]:
        """Records grouped by talk id, keeping utterance order within talks."""
        talks: dict[str, list[ManifestRecord]] = {}
        for record in self.records:
            talks.setdefault(record.talk_id, []).append(record)
        return talks

    def audio_path(self, record: ManifestRecord) -> Path:
        return self.base_dir / record.audio


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    """Tab-separated manifest with a fixed header row."""
    path = Path(path)
    lines = ["\t".join(_COLUMNS)]
    for r in records:
        fields = (r.utt_id, r.talk_id, r.audio, r.source_text, r.target_text)
        for field in fields:
            if "\t" in field or "\n" in field:
                raise DataError("manifest fields may not contain tabs or newlines")
        lines.append("\t".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, check_paths: bool = True) -> Manifest:
    """Load a manifest; audio paths resolve relative to the manifest's directory."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != list(_COLUMNS):
        raise DataError(f"{path}: missing manifest header {'/'.join(_COLUMNS)}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != len(_COLUMNS):
            raise DataError(f"{path}: line {lineno}: expected {len(_COLUMNS)} fields")
        records.append(ManifestRecord(*fields))
    manifest = Manifest(records, path.parent)
    if check_paths:
        missing = [r.utt_id for r in records if not manifest.audio_path(r).exists()]
        if missing:
            raise DataError(
                f"{path}: unresolvable audio for {len(missing)} utterances "
                f"(first: {missing[0]})")
    return manifest


def load_utterance_features(manifest: Manifest, record: ManifestRecord) -> FeatureMatrix:
    """Features for one utterance: cached matrices load directly, waveforms
    go through the standard extraction front end."""
    path = manifest.audio_path(record)
    if path.suffix == ".wav":
        return extract_features(read_wav(path))
    return load_features(path)


def granularity_of(model: SubwordModel) -> str:
    """Model-config granularity label for a subword model's mode."""
    return {"character": "char", "bpe": "bpe"}[model.mode]


# ---------------------------------------------------------------------------
# encoded utterances and padded batches
# ---------------------------------------------------------------------------


@dataclass
class EncodedUtterance:
    utt_id: str
    talk_id: str
    features: np.ndarray  # (T, D) float32
    source_ids: np.ndarray  # (S,) int64, no bos/eos
    target_ids: np.ndarray  # (U,) int64, no bos/eos


@dataclass
class Batch:
    utt_ids: list[str]
    features: np.ndarray  # (B, T, D)
    feature_lengths: np.ndarray  # (B,)
    source: np.ndarray  # (B, S) padded with PAD_ID
    source_lengths: np.ndarray
    target: np.ndarray  # (B, U) padded with PAD_ID
    target_lengths: np.ndarray


def encode_manifest(
    manifest: Manifest,
    source_model: SubwordModel,
    target_model: SubwordModel,
    with_features: bool = True,
) -> list[EncodedUtterance]:
    """Tokenize both text sides (and optionally load features) for every record."""
    out = []
    empty = np.zeros((0, 0), dtype=np.float32)
    for record in manifest:
        source = text.encode(text.normalize_text(record.source_text), source_model)
        target = text.encode(text.normalize_text(record.target_text), target_model)
        if not source.ids or not target.ids:
            raise DataError(f"{record.utt_id}: empty token sequence after encoding")
        features = (
            load_utterance_features(manifest, record).frames.astype(np.float32)
            if with_features
            else empty
        )
        out.append(
            EncodedUtterance(
                utt_id=record.utt_id,
                talk_id=record.talk_id,
                features=features,
                source_ids=np.asarray(source.ids, dtype=np.int64),
                target_ids=np.asarray(target.ids, dtype=np.int64),
            )
        )
    return out


def _pad_tokens(rows: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([row.size for row in rows], dtype=np.int64)
    out = np.full((len(rows), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : row.size] = row
    return out, lengths


def pad_batch(utterances: Sequence[EncodedUtterance]) -> Batch:
    """Zero-pad features and pad-token-fill both text sides to shared widths."""
    if not utterances:
        raise DataError("cannot build an empty batch")
    flens = np.array([u.features.shape[0] for u in utterances], dtype=np.int64)
    dim = utterances[0].features.shape[1]
    features = np.zeros((len(utterances), int(flens.max()), dim), dtype=np.float32)
    for i, u in enumerate(utterances):
        if u.features.shape[1] != dim:
            raise DataError("feature dimensionality differs within batch")
        features[i, : u.features.shape[0]] = u.features
    source, source_lengths = _pad_tokens([u.source_ids for u in utterances])
    target, target_lengths = _pad_tokens([u.target_ids for u in utterances])
    return Batch(
        utt_ids=[u.utt_id for u in utterances],
        features=features,
        feature_lengths=flens,
        source=source,
        source_lengths=source_lengths,
        target=target,
        target_lengths=target_lengths,
    )

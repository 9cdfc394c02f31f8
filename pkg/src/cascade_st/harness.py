"""System recipes and the decode/evaluate drivers built on them.

A recipe names which trained models feed each side of the coupled
decoder: the recognition side is an Ext-ASR model, the speech module of
the jointly trained system, or a softmax-averaged ensemble of both; the
translation side likewise mixes the token-input and hidden-input
translation models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import text
from .checkpoint import load_checkpoint, restore_model
from .config import ExperimentConfig, resolve_mt_alpha
from .data import Manifest, granularity_of, load_utterance_features, read_manifest
from .decoding import (
    ASRScorer,
    CoupledResult,
    DecodingError,
    EnsembleSpec,
    ExtMTScorer,
    JointMTScorer,
    NBestList,
    coupled_decode,
    save_nbest,
)
from .evaluation import corpus_bleu, corpus_wer, mwer_segment
from .reports import ScoreRecord
from .text import SubwordModel, TokenSequence, load_subword_model

__all__ = [
    "HarnessError",
    "Recipe",
    "ALL_RECIPES",
    "LoadedSystems",
    "DecodeOutput",
    "load_systems",
    "run_decode",
    "run_eval",
]

ARROW = "==>"

_ASR_NAMES = {"ext": "Ext-ASR", "joint": "Joint-ASR"}
_MT_NAMES = {"ext": "Ext-MT", "joint": "Joint-MT"}
# display orders follow the customary table labels
_ASR_ORDER = ("ext", "joint")
_MT_ORDER = ("joint", "ext")


class HarnessError(RuntimeError):
    """Raised when a decode or evaluation run cannot proceed."""


@dataclass(frozen=True)
class Recipe:
    """Member sets for the two decoder sides, e.g. ext+joint ==> joint."""

    asr_members: tuple[str, ...]
    mt_members: tuple[str, ...]

    def __post_init__(self):
        for side, members, order in (
            ("recognition", self.asr_members, _ASR_ORDER),
            ("translation", self.mt_members, _MT_ORDER),
        ):
            if not members:
                raise HarnessError(f"{side} side needs at least one member")
            if len(set(members)) != len(members):
                raise HarnessError(f"duplicate {side} members: {members}")
            for m in members:
                if m not in ("ext", "joint"):
                    raise HarnessError(f"unknown {side} member {m!r}")
            if tuple(members) != tuple(m for m in order if m in members):
                raise HarnessError(f"{side} members must be ordered like {order}")

    @classmethod
    def parse(cls, spec: str) -> "Recipe":
        """Parse "ext=>joint+ext" style strings (order-insensitive)."""
        if "=>" not in spec:
            raise HarnessError(f"recipe {spec!r} needs an '=>' between the sides")
        left, _, right = spec.partition("=>")
        asr = tuple(m for m in _ASR_ORDER if m in _split_members(left, "recognition"))
        mt = tuple(m for m in _MT_ORDER if m in _split_members(right, "translation"))
        return cls(asr, mt)

    @property
    def label(self) -> str:
        left = " + ".join(_ASR_NAMES[m] for m in self.asr_members)
        right = " + ".join(_MT_NAMES[m] for m in self.mt_members)
        return f"[{left}]{ARROW}[{right}]"

    @property
    def slug(self) -> str:
        return "asr-" + "+".join(self.asr_members) + "_mt-" + "+".join(self.mt_members)

    def required_models(self) -> set[str]:
        needed = set()
        for m in self.asr_members:
            needed.add("asr" if m == "ext" else "joint")
        for m in self.mt_members:
            needed.add("mt" if m == "ext" else "joint")
        return needed


def _split_members(side: str, name: str) -> set[str]:
    members = {m.strip().strip("=<>") for m in side.split("+")}
    members = {m for m in members if m}
    unknown = members - {"ext", "joint"}
    if unknown:
        raise HarnessError(f"unknown {name} members {sorted(unknown)}")
    if not members:
        raise HarnessError(f"empty {name} side in recipe")
    return members


ALL_RECIPES = tuple(
    Recipe(asr, mt)
    for asr in (("ext",), ("joint",), ("ext", "joint"))
    for mt in (("ext",), ("joint",), ("joint", "ext"))
)


# ---------------------------------------------------------------------------
# model loading
# ---------------------------------------------------------------------------


@dataclass
class LoadedSystems:
    models: dict[str, object]  # subset of {"asr", "mt", "joint"}
    source_model: SubwordModel
    target_model: SubwordModel

    def asr_scorers(self, members) -> EnsembleSpec:
        scorers = [
            ASRScorer(self.models["asr"] if m == "ext" else self.models["joint"].asr)
            for m in members
        ]
        return EnsembleSpec(scorers)

    def mt_scorers(self, members) -> EnsembleSpec:
        scorers = [
            ExtMTScorer(self.models["mt"]) if m == "ext"
            else JointMTScorer(self.models["joint"])
            for m in members
        ]
        return EnsembleSpec(scorers)


_HASH_KEYS = {
    "asr": {"transcript": "source"},
    "mt": {"source": "source", "target": "target"},
    "joint": {"transcript": "source", "target": "target"},
}


def load_systems(config: ExperimentConfig, base_dir, required: set[str]) -> LoadedSystems:
    """Restore the required final checkpoints, verifying vocabulary hashes.

    Every referenced checkpoint must exist before anything is loaded, so a
    recipe naming a missing model fails before decoding starts.
    """
    base = Path(base_dir)
    run_dir = config.run_path(base)
    paths = {kind: run_dir / f"{kind}.ckpt" for kind in sorted(required)}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise HarnessError("missing model checkpoints: " + ", ".join(missing))

    source_model = load_subword_model(config.resolve("source_vocab", base))
    target_model = load_subword_model(config.resolve("target_vocab", base))
    hashes = {"source": source_model.content_hash(),
              "target": target_model.content_hash()}
    models = {}
    for kind, path in paths.items():
        ckpt = load_checkpoint(path)
        for key, which in _HASH_KEYS[kind].items():
            if ckpt.vocab_hashes.get(key) != hashes[which]:
                raise HarnessError(
                    f"{path}: vocabulary hash mismatch for {key!r}; the checkpoint "
                    f"was trained with a different {which} vocabulary")
        models[kind] = restore_model(ckpt)
    return LoadedSystems(models, source_model, target_model)


# ---------------------------------------------------------------------------
# decoding driver
# ---------------------------------------------------------------------------


@dataclass
class DecodeOutput:
    recipe: Recipe
    split: str
    out_dir: Path
    transcripts: dict[str, str]
    translations: dict[str, str]
    results: dict[str, CoupledResult]
    seconds: dict[str, float]


def _detokenize(ids, model: SubwordModel) -> str:
    granularity = "character" if model.mode == "character" else "bpe"
    return text.decode(TokenSequence(ids=[int(t) for t in ids], granularity=granularity), model)


def run_decode(
    config: ExperimentConfig,
    base_dir,
    recipe: Recipe,
    split: str,
    limit: int | None = None,
    systems: LoadedSystems | None = None,
) -> DecodeOutput:
    """Decode one split with one recipe; writes hypothesis files and timings.

    Artifacts land under ``run_dir/decodes/{recipe.slug}/{split}/``:
    transcripts.tsv and translations.tsv (1-best), nbest.tsv for the
    translation side, and timings.tsv with per-utterance wall seconds.
    """
    base = Path(base_dir)
    if systems is None:
        systems = load_systems(config, base, recipe.required_models())
    manifest = read_manifest(config.resolve(f"{split}_manifest", base))
    records = manifest.records[:limit] if limit else manifest.records

    asr_side = systems.asr_scorers(recipe.asr_members)
    mt_side = systems.mt_scorers(recipe.mt_members)
    asr_granularity = granularity_of(systems.source_model)
    mt_granularity = granularity_of(systems.target_model)
    dec = config.decoding
    mt_alpha = resolve_mt_alpha(config, asr_granularity, mt_granularity)

    out_dir = config.run_path(base) / "decodes" / recipe.slug / split
    out_dir.mkdir(parents=True, exist_ok=True)

    transcripts: dict[str, str] = {}
    translations: dict[str, str] = {}
    results: dict[str, CoupledResult] = {}
    seconds: dict[str, float] = {}
    for record in records:
        features = load_utterance_features(manifest, record)
        feats = features.frames.astype(np.float32)[None, :, :]
        flens = np.array([features.num_frames])
        begin = time.perf_counter()
        try:
            result = coupled_decode(
                asr_side, mt_side, feats, flens,
                asr_beam=dec.asr_beam, mt_beam=dec.mt_beam,
                asr_max_len=dec.asr_max_len, mt_max_len=dec.mt_max_len,
                asr_alpha=dec.asr_alpha, mt_alpha=mt_alpha,
                combine_normalized=dec.combine_normalized)
        except DecodingError as exc:
            raise HarnessError(f"{record.utt_id}: {exc}") from exc
        seconds[record.utt_id] = time.perf_counter() - begin
        results[record.utt_id] = result
        transcripts[record.utt_id] = _detokenize(
            result.transcript.core_tokens(), systems.source_model)
        translations[record.utt_id] = _detokenize(
            result.translation.core_tokens(), systems.target_model)

    _write_tsv(out_dir / "transcripts.tsv", transcripts)
    _write_tsv(out_dir / "translations.tsv", translations)
    nbest_records = {}
    for utt_id, result in results.items():
        merged = sorted((h for nbest in result.mt_nbests for h in nbest),
                        key=lambda h: h.normalized(mt_alpha), reverse=True)
        texts = [_detokenize(h.core_tokens(), systems.target_model) for h in merged]
        nbest_records[utt_id] = (NBestList(merged, alpha=mt_alpha), texts)
    save_nbest(out_dir / "nbest.tsv", nbest_records)
    _write_tsv(out_dir / "timings.tsv", {k: f"{v:.4f}" for k, v in seconds.items()})
    return DecodeOutput(recipe, split, out_dir, transcripts, translations, results, seconds)


def _write_tsv(path: Path, mapping: dict[str, str]) -> None:
    lines = [f"{key}\t{value}" for key, value in sorted(mapping.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_hypotheses(path) -> dict[str, str]:
    """Read a two-column utterance-id/text file written by run_decode."""
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        utt_id, _, hyp = line.partition("\t")
        out[utt_id] = hyp
    return out


# ---------------------------------------------------------------------------
# evaluation driver
# ---------------------------------------------------------------------------


def run_eval(
    config: ExperimentConfig,
    base_dir,
    recipe: Recipe,
    split: str,
    mode: str = "segmented",
) -> list[ScoreRecord]:
    """Score one decode: translation BLEU per talk plus transcript WER.

    ``segmented`` scores hypothesis/reference pairs directly. In
    ``mwer-stream`` mode each talk's translations are concatenated and
    re-cut against the reference segment boundaries by minimum-WER
    segmentation before BLEU (the transcript WER stays segmented).
    """
    if mode not in ("segmented", "mwer-stream"):
        raise HarnessError(f"unknown eval mode {mode!r}")
    base = Path(base_dir)
    manifest = read_manifest(config.resolve(f"{split}_manifest", base),
                             check_paths=False)
    out_dir = config.run_path(base) / "decodes" / recipe.slug / split
    if not out_dir.exists():
        raise HarnessError(f"no decode artifacts under {out_dir}; run decode first")
    transcripts = read_hypotheses(out_dir / "transcripts.tsv")
    translations = read_hypotheses(out_dir / "translations.tsv")

    manifest_ids = {r.utt_id for r in manifest}
    unknown = sorted(set(transcripts) - manifest_ids)
    if unknown:
        raise HarnessError(
            "hypotheses for utterance ids missing from the manifest: "
            + ", ".join(unknown[:10]))
    misaligned = sorted(set(transcripts) ^ set(translations))
    if misaligned:
        raise HarnessError(
            "transcript/translation id mismatch: " + ", ".join(misaligned[:10]))
    records = [r for r in manifest if r.utt_id in transcripts]
    if not records:
        raise HarnessError(f"no decoded utterances overlap manifest {split}")

    wer_pairs = []
    bleu_talks: dict[str, list[tuple[list[str], list[str]]]] = {}
    by_talk: dict[str, list] = {}
    for record in records:
        src_ref = text.normalize_text(record.source_text).split()
        tgt_ref = text.normalize_text(record.target_text).split()
        wer_pairs.append((src_ref, transcripts[record.utt_id].split()))
        by_talk.setdefault(record.talk_id, []).append(record)

    if mode == "segmented":
        for talk_id, talk_records in by_talk.items():
            bleu_talks[talk_id] = [
                (text.normalize_text(r.target_text).split(),
                 translations[r.utt_id].split())
                for r in talk_records
            ]
    else:
        for talk_id, talk_records in by_talk.items():
            stream = [w for r in talk_records for w in translations[r.utt_id].split()]
            refs = [text.normalize_text(r.target_text).split() for r in talk_records]
            segmentation = mwer_segment(stream, refs)
            bleu_talks[talk_id] = [
                (ref, list(seg)) for ref, seg in zip(refs, segmentation.segments)
            ]

    bleu = corpus_bleu(bleu_talks)
    wer_value = corpus_wer(wer_pairs)
    return [
        ScoreRecord(system=recipe.label, split=split, metric="bleu",
                    mode=mode, value=bleu.average),
        ScoreRecord(system=recipe.label, split=split, metric="wer",
                    mode="segmented", value=100.0 * wer_value),
    ]

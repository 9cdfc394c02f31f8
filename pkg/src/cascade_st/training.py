"""Training loops: batching, schedule, periodic checkpoints, dev selection.

The final model of a run is the parameter average of the k checkpoints
with the best dev loss. A non-finite loss or gradient aborts the run
while keeping every checkpoint already on disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import (
    average_checkpoints,
    checkpoint_from_model,
    load_checkpoint,
    save_checkpoint,
)
from .config import ExperimentConfig
from .data import Batch, EncodedUtterance, encode_manifest, granularity_of, pad_batch, read_manifest
from .models import ASRModel, JointModel, LossReport, MTModel, TransformerConfig
from .optim import AdamState, NaNGradientError
from .text import SubwordModel, load_subword_model

__all__ = [
    "TrainingError",
    "OBJECTIVES",
    "TrainingResult",
    "CheckpointRecord",
    "build_model_for",
    "run_training",
]

OBJECTIVES = ("asr", "mt", "joint")


class TrainingError(RuntimeError):
    """Raised when a run cannot produce a usable final model."""


@dataclass
class CheckpointRecord:
    step: int
    dev_loss: float
    path: Path


@dataclass
class TrainingResult:
    objective: str
    final_path: Path
    checkpoints: list[CheckpointRecord]
    log: list[LossReport]
    diverged: bool


# ---------------------------------------------------------------------------
# model construction from config + built artifacts
# ---------------------------------------------------------------------------


def build_model_for(
    objective: str,
    config: ExperimentConfig,
    source_model: SubwordModel,
    target_model: SubwordModel,
    feature_dim: int,
    seed: int,
):
    """Instantiate the model an objective trains, with vocab hashes attached."""
    if objective not in OBJECTIVES:
        raise TrainingError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    g_src = granularity_of(source_model)
    g_tgt = granularity_of(target_model)
    src_hash = source_model.content_hash()
    tgt_hash = target_model.content_hash()
    if objective == "asr":
        model = ASRModel(
            TransformerConfig(
                **config.asr,
                vocab_size=source_model.size,
                input_dim=feature_dim,
                source_granularity=g_src,
                target_granularity=g_src,
            ),
            seed=seed,
        )
        model.vocab_hashes = {"transcript": src_hash}
        return model
    if objective == "mt":
        model = MTModel(
            TransformerConfig(
                **config.mt,
                vocab_size=target_model.size,
                source_vocab_size=source_model.size,
                source_granularity=g_src,
                target_granularity=g_tgt,
            ),
            seed=seed,
        )
        model.vocab_hashes = {"source": src_hash, "target": tgt_hash}
        return model
    asr = ASRModel(
        TransformerConfig(
            **config.asr,
            vocab_size=source_model.size,
            input_dim=feature_dim,
            source_granularity=g_src,
            target_granularity=g_src,
        ),
        seed=seed,
    )
    mt = MTModel(
        TransformerConfig(
            **config.mt,
            vocab_size=target_model.size,
            bridge_dim=asr.config.d_model,
            source_granularity=g_src,
            target_granularity=g_tgt,
        ),
        seed=seed + 1,
    )
    model = JointModel(asr, mt, lam=config.lam)
    model.vocab_hashes = {"transcript": src_hash, "target": tgt_hash}
    return model


def _objective_step(model, batch: Batch, objective: str, train: bool,
                    rng: np.random.Generator | None):
    """Forward pass for one objective; returns (loss tensor, LossReport)."""
    if objective == "asr":
        loss, _, _ = model.forward_loss(
            batch.features, batch.feature_lengths, batch.source,
            batch.source_lengths, train, rng)
        value = float(loss.data)
        tokens = int(batch.source_lengths.sum()) + len(batch.utt_ids)
        return loss, LossReport(value, 0.0, value, 0, tokens)
    if objective == "mt":
        loss, tokens = model.forward_loss(
            batch.source, batch.source_lengths, batch.target,
            batch.target_lengths, train, rng)
        value = float(loss.data)
        return loss, LossReport(value, value, 0.0, tokens, 0)
    return model.forward_loss(
        batch.features, batch.feature_lengths, batch.source, batch.source_lengths,
        batch.target, batch.target_lengths, train, rng)


def _epoch_batches(utterances: list[EncodedUtterance], batch_size: int,
                   rng: np.random.Generator):
    order = rng.permutation(len(utterances))
    for lo in range(0, len(order), batch_size):
        chunk = [utterances[k] for k in order[lo : lo + batch_size]]
        yield pad_batch(chunk)


def evaluate_dev(model, utterances: list[EncodedUtterance], batch_size: int,
                 objective: str) -> float:
    """Utterance-weighted mean total loss, dropout off."""
    total = 0.0
    count = 0
    for lo in range(0, len(utterances), batch_size):
        batch = pad_batch(utterances[lo : lo + batch_size])
        _, report = _objective_step(model, batch, objective, train=False, rng=None)
        total += report.l_total * len(batch.utt_ids)
        count += len(batch.utt_ids)
    return total / count


# ---------------------------------------------------------------------------
# the run
# ---------------------------------------------------------------------------


def run_training(config: ExperimentConfig, base_dir, objective: str) -> TrainingResult:
    """Train one objective end to end and write its averaged final model.

    Artifacts under the run directory: ``checkpoints/{objective}-*.ckpt``
    at the configured cadence, ``logs/{objective}.tsv`` with per-step
    losses, and ``{objective}.ckpt`` averaging the best-dev checkpoints.
    """
    base = Path(base_dir)
    run_dir = config.run_path(base)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "logs").mkdir(parents=True, exist_ok=True)

    source_model = load_subword_model(config.resolve("source_vocab", base))
    target_model = load_subword_model(config.resolve("target_vocab", base))
    with_features = objective != "mt"
    train_utts = encode_manifest(
        read_manifest(config.resolve("train_manifest", base)),
        source_model, target_model, with_features=with_features)
    dev_utts = encode_manifest(
        read_manifest(config.resolve("dev_manifest", base)),
        source_model, target_model, with_features=with_features)
    feature_dim = train_utts[0].features.shape[1] if with_features else 0

    opt_cfg = config.optimizer
    model = build_model_for(objective, config, source_model, target_model,
                            feature_dim, seed=opt_cfg.seed)
    d_model = model.asr.config.d_model if objective == "joint" else model.config.d_model
    optimizer = AdamState(model.params, d_model=d_model, scale=opt_cfg.scale,
                          warmup=opt_cfg.warmup)

    log: list[LossReport] = []
    records: list[CheckpointRecord] = []
    diverged = False
    step = 0
    epoch = 0
    batches = _epoch_batches(train_utts, opt_cfg.batch_size,
                             np.random.default_rng([opt_cfg.seed, 100 + epoch]))
    while step < opt_cfg.steps:
        try:
            batch = next(batches)
        except StopIteration:
            epoch += 1
            batches = _epoch_batches(train_utts, opt_cfg.batch_size,
                                     np.random.default_rng([opt_cfg.seed, 100 + epoch]))
            continue
        step += 1
        rng = np.random.default_rng([opt_cfg.seed, 999, step])
        try:
            with T.Tape() as tape:
                loss, report = _objective_step(model, batch, objective, True, rng)
                T.backward(tape, loss)
            optimizer.step()
            optimizer.zero_grad()
        except (T.NonFiniteError, NaNGradientError):
            diverged = True
            break
        log.append(report)
        if step % opt_cfg.checkpoint_every == 0 or step == opt_cfg.steps:
            try:
                dev_loss = evaluate_dev(model, dev_utts, opt_cfg.batch_size, objective)
            except T.NonFiniteError:
                diverged = True
                break
            path = run_dir / "checkpoints" / f"{objective}-step{step:06d}.ckpt"
            save_checkpoint(checkpoint_from_model(model, step=step), path)
            records.append(CheckpointRecord(step, dev_loss, path))

    _write_log(run_dir / "logs" / f"{objective}.tsv", log, records)
    if not records:
        raise TrainingError(
            f"{objective}: run ended before any checkpoint was written")

    keep = sorted(records, key=lambda r: (r.dev_loss, r.step))[: opt_cfg.average_count]
    averaged = average_checkpoints([load_checkpoint(r.path) for r in keep])
    final_path = run_dir / f"{objective}.ckpt"
    save_checkpoint(averaged, final_path)
    return TrainingResult(objective, final_path, records, log, diverged)


def _write_log(path: Path, log: list[LossReport], records: list[CheckpointRecord]) -> None:
    lines = ["step\tl_total\tl_mt\tl_asr"]
    for i, report in enumerate(log, start=1):
        lines.append(f"{i}\t{report.l_total:.6f}\t{report.l_mt:.6f}\t{report.l_asr:.6f}")
    for record in records:
        lines.append(f"# checkpoint step {record.step} dev_loss {record.dev_loss:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

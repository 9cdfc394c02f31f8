"""Command-line driver: data generation through training, decoding,
evaluation, checkpoint averaging, and report emission.

Every command exits 0 only on full success and appends the files it
produced to an artifacts manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import text
from .audio import AudioError
from .checkpoint import CheckpointError, average_checkpoints, load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .data import DataError, read_manifest
from .decoding import DecodingError
from .evaluation import EvaluationError
from .harness import HarnessError, Recipe, run_decode, run_eval
from .models import ModelConfigError
from .reports import append_records, read_records, tables_from_records
from .synthetic import RULES, SyntheticTaskSpec, TaskError, generate_synthetic_task
from .text import VocabularyError, learn_bpe, learn_character_model, save_subword_model
from .training import OBJECTIVES, TrainingError, run_training

_ERRORS = (
    AudioError, CheckpointError, ConfigError, DataError, DecodingError,
    EvaluationError, HarnessError, ModelConfigError, TaskError, TrainingError,
    VocabularyError, FileNotFoundError,
)


def _note_artifacts(base: Path, command: str, paths) -> None:
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "artifacts.tsv", "a", encoding="utf-8") as handle:
        for path in paths:
            handle.write(f"{command}\t{path}\n")


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    spec = SyntheticTaskSpec(
        seed=args.seed, vocab_size=args.vocab_size, min_len=args.min_len,
        max_len=args.max_len, rule=args.rule, noise_level=args.noise_level,
        train_size=args.train_size, dev_size=args.dev_size,
        test_size=args.test_size, talk_size=args.talk_size)
    manifests = generate_synthetic_task(spec, args.out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    _note_artifacts(Path(args.out), "gen-data",
                    [p.relative_to(args.out) for p in manifests.values()])
    return 0


def _cmd_build_vocab(args) -> int:
    manifest = read_manifest(args.train_manifest, check_paths=False)
    source_corpus = [text.normalize_text(r.source_text) for r in manifest]
    target_corpus = [text.normalize_text(r.target_text) for r in manifest]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def learn(corpus, mode, size):
        if mode == "character":
            return learn_character_model(corpus)
        return learn_bpe(corpus, size)

    source_model = learn(source_corpus, args.source_mode, args.source_size)
    target_model = learn(target_corpus, args.target_mode, args.target_size)
    save_subword_model(source_model, out_dir / "source.vocab")
    save_subword_model(target_model, out_dir / "target.vocab")
    print(f"source: {source_model.mode} vocabulary of {source_model.size}")
    print(f"target: {target_model.mode} vocabulary of {target_model.size}")
    _note_artifacts(out_dir, "build-vocab", ["source.vocab", "target.vocab"])
    return 0


def _cmd_train(args) -> int:
    config_path = Path(args.config)
    config = load_config(config_path, check_paths=True)
    result = run_training(config, config_path.parent, args.objective)
    best = min(r.dev_loss for r in result.checkpoints)
    print(f"{args.objective}: {len(result.checkpoints)} checkpoints, "
          f"best dev loss {best:.4f}")
    print(f"final model: {result.final_path}")
    _note_artifacts(config.run_path(config_path.parent), "train",
                    [result.final_path.name]
                    + [f"checkpoints/{r.path.name}" for r in result.checkpoints])
    if result.diverged:
        print("training diverged; kept the checkpoints written so far",
              file=sys.stderr)
        return 1
    return 0


def _cmd_decode(args) -> int:
    config_path = Path(args.config)
    config = load_config(config_path, check_paths=True)
    recipe = Recipe.parse(args.recipe)
    output = run_decode(config, config_path.parent, recipe, args.split,
                        limit=args.limit)
    total = sum(output.seconds.values())
    print(f"{recipe.label} on {args.split}: {len(output.translations)} utterances "
          f"in {total:.1f}s -> {output.out_dir}")
    _note_artifacts(config.run_path(config_path.parent), "decode",
                    [output.out_dir / n for n in
                     ("transcripts.tsv", "translations.tsv", "nbest.tsv", "timings.tsv")])
    return 0


def _cmd_eval(args) -> int:
    config_path = Path(args.config)
    config = load_config(config_path, check_paths=True)
    recipe = Recipe.parse(args.recipe)
    records = run_eval(config, config_path.parent, recipe, args.split, args.mode)
    scores_path = config.run_path(config_path.parent) / "scores.jsonl"
    append_records(scores_path, records)
    for record in records:
        print(f"{record.metric.upper():4s} {record.mode:11s} {record.split}: "
              f"{record.value:.2f}  {record.system}")
    _note_artifacts(config.run_path(config_path.parent), "eval", ["scores.jsonl"])
    return 0


def _cmd_average_ckpt(args) -> int:
    checkpoints = [load_checkpoint(p) for p in args.inputs]
    averaged = average_checkpoints(checkpoints)
    save_checkpoint(averaged, args.out)
    print(f"averaged {len(checkpoints)} checkpoints -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    config_path = Path(args.config)
    config = load_config(config_path)
    run_dir = config.run_path(config_path.parent)
    scores_path = run_dir / "scores.jsonl"
    if not scores_path.exists():
        raise HarnessError(f"no scores at {scores_path}; run eval first")
    tables = tables_from_records(read_records(scores_path))
    chunks = []
    for key in sorted(tables):
        chunks.append(f"== {key} ==\n{tables[key]}")
    report_text = "\n".join(chunks)
    print(report_text, end="")
    (run_dir / "report.txt").write_text(report_text, encoding="utf-8")
    _note_artifacts(run_dir, "report", ["report.txt"])
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascade-st",
        description="Cascade speech translation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic tone-language dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--rule", choices=RULES, default="reverse")
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--train-size", type=int, default=600)
    p.add_argument("--dev-size", type=int, default=60)
    p.add_argument("--test-size", type=int, default=120)
    p.add_argument("--talk-size", type=int, default=10)
    p.add_argument("--noise-level", type=float, default=0.01)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("build-vocab", help="learn subword vocabularies from a manifest")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--source-mode", choices=("character", "bpe"), default="bpe")
    p.add_argument("--target-mode", choices=("character", "bpe"), default="bpe")
    p.add_argument("--source-size", type=int, default=96)
    p.add_argument("--target-size", type=int, default=96)
    p.set_defaults(handler=_cmd_build_vocab)

    p = sub.add_parser("train", help="train one objective to its averaged final model")
    p.add_argument("--config", required=True)
    p.add_argument("--objective", choices=OBJECTIVES, required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("decode", help="decode a split with a system recipe")
    p.add_argument("--config", required=True)
    p.add_argument("--recipe", required=True,
                   help='e.g. "ext=>ext" or "ext+joint=>joint+ext"; '
                        'members: ext, joint on each side')
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=None,
                   help="decode only the first N utterances")
    p.set_defaults(handler=_cmd_decode)

    p = sub.add_parser("eval", help="score a decode against the manifest references")
    p.add_argument("--config", required=True)
    p.add_argument("--recipe", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("segmented", "mwer-stream"),
                   default="segmented")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("average-ckpt", help="average checkpoint parameters")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(handler=_cmd_average_ckpt)

    p = sub.add_parser("report", help="emit aligned score tables for a run")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

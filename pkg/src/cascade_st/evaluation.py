"""Recognition and translation quality metrics.

Word error rate via Levenshtein alignment, corpus BLEU grouped by talk,
and minimum-WER segmentation of an unsegmented hypothesis word stream
against reference segment boundaries.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "EvaluationError",
    "EditAlignment",
    "TalkBleu",
    "BleuReport",
    "SegmentationResult",
    "wer",
    "corpus_wer",
    "corpus_bleu",
    "mwer_segment",
    "read_reference_file",
    "write_reference_file",
]

BLEU_ORDER = 4


class EvaluationError(ValueError):
    """Raised for inputs no metric is defined on."""


# ---------------------------------------------------------------------------
# word error rate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EditAlignment:
    """Word-level Levenshtein alignment of a hypothesis to a reference.

    ``pairs`` lists the aligned words in order as ``(reference_word,
    hypothesis_word)`` tuples; ``None`` marks the absent side of a
    deletion or an insertion.
    """

    hits: int
    substitutions: int
    deletions: int
    insertions: int
    pairs: tuple[tuple[str | None, str | None], ...]
    reference_length: int

    def __post_init__(self) -> None:
        if self.hits + self.substitutions + self.deletions != self.reference_length:
            raise EvaluationError(
                "hits + substitutions + deletions must equal the reference length"
            )

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        """Error rate against the reference length; may exceed 1."""
        return self.errors / self.reference_length


def _edit_table(reference: Sequence[str], hypothesis: Sequence[str]) -> np.ndarray:
    """Full matrix of prefix edit distances, shape (len(ref)+1, len(hyp)+1)."""
    h = len(hypothesis)
    cols = np.arange(h + 1, dtype=np.int64)
    table = np.empty((len(reference) + 1, h + 1), dtype=np.int64)
    table[0] = cols
    best = np.empty(h + 1, dtype=np.int64)
    for i, word in enumerate(reference, start=1):
        prev = table[i - 1]
        cost = np.fromiter(
            (0 if word == other else 1 for other in hypothesis),
            dtype=np.int64,
            count=h,
        )
        best[0] = prev[0] + 1
        np.minimum(prev[1:] + 1, prev[:-1] + cost, out=best[1:])
        # row[j] = min_k<=j best[k] + (j - k): insertions fill to the right
        table[i] = np.minimum.accumulate(best - cols) + cols
    return table


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> EditAlignment:
    """Align ``hypothesis`` to ``reference`` with unit edit costs.

    Backtrace ties are resolved deterministically, preferring hits over
    substitutions over deletions over insertions.

    Raises
    ------
    EvaluationError
        If the reference is empty.
    """
    ref = [str(w) for w in reference]
    hyp = [str(w) for w in hypothesis]
    if not ref:
        raise EvaluationError("reference must contain at least one word")
    table = _edit_table(ref, hyp)
    i, j = len(ref), len(hyp)
    pairs: list[tuple[str | None, str | None]] = []
    while i > 0 or j > 0:
        if (
            i > 0
            and j > 0
            and ref[i - 1] == hyp[j - 1]
            and table[i, j] == table[i - 1, j - 1]
        ):
            pairs.append((ref[i - 1], hyp[j - 1]))
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and table[i, j] == table[i - 1, j - 1] + 1:
            pairs.append((ref[i - 1], hyp[j - 1]))
            i -= 1
            j -= 1
        elif i > 0 and table[i, j] == table[i - 1, j] + 1:
            pairs.append((ref[i - 1], None))
            i -= 1
        else:
            pairs.append((None, hyp[j - 1]))
            j -= 1
    pairs.reverse()
    hits = sum(1 for r, h in pairs if r is not None and r == h)
    subs = sum(1 for r, h in pairs if r is not None and h is not None and r != h)
    dels = sum(1 for r, h in pairs if h is None)
    ins = sum(1 for r, h in pairs if r is None)
    return EditAlignment(hits, subs, dels, ins, tuple(pairs), len(ref))


def corpus_wer(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Pooled error rate: total edit errors over total reference length."""
    errors = 0
    length = 0
    for reference, hypothesis in pairs:
        alignment = wer(reference, hypothesis)
        errors += alignment.errors
        length += alignment.reference_length
    if length == 0:
        raise EvaluationError("at least one reference/hypothesis pair is required")
    return errors / length


# ---------------------------------------------------------------------------
# corpus BLEU per talk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TalkBleu:
    """Corpus BLEU of one talk together with its intermediate statistics."""

    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    reference_length: int
    hypothesis_length: int


@dataclass(frozen=True)
class BleuReport:
    """Per-talk corpus BLEU values and their unweighted mean."""

    per_talk: dict[str, TalkBleu]

    @property
    def average(self) -> float:
        return sum(talk.bleu for talk in self.per_talk.values()) / len(self.per_talk)


def _ngram_counts(words: Sequence[str], order: int) -> Counter:
    return Counter(
        tuple(words[k : k + order]) for k in range(len(words) - order + 1)
    )


def _talk_bleu(pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> TalkBleu:
    matches = [0] * BLEU_ORDER
    totals = [0] * BLEU_ORDER
    ref_length = 0
    hyp_length = 0
    for reference, hypothesis in pairs:
        ref_words = [str(w) for w in reference]
        hyp_words = [str(w) for w in hypothesis]
        ref_length += len(ref_words)
        hyp_length += len(hyp_words)
        for order in range(1, BLEU_ORDER + 1):
            hyp_counts = _ngram_counts(hyp_words, order)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref_words, order)
            totals[order - 1] += sum(hyp_counts.values())
            matches[order - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    if ref_length == 0:
        raise EvaluationError("talk has an empty reference")
    if hyp_length == 0:
        return TalkBleu(0.0, (0.0,) * BLEU_ORDER, 0.0, ref_length, 0)
    precisions = []
    for order in range(1, BLEU_ORDER + 1):
        numer, denom = matches[order - 1], totals[order - 1]
        if order >= 2:
            # add-one smoothing keeps short or zero-match orders finite;
            # the unigram precision stays unsmoothed
            numer, denom = numer + 1, denom + 1
        precisions.append(numer / denom if denom else 0.0)
    brevity = 1.0 if hyp_length >= ref_length else math.exp(1.0 - ref_length / hyp_length)
    if min(precisions) <= 0.0:
        bleu = 0.0
    else:
        mean_log = sum(math.log(p) for p in precisions) / BLEU_ORDER
        bleu = 100.0 * brevity * math.exp(mean_log)
    return TalkBleu(bleu, tuple(precisions), brevity, ref_length, hyp_length)


def corpus_bleu(
    talks: Mapping[str, Sequence[tuple[Sequence[str], Sequence[str]]]],
) -> BleuReport:
    """Corpus BLEU per talk plus the unweighted average over talks.

    Each talk maps to its ``(reference_words, hypothesis_words)`` pairs;
    n-gram matches and totals are pooled over the talk before dividing.
    Precision uses modified (clipped) counts for n = 1..4; orders n >= 2
    receive add-one smoothing on both counts; the brevity penalty is
    ``exp(1 - r/c)`` when the hypothesis is shorter than the reference.
    """
    if not talks:
        raise EvaluationError("at least one talk is required")
    report: dict[str, TalkBleu] = {}
    for talk_id, pairs in talks.items():
        pairs = list(pairs)
        if not pairs:
            raise EvaluationError(f"talk {talk_id!r} has no sentence pairs")
        report[str(talk_id)] = _talk_bleu(pairs)
    return BleuReport(report)


# ---------------------------------------------------------------------------
# minimum-WER segmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentationResult:
    """A hypothesis stream cut into one segment per reference segment."""

    segments: tuple[tuple[str, ...], ...]
    errors: int
    reference_length: int

    @property
    def wer(self) -> float:
        return self.errors / self.reference_length


def mwer_segment(
    stream: Sequence[str], reference_segments: Sequence[Sequence[str]]
) -> SegmentationResult:
    """Cut ``stream`` into segments minimising the summed edit distance.

    A dynamic program over (stream position, reference segment) considers
    every monotone placement of cut points and returns a segmentation
    achieving the global minimum of the per-segment Levenshtein distances.
    An empty stream yields all-empty segments (pure deletion alignments).
    """
    refs = [[str(w) for w in segment] for segment in reference_segments]
    if not refs:
        raise EvaluationError("at least one reference segment is required")
    total_ref = sum(len(ref) for ref in refs)
    if total_ref == 0:
        raise EvaluationError("reference segments must contain at least one word")
    words = [str(w) for w in stream]
    s = len(words)
    cols = np.arange(s + 1, dtype=np.float64)

    # frontier[i]: best cost of matching the segments so far to stream[:i]
    frontier = np.full(s + 1, np.inf)
    frontier[0] = 0.0
    frontiers = [frontier]
    tables = []
    best = np.empty(s + 1)
    for ref in refs:
        table = np.empty((len(ref) + 1, s + 1))
        table[0] = np.minimum.accumulate(frontier - cols) + cols
        for r, word in enumerate(ref, start=1):
            prev = table[r - 1]
            if s:
                cost = np.fromiter(
                    (0.0 if word == other else 1.0 for other in words),
                    dtype=np.float64,
                    count=s,
                )
                np.minimum(prev[1:] + 1.0, prev[:-1] + cost, out=best[1:])
            best[0] = prev[0] + 1.0
            table[r] = np.minimum.accumulate(best - cols) + cols
        tables.append(table)
        frontier = table[-1]
        frontiers.append(frontier)

    total = int(round(frontier[s]))

    # trace cut points right to left; ties prefer the diagonal move, then
    # deletion, then insertion, and take a cut as soon as one is optimal
    boundaries = [s]
    end = s
    for k in range(len(refs) - 1, -1, -1):
        table = tables[k]
        before = frontiers[k]
        ref = refs[k]
        r, i = len(ref), end
        while r > 0:
            diag = table[r - 1, i - 1] + (
                0.0 if ref[r - 1] == words[i - 1] else 1.0
            ) if i > 0 else np.inf
            if i > 0 and table[r, i] == diag:
                r -= 1
                i -= 1
            elif table[r, i] == table[r - 1, i] + 1.0:
                r -= 1
            else:
                i -= 1
        while table[0, i] != before[i]:
            i -= 1
        end = i
        boundaries.append(end)
    boundaries.reverse()

    segments = tuple(
        tuple(words[boundaries[k] : boundaries[k + 1]]) for k in range(len(refs))
    )
    return SegmentationResult(segments, total, total_ref)


# ---------------------------------------------------------------------------
# reference files
# ---------------------------------------------------------------------------


def read_reference_file(path) -> dict[str, list[tuple[str, str]]]:
    """Parse tab-separated ``talk_id, segment_id, text`` rows grouped by talk.

    Segments keep file order within each talk; a duplicated
    ``(talk_id, segment_id)`` pair or a malformed line is an error.
    """
    talks: dict[str, list[tuple[str, str]]] = {}
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise EvaluationError(
                    f"{path}: line {lineno}: expected talk_id<TAB>segment_id<TAB>text"
                )
            talk_id, segment_id, text = fields
            if (talk_id, segment_id) in seen:
                raise EvaluationError(
                    f"{path}: line {lineno}: duplicate segment {talk_id}/{segment_id}"
                )
            seen.add((talk_id, segment_id))
            talks.setdefault(talk_id, []).append((segment_id, text))
    if not talks:
        raise EvaluationError(f"{path}: no reference rows")
    return talks


def write_reference_file(path, talks: Mapping[str, Sequence[tuple[str, str]]]) -> None:
    """Write the reference file format read by :func:`read_reference_file`."""
    with open(path, "w", encoding="utf-8") as handle:
        for talk_id, segments in talks.items():
            for segment_id, text in segments:
                for field in (talk_id, segment_id, text):
                    if "\t" in field or "\n" in field:
                        raise EvaluationError(
                            "reference fields may not contain tabs or newlines"
                        )
                handle.write(f"{talk_id}\t{segment_id}\t{text}\n")

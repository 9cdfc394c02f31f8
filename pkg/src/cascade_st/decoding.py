"""Beam search, coupled two-stage inference, and softmax-averaged ensembles.

The decoder is organized around a small scorer protocol:

    ctx = scorer.start(inp)             one utterance's encoder-side work
    probs = scorer.step_probs(ctx, prefixes)   (K, V) next-token distributions

``prefixes`` is a (K, t) integer array of bos-prefixed partial hypotheses;
scorers recompute the full prefix each step, which is exact under causal
masking. Ensembles average member distributions in probability space,
``sum_i w_i * softmax_i``, and the beam consumes the log of that average.

Coupled inference runs a recognition-side beam for n-best transcripts
``z`` with log P(z|x), then a translation-side beam per ``z`` for log
P(y|z), and returns the pair maximizing ``log P(y|z) + log P(z|x)`` —
a joint argmax over both n-best lists rather than a 1-best pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .text import BOS_ID, EOS_ID

TINY_PROB = 1e-30  # floor before log so masked/zero probabilities stay finite


class DecodingError(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    """One scored token sequence; ``tokens`` ends with eos iff finished."""

    tokens: tuple
    log_likelihood: float
    step_log_probs: tuple = ()
    finished: bool = False
    truncated: bool = False

    def __post_init__(self):
        if self.log_likelihood > 1e-9:
            raise DecodingError(f"log-likelihood must be <= 0, got {self.log_likelihood}")
        if self.finished != (len(self.tokens) > 0 and self.tokens[-1] == EOS_ID):
            raise DecodingError("finished flag must mirror a trailing eos token")

    def normalized(self, alpha: float) -> float:
        return length_normalize(self.log_likelihood, max(len(self.tokens), 1), alpha)

    def core_tokens(self) -> tuple:
        """Tokens without the trailing eos."""
        return self.tokens[:-1] if self.finished else self.tokens


@dataclass
class NBestList:
    hypotheses: list
    alpha: float = 0.0

    def __post_init__(self):
        scores = [h.normalized(self.alpha) for h in self.hypotheses]
        if any(a < b - 1e-9 for a, b in zip(scores, scores[1:])):
            raise DecodingError("n-best list must be sorted best first")

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)


@dataclass
class EnsembleSpec:
    """Scorers plus mixture weights (uniform when omitted)."""

    members: list
    weights: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise DecodingError("ensemble needs at least one member")
        if not self.weights:
            self.weights = [1.0 / len(self.members)] * len(self.members)
        if len(self.weights) != len(self.members):
            raise DecodingError("one weight per member required")
        if any(w < 0 for w in self.weights):
            raise DecodingError("ensemble weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-6:
            raise DecodingError(f"ensemble weights sum to {sum(self.weights)}, expected 1")


def length_normalize(log_likelihood: float, length: int, alpha: float) -> float:
    """score / length**alpha; alpha 0 disables normalization."""
    if length < 1:
        raise DecodingError("length must be >= 1")
    return float(log_likelihood) / float(length) ** alpha


def ensemble_step(spec: EnsembleSpec, contexts: list, prefixes: np.ndarray) -> np.ndarray:
    """Weighted average of member next-token distributions: sum_i w_i softmax_i."""
    mixed = None
    vocab = None
    for member, ctx, w in zip(spec.members, contexts, spec.weights):
        probs = np.asarray(member.step_probs(ctx, prefixes), dtype=np.float64)
        if vocab is None:
            vocab = probs.shape[-1]
        elif probs.shape[-1] != vocab:
            raise DecodingError(
                f"ensemble member vocabulary mismatch: {probs.shape[-1]} vs {vocab}")
        mixed = w * probs if mixed is None else mixed + w * probs
    return mixed


# ---------------------------------------------------------------------------
# beam search


def _rank_key(alpha: float):
    # best first: higher normalized score, then shorter, then lexicographic
    return lambda h: (-h.normalized(alpha), len(h.tokens), h.tokens)


def beam_search(spec: EnsembleSpec, inputs, beam: int, max_len: int,
                alpha: float = 0.0) -> NBestList:
    """Length-synchronized beam search over the ensemble-averaged distribution.

    ``inputs`` is one start input shared by every member, or a list with one
    entry per member. Each step scores all live-hypothesis expansions in one
    batched call per member; hypotheses that emit eos are held aside and the
    final ranking applies the length normalization. If nothing finishes
    within ``max_len``, eos is appended to the survivors and the results are
    flagged truncated.
    """
    if beam < 1 or max_len < 1:
        raise DecodingError("beam and max_len must be >= 1")
    if isinstance(inputs, list) and len(inputs) == len(spec.members):
        contexts = [m.start(inp) for m, inp in zip(spec.members, inputs)]
    else:
        contexts = [m.start(inputs) for m in spec.members]
    return _beam_over_contexts(spec, contexts, beam, max_len, alpha)


def _step_logp(spec: EnsembleSpec, contexts: list, alive: list) -> np.ndarray:
    """Per-expansion log-probs; exact zeros become -inf (never expanded)."""
    prefixes = np.array([(BOS_ID,) + h.tokens for h in alive], dtype=np.int64)
    probs = ensemble_step(spec, contexts, prefixes)
    with np.errstate(divide="ignore"):
        return np.where(probs > 0.0, np.log(np.maximum(probs, TINY_PROB)), -np.inf)


def _beam_over_contexts(spec: EnsembleSpec, contexts: list, beam: int,
                        max_len: int, alpha: float) -> NBestList:
    alive = [Hypothesis(tokens=(), log_likelihood=0.0)]
    survivors = alive
    finished: list = []

    for _ in range(max_len):
        logp = _step_logp(spec, contexts, alive)
        totals = np.array([h.log_likelihood for h in alive])[:, None] + logp
        flat = totals.reshape(-1)
        # stable sort: score ties resolved by earlier beam row, then token id
        top = np.argsort(-flat, kind="stable")[: min(beam, flat.size)]
        vocab = totals.shape[1]
        next_alive = []
        for f in top:
            if not np.isfinite(flat[f]):
                continue
            row, tok = divmod(int(f), vocab)
            h = alive[row]
            grown = Hypothesis(
                tokens=h.tokens + (tok,),
                log_likelihood=h.log_likelihood + float(logp[row, tok]),
                step_log_probs=h.step_log_probs + (float(logp[row, tok]),),
                finished=(tok == EOS_ID))
            if grown.finished:
                finished.append(grown)
            else:
                next_alive.append(grown)
        if next_alive:
            survivors = next_alive
        alive = next_alive
        if not alive:
            break

    if not finished:
        # nothing closed within the budget: force eos onto the survivors,
        # floored so the fallback score stays finite even where eos had
        # probability zero
        prefixes = np.array([(BOS_ID,) + h.tokens for h in survivors], dtype=np.int64)
        probs = ensemble_step(spec, contexts, prefixes)
        logp = np.log(np.maximum(probs, TINY_PROB))
        finished = [
            Hypothesis(tokens=h.tokens + (EOS_ID,),
                       log_likelihood=h.log_likelihood + float(logp[i, EOS_ID]),
                       step_log_probs=h.step_log_probs + (float(logp[i, EOS_ID]),),
                       finished=True, truncated=True)
            for i, h in enumerate(survivors)]

    finished.sort(key=_rank_key(alpha))
    return NBestList(hypotheses=finished[:beam], alpha=alpha)


# ---------------------------------------------------------------------------
# model-backed scorers


class ASRScorer:
    """Recognition-side scorer over acoustic features."""

    def __init__(self, model):
        self.model = model

    @property
    def vocab_size(self):
        return self.model.config.vocab_size

    def start(self, inp):
        features, feature_lengths = inp
        memory, mem_lengths = self.model.encode_inference(features, feature_lengths)
        return memory, mem_lengths

    def step_probs(self, ctx, prefixes):
        memory, mem_lengths = ctx
        k = prefixes.shape[0]
        tiled = np.repeat(memory, k, axis=0)
        lengths = np.repeat(mem_lengths, k)
        return self.model.next_token_probs(tiled, lengths, prefixes)


class ExtMTScorer:
    """Translation-side scorer consuming recognized source tokens."""

    source_mode = "tokens"

    def __init__(self, model):
        if model.mode != "token":
            raise DecodingError("external translation scorer requires a token-mode model")
        self.model = model

    @property
    def vocab_size(self):
        return self.model.config.vocab_size

    def start(self, inp):
        tokens = np.asarray(inp, dtype=np.int64)
        if tokens.size == 0:
            raise DecodingError("cannot translate an empty token sequence")
        memory, lengths = self.model.encode_inference(
            tokens[None, :], np.array([tokens.size]))
        return memory, lengths

    def start_from(self, features, feature_lengths, source_tokens):
        return self.start(source_tokens)

    def step_probs(self, ctx, prefixes):
        memory, lengths = ctx
        k = prefixes.shape[0]
        return self.model.next_token_probs(
            np.repeat(memory, k, axis=0), np.repeat(lengths, k), prefixes)


class JointMTScorer:
    """Translation-side scorer consuming bridge states of a joint model.

    Given an external transcript hypothesis, the joint recognition decoder
    is teacher-forced to produce the state sequence this scorer encodes.
    """

    source_mode = "bridge"

    def __init__(self, joint):
        self.joint = joint

    @property
    def vocab_size(self):
        return self.joint.mt.config.vocab_size

    def start(self, inp):
        bridge = np.asarray(inp)
        if bridge.ndim != 2:
            raise DecodingError("joint translation scorer expects (L, d) bridge states")
        memory, lengths = self.joint.mt.encode_inference(
            bridge[None, :, :], np.array([bridge.shape[0]]))
        return memory, lengths

    def start_from(self, features, feature_lengths, source_tokens):
        states = self.joint.forced_continuation(features, feature_lengths, source_tokens)
        return self.start(states)

    def step_probs(self, ctx, prefixes):
        memory, lengths = ctx
        k = prefixes.shape[0]
        return self.joint.mt.next_token_probs(
            np.repeat(memory, k, axis=0), np.repeat(lengths, k), prefixes)


# ---------------------------------------------------------------------------
# coupled two-stage inference


@dataclass
class CoupledResult:
    transcript: Hypothesis
    translation: Hypothesis
    combined_score: float
    score_matrix: list  # score_matrix[i][j] = combined score of (z_i, y_ij)
    asr_nbest: NBestList
    mt_nbests: list  # one NBestList per transcript hypothesis


def coupled_decode(asr_side: EnsembleSpec, mt_side: EnsembleSpec, features,
                   feature_lengths, asr_beam: int = 10, mt_beam: int = 5,
                   asr_max_len: int = 40, mt_max_len: int = 40,
                   asr_alpha: float = 0.0, mt_alpha: float = 0.0,
                   combine_normalized: bool = False) -> CoupledResult:
    """Joint argmax of transcription and translation likelihoods.

    The recognition beam proposes n-best transcripts; each is translated by
    the translation-side beam; the returned pair maximizes the sum of the
    two log-likelihoods (raw by default, length-normalized when
    ``combine_normalized``; ties prefer shorter, then lexicographic).
    """
    asr_nbest = beam_search(asr_side, (features, feature_lengths),
                            asr_beam, asr_max_len, asr_alpha)
    if len(asr_nbest) == 0:
        raise DecodingError("recognition produced an empty n-best list")

    def side_score(h: Hypothesis, alpha: float) -> float:
        return h.normalized(alpha) if combine_normalized else h.log_likelihood

    best = None
    matrix: list = []
    mt_nbests: list = []
    for z in asr_nbest:
        z_core = np.asarray(z.core_tokens(), dtype=np.int64)
        if z_core.size == 0:
            # an empty transcript cannot seed the translation side; skip it
            matrix.append([])
            mt_nbests.append(NBestList(hypotheses=[], alpha=mt_alpha))
            continue
        contexts = [m.start_from(features, feature_lengths, z_core)
                    for m in mt_side.members]
        y_nbest = _beam_over_contexts(mt_side, contexts, mt_beam, mt_max_len, mt_alpha)
        if len(y_nbest) == 0:
            raise DecodingError("translation produced an empty n-best list")
        mt_nbests.append(y_nbest)
        row = []
        for y in y_nbest:
            combined = side_score(z, asr_alpha) + side_score(y, mt_alpha)
            row.append(combined)
            key = (-combined, len(y.tokens), y.tokens, len(z.tokens), z.tokens)
            if best is None or key < best[0]:
                best = (key, z, y, combined)
        matrix.append(row)

    if best is None:
        raise DecodingError("no transcript hypothesis could be translated")
    _, z_best, y_best, combined = best
    return CoupledResult(transcript=z_best, translation=y_best,
                         combined_score=combined, score_matrix=matrix,
                         asr_nbest=asr_nbest, mt_nbests=mt_nbests)


# ---------------------------------------------------------------------------
# n-best file I/O


def save_nbest(path, records: dict) -> None:
    """Write {utterance_id: NBestList-like iterable of (hypothesis, text)}.

    One tab-separated line per hypothesis:
    utterance id, rank, raw log-likelihood, normalized score, text.
    """
    with open(path, "w", encoding="utf-8") as f:
        for utt_id in sorted(records):
            nbest, texts = records[utt_id]
            for rank, (hyp, text) in enumerate(zip(nbest, texts), start=1):
                f.write(f"{utt_id}\t{rank}\t{hyp.log_likelihood:.6f}"
                        f"\t{hyp.normalized(nbest.alpha):.6f}\t{text}\n")


def load_nbest(path) -> dict:
    """Read the n-best file back as {utterance_id: [(rank, ll, norm, text)]}."""
    out: dict = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DecodingError(f"malformed n-best line: {line!r}")
            utt_id, rank, ll, norm, text = parts
            out.setdefault(utt_id, []).append((int(rank), float(ll), float(norm), text))
    return out

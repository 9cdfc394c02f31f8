"""Shared test scorers and brute-force oracles."""

import numpy as np

from cascade_st.decoding import Hypothesis
from cascade_st.text import BOS_ID, EOS_ID


class RandomTableScorer:
    """Deterministic pseudo-random conditional distributions P(token | prefix).

    Each prefix is hashed (integers only, so stable across processes) to seed
    a generator whose softmaxed normal draw is that prefix's distribution.
    """

    def __init__(self, vocab: int, seed: int):
        self.vocab = vocab
        self.seed = seed

    def start(self, inp):
        return None

    def step_probs(self, ctx, prefixes):
        out = np.empty((prefixes.shape[0], self.vocab))
        for i, row in enumerate(prefixes):
            key = hash((self.seed,) + tuple(int(t) for t in row)) % (2 ** 63)
            logits = np.random.default_rng(key).normal(size=self.vocab)
            e = np.exp(logits - logits.max())
            out[i] = e / e.sum()
        return out


class TableScorer:
    """Explicit {prefix: {token: prob}} tables; unlisted prefixes emit eos.

    Rows need not be proper distributions — handy for pinning exact
    hypothesis scores in selection-logic tests.
    """

    def __init__(self, vocab: int, table: dict):
        self.vocab = vocab
        self.table = table

    def start(self, inp):
        return None

    def step_probs(self, ctx, prefixes):
        out = np.zeros((prefixes.shape[0], self.vocab))
        for i, row in enumerate(prefixes):
            key = tuple(int(t) for t in row[1:])  # strip bos
            for tok, p in self.table.get(key, {EOS_ID: 1.0}).items():
                out[i, tok] = p
        return out


class SourceTableScorer:
    """TableScorer variant keyed additionally by the start-time source tokens."""

    def __init__(self, vocab: int, tables: dict):
        self.vocab = vocab
        self.tables = tables  # {source_tokens: {prefix: {token: prob}}}

    def start(self, source):
        return tuple(int(t) for t in np.asarray(source).ravel())

    def start_from(self, features, feature_lengths, source_tokens):
        return self.start(source_tokens)

    def step_probs(self, ctx, prefixes):
        table = self.tables[ctx]
        out = np.zeros((prefixes.shape[0], self.vocab))
        for i, row in enumerate(prefixes):
            key = tuple(int(t) for t in row[1:])
            for tok, p in table.get(key, {EOS_ID: 1.0}).items():
                out[i, tok] = p
        return out


class FixedSequenceScorer:
    """Emits one target sequence with probability 1, then eos."""

    def __init__(self, vocab: int, sequence):
        self.vocab = vocab
        self.sequence = tuple(sequence)

    def start(self, inp):
        return None

    def step_probs(self, ctx, prefixes):
        out = np.zeros((prefixes.shape[0], self.vocab))
        for i, row in enumerate(prefixes):
            step = len(row) - 1
            tok = self.sequence[step] if step < len(self.sequence) else EOS_ID
            out[i, tok] = 1.0
        return out


def exhaustive_best(scorer, vocab: int, max_len: int):
    """Brute-force argmax over every eos-terminated sequence of length <= max_len.

    Ranking matches the beam: raw score, then shorter, then lexicographic.
    Returns (tokens, log_likelihood).
    """
    best = None

    def visit(prefix, ll):
        nonlocal best
        probs = scorer.step_probs(None, np.array([(BOS_ID,) + prefix], dtype=np.int64))[0]
        logp = np.log(np.maximum(probs, 1e-30))
        for tok in range(vocab):
            if tok == EOS_ID:
                cand_tokens = prefix + (tok,)
                cand_ll = ll + logp[tok]
                key = (-cand_ll, len(cand_tokens), cand_tokens)
                if best is None or key < best[0]:
                    best = (key, cand_tokens, cand_ll)
            elif len(prefix) + 1 <= max_len - 1:
                visit(prefix + (tok,), ll + logp[tok])

    visit((), 0.0)
    return best[1], best[2]


def greedy_decode(scorer, ctx, max_len: int):
    """Reference greedy loop: argmax token per step until eos."""
    tokens = ()
    ll = 0.0
    for _ in range(max_len):
        probs = scorer.step_probs(ctx, np.array([(BOS_ID,) + tokens], dtype=np.int64))[0]
        logp = np.log(np.maximum(probs, 1e-30))
        tok = int(np.argmax(logp))
        tokens += (tok,)
        ll += float(logp[tok])
        if tok == EOS_ID:
            return Hypothesis(tokens=tokens, log_likelihood=ll, finished=True)
    probs = scorer.step_probs(ctx, np.array([(BOS_ID,) + tokens], dtype=np.int64))[0]
    logp = np.log(np.maximum(probs, 1e-30))
    return Hypothesis(tokens=tokens + (EOS_ID,), log_likelihood=ll + float(logp[EOS_ID]),
                      finished=True, truncated=True)


def brute_edit_distance(reference, hypothesis):
    """Memoised recursive Levenshtein distance, independent of any DP table."""
    from functools import lru_cache

    ref = tuple(reference)
    hyp = tuple(hypothesis)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        diag = go(i - 1, j - 1) + (0 if ref[i - 1] == hyp[j - 1] else 1)
        return min(diag, go(i - 1, j) + 1, go(i, j - 1) + 1)

    return go(len(ref), len(hyp))


def brute_min_segmentation(stream, reference_segments):
    """Minimum summed per-segment edit distance over every monotone cut tuple."""
    import itertools

    stream = tuple(stream)
    refs = [tuple(r) for r in reference_segments]
    s = len(stream)
    best = None
    for cuts in itertools.combinations_with_replacement(range(s + 1), len(refs) - 1):
        bounds = (0,) + cuts + (s,)
        total = sum(
            brute_edit_distance(refs[k], stream[bounds[k] : bounds[k + 1]])
            for k in range(len(refs))
        )
        if best is None or total < best:
            best = total
    return best

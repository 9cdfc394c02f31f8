"""Text normalization and tokenization into character or learned subword units.

Both granularities share one vocabulary layout: specials pad=0, bos=1,
eos=2, unk=3, then symbols in a deterministic learning order. Character
mode keeps the space as an explicit vocabulary symbol; subword mode uses
greedy pair merging over word-internal symbols with an end-of-word marker
appended to word-final symbols, so decoding is a plain string inverse.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

WORD_END = "⟨/w⟩"  # ⟨/w⟩ marker on word-final symbols
UNK_GLYPH = "⁇"  # ⁇ rendered for unk at decode time

# fixed ASCII punctuation set stripped by normalize_text
_PUNCT = ".,;:!?\"'()[]-"
_PUNCT_RE = re.compile("[" + re.escape(_PUNCT) + "]")
_WS_RE = re.compile(r"\s+")


class VocabularyError(ValueError):
    pass


def normalize_text(raw: str) -> str:
    """Lower-case, strip punctuation, and collapse whitespace.

    Apostrophes are part of the punctuation set, so "don't" becomes "dont".
    Idempotent; may return the empty string.
    """
    s = _PUNCT_RE.sub("", raw.lower())
    return _WS_RE.sub(" ", s).strip()


@dataclass
class SubwordModel:
    """Learned merge table plus symbol vocabulary.

    mode is "character" or "bpe". The merge list preserves learning order;
    vocabulary ids are dense, with specials occupying ids 0..3.
    """

    mode: str
    merges: list[tuple[str, str]] = field(default_factory=list)
    vocab: dict[str, int] = field(default_factory=dict)
    _inverse: dict[int, str] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("character", "bpe"):
            raise VocabularyError(f"unknown mode {self.mode!r}")
        if not self._inverse:
            self._inverse = {i: s for s, i in self.vocab.items()}

    @property
    def size(self) -> int:
        return len(self.vocab)

    def id_of(self, symbol: str) -> int:
        return self.vocab.get(symbol, UNK_ID)

    def symbol_of(self, idx: int) -> str:
        try:
            return self._inverse[idx]
        except KeyError:
            raise VocabularyError(f"id {idx} out of range for vocabulary of size {self.size}")

    def content_hash(self) -> str:
        """Stable digest over mode, merges, and vocabulary (checkpoint guard)."""
        h = hashlib.sha256()
        h.update(self.mode.encode())
        for a, b in self.merges:
            h.update(b"\x01" + a.encode() + b"\x02" + b.encode())
        for sym, idx in sorted(self.vocab.items(), key=lambda kv: kv[1]):
            h.update(b"\x03" + sym.encode() + str(idx).encode())
        return h.hexdigest()


@dataclass
class TokenSequence:
    ids: list[int]
    granularity: str


def _base_vocab(symbols: list[str]) -> dict[str, int]:
    vocab = {s: i for i, s in enumerate(SPECIALS)}
    for s in symbols:
        vocab[s] = len(vocab)
    return vocab


def _word_symbols(word: str) -> tuple[str, ...]:
    """A word as its character symbols, the last carrying the end marker."""
    chars = list(word)
    chars[-1] = chars[-1] + WORD_END
    return tuple(chars)


def learn_character_model(corpus: list[str]) -> SubwordModel:
    """Character vocabulary over the corpus, with space as an explicit symbol."""
    chars = sorted({c for line in corpus for c in line})
    if " " not in chars:
        chars = [" "] + chars
    return SubwordModel(mode="character", vocab=_base_vocab(chars))


def learn_bpe(corpus: list[str], target_vocab: int) -> SubwordModel:
    """Greedy highest-frequency pair merging until ``target_vocab`` symbols.

    Merging is word-internal. Stops early when no pair occurs at least
    twice. Ties between equal-count pairs break lexicographically, so the
    result is deterministic for a given corpus.
    """
    if not corpus:
        raise VocabularyError("learn_bpe: empty corpus")
    word_freq = Counter()
    for line in corpus:
        for word in line.split():
            word_freq[word] += 1
    if not word_freq:
        raise VocabularyError("learn_bpe: corpus contains no words")

    words = {w: _word_symbols(w) for w in word_freq}
    base_symbols = sorted({s for syms in words.values() for s in syms})
    floor = len(SPECIALS) + len(base_symbols)
    if target_vocab <= floor:
        raise VocabularyError(
            f"target_vocab {target_vocab} too small: character floor is {floor} "
            f"({len(base_symbols)} symbols + {len(SPECIALS)} specials)")

    vocab = _base_vocab(base_symbols)
    merges: list[tuple[str, str]] = []
    while len(vocab) < target_vocab:
        pair_counts = Counter()
        for w, syms in words.items():
            f = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += f
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        vocab[merged] = len(vocab)
        words = {w: _apply_merge(syms, best, merged) for w, syms in words.items()}
    return SubwordModel(mode="bpe", merges=merges, vocab=vocab)


def _apply_merge(symbols: tuple[str, ...], pair: tuple[str, str], merged: str) -> tuple[str, ...]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def segment_word(word: str, model: SubwordModel) -> list[str]:
    """Apply the learned merges, in learning order, to one word."""
    syms = _word_symbols(word)
    for pair in model.merges:
        if len(syms) == 1:
            break
        syms = _apply_merge(syms, pair, pair[0] + pair[1])
    return list(syms)


def encode(text: str, model: SubwordModel) -> TokenSequence:
    """Tokenize normalized text. bos/eos are NOT added here; models do that.

    Unknown symbols map to unk. Character mode emits one id per character
    including explicit space ids between words.
    """
    if model.mode == "character":
        ids = [model.id_of(c) for c in text]
        return TokenSequence(ids=ids, granularity="character")
    ids = []
    for word in text.split():
        ids.extend(model.id_of(s) for s in segment_word(word, model))
    return TokenSequence(ids=ids, granularity="bpe")


def decode(tokens: TokenSequence, model: SubwordModel) -> str:
    """Inverse of encode for in-vocabulary text; unk renders as ⁇, specials drop."""
    pieces = []
    for idx in tokens.ids:
        if idx in (PAD_ID, BOS_ID, EOS_ID):
            continue
        if idx == UNK_ID:
            pieces.append(UNK_GLYPH + (WORD_END if model.mode == "bpe" else ""))
            continue
        pieces.append(model.symbol_of(idx))
    if model.mode == "character":
        return "".join(pieces)
    return "".join(pieces).replace(WORD_END, " ").strip()


# ---------------------------------------------------------------------------
# persistence: line-oriented text format
#
#   line 1: "subword-model v1"
#   line 2: "mode<TAB>{character|bpe}"
#   line 3: "vocab_size<TAB>N"
#   line 4: "merges<TAB>M"
#   M lines: "left<TAB>right"
#   N lines: "symbol<TAB>id"
#
# Symbols may contain spaces (the character-mode space entry), so fields
# split on the LAST tab of each vocabulary line.

_HEADER = "subword-model v1"


def save_subword_model(model: SubwordModel, path: str | Path) -> None:
    lines = [_HEADER, f"mode\t{model.mode}", f"vocab_size\t{model.size}",
             f"merges\t{len(model.merges)}"]
    lines += [f"{a}\t{b}" for a, b in model.merges]
    lines += [f"{sym}\t{idx}" for sym, idx in sorted(model.vocab.items(), key=lambda kv: kv[1])]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_subword_model(path: str | Path) -> SubwordModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _HEADER:
        raise VocabularyError(f"{path}: not a subword model file")
    mode = lines[1].split("\t", 1)[1]
    vocab_size = int(lines[2].split("\t", 1)[1])
    n_merges = int(lines[3].split("\t", 1)[1])
    merge_lines = lines[4:4 + n_merges]
    vocab_lines = lines[4 + n_merges:4 + n_merges + vocab_size]
    if len(vocab_lines) != vocab_size:
        raise VocabularyError(f"{path}: truncated vocabulary section")
    merges = []
    for ln in merge_lines:
        a, b = ln.split("\t")
        merges.append((a, b))
    vocab = {}
    for ln in vocab_lines:
        sym, idx = ln.rsplit("\t", 1)
        vocab[sym] = int(idx)
    return SubwordModel(mode=mode, merges=merges, vocab=vocab)

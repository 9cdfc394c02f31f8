"""Transformer speech-recognition and translation models, joinable end to end.

Three model kinds share one parameter/layer toolkit:

  * ``ASRModel``   — convolutional feature front end (two stride-2 layers,
    4x temporal subsampling), transformer encoder over acoustic frames,
    transformer decoder over source-language tokens. The decoder-top
    representation right before the output projection is the *bridge*:
    a (length+1, d_model) state sequence exposed for downstream use.
  * ``MTModel``    — transformer encoder/decoder. The encoder input comes
    from exactly one of two modes: token mode (embeds source-token ids)
    or hidden mode (an affine adapter over external bridge vectors).
  * ``JointModel`` — an ASRModel feeding a hidden-mode MTModel through the
    bridge, trained with the combined objective

        L = L_mt + lam * L_asr

    in a single differentiable graph: translation gradients reach speech
    parameters, while the auxiliary speech loss never touches the
    translation decoder.

All stacks are pre-layer-norm with sinusoidal positional encodings and
label-smoothed cross-entropy. Dropout is applied to embedding outputs and
sublayer outputs during training only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .text import BOS_ID, EOS_ID, PAD_ID

GRANULARITIES = ("char", "bpe", "word")


class ModelConfigError(ValueError):
    pass


class StreamError(ValueError):
    """A required token/feature stream is empty or malformed."""


@dataclass
class TransformerConfig:
    """Sizes and knobs for one encoder/decoder stack.

    ``input_dim`` > 0 selects an acoustic front end (speech model);
    ``source_vocab_size`` > 0 selects token-mode translation input;
    ``bridge_dim`` > 0 selects hidden-mode translation input.
    ``vocab_size`` is always the decoder-side (output) vocabulary.
    """

    encoder_layers: int = 6
    decoder_layers: int = 6
    d_model: int = 512
    d_ff: int = 2048
    heads: int = 8
    dropout: float = 0.1
    label_smoothing: float = 0.1
    source_granularity: str = "bpe"
    target_granularity: str = "bpe"
    vocab_size: int = 0
    input_dim: int = 0
    source_vocab_size: int = 0
    bridge_dim: int = 0
    max_len: int = 2048

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ModelConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        for g in (self.source_granularity, self.target_granularity):
            if g not in GRANULARITIES:
                raise ModelConfigError(f"unknown granularity {g!r}")
        if self.vocab_size <= 0:
            raise ModelConfigError("vocab_size must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        return cls(**d)


@dataclass
class LossReport:
    l_total: float
    l_mt: float
    l_asr: float
    mt_tokens: int
    asr_tokens: int


# ---------------------------------------------------------------------------
# parameters and shared layers


class ParamSet:
    """Registry of named trainable tensors for one model."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ModelConfigError(f"duplicate parameter name {name}")
        t = T.parameter(data, dtype=T.DEFAULT_DTYPE)
        self.tensors[name] = t
        return t

    def matrix(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self.rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def head_matrix(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        # small-scale classifier head: keeps an untrained model's output
        # distribution near uniform (per-token loss ~ ln V) at any d_model
        return self._register(name, self.rng.normal(0.0, 1.0 / fan_in, size=(fan_in, fan_out)))

    def embedding(self, name: str, vocab: int, d: int) -> Tensor:
        return self._register(name, self.rng.normal(0.0, d ** -0.5, size=(vocab, d)))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape))


class Linear:
    def __init__(self, ps: ParamSet, name: str, d_in: int, d_out: int, head: bool = False):
        maker = ps.head_matrix if head else ps.matrix
        self.w = maker(name + ".w", d_in, d_out)
        self.b = ps.zeros(name + ".b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, ps: ParamSet, name: str, d: int):
        self.gain = ps.ones(name + ".gain", (d,))
        self.bias = ps.zeros(name + ".bias", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention:
    def __init__(self, ps: ParamSet, name: str, d_model: int, heads: int):
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = Linear(ps, name + ".q", d_model, d_model)
        self.wk = Linear(ps, name + ".k", d_model, d_model)
        self.wv = Linear(ps, name + ".v", d_model, d_model)
        self.wo = Linear(ps, name + ".out", d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return T.transpose(T.reshape(x, (b, t, self.heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        b, tq, d = query.shape
        q = self._split(self.wq(query))
        k = self._split(self.wk(memory))
        v = self._split(self.wv(memory))
        ctx = T.scaled_dot_attention(q, k, v, mask)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
        return self.wo(merged)


class FeedForward:
    def __init__(self, ps: ParamSet, name: str, d_model: int, d_ff: int):
        self.inner = Linear(ps, name + ".inner", d_model, d_ff)
        self.outer = Linear(ps, name + ".outer", d_ff, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


class _Regularizer:
    """Bundles the train/eval switch with the dropout source."""

    def __init__(self, p: float, train: bool, rng: np.random.Generator | None):
        if train and p > 0.0 and rng is None:
            raise ModelConfigError("training with dropout requires an rng")
        self.p = p
        self.train = train
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if self.train and self.p > 0.0:
            return T.dropout(x, self.p, self.rng)
        return x


class EncoderLayer:
    def __init__(self, ps: ParamSet, name: str, cfg: TransformerConfig):
        self.ln_attn = LayerNorm(ps, name + ".ln_attn", cfg.d_model)
        self.attn = MultiHeadAttention(ps, name + ".attn", cfg.d_model, cfg.heads)
        self.ln_ffn = LayerNorm(ps, name + ".ln_ffn", cfg.d_model)
        self.ffn = FeedForward(ps, name + ".ffn", cfg.d_model, cfg.d_ff)

    def __call__(self, x: Tensor, mask: np.ndarray, reg: _Regularizer) -> Tensor:
        h = self.ln_attn(x)
        x = T.add(x, reg(self.attn(h, h, mask)))
        x = T.add(x, reg(self.ffn(self.ln_ffn(x))))
        return x


class DecoderLayer:
    def __init__(self, ps: ParamSet, name: str, cfg: TransformerConfig):
        self.ln_self = LayerNorm(ps, name + ".ln_self", cfg.d_model)
        self.self_attn = MultiHeadAttention(ps, name + ".self_attn", cfg.d_model, cfg.heads)
        self.ln_cross = LayerNorm(ps, name + ".ln_cross", cfg.d_model)
        self.cross_attn = MultiHeadAttention(ps, name + ".cross_attn", cfg.d_model, cfg.heads)
        self.ln_ffn = LayerNorm(ps, name + ".ln_ffn", cfg.d_model)
        self.ffn = FeedForward(ps, name + ".ffn", cfg.d_model, cfg.d_ff)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray,
                 cross_mask: np.ndarray, reg: _Regularizer) -> Tensor:
        h = self.ln_self(x)
        x = T.add(x, reg(self.self_attn(h, h, self_mask)))
        x = T.add(x, reg(self.cross_attn(self.ln_cross(x), memory, cross_mask)))
        x = T.add(x, reg(self.ffn(self.ln_ffn(x))))
        return x


# ---------------------------------------------------------------------------
# masks, positions, teacher forcing


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(T.DEFAULT_DTYPE)


def padding_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """(B, 1, 1, T) boolean; True where the key position holds real content."""
    valid = np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]
    return valid[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    """(1, 1, T, T) boolean; True at or below the diagonal."""
    return np.tril(np.ones((length, length), dtype=bool))[None, None]


def self_attention_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """Causal + key-padding mask for decoder self-attention: (B, 1, T, T)."""
    return causal_mask(max_len) & padding_mask(lengths, max_len)


def teacher_forced_streams(tokens: np.ndarray, lengths: np.ndarray):
    """Build decoder inputs/targets for a padded (B, L) token batch.

    Returns (inputs, targets, target_mask, input_lengths), all (B, L+1):
    inputs are bos-prefixed, targets eos-suffixed, the float mask is 1 on
    real target positions (each utterance contributes length+1 of them).
    """
    tokens = np.asarray(tokens)
    lengths = np.asarray(lengths)
    if tokens.ndim != 2:
        raise StreamError(f"token batch must be 2-D, got {tokens.shape}")
    if np.any(lengths <= 0):
        raise StreamError("empty token sequence in batch")
    b, l = tokens.shape
    inputs = np.full((b, l + 1), PAD_ID, dtype=np.int64)
    targets = np.full((b, l + 1), PAD_ID, dtype=np.int64)
    inputs[:, 0] = BOS_ID
    inputs[:, 1:] = tokens
    targets[:, :l] = tokens
    targets[np.arange(b), lengths] = EOS_ID
    mask = (np.arange(l + 1)[None, :] <= lengths[:, None]).astype(T.DEFAULT_DTYPE)
    inputs = np.where(mask.astype(bool), inputs, PAD_ID)
    targets = np.where(mask.astype(bool), targets, PAD_ID)
    return inputs, targets, mask, lengths + 1


def label_smoothed_cross_entropy(logits: Tensor, targets: np.ndarray,
                                 target_mask: np.ndarray, smoothing: float) -> Tensor:
    """Mean per-token smoothed cross-entropy over unmasked positions.

    The smoothed target distribution is (1-eps)*onehot + eps/V, so at
    smoothing 0 this is exactly the negative log-likelihood.
    """
    vocab = logits.shape[-1]
    logp = T.log_softmax(logits, axis=-1)
    nll = T.neg(T.take_last(logp, targets))
    if smoothing > 0.0:
        uniform = T.neg(T.scale(T.sum_axis(logp, axis=-1), 1.0 / vocab))
        per_pos = T.add(T.scale(nll, 1.0 - smoothing), T.scale(uniform, smoothing))
    else:
        per_pos = nll
    mask = np.asarray(target_mask, dtype=per_pos.dtype)
    num_tokens = float(mask.sum())
    if num_tokens == 0:
        raise StreamError("no unmasked target positions")
    masked = T.mul(per_pos, T.constant(mask))
    return T.scale(T.sum_all(masked), 1.0 / num_tokens)


def _add_positions(x: Tensor, table: np.ndarray) -> Tensor:
    b, t, d = x.shape
    if t > table.shape[0]:
        raise StreamError(f"sequence length {t} exceeds position table {table.shape[0]}")
    tiled = np.broadcast_to(table[:t], (b, t, d)).copy()
    return T.add(x, T.constant(tiled))


# ---------------------------------------------------------------------------
# models


class _DecoderStack:
    """Embedding + decoder layers + final norm; states are pre-projection."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: TransformerConfig):
        self.cfg = cfg
        self.embed = ps.embedding(prefix + ".embed", cfg.vocab_size, cfg.d_model)
        self.layers = [DecoderLayer(ps, f"{prefix}.layer{i}", cfg)
                       for i in range(cfg.decoder_layers)]
        self.final_ln = LayerNorm(ps, prefix + ".final_ln", cfg.d_model)
        self.positions = sinusoidal_positions(cfg.max_len, cfg.d_model)

    def states(self, inputs: np.ndarray, input_lengths: np.ndarray, memory: Tensor,
               memory_lengths: np.ndarray, reg: _Regularizer) -> Tensor:
        b, l = inputs.shape
        x = T.scale(T.gather_rows(self.embed, inputs), np.sqrt(self.cfg.d_model))
        x = reg(_add_positions(x, self.positions))
        self_mask = self_attention_mask(input_lengths, l)
        cross_mask = padding_mask(memory_lengths, memory.shape[1])
        for layer in self.layers:
            x = layer(x, memory, self_mask, cross_mask, reg)
        return self.final_ln(x)


class _EncoderStack:
    def __init__(self, ps: ParamSet, prefix: str, cfg: TransformerConfig):
        self.layers = [EncoderLayer(ps, f"{prefix}.layer{i}", cfg)
                       for i in range(cfg.encoder_layers)]
        self.final_ln = LayerNorm(ps, prefix + ".final_ln", cfg.d_model)

    def __call__(self, x: Tensor, lengths: np.ndarray, reg: _Regularizer) -> Tensor:
        mask = padding_mask(lengths, x.shape[1])
        for layer in self.layers:
            x = layer(x, mask, reg)
        return self.final_ln(x)


class ASRModel:
    """Speech encoder-decoder over acoustic features and source tokens."""

    kind = "asr"

    def __init__(self, config: TransformerConfig, seed: int = 0):
        if config.input_dim <= 0:
            raise ModelConfigError("speech model requires input_dim > 0")
        self.config = config
        self.vocab_hashes: dict[str, str] = {}
        ps = ParamSet(seed)
        d = config.d_model
        self.conv1 = Linear(ps, "front.conv1", 3 * config.input_dim, d)
        self.conv2 = Linear(ps, "front.conv2", 3 * d, d)
        self.encoder = _EncoderStack(ps, "encoder", config)
        self.decoder = _DecoderStack(ps, "decoder", config)
        self.out_proj = Linear(ps, "out_proj", d, config.vocab_size, head=True)
        self.positions = sinusoidal_positions(config.max_len, d)
        self.params = ps.tensors

    # -- front end ---------------------------------------------------------

    @staticmethod
    def subsampled_length(n):
        """Frame count after the two stride-2, width-3 front-end layers."""
        one = (np.asarray(n) - 3) // 2 + 1
        return (one - 3) // 2 + 1

    def _front(self, features: Tensor, reg: _Regularizer) -> Tensor:
        def strided(x, lin):
            t = x.shape[1]
            if t < 3:
                raise StreamError(f"feature sequence of {t} frames too short for the front end")
            t_out = (t - 3) // 2 + 1
            idx = (2 * np.arange(t_out))[:, None] + np.arange(3)[None, :]
            windows = T.gather_time(x, idx)
            b = x.shape[0]
            flat = T.reshape(windows, (b, t_out, 3 * x.shape[2]))
            return T.relu(lin(flat))

        x = strided(features, self.conv1)
        x = strided(x, self.conv2)
        return reg(_add_positions(x, self.positions))

    def encode(self, features, feature_lengths, reg: _Regularizer):
        feats = features if isinstance(features, Tensor) else T.constant(
            np.asarray(features, dtype=T.DEFAULT_DTYPE))
        if feats.ndim != 3:
            raise StreamError(f"feature batch must be (B, T, D), got {feats.shape}")
        enc_lengths = self.subsampled_length(np.asarray(feature_lengths))
        if np.any(enc_lengths <= 0):
            raise StreamError("an utterance subsamples to zero frames")
        x = self._front(feats, reg)
        return self.encoder(x, enc_lengths, reg), enc_lengths

    # -- training ----------------------------------------------------------

    def forward_loss(self, features, feature_lengths, tokens, token_lengths,
                     train: bool = False, rng: np.random.Generator | None = None):
        """Teacher-forced smoothed cross-entropy.

        Returns (loss, bridge_states, bridge_lengths): the states span every
        decoder position — one per transcript token plus the eos step.
        """
        reg = _Regularizer(self.config.dropout, train, rng)
        inputs, targets, mask, input_lengths = teacher_forced_streams(tokens, token_lengths)
        memory, enc_lengths = self.encode(features, feature_lengths, reg)
        states = self.decoder.states(inputs, input_lengths, memory, enc_lengths, reg)
        logits = self.out_proj(states)
        loss = label_smoothed_cross_entropy(logits, targets, mask, self.config.label_smoothing)
        return loss, states, input_lengths

    # -- inference ---------------------------------------------------------

    def encode_inference(self, features, feature_lengths):
        reg = _Regularizer(0.0, False, None)
        memory, enc_lengths = self.encode(features, feature_lengths, reg)
        return memory.data, enc_lengths

    def next_token_probs(self, memory: np.ndarray, memory_lengths, prefixes: np.ndarray) -> np.ndarray:
        """(K, V) next-token distribution after each bos-prefixed prefix row."""
        reg = _Regularizer(0.0, False, None)
        prefixes = np.asarray(prefixes)
        lengths = np.full(prefixes.shape[0], prefixes.shape[1])
        states = self.decoder.states(prefixes, lengths, T.constant(memory), memory_lengths, reg)
        logits = self.out_proj(states)
        last = logits.data[:, -1, :]
        return _stable_softmax(last)

    def bridge_states(self, features, feature_lengths, hypothesis: np.ndarray) -> np.ndarray:
        """Teacher-force one hypothesis and return its (len+1, d_model) states.

        The extra final state is the step at which the model would emit the
        next (end-of-sequence) token after the full hypothesis.
        """
        hypothesis = np.asarray(hypothesis, dtype=np.int64)
        if hypothesis.ndim != 1 or hypothesis.size == 0:
            raise StreamError("hypothesis must be a nonempty 1-D token sequence")
        if np.any(hypothesis < 0) or np.any(hypothesis >= self.config.vocab_size):
            raise StreamError("hypothesis token id outside the model vocabulary")
        reg = _Regularizer(0.0, False, None)
        memory, enc_lengths = self.encode(features, feature_lengths, reg)
        inputs = np.concatenate([[BOS_ID], hypothesis])[None, :]
        lengths = np.array([inputs.shape[1]])
        states = self.decoder.states(inputs, lengths, memory, enc_lengths, reg)
        return states.data[0]


class MTModel:
    """Translation encoder-decoder with token-mode or hidden-mode input."""

    kind = "mt"

    def __init__(self, config: TransformerConfig, seed: int = 0):
        token_mode = config.source_vocab_size > 0
        hidden_mode = config.bridge_dim > 0
        if token_mode == hidden_mode:
            raise ModelConfigError(
                "exactly one of source_vocab_size and bridge_dim must be set")
        self.config = config
        self.mode = "token" if token_mode else "hidden"
        self.vocab_hashes: dict[str, str] = {}
        ps = ParamSet(seed)
        d = config.d_model
        if token_mode:
            self.src_embed = ps.embedding("src_embed", config.source_vocab_size, d)
        else:
            self.adapter = Linear(ps, "bridge_adapter", config.bridge_dim, d)
        self.encoder = _EncoderStack(ps, "encoder", config)
        self.decoder = _DecoderStack(ps, "decoder", config)
        self.out_proj = Linear(ps, "out_proj", d, config.vocab_size, head=True)
        self.positions = sinusoidal_positions(config.max_len, d)
        self.params = ps.tensors

    def _encode_input(self, source, reg: _Regularizer) -> Tensor:
        if self.mode == "token":
            src = np.asarray(source)
            if not (isinstance(source, np.ndarray) and src.ndim == 2
                    and np.issubdtype(src.dtype, np.integer)):
                raise StreamError("token-mode model requires a 2-D integer source batch")
            if np.any(src < 0) or np.any(src >= self.config.source_vocab_size):
                raise StreamError("source token id outside the model vocabulary")
            x = T.scale(T.gather_rows(self.src_embed, src), np.sqrt(self.config.d_model))
        else:
            if isinstance(source, Tensor):
                vec = source
            elif isinstance(source, np.ndarray) and source.ndim == 3:
                vec = T.constant(np.asarray(source, dtype=T.DEFAULT_DTYPE))
            else:
                raise StreamError("hidden-mode model requires a (B, L, bridge_dim) vector batch")
            if vec.shape[-1] != self.config.bridge_dim:
                raise StreamError(
                    f"bridge width {vec.shape[-1]} != configured {self.config.bridge_dim}")
            x = self.adapter(vec)
        return reg(_add_positions(x, self.positions))

    def encode(self, source, source_lengths, reg: _Regularizer):
        x = self._encode_input(source, reg)
        lengths = np.asarray(source_lengths)
        if np.any(lengths <= 0):
            raise StreamError("empty source sequence in batch")
        return self.encoder(x, lengths, reg), lengths

    def forward_loss(self, source, source_lengths, targets, target_lengths,
                     train: bool = False, rng: np.random.Generator | None = None):
        reg = _Regularizer(self.config.dropout, train, rng)
        inputs, shifted_targets, mask, input_lengths = teacher_forced_streams(
            targets, target_lengths)
        memory, enc_lengths = self.encode(source, source_lengths, reg)
        states = self.decoder.states(inputs, input_lengths, memory, enc_lengths, reg)
        logits = self.out_proj(states)
        loss = label_smoothed_cross_entropy(
            logits, shifted_targets, mask, self.config.label_smoothing)
        return loss, int(mask.sum())

    def encode_inference(self, source, source_lengths):
        reg = _Regularizer(0.0, False, None)
        memory, lengths = self.encode(source, source_lengths, reg)
        return memory.data, lengths

    def next_token_probs(self, memory: np.ndarray, memory_lengths, prefixes: np.ndarray) -> np.ndarray:
        reg = _Regularizer(0.0, False, None)
        prefixes = np.asarray(prefixes)
        lengths = np.full(prefixes.shape[0], prefixes.shape[1])
        states = self.decoder.states(prefixes, lengths, T.constant(memory), memory_lengths, reg)
        logits = self.out_proj(states)
        return _stable_softmax(logits.data[:, -1, :])


class JointModel:
    """ASR and hidden-mode MT coupled through the bridge states."""

    kind = "joint"

    def __init__(self, asr: ASRModel, mt: MTModel, lam: float = 0.5):
        if mt.mode != "hidden":
            raise ModelConfigError("joint translation side must be a hidden-mode model")
        if mt.config.bridge_dim != asr.config.d_model:
            raise ModelConfigError(
                f"bridge width mismatch: translation side expects {mt.config.bridge_dim}, "
                f"speech side produces {asr.config.d_model}")
        if lam < 0:
            raise ModelConfigError("auxiliary-loss weight must be nonnegative")
        self.asr = asr
        self.mt = mt
        self.lam = lam
        self.params = {f"asr.{k}": v for k, v in asr.params.items()}
        self.params.update({f"mt.{k}": v for k, v in mt.params.items()})
        self.vocab_hashes: dict[str, str] = {}

    def forward_loss(self, features, feature_lengths, transcripts, transcript_lengths,
                     targets, target_lengths, train: bool = False,
                     rng: np.random.Generator | None = None):
        """Combined objective; returns (loss tensor, LossReport)."""
        for name, arr in (("features", features), ("transcripts", transcripts),
                          ("targets", targets)):
            if np.asarray(arr).size == 0:
                raise StreamError(f"{name} stream is empty")
        asr_loss, states, bridge_lengths = self.asr.forward_loss(
            features, feature_lengths, transcripts, transcript_lengths, train, rng)
        mt_loss, mt_tokens = self.mt.forward_loss(
            states, bridge_lengths, targets, target_lengths, train, rng)
        total = T.add(mt_loss, T.scale(asr_loss, self.lam))
        report = LossReport(
            l_total=float(total.data), l_mt=float(mt_loss.data), l_asr=float(asr_loss.data),
            mt_tokens=mt_tokens, asr_tokens=int(np.asarray(transcript_lengths).sum()
                                                + len(np.asarray(transcript_lengths))))
        return total, report

    def forced_continuation(self, features, feature_lengths, hypothesis) -> np.ndarray:
        """Bridge states for an externally produced recognition hypothesis.

        Teacher-forces the speech decoder with the hypothesis and takes one
        extra generation step, so the result has hypothesis length + 1 rows.
        """
        return self.asr.bridge_states(features, feature_lengths, np.asarray(hypothesis))


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def parameter_count(model) -> int:
    return sum(t.size for t in model.params.values())

"""Transformer encoder with MLM and sequence-classification heads.

The encoder is a standard stack: token + learned position embeddings,
then per layer {multi-head self-attention with a padding mask, add&norm,
gelu feed-forward, add&norm}, and a final layer norm.  Classification
pools the first (CLS) position; the MLM head ties to the token embedding
table by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import TASKS, LabelSchema, DEFAULT_SCHEMA
from .tensor import (
    ShapeError,
    Tensor,
    add,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    mul,
    mul_scalar,
    reshape,
    select_position,
    softmax,
    transpose,
    tsum,
)


class ConfigError(ValueError):
    """Invalid encoder configuration."""


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    hidden: int
    heads: int
    ff: int
    max_len: int
    vocab_size: int
    dropout: float = 0.1
    layer_norm_eps: float = 1e-5
    tie_mlm: bool = True
    pooling: str = "cls"  # classifier pooling: "cls" or "mean"

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(
                f"hidden={self.hidden} is not divisible by heads={self.heads}"
            )
        if min(self.layers, self.hidden, self.heads, self.ff, self.max_len, self.vocab_size) <= 0:
            raise ConfigError("all encoder dimensions must be positive")
        if self.pooling not in ("cls", "mean"):
            raise ConfigError(f"pooling must be 'cls' or 'mean', got {self.pooling!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "hidden": self.hidden,
            "heads": self.heads,
            "ff": self.ff,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
            "dropout": self.dropout,
            "layer_norm_eps": self.layer_norm_eps,
            "tie_mlm": self.tie_mlm,
            "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


# Named size presets.  The large ones are configuration-valid but meant for
# reference; experiments here run the toy sizes.
PRESETS = {
    "toy": dict(layers=2, hidden=64, heads=4, ff=128),
    "tiny": dict(layers=1, hidden=32, heads=2, ff=128),
    "distilbert": dict(layers=6, hidden=768, heads=12, ff=3072),
    "bert-base": dict(layers=12, hidden=768, heads=12, ff=3072),
    "bert-large": dict(layers=24, hidden=1024, heads=16, ff=4096),
    "roberta-base": dict(layers=12, hidden=768, heads=12, ff=3072),
    "roberta-large": dict(layers=24, hidden=1024, heads=16, ff=4096),
}


def config_from_preset(
    name: str, max_len: int, vocab_size: int, dropout: float = 0.1
) -> EncoderConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}")
    return EncoderConfig(
        max_len=max_len, vocab_size=vocab_size, dropout=dropout, **PRESETS[name]
    )


def param_shapes(config: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) order for the encoder parameter set."""
    h, f = config.hidden, config.ff
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (config.vocab_size, h)),
        ("pos_emb", (config.max_len, h)),
    ]
    for i in range(config.layers):
        shapes += [
            (f"layer{i}.attn.wq", (h, h)),
            (f"layer{i}.attn.wk", (h, h)),
            (f"layer{i}.attn.wv", (h, h)),
            (f"layer{i}.attn.wo", (h, h)),
            (f"layer{i}.ln1.gain", (h,)),
            (f"layer{i}.ln1.bias", (h,)),
            (f"layer{i}.ff.w1", (h, f)),
            (f"layer{i}.ff.w2", (f, h)),
            (f"layer{i}.ln2.gain", (h,)),
            (f"layer{i}.ln2.bias", (h,)),
        ]
    shapes += [("final_ln.gain", (h,)), ("final_ln.bias", (h,))]
    if not config.tie_mlm:
        # Untied output embeddings, same (V, H) orientation as the input table.
        shapes.append(("mlm_out", (config.vocab_size, h)))
    return shapes


def parameter_count(config: EncoderConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until everything lies within two sigma."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(config: EncoderConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic initialization: truncated-normal weights (sigma 0.02),
    zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1A17)))
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config):
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = _trunc_normal(rng, shape)
        params[name] = Tensor(data, track_grad=True, name=name)
    return params


@dataclass
class TaskHead:
    kind: str  # "mlm" or "classifier"
    task: str | None = None
    classes: tuple[str, ...] | None = None
    weight: Tensor | None = None  # None for a tied MLM head
    bias: Tensor | None = None
    tied: bool = False

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        if self.weight is not None:
            out["head.weight"] = self.weight
        if self.bias is not None:
            out["head.bias"] = self.bias
        return out


def make_mlm_head(config: EncoderConfig, seed: int = 0) -> TaskHead:
    """MLM head descriptor; the projection weights live in the parameter set
    (the token embedding table when tied, the ``mlm_out`` block otherwise) so
    they survive the pretrain -> adapt hand-off."""
    return TaskHead(kind="mlm", tied=config.tie_mlm)


def make_classifier_head(
    config: EncoderConfig, task: str, seed: int, schema: LabelSchema = DEFAULT_SCHEMA
) -> TaskHead:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    classes = schema.classes_for(task)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A55)))
    weight = Tensor(
        _trunc_normal(rng, (config.hidden, len(classes))),
        track_grad=True,
        name="head.weight",
    )
    bias = Tensor(np.zeros(len(classes)), track_grad=True, name="head.bias")
    return TaskHead(kind="classifier", task=task, classes=classes, weight=weight, bias=bias)


def resolve_mlm_weight(params: dict[str, Tensor], head: TaskHead) -> Tensor:
    """The (V, H) matrix the MLM head projects with; the embedding table when tied."""
    if head.kind != "mlm":
        raise ConfigError(f"expected an MLM head, got kind={head.kind!r}")
    return params["tok_emb"] if head.tied else params["mlm_out"]


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _check_batch(config: EncoderConfig, token_ids: np.ndarray, attention_mask: np.ndarray):
    token_ids = np.asarray(token_ids, dtype=np.int64)
    attention_mask = np.asarray(attention_mask, dtype=bool)
    if token_ids.ndim != 2 or attention_mask.shape != token_ids.shape:
        raise ShapeError(
            f"batch shapes disagree: ids {token_ids.shape}, mask {attention_mask.shape}"
        )
    if token_ids.shape[1] > config.max_len:
        raise ShapeError(
            f"sequence length {token_ids.shape[1]} exceeds max_len {config.max_len}"
        )
    if token_ids.max(initial=0) >= config.vocab_size:
        raise ShapeError(
            f"token id {int(token_ids.max())} out of range for vocab {config.vocab_size}"
        )
    return token_ids, attention_mask


def forward_encoder(
    params: dict[str, Tensor],
    config: EncoderConfig,
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
    rng: np.random.Generator | None = None,
    training: bool = False,
    attn_out: list | None = None,
) -> Tensor:
    """Hidden states (B, T, H) for a padded batch.

    Padded key positions receive an additive -1e30 attention bias, which
    underflows to exactly zero weight, so padding content cannot leak into
    real positions.
    """
    token_ids, attention_mask = _check_batch(config, token_ids, attention_mask)
    if training and rng is None:
        raise ValueError("training forward passes need an rng for dropout")
    batch, seq = token_ids.shape
    h, n_heads, head_dim = config.hidden, config.heads, config.head_dim
    scale = 1.0 / math.sqrt(head_dim)

    positions = np.broadcast_to(np.arange(seq, dtype=np.int64), (batch, seq))
    x = add(
        embedding_lookup(params["tok_emb"], token_ids),
        embedding_lookup(params["pos_emb"], positions),
    )
    x = dropout(x, config.dropout, rng, training)

    # (B, 1, 1, T) additive key mask; -1e30 underflows to zero weight.
    mask_bias = np.where(attention_mask, 0.0, -1e30)[:, None, None, :]

    for i in range(config.layers):
        prefix = f"layer{i}"
        x2 = reshape(x, (batch * seq, h))
        heads4 = []
        for w in ("wq", "wk", "wv"):
            proj = matmul(x2, params[f"{prefix}.attn.{w}"])
            heads4.append(
                transpose(reshape(proj, (batch, seq, n_heads, head_dim)), (0, 2, 1, 3))
            )
        q4, k4, v4 = heads4
        scores = mul_scalar(matmul(q4, transpose(k4, (0, 1, 3, 2))), scale)
        probs = softmax(scores, additive_bias=mask_bias)
        if attn_out is not None:
            attn_out.append(probs.data.copy())
        ctx = transpose(matmul(probs, v4), (0, 2, 1, 3))
        attn = matmul(reshape(ctx, (batch * seq, h)), params[f"{prefix}.attn.wo"])
        attn = dropout(reshape(attn, (batch, seq, h)), config.dropout, rng, training)
        x = layer_norm(
            add(x, attn),
            params[f"{prefix}.ln1.gain"],
            params[f"{prefix}.ln1.bias"],
            config.layer_norm_eps,
        )

        inner = gelu(matmul(reshape(x, (batch * seq, h)), params[f"{prefix}.ff.w1"]))
        ff = reshape(matmul(inner, params[f"{prefix}.ff.w2"]), (batch, seq, h))
        ff = dropout(ff, config.dropout, rng, training)
        x = layer_norm(
            add(x, ff),
            params[f"{prefix}.ln2.gain"],
            params[f"{prefix}.ln2.bias"],
            config.layer_norm_eps,
        )

    return layer_norm(
        x, params["final_ln.gain"], params["final_ln.bias"], config.layer_norm_eps
    )


def forward_mlm(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Per-position vocabulary logits (B, T, V)."""
    if head.kind != "mlm":
        raise ConfigError(f"forward_mlm needs an MLM head, got {head.kind!r}")
    hidden = forward_encoder(params, config, token_ids, attention_mask, rng, training)
    batch, seq, h = hidden.shape
    weight = resolve_mlm_weight(params, head)  # (V, H)
    flat = matmul(reshape(hidden, (batch * seq, h)), transpose(weight, (1, 0)))
    return reshape(flat, (batch, seq, config.vocab_size))


def forward_classify(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Class logits (B, C) from the pooled hidden state.

    Pooling follows ``config.pooling``: the CLS-position hidden state
    (default) or the mean over non-pad positions.
    """
    if head.kind != "classifier":
        raise ConfigError(f"forward_classify needs a classifier head, got {head.kind!r}")
    hidden = forward_encoder(params, config, token_ids, attention_mask, rng, training)
    if config.pooling == "cls":
        pooled = select_position(hidden, 0)
    else:
        mask = np.asarray(attention_mask, dtype=np.float64)
        weights = mask / mask.sum(axis=1, keepdims=True)
        pooled = tsum(mul(hidden, Tensor(weights[:, :, None])), axis=1)
    return add(matmul(pooled, head.weight), head.bias)


def extract_sentence_embedding(
    params: dict[str, Tensor],
    config: EncoderConfig,
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
) -> np.ndarray:
    """Mean of the non-pad final hidden states, as a plain array.

    Used as a frozen feature extractor: no tape is involved, so encoder
    parameters never receive gradients through these features.
    """
    hidden = forward_encoder(params, config, token_ids, attention_mask, training=False)
    mask = np.asarray(attention_mask, dtype=np.float64)
    counts = mask.sum(axis=1, keepdims=True)
    return (hidden.data * mask[:, :, None]).sum(axis=1) / counts

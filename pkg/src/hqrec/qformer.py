"""Query-attention blocks: a fixed set of learnable queries cross-attends to
a variable-length input set and emits a fixed K x d token block.

Layer recipe (pre-norm residuals): query self-attention, cross-attention
with keys/values projected from the raw inputs, position-wise FFN, then a
final layer norm. Inputs are an unordered set; the forward pass gathers
the unmasked rows in a canonical (lexicographic) order, which makes set
invariance hold bit-exactly rather than only up to float reassociation.

Also holds the alternative aggregators used by the fusion ablations and
the reader that condenses user tokens into a single vector.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError


@dataclass
class QFormerConfig:
    d: int
    n_queries: int = 4
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4

    def __post_init__(self):
        if self.n_queries < 1:
            raise ConfigError(f"n_queries must be >= 1, got {self.n_queries}")
        if self.d % self.n_heads != 0:
            raise ConfigError(
                f"model width {self.d} not divisible by n_heads {self.n_heads}"
            )


# ---------------------------------------------------------------------------
# Parameter construction
# ---------------------------------------------------------------------------

def glorot(rng, fan_in, fan_out, dtype):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype)


def add_linear(params, name, fan_in, fan_out, rng, dtype):
    params[f"{name}.w"] = T.Tensor(glorot(rng, fan_in, fan_out, dtype), requires_grad=True)
    params[f"{name}.b"] = T.Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)


def add_layer_norm(params, name, d, dtype):
    params[f"{name}.g"] = T.Tensor(np.ones(d, dtype=dtype), requires_grad=True)
    params[f"{name}.b"] = T.Tensor(np.zeros(d, dtype=dtype), requires_grad=True)


def _add_attention(params, name, d, rng, dtype):
    for part in ("wq", "wk", "wv", "wo"):
        add_linear(params, f"{name}.{part}", d, d, rng, dtype)


def init_qformer_params(params, prefix, cfg, rng, dtype):
    d = cfg.d
    params[f"{prefix}.queries"] = T.Tensor(
        rng.normal(0.0, 0.02, size=(cfg.n_queries, d)).astype(dtype),
        requires_grad=True,
    )
    for i in range(cfg.n_layers):
        base = f"{prefix}.l{i}"
        add_layer_norm(params, f"{base}.ln_self", d, dtype)
        _add_attention(params, f"{base}.self", d, rng, dtype)
        add_layer_norm(params, f"{base}.ln_cross", d, dtype)
        _add_attention(params, f"{base}.cross", d, rng, dtype)
        add_layer_norm(params, f"{base}.ln_ffn", d, dtype)
        add_linear(params, f"{base}.ffn.fc1", d, cfg.ffn_mult * d, rng, dtype)
        add_linear(params, f"{base}.ffn.fc2", cfg.ffn_mult * d, d, rng, dtype)
    add_layer_norm(params, f"{prefix}.ln_out", d, dtype)


def qformer_param_count(cfg):
    """Closed-form trainable parameter count for one q-former stack."""
    d, f = cfg.d, cfg.ffn_mult * cfg.d
    per_attn = 4 * (d * d + d)
    per_layer = 2 * per_attn + (d * f + f) + (f * d + d) + 3 * 2 * d
    return cfg.n_queries * d + cfg.n_layers * per_layer + 2 * d


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _linear(params, name, x):
    return T.add(T.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _ln(params, name, x):
    return T.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def multi_head_attention(params, name, x_q, x_kv, n_heads):
    """softmax(q k^T / sqrt(d_head)) v per head, heads concatenated."""
    d = x_q.shape[1]
    dh = d // n_heads
    scale = 1.0 / math.sqrt(dh)
    q = _linear(params, f"{name}.wq", x_q)
    k = _linear(params, f"{name}.wk", x_kv)
    v = _linear(params, f"{name}.wv", x_kv)
    heads = []
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = T.narrow(q, 1, lo, hi)
        kh = T.narrow(k, 1, lo, hi)
        vh = T.narrow(v, 1, lo, hi)
        weights = T.softmax(T.mul_scalar(T.matmul(qh, T.transpose(kh)), scale))
        heads.append(T.matmul(weights, vh))
    ctx = heads[0] if len(heads) == 1 else T.concat(heads, axis=1)
    return _linear(params, f"{name}.wo", ctx)


def canonical_input_order(data, mask=None):
    """Indices of unmasked rows sorted lexicographically by row content."""
    n = data.shape[0]
    keep = np.arange(n) if mask is None else np.flatnonzero(np.asarray(mask, bool))
    if keep.size == 0:
        raise ShapeError("attention over an all-masked input set")
    sub = data[keep]
    order = np.lexsort(tuple(sub[:, c] for c in range(sub.shape[1] - 1, -1, -1)))
    return keep[order]


def qformer_forward(params, prefix, cfg, inputs, input_mask=None):
    """Distill an N x d input set into a K x d token block.

    Masked rows are physically excluded before attention, so a padded row
    can never influence the output.
    """
    if inputs.ndim != 2 or inputs.shape[1] != cfg.d:
        raise ShapeError(
            f"qformer inputs must be N x {cfg.d}, got {inputs.shape}"
        )
    order = canonical_input_order(inputs.data, input_mask)
    x_kv = T.take_rows(inputs, order)
    h = params[f"{prefix}.queries"]
    for i in range(cfg.n_layers):
        base = f"{prefix}.l{i}"
        hn = _ln(params, f"{base}.ln_self", h)
        h = T.add(h, multi_head_attention(params, f"{base}.self", hn, hn, cfg.n_heads))
        h = T.add(h, multi_head_attention(
            params, f"{base}.cross", _ln(params, f"{base}.ln_cross", h),
            x_kv, cfg.n_heads))
        ff = _linear(params, f"{base}.ffn.fc2",
                     T.gelu(_linear(params, f"{base}.ffn.fc1",
                                    _ln(params, f"{base}.ln_ffn", h))))
        h = T.add(h, ff)
    return _ln(params, f"{prefix}.ln_out", h)


# ---------------------------------------------------------------------------
# Ablation aggregators
# ---------------------------------------------------------------------------

def init_self_attention_pool_params(params, prefix, cfg, rng, dtype):
    d = cfg.d
    add_layer_norm(params, f"{prefix}.ln_attn", d, dtype)
    _add_attention(params, f"{prefix}.attn", d, rng, dtype)
    add_layer_norm(params, f"{prefix}.ln_ffn", d, dtype)
    add_linear(params, f"{prefix}.ffn.fc1", d, cfg.ffn_mult * d, rng, dtype)
    add_linear(params, f"{prefix}.ffn.fc2", cfg.ffn_mult * d, d, rng, dtype)
    add_layer_norm(params, f"{prefix}.ln_out", d, dtype)


def self_attention_pool(params, prefix, cfg, inputs, n_out_rows):
    """One self-attention layer over the input tokens, mean-pooled, tiled."""
    order = canonical_input_order(inputs.data)
    x = T.take_rows(inputs, order)
    xn = _ln(params, f"{prefix}.ln_attn", x)
    x = T.add(x, multi_head_attention(params, f"{prefix}.attn", xn, xn, cfg.n_heads))
    ff = _linear(params, f"{prefix}.ffn.fc2",
                 T.gelu(_linear(params, f"{prefix}.ffn.fc1",
                                _ln(params, f"{prefix}.ln_ffn", x))))
    x = _ln(params, f"{prefix}.ln_out", T.add(x, ff))
    pooled = T.tmean(x, axis=0, keepdims=True)
    return tile_rows(pooled, n_out_rows)


def init_mlp_concat_params(params, prefix, n_slots, cfg, rng, dtype):
    d = cfg.d
    add_linear(params, f"{prefix}.fc1", n_slots * d, cfg.ffn_mult * d, rng, dtype)
    add_linear(params, f"{prefix}.fc2", cfg.ffn_mult * d, d, rng, dtype)


def mlp_concat(params, prefix, slot_vector, n_out_rows):
    """Early fusion: fixed-slot concat (zero-filled) through a 2-layer MLP."""
    h = T.gelu(_linear(params, f"{prefix}.fc1", slot_vector))
    return tile_rows(_linear(params, f"{prefix}.fc2", h), n_out_rows)


def tile_rows(row, n):
    """Repeat a 1 x d tensor to n x d (keeps ablation interfaces uniform)."""
    if n == 1:
        return row
    return T.take_rows(row, np.zeros(n, dtype=np.intp))


def mean_rows(block):
    return T.tmean(block, axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# Reader
# ---------------------------------------------------------------------------

def init_reader_params(params, cfg, n_reader_layers, rng, dtype):
    d = cfg.d
    add_linear(params, "reader.proj", d, d, rng, dtype)
    for i in range(n_reader_layers):
        base = f"reader.l{i}"
        add_layer_norm(params, f"{base}.ln_attn", d, dtype)
        _add_attention(params, f"{base}.attn", d, rng, dtype)
        add_layer_norm(params, f"{base}.ln_ffn", d, dtype)
        add_linear(params, f"{base}.ffn.fc1", d, cfg.ffn_mult * d, rng, dtype)
        add_linear(params, f"{base}.ffn.fc2", cfg.ffn_mult * d, d, rng, dtype)
    add_layer_norm(params, "reader.ln_out", d, dtype)


def reader_forward(params, cfg, n_reader_layers, user_tokens, identity=False):
    """Project user tokens (the soft prompt), encode, mean-pool to one vector.

    Identity mode skips the transformer and mean-pools the projection.
    """
    x = _linear(params, "reader.proj", user_tokens)
    if identity:
        return mean_rows(x)
    for i in range(n_reader_layers):
        base = f"reader.l{i}"
        xn = _ln(params, f"{base}.ln_attn", x)
        x = T.add(x, multi_head_attention(params, f"{base}.attn", xn, xn, cfg.n_heads))
        ff = _linear(params, f"{base}.ffn.fc2",
                     T.gelu(_linear(params, f"{base}.ffn.fc1",
                                    _ln(params, f"{base}.ln_ffn", x))))
        x = T.add(x, ff)
    return mean_rows(_ln(params, "reader.ln_out", x))

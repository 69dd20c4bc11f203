"""Attention primitives and post-norm Transformer layers.

Every function accepts an optional leading batch axis: ``X`` is either
``(N, D)`` or ``(B, N, D)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

INIT_STD = 0.02


def normal_param(rng, shape, std=INIT_STD):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape):
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class MhaParams:
    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def init(cls, rng, dim, heads):
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        return cls(
            heads,
            normal_param(rng, (dim, dim)), zeros_param(dim),
            normal_param(rng, (dim, dim)), zeros_param(dim),
            normal_param(rng, (dim, dim)), zeros_param(dim),
            normal_param(rng, (dim, dim)), zeros_param(dim),
        )


@dataclass
class FfbParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, dim, hidden):
        return cls(
            normal_param(rng, (dim, hidden)), zeros_param(hidden),
            normal_param(rng, (hidden, dim)), zeros_param(dim),
        )


@dataclass
class NormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, dim):
        return cls(ones_param(dim), zeros_param(dim))


@dataclass
class TransformerLayerParams:
    attn: MhaParams
    ffb: FfbParams
    norm1: NormParams
    norm2: NormParams

    @classmethod
    def init(cls, rng, dim, heads, ffn_mult=4):
        return cls(
            MhaParams.init(rng, dim, heads),
            FfbParams.init(rng, dim, ffn_mult * dim),
            NormParams.init(dim),
            NormParams.init(dim),
        )


@dataclass
class DecoderLayerParams:
    self_attn: MhaParams
    cross_attn: MhaParams
    ffb: FfbParams
    norm1: NormParams
    norm2: NormParams
    norm3: NormParams

    @classmethod
    def init(cls, rng, dim, heads, ffn_mult=4):
        return cls(
            MhaParams.init(rng, dim, heads),
            MhaParams.init(rng, dim, heads),
            FfbParams.init(rng, dim, ffn_mult * dim),
            NormParams.init(dim),
            NormParams.init(dim),
            NormParams.init(dim),
        )


@dataclass
class EmbeddingTables:
    token: Tensor
    position: Tensor
    token_type: Tensor

    @classmethod
    def init(cls, rng, vocab, max_len, n_types, dim):
        return cls(
            normal_param(rng, (vocab, dim)),
            normal_param(rng, (max_len, dim)),
            normal_param(rng, (n_types, dim)),
        )


def named_parameters(obj, prefix=""):
    """Flatten nested parameter containers into ``[(dotted_name, Tensor), ...]``.

    Walk order is declaration order, so names are stable across runs.
    """
    out = []
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif is_dataclass(obj):
        for f in fields(obj):
            out.extend(named_parameters(getattr(obj, f.name), _join(prefix, f.name)))
    elif isinstance(obj, dict):
        for key, value in obj.items():
            out.extend(named_parameters(value, _join(prefix, str(key))))
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            out.extend(named_parameters(value, _join(prefix, str(i))))
    return out


def count_parameters(obj):
    return sum(t.size for _, t in named_parameters(obj))


def _join(prefix, name):
    return f"{prefix}.{name}" if prefix else name


# ---------------------------------------------------------------------------


def causal_mask(n):
    """Boolean (n, n) mask where position i may attend to j iff j <= i."""
    if n < 1:
        raise ValueError("causal_mask needs n >= 1")
    return np.tril(np.ones((n, n), dtype=bool))


def attention(q, k, v, mask=None, store=None):
    """Scaled dot-product attention over the last two axes.

    ``mask`` is boolean with True marking allowed (query, key) pairs and must
    broadcast against the score matrix. When ``store`` is a list, the
    attention weights (numpy) are appended to it.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ag.ShapeError(f"attention: query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ag.ShapeError(f"attention: {k.shape[-2]} keys but {v.shape[-2]} values")
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    weights = ag.softmax(scores, axis=-1, mask=mask)
    if store is not None:
        store.append(weights.data)
    return ag.matmul(weights, v)


def _split_heads(x, heads):
    *lead, n, dim = x.shape
    x = ag.reshape(x, tuple(lead) + (n, heads, dim // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ag.transpose(x, axes)


def _merge_heads(x):
    *lead, heads, n, d = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    x = ag.transpose(x, axes)
    return ag.reshape(x, tuple(lead) + (n, heads * d))


def mha(x, y, params, mask=None, store=None):
    """Multi-head attention with queries from ``x`` and keys/values from ``y``."""
    if x.shape[-1] != params.wq.shape[0] or y.shape[-1] != params.wk.shape[0]:
        raise ag.ShapeError(f"mha: inputs {x.shape}, {y.shape} do not match model dim")
    h = params.heads
    q = _split_heads(ag.add(ag.matmul(x, params.wq), params.bq), h)
    k = _split_heads(ag.add(ag.matmul(y, params.wk), params.bk), h)
    v = _split_heads(ag.add(ag.matmul(y, params.wv), params.bv), h)
    out = _merge_heads(attention(q, k, v, mask=mask, store=store))
    return ag.add(ag.matmul(out, params.wo), params.bo)


def ffb(x, params):
    hidden = ag.gelu(ag.add(ag.matmul(x, params.w1), params.b1))
    return ag.add(ag.matmul(hidden, params.w2), params.b2)


def transformer_layer(x, y, params, mask=None, store=None):
    """Post-norm layer: ``x1 = LN(x + MHA(x, y, y))``, ``out = LN(x1 + FFB(x1))``."""
    x1 = ag.layer_norm(ag.add(x, mha(x, y, params.attn, mask, store)), params.norm1.gain, params.norm1.bias)
    return ag.layer_norm(ag.add(x1, ffb(x1, params.ffb)), params.norm2.gain, params.norm2.bias)


def decoder_layer(x, memory, params, self_mask=None):
    """Causal self-attention, cross-attention over ``memory``, then FFB (all post-norm)."""
    x1 = ag.layer_norm(
        ag.add(x, mha(x, x, params.self_attn, self_mask)), params.norm1.gain, params.norm1.bias
    )
    x2 = ag.layer_norm(
        ag.add(x1, mha(x1, memory, params.cross_attn)), params.norm2.gain, params.norm2.bias
    )
    return ag.layer_norm(ag.add(x2, ffb(x2, params.ffb)), params.norm3.gain, params.norm3.bias)


def embed(tables, tokens, positions=None, type_id=None):
    """Sum of token, position and token-type lookups.

    ``tokens`` has shape (N,) or (B, N); ``positions`` defaults to 0..N-1.
    ``type_id`` of None skips the type table.
    """
    tokens = np.asarray(tokens)
    n = tokens.shape[-1]
    if positions is None:
        positions = np.arange(n)
    positions = np.broadcast_to(np.asarray(positions), tokens.shape)
    out = ag.add(ag.gather_rows(tables.token, tokens), ag.gather_rows(tables.position, positions))
    if type_id is not None:
        if not 0 <= type_id < tables.token_type.shape[0]:
            raise IndexError(f"token type {type_id} out of range")
        out = ag.add(out, tables.token_type[type_id])
    return out

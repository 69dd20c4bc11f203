"""Cross-modal fusion encoders.

Five layer types map audio tokens ``phi_a`` and video tokens ``phi_v`` to a
fused sequence:

* ``merged``: both modalities concatenated through one self-attention layer.
* ``cross``: per-modality layers, the other modality supplies keys/values.
* ``global_cross``: per-modality layers whose only cross-modal context is the
  other modality's single global token.
* ``local_global_merged`` / ``local_global_cross``: the average of a local
  path (merged or cross) and the global-cross path.

Inputs may carry a leading batch axis; all layers are pure functions of the
layer-i state, so both modality branches read the same inputs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import TransformerLayerParams, normal_param, transformer_layer
from .rng import make_rng


class FusionKind(str, enum.Enum):
    MERGED = "merged"
    CROSS = "cross"
    GLOBAL_CROSS = "global_cross"
    LOCAL_GLOBAL_MERGED = "local_global_merged"
    LOCAL_GLOBAL_CROSS = "local_global_cross"

    @property
    def uses_global(self):
        return self in (
            FusionKind.GLOBAL_CROSS,
            FusionKind.LOCAL_GLOBAL_MERGED,
            FusionKind.LOCAL_GLOBAL_CROSS,
        )

    @property
    def local_kind(self):
        return {
            FusionKind.MERGED: FusionKind.MERGED,
            FusionKind.CROSS: FusionKind.CROSS,
            FusionKind.LOCAL_GLOBAL_MERGED: FusionKind.MERGED,
            FusionKind.LOCAL_GLOBAL_CROSS: FusionKind.CROSS,
        }.get(self)


ALIASES = {
    "merged": FusionKind.MERGED,
    "cross": FusionKind.CROSS,
    "global": FusionKind.GLOBAL_CROSS,
    "global_cross": FusionKind.GLOBAL_CROSS,
    "global-cross": FusionKind.GLOBAL_CROSS,
    "lg-merged": FusionKind.LOCAL_GLOBAL_MERGED,
    "local_global_merged": FusionKind.LOCAL_GLOBAL_MERGED,
    "lg-cross": FusionKind.LOCAL_GLOBAL_CROSS,
    "local_global_cross": FusionKind.LOCAL_GLOBAL_CROSS,
}


def parse_kind(kind):
    if isinstance(kind, FusionKind):
        return kind
    try:
        return ALIASES[str(kind).lower()]
    except KeyError:
        raise ValueError(
            f"unknown fusion kind {kind!r}; expected one of {sorted(ALIASES)}"
        ) from None


@dataclass
class FusionConfig:
    kind: FusionKind = FusionKind.LOCAL_GLOBAL_MERGED
    layers: int = 3
    heads: int = 4
    dim: int = 64
    n_audio: int = 16
    n_video: int = 16
    ffn_mult: int = 4

    def __post_init__(self):
        self.kind = parse_kind(self.kind)
        if self.layers < 1:
            raise ValueError("fusion needs at least one layer")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")


@dataclass
class FusionState:
    phi_a: Tensor
    phi_v: Tensor
    g_a: Tensor | None = None
    g_v: Tensor | None = None


@dataclass
class FusionLayerParams:
    """Parameter sets for one fusion layer; unused slots stay None."""

    merged: TransformerLayerParams | None = None
    local_a: TransformerLayerParams | None = None
    local_v: TransformerLayerParams | None = None
    global_a: TransformerLayerParams | None = None
    global_v: TransformerLayerParams | None = None


@dataclass
class FusionParams:
    layers: list = field(default_factory=list)
    g_a: Tensor | None = None
    g_v: Tensor | None = None


def init_global_tokens(dim, seed):
    """Two learnable (1, dim) tokens drawn from N(0, 0.02^2)."""
    if dim <= 0:
        raise ValueError("dim must be positive")
    rng = make_rng(seed, "global-tokens")
    return normal_param(rng, (1, dim)), normal_param(rng, (1, dim))


def init_fusion(config, seed):
    rng = make_rng(seed, "fusion")
    kind, d, h, m = config.kind, config.dim, config.heads, config.ffn_mult
    layers = []
    for _ in range(config.layers):
        p = FusionLayerParams()
        if kind.local_kind is FusionKind.MERGED:
            p.merged = TransformerLayerParams.init(rng, d, h, m)
        elif kind.local_kind is FusionKind.CROSS:
            p.local_a = TransformerLayerParams.init(rng, d, h, m)
            p.local_v = TransformerLayerParams.init(rng, d, h, m)
        if kind.uses_global:
            p.global_a = TransformerLayerParams.init(rng, d, h, m)
            p.global_v = TransformerLayerParams.init(rng, d, h, m)
        layers.append(p)
    params = FusionParams(layers)
    if kind.uses_global:
        params.g_a, params.g_v = init_global_tokens(d, seed)
    return params


def zero_mask(phi):
    """Constant all-zero stand-in for a modality; its token slots stay in attention."""
    return Tensor(np.zeros(phi.shape))


def _split(x, n_first):
    n = x.shape[-2]
    lead = (slice(None),) * (x.ndim - 2)
    return x[lead + (slice(0, n_first),)], x[lead + (slice(n_first, n),)]


def merged_layer(state, params, store=None):
    n_a = state.phi_a.shape[-2]
    x = ag.concat([state.phi_a, state.phi_v], axis=-2)
    out = transformer_layer(x, x, params, store=_sub(store, "merged"))
    phi_a, phi_v = _split(out, n_a)
    return FusionState(phi_a, phi_v, state.g_a, state.g_v)


def cross_layer(state, params_a, params_v, store=None):
    phi_a = transformer_layer(state.phi_a, state.phi_v, params_a, store=_sub(store, "cross_a"))
    phi_v = transformer_layer(state.phi_v, state.phi_a, params_v, store=_sub(store, "cross_v"))
    return FusionState(phi_a, phi_v, state.g_a, state.g_v)


def global_cross_layer(state, params_a, params_v, store=None):
    if state.g_a is None or state.g_v is None:
        raise ValueError("global_cross_layer needs both global tokens")
    n_a, n_v = state.phi_a.shape[-2], state.phi_v.shape[-2]
    out_a = transformer_layer(
        ag.concat([state.phi_a, state.g_a], axis=-2),
        ag.concat([state.phi_a, state.g_v], axis=-2),
        params_a,
        store=_sub(store, "global_a"),
    )
    out_v = transformer_layer(
        ag.concat([state.phi_v, state.g_v], axis=-2),
        ag.concat([state.phi_v, state.g_a], axis=-2),
        params_v,
        store=_sub(store, "global_v"),
    )
    phi_a, g_a = _split(out_a, n_a)
    phi_v, g_v = _split(out_v, n_v)
    return FusionState(phi_a, phi_v, g_a, g_v)


def average_paths(local, global_):
    """Mean of the two paths' local tokens; global tokens come from the global path."""
    return FusionState(
        ag.scale(ag.add(local.phi_a, global_.phi_a), 0.5),
        ag.scale(ag.add(local.phi_v, global_.phi_v), 0.5),
        global_.g_a,
        global_.g_v,
    )


def local_global_layer(state, local_params, global_params, local_kind, store=None):
    """One local-global layer.

    ``local_params`` is a single layer (merged) or an ``(audio, video)`` pair
    (cross); ``global_params`` is the ``(audio, video)`` pair of the global path.
    """
    local_kind = parse_kind(local_kind)
    if local_kind is FusionKind.MERGED:
        local = merged_layer(state, local_params, store)
    elif local_kind is FusionKind.CROSS:
        local = cross_layer(state, *local_params, store=store)
    else:
        raise ValueError(f"local path must be merged or cross, got {local_kind.value}")
    glob = global_cross_layer(state, *global_params, store=store)
    return average_paths(local, glob)


def apply_layer(state, kind, p, store=None):
    if kind is FusionKind.MERGED:
        return merged_layer(state, p.merged, store)
    if kind is FusionKind.CROSS:
        return cross_layer(state, p.local_a, p.local_v, store)
    if kind is FusionKind.GLOBAL_CROSS:
        return global_cross_layer(state, p.global_a, p.global_v, store)
    local = p.merged if kind.local_kind is FusionKind.MERGED else (p.local_a, p.local_v)
    return local_global_layer(state, local, (p.global_a, p.global_v), kind.local_kind, store)


def initial_state(phi_a, phi_v, params, global_type=None):
    """Wrap the inputs, attaching the learnable global tokens when present.

    ``global_type`` is an optional (dim,) token-type row added to both globals.
    """
    if params.g_a is None:
        return FusionState(phi_a, phi_v)
    g_a, g_v = params.g_a, params.g_v
    if global_type is not None:
        g_a, g_v = ag.add(g_a, global_type), ag.add(g_v, global_type)
    if phi_a.ndim == 3:
        batch = phi_a.shape[0]
        g_a, g_v = ag.repeat_batch(g_a, batch), ag.repeat_batch(g_v, batch)
    return FusionState(phi_a, phi_v, g_a, g_v)


def cross_encode(phi_a, phi_v, config, params, global_type=None, store=None):
    """Run ``config.layers`` fusion layers; returns audio-then-video tokens.

    When ``store`` is a list, one dict of attention-weight arrays per layer is
    appended (keys: ``merged``, ``cross_a``, ``cross_v``, ``global_a``,
    ``global_v`` as applicable).
    """
    if config.layers < 1:
        raise ValueError("fusion needs at least one layer")
    if phi_a.shape[-2] != config.n_audio or phi_v.shape[-2] != config.n_video:
        raise ag.ShapeError(
            f"expected {config.n_audio} audio / {config.n_video} video tokens, got "
            f"{phi_a.shape[-2]} / {phi_v.shape[-2]}"
        )
    if phi_a.shape[-1] != config.dim or phi_v.shape[-1] != config.dim:
        raise ag.ShapeError(f"token dim must be {config.dim}")
    if len(params.layers) != config.layers:
        raise ValueError(f"{len(params.layers)} parameter sets for {config.layers} layers")
    state = initial_state(phi_a, phi_v, params, global_type)
    for p in params.layers:
        record = {} if store is not None else None
        state = apply_layer(state, config.kind, p, record)
        if store is not None:
            store.append(record)
    return ag.concat([state.phi_a, state.phi_v], axis=-2)


def _sub(record, key):
    if record is None:
        return None
    slot = []
    record[key] = slot
    return slot


def joint_attention(record, n_audio, n_video, kind):
    """Head-averaged attention of one layer over the joint token index space.

    The index space is ``[audio..., video..., G_a, G_v]`` (globals only for
    kinds that use them). Input arrays are for a single sample. Every row is
    stochastic; rows of local tokens in local-global layers average the two
    paths, mirroring how the outputs are averaged.
    """
    kind = parse_kind(kind)
    n = n_audio + n_video + (2 if kind.uses_global else 0)
    a_idx = np.arange(n_audio)
    v_idx = n_audio + np.arange(n_video)
    ga, gv = n_audio + n_video, n_audio + n_video + 1

    def head_mean(key):
        arr = np.asarray(record[key][0])
        while arr.ndim > 2:
            arr = arr.mean(axis=0)
        return arr

    local = None
    if kind.local_kind is FusionKind.MERGED:
        local = np.zeros((n, n))
        idx = np.concatenate([a_idx, v_idx])
        local[np.ix_(idx, idx)] = head_mean("merged")
    elif kind.local_kind is FusionKind.CROSS:
        local = np.zeros((n, n))
        local[np.ix_(a_idx, v_idx)] = head_mean("cross_a")
        local[np.ix_(v_idx, a_idx)] = head_mean("cross_v")

    glob = None
    if kind.uses_global:
        glob = np.zeros((n, n))
        rows_a = np.append(a_idx, ga)
        glob[np.ix_(rows_a, np.append(a_idx, gv))] = head_mean("global_a")
        rows_v = np.append(v_idx, gv)
        glob[np.ix_(rows_v, np.append(v_idx, ga))] = head_mean("global_v")

    if glob is None:
        return local
    if local is None:
        return glob
    out = 0.5 * (local + glob)
    out[[ga, gv]] = glob[[ga, gv]]
    return out

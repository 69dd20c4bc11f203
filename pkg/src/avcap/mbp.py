"""Modality-balanced pretraining objective.

Per iteration the decoder runs three times on the same minibatch: with both
modalities, with video zero-masked and with audio zero-masked. The squared
gaps between each mono-modal loss and the joint loss set softmax target
weights, which are smoothed by an exponential moving average and used as
constant coefficients on the mono-modal losses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import BOS1, BOS2
from .fusion import zero_mask

DEFAULT_ALPHA = 10.0
DEFAULT_BETA = 0.99


@dataclass(frozen=True)
class LossTriple:
    """Joint, audio-only and video-only decoder losses of one minibatch."""

    av: Tensor
    a: Tensor
    v: Tensor

    def values(self):
        return self.av.item(), self.a.item(), self.v.item()


@dataclass(frozen=True)
class MmdGaps:
    g_a: float
    g_v: float


@dataclass(frozen=True)
class MbpState:
    w_a: float | None = None
    w_v: float | None = None
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    t: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    @property
    def initialized(self):
        return self.w_a is not None


def mmd(triple):
    """Squared mono-to-multi gaps from detached loss values."""
    if isinstance(triple, LossTriple):
        av, a, v = triple.values()
    else:
        av, a, v = triple
    return MmdGaps((a - av) ** 2, (v - av) ** 2)


def target_weights(gaps, alpha=DEFAULT_ALPHA):
    """Softmax over ``alpha * (G_a, G_v)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    za, zv = alpha * gaps.g_a, alpha * gaps.g_v
    m = max(za, zv)
    ea, ev = math.exp(za - m), math.exp(zv - m)
    return ea / (ea + ev), ev / (ea + ev)


def update_weights(state, targets):
    """EMA step ``w <- beta * w + (1 - beta) * target``.

    An uninitialized state adopts the targets directly.
    """
    ta, tv = targets
    if not state.initialized:
        return replace(state, w_a=ta, w_v=tv, t=state.t + 1)
    b = state.beta
    return replace(
        state,
        w_a=b * state.w_a + (1 - b) * ta,
        w_v=b * state.w_v + (1 - b) * tv,
        t=state.t + 1,
    )


def pretrain_loss(triple, state):
    """``L + w_a * L_a + w_v * L_v`` with the weights as constants."""
    w_a = state.w_a if state.initialized else 0.0
    w_v = state.w_v if state.initialized else 0.0
    return ag.add(ag.add(triple.av, ag.scale(triple.a, w_a)), ag.scale(triple.v, w_v))


def step(state, triple):
    """Gaps, targets and EMA update for one iteration; returns ``(state, gaps)``."""
    gaps = mmd(triple)
    return update_weights(state, target_weights(gaps, state.alpha)), gaps


# ---------------------------------------------------------------------------


def loss_triple(model, audio, video, caption, next_caption=None):
    """Joint and mono-modal PCC losses in one batched pass.

    The three input variants are stacked along the batch axis so fusion and
    decoding run once. When ``next_caption`` is given, the PNC loss on the
    joint pathway (BOS2) is appended to the same decoder batch and returned as
    a second value (otherwise ``None``).
    """
    audio, video, caption = np.asarray(audio), np.asarray(video), np.asarray(caption)
    if audio.ndim != 2:
        raise ag.ShapeError("loss_triple expects batched (B, N) inputs")
    b = audio.shape[0]
    phi_a, phi_v = model.encode_inputs(audio, video)
    stacked_a = ag.concat([phi_a, phi_a, zero_mask(phi_a)], axis=0)
    stacked_v = ag.concat([phi_v, zero_mask(phi_v), phi_v], axis=0)
    phi_c = model.fuse(stacked_a, stacked_v)

    bos = np.full((b, 1), BOS1)
    tokens_in = np.concatenate([bos, caption[:, :-1]], axis=1)
    inputs = [tokens_in] * 3
    targets = [caption] * 3
    memory = phi_c
    if next_caption is not None:
        next_caption = np.asarray(next_caption)
        inputs.append(np.concatenate([np.full((b, 1), BOS2), next_caption[:, :-1]], axis=1))
        targets.append(next_caption)
        memory = ag.concat([phi_c, phi_c[0:b]], axis=0)

    logits = model.decoder_logits(np.concatenate(inputs), memory)
    losses = [
        ag.cross_entropy(logits[k * b:(k + 1) * b], t, ignore_id=0) for k, t in enumerate(targets)
    ]
    triple = LossTriple(*losses[:3])
    return triple, (losses[3] if next_caption is not None else None)

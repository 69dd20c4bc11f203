"""Encoder -> fusion -> decoder captioning network.

Audio and video inputs are token ids; learnable lookup tables stand in for
the pretrained modality encoders. Position and token-type embeddings are
added once, before fusion. The decoder is a stack of causal self-attention /
cross-attention layers over the fused sequence, followed by a linear head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import BOS1, BOS2, PAD
from .fusion import FusionConfig, FusionKind, FusionParams, cross_encode, init_fusion, parse_kind, zero_mask
from .layers import (
    DecoderLayerParams,
    EmbeddingTables,
    causal_mask,
    decoder_layer,
    embed,
    named_parameters,
    normal_param,
    zeros_param,
)
from .rng import make_rng

AUDIO_TYPE, VIDEO_TYPE, GLOBAL_TYPE = 0, 1, 2
MODALITIES = ("av", "a", "v")


@dataclass
class ModelConfig:
    audio_vocab: int = 96
    video_vocab: int = 96
    vocab_size: int = 68
    n_audio: int = 16
    n_video: int = 16
    max_caption_len: int = 9
    dim: int = 64
    heads: int = 4
    fusion_kind: str = FusionKind.LOCAL_GLOBAL_MERGED.value
    fusion_layers: int = 2
    decoder_layers: int = 2
    ffn_mult: int = 4
    seed: int = 0

    def __post_init__(self):
        self.fusion_kind = parse_kind(self.fusion_kind).value
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.fusion_layers < 1 or self.decoder_layers < 1:
            raise ValueError("fusion and decoder need at least one layer each")

    @property
    def fusion(self):
        return FusionConfig(
            self.fusion_kind, self.fusion_layers, self.heads, self.dim,
            self.n_audio, self.n_video, self.ffn_mult,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def for_task(cls, spec, **overrides):
        base = dict(
            audio_vocab=spec.audio_alphabet,
            video_vocab=spec.video_alphabet,
            vocab_size=spec.vocab_size,
            n_audio=spec.n_audio,
            n_video=spec.n_video,
            max_caption_len=spec.max_caption_len,
        )
        base.update(overrides)
        return cls(**base)


# Dimensions of the full-size audio-visual captioner; not exercised by tests.
FULL_SCALE_PRESET = dict(dim=768, heads=12, n_audio=64, n_video=392, fusion_layers=3, decoder_layers=3)


@dataclass
class CaptionerParams:
    audio_token: Tensor
    video_token: Tensor
    enc_position: Tensor
    token_type: Tensor
    fusion: FusionParams
    text_token: Tensor
    text_position: Tensor
    decoder: list = field(default_factory=list)
    head_w: Tensor | None = None
    head_b: Tensor | None = None


class CaptionerModel:
    def __init__(self, config, params=None):
        self.config = config
        self.params = params if params is not None else self._init_params(config)

    @staticmethod
    def _init_params(cfg):
        rng = make_rng(cfg.seed, "captioner")
        d = cfg.dim
        return CaptionerParams(
            audio_token=normal_param(rng, (cfg.audio_vocab, d)),
            video_token=normal_param(rng, (cfg.video_vocab, d)),
            enc_position=normal_param(rng, (max(cfg.n_audio, cfg.n_video), d)),
            token_type=normal_param(rng, (3, d)),
            fusion=init_fusion(cfg.fusion, cfg.seed),
            text_token=normal_param(rng, (cfg.vocab_size, d)),
            text_position=normal_param(rng, (cfg.max_caption_len, d)),
            decoder=[
                DecoderLayerParams.init(rng, d, cfg.heads, cfg.ffn_mult)
                for _ in range(cfg.decoder_layers)
            ],
            head_w=normal_param(rng, (d, cfg.vocab_size)),
            head_b=zeros_param(cfg.vocab_size),
        )

    # -- parameters ---------------------------------------------------------

    def named_parameters(self):
        return named_parameters(self.params)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def num_parameters(self):
        return sum(t.size for t in self.parameters())

    # -- forward pieces ------------------------------------------------------

    def encode_inputs(self, audio, video):
        """Token + position + type embeddings for each modality."""
        p = self.params
        audio, video = np.asarray(audio), np.asarray(video)
        if audio.shape[-1] != self.config.n_audio or video.shape[-1] != self.config.n_video:
            raise ag.ShapeError(
                f"expected {self.config.n_audio} audio / {self.config.n_video} video tokens, "
                f"got {audio.shape[-1]} / {video.shape[-1]}"
            )
        phi_a = embed(EmbeddingTables(p.audio_token, p.enc_position, p.token_type), audio, type_id=AUDIO_TYPE)
        phi_v = embed(EmbeddingTables(p.video_token, p.enc_position, p.token_type), video, type_id=VIDEO_TYPE)
        return phi_a, phi_v

    def fuse(self, phi_a, phi_v, store=None):
        global_type = self.params.token_type[GLOBAL_TYPE] if self.params.fusion.g_a is not None else None
        return cross_encode(phi_a, phi_v, self.config.fusion, self.params.fusion, global_type, store)

    def fused(self, audio, video, modality="av", store=None):
        """Fused sequence with the non-selected modality zero-masked."""
        phi_a, phi_v = self.encode_inputs(audio, video)
        if modality == "a":
            phi_v = zero_mask(phi_v)
        elif modality == "v":
            phi_a = zero_mask(phi_a)
        elif modality != "av":
            raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
        return self.fuse(phi_a, phi_v, store)

    def decoder_logits(self, tokens_in, phi_c):
        """Logits (…, L, V) for decoder input ids ``tokens_in`` (…, L)."""
        p = self.params
        tokens_in = np.asarray(tokens_in)
        n = tokens_in.shape[-1]
        if n > self.config.max_caption_len:
            raise ag.ShapeError(f"decoder input of length {n} exceeds {self.config.max_caption_len}")
        x = embed(EmbeddingTables(p.text_token, p.text_position, None), tokens_in)
        mask = causal_mask(n)
        for layer in p.decoder:
            x = decoder_layer(x, phi_c, layer, self_mask=mask)
        return ag.add(ag.matmul(x, p.head_w), p.head_b)

    def decoder_loss(self, phi_c, target, bos=BOS1):
        """Teacher-forced cross-entropy; the input is ``[bos, target[:-1]]``."""
        if bos not in (BOS1, BOS2):
            raise ValueError("bos must be BOS1 or BOS2")
        target = np.asarray(target)
        if target.shape[-1] < 1 or not np.any(target != PAD):
            raise ValueError("empty target")
        tokens_in = np.concatenate(
            [np.full(target.shape[:-1] + (1,), bos), target[..., :-1]], axis=-1
        )
        logits = self.decoder_logits(tokens_in, phi_c)
        return ag.cross_entropy(logits, target, ignore_id=PAD)

    def caption_loss(self, audio, video, target, modality="av", bos=BOS1):
        return self.decoder_loss(self.fused(audio, video, modality), target, bos)

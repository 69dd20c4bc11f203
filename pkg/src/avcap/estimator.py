"""Scikit-learn style estimator around the captioning model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from .analysis import bleu4, exact_match, token_accuracy
from .checkpoint import load_checkpoint, save_checkpoint
from .data import BOS1, PAD
from .decoding import beam_search, greedy_decode
from .mbp import DEFAULT_ALPHA, DEFAULT_BETA, MbpState
from .model import CaptionerModel, ModelConfig
from .optim import Adam
from .training import TrainConfig, batch_indices, finetune_step, pretrain_step
from .validation import check_dataset, check_modality, strip_caption


class AudioVisualCaptioner(BaseEstimator):
    """Audio-visual captioner trained by pretraining or fine-tuning.

    ``fit`` takes a CaptionDataset. With ``warm_start=True`` an already fitted
    model (or one loaded by ``from_checkpoint``) keeps its parameters and
    training continues from them; the optimizer state always starts fresh.
    """

    def __init__(
        self,
        fusion="lg-merged",
        dim=64,
        heads=4,
        fusion_layers=2,
        decoder_layers=2,
        ffn_mult=4,
        mode="pretrain",
        mbp=None,
        pnc=None,
        steps=2000,
        batch_size=32,
        lr=None,
        warmup_frac=0.1,
        alpha=DEFAULT_ALPHA,
        beta=DEFAULT_BETA,
        beam_width=5,
        seed=0,
        warm_start=False,
    ):
        self.fusion = fusion
        self.dim = dim
        self.heads = heads
        self.fusion_layers = fusion_layers
        self.decoder_layers = decoder_layers
        self.ffn_mult = ffn_mult
        self.mode = mode
        self.mbp = mbp
        self.pnc = pnc
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup_frac = warmup_frac
        self.alpha = alpha
        self.beta = beta
        self.beam_width = beam_width
        self.seed = seed
        self.warm_start = warm_start

    # -- configuration ---------------------------------------------------

    def train_config(self):
        return TrainConfig(
            mode=self.mode, steps=self.steps, lr=self.lr, warmup_frac=self.warmup_frac,
            batch_size=self.batch_size, seed=self.seed, mbp=self.mbp, pnc=self.pnc,
            alpha=self.alpha, beta=self.beta,
        )

    def model_config(self, X):
        dims = dict(
            fusion_kind=self.fusion, dim=self.dim, heads=self.heads, fusion_layers=self.fusion_layers,
            decoder_layers=self.decoder_layers, ffn_mult=self.ffn_mult, seed=self.seed,
        )
        if X.spec is not None:
            return ModelConfig.for_task(X.spec, **dims)
        return ModelConfig(
            audio_vocab=int(X.audio.max()) + 1, video_vocab=int(X.video.max()) + 1,
            vocab_size=int(max(X.caption.max(), X.next_caption.max())) + 1,
            n_audio=X.audio.shape[1], n_video=X.video.shape[1],
            max_caption_len=X.caption.shape[1], **dims,
        )

    @classmethod
    def from_checkpoint(cls, path, **params):
        model = load_checkpoint(path)
        c = model.config
        est = cls(
            fusion=c.fusion_kind, dim=c.dim, heads=c.heads, fusion_layers=c.fusion_layers,
            decoder_layers=c.decoder_layers, ffn_mult=c.ffn_mult, seed=c.seed, warm_start=True,
        )
        est.set_params(**params)
        est.model_ = model
        est.history_ = []
        est.mbp_state_ = None
        return est

    def save(self, path, extra=None):
        check_is_fitted(self, "model_")
        return save_checkpoint(self.model_, path, extra)

    # -- training ---------------------------------------------------------

    def fit(self, X, y=None, callback=None):
        """Train on ``X``; ``callback(metrics)`` is called after every step."""
        X = check_dataset(X)
        cfg = self.train_config()
        if self.warm_start and hasattr(self, "model_"):
            model = self.model_
        else:
            model = CaptionerModel(self.model_config(X))
        check_dataset(X, model.config)

        optimizer = Adam(model.parameters(), lr=cfg.lr)
        state = MbpState(alpha=cfg.alpha, beta=cfg.beta)
        history = []
        batches = batch_indices(len(X), cfg.batch_size, cfg.steps, cfg.seed)
        for step, idx in enumerate(batches, start=1):
            batch = X.subset(idx)
            if cfg.mode == "pretrain":
                _, state, metrics = pretrain_step(model, optimizer, batch, state, cfg, step)
            else:
                metrics = finetune_step(model, optimizer, batch, cfg, step)
            history.append(metrics)
            if callback is not None:
                callback(metrics)

        self.model_ = model
        self.mbp_state_ = state if cfg.mode == "pretrain" and cfg.mbp else None
        self.history_ = history
        return self

    # -- inference ---------------------------------------------------------

    def transform(self, X, modality="av", chunk=64):
        """Fused sequences ``(n, N_a + N_v, D)`` under the requested masking."""
        check_is_fitted(self, "model_")
        X = check_dataset(X, self.model_.config)
        check_modality(modality)
        out = []
        with ag.no_grad():
            for lo in range(0, len(X), chunk):
                sl = slice(lo, lo + chunk)
                out.append(self.model_.fused(X.audio[sl], X.video[sl], modality).data)
        return np.concatenate(out)

    def predict(self, X, modality="av", beam_width=None):
        """Decoded caption ids (EOS stripped) for every sample."""
        width = self.beam_width if beam_width is None else beam_width
        return [caption for caption, _ in self.decode(X, modality, width)]

    def decode(self, X, modality="av", beam_width=None, greedy=False):
        """``(caption_ids, mean_logprob)`` per sample."""
        width = self.beam_width if beam_width is None else beam_width
        phi = self.transform(X, modality)
        if greedy:
            return [greedy_decode(self.model_, p) for p in phi]
        return [beam_search(self.model_, p, width) for p in phi]

    def mean_loss(self, X, modality="av", chunk=64):
        """Teacher-forced current-caption loss averaged over target tokens."""
        check_is_fitted(self, "model_")
        X = check_dataset(X, self.model_.config)
        total = count = 0.0
        with ag.no_grad():
            for lo in range(0, len(X), chunk):
                sl = slice(lo, lo + chunk)
                n_tok = int(np.sum(X.caption[sl] != PAD))
                loss = self.model_.caption_loss(X.audio[sl], X.video[sl], X.caption[sl], modality, BOS1)
                total += loss.item() * n_tok
                count += n_tok
        return total / count

    def evaluate(self, X, modality="av", beam_width=None, greedy=False):
        """Metrics dict plus the per-sample decodes."""
        decodes = self.decode(X, modality, beam_width, greedy)
        hyps = [h for h, _ in decodes]
        refs = [strip_caption(c) for c in X.caption]
        metrics = {
            "bleu4": bleu4(hyps, refs),
            "exact_match": exact_match(hyps, refs),
            "token_accuracy": token_accuracy(hyps, refs),
            "mean_loss": self.mean_loss(X, modality),
        }
        return metrics, decodes

    def score(self, X, y=None, modality="av"):
        """Token accuracy of beam-search decodes against the current captions."""
        hyps = self.predict(X, modality)
        return token_accuracy(hyps, [strip_caption(c) for c in X.caption])

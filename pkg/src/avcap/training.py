"""Single training steps for pretraining and fine-tuning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import mbp
from .data import BOS1
from .mbp import DEFAULT_ALPHA, DEFAULT_BETA
from .optim import linear_warmup_decay
from .rng import make_rng

METRIC_COLUMNS = ("step", "loss_av", "loss_a", "loss_v", "g_a", "g_v", "w_a", "w_v", "lr", "pnc_loss")

PRETRAIN_LR = 1e-4
FINETUNE_LR = 1e-5


@dataclass
class TrainConfig:
    mode: str = "pretrain"
    steps: int = 2000
    lr: float | None = None
    warmup_frac: float = 0.1
    batch_size: int = 32
    seed: int = 0
    mbp: bool | None = None
    pnc: bool | None = None
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.mode not in ("pretrain", "finetune"):
            raise ValueError(f"mode must be 'pretrain' or 'finetune', got {self.mode!r}")
        pretrain = self.mode == "pretrain"
        if self.mbp is None:
            self.mbp = pretrain
        if self.pnc is None:
            self.pnc = pretrain
        if not pretrain and (self.mbp or self.pnc):
            raise ValueError("fine-tuning uses the current-caption loss only (mbp and pnc must be off)")
        if self.lr is None:
            self.lr = PRETRAIN_LR if pretrain else FINETUNE_LR
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")

    def lr_at(self, step):
        return linear_warmup_decay(step, self.steps, self.lr, self.warmup_frac)


def batch_indices(n, batch_size, steps, seed):
    """Deterministic minibatch index arrays: reshuffled every pass over the data."""
    rng = make_rng(seed, "batches")
    order = np.empty(0, dtype=np.int64)
    for _ in range(steps):
        while len(order) < batch_size:
            order = np.concatenate([order, rng.permutation(n)])
        yield order[:batch_size]
        order = order[batch_size:]


def pretrain_step(model, optimizer, batch, state, cfg, step):
    """One pretraining update. Returns ``(triple, new_state, metrics)``.

    The mono-modal losses are always evaluated (for monitoring); they enter
    the objective only when MBP is on. PNC runs on the joint pathway only.
    """
    triple, pnc_loss = mbp.loss_triple(
        model, batch.audio, batch.video, batch.caption, batch.next_caption if cfg.pnc else None
    )
    gaps = mbp.mmd(triple)
    if cfg.mbp:
        state = mbp.update_weights(state, mbp.target_weights(gaps, state.alpha))
        total = mbp.pretrain_loss(triple, state)
    else:
        total = triple.av
    if pnc_loss is not None:
        total = ag.add(total, pnc_loss)

    lr = cfg.lr_at(step)
    model.zero_grad()
    ag.backward(total)
    optimizer.step(lr)

    av, a, v = triple.values()
    metrics = {
        "step": step,
        "loss_av": av,
        "loss_a": a,
        "loss_v": v,
        "g_a": gaps.g_a,
        "g_v": gaps.g_v,
        "w_a": state.w_a if cfg.mbp else None,
        "w_v": state.w_v if cfg.mbp else None,
        "lr": lr,
        "pnc_loss": pnc_loss.item() if pnc_loss is not None else None,
    }
    return triple, state, metrics


def finetune_step(model, optimizer, batch, cfg, step):
    """Current-caption (BOS1) loss on the joint pathway, one Adam update."""
    loss = model.caption_loss(batch.audio, batch.video, batch.caption, "av", BOS1)
    lr = cfg.lr_at(step)
    model.zero_grad()
    ag.backward(loss)
    optimizer.step(lr)
    metrics = dict.fromkeys(METRIC_COLUMNS)
    metrics.update(step=step, loss_av=loss.item(), lr=lr)
    return metrics

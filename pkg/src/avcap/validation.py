"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .data import EOS, PAD, CaptionDataset, DataError


def check_dataset(X, config=None):
    """Return ``X`` as a CaptionDataset, verifying shapes and id ranges."""
    if not isinstance(X, CaptionDataset):
        raise TypeError(f"expected a CaptionDataset, got {type(X).__name__}")
    if len(X) == 0:
        raise DataError("dataset is empty")
    for name in ("audio", "video", "caption", "next_caption"):
        arr = getattr(X, name)
        if arr.ndim != 2:
            raise DataError(f"{name} must be a 2-D id array, got shape {arr.shape}")
        if arr.min() < 0:
            raise DataError(f"{name} contains negative ids")
    if config is None:
        return X
    limits = {
        "audio": (config.n_audio, config.audio_vocab),
        "video": (config.n_video, config.video_vocab),
        "caption": (config.max_caption_len, config.vocab_size),
        "next_caption": (config.max_caption_len, config.vocab_size),
    }
    for name, (width, vocab) in limits.items():
        arr = getattr(X, name)
        if name in ("audio", "video") and arr.shape[1] != width:
            raise DataError(f"{name} has {arr.shape[1]} tokens per sample, model expects {width}")
        if name not in ("audio", "video") and arr.shape[1] > width:
            raise DataError(f"{name} length {arr.shape[1]} exceeds model maximum {width}")
        if arr.max() >= vocab:
            raise DataError(f"{name} id {int(arr.max())} out of range for vocabulary of size {vocab}")
    return X


def check_modality(modality):
    if modality not in ("av", "a", "v"):
        raise ValueError(f"modality must be 'av', 'a' or 'v', got {modality!r}")
    return modality


def strip_caption(ids):
    """Caption word ids before the first EOS, PAD removed."""
    out = []
    for t in np.asarray(ids).tolist():
        if t == EOS:
            break
        if t != PAD:
            out.append(t)
    return out

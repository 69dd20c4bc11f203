"""Greedy and beam-search caption decoding for a single fused sequence."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor, log_softmax_np
from .data import BOS1, BOS2, EOS, PAD

BLOCKED = (PAD, BOS1, BOS2)


def next_logprobs(model, phi_c, prefixes):
    """Log-probabilities of the next token after each prefix (all equal length).

    ``phi_c`` is one fused sequence (N, D). Blocked special tokens get -inf.
    """
    prefixes = np.asarray(prefixes, dtype=np.int64)
    k = prefixes.shape[0]
    data = phi_c.data if isinstance(phi_c, Tensor) else np.asarray(phi_c)
    memory = Tensor(np.repeat(data[None], k, axis=0))
    with ag.no_grad():
        logits = model.decoder_logits(prefixes, memory).data[:, -1, :]
    logp = log_softmax_np(logits)
    logp[:, list(BLOCKED)] = -np.inf
    return logp


def _check_len(model, max_len):
    if max_len is None:
        max_len = model.config.max_caption_len
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    return min(max_len, model.config.max_caption_len)


def greedy_decode(model, phi_c, max_len=None):
    """Argmax decoding from BOS1; returns ``(tokens_without_eos, mean_logprob)``.

    Ties go to the lowest token id.
    """
    max_len = _check_len(model, max_len)
    seq, total = [], 0.0
    for _ in range(max_len):
        logp = next_logprobs(model, phi_c, [[BOS1] + seq])[0]
        tok = int(np.argmax(logp))
        total += float(logp[tok])
        seq.append(tok)
        if tok == EOS:
            break
    return _strip(seq), total / len(seq)


def beam_search(model, phi_c, width=5, max_len=None):
    """Length-normalised beam search; returns ``(tokens_without_eos, mean_logprob)``.

    At every step the ``width`` best expansions (by summed log-probability,
    ties by token ids) survive; those ending in EOS are set aside as finished.
    The result maximises mean log-probability over generated tokens, EOS
    included, with ties broken toward the lexicographically smallest ids.
    """
    if width < 1:
        raise ValueError("beam width must be at least 1")
    max_len = _check_len(model, max_len)
    alive = [((), 0.0)]
    finished = []
    for _ in range(max_len):
        if not alive:
            break
        logp = next_logprobs(model, phi_c, [[BOS1, *seq] for seq, _ in alive])
        candidates = []
        for i, (seq, score) in enumerate(alive):
            for tok in np.flatnonzero(np.isfinite(logp[i])):
                candidates.append((score + float(logp[i, tok]), seq + (int(tok),)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, seq in candidates[:width]:
            if seq[-1] == EOS:
                finished.append((score / len(seq), seq))
            else:
                alive.append((seq, score))
    finished.extend((score / len(seq), seq) for seq, score in alive)
    best_score, best = min(finished, key=lambda f: (-f[0], f[1]))
    return _strip(list(best)), best_score


def sequence_logprob(model, phi_c, tokens, max_len=None):
    """Mean log-probability of generating ``tokens`` (EOS appended unless the
    sequence already fills ``max_len``), teacher-forced in one pass."""
    max_len = _check_len(model, max_len)
    seq = list(tokens)
    if len(seq) < max_len:
        seq.append(EOS)
    data = phi_c.data if isinstance(phi_c, Tensor) else np.asarray(phi_c)
    with ag.no_grad():
        logits = model.decoder_logits(np.array([[BOS1] + seq[:-1]]), Tensor(data[None])).data[0]
    logp = log_softmax_np(logits)
    logp[:, list(BLOCKED)] = -np.inf
    return float(np.mean(logp[np.arange(len(seq)), seq]))


def _strip(seq):
    return seq[:-1] if seq and seq[-1] == EOS else seq

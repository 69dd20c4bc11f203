"""Corpus-level BLEU-4 with multi-reference clipping and no smoothing."""
from __future__ import annotations

import math
from collections import Counter


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _as_multi(refs):
    if len(refs) and isinstance(refs[0], (list, tuple)):
        return [list(r) for r in refs]
    return [list(refs)]


def bleu4(hypotheses, references, max_n=4):
    """``references[i]`` is either one token list or a list of token lists."""
    if len(hypotheses) == 0:
        raise ValueError("empty hypothesis set")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} reference sets")
    matched = [0] * max_n
    possible = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        hyp = list(hyp)
        refs = _as_multi(refs)
        hyp_len += len(hyp)
        # closest reference length, shorter wins ties
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            best = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            possible[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / p) for m, p in zip(matched, possible)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)

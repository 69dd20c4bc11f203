"""Exact-match and token accuracy over aligned caption pairs."""
from __future__ import annotations


def _check(hyps, refs):
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")


def exact_match(hyps, refs):
    _check(hyps, refs)
    if not hyps:
        return 0.0
    return sum(list(h) == list(r) for h, r in zip(hyps, refs)) / len(hyps)


def token_accuracy(hyps, refs):
    """Position-wise matches up to the shorter length, over the longer length (pooled)."""
    _check(hyps, refs)
    hits = total = 0
    for h, r in zip(hyps, refs):
        h, r = list(h), list(r)
        hits += sum(a == b for a, b in zip(h, r))
        total += max(len(h), len(r))
    if total == 0:
        return 1.0 if hyps else 0.0
    return hits / total

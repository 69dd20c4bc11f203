"""Speech coverage rate (SCR) and audio relevance score (ARS)."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .text import normalize


class CorpusError(ValueError):
    """Empty or misaligned corpora."""


class Normalized(list):
    """Token list that is already normalized and is used as-is."""


def tokens_of(sentence):
    if isinstance(sentence, Normalized):
        return list(sentence)
    return normalize(sentence)


def scr(captions, transcripts):
    """Percentage of caption tokens found in the paired transcript's token set."""
    if len(captions) != len(transcripts):
        raise CorpusError(f"corpus length mismatch: {len(captions)} captions vs {len(transcripts)} transcripts")
    covered = total = 0
    for cap, tr in zip(captions, transcripts):
        vocab = set(tokens_of(tr))
        toks = tokens_of(cap)
        covered += sum(t in vocab for t in toks)
        total += len(toks)
    if total == 0:
        raise CorpusError("captions are empty after normalization")
    return 100.0 * covered / total


@dataclass
class FreqTable:
    counts: Counter = field(default_factory=Counter)

    @classmethod
    def from_corpus(cls, sentences):
        counts = Counter()
        for s in sentences:
            counts.update(tokens_of(s))
        return cls(counts)

    @property
    def total(self):
        return sum(self.counts.values())

    def scaled(self, k):
        return FreqTable(Counter({w: c * k for w, c in self.counts.items()}))


def smoothed_frequency(w, freq, vocab_size, pseudo_count=1.0):
    """``(count(w) + k) / (total + k * vocab_size)``."""
    denom = freq.total + pseudo_count * vocab_size
    if denom <= 0:
        raise CorpusError("cannot form frequencies from an empty table")
    return (freq.counts.get(w, 0) + pseudo_count) / denom


def _score(fa, fi):
    if fa <= 0:
        return 0.0
    if fi <= 0:
        return math.inf
    return max(math.log(fa / fi), 0.0)


def ars_word(w, freq_a, freq_i, pseudo_count=1.0):
    """``max(ln(f_a(w) / f_i(w)), 0)`` on smoothed relative frequencies.

    Smoothing adds ``pseudo_count`` to every word of the union vocabulary of
    both tables. With ``pseudo_count=0`` plain relative frequencies are used
    and a word seen only in the audio table scores ``inf``.
    """
    n = len(set(freq_a.counts) | set(freq_i.counts) | {w})
    return _score(smoothed_frequency(w, freq_a, n, pseudo_count), smoothed_frequency(w, freq_i, n, pseudo_count))


class ArsTable(dict):
    """word -> ARS score over the union vocabulary of two frequency tables."""

    @classmethod
    def build(cls, freq_a, freq_i, pseudo_count=1.0):
        vocab = set(freq_a.counts) | set(freq_i.counts)
        if not vocab:
            raise CorpusError("empty after normalization")
        n = len(vocab)
        return cls(
            {
                w: _score(smoothed_frequency(w, freq_a, n, pseudo_count), smoothed_frequency(w, freq_i, n, pseudo_count))
                for w in vocab
            }
        )

    @classmethod
    def from_corpora(cls, audio_captions, image_captions, pseudo_count=1.0):
        return cls.build(FreqTable.from_corpus(audio_captions), FreqTable.from_corpus(image_captions), pseudo_count)

    def ranked(self):
        return sorted(self.items(), key=lambda kv: (-kv[1], kv[0]))


def ars_sentence(sentence, ars):
    return float(sum(ars.get(t, 0.0) for t in tokens_of(sentence)))


def ars_corpus(corpus, ars):
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    return float(sum(ars_sentence(s, ars) for s in corpus) / len(corpus))

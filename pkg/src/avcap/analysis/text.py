"""Caption text normalization: lowercase, strip punctuation, drop stop words, stem.

Stemming uses the Porter algorithm (NLTK's implementation), re-applied until
the token no longer changes, so ``normalize`` is idempotent on its own output.
"""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from nltk.stem.porter import PorterStemmer

STOPWORDS_VERSION = 1
_PUNCT = re.compile(r"[^\w\s]|_", re.UNICODE)
_STEMMER = PorterStemmer()


@lru_cache(maxsize=1)
def stopwords():
    text = resources.files(__package__).joinpath("stopwords.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#"))


@lru_cache(maxsize=65536)
def stem(word):
    prev = None
    while word != prev:
        prev, word = word, _STEMMER.stem(word)
    return word


def normalize(sentence):
    """Normalized token list of a raw sentence (string or list of words)."""
    if not isinstance(sentence, str):
        sentence = " ".join(sentence)
    stop = stopwords()
    out = []
    for word in _PUNCT.sub(" ", sentence.lower()).split():
        if word in stop:
            continue
        s = stem(word)
        if s and s not in stop:
            out.append(s)
    return out


def normalize_corpus(sentences):
    return [normalize(s) for s in sentences]


def read_corpus(path):
    """One sentence per line (UTF-8); a trailing newline does not add a sentence."""
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()

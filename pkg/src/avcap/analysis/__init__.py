from .accuracy import exact_match, token_accuracy
from .bleu import bleu4
from .relevance import ArsTable, CorpusError, FreqTable, Normalized, ars_corpus, ars_sentence, ars_word, scr
from .rollout import attention_rollout, residual_adjust, saliency
from .text import normalize, stopwords

__all__ = [
    "ArsTable",
    "CorpusError",
    "FreqTable",
    "Normalized",
    "ars_corpus",
    "ars_sentence",
    "ars_word",
    "attention_rollout",
    "bleu4",
    "exact_match",
    "normalize",
    "residual_adjust",
    "saliency",
    "scr",
    "stopwords",
    "token_accuracy",
]

"""Synthetic two-modality captioning tasks.

Each sample draws a caption of ``caption_len`` words uniformly from
``caption_vocab`` words. Caption word ``j`` sits at slot ``j * stride`` of
both streams (``stride = n_tokens // caption_len``):

* the audio stream carries the word index itself with probability
  ``p_audio``, otherwise a noise token;
* the video stream carries ``code[word]`` (a fixed seeded bijection into the
  video alphabet) with probability ``p_video``, otherwise a noise token.

Remaining slots hold noise. Noise tokens are drawn from the part of each
alphabet that never encodes a word. The next caption shifts every word index
by ``shift`` modulo ``caption_vocab``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .rng import make_rng

PAD, BOS1, BOS2, EOS = 0, 1, 2, 3
SPECIALS = {"PAD": PAD, "BOS1": BOS1, "BOS2": BOS2, "EOS": EOS}
N_SPECIALS = len(SPECIALS)

REQUIRED_KEYS = ("audio", "video", "caption", "next_caption")


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class TaskSpec:
    caption_vocab: int = 64
    audio_alphabet: int = 96
    video_alphabet: int = 96
    caption_len: int = 8
    n_audio: int = 16
    n_video: int = 16
    p_audio: float = 1.0
    p_video: float = 0.9
    shift: int = 1
    seed: int = 0
    code_seed: int = 0

    def __post_init__(self):
        for name in ("p_audio", "p_video"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {p}")
        if self.caption_vocab < 1 or self.caption_len < 1:
            raise DataError("caption_vocab and caption_len must be positive")
        for name, alphabet in (("audio", self.audio_alphabet), ("video", self.video_alphabet)):
            if alphabet <= self.caption_vocab:
                raise DataError(
                    f"{name}_alphabet ({alphabet}) must exceed caption_vocab "
                    f"({self.caption_vocab}) to leave room for noise tokens"
                )
        for name, n in (("audio", self.n_audio), ("video", self.n_video)):
            if n < self.caption_len:
                raise DataError(
                    f"{name} stream of {n} tokens is too short to hold "
                    f"{self.caption_len} caption tokens"
                )

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown task spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def vocab_size(self):
        """Decoder vocabulary size, specials included."""
        return self.caption_vocab + N_SPECIALS

    @property
    def max_caption_len(self):
        return self.caption_len + 1

    def video_code(self):
        """``code[k]`` is the video token that encodes caption word ``k``."""
        perm = make_rng(self.code_seed, "video-code").permutation(self.video_alphabet)
        return perm[: self.caption_vocab]

    def floor_loss(self, modality):
        """Best achievable per-word cross-entropy (nats) from the given inputs.

        ``modality`` is ``"av"``, ``"a"`` or ``"v"``. A word is recoverable
        unless every available stream carries noise at its slot, in which
        case the best guess is uniform over the caption words.
        """
        miss = {
            "av": (1 - self.p_audio) * (1 - self.p_video),
            "a": 1 - self.p_audio,
            "v": 1 - self.p_video,
        }[modality]
        return miss * math.log(self.caption_vocab)


DEFAULT_PRETRAIN_SPEC = TaskSpec()
DEFAULT_DOWNSTREAM_SPEC = TaskSpec(p_audio=0.2, p_video=1.0, seed=1)


@dataclass
class CaptionDataset:
    audio: np.ndarray
    video: np.ndarray
    caption: np.ndarray
    next_caption: np.ndarray
    spec: TaskSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.int64)
        self.video = np.asarray(self.video, dtype=np.int64)
        self.caption = np.asarray(self.caption, dtype=np.int64)
        self.next_caption = np.asarray(self.next_caption, dtype=np.int64)
        n = len(self.audio)
        if not (len(self.video) == len(self.caption) == len(self.next_caption) == n):
            raise DataError("dataset fields have different sample counts")

    def __len__(self):
        return len(self.audio)

    def subset(self, index):
        return CaptionDataset(
            self.audio[index], self.video[index], self.caption[index], self.next_caption[index], self.spec
        )

    def __eq__(self, other):
        if not isinstance(other, CaptionDataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in REQUIRED_KEYS
        )

    def checksum(self):
        h = hashlib.sha256()
        for key in REQUIRED_KEYS:
            arr = getattr(self, key)
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        return h.hexdigest()


def generate_sample(spec, index, code=None):
    """Sample ``index`` of the task; pure in ``(spec, index)``."""
    code = spec.video_code() if code is None else code
    rng = make_rng(spec.seed, f"sample-{index}")
    words = rng.integers(0, spec.caption_vocab, size=spec.caption_len)

    code_set = np.zeros(spec.video_alphabet, dtype=bool)
    code_set[code] = True
    video_noise = np.flatnonzero(~code_set)
    audio_noise = np.arange(spec.caption_vocab, spec.audio_alphabet)

    audio = audio_noise[rng.integers(0, len(audio_noise), size=spec.n_audio)]
    video = video_noise[rng.integers(0, len(video_noise), size=spec.n_video)]
    keep_a = rng.random(spec.caption_len) < spec.p_audio
    keep_v = rng.random(spec.caption_len) < spec.p_video
    slots_a = np.arange(spec.caption_len) * (spec.n_audio // spec.caption_len)
    slots_v = np.arange(spec.caption_len) * (spec.n_video // spec.caption_len)
    audio[slots_a[keep_a]] = words[keep_a]
    video[slots_v[keep_v]] = code[words[keep_v]]

    caption = np.append(words + N_SPECIALS, EOS)
    next_words = (words + spec.shift) % spec.caption_vocab
    next_caption = np.append(next_words + N_SPECIALS, EOS)
    return audio, video, caption, next_caption


def generate(spec, n):
    if n < 1:
        raise DataError(f"need at least one sample, got n={n}")
    code = spec.video_code()
    rows = [generate_sample(spec, i, code) for i in range(n)]
    return CaptionDataset(*(np.stack(col) for col in zip(*rows)), spec=spec)


def recover_caption_from_audio(spec, audio):
    """Read the caption words back from an audio stream by the positional rule."""
    slots = np.arange(spec.caption_len) * (spec.n_audio // spec.caption_len)
    return np.asarray(audio)[..., slots]


def split(dataset, fractions=(0.8, 0.1, 0.1)):
    """Contiguous split into ``len(fractions)`` parts."""
    fractions = np.asarray(fractions, dtype=float)
    if np.any(fractions < 0) or not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9):
        raise DataError(f"split fractions must be non-negative and sum to 1, got {fractions.tolist()}")
    n = len(dataset)
    bounds = np.round(np.cumsum(np.concatenate([[0.0], fractions])) * n).astype(int)
    bounds[-1] = n
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise DataError(f"split would produce an empty part (n={n}, fractions={fractions.tolist()})")
        parts.append(dataset.subset(slice(lo, hi)))
    return tuple(parts)


# ---------------------------------------------------------------------------
# files


def vocab_dict(spec):
    return {
        "specials": dict(SPECIALS),
        "caption": [f"w{k:03d}" for k in range(spec.caption_vocab)],
        "audio": [f"a{k:03d}" for k in range(spec.audio_alphabet)],
        "video": [f"v{k:03d}" for k in range(spec.video_alphabet)],
    }


def dumps_canonical(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_jsonl(dataset, path, vocab_path=None):
    """Write one JSON object per sample; optionally the vocabulary sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(dataset)):
            row = {key: getattr(dataset, key)[i].tolist() for key in REQUIRED_KEYS}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    if vocab_path is not None:
        if dataset.spec is None:
            raise DataError("vocabulary sidecar needs the dataset's task spec")
        Path(vocab_path).write_text(dumps_canonical(vocab_dict(dataset.spec)), encoding="utf-8")


def read_jsonl(path, spec=None):
    rows = {key: [] for key in REQUIRED_KEYS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            for key in REQUIRED_KEYS:
                if key not in obj:
                    raise DataError(f"{path}:{lineno}: missing key {key!r}")
                value = obj[key]
                if not isinstance(value, list) or not all(
                    isinstance(v, int) and not isinstance(v, bool) for v in value
                ):
                    raise DataError(f"{path}:{lineno}: {key!r} must be an integer array")
                rows[key].append(value)
    if not rows["audio"]:
        raise DataError(f"{path}: no samples")
    try:
        arrays = [np.array(rows[key], dtype=np.int64) for key in REQUIRED_KEYS]
    except ValueError:
        raise DataError(f"{path}: samples have inconsistent lengths") from None
    if any(a.ndim != 2 for a in arrays):
        raise DataError(f"{path}: samples have inconsistent lengths")
    return CaptionDataset(*arrays, spec=spec)

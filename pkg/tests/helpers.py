"""Independent oracles shared by the unit tests and the acceptance run."""
from __future__ import annotations

import math

import numpy as np

from avcap import autograd as ag
from avcap.autograd import Tensor
from avcap.layers import DecoderLayerParams, MhaParams, TransformerLayerParams, attention, causal_mask
from avcap.layers import decoder_layer, ffb, mha, transformer_layer
from avcap.rng import make_rng

FD_EPS = 1e-3
FD_TOL = 1e-3


def leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def numeric_grad(f, arrays, k, eps=FD_EPS):
    """Central differences of scalar ``f(arrays)`` w.r.t. ``arrays[k]``."""
    x = arrays[k]
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        hi = f(arrays)
        x[idx] = orig - eps
        lo = f(arrays)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * eps)
    return grad


def rel_error(a, b):
    # gradients that vanish by symmetry (e.g. key biases) compare absolutely
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-6)
    return float(np.linalg.norm(a - b) / denom)


def grad_check(build, inputs, eps=FD_EPS):
    """Max relative error between backward and central differences.

    ``build(tensors)`` returns an output Tensor; a fixed random projection
    turns it into the scalar that is differentiated.
    """
    out = build(inputs)
    proj = make_rng(7, "projection").normal(size=out.shape)
    loss = ag.tsum(ag.mul(out, Tensor(proj))) if out.size > 1 else out
    for t in inputs:
        t.grad = None
    ag.backward(loss)
    analytic = [t.grad.copy() for t in inputs]

    arrays = [t.data for t in inputs]

    def scalar(arrs):
        with ag.no_grad():
            ts = [Tensor(a) for a in arrs]
            o = build(ts).data
        return float(np.sum(o * proj)) if o.size > 1 else float(o)

    return max(rel_error(analytic[k], numeric_grad(scalar, arrays, k, eps)) for k in range(len(inputs)))


def _dims(rng, lo=2, hi=5, n=2):
    return [int(d) for d in rng.integers(lo, hi + 1, size=n)]


def _mha_params(rng, dim, heads):
    p = MhaParams.init(rng, dim, heads)
    for t in (p.wq, p.wk, p.wv, p.wo):
        t.data = rng.normal(size=t.shape) * 0.5
    for t in (p.bq, p.bk, p.bv, p.bo):
        t.data = rng.normal(size=t.shape) * 0.1
    return p


def _perturb(params, rng, scale=0.5):
    from avcap.layers import named_parameters

    tensors = [t for _, t in named_parameters(params)]
    for t in tensors:
        t.data = t.data + rng.normal(size=t.shape) * scale * (0.2 if t.ndim == 1 else 1.0)
    return tensors


def case_add(rng):
    m, n = _dims(rng)
    row = rng.random() < 0.5
    return (lambda t: ag.add(t[0], t[1])), [leaf(rng, (m, n)), leaf(rng, (n,) if row else (m, n))]


def case_sub(rng):
    m, n = _dims(rng)
    return (lambda t: ag.sub(t[0], t[1])), [leaf(rng, (m, n)), leaf(rng, (m, n))]


def case_mul(rng):
    m, n = _dims(rng)
    row = rng.random() < 0.5
    return (lambda t: ag.mul(t[0], t[1])), [leaf(rng, (m, n)), leaf(rng, (n,) if row else (m, n))]


def case_scale(rng):
    c = float(rng.normal())
    return (lambda t: ag.scale(t[0], c)), [leaf(rng, tuple(_dims(rng)))]


def case_gelu(rng):
    return (lambda t: ag.gelu(t[0])), [leaf(rng, tuple(_dims(rng)), 2.0)]


def case_matmul(rng):
    m, k, n = _dims(rng, n=3)
    return (lambda t: ag.matmul(t[0], t[1])), [leaf(rng, (m, k)), leaf(rng, (k, n))]


def case_matmul_batched(rng):
    b, m, k, n = _dims(rng, n=4)
    shared = rng.random() < 0.5
    return (lambda t: ag.matmul(t[0], t[1])), [leaf(rng, (b, m, k)), leaf(rng, (k, n) if shared else (b, k, n))]


def case_transpose(rng):
    return (lambda t: ag.transpose(t[0])), [leaf(rng, tuple(_dims(rng)))]


def case_reshape(rng):
    m, n = _dims(rng)
    return (lambda t: ag.reshape(t[0], (n, m))), [leaf(rng, (m, n))]


def case_concat(rng):
    m1, m2, n = _dims(rng, n=3)
    return (lambda t: ag.concat([t[0], t[1]], axis=0)), [leaf(rng, (m1, n)), leaf(rng, (m2, n))]


def case_take(rng):
    m, n = _dims(rng, lo=3)
    return (lambda t: t[0][1:m, 0:n - 1]), [leaf(rng, (m, n))]


def case_gather_rows(rng):
    v, d = _dims(rng)
    ids = rng.integers(0, v, size=int(rng.integers(1, 6)))
    return (lambda t: ag.gather_rows(t[0], ids)), [leaf(rng, (v, d))]


def case_repeat_batch(rng):
    b = int(rng.integers(2, 5))
    return (lambda t: ag.repeat_batch(t[0], b)), [leaf(rng, tuple(_dims(rng)))]


def case_sum(rng):
    axis = [None, 0, 1][int(rng.integers(0, 3))]
    return (lambda t: ag.tsum(t[0], axis)), [leaf(rng, tuple(_dims(rng)))]


def case_mean(rng):
    axis = [None, 0, 1][int(rng.integers(0, 3))]
    return (lambda t: ag.mean(t[0], axis)), [leaf(rng, tuple(_dims(rng)))]


def case_softmax(rng):
    axis = int(rng.integers(0, 2))
    return (lambda t: ag.softmax(t[0], axis=axis)), [leaf(rng, tuple(_dims(rng)), 2.0)]


def case_softmax_masked(rng):
    n = int(rng.integers(2, 6))
    mask = causal_mask(n)
    return (lambda t: ag.softmax(t[0], axis=-1, mask=mask)), [leaf(rng, (n, n), 2.0)]


def case_layer_norm(rng):
    m, n = _dims(rng)
    x = rng.normal(size=(m, n))
    # near-constant rows make the function too curved for a 1e-3 central difference
    while (x.std(axis=1) < 0.3).any():
        x = rng.normal(size=(m, n))
    x = Tensor(x, requires_grad=True)
    return (lambda t: ag.layer_norm(t[0], t[1], t[2])), [x, leaf(rng, (n,)), leaf(rng, (n,))]


def case_cross_entropy(rng):
    m, v = _dims(rng, lo=3)
    targets = rng.integers(0, v, size=m)
    targets[0] = 0
    targets[-1] = max(targets[-1], 1)
    return (lambda t: ag.cross_entropy(t[0], targets, ignore_id=0)), [leaf(rng, (m, v), 2.0)]


def case_attention(rng):
    nq, nk, d = _dims(rng, n=3)
    return (lambda t: attention(t[0], t[1], t[2])), [leaf(rng, (nq, d)), leaf(rng, (nk, d)), leaf(rng, (nk, d))]


def case_mha(rng):
    heads = int(rng.integers(1, 3))
    dim = 2 * heads
    nq, nk = _dims(rng)
    p = _mha_params(rng, dim, heads)
    params = [p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo]
    for t in params:
        t.requires_grad = True
    x, y = leaf(rng, (nq, dim)), leaf(rng, (nk, dim))
    return (lambda t: mha(t[0], t[1], MhaParams(heads, *t[2:]))), [x, y] + params


def case_ffb(rng):
    from avcap.layers import FfbParams

    dim = int(rng.integers(2, 5))
    p = FfbParams.init(rng, dim, 2 * dim)
    tensors = _perturb(p, rng)
    x = leaf(rng, (int(rng.integers(2, 5)), dim))
    return (lambda t: ffb(t[0], FfbParams(*t[1:]))), [x] + tensors


def case_transformer_layer(rng):
    """Composed attention + FFB graph, every parameter checked."""
    from avcap.layers import named_parameters

    dim, heads = 4, int(rng.choice([1, 2]))
    p = TransformerLayerParams.init(rng, dim, heads, ffn_mult=1)
    tensors = _perturb(p, rng)
    names = [n for n, _ in named_parameters(p)]
    x, y = leaf(rng, (3, dim)), leaf(rng, (int(rng.integers(2, 5)), dim))

    def build(t):
        for name, tensor in zip(names, t[2:]):
            _assign(p, name, tensor)
        return transformer_layer(t[0], t[1], p)

    return build, [x, y] + tensors


def case_decoder_layer(rng):
    from avcap.layers import named_parameters

    dim, heads = 4, 2
    p = DecoderLayerParams.init(rng, dim, heads, ffn_mult=1)
    tensors = _perturb(p, rng)
    names = [n for n, _ in named_parameters(p)]
    n = int(rng.integers(2, 5))
    x, mem = leaf(rng, (n, dim)), leaf(rng, (int(rng.integers(2, 5)), dim))
    mask = causal_mask(n)

    def build(t):
        for name, tensor in zip(names, t[2:]):
            _assign(p, name, tensor)
        return decoder_layer(t[0], t[1], p, self_mask=mask)

    return build, [x, mem] + tensors


def _assign(obj, dotted, value):
    *path, last = dotted.split(".")
    for part in path:
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    setattr(obj, last, value)


GRADIENT_CASES = {
    "add": case_add,
    "sub": case_sub,
    "mul": case_mul,
    "scale": case_scale,
    "gelu": case_gelu,
    "matmul": case_matmul,
    "matmul_batched": case_matmul_batched,
    "transpose": case_transpose,
    "reshape": case_reshape,
    "concat": case_concat,
    "take": case_take,
    "gather_rows": case_gather_rows,
    "repeat_batch": case_repeat_batch,
    "sum": case_sum,
    "mean": case_mean,
    "softmax": case_softmax,
    "softmax_masked": case_softmax_masked,
    "layer_norm": case_layer_norm,
    "cross_entropy": case_cross_entropy,
    "attention": case_attention,
    "mha": case_mha,
    "ffb": case_ffb,
    "transformer_layer": case_transformer_layer,
    "decoder_layer": case_decoder_layer,
}


def run_gradient_case(name, instance):
    rng = make_rng(instance, f"grad-{name}")
    build, inputs = GRADIENT_CASES[name](rng)
    return grad_check(build, inputs)


# ---------------------------------------------------------------------------
# decoding oracle


def exhaustive_best(model, phi_c, max_len):
    """Best mean log-prob sequence by enumerating every sequence up to ``max_len``.

    Sequences end with EOS, or stop unfinished at ``max_len``. Ties go to the
    lexicographically smallest id tuple (EOS included).
    """
    from avcap.data import BOS1, EOS
    from avcap.decoding import next_logprobs

    best = []

    def visit(prefix, total):
        lp = next_logprobs(model, phi_c, [[BOS1] + list(prefix)])[0]
        for tok in np.flatnonzero(np.isfinite(lp)):
            seq = prefix + (int(tok),)
            score = total + float(lp[tok])
            if tok == EOS or len(seq) == max_len:
                best.append((-score / len(seq), seq))
            else:
                visit(seq, score)

    visit((), 0.0)
    neg, seq = min(best)
    return [t for t in seq if t != EOS], -neg


# ---------------------------------------------------------------------------
# clean-room BLEU (sentence statistics accumulated in a different order)


def reference_bleu(hyps, refs):
    """Independent corpus BLEU-4: per-order totals via dict counting."""
    c = r = 0
    num = [0, 0, 0, 0]
    den = [0, 0, 0, 0]
    for h, rs in zip(hyps, refs):
        if not rs or not isinstance(rs[0], (list, tuple)):
            rs = [rs]
        c += len(h)
        lens = sorted(len(x) for x in rs)
        r += sorted(lens, key=lambda L: (abs(L - len(h)), L))[0]
        for n in range(4):
            grams = {}
            for i in range(len(h) - n):
                g = tuple(h[i:i + n + 1])
                grams[g] = grams.get(g, 0) + 1
            for g, cnt in grams.items():
                mx = 0
                for ref in rs:
                    rc = sum(1 for i in range(len(ref) - n) if tuple(ref[i:i + n + 1]) == g)
                    mx = max(mx, rc)
                num[n] += min(cnt, mx)
            den[n] += max(0, len(h) - n)
    if c == 0 or 0 in num:
        return 0.0
    logs = sum(math.log(num[n]) - math.log(den[n]) for n in range(4)) / 4
    return min(1.0, math.exp(1 - r / c)) * math.exp(logs)


# ---------------------------------------------------------------------------
# fusion


def random_state(rng, n_audio=3, n_video=4, dim=8, globals_=True):
    from avcap.fusion import FusionState

    t = lambda n: Tensor(rng.normal(size=(n, dim)))  # noqa: E731
    return FusionState(t(n_audio), t(n_video), t(1) if globals_ else None, t(1) if globals_ else None)


def global_locality_trial(seed, dim=8, heads=2):
    """Perturb the video locals; the audio branch of a global-cross layer must not move (bitwise)."""
    from avcap.fusion import FusionState, global_cross_layer

    rng = make_rng(seed, "locality")
    pa = TransformerLayerParams.init(rng, dim, heads)
    pv = TransformerLayerParams.init(rng, dim, heads)
    n_a, n_v = (int(v) for v in rng.integers(1, 6, size=2))
    state = random_state(rng, n_a, n_v, dim)
    base = global_cross_layer(state, pa, pv)
    moved = FusionState(state.phi_a, Tensor(state.phi_v.data + rng.normal(size=state.phi_v.shape)), state.g_a, state.g_v)
    out = global_cross_layer(moved, pa, pv)
    audio_same = np.array_equal(base.phi_a.data, out.phi_a.data) and np.array_equal(base.g_a.data, out.g_a.data)
    video_moved = not np.array_equal(base.phi_v.data, out.phi_v.data)
    return audio_same and video_moved


# ---------------------------------------------------------------------------
# tiny models and batches


def tiny_config(kind="lg-merged", seed=0, **overrides):
    from avcap.model import ModelConfig

    cfg = dict(
        audio_vocab=12, video_vocab=12, vocab_size=10, n_audio=4, n_video=4, max_caption_len=4,
        dim=8, heads=2, fusion_kind=kind, fusion_layers=1, decoder_layers=1, ffn_mult=2, seed=seed,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


def tiny_model(kind="lg-merged", seed=0, scale=None, **overrides):
    from avcap.model import CaptionerModel

    model = CaptionerModel(tiny_config(kind, seed, **overrides))
    if scale is not None:
        rng = make_rng(seed, "tiny-scale")
        for _, t in model.named_parameters():
            if t.ndim == 2:
                t.data = rng.normal(size=t.shape) * scale
    return model


def tiny_batch(seed, batch=3, cfg=None):
    from avcap.data import EOS, PAD

    cfg = cfg or tiny_config()
    rng = make_rng(seed, "tiny-batch")
    audio = rng.integers(0, cfg.audio_vocab, size=(batch, cfg.n_audio))
    video = rng.integers(0, cfg.video_vocab, size=(batch, cfg.n_video))

    def captions():
        out = np.full((batch, cfg.max_caption_len), PAD)
        for i in range(batch):
            n = int(rng.integers(1, cfg.max_caption_len))
            out[i, :n] = rng.integers(4, cfg.vocab_size, size=n)
            out[i, n] = EOS
        return out

    return audio, video, captions(), captions()

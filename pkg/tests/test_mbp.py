import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avcap import autograd as ag
from avcap import mbp
from avcap.autograd import Tensor
from avcap.data import BOS1, BOS2
from avcap.mbp import LossTriple, MbpState, MmdGaps, loss_triple, mmd, pretrain_loss, target_weights, update_weights

from .helpers import tiny_batch, tiny_model

gap = st.floats(0, 50, allow_nan=False)
unit = st.floats(0, 1, allow_nan=False)


def test_mmd_examples():
    assert mmd((1.0, 1.5, 1.0)).g_a == 0.25
    assert mmd((1.0, 1.0, 3.0)).g_a == 0.0
    assert abs(mmd((0.7, 0.7, 0.9)).g_v - 0.04) < 1e-15


def test_mmd_uses_detached_values():
    x = Tensor(2.0, requires_grad=True)
    g = mmd(LossTriple(x, ag.scale(x, 1.5), x))
    assert isinstance(g.g_a, float) and g.g_a == 1.0


def test_target_weight_examples():
    assert target_weights(MmdGaps(0.2, 0.2)) == (0.5, 0.5)
    wa, wv = target_weights(MmdGaps(0.3, 0.1), alpha=10)
    assert abs(wa - math.exp(3) / (math.exp(3) + math.exp(1))) < 1e-15
    assert abs(wa - 0.8808) < 1e-4 and abs(wv - 0.1192) < 1e-4
    shifted = target_weights(MmdGaps(1.0, 0.8), alpha=10)
    assert np.allclose(shifted, (wa, wv), atol=1e-12)


def test_target_weights_reject_bad_alpha():
    with pytest.raises(ValueError):
        target_weights(MmdGaps(0.1, 0.2), alpha=0)


@settings(max_examples=300, deadline=None)
@given(gap, gap, st.floats(0.01, 20), st.floats(-30, 30))
def test_target_weight_properties(ga, gv, alpha, c):
    wa, wv = target_weights(MmdGaps(ga, gv), alpha)
    assert abs(wa + wv - 1.0) <= 1e-12
    assert 0 <= wa <= 1 and 0 <= wv <= 1
    sa, sv = target_weights(MmdGaps(ga + c, gv + c), alpha)
    assert abs(sa - wa) <= 1e-12 and abs(sv - wv) <= 1e-12
    if ga > gv:
        assert wa >= wv


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(1e-3, 0.5), st.floats(0.1, 10))
def test_target_weight_strict_monotonicity(ga, gv, delta, alpha):
    lo = target_weights(MmdGaps(ga, gv), alpha)[0]
    hi = target_weights(MmdGaps(ga + delta, gv), alpha)[0]
    assert hi > lo
    assert 0 < lo < 1


def test_update_weights_example():
    s = update_weights(MbpState(0.5, 0.5, beta=0.99), (1.0, 0.0))
    assert s.w_a == 0.99 * 0.5 + 0.01 * 1.0 == 0.505
    assert s.t == 1


def test_first_update_adopts_targets():
    s = update_weights(MbpState(), (0.7, 0.3))
    assert (s.w_a, s.w_v, s.t) == (0.7, 0.3, 1)


@settings(max_examples=100, deadline=None)
@given(unit, unit, st.floats(0.01, 0.99), st.integers(1, 200))
def test_ema_geometric_contraction(w0, target, beta, steps):
    s = MbpState(w0, 1 - w0, beta=beta)
    for _ in range(steps):
        s = update_weights(s, (target, 1 - target))
    assert math.isclose(abs(s.w_a - target), beta**steps * abs(w0 - target), rel_tol=1e-9, abs_tol=1e-12)


def test_ema_sum_preserved_over_random_updates():
    rng = np.random.default_rng(0)
    s = MbpState(0.5, 0.5)
    for _ in range(1000):
        s = update_weights(s, target_weights(MmdGaps(*rng.random(2) * 3)))
        assert abs(s.w_a + s.w_v - 1.0) <= 1e-9


def test_state_validation():
    with pytest.raises(ValueError):
        MbpState(alpha=0)
    with pytest.raises(ValueError):
        MbpState(beta=1.0)


def _triple(a, b, c):
    return LossTriple(Tensor(a, requires_grad=True), Tensor(b, requires_grad=True), Tensor(c, requires_grad=True))


def test_pretrain_loss_examples():
    t = _triple(1.3, 2.0, 4.0)
    assert pretrain_loss(t, MbpState(0.0, 0.0)).item() == 1.3
    same = _triple(0.8, 0.8, 0.8)
    assert abs(pretrain_loss(same, MbpState(0.5, 0.5)).item() - 1.6) < 1e-15


def test_loss_triple_uniform_head():
    model = tiny_model()
    model.params.head_w.data[:] = 0.0
    audio, video, cap, _ = tiny_batch(0)
    t, pnc = loss_triple(model, audio, video, cap)
    v = model.config.vocab_size
    assert pnc is None
    for x in t.values():
        assert abs(x - math.log(v)) < 1e-12


def test_loss_triple_equals_separate_passes():
    model = tiny_model(scale=0.5)
    audio, video, cap, nxt = tiny_batch(1)
    t, pnc = loss_triple(model, audio, video, cap, nxt)
    for loss, modality in zip(t.values(), ("av", "a", "v")):
        assert abs(loss - model.caption_loss(audio, video, cap, modality, BOS1).item()) < 1e-12
    assert abs(pnc.item() - model.caption_loss(audio, video, nxt, "av", BOS2).item()) < 1e-12


def test_zero_masked_loss_equals_manual_zeroing():
    model = tiny_model(scale=0.5)
    audio, video, cap, _ = tiny_batch(2)
    phi_a, _ = model.encode_inputs(audio, video)
    manual = model.decoder_loss(model.fuse(phi_a, Tensor(np.zeros(phi_a.shape[:-2] + (model.config.n_video, 8)))), cap)
    assert abs(manual.item() - model.caption_loss(audio, video, cap, "a").item()) < 1e-14


def test_pretrain_loss_gradient_is_weighted_sum():
    audio, video, cap, _ = tiny_batch(3)
    state = MbpState(0.3, 0.7)

    def grads(select):
        model = tiny_model(scale=0.5)
        t, _ = loss_triple(model, audio, video, cap)
        ag.backward(select(t))
        return [p.grad.copy() if p.grad is not None else np.zeros(p.shape) for p in model.parameters()]

    total = grads(lambda t: pretrain_loss(t, state))
    parts = [grads(lambda t, k=k: getattr(t, k)) for k in ("av", "a", "v")]
    for g, g_av, g_a, g_v in zip(total, *parts):
        assert np.allclose(g, g_av + 0.3 * g_a + 0.7 * g_v, atol=1e-12)


def test_step_helper():
    state, gaps = mbp.step(MbpState(), (1.0, 1.5, 1.1))
    assert gaps.g_a == 0.25
    assert state.initialized and abs(state.w_a + state.w_v - 1) < 1e-12

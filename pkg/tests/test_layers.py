import json
import math
from pathlib import Path

import numpy as np
import pytest

from avcap import autograd as ag
from avcap.autograd import Tensor
from avcap.layers import (
    EmbeddingTables,
    MhaParams,
    TransformerLayerParams,
    attention,
    causal_mask,
    count_parameters,
    embed,
    mha,
    transformer_layer,
)
from avcap.rng import make_rng

FIXTURE = Path(__file__).parent / "fixtures" / "transformer_layer_golden.json"


def _layer(seed, dim=4, heads=2):
    rng = make_rng(seed, "layer-test")
    p = TransformerLayerParams.init(rng, dim, heads)
    for t in (p.attn.wq, p.attn.wk, p.attn.wv, p.attn.wo, p.ffb.w1, p.ffb.w2):
        t.data = rng.normal(size=t.shape) * 0.5
    return p


def test_attention_singleton_returns_value_row():
    v = Tensor([[0.3, -1.2]])
    out = attention(Tensor([[5.0, 1.0]]), Tensor([[2.0, 7.0]]), v)
    assert np.array_equal(out.data, v.data)


def test_attention_symmetric_keys_average_values():
    out = attention(Tensor([[1.0]]), Tensor([[1.0], [1.0]]), Tensor([[2.0], [4.0]]))
    assert np.allclose(out.data, [[3.0]], atol=1e-15)


def test_attention_hand_case():
    q = np.array([[1.0, 0.0], [0.5, -1.0]])
    k = np.array([[1.0, 1.0], [0.0, 2.0], [-1.0, 0.5]])
    v = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]])
    expected = []
    for qi in q:
        scores = [sum(a * b for a, b in zip(qi, kj)) / math.sqrt(2) for kj in k]
        z = sum(math.exp(s) for s in scores)
        w = [math.exp(s) / z for s in scores]
        expected.append([sum(w[j] * v[j][c] for j in range(3)) for c in range(2)])
    out = attention(Tensor(q), Tensor(k), Tensor(v))
    assert np.allclose(out.data, expected, atol=1e-14)


def test_attention_masked_and_degenerate():
    q = Tensor(np.ones((2, 2)))
    kv = Tensor(np.arange(4.0).reshape(2, 2))
    out = attention(q, kv, kv, mask=causal_mask(2))
    assert np.allclose(out.data[0], kv.data[0])
    with pytest.raises(ValueError, match="degenerate attention row"):
        attention(q, kv, kv, mask=np.array([[False, False], [True, True]]))


def test_attention_weight_rows_sum_to_one():
    rng = np.random.default_rng(0)
    store = []
    attention(Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(7, 3))), Tensor(rng.normal(size=(7, 3))), store=store)
    assert np.allclose(store[0].sum(axis=-1), 1.0, atol=1e-9)


def test_mha_single_head_is_projected_attention():
    rng = make_rng(1, "mha")
    p = MhaParams.init(rng, 4, 1)
    x, y = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 4)))
    q = x.data @ p.wq.data + p.bq.data
    k = y.data @ p.wk.data + p.bk.data
    v = y.data @ p.wv.data + p.bv.data
    expected = attention(Tensor(q), Tensor(k), Tensor(v)).data @ p.wo.data + p.bo.data
    assert np.allclose(mha(x, y, p).data, expected, atol=1e-14)


def test_mha_two_heads_manual():
    rng = make_rng(2, "mha")
    p = MhaParams.init(rng, 4, 2)
    for t in (p.wq, p.wk, p.wv, p.wo):
        t.data = rng.normal(size=t.shape)
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    q, k, v = x @ p.wq.data, y @ p.wk.data, y @ p.wv.data
    heads = []
    for h in range(2):
        cols = slice(2 * h, 2 * h + 2)
        s = q[:, cols] @ k[:, cols].T / math.sqrt(2)
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        heads.append(w @ v[:, cols])
    expected = np.concatenate(heads, axis=1) @ p.wo.data
    assert np.allclose(mha(Tensor(x), Tensor(y), p).data, expected, atol=1e-13)


@pytest.mark.parametrize("nq,nv", [(1, 1), (3, 7), (6, 2)])
def test_mha_output_shape(nq, nv):
    p = MhaParams.init(make_rng(0), 8, 4)
    assert mha(Tensor(np.ones((nq, 8))), Tensor(np.ones((nv, 8))), p).shape == (nq, 8)


def test_mha_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        MhaParams.init(make_rng(0), 6, 4)


def test_transformer_layer_shape_and_permutations():
    p = _layer(0)
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    out = transformer_layer(Tensor(x), Tensor(y), p).data
    assert out.shape == x.shape
    perm = rng.permutation(5)
    assert np.allclose(transformer_layer(Tensor(x), Tensor(y[perm]), p).data, out, atol=1e-9)
    qperm = rng.permutation(3)
    assert np.allclose(transformer_layer(Tensor(x[qperm]), Tensor(y), p).data, out[qperm], atol=1e-12)


def test_transformer_layer_degenerate_form():
    p = _layer(3)
    for t in (p.attn.wo, p.attn.bo, p.ffb.w2, p.ffb.b2):
        t.data = np.zeros(t.shape)
    x = np.random.default_rng(5).normal(size=(3, 4))
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    expected = ag.layer_norm(ag.layer_norm(Tensor(x), one, zero), one, zero).data
    assert np.array_equal(transformer_layer(Tensor(x), Tensor(x), p).data, expected)


def test_transformer_layer_golden_fixture():
    golden = json.loads(FIXTURE.read_text())
    p = _layer(golden["seed"])
    out = transformer_layer(Tensor(golden["x"]), Tensor(golden["y"]), p).data
    assert np.allclose(out, golden["out"], rtol=0, atol=1e-12)


def test_causal_mask():
    assert causal_mask(1).tolist() == [[True]]
    m = causal_mask(3)
    assert m.sum() == 6
    assert all(m[i, j] == (j <= i) for i in range(3) for j in range(3))
    with pytest.raises(ValueError):
        causal_mask(0)


def test_causal_self_attention_ignores_future_positions():
    p = _layer(6)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(5, 4))
    base = transformer_layer(Tensor(x), Tensor(x), p, mask=causal_mask(5)).data
    for i in range(5):
        x2 = x.copy()
        x2[i + 1:] += rng.normal(size=x2[i + 1:].shape)
        out = transformer_layer(Tensor(x2), Tensor(x2), p, mask=causal_mask(5)).data
        assert np.array_equal(out[: i + 1], base[: i + 1])


def _tables(seed=0, vocab=6, max_len=5, types=3, dim=4):
    return EmbeddingTables.init(make_rng(seed), vocab, max_len, types, dim)


def test_embed_zero_tables():
    t = _tables()
    for x in (t.token, t.position, t.token_type):
        x.data = np.zeros(x.shape)
    assert np.array_equal(embed(t, [1, 2, 3], type_id=1).data, np.zeros((3, 4)))


def test_embed_matches_manual_gather_and_type_additivity():
    t = _tables(1)
    ids = np.array([[5, 0, 2], [1, 1, 4]])
    out = embed(t, ids, type_id=2).data
    manual = t.token.data[ids] + t.position.data[np.arange(3)] + t.token_type.data[2]
    assert np.array_equal(out, manual)
    diff = embed(t, ids, type_id=0).data - embed(t, ids, type_id=1).data
    assert np.allclose(diff, np.broadcast_to(t.token_type.data[0] - t.token_type.data[1], diff.shape), atol=1e-15)


def test_embed_out_of_range():
    t = _tables()
    with pytest.raises(IndexError):
        embed(t, [6])
    with pytest.raises(IndexError):
        embed(t, [0, 1, 2, 3, 4, 5])
    with pytest.raises(IndexError):
        embed(t, [0], type_id=3)


def test_parameter_init_statistics():
    rng = make_rng(0)
    p = TransformerLayerParams.init(rng, 64, 4)
    assert abs(p.attn.wq.data.std() - 0.02) < 0.002
    assert not p.attn.bq.data.any() and not p.ffb.b1.data.any()
    assert count_parameters(p) == 4 * (64 * 64 + 64) + (64 * 256 + 256 + 256 * 64 + 64) + 4 * 64

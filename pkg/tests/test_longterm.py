import numpy as np
import pytest

from asamdet.config import Config
from asamdet.decoder import Detector
from asamdet.errors import ConfigError
from asamdet.layers import MultiHeadAttention
from asamdet.longterm import LongTermClassifier, QueryBank, build_bank, long_classify, top_k_rows, window_stack
from asamdet.synthdata import GeneratorConfig, generate_long_video
from asamdet.tensor import Tensor, no_grad

TINY = dict(d=8, n_queries=4, n_stages=1, groups=2, points=2, p_out=4, t_out=4, heads=2, backbone_width=2, frames=2, height=32, width=32)


def tiny_video(n=3):
    return generate_long_video(5, n, GeneratorConfig(frames=2, height=32, width=32, min_size=6, max_size=9))


def test_bank_rows_match_recomputed_top_k():
    model = Detector(Config(**TINY, bank_k=2))
    clips = tiny_video()
    rows = build_bank(model, clips, 2)
    for clip, entry in zip(clips, rows):
        with no_grad():
            last = model.forward(clip.video).last
        prob = last.human_prob()
        idx = sorted(range(len(prob)), key=lambda i: (-prob[i], i))[:2]
        expect = np.array([list(last.queries.spatial.data[i]) + list(last.queries.temporal.data[i]) for i in idx])
        assert np.array_equal(entry, expect)
    assert all(np.array_equal(a, b) for a, b in zip(rows, build_bank(model, clips, 2)))  # pure rebuild


def test_bank_with_k_equal_n_and_k_too_large():
    qs, qt = np.arange(12.0).reshape(4, 3), -np.arange(12.0).reshape(4, 3)
    prob = np.array([0.2, 0.9, 0.5, 0.9])
    rows = top_k_rows(qs, qt, prob, 4)
    assert [int(r[0]) // 3 for r in rows] == [1, 3, 2, 0]
    with pytest.raises(ConfigError):
        top_k_rows(qs, qt, prob, 5)
    with pytest.raises(ConfigError):
        QueryBank(2, 6).add_video(0, [np.zeros((3, 6))])


def test_window_stack_shapes_padding_and_index_oracle():
    rng = np.random.default_rng(0)
    k, d, w = 3, 5, 6
    rows = [rng.normal(size=(k, d)) for _ in range(10)]
    stacked, mask, slots = window_stack(rows, 0, w)
    assert stacked.shape == (w * k, d) and mask.shape == (w * k,)
    assert not mask[: w // 2 * k].any() and np.all(stacked[: w // 2 * k] == 0.0)
    assert mask[w // 2 * k :].all()
    t = 5
    stacked, mask, slots = window_stack(rows, t, w)
    for s in range(w):
        for j in range(k):
            assert np.array_equal(stacked[s * k + j], rows[t - w // 2 + s][j])
            assert slots[s * k + j] == s
    assert mask.all()
    assert window_stack(rows, 9, w)[1].sum() == (w // 2 + 1) * k
    for bad in (0, 1, 3):
        with pytest.raises(ConfigError):
            window_stack(rows, 0, bad)


def test_full_scale_window_size():
    rows = [np.zeros((5, 4))] * 100
    assert window_stack(rows, 50, 60)[0].shape[0] == 300


def test_uniform_attention_gives_mean_of_rows():
    rng = np.random.default_rng(1)
    mha = MultiHeadAttention(4, 4, 2, rng)
    mha.q_proj.weight.data[:] = 0.0
    mha.q_proj.bias.data[:] = 0.0
    for lin in (mha.v_proj, mha.out_proj):
        lin.weight.data[:] = np.eye(4)
        lin.bias.data[:] = 0.0
    bank = rng.normal(size=(5, 4))
    out = mha(Tensor(rng.normal(size=(3, 4))), Tensor(bank)).data
    np.testing.assert_allclose(out, np.tile(bank.mean(0), (3, 1)), atol=1e-14)


def test_masked_rows_equal_dropping_them():
    rng = np.random.default_rng(2)
    mha = MultiHeadAttention(6, 6, 3, rng)
    q = Tensor(rng.normal(size=(4, 6)))
    kv = rng.normal(size=(7, 6))
    mask = np.array([False, True, True, False, True, False, True])
    kv_pad = kv.copy()
    kv_pad[~mask] = 1e3  # garbage in padding must not leak
    masked = mha(q, Tensor(kv_pad), mask).data
    weights = mha.last_weights
    assert np.all(weights[..., ~mask] == 0.0)
    np.testing.assert_allclose(weights.sum(-1), 1.0, atol=1e-12)
    dropped = mha(q, Tensor(kv[mask])).data
    np.testing.assert_allclose(masked, dropped, atol=1e-12)


def test_classifier_attention_weights_normalised_per_layer():
    rng = np.random.default_rng(3)
    clf = LongTermClassifier(8, 4, 3, 2, 5, rng)
    rows = [rng.normal(size=(2, 8)) for _ in range(3)]
    bank, mask, slots = window_stack(rows, 0, 4)
    logits, fell_back = long_classify(clf, Tensor(rng.normal(size=(3, 8))), bank, mask, slots)
    assert logits.shape == (3, 5) and not fell_back
    assert len(clf.attn) == 3
    for attn in clf.attn:
        np.testing.assert_allclose(attn.last_weights.sum(-1), 1.0, atol=1e-12)
        assert np.all(attn.last_weights[..., ~mask] == 0.0)


def test_fully_masked_window_falls_back():
    rng = np.random.default_rng(4)
    clf = LongTermClassifier(8, 2, 1, 2, 5, rng)
    s = Tensor(rng.normal(size=(3, 8)))
    short = lambda x: Tensor(np.full((3, 5), 7.0))
    logits, fell_back = long_classify(clf, s, np.zeros((4, 8)), np.zeros(4, dtype=bool), np.repeat(np.arange(2), 2), short)
    assert fell_back and np.all(logits.data == 7.0)
    with pytest.raises(ConfigError):
        long_classify(clf, s, np.zeros((4, 8)), np.zeros(4, dtype=bool), np.repeat(np.arange(2), 2))


def test_zero_output_projection_reduces_to_function_of_queries():
    rng = np.random.default_rng(5)
    clf = LongTermClassifier(8, 2, 3, 2, 5, rng)
    for attn in clf.attn:
        attn.out_proj.weight.data[:] = 0.0
        attn.out_proj.bias.data[:] = 0.0
    s = Tensor(rng.normal(size=(3, 8)))
    outs = []
    for _ in range(2):
        rows = [rng.normal(size=(2, 8))]  # the video holds only the current clip
        bank, mask, slots = window_stack(rows, 0, 2)
        outs.append(clf(s, bank, mask, slots).data)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_long_model_needs_window_and_matching_bank():
    from asamdet.trainer import train

    cfg = Config(**TINY, phase="long", steps=1)
    with pytest.raises(ConfigError):
        Detector(cfg).forward(np.zeros((1, 2, 32, 32)))
    with pytest.raises(ConfigError):
        train(cfg, tiny_video(), QueryBank(2, 8))
    with pytest.raises(ConfigError):
        train(cfg, tiny_video(), None)

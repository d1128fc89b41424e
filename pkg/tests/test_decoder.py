import numpy as np
import pytest

import asamdet.tensor as T
from asamdet.config import Config
from asamdet.decoder import Detector, asam_forward
from asamdet.geometry import QuerySet
from asamdet.losses import total_loss
from asamdet.synthdata import GeneratorConfig, generate_clip
from asamdet.tensor import Tensor, grad_check, no_grad

TINY = dict(d=8, n_queries=3, n_stages=2, groups=2, points=2, p_out=4, t_out=4, heads=2, backbone_width=2, frames=2, height=32, width=32)


def tiny_clip(seed=0):
    return generate_clip(seed, GeneratorConfig(frames=2, height=32, width=32, min_size=6, max_size=10, max_actors=2))


@pytest.fixture(scope="module")
def model():
    return Detector(Config(**TINY))


def test_module_preserves_n_and_zero_ffn_keeps_positions(model):
    clip = tiny_clip()
    with no_grad():
        space = model.feature_space(clip.video)
        q0 = model.initial_queries()
        q1 = asam_forward(model.stages[0], q0, space)
    assert q1.spatial.shape == (3, 8) and q1.temporal.shape == (3, 8) and q1.positional.shape == (3, 4)
    assert np.array_equal(q1.positional.data, q0.positional.data)  # position FFN starts at zero


def test_trace_has_one_entry_per_stage():
    clip = tiny_clip()
    with no_grad():
        assert len(Detector(Config(**TINY)).forward(clip.video)) == 2
        one = Detector(Config(**{**TINY, "n_stages": 1})).forward(clip.video)
    assert len(one) == 1 and one.last.points.shape == (3, 2, 2, 2, 3)


def test_stage_two_consumes_stage_one(model):
    clip = tiny_clip()
    with no_grad():
        space = model.feature_space(clip.video)
        q1, _ = model.stages[0](model.initial_queries(), space)
        base, _ = model.stages[1](q1, space)
        bumped = QuerySet(q1.spatial + 0.1, q1.temporal, q1.positional)
        moved, _ = model.stages[1](bumped, space)
    assert not np.allclose(model.predict_human(base.spatial).data, model.predict_human(moved.spatial).data)


def test_heads_probabilities_and_ranges(model):
    rng = np.random.default_rng(0)
    q_s, q_t = Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(5, 8)))
    probs = T.softmax(model.predict_human(q_s), axis=-1).data
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-15)
    np.testing.assert_array_equal(T.softmax(Tensor(np.zeros((2, 2))), axis=-1).data, 0.5)
    scores = T.sigmoid(model.predict_actions_short(q_s, q_t)).data
    assert np.all((scores > 0) & (scores < 1))
    assert np.all(T.sigmoid(Tensor(np.zeros((2, 3)))).data == 0.5)
    perm = np.array([3, 0, 4, 1, 2])
    permuted = model.predict_actions_short(Tensor(q_s.data[perm]), Tensor(q_t.data[perm])).data
    np.testing.assert_array_equal(permuted, model.predict_actions_short(q_s, q_t).data[perm])


def test_query_permutation_equivariance():
    clip = tiny_clip()
    m = Detector(Config(**TINY))
    with no_grad():
        base = m.forward(clip.video)
        perm = np.array([2, 0, 1])
        m.init_spatial.data = m.init_spatial.data[perm]
        m.init_temporal.data = m.init_temporal.data[perm]
        shuffled = m.forward(clip.video)
    for a, b in zip(base.stages, shuffled.stages):
        np.testing.assert_allclose(b.human_logits.data, a.human_logits.data[perm], atol=1e-12)
        np.testing.assert_allclose(b.action_logits.data, a.action_logits.data[perm], atol=1e-12)
        np.testing.assert_allclose(b.boxes.data, a.boxes.data[perm], atol=1e-12)
        np.testing.assert_allclose(b.points.data, a.points.data[perm], atol=1e-12)


def test_forward_deterministic():
    clip = tiny_clip(3)
    with no_grad():
        a = Detector(Config(**TINY)).forward(clip.video)
        b = Detector(Config(**TINY)).forward(clip.video)
    for x, y in zip(a.stages, b.stages):
        assert np.array_equal(x.action_logits.data, y.action_logits.data)
        assert np.array_equal(x.boxes.data, y.boxes.data)


def test_infer_threshold(model):
    clip = tiny_clip()
    assert model.infer(clip.video, threshold=1.0) == []
    dets = model.infer(clip.video, threshold=0.0)
    assert 0 < len(dets) <= 3
    assert Config().threshold == 0.6
    for d in dets:
        assert 0.0 <= d.human_prob <= 1.0 and np.all((d.action_scores >= 0) & (d.action_scores <= 1))


def test_end_to_end_gradient_tiny_model():
    clip = tiny_clip(1)
    # positions stay attached so the tape sees every path the finite differences see;
    # dz_init keeps points off the z = 5 clamp, where the derivative is one-sided
    m = Detector(Config(**TINY, detach_positions=False, dz_init=-0.5))
    # jitter every parameter: zero-initialised biases put ReLU inputs exactly on the kink
    rng = np.random.default_rng(7)
    for _, p in m.named_parameters():
        p.data = p.data + rng.normal(0, 0.05, p.shape)
    labels = clip.label_matrix(8)
    frame = (32, 32)
    with no_grad():
        fixed = total_loss(m.forward(clip.video), clip.boxes, labels, frame).assignments

    def f(*_):
        return total_loss(m.forward(clip.video), clip.boxes, labels, frame, assignments=fixed).total

    named = dict(m.named_parameters())
    probe = [
        named["stages.0.offsets.linear.weight"],
        named["stages.1.mixer.spatial.generator.weight"],
        named["stages.0.mixer.temporal.generator.bias"],
        named["stages.1.pos_ffn.layers.1.weight"],
        named["stages.0.attn_s.q_proj.weight"],
        named["featspace.lateral_w.0"],
        named["backbone.stem_w"],
        named["human_head.layers.1.weight"],
        named["action_head.layers.0.weight"],
        m.init_spatial,
        m.init_temporal,
    ]
    # floor 1e-4: entries below it are compared absolutely, loss-scale roundoff is ~1e-9
    assert grad_check(f, probe, max_entries=12, floor=1e-4) < 1e-4
    assert grad_check(f, m.parameters(), max_entries=3, floor=1e-4) < 1e-4

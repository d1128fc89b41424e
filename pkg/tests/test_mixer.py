import math

import numpy as np
import pytest

from asamdet.errors import ConfigError, DimensionError
from asamdet.mixer import DualMixer, MixingBranch, mix, spatial_mix, temporal_mix
from asamdet.tensor import Tensor, grad_check


def _ln(v, eps=1e-5):
    m = sum(v) / len(v)
    var = sum((a - m) ** 2 for a in v) / len(v)
    return [(a - m) / math.sqrt(var + eps) for a in v]


def scalar_branch(q, F, m_c, m_p, out_w, out_b, pool_axis):
    """Loop recomputation of one group-1 branch for one query.

    F: [T, P, Dg]; m_c: [Dg, Dg]; m_p: [n_in, n_out].
    """
    T_, P, dg = len(F), len(F[0]), len(F[0][0])
    if pool_axis == "time":
        pooled = [[sum(F[t][p][c] for t in range(T_)) / T_ for c in range(dg)] for p in range(P)]
    else:
        pooled = [[sum(F[t][p][c] for p in range(P)) / P for c in range(dg)] for t in range(T_)]
    n_in = len(pooled)
    cm = []
    for i in range(n_in):
        row = [sum(pooled[i][a] * m_c[a][b] for a in range(dg)) for b in range(dg)]
        cm.append([max(0.0, v) for v in _ln(row)])
    n_out = len(m_p[0])
    pcm = []
    for c in range(dg):
        row = [sum(cm[i][c] * m_p[i][o] for i in range(n_in)) for o in range(n_out)]
        pcm.append([max(0.0, v) for v in _ln(row)])
    flat = [pcm[c][o] for c in range(dg) for o in range(n_out)]
    upd = [out_b[k] + sum(flat[j] * out_w[j][k] for j in range(len(flat))) for k in range(len(q))]
    return _ln([q[k] + upd[k] for k in range(len(q))])


@pytest.mark.parametrize("which", ["spatial", "temporal"])
def test_tiny_branch_matches_scalar_recomputation(which):
    rng = np.random.default_rng(0)
    mixer = DualMixer(d=2, groups=1, points=2, frames=2, p_out=2, t_out=2, rng=rng)
    branch = mixer.spatial if which == "spatial" else mixer.temporal
    q = rng.normal(size=(1, 2))
    feats = rng.normal(size=(1, 1, 2, 2, 2))
    out = branch(Tensor(q), Tensor(feats)).data[0]
    m_c, m_p = branch.mixing_params(Tensor(q))
    ref = scalar_branch(
        q[0].tolist(),
        feats[0, 0].tolist(),
        m_c.data[0, 0].tolist(),
        m_p.data[0, 0].tolist(),
        branch.out_proj.weight.data.tolist(),
        branch.out_proj.bias.data.tolist(),
        "time" if which == "spatial" else "space",
    )
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def test_intermediate_shapes():
    rng = np.random.default_rng(1)
    br = MixingBranch(8, 2, 3, 5, pool_axis=2, rng=rng)
    q = Tensor(rng.normal(size=(4, 8)))
    feats = Tensor(rng.normal(size=(4, 2, 6, 3, 4)))
    m_c, m_p = br.mixing_params(q)
    assert m_c.shape == (4, 2, 4, 4) and m_p.shape == (4, 2, 3, 5)
    cm = br.channel_mix(br.pool(feats), m_c)
    assert cm.shape == (4, 2, 3, 4)  # [P_in, Dg] per group
    assert br.point_mix(cm, m_p).shape == (4, 2, 4, 5)  # [Dg, P_out] per group


def test_constant_over_pooled_axis_is_identity():
    rng = np.random.default_rng(2)
    mixer = DualMixer(8, 2, 3, 4, 6, 6, rng)
    one_frame = rng.normal(size=(2, 2, 1, 3, 4))
    q = Tensor(rng.normal(size=(2, 8)))
    const_t = Tensor(np.repeat(one_frame, 4, axis=2))
    np.testing.assert_allclose(mixer.spatial.pool(const_t).data, one_frame[:, :, 0], atol=1e-15)
    one_point = rng.normal(size=(2, 2, 4, 1, 4))
    const_p = Tensor(np.repeat(one_point, 3, axis=3))
    np.testing.assert_allclose(mixer.temporal.pool(const_p).data, one_point[:, :, :, 0], atol=1e-15)
    assert spatial_mix(mixer.spatial, q, const_t).shape == (2, 8)
    assert temporal_mix(mixer.temporal, q, const_p).shape == (2, 8)


def test_gradient_through_both_branches():
    rng = np.random.default_rng(3)
    mixer = DualMixer(6, 2, 2, 2, 3, 3, rng)
    q_s, q_t = Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=(2, 6)))
    feats = Tensor(rng.normal(size=(2, 2, 2, 2, 3)))
    w1, w2 = rng.normal(size=(2, 6)), rng.normal(size=(2, 6))

    def f(q_s, q_t, feats, g1, g2):
        a, b = mixer(q_s, q_t, feats)
        return (a * w1).sum() + (b * w2).sum()

    params = [mixer.spatial.generator.weight, mixer.temporal.generator.bias]
    assert grad_check(f, [q_s, q_t, feats, *params], max_entries=30) < 1e-4


def test_single_branch_modes_leave_other_block_untouched():
    rng = np.random.default_rng(4)
    mixer = DualMixer(8, 2, 3, 4, 6, 6, rng)
    q_s, q_t = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8)))
    feats = Tensor(rng.normal(size=(2, 2, 4, 3, 4)))
    s, t = mix(mixer, q_s, q_t, feats, "spatial_only")
    assert t is q_t and not np.array_equal(s.data, q_s.data)
    s, t = mix(mixer, q_s, q_t, feats, "temporal_only")
    assert s is q_s and not np.array_equal(t.data, q_t.data)
    with pytest.raises(ConfigError):
        mix(mixer, q_s, q_t, feats, "sequential")
    with pytest.raises(ConfigError):
        DualMixer(8, 2, 3, 4, 6, 6, rng, strategy="coupled")


def _update(branch, q, feats, adaptive):
    """The branch output minus its residual path, i.e. the projected mixing result."""
    m_c, m_p = branch.mixing_params(q, adaptive)
    pcm = branch.point_mix(branch.channel_mix(branch.pool(feats), m_c), m_p)
    return branch.out_proj(pcm.reshape(q.shape[0], -1)).data


def test_fixed_params_independent_of_query_adaptive_not():
    rng = np.random.default_rng(5)
    mixer = DualMixer(8, 2, 3, 4, 6, 6, rng)
    q = Tensor(rng.normal(size=(2, 8)) * 5)
    one = rng.normal(size=(1, 2, 4, 3, 4))
    feats = Tensor(np.repeat(one, 2, axis=0))
    fixed = _update(mixer.spatial, q, feats, adaptive=False)
    assert np.array_equal(fixed[0], fixed[1])
    adaptive = _update(mixer.spatial, q, feats, adaptive=True)
    assert not np.allclose(adaptive[0], adaptive[1])
    s_fixed, _ = mix(mixer, q, q, feats, "fixed_params")
    assert s_fixed.shape == (2, 8)


def test_zero_generator_weights_reproduce_fixed_params():
    rng = np.random.default_rng(6)
    mixer = DualMixer(8, 2, 3, 4, 6, 6, rng)
    q_s, q_t = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(3, 8)))
    feats = Tensor(rng.normal(size=(3, 2, 4, 3, 4)))
    fixed = mix(mixer, q_s, q_t, feats, "fixed_params")
    for br in (mixer.spatial, mixer.temporal):
        br.generator.weight.data[:] = 0.0
    frozen = mix(mixer, q_s, q_t, feats, "dual")
    for a, b in zip(fixed, frozen):
        np.testing.assert_allclose(a.data, b.data, atol=1e-14)


def test_shape_mismatch_raises():
    rng = np.random.default_rng(7)
    br = MixingBranch(8, 2, 3, 5, pool_axis=2, rng=rng)
    with pytest.raises(DimensionError):
        br(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 2, 4, 7, 4))))
    with pytest.raises(DimensionError):
        br(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 4, 4, 3, 2))))

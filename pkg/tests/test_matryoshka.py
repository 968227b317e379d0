import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_ssm import autodiff as ad
from fewshot_ssm.autodiff import Tensor
from fewshot_ssm.matryoshka import (
    BN_EPS,
    BlockOptions,
    conv_block,
    fragment_and_enhance,
    init_matryoshka,
    inner_module,
    inner_module_checked,
    matryoshka_forward,
    scale_weight,
    update_running_stats,
    validate_scales,
)
from fewshot_ssm.ssm import ssm_scan


def make(width=2, scales=(1, 2), seed=0, **kw):
    return init_matryoshka(np.random.default_rng(seed), width, scales, n_state=3, **kw)


def silu(v):
    return v / (1 + np.exp(-v))


def sigmoid(v):
    return 1 / (1 + np.exp(-v))


def oracle_inner(frag, p):
    y_fw = ssm_scan(p.fw, frag).y.data
    y_bw = ssm_scan(p.bw, frag[::-1]).y.data[::-1]
    if p.gate_fw is not None:
        y_fw = y_fw * silu(frag @ p.gate_fw.weight.data + p.gate_fw.bias.data)
        y_bw = y_bw * silu(frag @ p.gate_bw.weight.data + p.gate_bw.bias.data)
    return np.concatenate([y_fw, y_bw], axis=1) @ p.fuse.weight.data + p.fuse.bias.data


def oracle_conv(x, k):
    """Direct same-padded cross-correlation of ``(cin, H, W)`` with ``(cout, cin, 3, 3)``."""
    cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((k.shape[0], h, w))
    for o in range(k.shape[0]):
        for i in range(h):
            for j in range(w):
                out[o, i, j] = (xp[:, i:i + 3, j:j + 3] * k[o]).sum()
    return out


def oracle_conv_block(x, c, training=True):
    z = oracle_conv(oracle_conv(oracle_conv(x[None], c.k1.data), c.k2.data), c.k3.data)[0]
    if training:
        mu, var = z.mean(), z.var()
    else:
        mu, var = c.running_mean, c.running_var
    return (z - mu) / np.sqrt(var + BN_EPS) * c.gamma.data[0] + c.beta.data[0]


def oracle_outer(x, params):
    y_fw = ssm_scan(params.outer, x).y.data
    y_bw = ssm_scan(params.outer, x[::-1]).y.data[::-1]
    return np.concatenate([y_fw, y_bw], axis=1) @ params.outer_fuse.weight.data + params.outer_fuse.bias.data


# -- scale validation ---------------------------------------------------------


def test_validate_scales_accepts_powers_of_two_including_one():
    assert validate_scales([4, 1, 2], 32) == [1, 2, 4]


@pytest.mark.parametrize("scales,frames", [([3], 12), ([8], 8), ([16], 8), ([2, 2], 8), ([], 8), ([4], 6)])
def test_validate_scales_rejects(scales, frames):
    with pytest.raises(ValueError):
        validate_scales(scales, frames)


def test_inner_directions_are_distinct_and_outer_shared():
    p = make()
    for inner in p.inner.values():
        assert inner.fw is not inner.bw
    assert p.outer_bw is None
    names = list(p.named())
    assert len(names) == len(set(names))
    assert any(n.startswith("inner1.bw.") for n in names)
    assert not any(n.startswith("outer_bw.") for n in names)


# -- inner module ---------------------------------------------------------------


def test_zero_fragment_zero_bias_gives_zero():
    p = make().inner[2]
    p.fuse.bias.data[:] = 0.0
    out = inner_module(np.zeros((2, 2)), p)
    np.testing.assert_array_equal(out.data, 0.0)


def test_single_frame_fragment():
    p = make().inner[1]
    frag = np.random.default_rng(1).normal(size=(1, 2))
    np.testing.assert_allclose(inner_module(frag, p).data, oracle_inner(frag, p), atol=1e-13)


@pytest.mark.parametrize("gate", [True, False])
def test_inner_module_matches_composition(gate):
    p = make(width=3, scales=(2,), inner_gate=gate).inner[2]
    frag = np.random.default_rng(2).normal(size=(2, 3))
    np.testing.assert_allclose(inner_module(frag, p).data, oracle_inner(frag, p), atol=1e-13)


def test_inner_module_checked_rejects_wrong_length():
    p = make().inner[2]
    with pytest.raises(ad.ShapeError):
        inner_module_checked(np.zeros((3, 2)), p, 2)


def test_fragment_rejects_full_length_scale():
    p = make(scales=(4,)).inner[4]
    with pytest.raises(ValueError):
        fragment_and_enhance(np.zeros((4, 2)), 4, p)


def test_zero_inner_module_is_pure_residual():
    p = make().inner[2]
    p.fuse.weight.data[:] = 0.0
    p.fuse.bias.data[:] = 0.0
    x = np.random.default_rng(3).normal(size=(8, 2))
    np.testing.assert_array_equal(fragment_and_enhance(x, 2, p).data, x)


def test_fragments_processed_independently():
    p = make().inner[2]
    x = np.random.default_rng(4).normal(size=(4, 2))
    want = np.concatenate([oracle_inner(x[:2], p), oracle_inner(x[2:], p)]) + x
    np.testing.assert_allclose(fragment_and_enhance(x, 2, p).data, want, atol=1e-13)


def test_sliding_fragments_average_windows():
    p = make().inner[2]
    x = np.random.default_rng(5).normal(size=(4, 2))
    outs = [oracle_inner(x[i:i + 2], p) for i in range(3)]
    want = np.stack([outs[0][0], (outs[0][1] + outs[1][0]) / 2, (outs[1][1] + outs[2][0]) / 2, outs[2][1]]) + x
    np.testing.assert_allclose(fragment_and_enhance(x, 2, p, "sliding").data, want, atol=1e-13)


# -- conv block and gate --------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_conv_block_preserves_shape(frames, width, seed):
    c = make(seed=seed % 1000).conv
    x = np.random.default_rng(seed).normal(size=(frames, width))
    out, _ = conv_block(x, c)
    assert out.shape == (frames, width)


def test_zero_kernels_zero_shift_gives_zero():
    c = make().conv
    for k in (c.k1, c.k2, c.k3):
        k.data[:] = 0.0
    out, _ = conv_block(np.random.default_rng(0).normal(size=(4, 3)), c)
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv_hand_computed_values():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    k[0, 0, 1, 2] = 2.0  # centre plus twice the right neighbour
    want = np.array([[1 + 4, 2 + 6, 3], [4 + 10, 5 + 12, 6], [7 + 16, 8 + 18, 9]], dtype=float)
    np.testing.assert_array_equal(ad.conv2d(x, k).data[0, 0], want)


@pytest.mark.parametrize("training", [True, False])
def test_conv_block_matches_oracle(training):
    c = make().conv
    c.gamma.data[:] = 1.3
    c.beta.data[:] = -0.2
    update_running_stats(c, (0.4, 2.0))
    x = np.random.default_rng(6).normal(size=(5, 4))
    out, stats = conv_block(x, c, training)
    np.testing.assert_allclose(out.data, oracle_conv_block(x, c, training), atol=1e-12)
    assert (stats is None) == (not training)


def test_running_stats_update():
    c = make().conv
    update_running_stats(c, (1.0, 3.0))
    assert c.running_mean == pytest.approx(0.1)
    assert c.running_var == pytest.approx(0.9 + 0.3)


def test_gate_half_when_conv_and_input_vanish():
    c = make().conv
    for k in (c.k1, c.k2, c.k3):
        k.data[:] = 0.0
    gate, _ = scale_weight(np.random.default_rng(0).normal(size=(4, 2)), np.zeros((4, 2)), c)
    np.testing.assert_array_equal(gate.data, 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_gate_in_open_unit_interval(seed):
    rng = np.random.default_rng(seed)
    c = make(seed=seed % 1000).conv
    gate, _ = scale_weight(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), c)
    assert np.all((gate.data > 0) & (gate.data < 1))


def test_gate_matches_oracle():
    rng = np.random.default_rng(7)
    c = make().conv
    enh, x = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    gate, _ = scale_weight(enh, x, c)
    np.testing.assert_allclose(gate.data, sigmoid(oracle_conv_block(enh, c) + x), atol=1e-12)


def test_gate_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        scale_weight(np.zeros((4, 2)), np.zeros((4, 3)), make().conv)


# -- full block -----------------------------------------------------------------


def test_single_scale_output_equals_its_gated_term():
    p = make(scales=(2,))
    x = np.random.default_rng(8).normal(size=(8, 2))
    res = matryoshka_forward(x, p)
    np.testing.assert_array_equal(res.out.data, res.per_scale[2].data)


def test_unit_gates_identity_outer_average_enhanced():
    p = make(scales=(1, 2))
    x = np.random.default_rng(9).normal(size=(8, 2))
    res = matryoshka_forward(x, p, BlockOptions(disable_outer=True, learnable_weights=False))
    want = (fragment_and_enhance(x, 1, p.inner[1]).data + fragment_and_enhance(x, 2, p.inner[2]).data) / 2
    np.testing.assert_allclose(res.out.data, want, atol=1e-14)


def test_block_matches_brute_force_composition():
    p = make(width=2, scales=(1, 2), seed=3)
    x = np.random.default_rng(10).normal(size=(4, 2))
    total = 0.0
    for o in (1, 2):
        enh = np.concatenate([oracle_inner(x[i:i + o], p.inner[o]) for i in range(0, 4, o)]) + x
        gate = sigmoid(oracle_conv_block(enh, p.conv) + x)
        total = total + gate * oracle_outer(enh, p)
    np.testing.assert_allclose(matryoshka_forward(x, p).out.data, total / 2, atol=1e-12)


def test_batched_block_matches_per_sample_in_eval_mode():
    p = make(scales=(1, 2, 4))
    x = np.random.default_rng(11).normal(size=(3, 8, 2))
    batched = matryoshka_forward(x, p, training=False).out.data
    for b in range(3):
        np.testing.assert_allclose(batched[b], matryoshka_forward(x[b], p, training=False).out.data, atol=1e-13)


def test_disable_inner_uses_raw_input():
    p = make(scales=(2,))
    x = np.random.default_rng(12).normal(size=(8, 2))
    res = matryoshka_forward(x, p, BlockOptions(disable_inner=True, disable_outer=True, learnable_weights=False))
    np.testing.assert_array_equal(res.out.data, x)


def test_block_gradients():
    p = make(width=2, scales=(1, 2), seed=4)
    x = Tensor(np.random.default_rng(13).normal(size=(2, 4, 2)))
    res = ad.grad_check_params(lambda: ad.sum_(ad.square(matryoshka_forward(x, p).out)), p.named())
    assert max(r.max_error for r in res.values()) < 1e-6

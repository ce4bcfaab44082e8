import numpy as np
import pytest

from cdcl import numerics as nx
from cdcl.encoder import Encoder, EncoderConfig, receptive_field
from cdcl.numerics import Tensor


def small(**kw):
    base = dict(in_channels=2, hidden_dim=8, block_count=2, seed=0)
    base.update(kw)
    return Encoder.init(EncoderConfig(**base))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(hidden_dim=30)
    with pytest.raises(ValueError):
        EncoderConfig(hidden_dim=2)
    with pytest.raises(ValueError):
        EncoderConfig(block_count=0)
    with pytest.raises(ValueError):
        EncoderConfig(kernel_set=())


def test_receptive_field_examples():
    assert receptive_field(EncoderConfig(hidden_dim=4, block_count=1, kernel_set=(7,) * 4)) == 7
    assert receptive_field(EncoderConfig(hidden_dim=4, block_count=2, kernel_set=(2,) * 4)) == 4
    assert receptive_field(EncoderConfig()) >= 50
    # dilation capped at the sequence length
    cfg = EncoderConfig(hidden_dim=4, block_count=3, kernel_set=(2,) * 4)
    assert receptive_field(cfg, length=2) == 1 + 1 + 2 + 2


def test_branch_shapes_default_kernels():
    enc = Encoder.init(EncoderConfig(hidden_dim=32, block_count=1))
    for k in (2, 3, 6, 7):
        assert enc.params[f"block0.k{k}.w"].shape == (8, 32, k)
    h = Tensor(np.random.default_rng(0).normal(size=(3, 32, 11)))
    assert enc.dil_layer(h, 0, "train").shape == (3, 32, 11)


def test_length_one_input():
    enc = small()
    h = Tensor(np.ones((2, 8, 1)))
    assert enc.dil_layer(h, 1, "eval").shape == (2, 8, 1)
    assert enc.encode(np.ones((2, 1))).shape == (8,)


def test_zero_kernels_make_block_identity(rng):
    enc = small()
    for name, p in enc.params.items():
        if name.startswith("block0.k"):
            p.data[...] = 0.0
    enc.params["block0.bn.shift"].data[...] = 0.0
    h = rng.normal(size=(2, 8, 6))
    out = enc.dil_layer(Tensor(h), 0, "eval")
    np.testing.assert_array_equal(out.data, h)


def test_zero_weights_encode_to_zero(rng):
    enc = small().zero_()
    for mode in ("train", "eval"):
        out = enc.encode_batch(rng.normal(size=(4, 2, 9)), mode)
        np.testing.assert_array_equal(out.data, 0.0)


def test_determinism_and_shape(rng):
    enc = small()
    x = rng.normal(size=(2, 7))
    a, b = enc.encode(x), enc.encode(x.copy())
    np.testing.assert_array_equal(a, b)
    assert a.shape == (8,)
    assert Encoder.init(enc.config).params["out.w"].data.tolist() == enc.params["out.w"].data.tolist()


def test_last_tick_reaches_output(rng):
    enc = small()
    x = rng.normal(size=(2, 10))
    y = x.copy()
    y[:, -1] += 0.5
    assert np.abs(enc.encode(x) - enc.encode(y)).max() > 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_feature_causality_eval_mode(seed):
    rng = np.random.default_rng(seed)
    enc = small(seed=seed, block_count=3)
    x = rng.normal(size=(1, 2, 12))
    t = int(rng.integers(0, 11))
    y = x.copy()
    y[..., t + 1 :] += rng.normal(size=y[..., t + 1 :].shape)
    with nx.no_grad():
        fx = enc.features(x, "eval").data
        fy = enc.features(y, "eval").data
    np.testing.assert_array_equal(fx[..., : t + 1], fy[..., : t + 1])


def test_shape_mismatch():
    enc = small()
    with pytest.raises(ValueError):
        enc.encode(np.ones((3, 5)))
    with pytest.raises(ValueError):
        enc.dil_layer(Tensor(np.ones((1, 4, 5))), 0)


def test_train_mode_updates_running_stats(rng):
    enc = small()
    before = {k: v.copy() for k, v in enc.buffers.items()}
    x = rng.normal(size=(5, 2, 6))
    enc.encode_batch(x, "eval")
    assert all(np.array_equal(before[k], enc.buffers[k]) for k in before)
    enc.encode_batch(x, "train", update_stats=False)
    assert all(np.array_equal(before[k], enc.buffers[k]) for k in before)
    enc.encode_batch(x, "train")
    assert not np.array_equal(before["block0.bn.mean"], enc.buffers["block0.bn.mean"])
    assert all((enc.buffers[k] >= 0).all() for k in enc.buffers if k.endswith(".var"))


def test_running_stats_use_unbiased_variance(rng):
    enc = small(block_count=1)
    x = rng.normal(size=(3, 2, 4))
    with nx.no_grad():
        h = nx.conv1d_causal(x, enc.params["in.w"]) + enc.params["in.b"].reshape(1, -1, 1)
        ks = enc.config.kernel_set
        branches = [
            nx.conv1d_causal(h, enc.params[f"block0.k{k}.w"]) + enc.params[f"block0.k{k}.b"].reshape(1, -1, 1)
            for k in ks
        ]
        y = np.concatenate([b.data for b in branches], axis=1)
    enc.encode_batch(x, "train")
    expected_var = 0.9 * 1.0 + 0.1 * y.var(axis=(0, 2), ddof=1)
    np.testing.assert_allclose(enc.buffers["block0.bn.var"], expected_var, rtol=1e-12)
    np.testing.assert_allclose(enc.buffers["block0.bn.mean"], 0.1 * y.mean(axis=(0, 2)), rtol=1e-12, atol=1e-15)


def test_fused_branches_match_separate_convolutions(rng):
    """The block's single fused convolution equals running each kernel on its own."""
    enc = small(block_count=2)
    h = rng.normal(size=(2, 8, 9))
    dil = enc.config.dilation(1, 9)
    parts = []
    with nx.no_grad():
        for k in enc.config.kernel_set:
            y = nx.conv1d_causal(h, enc.params[f"block1.k{k}.w"], dil) + enc.params[f"block1.k{k}.b"].reshape(1, -1, 1)
            parts.append(y.data)
    y = np.concatenate(parts, axis=1)
    rm, rv = enc.buffers["block1.bn.mean"], enc.buffers["block1.bn.var"]
    scale, shift = enc.params["block1.bn.scale"].data, enc.params["block1.bn.shift"].data
    bn = (y - rm[:, None]) / np.sqrt(rv[:, None] + 1e-5) * scale[:, None] + shift[:, None]
    expected = h + np.maximum(bn, 0)
    with nx.no_grad():
        got = enc.dil_layer(Tensor(h), 1, "eval").data
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_encoder_gradients():
    rng = np.random.default_rng(0)
    enc = small(hidden_dim=4, block_count=2)
    for name, p in enc.params.items():
        if ".bn." in name:
            p.data += rng.normal(0, 0.3, p.shape)
    x = rng.normal(size=(3, 2, 8))
    w = Tensor(rng.normal(size=(3, 4)))
    err = nx.finite_diff_check(lambda: (enc.encode_batch(x, "train", False) * w).sum(), list(enc.params.values()))
    assert err < 1e-4

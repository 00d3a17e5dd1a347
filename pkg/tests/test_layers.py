"""Layer specs, init, plain forward, ECA attention and parameter counting."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from cmn.layers import (
    EcaParams,
    EmptyNetwork,
    LayerSpec,
    NetworkParams,
    NetworkSpec,
    count_params,
    eca_attention,
    eca_kernel_size,
    forward_plain,
    init_params,
    layer_size,
    tiny_conv,
    tiny_mlp,
)
from cmn.tensor import ShapeError, Tensor


def _net_from(spec, arrays):
    return NetworkParams(spec, {k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in arrays.items()})


# ------------------------------------------------------------------ specs


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("dense", 2, 2)
    with pytest.raises(ValueError):
        LayerSpec("linear", 0, 2)
    with pytest.raises(ValueError):
        LayerSpec("conv_block", 2, 2, kernel=2)


def test_network_spec_checks_widths():
    with pytest.raises(ValueError, match="expects"):
        NetworkSpec((4,), (LayerSpec("linear", 3, 2),), 1)
    with pytest.raises(ValueError, match="conv_block"):
        NetworkSpec((4,), (LayerSpec("conv_block", 4, 2),), 1)


def test_conv_then_linear_is_allowed():
    spec = NetworkSpec((2, 5, 5), (LayerSpec("conv_block", 2, 3), LayerSpec("linear", 3, 4)), 2)
    p = init_params(spec, seed=0)
    logits, hidden = forward_plain(p, Tensor(np.ones((3, 2, 5, 5))))
    assert logits.shape == (3, 2)
    assert hidden[0].shape == (3, 3, 5, 5) and hidden[1].shape == (3, 4)


# ---------------------------------------------------------------- forward


def test_zero_network_gives_zero_logits():
    spec = tiny_mlp(3, 2, width=4, depth=2)
    p = init_params(spec, "constant", value=0.0)
    logits, hidden = forward_plain(p, Tensor(np.array([[1.0, -2.0, 3.0]])))
    assert np.all(logits.data == 0.0)
    assert all(np.all(h.data == 0.0) for h in hidden)


def test_identity_layer_applies_relu():
    spec = NetworkSpec((3,), (LayerSpec("linear", 3, 3),), 3)
    p = _net_from(spec, {
        "layer0.weight": np.eye(3), "layer0.bias": np.zeros(3),
        "head.weight": np.eye(3), "head.bias": np.zeros(3),
    })
    logits, hidden = forward_plain(p, Tensor(np.array([1.0, -2.0, 3.0])))
    np.testing.assert_array_equal(hidden[0].data, [1.0, 0.0, 3.0])
    np.testing.assert_array_equal(logits.data, [1.0, 0.0, 3.0])


@given(st.integers(0, 10_000))
def test_mlp_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    spec = tiny_mlp(4, 3, width=5, depth=2)
    p = init_params(spec, seed=seed)
    for name, t in p.named_parameters():
        if name.endswith("bias"):
            t.data[:] = rng.normal(size=t.shape)
    x = rng.normal(size=4)
    logits, hidden = forward_plain(p, Tensor(x))
    layers = [(p[f"layer{i}.weight"].data.tolist(), p[f"layer{i}.bias"].data.tolist()) for i in range(2)]
    want, want_hidden = oracles.mlp_forward(x.tolist(), layers, (p["head.weight"].data.tolist(), p["head.bias"].data.tolist()))
    np.testing.assert_allclose(logits.data, want, rtol=1e-12, atol=1e-12)
    for h, w in zip(hidden, want_hidden):
        np.testing.assert_allclose(h.data, w, rtol=1e-12, atol=1e-12)


def test_batch_forward_matches_per_example():
    spec = tiny_conv((2, 6, 6), 3, channels=(3, 4))
    p = init_params(spec, seed=5)
    x = np.random.default_rng(1).normal(size=(4, 2, 6, 6))
    batch = forward_plain(p, Tensor(x))[0].data
    single = np.stack([forward_plain(p, Tensor(x[i]))[0].data for i in range(4)])
    np.testing.assert_allclose(batch, single, rtol=1e-12, atol=1e-12)


def test_wrong_input_shape_raises():
    p = init_params(tiny_mlp(4, 2, width=3), seed=0)
    with pytest.raises(ShapeError):
        forward_plain(p, Tensor(np.ones((2, 5))))


# ------------------------------------------------------------------- init


def test_constant_init_sets_weights_and_biases():
    p = init_params(tiny_mlp(3, 2, width=4), "constant", value=1.0)
    assert all(np.all(t.data == 1.0) for t in p.parameters())


def test_fan_in_uniform_bound_and_zero_bias():
    spec = NetworkSpec((6,), (LayerSpec("linear", 6, 50),), 4)
    p = init_params(spec, seed=3)
    w = p["layer0.weight"].data
    assert np.abs(w).max() <= 1.0  # sqrt(6 / 6)
    assert np.abs(w).max() > 0.9
    assert np.all(p["layer0.bias"].data == 0.0)


def test_init_is_reproducible_and_seed_sensitive():
    spec = tiny_conv((1, 5, 5), 2)
    assert init_params(spec, seed=11).digest() == init_params(spec, seed=11).digest()
    assert init_params(spec, seed=11).digest() != init_params(spec, seed=12).digest()


def test_orthogonal_init_has_orthonormal_rows():
    spec = NetworkSpec((8,), (LayerSpec("linear", 8, 5),), 2)
    w = init_params(spec, "orthogonal", seed=0)["layer0.weight"].data
    np.testing.assert_allclose(w @ w.T, np.eye(5), atol=1e-12)


def test_init_requires_seed_and_known_scheme():
    with pytest.raises(ValueError):
        init_params(tiny_mlp(2, 2), seed=None)
    with pytest.raises(ValueError):
        init_params(tiny_mlp(2, 2), "xavier", seed=0)


def test_clone_is_independent():
    p = init_params(tiny_mlp(3, 2, width=4), seed=0)
    q = p.clone()
    q["head.bias"].data[0] = 7.0
    assert p["head.bias"].data[0] == 0.0
    assert p.digest() != q.digest()


# -------------------------------------------------------------------- ECA


def test_zero_kernel_halves_input():
    x = np.random.default_rng(0).normal(size=(2, 5, 3, 3))
    out = eca_attention(EcaParams(Tensor(np.zeros(3))), Tensor(x))
    np.testing.assert_allclose(out.data, x / 2)


def test_single_channel_constant_map():
    x = np.full((1, 2, 2), 2.0)
    out = eca_attention(EcaParams(Tensor(np.array([0.0, 1.0, 0.0]))), Tensor(x))
    np.testing.assert_allclose(out.data, 2.0 / (1.0 + np.exp(-2.0)), rtol=1e-12)
    assert abs(out.data[0, 0, 0] - 1.7616) < 1e-4


@given(st.integers(0, 10_000))
def test_eca_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 4, 4))
    k = rng.normal(size=3)
    out = eca_attention(EcaParams(Tensor(k)), Tensor(x)).data
    np.testing.assert_allclose(out, oracles.eca(x.tolist(), k.tolist()), rtol=1e-12, atol=1e-12)


def test_eca_on_vectors_uses_the_vector_as_descriptor():
    rng = np.random.default_rng(4)
    v, k = rng.normal(size=6), rng.normal(size=5)
    out = eca_attention(EcaParams(Tensor(k)), Tensor(v)).data
    np.testing.assert_allclose(out, oracles.eca(v.tolist(), k.tolist()), rtol=1e-12)


def test_eca_kernel_validation():
    with pytest.raises(ShapeError):
        EcaParams(Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        EcaParams(Tensor(np.zeros(1)))


@pytest.mark.parametrize("channels,k", [(1, 3), (16, 3), (64, 3), (256, 5), (1024, 5), (4096, 7)])
def test_eca_kernel_size(channels, k):
    assert eca_kernel_size(channels) == k


# --------------------------------------------------------------- counting


def test_count_linear_layer():
    spec = NetworkSpec((3,), (LayerSpec("linear", 3, 2),), 1)
    assert layer_size(spec.layers[0]) == 8


def test_count_empty_network():
    assert count_params(EmptyNetwork()) == 0
    assert count_params(None) == 0


def test_count_two_layer_net():
    spec = NetworkSpec((4,), (LayerSpec("linear", 4, 5),), 3)
    assert count_params(init_params(spec, seed=0)) == 43


def test_adding_a_layer_adds_its_size():
    a = NetworkSpec((4,), (LayerSpec("linear", 4, 5),), 3)
    extra = LayerSpec("linear", 5, 5)
    b = NetworkSpec((4,), (LayerSpec("linear", 4, 5), extra), 3)
    assert count_params(init_params(b, seed=0)) - count_params(init_params(a, seed=0)) == layer_size(extra)


def test_conv_layer_size():
    assert layer_size(LayerSpec("conv_block", 2, 4, 3)) == 4 * 2 * 9 + 4


def test_count_rejects_unknown_objects():
    with pytest.raises(TypeError):
        count_params("net")

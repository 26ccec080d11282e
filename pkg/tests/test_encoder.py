import numpy as np
import pytest

from dwformer import autodiff as ad
from dwformer.autodiff import Tensor
from dwformer.encoder import EncoderLayer, MultiHeadAttention
from dwformer.windows import WindowPartition, build_mask


@pytest.fixture
def layer():
    return EncoderLayer(16, 4, np.random.default_rng(3))


def test_single_token_attention_is_one(rng):
    mha = MultiHeadAttention(8, 2, rng)
    out = mha(Tensor(rng.normal(size=(2, 1, 8))))
    np.testing.assert_array_equal(out.attn.data, np.ones((2, 2, 1, 1)))


def test_zero_query_key_gives_uniform_attention(rng):
    mha = MultiHeadAttention(8, 2, rng)
    for lin in (mha.query, mha.key):
        lin.weight.data[:] = 0
    out = mha(Tensor(rng.normal(size=(1, 5, 8))))
    np.testing.assert_allclose(out.attn.data, 0.2, rtol=1e-15)


def test_block_diagonal_mask_zeroes_cross_window_attention(rng, layer):
    mask = build_mask(WindowPartition.from_tuples([(0, 1), (2, 2)]), 3)
    attn = layer(Tensor(rng.normal(size=(1, 3, 16))), mask).attn.data[0]
    for i in range(3):
        for j in range(3):
            if (i < 2) != (j < 2):
                assert np.all(attn[:, i, j] == 0.0)
    np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-12)


def test_determinism_and_shape(rng, layer):
    for t in (1, 4, 9):
        x = Tensor(rng.normal(size=(2, t, 16)))
        a, b = layer(x), layer(x)
        assert a.hidden.shape == (2, t, 16)
        assert a.attn.shape == (2, 4, t, t)
        np.testing.assert_array_equal(a.hidden.data, b.hidden.data)


def test_full_window_mask_matches_unmasked_bitwise(rng, layer):
    x = Tensor(rng.normal(size=(2, 6, 16)))
    mask = build_mask(WindowPartition.single(6), 6)
    np.testing.assert_array_equal(layer(x, mask).hidden.data, layer(x).hidden.data)
    np.testing.assert_array_equal(layer(x, mask).attn.data, layer(x).attn.data)


def test_permutation_equivariance(rng, layer):
    x = rng.normal(size=(1, 7, 16))
    part = WindowPartition.from_tuples([(0, 2), (3, 3), (4, 6)])
    mask = build_mask(part, 7)
    perm = rng.permutation(7)
    base = layer(Tensor(x), mask)
    moved = layer(Tensor(x[:, perm]), mask[np.ix_(perm, perm)])
    np.testing.assert_allclose(moved.hidden.data, base.hidden.data[:, perm], atol=1e-12)
    np.testing.assert_allclose(moved.attn.data, base.attn.data[:, :, perm][:, :, :, perm], atol=1e-12)


def test_per_sample_masks(rng, layer):
    x = rng.normal(size=(2, 4, 16))
    m0 = build_mask(WindowPartition.from_tuples([(0, 1), (2, 3)]), 4)
    m1 = build_mask(WindowPartition.single(4), 4)
    both = layer(Tensor(x), np.stack([m0, m1]))
    np.testing.assert_allclose(both.hidden.data[0], layer(Tensor(x[:1]), m0).hidden.data[0], atol=1e-13)
    np.testing.assert_allclose(both.hidden.data[1], layer(Tensor(x[1:]), m1).hidden.data[0], atol=1e-13)


def test_fully_masked_row_propagates_error(rng, layer):
    mask = np.full((3, 3), -np.inf)
    with pytest.raises(ad.InvalidMaskError):
        layer(Tensor(rng.normal(size=(1, 3, 16))), mask)


def test_heads_must_divide_width(rng):
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 4, rng)


def test_init_bounds():
    layer = EncoderLayer(16, 2, np.random.default_rng(0))
    bound = 1 / np.sqrt(16)
    for name, p in layer.named_parameters():
        if name.endswith("weight"):
            assert np.abs(p.data).max() <= bound
        elif name.endswith("bias") and not name.startswith("norm"):
            assert np.all(p.data == 0)

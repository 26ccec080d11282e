import numpy as np
import pytest

from dwformer import autodiff as ad
from dwformer.autodiff import Tensor
from dwformer.dwblock import BlockState, DWBlock, LocalOutput, WindowBatch
from dwformer.importance import ic
from dwformer.windows import WEAK, WindowPartition, build_mask

D, H = 16, 4


@pytest.fixture
def block():
    return DWBlock(D, H, np.random.default_rng(7), weak_weight=0.85)


def batch_of(parts, t):
    return WindowBatch(parts, t)


def test_single_strong_window_matches_plain_encoder(rng):
    blk = DWBlock(D, H, np.random.default_rng(1), weak_weight=1.0)
    x = Tensor(rng.normal(size=(1, 6, D)))
    local = blk.dlwt(x, batch_of([WindowPartition.single(6)], 6))
    np.testing.assert_array_equal(local.x.data, blk.local(x).hidden.data)


def test_weak_windows_scaled_by_weight(rng, block):
    part = WindowPartition.from_tuples([(0, 2, "strong"), (3, 5, WEAK)])
    x = Tensor(rng.normal(size=(1, 6, D)))
    local = block.dlwt(x, batch_of([part], 6))
    raw = block.local(x, build_mask(part, 6)).hidden.data
    np.testing.assert_array_equal(local.x.data[0, :3], raw[0, :3])
    np.testing.assert_allclose(local.x.data[0, 3:], 0.85 * raw[0, 3:], rtol=1e-15)


def test_local_importance_is_per_window(rng, block):
    part = WindowPartition.from_tuples([(0, 1, "strong"), (2, 4, WEAK), (5, 5, "strong")])
    x = Tensor(rng.normal(size=(1, 6, D)))
    local = block.dlwt(x, batch_of([part], 6))
    impt = local.impt[0]
    for s in part:
        assert impt[s.begin : s.end + 1].sum() == pytest.approx(1.0, abs=1e-12)
        expected = ic(local.attn.data[0], (s.begin, s.end)).values
        np.testing.assert_allclose(impt[s.begin : s.end + 1], expected, rtol=1e-12)
    assert impt[5] == 1.0


def test_cross_window_gradient_is_zero(rng, block):
    part = WindowPartition.from_tuples([(0, 2, "strong"), (3, 4, WEAK), (5, 7, "strong")])
    windows = batch_of([part], 8)
    x = Tensor(rng.normal(size=(1, 8, D)), requires_grad=True)
    w = rng.normal(size=(D,))
    for i, j in [(0, 4), (3, 6), (7, 1)]:
        x.grad = None
        out = block.dlwt(x, windows).x
        sel = np.zeros((1, 8, D))
        sel[0, i] = w
        g = ad.sum_over_axis(ad.mul(out, sel)).backward()[x]
        assert np.all(g[0, j] == 0.0)
        assert np.abs(g[0, i]).max() > 0


def _local(x, weights):
    return LocalOutput(Tensor(x), Tensor(weights), None)


def test_window_weighted_sum_examples():
    wt = DWBlock.window_weighted_sum(_local(np.array([[[5.0, 6]]]), np.array([[[1.0]]])))
    np.testing.assert_array_equal(wt.data, [[[5, 6]]])
    x = np.array([[[1.0, 2], [3, 4]]])
    wt = DWBlock.window_weighted_sum(_local(x, np.array([[[0.5, 0.5]]])))
    np.testing.assert_array_equal(wt.data, [[[2, 3]]])
    wt = DWBlock.window_weighted_sum(_local(x, np.array([[[0.8, 0.2]]])))
    np.testing.assert_allclose(wt.data, [[[1.4, 2.4]]], rtol=1e-15)


def test_dgwt_single_window_and_shape(rng, block):
    one = batch_of([WindowPartition.single(5)], 5)
    feats, impt = block.dgwt(Tensor(rng.normal(size=(1, 1, D))), one)
    assert impt.tolist() == [[1.0]]
    part = WindowPartition.from_tuples([(0, 1, "strong"), (2, 2, WEAK), (3, 4, "strong")])
    feats, impt = block.dgwt(Tensor(rng.normal(size=(1, 3, D))), batch_of([part], 5))
    assert feats.shape == (1, 3, D)
    assert impt.sum() == pytest.approx(1.0, abs=1e-12)


def test_dgwt_zero_query_key_uniform(rng):
    blk = DWBlock(D, H, np.random.default_rng(2))
    for lin in (blk.globl.attn.query, blk.globl.attn.key):
        lin.weight.data[:] = 0
    part = WindowPartition.fixed(8, 2)
    _, impt = blk.dgwt(Tensor(rng.normal(size=(1, 4, D))), batch_of([part], 8))
    np.testing.assert_allclose(impt, 0.25, rtol=1e-14)


def test_block_forward_contracts(rng, block):
    x = Tensor(rng.normal(size=(2, 9, D)))
    impt = rng.dirichlet(np.ones(9), size=2)
    state, trace = block(BlockState(x, impt, np.array([9, 9])))
    assert state.x.shape == (2, 9, D)
    np.testing.assert_allclose(state.impt.sum(1), 1.0, atol=1e-12)
    for p in state.partitions:
        p.validate(9, maximal=True)


def test_single_window_composition_oracle(rng):
    blk = DWBlock(D, H, np.random.default_rng(5), weak_weight=1.0)
    t = 6
    xa = rng.normal(size=(1, t, D))
    state, _ = blk(BlockState(Tensor(xa), np.full((1, t), 1 / t), np.array([t])))
    # hand composition: plain encoder, IC over everything, weighted sum, global encoder, broadcast
    enc = blk.local(Tensor(xa))
    scores = ic(enc.attn.data[0]).values
    token = (scores[:, None] * enc.hidden.data[0]).sum(0)
    glob = blk.globl(Tensor(token[None, None])).hidden.data[0, 0]
    np.testing.assert_allclose(state.x.data[0], enc.hidden.data[0] + glob, atol=1e-13)
    z = np.exp(scores - scores.max())
    np.testing.assert_allclose(state.impt[0], z / z.sum(), rtol=1e-12)


def test_padded_batch_matches_individual_samples(rng, block):
    lens = np.array([7, 4])
    x = rng.normal(size=(2, 7, D))
    x[1, 4:] = 0
    impt = np.zeros((2, 7))
    impt[0] = rng.dirichlet(np.ones(7))
    impt[1, :4] = rng.dirichlet(np.ones(4))
    state, _ = block(BlockState(Tensor(x), impt, lens))
    for i, n in enumerate(lens):
        alone, _ = block(BlockState(Tensor(x[i : i + 1, :n]), impt[i : i + 1, :n], lens[i : i + 1]))
        np.testing.assert_allclose(state.x.data[i, :n], alone.x.data[0], atol=1e-12)
        np.testing.assert_allclose(state.impt[i, :n], alone.impt[0], atol=1e-14)
        assert np.all(state.impt[i, n:] == 0)


def test_weak_weight_range():
    with pytest.raises(ValueError):
        DWBlock(D, H, np.random.default_rng(0), weak_weight=0.0)
    with pytest.raises(ValueError):
        DWBlock(D, H, np.random.default_rng(0), weak_weight=1.5)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dwformer.windows import (
    STRONG,
    WEAK,
    PartitionError,
    Span,
    WindowPartition,
    build_mask,
    dynamic_window_split,
    membership,
)


def brute_force_split(scores):
    """Label every token, then grow runs one token at a time."""
    med = np.median(scores)
    labels = [STRONG if s > med else WEAK for s in scores]
    if STRONG not in labels:
        return [(0, len(scores) - 1, STRONG)]
    spans = []
    for i, lab in enumerate(labels):
        if spans and spans[-1][2] == lab:
            spans[-1] = (spans[-1][0], i, lab)
        else:
            spans.append((i, i, lab))
    return spans


def brute_force_mask(spans, t):
    m = np.full((t, t), -np.inf)
    for i in range(t):
        for j in range(t):
            same = any(b <= i <= e and b <= j <= e for b, e, _ in spans)
            if same or (i == j and i > spans[-1][1]):
                m[i, j] = 0.0
    return m


def as_tuples(part):
    return [(s.begin, s.end, s.strength) for s in part]


@pytest.mark.parametrize(
    "scores, expected",
    [
        ([0.1, 0.4, 0.3, 0.2], [(0, 0, WEAK), (1, 2, STRONG), (3, 3, WEAK)]),
        ([0.4, 0.1, 0.4, 0.1], [(0, 0, STRONG), (1, 1, WEAK), (2, 2, STRONG), (3, 3, WEAK)]),
        ([0.25] * 4, [(0, 3, STRONG)]),
    ],
)
def test_split_examples(scores, expected):
    part = dynamic_window_split(np.array(scores))
    assert as_tuples(part) == expected
    assert as_tuples(part) == brute_force_split(np.array(scores))
    assert part.n_strong + part.n_weak == len(part)


def test_split_counts():
    part = dynamic_window_split(np.array([0.1, 0.4, 0.3, 0.2]))
    assert (part.n_strong, part.n_weak) == (1, 2)


def test_split_ignores_padding():
    part = dynamic_window_split(np.array([0.1, 0.4, 0.3, 0.2, 0.0, 0.0]), valid_len=4)
    assert part.valid_len == 4


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 24), elements=st.floats(0, 1, allow_subnormal=False)))
def test_split_invariants(scores):
    part = dynamic_window_split(scores)
    part.validate(len(scores), maximal=True)
    assert as_tuples(part) == brute_force_split(scores)
    labels = part.labels()
    assert len(labels) == len(scores)
    assert np.all(np.bincount(labels) == part.lengths)


def test_build_mask_examples():
    m = build_mask(WindowPartition.from_tuples([(0, 1), (2, 2)]), 3)
    ninf = -np.inf
    np.testing.assert_array_equal(m, [[0, 0, ninf], [0, 0, ninf], [ninf, ninf, 0]])
    np.testing.assert_array_equal(build_mask(WindowPartition.single(5), 5), np.zeros((5, 5)))
    eye = build_mask(WindowPartition.fixed(4, 1), 4)
    np.testing.assert_array_equal(eye == 0, np.eye(4, dtype=bool))


def test_build_mask_padding_sees_only_itself():
    m = build_mask(WindowPartition.from_tuples([(0, 1)]), 4)
    assert np.all(m[:2, :2] == 0)
    assert m[2, 2] == 0 and m[3, 3] == 0
    assert np.isneginf(m[2, 3]) and np.isneginf(m[0, 2]) and np.isneginf(m[3, 1])


def test_invalid_partitions_rejected():
    with pytest.raises(PartitionError):
        build_mask(WindowPartition.from_tuples([(0, 1), (3, 4)]), 5)
    with pytest.raises(PartitionError):
        build_mask(WindowPartition.from_tuples([(1, 2)]), 3)
    with pytest.raises(PartitionError):
        build_mask(WindowPartition.from_tuples([(0, 5)]), 3)
    with pytest.raises(PartitionError):
        WindowPartition.from_tuples([(0, 1, STRONG), (2, 3, STRONG)]).validate(maximal=True)


def test_fixed_partition():
    part = WindowPartition.fixed(10, 4)
    assert [(s.begin, s.end) for s in part] == [(0, 3), (4, 7), (8, 9)]
    part.validate(10)


def test_membership():
    part = WindowPartition.from_tuples([(0, 1), (2, 4)])
    m = membership(part, 6, 3)
    np.testing.assert_array_equal(m, [[1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 1, 0], [0] * 6])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16), st.integers(0, 4), st.integers(0, 2**31))
def test_mask_matches_membership_oracle(t, pad, seed):
    scores = np.random.default_rng(seed).random(t)
    part = dynamic_window_split(scores)
    spans = as_tuples(part)
    np.testing.assert_array_equal(build_mask(part, t + pad), brute_force_mask(spans, t + pad))


def test_span_len():
    assert len(Span(3, 5)) == 3

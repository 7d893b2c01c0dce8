import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from renormap.errors import InputError
from renormap.geometry import Dataset, SimilarityMatrix, build_similarity, squared_distance

coords = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def point_sets(max_n=8, max_d=4):
    return st.integers(1, max_d).flatmap(
        lambda d: arrays(np.float64, st.tuples(st.integers(1, max_n), st.just(d)),
                         elements=coords))


def test_two_points_on_a_line():
    S = build_similarity(Dataset([[0.0], [3.0]]), 1.0)
    np.testing.assert_array_equal(S.entries, [[-1, -9], [-9, -1]])


def test_single_point():
    S = build_similarity(Dataset([[2.0, 3.0]]), 5.0)
    np.testing.assert_array_equal(S.entries, [[-5.0]])


def test_unit_square_against_hand_computation():
    sq = [[0, 0], [1, 0], [1, 1], [0, 1]]
    S = build_similarity(Dataset(sq), 2.0).entries
    # sides have squared length 1, the two diagonals 2
    want = -np.array([[2, 1, 2, 1], [1, 2, 1, 2], [2, 1, 2, 1], [1, 2, 1, 2]], dtype=float)
    np.testing.assert_array_equal(S, want)
    off = S[~np.eye(4, dtype=bool)]
    assert set(off.tolist()) == {-1.0, -2.0}


def test_squared_distance_examples():
    assert squared_distance([0, 0], [3, 4]) == 25.0
    x = [1.5, -2.0, 7.25]
    assert squared_distance(x, x) == 0.0


def test_squared_distance_dimension_mismatch():
    with pytest.raises(InputError):
        squared_distance([0, 0], [1, 2, 3])


@given(arrays(np.float64, st.tuples(st.just(2), st.integers(1, 12)), elements=coords))
def test_squared_distance_matches_reversed_summation(ab):
    a, b = ab
    got = squared_distance(a, b)
    want = oracles.sq_dist_reversed(a, b)
    assert got == pytest.approx(want, rel=1e-13, abs=1e-10)


def test_rejects_non_finite_points():
    with pytest.raises(InputError):
        Dataset([[0.0, np.nan]])
    with pytest.raises(InputError):
        Dataset([[np.inf]])


def test_rejects_bad_weights_and_shapes():
    with pytest.raises(InputError):
        Dataset([[0.0], [1.0]], weights=[1.0, 0.0])
    with pytest.raises(InputError):
        Dataset([[0.0], [1.0]], weights=[1.0])
    with pytest.raises(InputError):
        Dataset(np.zeros((0, 2)))


def test_dataset_is_read_only_and_defaults_to_unit_weights():
    src = np.array([[1.0, 2.0]])
    data = Dataset(src)
    src[0, 0] = 99.0
    assert data.points[0, 0] == 1.0
    np.testing.assert_array_equal(data.weights, [1.0])
    with pytest.raises(ValueError):
        data.points[0, 0] = 3.0


def test_rejects_nonpositive_preference():
    data = Dataset([[0.0], [1.0]])
    for s in (0.0, -1.0, np.nan):
        with pytest.raises(InputError):
            build_similarity(data, s)


def test_similarity_matrix_accepts_adversarial_but_finite_entries():
    S = SimilarityMatrix([[3.0, -1.0], [7.0, 0.5]])
    np.testing.assert_array_equal(S.preferences, [-3.0, -0.5])
    with pytest.raises(InputError):
        SimilarityMatrix([[0.0, np.inf], [0.0, 0.0]])
    with pytest.raises(InputError):
        SimilarityMatrix(np.zeros((2, 3)))


@given(point_sets(), st.floats(0.01, 50))
def test_matches_hand_built_matrix(x, s):
    got = build_similarity(Dataset(x), s).entries
    np.testing.assert_allclose(got, oracles.similarity_by_hand(x, s), rtol=1e-12, atol=1e-9)


@given(point_sets(), st.randoms(use_true_random=False))
def test_permutation_equivariance(x, rnd):
    perm = list(range(x.shape[0]))
    rnd.shuffle(perm)
    S = build_similarity(Dataset(x), 1.0).entries
    Sp = build_similarity(Dataset(x[perm]), 1.0).entries
    np.testing.assert_array_equal(Sp, S[np.ix_(perm, perm)])


@given(point_sets(), arrays(np.float64, 4, elements=st.floats(-50, 50)))
def test_translation_invariance(x, shift):
    t = shift[: x.shape[1]]
    S = build_similarity(Dataset(x), 2.0).entries
    St = build_similarity(Dataset(x + t), 2.0).entries
    np.testing.assert_allclose(St, S, rtol=1e-9, atol=1e-7)


@given(point_sets(), st.floats(0.1, 10))
def test_scaling_multiplies_off_diagonal_by_square(x, g):
    S = build_similarity(Dataset(x), 1.0).entries
    Sg = build_similarity(Dataset(x * g), 1.0).entries
    off = ~np.eye(x.shape[0], dtype=bool)
    np.testing.assert_allclose(Sg[off], g * g * S[off], rtol=1e-12, atol=1e-9)
    np.testing.assert_array_equal(np.diag(Sg), np.diag(S))


@given(point_sets())
def test_identical_points_give_exact_zero(x):
    y = np.vstack([x, x])
    S = build_similarity(Dataset(y), 1.0).entries
    n = x.shape[0]
    assert np.all(S[np.arange(n), np.arange(n) + n] == 0.0)

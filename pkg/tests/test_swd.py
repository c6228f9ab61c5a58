import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from imuda.exceptions import AlignmentBatchError, InputError, OracleSizeError
from imuda.swd import (
    exact_1d_w2_squared,
    exact_w2_squared_small,
    sample_projections,
    swd_empirical,
    swd_gradient,
)

from oracles import brute_w2_squared

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def point_pair(draw, max_n=7, max_p=4):
    n = draw(st.integers(1, max_n))
    p = draw(st.integers(1, max_p))
    A = draw(arrays(np.float64, (n, p), elements=finite))
    B = draw(arrays(np.float64, (n, p), elements=finite))
    return A, B


def test_projection_rows_are_unit_and_deterministic():
    P = sample_projections(5, 200, seed=3)
    np.testing.assert_allclose(np.linalg.norm(P.directions, axis=1), 1.0, atol=1e-12)
    assert P.directions.tobytes() == sample_projections(5, 200, seed=3).directions.tobytes()
    assert P.num_projections == 200 and P.dim == 5


def test_one_dimensional_projections_are_signs():
    assert set(np.unique(sample_projections(1, 100, seed=0).directions)) <= {-1.0, 1.0}


def test_projection_mean_is_near_zero():
    assert np.linalg.norm(sample_projections(3, 1000, seed=0).directions.mean(axis=0)) < 0.1


@pytest.mark.parametrize("p,L", [(0, 5), (3, 0)])
def test_projection_arguments_validated(p, L):
    with pytest.raises(InputError):
        sample_projections(p, L)


def test_two_pairs_in_one_dimension():
    A = np.array([[0.0], [1.0]])
    B = np.array([[2.0], [3.0]])
    for seed in range(3):
        assert swd_empirical(A, B, sample_projections(1, 7, seed)).value == 4.0


def test_exact_1d_examples():
    assert exact_1d_w2_squared([0, 1], [1, 0]) == 0.0
    assert exact_1d_w2_squared([0, 2], [1, 5]) == 5.0
    assert exact_1d_w2_squared([3, 1, 2], [3, 1, 2]) == 0.0


def test_exact_small_examples():
    A = np.random.default_rng(0).normal(size=(5, 3))
    assert exact_w2_squared_small(A, A[::-1]) == 0.0
    assert exact_w2_squared_small([[0.0, 0.0]], [[3.0, 4.0]]) == 25.0


def test_exact_small_agrees_with_independent_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(10):
        A, B = rng.normal(size=(2, 5, 3))
        assert abs(exact_w2_squared_small(A, B) - brute_w2_squared(A, B)) < 1e-12


def test_oracle_size_limit():
    with pytest.raises(OracleSizeError):
        exact_w2_squared_small(np.zeros((9, 2)), np.zeros((9, 2)))


def test_unequal_counts_rejected():
    P = sample_projections(2, 3)
    with pytest.raises(AlignmentBatchError):
        swd_empirical(np.zeros((3, 2)), np.zeros((4, 2)), P)
    with pytest.raises(AlignmentBatchError):
        exact_1d_w2_squared([1, 2], [1])


def test_dimension_mismatch_rejected():
    with pytest.raises(InputError):
        swd_empirical(np.zeros((3, 2)), np.zeros((3, 2)), sample_projections(3, 4))


@settings(max_examples=100, deadline=None)
@given(point_pair(), st.integers(0, 1000))
def test_symmetric_exactly(pair, seed):
    A, B = pair
    P = sample_projections(A.shape[1], 10, seed)
    assert swd_empirical(A, B, P).value == swd_empirical(B, A, P).value


@settings(max_examples=100, deadline=None)
@given(point_pair(), st.integers(0, 1000))
def test_same_multiset_is_zero(pair, seed):
    A, _ = pair
    perm = np.random.default_rng(seed).permutation(A.shape[0])
    assert swd_empirical(A, A[perm], sample_projections(A.shape[1], 10, seed)).value == 0.0


@settings(max_examples=100, deadline=None)
@given(point_pair(), st.integers(0, 1000))
def test_slices_lower_bound_exact_transport(pair, seed):
    A, B = pair
    P = sample_projections(A.shape[1], 10, seed)
    assert swd_empirical(A, B, P).value <= exact_w2_squared_small(A, B) + 1e-12


@settings(max_examples=100, deadline=None)
@given(point_pair(max_p=1), st.integers(0, 1000))
def test_one_dimension_is_exact(pair, seed):
    A, B = pair
    value = swd_empirical(A, B, sample_projections(1, 5, seed)).value
    assert abs(value - exact_1d_w2_squared(A[:, 0], B[:, 0])) <= 1e-12 * max(1.0, value)


@settings(max_examples=100, deadline=None)
@given(point_pair(), st.floats(0.01, 100), st.integers(0, 1000))
def test_positive_scaling_is_quadratic(pair, c, seed):
    A, B = pair
    P = sample_projections(A.shape[1], 10, seed)
    base = swd_empirical(A, B, P).value
    assert abs(swd_empirical(c * A, c * B, P).value - c * c * base) <= 1e-10 * max(1.0, c * c * base)


def test_more_projections_concentrate():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(30, 4)), rng.normal(loc=0.5, size=(30, 4))
    few = [swd_empirical(A, B, sample_projections(4, 10, s)).value for s in range(50)]
    many = [swd_empirical(A, B, sample_projections(4, 1000, s)).value for s in range(50)]
    assert np.std(many, ddof=1) < np.std(few, ddof=1)


def test_gradient_identical_sets_is_zero():
    A = np.random.default_rng(0).normal(size=(6, 3))
    dA, dB = swd_gradient(A, A.copy(), sample_projections(3, 8))
    assert not np.any(dA) and not np.any(dB)


def test_gradient_single_pair_is_analytic():
    dA, dB = swd_gradient(np.array([[1.5]]), np.array([[-0.5]]), sample_projections(1, 4))
    assert dA[0, 0] == pytest.approx(2 * (1.5 - -0.5))
    assert dB[0, 0] == pytest.approx(-2 * (1.5 - -0.5))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(2, 7, 3))
    P = sample_projections(3, 9, seed=4)
    dA, dB = swd_gradient(A, B, P)
    h = 1e-6
    fd = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        up, down = A.copy(), A.copy()
        up[idx] += h
        down[idx] -= h
        fd[idx] = (swd_empirical(up, B, P).value - swd_empirical(down, B, P).value) / (2 * h)
    assert np.linalg.norm(fd - dA) / np.linalg.norm(dA) < 1e-5
    # the value depends on A - B pairings only, so shifting both leaves it fixed
    np.testing.assert_allclose(dA.sum(axis=0), -dB.sum(axis=0), atol=1e-12)

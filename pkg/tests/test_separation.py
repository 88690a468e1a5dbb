import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strebm import separation
from strebm.errors import InvalidArgumentError

from conftest import central_diff, max_rel_err


def loss_of(S, eps_s=separation.DEFAULT_EPS_S):
    return separation.separation_loss(
        separation.correlation_matrix(separation.normalize_columns(S, eps_s))
    )


def test_normalize_columns_examples(rng):
    out = separation.normalize_columns(np.full((5, 1), 3.0))
    assert np.all(out == 0.0)
    out = separation.normalize_columns(np.array([[-1.0], [1.0]]), eps_s=1e-15)
    np.testing.assert_allclose(out[:, 0], [-1.0, 1.0], rtol=1e-12)
    x = rng.normal(2.0, 3.0, size=(200, 1))
    out = separation.normalize_columns(x, eps_s=1e-8)
    assert abs(out.mean()) < 1e-12
    assert np.var(out) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(InvalidArgumentError):
        separation.normalize_columns(np.ones((1, 3)))


def test_correlation_matrix_examples(rng):
    # full periods on a periodic grid: zero mean and mutually orthogonal
    t = np.arange(64) / 64
    ortho = np.column_stack([np.sin(2 * np.pi * t), np.cos(2 * np.pi * t), np.sin(4 * np.pi * t)])
    C = separation.correlation_matrix(separation.normalize_columns(ortho, 1e-300))
    np.testing.assert_allclose(C, np.eye(3), atol=1e-10)

    x = rng.standard_normal(30)
    C = separation.correlation_matrix(separation.normalize_columns(np.column_stack([x, x])))
    assert C[0, 1] == pytest.approx(1.0, abs=1e-6)

    S = rng.standard_normal((40, 3))
    C = separation.correlation_matrix(separation.normalize_columns(S, 1e-12))
    np.testing.assert_allclose(C, np.corrcoef(S.T), atol=1e-8)
    assert np.array_equal(C, C.T)


def test_separation_loss_examples():
    assert separation.separation_loss(np.eye(3)) == 0.0
    C = np.eye(3)
    C[0, 2] = C[2, 0] = 0.5
    assert separation.separation_loss(C) == 0.5


def test_grad_zero_at_uncorrelated():
    t = np.arange(64) / 64
    S = np.column_stack([np.sin(2 * np.pi * t), np.cos(2 * np.pi * t), np.sin(4 * np.pi * t)])
    loss, grad = separation.separation_loss_and_grad(S)
    assert loss < 1e-12  # eps_s leaves C_jj = 1 - O(eps_s)
    assert np.max(np.abs(grad)) <= 1e-8


def test_grad_matches_finite_differences(rng):
    S = rng.standard_normal((20, 3))
    S[:, 1] += 0.6 * S[:, 0]
    grad = separation.separation_grad(S)
    fd = central_diff(loss_of, S)
    assert max_rel_err(grad, fd) <= 1e-4


def test_grad_orthogonal_to_constant_shift(rng):
    S = rng.standard_normal((20, 3))
    S[:, 2] -= 0.4 * S[:, 1]
    grad = separation.separation_grad(S)
    assert np.max(np.abs(grad.sum(axis=0))) <= 1e-10
    shifted = S + np.array([5.0, -2.0, 0.3])
    assert loss_of(shifted) == pytest.approx(loss_of(S), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    scales=st.lists(
        st.floats(0.1, 10.0).flatmap(lambda a: st.sampled_from([a, -a])), min_size=3, max_size=3
    ),
    shifts=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
)
def test_loss_invariances(seed, scales, shifts):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((25, 3))
    S[:, 0] += 0.5 * S[:, 2]
    base = loss_of(S, 1e-12)
    assert base > 0
    assert loss_of(S * scales + shifts, 1e-12) == pytest.approx(base, abs=1e-6)
    perm = rng.permutation(3)
    assert loss_of(S[:, perm], 1e-12) == pytest.approx(base, abs=1e-12)

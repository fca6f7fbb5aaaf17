import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alloc_lab.errors import Singular
from alloc_lab.linalg import LinearSystem, kron, numerical_rank, solve_square, unvec, vec

shapes = st.tuples(st.integers(1, 4), st.integers(1, 4))


class TestVec:
    def test_column_major(self):
        assert vec(np.array([[1, 3], [2, 4]])).tolist() == [1, 2, 3, 4]

    def test_scalar(self):
        assert vec(np.array([[7]])).tolist() == [7]

    def test_transpose_differs(self):
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert not np.array_equal(vec(M), vec(M.T))

    def test_unvec_inverts(self, rng):
        M = rng.normal(size=(3, 5))
        assert np.array_equal(unvec(vec(M), 3, 5), M)

    def test_batched(self, rng):
        M = rng.normal(size=(4, 2, 3))
        assert np.array_equal(vec(M)[2], vec(M[2]))


class TestKron:
    def test_identity(self):
        assert np.array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))

    def test_rank_multiplicative(self, rng):
        A = rng.normal(size=(3, 2))
        B = rng.normal(size=(2, 4))
        assert numerical_rank(kron(A, B)) == numerical_rank(A) * numerical_rank(B)

    def test_vec_identity(self, rng):
        A, B, C = rng.normal(size=(2, 3)), rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
        assert np.allclose(vec(A @ B @ C), kron(C.T, A) @ vec(B), rtol=1e-12, atol=0)

    @given(shapes, shapes, st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_bilinear(self, sa, sb, seed):
        rng = np.random.default_rng(seed)
        A, A2, B = rng.normal(size=sa), rng.normal(size=sa), rng.normal(size=sb)
        lhs, rhs = kron(A + A2, B), kron(A, B) + kron(A2, B)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_mixed_product(self, m, n, p, q, k, l, seed):
        rng = np.random.default_rng(seed)
        A, B = rng.normal(size=(m, n)), rng.normal(size=(p, q))
        C, D = rng.normal(size=(n, k)), rng.normal(size=(q, l))
        assert np.allclose(kron(A, B) @ kron(C, D), kron(A @ C, B @ D), rtol=1e-12, atol=1e-13)


class TestRank:
    def test_zero(self):
        assert numerical_rank(np.zeros((3, 4))) == 0

    def test_identity(self):
        assert numerical_rank(np.eye(5)) == 5

    def test_outer(self, rng):
        assert numerical_rank(np.outer(rng.normal(size=4), rng.normal(size=6))) == 1


class TestSolveSquare:
    def test_identity(self):
        x = solve_square(LinearSystem(np.eye(3), [1, 2, 3]))
        assert x.tolist() == [1, 2, 3]

    def test_singular(self):
        with pytest.raises(Singular) as exc:
            solve_square(LinearSystem([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]))
        assert exc.value.rank == 1

    def test_random_well_conditioned(self, rng):
        Q, _ = np.linalg.qr(rng.normal(size=(20, 20)))
        A = Q @ np.diag(rng.uniform(1, 2, 20)) @ Q.T
        x_true = rng.normal(size=20)
        x = solve_square(LinearSystem(A, A @ x_true))
        assert np.max(np.abs(A @ x - A @ x_true)) <= 1e-10

    def test_non_square(self):
        with pytest.raises(ValueError):
            solve_square(LinearSystem(np.ones((2, 3)), [1.0, 1.0]))

    def test_rhs_length(self):
        with pytest.raises(ValueError):
            LinearSystem(np.eye(2), [1.0])

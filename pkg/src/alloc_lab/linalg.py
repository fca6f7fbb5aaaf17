"""Dense kernels: vectorization, Kronecker products, rank and square solves."""

from dataclasses import dataclass

import numpy as np

from .errors import Singular

TAU_LIN = 1e-8


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        rhs = np.asarray(self.rhs, dtype=float).ravel()
        if rhs.shape[0] != A.shape[0]:
            raise ValueError(f"rhs has length {rhs.shape[0]}, A has {A.shape[0]} rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "rhs", rhs)


def vec(M):
    """Stack the columns of ``M``; works on stacks of matrices too."""
    M = np.asarray(M)
    return np.swapaxes(M, -1, -2).reshape(M.shape[:-2] + (-1,))


def unvec(v, rows, cols):
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (cols, rows)), -1, -2)


def kron(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return np.kron(A, B)


def numerical_rank(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    tol = np.finfo(float).eps * max(M.shape) * s[0]
    return int(np.sum(s > tol))


def solve_square(sys, tau=TAU_LIN):
    """Solve ``A x = rhs`` for square ``A``.

    Raises :class:`Singular` when the numerical rank is below the dimension
    or when the computed solution misses the residual bound
    ``tau * (1 + ||rhs||_inf)``.  There is no least-squares fallback.
    """
    A, rhs = sys.A, sys.rhs
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"solve_square needs a square matrix, got {A.shape}")
    size = A.shape[0]
    if size == 0:
        return np.zeros(0)
    rank = numerical_rank(A)
    if rank < size:
        raise Singular(rank, size)
    x = np.linalg.solve(A, rhs)
    res, bound = np.max(np.abs(A @ x - rhs)), tau * (1.0 + np.max(np.abs(rhs)))
    if not res <= bound:
        raise Singular(rank, size, f"residual {res:.2e} exceeds {bound:.2e}")
    return x

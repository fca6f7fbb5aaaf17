"""Forward passes for the three model families and the LRNN canonical form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LffnConfig, LrnnConfig, ReluConfig
from .errors import NotDiagonalizable, ZeroProjection

EIG_DEFECT_TOL = 1e-8
ZERO_PROJECTION_TOL = 1e-10


@dataclass(frozen=True)
class LrnnWeights:
    W: np.ndarray
    B: np.ndarray
    D: np.ndarray

    @classmethod
    def from_dict(cls, w):
        return cls(np.asarray(w["W"]), np.asarray(w["B"]), np.asarray(w["D"]))


@dataclass(frozen=True)
class CanonicalLrnn:
    """Output-equivalence invariant ``(D V, V^-1 B, lambda)`` of a diagonalizable LRNN.

    Eigenvectors are scaled so that the first row of ``D V`` is all ones and
    ordered by ``(Re lambda, Im lambda)``.
    """

    DV: np.ndarray
    VinvB: np.ndarray
    lam: np.ndarray

    @property
    def n_free(self):
        # first row of DV is pinned to ones
        d, n = self.DV.shape
        return (d - 1) * n + self.VinvB.size + n

    def allclose(self, other, atol=1e-8):
        return (
            np.allclose(self.DV, other.DV, atol=atol)
            and np.allclose(self.VinvB, other.VinvB, atol=atol)
            and np.allclose(self.lam, other.lam, atol=atol)
        )


def step_inputs(X, T, b):
    """Split the stacked ``(T*b) x m`` input into the T per-step blocks."""
    X = np.asarray(X, dtype=float)
    return [X[t * b:(t + 1) * b] for t in range(T)]


def lrnn_forward(w, X):
    """``Y = D sum_t W^(T-t+1) B X_t`` via the recursion ``h <- W (h + B x_t)``."""
    W, B, D = (np.asarray(m, dtype=float) for m in (w.W, w.B, w.D))
    b = B.shape[1]
    X = np.asarray(X, dtype=float)
    T = X.shape[0] // b
    h = np.zeros((W.shape[0], X.shape[1]))
    for Xt in step_inputs(X, T, b):
        h = W @ (h + B @ Xt)
    return D @ h


def lffn_forward(weights, X):
    out = np.asarray(X, dtype=float)
    for Wl in weights:
        out = np.asarray(Wl, dtype=float) @ out
    return out


def relu_forward(W1, W2, X):
    return np.asarray(W2, dtype=float) @ np.maximum(0.0, np.asarray(W1, dtype=float) @ np.asarray(X, dtype=float))


def forward(cfg, weights, X):
    """Dispatch on the config type; ``weights`` is keyed as in :mod:`alloc_lab.core`."""
    if isinstance(cfg, LrnnConfig):
        return lrnn_forward(LrnnWeights.from_dict(weights), X)
    layers = [weights[f"L{l}"] for l in range(len(weights))]
    if isinstance(cfg, LffnConfig):
        return lffn_forward(layers, X)
    if isinstance(cfg, ReluConfig):
        return relu_forward(layers[0], layers[1], X)
    raise TypeError(f"unknown config {cfg!r}")


def transfer_blocks(w, T):
    """The per-step maps ``D W^(T-t+1) B`` for t = 1..T, each d x b."""
    W, B, D = (np.asarray(m, dtype=float) for m in (w.W, w.B, w.D))
    blocks = []
    P = W @ B
    for _ in range(T):
        blocks.append(D @ P)
        P = W @ P
    # blocks[s] = D W^(s+1) B, step t uses power T - t + 1
    return blocks[::-1]


def canonicalize(w):
    W, B, D = (np.asarray(m, dtype=float) for m in (w.W, w.B, w.D))
    lam, U = np.linalg.eig(W)
    U = U / np.linalg.norm(U, axis=0)
    s = np.linalg.svd(U, compute_uv=False)
    if s[-1] < EIG_DEFECT_TOL * s[0]:
        raise NotDiagonalizable(f"eigenvector matrix has singular value ratio {s[-1] / s[0]:.2e}")
    proj = D[0] @ U
    if np.min(np.abs(proj)) < ZERO_PROJECTION_TOL * max(1.0, np.max(np.abs(D[0]))):
        raise ZeroProjection("first decoder row is orthogonal to an eigenvector")
    V = U / proj
    order = np.lexsort((np.round(lam.imag, 12), np.round(lam.real, 12)))
    V, lam = V[:, order], lam[order]
    return CanonicalLrnn(DV=D @ V, VinvB=np.linalg.solve(V, B), lam=lam)


def canonical_forward(c, X, T):
    """Forward pass evaluated from a canonical triple."""
    b = c.VinvB.shape[1]
    Y = np.zeros((c.DV.shape[0], np.asarray(X).shape[1]), dtype=complex)
    for t, Xt in enumerate(step_inputs(X, T, b), start=1):
        Y += (c.DV * c.lam ** (T - t + 1)) @ c.VinvB @ Xt
    return Y.real

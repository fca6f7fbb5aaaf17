"""The two-unit, two-step recurrent example solved in closed form.

With n = 2, b = d = 1, T = 2 and m = 2 the inputs form a square invertible
matrix, so a student matches iff ``D W B = A1`` and ``D W^2 B = A2`` where
``A = [A2, A1] = Y X^-1``.  Two learnable entries of W leave one unknown
after the linear equation is used, and the quadratic one decides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Allocation, LrnnConfig, Target
from .errors import InvalidAllocation, WrongConfig
from .mp import MpEstimate, fingerprint
from .sampling import rng_for

EXAMPLE_CONFIG = LrnnConfig(n=2, b=1, d=1, T=2, m=2)

ALLOCATIONS = {
    "diag": ((0, 0), (1, 1)),
    "offdiag": ((0, 1), (1, 0)),
    "row0": ((0, 0), (0, 1)),
    "row1": ((1, 0), (1, 1)),
    "col0": ((0, 0), (1, 0)),
    "col1": ((0, 1), (1, 1)),
}
LINEAR_KINDS = ("row0", "row1", "col0", "col1")


@dataclass(frozen=True)
class QuadraticReduction:
    a: float
    b: float
    c: float
    A1: float
    A2: float

    @property
    def discriminant(self):
        return self.b * self.b - 4.0 * self.a * self.c

    @property
    def solvable(self):
        # boundary counted as solvable
        return bool(self.discriminant >= 0.0)


@dataclass(frozen=True)
class LinearCase:
    """Leading coefficient vanishes identically: ``b x + c = 0``."""

    b: float
    c: float
    A1: float
    A2: float

    @property
    def a(self):
        return 0.0

    @property
    def solvable(self):
        return bool(self.b != 0.0 or self.c == 0.0)


def example_allocation(kind):
    try:
        return Allocation(Target.RECURRENT, ALLOCATIONS[kind])
    except KeyError:
        raise InvalidAllocation(f"unknown example allocation {kind!r}; choose from {sorted(ALLOCATIONS)}") from None


def allocation_kind(a):
    for kind, entries in ALLOCATIONS.items():
        if a.target is Target.RECURRENT and tuple(a.entries) == tuple(sorted(entries)):
            return kind
    raise InvalidAllocation(f"{a.entries} is not one of the six two-entry recurrent allocations")


def quadratic_coefficients(W0, B, D, A1, A2, p, q):
    """Coefficients of the one-unknown quadratic, vectorized over leading axes.

    ``W0`` is (..., 2, 2) with zeros at the learnable cells ``p`` and ``q``;
    ``B`` and ``D`` are (..., 2).  The learnable cell whose coefficient in
    ``D W B`` is larger in magnitude is eliminated through the linear
    equation; the other one is the unknown x.
    """
    W0, B, D = (np.asarray(v, dtype=float) for v in (W0, B, D))
    A1, A2 = np.asarray(A1, dtype=float), np.asarray(A2, dtype=float)
    gp = D[..., p[0]] * B[..., p[1]]
    gq = D[..., q[0]] * B[..., q[1]]
    swap = np.abs(gp) > np.abs(gq)
    g_keep, g_elim = np.where(swap, gq, gp), np.where(swap, gp, gq)
    E = np.zeros((2, 2, 2))
    E[0][p] = 1.0
    E[1][q] = 1.0
    E_keep = np.where(swap[..., None, None], E[1], E[0])
    E_elim = np.where(swap[..., None, None], E[0], E[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = g_keep / g_elim
        shift = (A1 - np.einsum("...i,...ij,...j->...", D, W0, B)) / g_elim
    base = W0 + shift[..., None, None] * E_elim  # satisfies the linear equation at x = 0
    slope = E_keep - ratio[..., None, None] * E_elim

    def form(M):
        return np.einsum("...i,...ij,...j->...", D, M, B)

    a = form(slope @ slope)
    b = form(base @ slope + slope @ base)
    c = form(base @ base) - A2
    return a, b, c


def _check_config(cfg):
    if cfg != EXAMPLE_CONFIG:
        raise WrongConfig(f"the example needs n=2, b=1, d=1, T=2, m=2, got {cfg}")


def example_reduce(inst, a=None):
    """Reduce an example instance to its quadratic (or linear) equation in one unknown."""
    _check_config(inst.config)
    a = a or inst.allocations[0]
    kind = allocation_kind(a)
    p, q = ALLOCATIONS[kind]
    M = np.asarray(inst.Y) @ np.linalg.inv(np.asarray(inst.X))
    A2, A1 = float(M[0, 0]), float(M[0, 1])
    W0 = inst.fixed_part("W")
    B = np.asarray(inst.student["B"])[:, 0]
    D = np.asarray(inst.student["D"])[0]
    qa, qb, qc = (float(v) for v in quadratic_coefficients(W0, B, D, A1, A2, p, q))
    if kind in LINEAR_KINDS:
        return LinearCase(qb, qc, A1, A2)
    return QuadraticReduction(qa, qb, qc, A1, A2)


def _draw(rng, trials, shape, gain):
    return rng.normal(0.0, gain / np.sqrt(shape[1]), size=(trials,) + shape)


def example_draws(trials, seed=0, gain=1.0):
    """Teacher and fixed student weights for ``trials`` example instances."""
    rng = rng_for(seed, (11,))
    out = {}
    for who in ("teacher", "student"):
        out[who] = {
            "W": _draw(rng, trials, (2, 2), gain),
            "B": _draw(rng, trials, (2, 1), gain)[..., 0],
            "D": _draw(rng, trials, (1, 2), gain)[:, 0, :],
        }
    return out


def example_solvable(kind, draws):
    """Boolean array: does each drawn instance admit a match for ``kind``?"""
    p, q = ALLOCATIONS[kind]
    t, s = draws["teacher"], draws["student"]
    Wt = t["W"]
    A1 = np.einsum("ti,tij,tj->t", t["D"], Wt, t["B"])
    A2 = np.einsum("ti,tij,tj->t", t["D"], Wt @ Wt, t["B"])
    W0 = s["W"].copy()
    W0[:, p[0], p[1]] = 0.0
    W0[:, q[0], q[1]] = 0.0
    a, b, c = quadratic_coefficients(W0, s["B"], s["D"], A1, A2, p, q)
    if kind in LINEAR_KINDS:
        return (b != 0.0) | (c == 0.0)
    return b * b - 4.0 * a * c >= 0.0


def example_mp(kind, trials=100_000, seed=0, gain=1.0):
    """Exact-discriminant match probability of one of the six allocations."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    example_allocation(kind)
    ok = example_solvable(kind, example_draws(trials, seed, gain))
    fp = fingerprint(EXAMPLE_CONFIG, kind=kind, trials=trials, gain=gain)
    return MpEstimate.from_counts(int(ok.sum()), trials, fingerprint=fp, seed=seed)

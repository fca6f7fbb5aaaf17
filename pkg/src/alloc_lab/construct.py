"""Closed-form student construction for maximal allocations.

Every routine returns the full learnable matrix (fixed entries copied
bitwise from the student, learnable ones solved) and raises
:class:`~alloc_lab.errors.Singular` when a required linear system is
numerically singular.  There is no least-squares fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    LffnConfig,
    LrnnConfig,
    Reason,
    ReluConfig,
    Target,
    allocation_col_counts,
    allocation_row_counts,
)
from .errors import InvalidAllocation, NoSolution
from .linalg import LinearSystem, kron, solve_square, unvec, vec
from .models import forward, step_inputs

TAU_CONSTRUCT = 1e-8
TAU_RECURRENT = 1e-6


@dataclass(frozen=True)
class LinearEstimator:
    """Single linear map ``Y = W* X`` with a partly fixed student."""

    teacher: np.ndarray
    student: np.ndarray  # NaN at learnable entries
    X: np.ndarray

    @property
    def Y(self):
        return np.asarray(self.teacher) @ np.asarray(self.X)

    @property
    def scale(self):
        return float(np.max(np.abs(self.Y)))


@dataclass
class Construction:
    weights: dict
    residual: float
    method: str


def _merge(fixed, a, values):
    """Copy of ``fixed`` with the allocation filled from ``values``."""
    out = np.array(fixed, dtype=float)
    out[a.rows, a.cols] = values
    return out


def _check(residual, scale, tau):
    if not residual <= tau * (1.0 + scale):
        raise NoSolution(f"forward residual {residual:.3e} exceeds {tau:.0e} * (1 + {scale:.3e})")


def _row_solve(Y, Xp, fixed, a):
    """Solve ``W Xp = Y`` row by row for the learnable entries of each row.

    Rows without learnable entries must already reproduce their labels.
    """
    W = np.nan_to_num(np.array(fixed, dtype=float), nan=0.0)
    base = W @ Xp
    for i in range(W.shape[0]):
        S = a.cols[a.rows == i]
        if S.size == 0:
            continue
        # w_S Xp[S] = Y_i - fixed_i Xp  <=>  Xp[S]^T w_S^T = (...)^T
        W[i, S] = solve_square(LinearSystem(Xp[S].T, Y[i] - base[i]))
    return W


def _column_solve(C, target, fixed_vec, a, nrows):
    """Solve ``C[:, sel] w = target - C fixed_vec`` where ``sel`` indexes vec positions of ``a``."""
    sel = a.cols * nrows + a.rows
    return solve_square(LinearSystem(C[:, sel], target - C @ fixed_vec))


def match_linear_estimator(est, a):
    """Student for ``Y = W X`` when every row owns exactly m learnable weights."""
    counts = np.bincount(a.rows, minlength=np.asarray(est.student).shape[0])
    m = np.asarray(est.X).shape[1]
    if np.any(counts != m):
        raise InvalidAllocation("every row needs exactly m learnable weights")
    X = np.asarray(est.X, dtype=float)
    W = _row_solve(est.Y, X, est.student, a)
    W = _merge(est.student, a, W[a.rows, a.cols])
    _check(np.max(np.abs(W @ X - est.Y)), est.scale, TAU_CONSTRUCT)
    return W


def _lrnn_state(W, B, X, T):
    """``sum_t W^(T-t+1) B X_t`` via the recursion."""
    b = B.shape[1]
    h = np.zeros((W.shape[0], X.shape[1]))
    for Xt in step_inputs(X, T, b):
        h = W @ (h + B @ Xt)
    return h


def _require(a, target):
    if a.target is not target:
        raise InvalidAllocation(f"allocation targets {a.target.value}, expected {target.value}")


def _forward_residual(inst, weights):
    return float(np.max(np.abs(forward(inst.config, weights, inst.X) - inst.Y)))


def match_decoder(inst, a=None):
    """Decoder rows solved as independent linear estimators on the final hidden state."""
    a = a or inst.allocations[0]
    _require(a, Target.DECODER)
    cfg = inst.config
    if any(c != cfg.m for c in allocation_row_counts(a, cfg)):
        raise InvalidAllocation("every decoder row needs exactly m learnable weights")
    W, B = np.array(inst.student["W"]), np.array(inst.student["B"])
    H = _lrnn_state(W, B, np.array(inst.X), cfg.T)
    D = _row_solve(np.array(inst.Y), H, inst.student["D"], a)
    D = _merge(inst.student["D"], a, D[a.rows, a.cols])
    _check(_forward_residual(inst, inst.realize({"D": D[a.rows, a.cols]})), inst.scale, TAU_CONSTRUCT)
    return D


def encoder_matrix(W, D, X, T, b):
    """``sum_t (X_t^T (x) D W^(T-t+1))``: maps vec(B) to vec(Y)."""
    n = W.shape[0]
    C = 0.0
    P = np.eye(n)
    powers = []
    for _ in range(T):
        P = W @ P
        powers.append(P)
    for t, Xt in enumerate(step_inputs(X, T, b)):
        C = C + kron(Xt.T, D @ powers[T - t - 1])
    return C


def match_encoder(inst, a=None):
    """Solve the selected columns of the encoder Kronecker system."""
    a = a or inst.allocations[0]
    _require(a, Target.ENCODER)
    cfg = inst.config
    W, D = np.array(inst.student["W"]), np.array(inst.student["D"])
    C = encoder_matrix(W, D, np.array(inst.X), cfg.T, cfg.b)
    fixed = inst.fixed_part("B")
    w = _column_solve(C, vec(np.array(inst.Y)), vec(fixed), a, cfg.n)
    B = _merge(fixed, a, w)
    _check(_forward_residual(inst, inst.realize({"B": w})), inst.scale, TAU_CONSTRUCT)
    return B


def shift_gB(F, B):
    """``(F_2 | ... | F_T | B)`` for F made of T blocks of width ``b``."""
    F, B = np.atleast_2d(F), np.atleast_2d(B)
    b = B.shape[1]
    if F.shape[0] != B.shape[0] or b == 0 or F.shape[1] % b:
        raise ValueError(f"F {F.shape} is not a row of blocks shaped like B {B.shape}")
    return np.concatenate([F[:, b:], B], axis=1)


def shift_gD(F, D):
    """``(F_2 | ... | F_T | D)`` for F made of T blocks of width ``n``."""
    F, D = np.atleast_2d(F), np.atleast_2d(D)
    n = D.shape[1]
    if F.shape[0] != D.shape[0] or n == 0 or F.shape[1] % n:
        raise ValueError(f"F {F.shape} is not a row of blocks shaped like D {D.shape}")
    return np.concatenate([F[:, n:], D], axis=1)


def _labels_extended(inst, W):
    """LRNN output computed in extended precision."""
    ld = np.longdouble
    W, B, D = (np.asarray(M, dtype=ld) for M in (W, inst.student["B"], inst.student["D"]))
    X = np.asarray(inst.X, dtype=ld)
    cfg = inst.config
    h = np.zeros((cfg.n, X.shape[1]), dtype=ld)
    for Xt in step_inputs(X, cfg.T, cfg.b):
        h = W @ (h + B @ Xt)
    return D @ h


def _refine_recurrent(inst, a, W, steps=6):
    """Mixed-precision iterative refinement of a constructed recurrent solution.

    Learned recurrent weights can be large, and high powers of W amplify
    rounding in the two-step solve.  Each step evaluates the output residual
    in extended precision and applies the float64 Newton correction from the
    direct system; the iterate with the smallest float64 forward residual is
    kept.
    """
    from .reduce import reduce_recurrent_direct

    sys = reduce_recurrent_direct(inst, a)
    Y = np.asarray(inst.Y, dtype=np.longdouble)
    w = W[a.rows, a.cols].copy()
    best_w, best = w, _forward_residual(inst, inst.realize({"W": w}))
    for _ in range(steps):
        Wk = _merge(inst.student["W"], a, w)
        r = np.asarray(vec(_labels_extended(inst, Wk) - Y), dtype=float)
        try:
            w = w - np.linalg.solve(sys.jacobian(w), r)
        except np.linalg.LinAlgError:
            break
        res = _forward_residual(inst, inst.realize({"W": w}))
        if res < best:
            best_w, best = w, res
    return _merge(inst.student["W"], a, best_w)


def match_recurrent_rows(inst, a=None, return_state=False):
    """Row clause: every row of W holds 0 or T*b learnable weights.

    Step 1 solves for F (n x Tb) from the labels and the fully fixed rows;
    step 2 recovers each learnable row from ``W_i g_B(F) = F_i``.
    """
    a = a or inst.allocations[0]
    _require(a, Target.RECURRENT)
    cfg = inst.config
    n, b, T = cfg.n, cfg.b, cfg.T
    Tb = T * b
    counts = np.array(allocation_row_counts(a, cfg))
    if np.any((counts != 0) & (counts != Tb)):
        raise InvalidAllocation(f"every row must hold 0 or T*b = {Tb} learnable weights")
    fixed = inst.fixed_part("W")
    B, D = np.array(inst.student["B"]), np.array(inst.student["D"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    bot = np.flatnonzero(counts == 0)
    shift = np.eye(Tb, k=-b)  # (F shift)[:, block t] = F[:, block t+1]
    tail = np.zeros((n, Tb))
    tail[:, -b:] = B
    W_bot = fixed[bot]
    select = np.eye(n)[bot]
    A = np.vstack([
        kron(X.T, D),
        kron(shift.T, W_bot) - kron(np.eye(Tb), select),
    ])
    rhs = np.concatenate([vec(Y), -vec(W_bot @ tail)])
    F = unvec(solve_square(LinearSystem(A, rhs)), n, Tb)
    G = shift_gB(F, B)
    W = fixed.copy()
    for i in np.flatnonzero(counts == Tb):
        S = a.cols[a.rows == i]
        rest = W[i] @ G  # learnable entries are zero in ``fixed``
        W[i, S] = solve_square(LinearSystem(G[S].T, F[i] - rest))
    W = _refine_recurrent(inst, a, _merge(inst.student["W"], a, W[a.rows, a.cols]))
    _check(_forward_residual(inst, inst.realize({"W": W[a.rows, a.cols]})), inst.scale, TAU_RECURRENT)
    return (W, F) if return_state else W


def match_recurrent_cols(inst, a=None, return_state=False):
    """Column clause: every column of W holds 0 or T*d learnable weights.

    Step 1 solves for F (d x nT, blocks ``D W^(T-t+1)``) from the labels and
    the fully fixed columns; step 2 recovers each learnable column.
    """
    a = a or inst.allocations[0]
    _require(a, Target.RECURRENT)
    cfg = inst.config
    n, d, T = cfg.n, cfg.d, cfg.T
    Td, nT = T * d, n * T
    counts = np.array(allocation_col_counts(a, cfg))
    if np.any((counts != 0) & (counts != Td)):
        raise InvalidAllocation(f"every column must hold 0 or T*d = {Td} learnable weights")
    fixed = inst.fixed_part("W")
    B, D = np.array(inst.student["B"]), np.array(inst.student["D"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    Z = kron(np.eye(T), B) @ X
    keep = np.flatnonzero(counts == 0)
    K = kron(np.eye(T), fixed[:, keep])  # (nT) x (T |keep|)
    shift = np.eye(nT, k=-n)
    tail = np.zeros((d, nT))
    tail[:, -n:] = D
    pick = np.zeros((nT, T * keep.size))
    for t in range(T):
        pick[t * n + keep, t * keep.size + np.arange(keep.size)] = 1.0
    eye_d = np.eye(d)
    A = np.vstack([
        kron(Z.T, eye_d),
        kron((shift @ K).T, eye_d) - kron(pick.T, eye_d),
    ])
    rhs = np.concatenate([vec(Y), -vec(tail @ K)])
    F = unvec(solve_square(LinearSystem(A, rhs)), d, nT)
    G = shift_gD(F, D)
    G_stack = np.vstack([G[:, t * n:(t + 1) * n] for t in range(T)])  # (Td) x n
    W = fixed.copy()
    for j in np.flatnonzero(counts == Td):
        S = a.rows[a.cols == j]
        target = np.concatenate([F[:, t * n + j] for t in range(T)])
        W[S, j] = solve_square(LinearSystem(G_stack[:, S], target - G_stack @ W[:, j]))
    W = _refine_recurrent(inst, a, _merge(inst.student["W"], a, W[a.rows, a.cols]))
    _check(_forward_residual(inst, inst.realize({"W": W[a.rows, a.cols]})), inst.scale, TAU_RECURRENT)
    return (W, F) if return_state else W


def match_ff_layer(inst, a=None, layer=None):
    """Single learnable layer in a linear chain: selected Kronecker columns of ``B^T (x) A``."""
    a = a or inst.allocations[0]
    layer = a.layer if layer is None else layer
    if a.target is not Target.LAYER or a.layer != layer:
        raise InvalidAllocation(f"allocation does not target layer {layer}")
    cfg = inst.config
    L = cfg.L if isinstance(cfg, LffnConfig) else 2
    key = f"L{layer}"
    mats = [np.array(inst.student[f"L{l}"]) for l in range(L)]
    below = np.array(inst.X)
    for l in range(layer):
        below = mats[l] @ below
        if isinstance(cfg, ReluConfig):
            below = np.maximum(0.0, below)
    if layer == L - 1:
        Wl = _row_solve(np.array(inst.Y), below, inst.student[key], a)
        w = Wl[a.rows, a.cols]
    else:
        above = np.eye(mats[layer].shape[0])
        for l in range(layer + 1, L):
            above = mats[l] @ above
        C = kron(below.T, above)
        fixed = inst.fixed_part(key)
        w = _column_solve(C, vec(np.array(inst.Y)), vec(fixed), a, fixed.shape[0])
    Wl = _merge(inst.student[key], a, w)
    _check(_forward_residual(inst, inst.realize({key: w})), inst.scale, TAU_CONSTRUCT)
    return Wl


def construct(inst, verdict=None):
    """Route a single-matrix maximal instance to its construction.

    ``verdict`` (from :func:`alloc_lab.classify.classify`) picks the row or
    column clause for recurrent allocations; without it the row clause is
    tried when its precondition holds.
    """
    if len(inst.allocations) != 1:
        raise InvalidAllocation("construction handles single-matrix allocations")
    (a,) = inst.allocations
    cfg = inst.config
    if isinstance(cfg, LrnnConfig):
        if a.target is Target.DECODER:
            W, key, method = match_decoder(inst, a), "D", "decoder"
        elif a.target is Target.ENCODER:
            W, key, method = match_encoder(inst, a), "B", "encoder"
        else:
            use_cols = verdict is not None and verdict.reason is Reason.COLS_FULL_OR_EMPTY
            if verdict is None:
                counts = allocation_row_counts(a, cfg)
                use_cols = any(c not in (0, cfg.T * cfg.b) for c in counts)
            if use_cols:
                W, method = match_recurrent_cols(inst, a), "recurrent_cols"
            else:
                W, method = match_recurrent_rows(inst, a), "recurrent_rows"
            key = "W"
    else:
        W, key, method = match_ff_layer(inst, a), a.key, "ff_layer"
    weights = inst.realize({key: W[a.rows, a.cols]})
    return Construction(weights, _forward_residual(inst, weights), method)

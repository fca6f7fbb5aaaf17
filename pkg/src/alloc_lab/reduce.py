"""Reduced match systems as explicit residual/Jacobian pairs.

Every builder returns a square :class:`MatchSystem`.  Residuals and Jacobians
accept a batch of unknown vectors with shape ``(..., n_unknowns)`` so the
matcher can run many restarts in one numpy call.

Unknown ordering is fixed: learnable weights first (allocation order, each in
sorted entry order), then auxiliary state variables, each vectorized
column-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import LrnnConfig, ReluConfig, Target
from .linalg import LinearSystem, kron, unvec, vec
from .models import forward


@dataclass(frozen=True)
class MatchSystem:
    residual: Callable
    jacobian: Callable
    n_unknowns: int
    n_equations: int
    unknown_layout: dict
    scale: float
    start: Callable = field(repr=False)
    unpack: Callable = field(repr=False)
    name: str = ""

    def weights(self, x):
        """Learnable-weight part of an unknown vector."""
        return np.asarray(x)[..., self.unknown_layout["w"]]

    def polish(self, x, steps=3):
        """A few undamped Newton steps from ``x``, kept only while they reduce ``||residual||_inf``."""
        x = np.asarray(x, dtype=float)
        r = self.residual(x)
        for _ in range(steps):
            try:
                x_new = x - np.linalg.solve(self.jacobian(x), r)
            except np.linalg.LinAlgError:
                break
            r_new = self.residual(x_new)
            if not np.max(np.abs(r_new)) < np.max(np.abs(r)):
                break
            x, r = x_new, r_new
        return x, r


def _fill(base, rows, cols, w):
    W = np.broadcast_to(base, w.shape[:-1] + base.shape).copy()
    W[..., rows, cols] = w
    return W


def _batched_kron(A, B):
    """Kronecker product where either factor may carry leading batch axes."""
    A, B = np.asarray(A), np.asarray(B)
    out = A[..., :, None, :, None] * B[..., None, :, None, :]
    shape = out.shape[:-4] + (A.shape[-2] * B.shape[-2], A.shape[-1] * B.shape[-1])
    return out.reshape(shape)


def _recurrent_parts(inst, a):
    if not isinstance(inst.config, LrnnConfig):
        raise TypeError("recurrent reductions need an LRNN instance")
    if a is None:
        (a,) = inst.allocations
    if a.target is not Target.RECURRENT:
        raise ValueError("allocation must target the recurrent matrix")
    return inst.config, a


def _start_weights(rng, r, fan_in, gain):
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=r)


def reduce_recurrent_rows(inst, a=None, gain=1.0):
    """``W g_B(F) = F`` and ``D F X = Y`` with F of shape n x (T*b).

    Blockwise: ``W F_{t+1} = F_t`` for t < T and ``W B = F_T``, so
    ``F_t = W^(T-t+1) B`` at any solution.
    """
    cfg, a = _recurrent_parts(inst, a)
    n, b, d, T, m = cfg.n, cfg.b, cfg.d, cfg.T, cfg.m
    Tb, r = T * b, len(a)
    rows, cols = a.rows, a.cols
    W0 = inst.fixed_part("W")
    B, D = np.array(inst.student["B"]), np.array(inst.student["D"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    nF = n * Tb
    N, E = r + nF, nF + d * m
    shift_T = np.eye(Tb, k=-b).T  # G = F @ shift + [0 .. 0 B]
    J_samples = kron(X.T, D)
    eye_F = np.eye(nF)
    vecY = vec(Y)
    c_idx = np.arange(Tb)

    def split(x):
        x = np.asarray(x, dtype=float)
        return _fill(W0, rows, cols, x[..., :r]), unvec(x[..., r:], n, Tb)

    def shifted(F):
        return np.concatenate([F[..., :, b:], np.broadcast_to(B, F.shape[:-2] + B.shape)], axis=-1)

    def residual(x):
        W, F = split(x)
        G = shifted(F)
        dyn = vec(W @ G - F)
        samples = vec(D @ F @ X) - vecY
        return np.concatenate([dyn, samples], axis=-1)

    def jacobian(x):
        W, F = split(x)
        G = shifted(F)
        batch = W.shape[:-2]
        J = np.zeros(batch + (E, N))
        J[..., :nF, r:] = _batched_kron(shift_T, W) - eye_F
        # d(W G)[i, c] / d W[i, j] = G[j, c]
        J[..., c_idx[None, :] * n + rows[:, None], np.arange(r)[:, None]] = G[..., cols[:, None], c_idx[None, :]]
        J[..., nF:, r:] = J_samples
        return J

    def start(rng):
        w = _start_weights(rng, r, n, gain)
        W = _fill(W0, rows, cols, w)
        blocks, P = [], W @ B
        for _ in range(T):
            blocks.append(P)
            P = W @ P
        F = np.concatenate(blocks[::-1], axis=1)
        return np.concatenate([w, vec(F)])

    def unpack(x):
        W, F = split(x)
        return {"W": W, "F": F}

    layout = {"w": slice(0, r), "F": slice(r, N)}
    return MatchSystem(residual, jacobian, N, E, layout, inst.scale, start, unpack, "recurrent_rows")


def reduce_recurrent_direct(inst, a=None, gain=1.0):
    """Unlifted recurrent system: ``D sum_t W^(T-t+1) B X_t = Y`` in the r learnable entries.

    Same solution set as :func:`reduce_recurrent_rows` (F is determined by W
    there), but with only r unknowns; the Jacobian is propagated through the
    recursion ``h_t = W (h_(t-1) + B x_t)`` in forward mode.
    """
    cfg, a = _recurrent_parts(inst, a)
    n, b, T = cfg.n, cfg.b, cfg.T
    r = len(a)
    rows, cols = a.rows, a.cols
    W0 = inst.fixed_part("W")
    B, D = np.array(inst.student["B"]), np.array(inst.student["D"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    d, m = Y.shape
    BX = [B @ X[t * b:(t + 1) * b] for t in range(T)]
    vecY = vec(Y)
    k_idx = np.arange(r)

    def residual(x):
        W = _fill(W0, rows, cols, np.asarray(x, dtype=float))
        h = np.zeros(W.shape[:-2] + (n, m))
        for t in range(T):
            h = W @ (h + BX[t])
        return vec(D @ h) - vecY

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        W = _fill(W0, rows, cols, x)
        batch = W.shape[:-2]
        h = np.zeros(batch + (n, m))
        dh = np.zeros(batch + (r, n, m))
        for t in range(T):
            g = h + BX[t]
            dh = W[..., None, :, :] @ dh
            dh[..., k_idx, rows, :] += g[..., cols, :]
            h = W @ g
        out = D @ dh  # (..., r, d, m)
        return np.moveaxis(out, -3, -1).swapaxes(-3, -2).reshape(batch + (d * m, r))

    def start(rng):
        return _start_weights(rng, r, n, gain)

    def unpack(x):
        return {"W": _fill(W0, rows, cols, np.asarray(x, dtype=float))}

    return MatchSystem(residual, jacobian, r, d * m, {"w": slice(0, r)}, inst.scale, start, unpack, "recurrent_direct")


def reduce_recurrent_cols(inst, a=None, gain=1.0):
    """``g_D(F) (I_T (x) W) = F`` and ``F (I_T (x) B) X = Y`` with F of shape d x (n*T).

    Blockwise: ``F_{t+1} W = F_t`` for t < T and ``D W = F_T``, so
    ``F_t = D W^(T-t+1)``.
    """
    cfg, a = _recurrent_parts(inst, a)
    n, b, d, T, m = cfg.n, cfg.b, cfg.d, cfg.T, cfg.m
    nT, r = n * T, len(a)
    rows, cols = a.rows, a.cols
    W0 = inst.fixed_part("W")
    B, D = np.array(inst.student["B"]), np.array(inst.student["D"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    Z = kron(np.eye(T), B) @ X  # block t is B X_t
    nF = d * nT
    N, E = r + nF, nF + d * m
    shift = np.eye(nT, k=-n)
    eye_T, eye_d, eye_F = np.eye(T), np.eye(d), np.eye(nF)
    J_samples = kron(Z.T, eye_d)
    vecY = vec(Y)
    t_idx, a_idx = np.meshgrid(np.arange(T), np.arange(d), indexing="ij")

    def split(x):
        x = np.asarray(x, dtype=float)
        return _fill(W0, rows, cols, x[..., :r]), unvec(x[..., r:], d, nT)

    def shifted(F):
        return np.concatenate([F[..., :, n:], np.broadcast_to(D, F.shape[:-2] + D.shape)], axis=-1)

    def residual(x):
        W, F = split(x)
        G = shifted(F)
        GW = np.concatenate([G[..., :, t * n:(t + 1) * n] @ W for t in range(T)], axis=-1)
        return np.concatenate([vec(GW - F), vec(F @ Z) - vecY], axis=-1)

    def jacobian(x):
        W, F = split(x)
        G = shifted(F)
        batch = W.shape[:-2]
        J = np.zeros(batch + (E, N))
        K = _batched_kron(eye_T, W)
        J[..., :nF, r:] = _batched_kron(np.swapaxes(shift @ K, -1, -2), eye_d) - eye_F
        # d(G_t W)[a, j] / d W[i, j] = G_t[a, i]
        eq = (t_idx[None] * n + cols[:, None, None]) * d + a_idx[None]
        J[..., eq, np.arange(r)[:, None, None]] = G[..., a_idx[None], t_idx[None] * n + rows[:, None, None]]
        J[..., nF:, r:] = J_samples
        return J

    def start(rng):
        w = _start_weights(rng, r, n, gain)
        W = _fill(W0, rows, cols, w)
        blocks, P = [], D @ W
        for _ in range(T):
            blocks.append(P)
            P = P @ W
        F = np.concatenate(blocks[::-1], axis=1)
        return np.concatenate([w, vec(F)])

    def unpack(x):
        W, F = split(x)
        return {"W": W, "F": F}

    layout = {"w": slice(0, r), "F": slice(r, N)}
    return MatchSystem(residual, jacobian, N, E, layout, inst.scale, start, unpack, "recurrent_cols")


def reduce_ff(inst, allocations=None, gain=1.0):
    """Chain ``W_0 X = F_0``, ``W_l F_{l-1} = F_l``, ``W_{L-1} F_{L-2} = Y``.

    Layers are zero-based; layers without learnable weights contribute
    equations that are linear in the F unknowns.
    """
    cfg = inst.config
    allocations = tuple(inst.allocations if allocations is None else allocations)
    widths = cfg.layer_widths if not isinstance(cfg, ReluConfig) else (cfg.q, cfg.n, cfg.d)
    L, m = len(widths) - 1, cfg.m
    if isinstance(cfg, ReluConfig):
        raise TypeError("reduce_ff handles linear chains; use reduce_relu for ReLU networks")
    by_layer = {a.layer: a for a in allocations}
    w_slices, start_idx = {}, 0
    for a in allocations:
        w_slices[a.layer] = slice(start_idx, start_idx + len(a))
        start_idx += len(a)
    r = start_idx
    f_slices = []
    for l in range(L - 1):
        size = widths[l + 1] * m
        f_slices.append(slice(start_idx, start_idx + size))
        start_idx += size
    N = start_idx
    E = sum(widths[l + 1] * m for l in range(L))
    bases = [inst.fixed_part(f"L{l}") for l in range(L)]
    X, Y = np.array(inst.X), np.array(inst.Y)
    vecY = vec(Y)
    eq_offsets = np.cumsum([0] + [widths[l + 1] * m for l in range(L)])
    eye_m = np.eye(m)

    def layers(x):
        out = []
        for l in range(L):
            a = by_layer.get(l)
            if a is None:
                out.append(np.broadcast_to(bases[l], x.shape[:-1] + bases[l].shape))
            else:
                out.append(_fill(bases[l], a.rows, a.cols, x[..., w_slices[l]]))
        return out

    def states(x):
        return [unvec(x[..., s], widths[l + 1], m) for l, s in enumerate(f_slices)]

    def residual(x):
        x = np.asarray(x, dtype=float)
        Ws, Fs = layers(x), states(x)
        parts = []
        for l in range(L):
            inp = X if l == 0 else Fs[l - 1]
            out = vec(Ws[l] @ inp)
            parts.append(out - (vec(Fs[l]) if l < L - 1 else vecY))
        return np.concatenate(parts, axis=-1)

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        Ws, Fs = layers(x)[:], states(x)
        batch = x.shape[:-1]
        J = np.zeros(batch + (E, N))
        for l in range(L):
            e0, n_out = eq_offsets[l], widths[l + 1]
            inp = np.broadcast_to(X, batch + X.shape) if l == 0 else Fs[l - 1]
            if l > 0:
                s = f_slices[l - 1]
                J[..., e0:e0 + n_out * m, s] = _batched_kron(eye_m, Ws[l])
            if l < L - 1:
                s = f_slices[l]
                J[..., e0:e0 + n_out * m, s] -= np.eye(n_out * m)
            a = by_layer.get(l)
            if a is not None:
                c = np.arange(m)
                k = np.arange(w_slices[l].start, w_slices[l].stop)
                J[..., e0 + c[None, :] * n_out + a.rows[:, None], k[:, None]] = inp[..., a.cols[:, None], c[None, :]]
        return J

    def start(rng):
        x = np.zeros(N)
        for a in allocations:
            x[w_slices[a.layer]] = _start_weights(rng, len(a), widths[a.layer], gain)
        Ws = layers(x)
        h = X
        for l in range(L - 1):
            h = Ws[l] @ h
            x[f_slices[l]] = vec(h)
        return x

    def unpack(x):
        return {f"L{l}": W for l, W in enumerate(layers(np.asarray(x, dtype=float)))}

    layout = {"w": slice(0, r)}
    layout.update({f"F{l}": s for l, s in enumerate(f_slices)})
    return MatchSystem(residual, jacobian, N, E, layout, inst.scale, start, unpack, "ff_chain")


def reduce_affine(inst, gain=1.0):
    """Direct system for allocations whose output is affine in the learnable weights.

    Covers decoder, encoder and single-layer linear FF allocations.  The
    system matrix is the set of Kronecker columns picked out by the
    allocation, built column by column from unit perturbations.
    """
    (a,) = inst.allocations
    if a.target is Target.RECURRENT:
        raise ValueError("recurrent allocations are not affine in the learnable weights")
    r = len(a)
    zero = inst.realize(np.zeros(r))
    base = vec(forward(inst.config, zero, inst.X))
    C = np.empty((base.size, r))
    for k in range(r):
        e = np.zeros(r)
        e[k] = 1.0
        C[:, k] = vec(forward(inst.config, inst.realize(e), inst.X)) - base
    const = base - vec(inst.Y)
    fan_in = np.array(inst.student[a.key]).shape[1]

    def residual(x):
        return np.asarray(x, dtype=float) @ C.T + const

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(C, x.shape[:-1] + C.shape).copy()

    def start(rng):
        return _start_weights(rng, r, fan_in, gain)

    def unpack(x):
        return inst.realize(x)

    return MatchSystem(residual, jacobian, r, C.shape[0], {"w": slice(0, r)}, inst.scale, start, unpack, "affine")


def reduce_system(inst, gain=1.0):
    """Default reduced system for an instance."""
    cfg = inst.config
    if isinstance(cfg, LrnnConfig):
        (a,) = inst.allocations
        if a.target is Target.RECURRENT:
            return reduce_recurrent_rows(inst, a, gain)
        return reduce_affine(inst, gain)
    if isinstance(cfg, ReluConfig):
        raise TypeError("ReLU instances are matched through reduce_relu")
    if len(inst.allocations) == 1:
        return reduce_affine(inst, gain)
    return reduce_ff(inst, gain=gain)


# ---------------------------------------------------------------------------
# ReLU: fixed activation pattern -> linear system + sign constraints


@dataclass(frozen=True)
class ReluConstraints:
    """Sign conditions ``(2 P_i - I) W1[k rows] x_i >= 0`` for a solved pattern."""

    krows: np.ndarray
    pattern: np.ndarray  # (m, k) zeros and ones
    base_rows: np.ndarray  # fixed part of the k rows, learnable entries zeroed
    X: np.ndarray
    entry_rows: np.ndarray  # position of each learnable entry within krows
    entry_cols: np.ndarray

    def preactivations(self, w):
        Wk = self.base_rows.copy()
        Wk[self.entry_rows, self.entry_cols] = w
        return (Wk @ self.X).T  # (m, k)

    def margins(self, w):
        return (2 * self.pattern - 1) * self.preactivations(w)

    def satisfied(self, w, tol=1e-10):
        return bool(np.all(self.margins(w) >= -tol))


def relu_rows(a):
    """Sorted distinct rows touched by the allocation."""
    return np.unique(a.rows)


def reduce_relu(inst, a, P):
    """Linear system in the learnable W1 entries for the activation pattern ``P``.

    ``P`` has shape ``(m, k)``: ``P[i, s]`` is 1 when allocated row
    ``krows[s]`` is active on sample i.  Equation block i reads
    ``W2[:, k] P_i W1[k] x_i = y_i - W2[:, rest] relu(W1[rest] x_i)``.
    """
    W1 = inst.fixed_part("L0")
    W2 = np.array(inst.student["L1"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    d, m = Y.shape
    krows = relu_rows(a)
    rest = np.setdiff1d(np.arange(W1.shape[0]), krows)
    P = np.asarray(P, dtype=float).reshape(m, len(krows))
    pos = np.searchsorted(krows, a.rows)
    rhs = Y - W2[:, rest] @ np.maximum(0.0, W1[rest] @ X)
    rhs = rhs - W2[:, krows] @ (P.T * (W1[krows] @ X))
    # column for entry (row a, col j): block i = W2[:, a] * P[i, a] * X[j, i]
    A = (W2[:, krows[pos]][None, :, :] * (P[:, pos] * X[a.cols].T)[:, None, :]).reshape(m * d, len(a))
    constraints = ReluConstraints(krows, P, W1[krows], X, pos, a.cols)
    return LinearSystem(A, vec(rhs)), constraints

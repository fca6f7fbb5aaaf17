"""Numerical matching for allocations no theorem settles.

:func:`root_find` runs damped Newton from many random starts on a square
:class:`~alloc_lab.reduce.MatchSystem`.  Every restart is seeded from its
own stream and its trajectory never depends on the budget, so results are
monotone in the budget and reproducible from the seed.  The batched
Levenberg-Marquardt path evaluates restarts in fixed-size chunks as one
numpy computation.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import EnumerationTooLarge, NoSolution
from .linalg import solve_square, vec
from .reduce import MatchSystem, _fill, reduce_relu, relu_rows
from .sampling import rng_for

TAU_MATCH = 1e-8
RELU_MSE_TOL = 1e-2
RELU_STALL = (25, 1e-2)  # ReLU cost is piecewise quadratic; plateaus do not recover
DEFAULT_BUDGET_LRNN = 400
DEFAULT_BUDGET_FF = 200
CHUNK = 16
MAX_ITER = 600
HYBR_MAX_ITER = 200
ENUMERATION_BOUND = 20
START_SPREAD = 4.0  # decades of magnification for the spread restarts
SPREAD_EVERY = 4  # every SPREAD_EVERY-th restart is a spread one

_RESTART_TAG = 7


@dataclass
class MatchAttemptReport:
    matched: bool
    best_residual: float
    restarts_used: int
    solution: Optional[np.ndarray] = None
    wall_time: float = 0.0

    def same_outcome(self, other):
        return (
            self.matched == other.matched
            and self.restarts_used == other.restarts_used
            and self.best_residual == other.best_residual
        )


def match_tolerance(sys):
    return TAU_MATCH * (1.0 + sys.scale)


def levenberg_marquardt(residual, jacobian, x, done, max_iter=MAX_ITER, damping="nielsen", stall=None):
    """Batched Levenberg-Marquardt on the rows of ``x``.

    Each row keeps its own damping ``mu``, started at ``1e-6 ||J||_F^2``.
    With ``damping="tenfold"`` it is divided by 10 after an accepted step and
    multiplied by 10 after a rejected one.  ``"nielsen"`` scales accepted
    steps by the gain ratio instead (``max(1/3, 1 - (2 rho - 1)^3)``) and
    doubles the growth factor on consecutive rejections, which converges on
    far more restarts of the recurrent systems for the same iteration count.
    A row stops once ``done(r)`` holds or its damping exceeds ``1e12 ||J||^2``.
    ``stall=(window, rel)`` also stops a row whose cost fell by less than the
    fraction ``rel`` over the last ``window`` iterations.
    Returns the final points and residuals.
    """
    if damping not in ("nielsen", "tenfold"):
        raise ValueError(f"unknown damping rule {damping!r}")
    x = np.array(x, dtype=float)
    R, N = x.shape
    r = residual(x)
    J = jacobian(x)
    cost = np.einsum("ij,ij->i", r, r)
    jnorm = np.einsum("ijk,ijk->i", J, J)
    mu = 1e-6 * jnorm + 1e-300
    mu_cap = 1e12 * (jnorm + 1.0)
    nu = np.full(R, 2.0)
    active = ~done(r) & np.isfinite(cost)
    eye = np.eye(N)
    if stall is not None:
        window, rel = stall
        history = [cost.copy()]
    for it in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Ja, ra = J[idx], r[idx]
        JtJ = np.swapaxes(Ja, -1, -2) @ Ja
        g = np.einsum("ijk,ij->ik", Ja, ra)
        A = JtJ + mu[idx, None, None] * eye
        try:
            step = np.linalg.solve(A, -g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(Ai, -gi, rcond=None)[0] for Ai, gi in zip(A, g)])
        x_new = x[idx] + step
        with np.errstate(over="ignore", invalid="ignore"):
            r_new = residual(x_new)
            cost_new = np.einsum("ij,ij->i", r_new, r_new)
        ok = np.isfinite(cost_new) & (cost_new < cost[idx])
        acc, rej = idx[ok], idx[~ok]
        if damping == "nielsen":
            # predicted decrease of the local quadratic model
            pred = -(2.0 * np.einsum("ij,ij->i", g, step) + np.einsum("ij,ijk,ik->i", step, JtJ, step))
            rho = (cost[idx] - cost_new) / np.maximum(pred, 1e-300)
            mu[acc] *= np.maximum(1.0 / 3.0, 1.0 - (2.0 * rho[ok] - 1.0) ** 3)
            nu[acc] = 2.0
            mu[rej] *= nu[rej]
            nu[rej] *= 2.0
        else:
            mu[acc] /= 10.0
            mu[rej] *= 10.0
        if acc.size:
            x[acc] = x_new[ok]
            r[acc] = r_new[ok]
            cost[acc] = cost_new[ok]
            J[acc] = jacobian(x[acc])
        active[idx] = ~done(r[idx]) & (mu[idx] < mu_cap[idx])
        if stall is not None:
            history.append(cost.copy())
            if len(history) > window:
                old = history.pop(0)
                active &= cost < (1.0 - rel) * old
    return x, r


def _start(sys, seed, stream, i, spread):
    """Start of restart ``i``: an ensemble draw, magnified by ``10**U(0, spread)``
    on every ``SPREAD_EVERY``-th restart.

    Polynomial match systems often have their only real roots far outside
    the weight ensemble, so a share of the restarts probes larger magnitudes.
    """
    rng = rng_for(seed, tuple(stream) + (_RESTART_TAG, int(i)))
    x = np.array(sys.start(rng), dtype=float)
    if spread > 0 and i % SPREAD_EVERY == SPREAD_EVERY - 1:
        x[sys.unknown_layout["w"]] *= 10.0 ** rng.uniform(0.0, spread)
    return x


def _multistart(sys, budget, seed, stream, starts, score, threshold, max_iter, damping, stall=None, spread=0.0):
    """Run restarts chunk by chunk; first restart (by index) with ``score <= threshold`` wins."""
    t0 = time.perf_counter()
    if budget <= 0:
        return MatchAttemptReport(False, float("inf"), 0, None, time.perf_counter() - t0)

    def done(r):
        return score(r) <= threshold

    best, best_x = float("inf"), None
    for c0 in range(0, budget, CHUNK):
        ids = np.arange(c0, c0 + CHUNK)
        if starts is not None:
            starts = np.atleast_2d(np.asarray(starts, dtype=float))
            x0 = starts[np.minimum(ids, len(starts) - 1)]
        else:
            x0 = np.stack([_start(sys, seed, stream, i, spread) for i in ids])
        x, r = levenberg_marquardt(sys.residual, sys.jacobian, x0, done, max_iter, damping, stall)
        err = score(r)
        err[(ids >= budget) | ~np.isfinite(err)] = np.inf
        hits = np.flatnonzero(err <= threshold)
        if hits.size:
            i = hits[0]
            return MatchAttemptReport(True, float(err[i]), int(ids[i]) + 1, x[i], time.perf_counter() - t0)
        j = int(np.argmin(err))
        if err[j] < best:
            best, best_x = float(err[j]), x[j]
    return MatchAttemptReport(False, best, budget, best_x, time.perf_counter() - t0)


def _hybrid(sys, budget, seed, stream, starts, tol, max_iter, spread=0.0):
    """Sequential MINPACK hybrid (Powell dogleg) solves, one per restart."""
    t0 = time.perf_counter()
    best, best_x = float("inf"), None
    maxfev = max_iter * (sys.n_unknowns + 1)
    for i in range(max(budget, 0)):
        if starts is not None:
            starts = np.atleast_2d(np.asarray(starts, dtype=float))
            x0 = starts[min(i, len(starts) - 1)]
        else:
            x0 = _start(sys, seed, stream, i, spread)
        with np.errstate(all="ignore"):
            sol = optimize.root(sys.residual, x0, jac=sys.jacobian, method="hybr", options={"maxfev": maxfev})
            x, r = sol.x, sys.residual(sol.x)
            err = float(np.max(np.abs(r)))
            if tol < err < 1e-3 * (1.0 + sys.scale):
                x, r = sys.polish(x)
                err = float(np.max(np.abs(r)))
        if not np.isfinite(err):
            continue
        if err <= tol:
            return MatchAttemptReport(True, err, i + 1, x, time.perf_counter() - t0)
        if err < best:
            best, best_x = err, x
    return MatchAttemptReport(False, best, max(budget, 0), best_x, time.perf_counter() - t0)


def root_find(
    sys,
    budget=DEFAULT_BUDGET_LRNN,
    seed=0,
    tol=None,
    max_iter=None,
    starts=None,
    method="hybr",
    damping="nielsen",
    stream=(),
    spread=START_SPREAD,
):
    """Multi-start damped Newton on a square match system.

    The attempt matches iff some restart reaches ``||residual||_inf <= tol``
    (default ``1e-8 (1 + ||Y||_inf)``).  Restart ``i`` starts from
    ``sys.start(rng_for(seed, stream + (7, i)))`` unless explicit ``starts``
    are given, and the first matching restart by index wins, so the report
    is deterministic and monotone in ``budget``.  Every fourth restart multiplies the
    weight unknowns by ``10**U(0, spread)``; ``spread=0`` keeps every start
    at ensemble scale.

    ``method="hybr"`` (default) runs MINPACK's hybrid dogleg solver per
    restart, which abandons non-progressing starts early.  ``method="lm"``
    runs the batched Levenberg-Marquardt iteration of
    :func:`levenberg_marquardt` with the given ``damping`` rule.
    ``best_residual`` is the smallest final ``||residual||_inf`` seen.
    """
    tol = match_tolerance(sys) if tol is None else tol
    if method == "hybr":
        return _hybrid(sys, budget, seed, stream, starts, tol, HYBR_MAX_ITER if max_iter is None else max_iter, spread)
    if method != "lm":
        raise ValueError(f"unknown root-finding method {method!r}")
    max_iter = MAX_ITER if max_iter is None else max_iter
    with np.errstate(over="ignore", invalid="ignore"):
        return _multistart(sys, budget, seed, stream, starts, _sup_norm, tol, max_iter, damping, spread=spread)


def _sup_norm(r):
    return np.max(np.abs(r), axis=-1)


def _mse(r):
    return np.mean(r * r, axis=-1)


# ---------------------------------------------------------------------------
# ReLU


def _relu_parts(inst, a):
    if a is None:
        (a,) = inst.allocations
    if a.key != "L0":
        raise ValueError("ReLU matching learns the first layer")
    return a


def row_patterns(m, min_ones):
    """All activation patterns (length-m 0/1 tuples) with at least ``min_ones`` ones."""
    return [p for p in itertools.product((0, 1), repeat=m) if sum(p) >= min_ones]


def iter_configurations(k, m, row_counts, d, prune=True):
    """Yield ``(m, k)`` activation configurations.

    With ``prune`` only configurations surviving both necessary conditions
    are produced: allocated row s must be active on at least ``row_counts[s]``
    samples, and every sample must activate at least ``d`` allocated rows.
    """
    per_row = [row_patterns(m, row_counts[s] if prune else 0) for s in range(k)]
    for combo in itertools.product(*per_row):
        P = np.array(combo, dtype=float).T
        if prune and np.any(P.sum(axis=1) < d):
            continue
        yield P


def relu_match_exact(inst, a=None, prune=True, tol=1e-10):
    """Enumerate activation configurations, solve each linear system, check signs."""
    t0 = time.perf_counter()
    a = _relu_parts(inst, a)
    cfg = inst.config
    krows = relu_rows(a)
    k, m, d = len(krows), cfg.m, cfg.d
    if k * m > ENUMERATION_BOUND:
        raise EnumerationTooLarge(f"k*m = {k * m} exceeds the enumeration bound {ENUMERATION_BOUND}")
    counts = np.bincount(np.searchsorted(krows, a.rows), minlength=k)
    tried, best = 0, float("inf")
    for P in iter_configurations(k, m, counts, d, prune):
        tried += 1
        system, constraints = reduce_relu(inst, a, P)
        try:
            w = solve_square(system)
        except NoSolution:
            continue
        margin = float(np.min(constraints.margins(w)))
        best = min(best, max(0.0, -margin))
        if margin >= -tol:
            return MatchAttemptReport(True, 0.0, tried, w, time.perf_counter() - t0)
    return MatchAttemptReport(False, best, tried, None, time.perf_counter() - t0)


def relu_system(inst, a=None, gain=1.0):
    """Direct residual ``W2 relu(W1 X) - Y`` over the learnable W1 entries."""
    a = _relu_parts(inst, a)
    base = inst.fixed_part("L0")
    W2 = np.array(inst.student["L1"])
    X, Y = np.array(inst.X), np.array(inst.Y)
    d, m = Y.shape
    r = len(a)
    rows, cols = a.rows, a.cols
    V = W2[:, rows]
    vecY = vec(Y)
    Xsel = X[cols]

    def residual(x):
        W1 = _fill(base, rows, cols, np.asarray(x, dtype=float))
        return vec(W2 @ np.maximum(0.0, W1 @ X)) - vecY

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        W1 = _fill(base, rows, cols, x)
        active = (W1 @ X)[..., rows, :] > 0
        M = active * Xsel
        return np.einsum("dr,...rm->...mdr", V, M).reshape(x.shape[:-1] + (m * d, r))

    def start(rng):
        return rng.normal(0.0, gain / np.sqrt(base.shape[1]), size=r)

    return MatchSystem(residual, jacobian, r, d * m, {"w": slice(0, r)}, inst.scale, start, inst.realize, "relu")


def relu_match_opt(
    inst,
    a=None,
    budget=DEFAULT_BUDGET_FF,
    seed=0,
    mse_tol=RELU_MSE_TOL,
    max_iter=MAX_ITER,
    starts=None,
    damping="nielsen",
    stream=(),
    stall=RELU_STALL,
):
    """Damped Gauss-Newton on the squared ReLU residual; matched iff MSE <= ``mse_tol``.

    ``best_residual`` reports the best MSE rather than a sup norm.  Restarts
    whose cost plateaus (see ``stall`` in :func:`levenberg_marquardt`) are
    abandoned; pass ``stall=None`` to run every restart to ``max_iter``.
    """
    return _multistart(relu_system(inst, a), budget, seed, stream, starts, _mse, mse_tol, max_iter, damping, stall)

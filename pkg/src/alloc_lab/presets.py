"""Desk-scale experiment presets for ``alloc-lab repro``.

Each preset keeps the full-scale protocol and shrinks only sizes and trial
counts:

fig2a
    LRNN with b = 1, d = 4, T = m = n/2, n in {8, 12}; d*m recurrent weights
    confined to k random rows, k = d..n.
fig2b
    LRNN with b = 1, d = n/4, T = m = n/2, n in {8, 12, 16}; every k whose
    rows can hold d*m weights.  At k = d the allocation fills whole rows and
    is solved constructively.
fig3a
    Three-layer linear chain, q = 4, d = 6, m = 4, both hidden widths n in
    {8, 12}; 24 weights split 8 per layer, each layer confined to k rows
    (k columns for the input layer).
fig3b
    Two-layer ReLU network, q = 6, d = 4, m = 6, hidden width n in {12, 16};
    24 first-layer weights in k rows, matched when the MSE falls below 1e-2.
example
    The n = 2, T = 2 example, exact discriminant over all six two-entry
    recurrent allocations.

Full-scale runs use 1000 trials per point; the default here is 200.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .core import LffnConfig, LrnnConfig, ReluConfig
from .mp import SweepRow, sweep_k, sweep_n

DEFAULT_TRIALS = 200


@dataclass(frozen=True)
class Preset:
    name: str
    x: str  # plot axis: "k" or "fraction"
    title: str
    run: Callable


def _concat(parts):
    out = []
    for rows in parts:
        out.extend(rows)
    return out


def fig2a(trials=DEFAULT_TRIALS, seed=0, budget=None, workers=None, ns=(8, 12), opts=None):
    parts = []
    for n in ns:
        cfg = LrnnConfig(n=n, b=1, d=4, T=n // 2, m=n // 2)
        parts.append(sweep_k(cfg, range(cfg.d, n + 1), trials, budget, seed, opts=opts, workers=workers))
    return _concat(parts)


def fig2b(trials=DEFAULT_TRIALS, seed=0, budget=None, workers=None, ns=(8, 12, 16), opts=None):
    return sweep_n(ns, None, trials, budget, seed, opts=opts, workers=workers)


def fig3a(trials=DEFAULT_TRIALS, seed=0, budget=None, workers=None, ns=(8, 12), opts=None):
    parts = []
    for n in ns:
        cfg = LffnConfig((4, n, n, 6), m=4)
        parts.append(sweep_k(cfg, range(2, n + 1), trials, budget, seed, target="split", opts=opts, workers=workers))
    return _concat(parts)


def fig3b(trials=DEFAULT_TRIALS, seed=0, budget=None, workers=None, ns=(12, 16), opts=None):
    parts = []
    for n in ns:
        cfg = ReluConfig(q=6, n=n, d=4, m=6)
        ks = range(cfg.d, n + 1)
        parts.append(sweep_k(cfg, ks, trials, budget, seed, target="layer", caps="strict", opts=opts, workers=workers, layer=0))
    return _concat(parts)


def example(trials=100_000, seed=0, budget=None, workers=None, opts=None):
    from .analytic import ALLOCATIONS, example_mp

    rows = []
    for i, kind in enumerate(ALLOCATIONS):
        rows.append(SweepRow(f"example:{kind}", i, 2, example_mp(kind, trials, seed)))
    return rows


PRESETS = {
    "fig2a": Preset("fig2a", "k", "LRNN, d = 4", fig2a),
    "fig2b": Preset("fig2b", "fraction", "LRNN, d = n/4", fig2b),
    "fig3a": Preset("fig3a", "k", "linear chain, q = 4, d = 6, m = 4", fig3a),
    "fig3b": Preset("fig3b", "k", "ReLU, q = 6, d = 4, m = 6", fig3b),
    "example": Preset("example", "k", "n = 2, T = 2 example", example),
}

"""Reproducible draws of weights, inputs and allocations.

Every draw is addressed by ``(seed, stream)`` where ``stream`` is a tuple of
non-negative integers.  Streams map to independent ``SeedSequence`` children,
so trials can run in any order (or in parallel) and still reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Allocation,
    LffnConfig,
    LrnnConfig,
    ProblemInstance,
    Target,
    input_shape,
    target_shape,
    validate_config,
    weight_shapes,
)
from .errors import InfeasibleAllocation, InvalidConfig
from .models import forward

MAX_REJECTION_ATTEMPTS = 1000

# sub-stream tags
_TEACHER, _STUDENT, _INPUTS, _ALLOC = 0, 1, 2, 3


@dataclass(frozen=True)
class EnsembleSpec:
    """Gaussian ensemble: entries ~ N(0, gain^2 / fan_in)."""

    gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.gain > 0:
            raise InvalidConfig("gain", "gain > 0")


def rng_for(seed, stream=()):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))))


def sample_matrix(rows, cols, fan_in, spec, stream=()):
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = rng_for(spec.seed, stream)
    return rng.normal(0.0, spec.gain / np.sqrt(fan_in), size=(rows, cols))


def sample_weights(cfg, spec, stream=()):
    """All weight matrices of the model; fan-in is the contracted (column) size."""
    return {
        key: sample_matrix(rows, cols, cols, spec, tuple(stream) + (idx,))
        for idx, (key, (rows, cols)) in enumerate(sorted(weight_shapes(cfg).items()))
    }


def sample_instance(cfg, alloc, spec, stream=(), strict=False):
    """Teacher, fixed student weights and inputs drawn from independent streams.

    ``alloc`` may be a single :class:`Allocation` or a sequence of them (one
    per weight matrix, for multi-layer allocations).
    """
    validate_config(cfg, strict=strict)
    allocations = (alloc,) if isinstance(alloc, Allocation) else tuple(alloc)
    stream = tuple(stream)
    teacher = sample_weights(cfg, spec, stream + (_TEACHER,))
    student = sample_weights(cfg, spec, stream + (_STUDENT,))
    for a in allocations:
        student[a.key][a.rows, a.cols] = np.nan
    X = sample_matrix(*input_shape(cfg), 1, spec, stream + (_INPUTS,))
    Y = forward(cfg, teacher, X)
    return ProblemInstance(cfg, teacher, student, allocations, X, Y, seed=spec.seed, stream=stream)


def default_caps(cfg, target, layer=None):
    """Per-row and per-column caps from the necessary conditions for ``target``."""
    target = Target(target)
    if isinstance(cfg, LrnnConfig):
        return {
            Target.RECURRENT: (cfg.T * cfg.b, cfg.T * cfg.d),
            Target.ENCODER: (cfg.T * cfg.m, cfg.T * cfg.d),
            Target.DECODER: (cfg.m, cfg.d),
        }[target]
    return cfg.m, cfg.d


def _capacity(k, ncols, row_cap, col_cap):
    return min(k * min(row_cap, ncols), ncols * min(col_cap, k))


def _cyclic_fill(rows, cols, r, row_cap, col_cap):
    """Deterministic balanced placement: even row quotas, columns taken cyclically."""
    k = len(rows)
    base, extra = divmod(r, k)
    quotas = [base + (i < extra) for i in range(k)]
    if max(quotas) > min(row_cap, len(cols)):
        return None
    entries, ptr = [], 0
    for row, quota in zip(rows, quotas):
        for _ in range(quota):
            entries.append((row, cols[ptr % len(cols)]))
            ptr += 1
    load = np.bincount([c for _, c in entries], minlength=max(cols) + 1)
    if load.max() > col_cap:
        return None
    return entries


def place_entries(nrows, ncols, k_rows, r, row_cap, col_cap, rng):
    """Place ``r`` cells inside ``k_rows`` random rows under the caps."""
    if k_rows > nrows or k_rows < 1:
        raise InfeasibleAllocation(f"k_rows={k_rows} must be in [1, {nrows}]")
    if r > _capacity(k_rows, ncols, row_cap, col_cap):
        raise InfeasibleAllocation(
            f"{r} weights do not fit in {k_rows} rows with row cap {row_cap} and column cap {col_cap}"
        )
    rows = np.sort(rng.choice(nrows, size=k_rows, replace=False))
    cells = np.array([(i, j) for i in rows for j in range(ncols)])
    for _ in range(MAX_REJECTION_ATTEMPTS):
        order = rng.permutation(len(cells))
        row_load, col_load, chosen = {}, np.zeros(ncols, dtype=int), []
        for idx in order:
            i, j = cells[idx]
            if row_load.get(i, 0) < row_cap and col_load[j] < col_cap:
                chosen.append((int(i), int(j)))
                row_load[i] = row_load.get(i, 0) + 1
                col_load[j] += 1
                if len(chosen) == r:
                    return chosen
    # greedy repair
    entries = _cyclic_fill([int(i) for i in rng.permutation(rows)], [int(j) for j in rng.permutation(ncols)], r, row_cap, col_cap)
    if entries is None:
        raise InfeasibleAllocation("greedy repair failed to place the allocation")
    return entries


def sample_allocation(cfg, target, k_rows, caps="strict", seed=0, layer=None, r=None, stream=()):
    """Random allocation of ``r`` (default ``d*m``) weights confined to ``k_rows`` rows.

    ``caps`` is ``"strict"`` (the target's necessary-condition caps, raising
    :class:`InfeasibleAllocation` when they cannot be met), ``"auto"`` (strict
    when feasible, otherwise uncapped inside the chosen rows), ``"none"``, or
    an explicit ``(row_cap, col_cap)`` pair.
    """
    target = Target(target)
    nrows, ncols = target_shape(cfg, target, layer)
    r = cfg.r if r is None else r
    rng = rng_for(seed, tuple(stream) + (_ALLOC,))
    uncapped = (nrows * ncols, nrows * ncols)
    if isinstance(caps, str):
        if caps == "none":
            row_cap, col_cap = uncapped
        else:
            row_cap, col_cap = default_caps(cfg, target, layer)
            if caps == "auto" and r > _capacity(k_rows, ncols, row_cap, col_cap):
                row_cap, col_cap = uncapped
            elif caps not in ("strict", "auto"):
                raise ValueError(f"unknown caps mode {caps!r}")
    else:
        row_cap, col_cap = caps
    entries = place_entries(nrows, ncols, k_rows, r, row_cap, col_cap, rng)
    return Allocation(target, tuple(entries), layer)


def sample_ff_allocations(cfg, k, seed=0, stream=(), caps="strict"):
    """Split ``d*m`` weights evenly over all layers of a linear FF chain.

    Each layer's weights are confined to ``k`` rows; for the input layer ``k``
    limits columns instead, since its row count does not change how many
    equations stay linear.
    """
    if not isinstance(cfg, LffnConfig):
        raise InvalidConfig("model", "lffn")
    L = cfg.L
    base, extra = divmod(cfg.r, L)
    out = []
    rng_stream = tuple(stream)
    for l in range(L):
        r_l = base + (l < extra)
        nrows, ncols = target_shape(cfg, Target.LAYER, l)
        row_cap, col_cap = (cfg.m, cfg.d) if caps == "strict" else (nrows * ncols,) * 2
        rng = rng_for(seed, rng_stream + (_ALLOC, l))
        if l == 0:
            entries = place_entries(ncols, nrows, min(k, ncols), r_l, col_cap, row_cap, rng)
            entries = [(j, i) for i, j in entries]
        else:
            entries = place_entries(nrows, ncols, min(k, nrows), r_l, row_cap, col_cap, rng)
        out.append(Allocation(Target.LAYER, tuple(entries), l))
    return tuple(out)


def allocation_for(cfg, target, entries, layer=None):
    """Convenience constructor that also checks bounds."""
    from .core import check_allocation

    a = Allocation(Target(target), tuple(entries), layer)
    check_allocation(a, cfg)
    return a


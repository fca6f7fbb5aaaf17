"""Monte-Carlo match probability with Wilson intervals.

Each trial draws an allocation from a policy and an instance from the
ensemble, then routes on the classifier verdict: minimal allocations fail
without solving, maximal ones go through the closed-form construction and
undetermined ones through the numerical matchers.  Trial ``i`` of a sweep
entry uses the stream ``prefix + (i,)``, so results do not depend on the
order in which trials run.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from .classify import classify
from .construct import construct, match_ff_layer
from .core import LffnConfig, LrnnConfig, ReluConfig, Target, VerdictKind, to_text, validate_config
from .errors import InfeasibleAllocation, InvalidConfig, NoSolution
from .match import DEFAULT_BUDGET_FF, DEFAULT_BUDGET_LRNN, relu_match_exact, relu_match_opt, root_find
from .reduce import reduce_ff, reduce_recurrent_direct, reduce_recurrent_rows, reduce_system
from .sampling import EnsembleSpec, sample_allocation, sample_ff_allocations, sample_instance

THREADS_ENV = "ALLOC_LAB_THREADS"

CSV_COLUMNS = (
    "sweep_param",
    "k",
    "n",
    "trials",
    "successes",
    "mp",
    "ci_low",
    "ci_high",
    "mean_restarts",
    "mean_wall_time",
)


def wilson_interval(successes, trials, level=0.95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def fingerprint(cfg, **extra):
    """Short stable hash of a config plus run parameters."""
    text = to_text(cfg) + "".join(f"{k}={extra[k]}\n" for k in sorted(extra))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class MpEstimate:
    successes: int
    trials: int
    point: float
    ci_low: float
    ci_high: float
    fingerprint: str = ""
    seed: int = 0
    mean_restarts: float = 0.0
    mean_wall_time: float = 0.0
    construct_failures: int = 0

    def __post_init__(self):
        if self.trials < 1 or not 0 <= self.successes <= self.trials:
            raise ValueError(f"need 0 <= successes <= trials and trials >= 1, got {self.successes}/{self.trials}")
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError("confidence interval must contain the point estimate")

    @classmethod
    def from_counts(cls, successes, trials, **kw):
        if trials < 1:
            raise ValueError(f"need trials >= 1, got {trials}")
        point = successes / trials
        lo, hi = wilson_interval(successes, trials)
        return cls(successes, trials, point, min(lo, point), max(hi, point), **kw)


# ---------------------------------------------------------------------------
# allocation policies


@dataclass(frozen=True)
class RowPolicy:
    """``d*m`` weights of one matrix confined to ``k`` random rows."""

    target: Target
    k: int
    caps: object = "auto"
    layer: Optional[int] = None

    def __call__(self, cfg, seed, stream):
        return sample_allocation(cfg, self.target, self.k, caps=self.caps, seed=seed, layer=self.layer, stream=stream)


@dataclass(frozen=True)
class LayerSplitPolicy:
    """``d*m`` weights spread evenly over every layer of a linear chain, ``k`` rows each."""

    k: int
    caps: str = "strict"

    def __call__(self, cfg, seed, stream):
        return sample_ff_allocations(cfg, self.k, seed=seed, stream=stream, caps=self.caps)


@dataclass(frozen=True)
class FixedPolicy:
    allocation: object

    def __call__(self, cfg, seed, stream):
        return self.allocation


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class SolverOptions:
    budget: Optional[int] = None
    gain: float = 1.0
    tol: Optional[float] = None
    recurrent_system: str = "direct"
    relu_method: str = "opt"
    max_iter: Optional[int] = None

    def budget_for(self, cfg):
        if self.budget is not None:
            return self.budget
        return DEFAULT_BUDGET_LRNN if isinstance(cfg, LrnnConfig) else DEFAULT_BUDGET_FF


@dataclass
class TrialOutcome:
    index: int
    verdict: object
    route: str
    matched: bool
    restarts: int = 0
    wall_time: float = 0.0
    residual: float = float("nan")
    solver_called: bool = False
    info: dict = field(default_factory=dict)


def _solve_undetermined(inst, cfg, opts, seed, stream):
    budget = opts.budget_for(cfg)
    extra = {} if opts.max_iter is None else {"max_iter": opts.max_iter}
    if isinstance(cfg, ReluConfig):
        (a,) = inst.allocations
        if a.layer != 0:
            try:
                construct_like = match_ff_layer(inst, a)
            except NoSolution:
                return "relu_output_solve", None
            return "relu_output_solve", construct_like
        if opts.relu_method == "exact":
            return "relu_exact", relu_match_exact(inst, a)
        return "relu_opt", relu_match_opt(inst, a, budget=budget, seed=seed, stream=stream, **extra)
    if isinstance(cfg, LrnnConfig):
        builder = {"direct": reduce_recurrent_direct, "rows": reduce_recurrent_rows}[opts.recurrent_system]
        sys = builder(inst, gain=opts.gain)
    elif isinstance(cfg, LffnConfig) and len(inst.allocations) > 1:
        sys = reduce_ff(inst, gain=opts.gain)
    else:
        sys = reduce_system(inst, gain=opts.gain)
    return "root_find", root_find(sys, budget=budget, seed=seed, tol=opts.tol, stream=stream, **extra)


def run_trial(cfg, policy, index, seed=0, opts=SolverOptions(), prefix=()):
    """One allocation + instance draw, routed by its verdict."""
    stream = tuple(prefix) + (int(index),)
    alloc = policy(cfg, seed, stream)
    verdict = classify(alloc, cfg)
    if verdict.kind is VerdictKind.MINIMAL:
        return TrialOutcome(index, verdict, "minimal", False)
    inst = sample_instance(cfg, alloc, EnsembleSpec(gain=opts.gain, seed=seed), stream=stream)
    if verdict.kind is VerdictKind.MAXIMAL:
        try:
            c = construct(inst, verdict)
        except NoSolution as exc:
            return TrialOutcome(index, verdict, "construct_failed", False, info={"error": str(exc)})
        return TrialOutcome(index, verdict, "construct", True, residual=c.residual)
    route, report = _solve_undetermined(inst, cfg, opts, seed, stream)
    if route == "relu_output_solve":
        return TrialOutcome(index, verdict, route, report is not None, solver_called=True)
    return TrialOutcome(
        index,
        verdict,
        route,
        bool(report.matched),
        restarts=report.restarts_used,
        wall_time=report.wall_time,
        residual=report.best_residual,
        solver_called=True,
    )


def worker_count(requested=None):
    """Worker processes: ``requested`` if given, capped by ALLOC_LAB_THREADS (default 1)."""
    cap = os.environ.get(THREADS_ENV)
    try:
        cap = max(1, int(cap)) if cap else 1
    except ValueError:
        raise InvalidConfig(THREADS_ENV, "a positive integer") from None
    return cap if requested is None else max(1, min(int(requested), cap))


def _run_batch(args):
    cfg, policy, indices, seed, opts, prefix = args
    return [run_trial(cfg, policy, i, seed, opts, prefix) for i in indices]


def run_trials(cfg, policy, trials, seed=0, opts=SolverOptions(), prefix=(), workers=None):
    """All trial outcomes, ordered by trial index whatever the worker count."""
    if trials < 1:
        raise InvalidConfig("trials", "trials >= 1")
    workers = worker_count(workers)
    if workers == 1:
        return _run_batch((cfg, policy, range(trials), seed, opts, prefix))
    # interleaved batches keep the load balanced across workers
    batches = [(cfg, policy, range(w, trials, workers), seed, opts, prefix) for w in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = [o for batch in pool.map(_run_batch, batches) for o in batch]
    return sorted(results, key=lambda o: o.index)


def summarize(outcomes, fp="", seed=0):
    successes = sum(o.matched for o in outcomes)
    solved = [o for o in outcomes if o.solver_called]
    return MpEstimate.from_counts(
        successes,
        len(outcomes),
        fingerprint=fp,
        seed=seed,
        mean_restarts=float(np.mean([o.restarts for o in solved])) if solved else 0.0,
        mean_wall_time=float(np.mean([o.wall_time for o in solved])) if solved else 0.0,
        construct_failures=sum(o.route == "construct_failed" for o in outcomes),
    )


def estimate_mp(cfg, policy, trials=1000, budget=None, seed=0, opts=None, prefix=(), workers=None, strict=False):
    """Match probability of ``policy`` allocations on ``cfg``.

    ``strict`` applies the strict dimension constraints to the config; the
    default only requires the relaxed ones.
    """
    validate_config(cfg, strict=strict)
    opts = opts or SolverOptions(budget=budget)
    if budget is not None and opts.budget is None:
        opts = SolverOptions(**{**opts.__dict__, "budget": budget})
    outcomes = run_trials(cfg, policy, trials, seed, opts, prefix, workers)
    fp = fingerprint(cfg, policy=repr(policy), budget=opts.budget_for(cfg), trials=trials, seed=seed)
    return summarize(outcomes, fp, seed)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    sweep_param: str
    k: int
    n: int
    estimate: Optional[MpEstimate] = None
    error: str = ""

    def as_dict(self):
        e = self.estimate
        if e is None:
            vals = dict(trials=0, successes=0, mp="", ci_low="", ci_high="", mean_restarts="", mean_wall_time="")
        else:
            vals = dict(
                trials=e.trials,
                successes=e.successes,
                mp=f"{e.point:.6f}",
                ci_low=f"{e.ci_low:.6f}",
                ci_high=f"{e.ci_high:.6f}",
                mean_restarts=f"{e.mean_restarts:.3f}",
                mean_wall_time=f"{e.mean_wall_time:.6f}",
            )
        return {"sweep_param": self.sweep_param, "k": self.k, "n": self.n, **vals}


def _policy_for(cfg, k, target, caps, layer=None):
    if isinstance(cfg, LffnConfig) and target == "split":
        return LayerSplitPolicy(k, caps if caps != "auto" else "strict")
    if not isinstance(cfg, LrnnConfig) and layer is None:
        layer = 0
    return RowPolicy(Target(target), k, caps, layer)


def sweep_k(
    cfg, ks, trials=1000, budget=None, seed=0, target="recurrent", caps="auto", opts=None, workers=None, layer=None
):
    """One estimate per k; entry k uses stream prefix ``(k,)``.

    ``target="split"`` spreads the weights over every layer of a linear chain.
    """
    if trials < 1:
        raise InvalidConfig("trials", "trials >= 1")
    rows = []
    for k in ks:
        policy = _policy_for(cfg, k, target, caps, layer)
        try:
            est = estimate_mp(cfg, policy, trials, budget, seed, opts, prefix=(int(k),), workers=workers)
            rows.append(SweepRow("k", int(k), _width(cfg), est))
        except InfeasibleAllocation as exc:
            rows.append(SweepRow("k", int(k), _width(cfg), None, str(exc)))
    return rows


def _width(cfg):
    if isinstance(cfg, LffnConfig):
        return cfg.layer_widths[1]
    return cfg.n


def lrnn_for_n(n, d=None, b=1):
    """LRNN config with T = m = n/2 and ``d`` (default n/4)."""
    if n % 2 or (d is None and n % 4):
        raise InvalidConfig("n", "n divisible by 4 (or by 2 when d is given)")
    return LrnnConfig(n=n, b=b, d=n // 4 if d is None else d, T=n // 2, m=n // 2)


def feasible_ks(cfg, target="recurrent", layer=None):
    """Row counts k for which ``d*m`` weights fit in k rows at all."""
    from .core import target_shape

    nrows, ncols = target_shape(cfg, Target(target), layer)
    return [k for k in range(1, nrows + 1) if k * ncols >= cfg.r]


def sweep_n(ns, k_fractions=None, trials=1000, budget=None, seed=0, d=None, opts=None, workers=None, caps="auto"):
    """Sweep n with T = m = n/2, b = 1 and d = n/4 (or fixed ``d``).

    ``k_fractions`` picks rows as a fraction of n; ``None`` runs every
    feasible k.  Entry (n, k) uses stream prefix ``(n, k)``.
    """
    if trials < 1:
        raise InvalidConfig("trials", "trials >= 1")
    rows = []
    for n in ns:
        cfg = lrnn_for_n(n, d)
        validate_config(cfg, strict=False)
        if k_fractions is None:
            ks = feasible_ks(cfg)
        else:
            ks = sorted({max(1, int(round(f * n))) for f in k_fractions})
        for k in ks:
            try:
                est = estimate_mp(cfg, RowPolicy(Target.RECURRENT, k, caps), trials, budget, seed, opts, prefix=(n, k), workers=workers)
                rows.append(SweepRow("n", k, n, est))
            except InfeasibleAllocation as exc:
                rows.append(SweepRow("n", k, n, None, str(exc)))
    return rows


def write_csv(rows, fh):
    import csv

    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_dict())


def k_threshold(cfg):
    """Rows needed to hold ``d*m`` weights with full rows of ``T*b`` (LRNN)."""
    return math.ceil(cfg.r / (cfg.T * cfg.b))

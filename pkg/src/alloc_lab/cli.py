"""Command-line runner: ``alloc-lab <subcommand> [flags]``.

Model flags may also come from a ``key = value`` file passed with
``--config``; flags given on the command line win.  Exit status is 0 on
success, 1 for configuration or usage errors and 2 for anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .analytic import ALLOCATIONS, example_mp
from .classify import classify
from .construct import construct
from .core import (
    Allocation,
    LffnConfig,
    LrnnConfig,
    ReluConfig,
    Target,
    VerdictKind,
    check_allocation,
    config_from_dict,
    parse_kv,
    validate_config,
)
from .errors import AllocLabError, NoSolution
from .match import relu_match_exact, relu_match_opt, root_find
from .mp import (
    RowPolicy,
    SolverOptions,
    SweepRow,
    _policy_for,
    _width,
    estimate_mp,
    sweep_k,
    sweep_n,
    write_csv,
)
from .plotting import emit_plot
from .presets import PRESETS
from .reduce import reduce_recurrent_direct, reduce_recurrent_rows, reduce_system
from .sampling import EnsembleSpec, sample_allocation, sample_instance

MODEL_KEYS = ("model", "n", "b", "d", "T", "m", "q", "widths")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# shared flag groups


def _int_list(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(text):
    return [float(p) for p in str(text).split(",") if p.strip()]


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--config", type=Path, help="key = value file with model settings")
    g.add_argument("--model", choices=("lrnn", "lffn", "relu"))
    for key in ("n", "b", "d", "T", "m", "q"):
        g.add_argument(f"--{key}", type=int)
    g.add_argument("--widths", help="comma-separated layer widths for lffn, input first")


def _add_allocation(p):
    g = p.add_argument_group("allocation")
    g.add_argument("--target", choices=[t.value for t in Target], help="weight matrix holding the allocation")
    g.add_argument("--layer", type=int)
    g.add_argument("--entries", help="explicit entries 'i:j i:j ...'")
    g.add_argument("--k", type=int, help="sample d*m entries confined to k rows")
    g.add_argument("--caps", default="auto", choices=("strict", "auto", "none"))


def _add_run(p, trials=None):
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--budget", type=int, help="root-finding restarts per trial")
    g.add_argument("--gain", type=float, default=1.0)
    g.add_argument("--tol", type=float, help="sup-norm match tolerance (default 1e-8 (1 + |Y|))")
    if trials is not None:
        g.add_argument("--trials", type=int, default=trials)
        g.add_argument("--workers", type=int, help="worker processes (capped by ALLOC_LAB_THREADS)")
    g.add_argument("--method", choices=("hybr", "lm"), default="hybr")
    g.add_argument("--relu-method", choices=("opt", "exact"), default="opt")
    g.add_argument("--system", choices=("direct", "rows"), default="direct", help="recurrent system for root finding")


def _add_out(p):
    p.add_argument("--out", type=Path, help="CSV path (stdout when omitted)")
    p.add_argument("--plot", type=Path, help="also render an SVG of the CSV")


def model_settings(args):
    """Merge the config file with flags; flags override file values."""
    settings = parse_kv(args.config.read_text()) if args.config else {}
    for key in MODEL_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def build_config(args):
    settings = model_settings(args)
    if "model" not in settings:
        settings["model"] = "lrnn"
    cfg = config_from_dict(settings)
    validate_config(cfg, strict=False)
    return cfg, settings


def _default_target(cfg):
    return "recurrent" if isinstance(cfg, LrnnConfig) else "layer"


def _default_layer(cfg, target):
    if target == "layer":
        return 0
    return None


def build_allocation(args, cfg, settings):
    target = args.target or settings.get("alloc.target") or _default_target(cfg)
    layer = args.layer if args.layer is not None else settings.get("alloc.layer", _default_layer(cfg, target))
    entries = args.entries or settings.get("alloc.entries")
    if entries and args.k is not None:
        raise UsageError("give either --entries or --k, not both")
    if entries:
        pairs = []
        for tok in str(entries).replace(",", " ").split():
            i, j = tok.split(":")
            pairs.append((int(i), int(j)))
        a = Allocation(Target(target), tuple(pairs), None if layer is None else int(layer))
        check_allocation(a, cfg)
        return a
    if args.k is None:
        raise UsageError("an allocation needs --entries or --k")
    return sample_allocation(cfg, target, args.k, caps=args.caps, seed=args.seed, layer=layer)


def _opts(args):
    return SolverOptions(
        budget=args.budget,
        gain=args.gain,
        tol=args.tol,
        recurrent_system=args.system,
        relu_method=args.relu_method,
    )


def _emit(rows, args, x="k", title=None):
    if args.out is None:
        write_csv(rows, sys.stdout)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            write_csv(rows, fh)
    if getattr(args, "plot", None) is not None:
        if args.out is None:
            raise UsageError("--plot needs --out")
        emit_plot(args.out, args.plot, title=title, x=x)


def _kv(**items):
    for k, v in items.items():
        print(f"{k} = {v}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_classify(args):
    cfg, settings = build_config(args)
    a = build_allocation(args, cfg, settings)
    v = classify(a, cfg)
    _kv(verdict=v.kind.value, reason=v.reason.value, entries=" ".join(f"{i}:{j}" for i, j in a.entries))
    return 0


def _instance(args):
    cfg, settings = build_config(args)
    a = build_allocation(args, cfg, settings)
    inst = sample_instance(cfg, a, EnsembleSpec(gain=args.gain, seed=args.seed))
    return cfg, a, inst


def cmd_construct(args):
    cfg, a, inst = _instance(args)
    v = classify(a, cfg)
    try:
        c = construct(inst, v if v.kind is VerdictKind.MAXIMAL else None)
    except NoSolution as exc:
        _kv(verdict=v.kind.value, constructed=False, error=exc)
        return 0
    _kv(verdict=v.kind.value, constructed=True, method=c.method, residual=f"{c.residual:.3e}")
    return 0


def cmd_match(args):
    cfg, a, inst = _instance(args)
    opts = _opts(args)
    budget = opts.budget_for(cfg)
    if isinstance(cfg, ReluConfig) and a.layer == 0:
        if args.relu_method == "exact":
            rep = relu_match_exact(inst, a)
        else:
            rep = relu_match_opt(inst, a, budget=budget, seed=args.seed)
    else:
        if isinstance(cfg, LrnnConfig) and a.target is Target.RECURRENT:
            builder = reduce_recurrent_direct if args.system == "direct" else reduce_recurrent_rows
            system = builder(inst, gain=args.gain)
        else:
            system = reduce_system(inst, gain=args.gain)
        rep = root_find(system, budget=budget, seed=args.seed, tol=args.tol, method=args.method)
    _kv(
        matched=rep.matched,
        best_residual=f"{rep.best_residual:.3e}",
        restarts_used=rep.restarts_used,
        wall_time=f"{rep.wall_time:.3f}",
    )
    return 0


def cmd_mp(args):
    cfg, settings = build_config(args)
    if args.entries or settings.get("alloc.entries"):
        from .mp import FixedPolicy

        a = build_allocation(args, cfg, settings)
        policy, k = FixedPolicy(a), len(set(a.rows))
    else:
        if args.k is None:
            raise UsageError("mp needs --k or --entries")
        target = args.target or _default_target(cfg)
        layer = args.layer if args.layer is not None else _default_layer(cfg, target)
        policy, k = _policy_for(cfg, args.k, target, args.caps, layer), args.k
    est = estimate_mp(cfg, policy, args.trials, args.budget, args.seed, _opts(args), workers=args.workers)
    _emit([SweepRow("mp", k, _width(cfg), est)], args)
    return 0


def cmd_sweep_k(args):
    cfg, _ = build_config(args)
    target = args.target or ("split" if isinstance(cfg, LffnConfig) else _default_target(cfg))
    layer = args.layer if args.layer is not None else _default_layer(cfg, target)
    rows = sweep_k(
        cfg, _int_list(args.ks), args.trials, args.budget, args.seed, target, args.caps, _opts(args), args.workers, layer
    )
    _emit(rows, args)
    return 0


def cmd_sweep_n(args):
    fractions = _float_list(args.k_fractions) if args.k_fractions else None
    rows = sweep_n(
        _int_list(args.ns), fractions, args.trials, args.budget, args.seed, args.d, _opts(args), args.workers, args.caps
    )
    _emit(rows, args, x="fraction")
    return 0


def cmd_example(args):
    kinds = list(ALLOCATIONS) if args.allocation == "all" else [args.allocation]
    rows = [SweepRow(f"example:{kind}", i, 2, example_mp(kind, args.trials, args.seed)) for i, kind in enumerate(kinds)]
    _emit(rows, args)
    return 0


def cmd_relu_analyze(args):
    from .relu_analysis import count_feasible_configs, verify_pruning_lemmas

    cfg, settings = build_config(args)
    if not isinstance(cfg, ReluConfig):
        raise UsageError("relu-analyze needs --model relu")
    a = build_allocation(args, cfg, settings)
    rep = verify_pruning_lemmas(cfg, a, args.trials, args.seed, args.gain)
    _kv(
        feasible_configs=count_feasible_configs(cfg, a),
        total_configs=2 ** (len(set(a.rows)) * cfg.m),
        instances=rep.instances,
        checked=rep.checked,
        flagged_sample=rep.flagged_sample,
        flagged_row=rep.flagged_row,
        violations=rep.violations,
    )
    return 0


def cmd_repro(args):
    preset = PRESETS[args.preset]
    kw = dict(seed=args.seed, budget=args.budget, workers=args.workers)
    if args.trials is not None:
        kw["trials"] = args.trials
    if args.ns and args.preset != "example":
        kw["ns"] = tuple(_int_list(args.ns))
    if args.preset != "example":
        kw["opts"] = _opts(args)
    rows = preset.run(**kw)
    if args.out is not None and args.plot is None and args.preset != "example":
        args.plot = args.out.with_suffix(".svg")
    _emit(rows, args, x=preset.x, title=preset.title)
    return 0


def cmd_plot(args):
    emit_plot(args.csv, args.out, title=args.title, x=args.x)
    return 0


# ---------------------------------------------------------------------------


def make_parser():
    p = _Parser(prog="alloc-lab", description="Match probability of sparse weight allocations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, helptext in (
        ("classify", cmd_classify, "verdict for one allocation"),
        ("construct", cmd_construct, "build a matching student for a maximal allocation"),
        ("match", cmd_match, "root-find one random instance"),
    ):
        s = sub.add_parser(name, help=helptext)
        _add_model(s)
        _add_allocation(s)
        _add_run(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("mp", help="match probability of one allocation policy")
    _add_model(s)
    _add_allocation(s)
    _add_run(s, trials=1000)
    _add_out(s)
    s.set_defaults(func=cmd_mp)

    s = sub.add_parser("sweep-k", help="match probability against learnable rows k")
    _add_model(s)
    _add_allocation(s)
    s.add_argument("--ks", required=True, help="k values, e.g. '4..12' or '4,6,8'")
    _add_run(s, trials=1000)
    _add_out(s)
    s.set_defaults(func=cmd_sweep_k)

    s = sub.add_parser("sweep-n", help="LRNN sweep over n with T = m = n/2, b = 1, d = n/4")
    s.add_argument("--ns", required=True, help="hidden sizes, e.g. '8,12,16'")
    s.add_argument("--d", type=int, help="fixed output size instead of n/4")
    s.add_argument("--k-fractions", help="k as fractions of n; every feasible k when omitted")
    s.add_argument("--caps", default="auto", choices=("strict", "auto", "none"))
    _add_run(s, trials=1000)
    _add_out(s)
    s.set_defaults(func=cmd_sweep_n)

    s = sub.add_parser("example", help="exact match probability of the n = 2, T = 2 example")
    s.add_argument("--allocation", choices=list(ALLOCATIONS) + ["all"], default="all")
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    _add_out(s)
    s.set_defaults(func=cmd_example)

    s = sub.add_parser("relu-analyze", help="count and check pruned activation configurations")
    _add_model(s)
    _add_allocation(s)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gain", type=float, default=1.0)
    s.set_defaults(func=cmd_relu_analyze)

    s = sub.add_parser("repro", help="run a desk-scale figure preset")
    s.add_argument("preset", choices=sorted(PRESETS))
    s.add_argument("--ns", help="override the preset's hidden sizes")
    s.add_argument("--trials", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int)
    s.add_argument("--gain", type=float, default=1.0)
    s.add_argument("--tol", type=float)
    s.add_argument("--relu-method", choices=("opt", "exact"), default="opt")
    s.add_argument("--system", choices=("direct", "rows"), default="direct")
    _add_out(s)
    s.set_defaults(func=cmd_repro)

    s = sub.add_parser("plot", help="render a sweep CSV as SVG")
    s.add_argument("csv", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--title")
    s.add_argument("--x", choices=("k", "fraction"), default="k")
    s.set_defaults(func=cmd_plot)
    return p


def run(argv=None):
    """Parse ``argv`` and dispatch; returns the exit status."""
    try:
        args = make_parser().parse_args(argv)
        if getattr(args, "trials", None) is not None and args.trials < 1:
            raise UsageError("--trials must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (AllocLabError, ValueError, OSError) as exc:
        print(f"alloc-lab: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"alloc-lab: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point: run, compile, select, bench.

Exit codes: 0 success, 1 usage or parse error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bank import BankError, ModelBank, parse_skew_key, skew_key
from .perforation.container import NetworkFormatError, load_network, save_network
from .perforation.network import toy_network
from .perforation.prune import (EvalSet, PositionOracle, build_cascade, evalset_evaluator,
                                greedy_prune, teacher_evalset)
from .perforation.select import DEFAULT_DELTA, TableEvaluator, binary_search_select
from .presets import DEFAULT_ENERGY, PRESETS, bench_config, toy_bank
from .sim.backend import ConfusionBackend
from .sim.loop import MonteCarloEvaluator, RunError, SimConfig, run_end_to_end
from .problayer import ClassDistribution
from .sim.stream import SpecError, StreamSpec

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# config-file keys accepted by run/bench; each mirrors a flag of the same name
RUN_KEYS = ("stream", "preset", "bank", "energy", "time", "fps", "seed", "out",
            "omega", "wmin", "pir", "pih", "delta", "target", "seeds")
SIM_FLAGS = {"omega": "omega", "wmin": "w_min", "pir": "pi_r", "pih": "pi_h",
             "delta": "delta", "target": "target"}


class UsageError(Exception):
    pass


def _unit_interval(name):
    def check(text):
        v = float(text)
        if not (0.0 < v <= 1.0):
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1], got {text}")
        return v
    return check


def _positive(kind):
    def check(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return check


def parse_seeds(text: str) -> list[int]:
    """'0-9' or '1,4,7' (ranges may be mixed in: '0-2,5')."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise UsageError(f"seeds: empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise UsageError("seeds: no seeds given")
    return out


def _add_run_flags(p):
    p.add_argument("--config", help="JSON file whose keys mirror these flags; flags win")
    p.add_argument("--stream", help="stream spec JSON")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in stream scenario")
    p.add_argument("--bank", help="model bank JSON (default: the toy bank)")
    p.add_argument("--energy", type=float, help=f"energy budget in joules (default {DEFAULT_ENERGY})")
    p.add_argument("--time", type=_positive(float), help="time budget in seconds (default: stream length)")
    p.add_argument("--fps", type=_positive(float), help="frame rate, overrides the stream's")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--omega", type=_unit_interval("omega"))
    p.add_argument("--wmin", type=_positive(int))
    p.add_argument("--pir", type=int)
    p.add_argument("--pih", type=_positive(int))
    p.add_argument("--delta", type=float)
    p.add_argument("--target", type=_unit_interval("target"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skewserve",
                                 description="Skew-aware model serving simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="serve one stream and write a report")
    _add_run_flags(run)

    bench = sub.add_parser("bench", help="paired system vs all-off runs over seeds")
    _add_run_flags(bench)
    bench.add_argument("--seeds", help="e.g. 0-9 or 0,3,5 (default 0-9)")

    comp = sub.add_parser("compile", help="prune a network into a general cascade")
    comp.add_argument("--network", help="network container (.sknw or .json); default the toy net")
    comp.add_argument("--oracle", help="oracle JSON or evalset .npz; default position oracle")
    comp.add_argument("--bank", required=True, help="bank JSON to write or update")
    comp.add_argument("--name", help="model id prefix (default: network name)")
    comp.add_argument("--seed", type=int, default=0, help="seed for the toy network")
    comp.add_argument("--save-network", help="also write the network container here")

    sel = sub.add_parser("select", help="pick a model for a skew by bisection")
    sel.add_argument("--bank", required=True)
    sel.add_argument("--skew", required=True, help="comma-separated dominant classes")
    sel.add_argument("--target", required=True, type=_unit_interval("target"))
    sel.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    sel.add_argument("--p", type=_unit_interval("p"), default=0.9,
                     help="dominant mass assumed by the simulated evaluator")
    sel.add_argument("--universe", type=int, default=100)
    sel.add_argument("--table", help="JSON {model_id: {skew_key or '*': accuracy}} instead of simulation")
    sel.add_argument("--frames", type=_positive(int), default=5000)
    sel.add_argument("--seed", type=int, default=0)
    return ap


def _resolve(args) -> dict:
    opts = {}
    if getattr(args, "config", None):
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"config: {exc}") from None
        if not isinstance(d, dict):
            raise UsageError("config: expected a JSON object")
        for k in d:
            if k not in RUN_KEYS:
                raise UsageError(f"config.{k}: unknown key")
        opts.update(d)
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    if "stream" in opts and "preset" in opts:
        raise UsageError("give either --stream or --preset, not both")
    if "stream" not in opts and "preset" not in opts:
        raise UsageError("one of --stream or --preset is required")
    if "preset" in opts and opts["preset"] not in PRESETS:
        raise UsageError(f"preset: unknown {opts['preset']!r}")
    return opts


def _load_stream(opts, seed) -> StreamSpec:
    if "preset" in opts:
        spec = PRESETS[opts["preset"]](seed)
    else:
        try:
            spec = StreamSpec.load(opts["stream"])
        except OSError as exc:
            raise UsageError(f"stream: {exc}") from None
        except SpecError as exc:
            raise UsageError(f"stream: {exc}") from None
    if "fps" in opts:
        spec = replace(spec, frame_interval=1.0 / float(opts["fps"]))
    return spec


def _load_bank(path) -> ModelBank:
    if path is None:
        return toy_bank()
    try:
        bank = ModelBank.load(path)
    except OSError as exc:
        raise UsageError(f"bank: {exc}") from None
    except (json.JSONDecodeError, BankError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bank: {exc}") from None
    if bank.general is None:
        raise UsageError("bank: no general cascade")
    return bank


def _sim_config(opts, seed, universe: int) -> SimConfig:
    # presets carry the tuned detector settings; custom streams start from defaults
    cfg = bench_config(seed) if "preset" in opts else SimConfig(seed=seed)
    over = {SIM_FLAGS[k]: opts[k] for k in SIM_FLAGS if k in opts}
    try:
        cfg = replace(cfg, **over)
        cfg.profiler_config(universe)   # validates the overrides
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _fmt(v, spec=".4f"):
    if v is None:
        return "n/a"
    return format(v, spec)


def _print_aggregates(agg, out):
    print(f"{'frames':<10}{'accuracy':>10}{'mean MACs':>14}{'MAC savings':>13}"
          f"{'param savings':>15}  modal model", file=out)
    for name in ("all", "measured"):
        a = agg[name]
        if not a.get("frames"):
            print(f"{name:<10}{'-':>10}", file=out)
            continue
        print(f"{name:<10}{a['accuracy']:>10.4f}{a['mean_macs']:>14.0f}"
              f"{_fmt(a.get('macs_savings'), '.2f') + 'x':>13}"
              f"{_fmt(a.get('params_savings'), '.2f') + 'x':>15}  {a['modal_model']}", file=out)
    print(f"skew events: {agg['n_skew_events']}  compiled: {agg['n_compiled']}", file=out)


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    opts = _resolve(args)
    seed = int(opts.get("seed", 0))
    spec = _load_stream(opts, seed)
    bank = _load_bank(opts.get("bank"))
    cfg = _sim_config(opts, seed, spec.universe)
    out_dir = Path(opts.get("out", "."))
    energy = float(opts.get("energy", DEFAULT_ENERGY))
    if energy < 0:
        raise UsageError("energy: must be nonnegative")
    try:
        rep = run_end_to_end(spec, bank, energy, opts.get("time"), cfg)
    except RunError as exc:
        if exc.report is not None and len(exc.report):
            exc.report.write(out_dir)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    jp, cp = rep.write(out_dir)
    _print_aggregates(rep.to_json()["aggregates"], out)
    print(f"wrote {jp} and {cp}", file=out)
    return EXIT_OK


def bench_pairs(spec_for_seed, bank, seeds, energy, time, cfg_for_seed) -> list[dict]:
    """System vs all-off baseline on the same stream and noise, per seed."""
    rows = []
    for s in seeds:
        spec = spec_for_seed(s)
        cfg = cfg_for_seed(s)
        on = run_end_to_end(spec, bank, energy, time, cfg).to_json()["aggregates"]["measured"]
        off = run_end_to_end(spec, bank, energy, time, cfg.with_features_off()).to_json()["aggregates"]["measured"]
        rows.append({
            "seed": s,
            "accuracy": on["accuracy"], "baseline_accuracy": off["accuracy"],
            "delta": on["accuracy"] - off["accuracy"],
            "macs": on["mean_macs"], "baseline_macs": off["mean_macs"],
            "macs_savings": off["mean_macs"] / on["mean_macs"] if on["mean_macs"] else None,
            "params_savings": (off["modal_params"] / on["modal_params"]
                               if on["modal_params"] else None),
            "model": on["modal_model"],
        })
    return rows


def bench_summary(rows) -> dict:
    out = {}
    for k in ("delta", "accuracy", "baseline_accuracy", "macs_savings", "params_savings"):
        vals = [r[k] for r in rows if r[k] is not None]
        out[k] = {"mean": float(np.mean(vals)), "min": float(min(vals)),
                  "max": float(max(vals))} if vals else None
    return out


def cmd_bench(args, out=None) -> int:
    out = out or sys.stdout
    opts = _resolve(args)
    seeds = parse_seeds(opts.get("seeds", "0-9"))
    bank = _load_bank(opts.get("bank"))
    energy = float(opts.get("energy", DEFAULT_ENERGY))
    spec_for = (lambda s: _load_stream(opts, s))
    spec_for(seeds[0])  # surface parse errors before running anything
    cfg_for = (lambda s: _sim_config(opts, s, spec_for(s).universe))
    try:
        rows = bench_pairs(spec_for, bank, seeds, energy, opts.get("time"), cfg_for)
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = bench_summary(rows)
    print(f"{'seed':>5}{'acc':>9}{'base':>9}{'delta':>9}{'MACs x':>9}{'params x':>10}  model", file=out)
    for r in rows:
        print(f"{r['seed']:>5}{r['accuracy']:>9.4f}{r['baseline_accuracy']:>9.4f}{r['delta']:>+9.4f}"
              f"{_fmt(r['macs_savings'], '.2f'):>9}{_fmt(r['params_savings'], '.2f'):>10}  {r['model']}",
              file=out)
    for k, label in (("delta", "acc delta"), ("macs_savings", "MACs x"), ("params_savings", "params x")):
        s = summary[k]
        if s is None:
            print(f"{label}: n/a", file=out)
            continue
        print(f"{label:<10} mean {s['mean']:+.4f}  min {s['min']:+.4f}  max {s['max']:+.4f}"
              if k == "delta" else
              f"{label:<10} mean {s['mean']:.2f}  min {s['min']:.2f}  max {s['max']:.2f}", file=out)
    if "out" in opts:
        p = Path(opts["out"])
        p.mkdir(parents=True, exist_ok=True)
        (p / "bench.json").write_text(json.dumps({"rows": rows, "summary": summary},
                                                 indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _load_oracle(path, net):
    """Pruning evaluator from a file: an evalset .npz (inputs, labels) or a JSON spec."""
    if path is None:
        return PositionOracle(net)
    p = Path(path)
    if not p.exists():
        raise UsageError(f"oracle: no such file {path}")
    if p.suffix == ".npz":
        try:
            with np.load(p) as z:
                es = EvalSet(z["inputs"], z["labels"])
        except (KeyError, ValueError, OSError) as exc:
            raise UsageError(f"oracle: {exc}") from None
        return evalset_evaluator(net, es)
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"oracle: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError("oracle: expected a JSON object")
    kind = d.pop("kind", "position")
    try:
        if kind == "position":
            imp = d.pop("importance", None)
            if imp is not None:
                # {"layer,0": w, "channels,1,2": w, "stride,0,2": w}
                imp = {tuple([k.split(",")[0]] + [int(t) for t in k.split(",")[1:]]): float(v)
                       for k, v in imp.items()}
            return PositionOracle(net, importance=imp, **d)
        if kind == "teacher":
            return evalset_evaluator(net, teacher_evalset(net, **d))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"oracle: {exc}") from None
    raise UsageError(f"oracle.kind: unknown {kind!r}")


def cmd_compile(args, out=None) -> int:
    out = out or sys.stdout
    if args.network:
        try:
            net = load_network(args.network)
        except (OSError, NetworkFormatError) as exc:
            print(f"error: network: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        net = toy_network(seed=args.seed)
    evaluator = _load_oracle(args.oracle, net)
    name = args.name or net.name
    bank_path = Path(args.bank)
    bank = _load_bank(bank_path) if bank_path.exists() else ModelBank()
    # a rebuild replaces the previous general cascade of the same name
    keep = [m for m in bank.profiles() if not m.id.startswith(f"{name}-p")]
    bank = ModelBank.from_profiles(keep)
    snaps = greedy_prune(net, evaluator)
    cascade = build_cascade(snaps, name=name, bank=bank)
    bank.save(bank_path)
    if args.save_network:
        save_network(net, args.save_network)
    print(f"{'id':<14}{'MACs':>12}{'params':>10}{'accuracy':>10}", file=out)
    for m in cascade.models:
        print(f"{m.id:<14}{m.macs:>12}{m.params:>10}{m.accuracy:>10.4f}", file=out)
    print(f"{len(snaps)} snapshots, {len(cascade.models)} on the Pareto cascade; wrote {bank_path}",
          file=out)
    return EXIT_OK


def cmd_select(args, out=None) -> int:
    out = out or sys.stdout
    bank = _load_bank(args.bank)
    try:
        key = skew_key(parse_skew_key(args.skew))
    except ValueError as exc:
        raise UsageError(f"skew: {exc}") from None
    if args.table:
        try:
            raw = json.loads(Path(args.table).read_text())
            table = {(mid, k): float(v) for mid, accs in raw.items() for k, v in accs.items()}
        except (OSError, json.JSONDecodeError, AttributeError, ValueError) as exc:
            raise UsageError(f"table: {exc}") from None
        evaluator = TableEvaluator(table)
    else:
        if max(parse_skew_key(key)) >= args.universe:
            raise UsageError(f"skew: class outside universe {args.universe}")
        backend = ConfusionBackend.from_bank(bank, args.universe, seed=args.seed)
        evaluator = MonteCarloEvaluator(backend, ClassDistribution.uniform(args.universe),
                                        n_frames=args.frames, seed=args.seed, default_p=args.p)
    sel = binary_search_select(bank.general, key, args.target, args.delta, evaluator)
    m = sel.model
    mark = "  target unmet" if sel.unmet else ""
    print(f"{m.id}  macs={m.macs} params={m.params} accuracy={sel.accuracy:.4f} "
          f"calls={sel.calls}{mark}", file=out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "compile": cmd_compile, "select": cmd_select}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

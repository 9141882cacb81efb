"""Command-line front end.

Exit codes: 0 clean, 1 leak detected, 2 input error, 3 oracle counterexample.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import cache_domain as cd
from .analyses import engine_summary, report
from .cache_domain import CacheConfig
from .fixpoint import HAVOC, ROTATING, EngineConfig, FixpointResult, run
from .ir import IRError, Program, parse_program
from .oracle import BudgetExceeded, ChoiceError, Counterexample, check_soundness, replay
from .speculation import JIT, ROLLBACK, SpecConfig

EXIT_OK, EXIT_LEAK, EXIT_INPUT, EXIT_CEX = 0, 1, 2, 3

DEFAULT_LINES = 512
DEFAULT_DEPTH_HIT = 20
DEFAULT_DEPTH_MISS = 200


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"error: {name} must be an integer, got {raw!r}")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--lines", type=int, default=None,
                        help="cache lines N (default: file config, else $SPECACHE_LINES or 512)")
    common.add_argument("--depth-hit", type=int, default=None,
                        help="window when branch conditions must hit (default 20)")
    common.add_argument("--depth-miss", type=int, default=None,
                        help="window otherwise (default 200)")
    common.add_argument("--strategy", choices=(JIT, ROLLBACK), default=None)
    common.add_argument("--baseline", action="store_true", help="ignore speculation")
    common.add_argument("--no-colors", action="store_true",
                        help="one speculative slot shared by all branches")
    common.add_argument("--shadow", action="store_true", help="track may ages to refine aging")
    common.add_argument("--region-mode", choices=(HAVOC, ROTATING), default=None)
    common.add_argument("--format", choices=("json", "text"), default="text")

    ap = argparse.ArgumentParser(prog="specache",
                                 description="Must-hit cache analysis under speculative execution.")
    sub = ap.add_subparsers(dest="mode", required=True)
    a = sub.add_parser("analyze", parents=[common], help="run the analysis and report")
    a.add_argument("input")
    a.add_argument("--dump-states", action="store_true",
                   help="print per-block abstract states in bucket notation")
    for name, helptext in (("oracle-check", "check the analysis against concrete runs"),
                           ("replay", "re-run a saved counterexample")):
        o = sub.add_parser(name, parents=[common], help=helptext)
        o.add_argument("input")
        if name == "replay":
            o.add_argument("counterexample")
        o.add_argument("--strict", action="store_true",
                       help="concrete windows always get the miss depth")
        o.add_argument("--loop-cap", type=int, default=2, help="max traversals per back edge")
        if name == "oracle-check":
            o.add_argument("--max-configs", type=int, default=1_000_000)
            o.add_argument("--save", metavar="PATH", help="write the counterexample here")
    c = sub.add_parser("corpus", parents=[common], help="analyze and check every *.cfgir in a directory")
    c.add_argument("directory")
    c.add_argument("--loop-cap", type=int, default=2)
    return ap


def engine_from_args(args, program: Program) -> EngineConfig:
    lines = args.lines
    if lines is None:
        lines = program.lines if program.lines is not None else _env_int("SPECACHE_LINES", DEFAULT_LINES)
    cache = CacheConfig(lines, args.shadow)
    spec = None
    if not args.baseline:
        spec = SpecConfig(
            args.depth_hit if args.depth_hit is not None else _env_int("SPECACHE_DEPTH_HIT", DEFAULT_DEPTH_HIT),
            args.depth_miss if args.depth_miss is not None else _env_int("SPECACHE_DEPTH_MISS", DEFAULT_DEPTH_MISS),
            args.strategy or os.environ.get("SPECACHE_STRATEGY", JIT),
            not args.no_colors,
        )
    mode = args.region_mode or os.environ.get("SPECACHE_REGION_MODE", HAVOC)
    return EngineConfig(cache, spec, mode)


def dump_states(result: FixpointResult) -> list:
    cfg = result.engine.cache
    out = []
    for b in result.program.blocks:
        s = result.state(b)
        line = f"{b}: {cd.format_state(s, cfg)}"
        slots = sorted((c, st) for (bb, c), st in result.SS.items() if bb == b and st.reached)
        for c, st in slots:
            line += f"  c{c}: {cd.format_state(st, cfg)}"
        out.append(line)
    return out


def _load(path: str) -> Program:
    return parse_program(Path(path).read_text())


def _analyze(args) -> int:
    program = _load(args.input)
    result = run(program, engine_from_args(args, program))
    rep = report(result)
    if args.format == "json":
        d = rep.to_dict()
        if args.dump_states:
            d["states"] = dump_states(result)
        print(json.dumps(d, indent=2, ensure_ascii=False))
    else:
        sys.stdout.write(rep.format_text())
        if args.dump_states:
            print()
            print("\n".join(dump_states(result)))
    return EXIT_LEAK if rep.has_leak else EXIT_OK


def _oracle_check(args) -> int:
    program = _load(args.input)
    engine = engine_from_args(args, program)
    res = check_soundness(program, engine, args.strict, args.loop_cap, args.max_configs)
    d = {"config": engine_summary(engine), "sound": res.ok, "configurations": res.runs,
         "truncated_paths": res.truncated_runs,
         "counterexample": res.counterexample.to_dict() if res.counterexample else None}
    if args.format == "json":
        print(json.dumps(d, indent=2, ensure_ascii=False))
    else:
        print(f"{'sound' if res.ok else 'UNSOUND'}: {res.runs} concrete configurations"
              f" ({res.truncated_runs} paths cut at the loop cap of {args.loop_cap})")
        if res.counterexample:
            print(res.counterexample.to_json())
    if res.counterexample and args.save:
        Path(args.save).write_text(res.counterexample.to_json() + "\n")
    return EXIT_OK if res.ok else EXIT_CEX


def _replay(args) -> int:
    program = _load(args.input)
    engine = engine_from_args(args, program)
    try:
        cex = Counterexample.from_dict(json.loads(Path(args.counterexample).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise IRError(f"bad counterexample file: {e}")
    r, violation = replay(program, cex, engine, args.strict, args.loop_cap)
    for t in r.trace:
        mark = "hit " if t.hit else "miss"
        print(f"{t.flavor:<11} {str(t.site):<12} {t.var:<12} {mark} before={list(t.before.lines)}")
    if violation is None:
        print("no violation on this run")
        return EXIT_OK
    print(f"violation at {violation.site} on {violation.var}: {violation.assertion}")
    return EXIT_CEX


def _corpus(args) -> int:
    files = sorted(Path(args.directory).glob("*.cfgir"))
    if not files:
        raise IRError(f"no .cfgir files in {args.directory}")
    rows, reports, status = [], [], EXIT_OK
    for f in files:
        program = _load(str(f))
        engine = engine_from_args(args, program)
        rep = report(run(program, engine))
        res = check_soundness(program, engine, loop_cap=args.loop_cap)
        if not res.ok:
            status = EXIT_CEX
        reports.append({"name": f.stem, "report": rep.to_dict(), "sound": res.ok,
                        "counterexample": res.counterexample.to_dict() if res.counterexample else None})
        rows.append((f.stem, rep.miss_count, rep.spec_miss_count, rep.iterations,
                     "yes" if rep.has_leak else "no", "ok" if res.ok else "COUNTEREXAMPLE"))
    if args.format == "json":
        print(json.dumps(reports, indent=2, ensure_ascii=False))
    else:
        w = max(4, *(len(r[0]) for r in rows))
        print(f"{'Name':<{w}}  {'#Miss':>5}  {'#SpMiss':>7}  {'#Iteration':>10}  {'Leak':>4}  Oracle")
        for name, m, s, it, leak, ok in rows:
            print(f"{name:<{w}}  {m:>5}  {s:>7}  {it:>10}  {leak:>4}  {ok}")
    return status


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"analyze": _analyze, "oracle-check": _oracle_check,
                "replay": _replay, "corpus": _corpus}
    try:
        return handlers[args.mode](args)
    except (IRError, OSError, ValueError, ChoiceError, BudgetExceeded) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

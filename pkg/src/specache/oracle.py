"""Concrete LRU execution with explicit speculation, used as ground truth.

A run is fully determined by a choice vector: branch outcomes, predictions,
rollback points, branch directions inside a squashed window, and the line
picked by every unknown-index access.  ``enumerate_runs`` walks every vector
in lexicographic order, so the first counterexample found is the least one.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import cache_domain as cd
from .analyses import classify
from .cfg import retreating_edges, unroll
from .fixpoint import EngineConfig, FixpointResult, run
from .ir import (BasicBlock, Branch, Exit, Goto, Nop, Program, Ref, Region,
                 RefRegionUnknown, SecretRef, Site)
from .speculation import SpecConfig

NORMAL = "normal"
SPECULATIVE = "speculative"


class BudgetExceeded(RuntimeError):
    pass


class ChoiceError(ValueError):
    pass


@dataclass(frozen=True)
class ConcreteCache:
    num_lines: int
    lines: tuple = ()  # youngest first

    def age(self, v: str) -> int:
        try:
            return self.lines.index(v) + 1
        except ValueError:
            return self.num_lines + 1

    def access(self, v: str) -> tuple:
        hit = v in self.lines
        rest = tuple(u for u in self.lines if u != v)
        return hit, ConcreteCache(self.num_lines, ((v,) + rest)[:self.num_lines])


@dataclass(frozen=True)
class TracePoint:
    site: Site
    flavor: str
    var: str
    hit: bool
    before: ConcreteCache


@dataclass
class ConcreteRun:
    choices: tuple
    branch_outcomes: list = field(default_factory=list)  # (block, arm taken)
    predictions: list = field(default_factory=list)  # (block, arm predicted)
    rollback_steps: list = field(default_factory=list)  # (block, k)
    unknown_index_choices: list = field(default_factory=list)  # (site, line)
    trace: list = field(default_factory=list)
    truncated: bool = False  # a loop hit the traversal cap

    def misses(self, flavor: str = NORMAL) -> int:
        return sum(1 for t in self.trace if t.flavor == flavor and not t.hit)


class _Redundant(Exception):
    """The window ended before ``k`` steps; a smaller ``k`` gives the same run."""


class _Chooser:
    def __init__(self, prefix=(), strict_replay=False):
        self.prefix = list(prefix)
        self.strict_replay = strict_replay
        self.taken: list = []
        self.arity: list = []

    def __call__(self, n: int) -> int:
        if n == 1:
            return 0
        i = len(self.taken)
        if i < len(self.prefix):
            c = self.prefix[i]
            if not 0 <= c < n:
                raise ChoiceError(f"choice {i} is {c}, expected 0..{n - 1}")
        elif self.strict_replay:
            raise ChoiceError("choice vector is incomplete")
        else:
            c = 0
        self.taken.append(c)
        self.arity.append(n)
        return c


class _Machine:
    def __init__(self, program: Program, num_lines: int, spec: Optional[SpecConfig],
                 strict: bool, loop_cap: int):
        self.p = program
        self.n = num_lines
        self.spec = spec
        self.strict = strict
        self.loop_cap = loop_cap
        self.retreat = retreating_edges(program)

    def _var(self, inst, site: Site, choose, run: ConcreteRun, record: bool) -> Optional[str]:
        if isinstance(inst, Ref):
            return inst.var
        if isinstance(inst, (RefRegionUnknown, SecretRef)):
            lines = self.p.regions[inst.region].lines()
            v = lines[choose(len(lines))]
            if record:
                run.unknown_index_choices.append((site, v))
            return v
        return None

    def _depth(self, cache: ConcreteCache, cond_vars) -> int:
        if self.spec is None:
            return 0
        if not self.strict and all(v in cache.lines for v in cond_vars):
            return self.spec.depth_hit
        return self.spec.depth_miss

    def _window(self, start: str, k: int, cache: ConcreteCache, choose, run: ConcreteRun):
        b, i, done, idle = start, 0, 0, 0
        while done < k:
            blk = self.p.blocks[b]
            if i < len(blk.body):
                inst = blk.body[i]
                v = self._var(inst, blk.site(i), choose, run, True)
                if v is not None:
                    hit, after = cache.access(v)
                    run.trace.append(TracePoint(blk.site(i), SPECULATIVE, v, hit, cache))
                    cache = after
                done, i, idle = done + 1, i + 1, 0
                continue
            succs = self.p.succs(b)
            idle += 1
            if not succs or idle > len(self.p.blocks):
                raise _Redundant
            b, i = succs[choose(len(succs))], 0
        return cache

    def run(self, choose) -> ConcreteRun:
        run = ConcreteRun(())
        cache = ConcreteCache(self.n)
        edges: Counter = Counter()
        b = self.p.entry
        while True:
            blk = self.p.blocks[b]
            for i, inst in enumerate(blk.body):
                v = self._var(inst, blk.site(i), choose, run, True)
                if v is not None:
                    hit, after = cache.access(v)
                    run.trace.append(TracePoint(blk.site(i), NORMAL, v, hit, cache))
                    cache = after
            term = blk.terminator
            if isinstance(term, Exit):
                break
            succs = self.p.succs(b)
            allowed = [s for s in succs
                       if (b, s) not in self.retreat or edges[(b, s)] < self.loop_cap]
            if not allowed:
                run.truncated = True
                break
            nxt = allowed[choose(len(allowed))]
            if len(succs) == 2:
                run.branch_outcomes.append((b, nxt))
                d = self._depth(cache, term.cond_vars)
                if d >= 1:
                    wrong = succs[0] if nxt == succs[1] else succs[1]
                    pred = (nxt, wrong)[choose(2)]
                    run.predictions.append((b, pred))
                    if pred != nxt:
                        k = choose(d + 1)
                        run.rollback_steps.append((b, k))
                        cache = self._window(wrong, k, cache, choose, run)
            if (b, nxt) in self.retreat:
                edges[(b, nxt)] += 1
            b = nxt
        return run


def simulate(program: Program, choices, num_lines: int, spec: Optional[SpecConfig],
             strict: bool = False, loop_cap: int = 2, complete: bool = False) -> ConcreteRun:
    """Replay one run; ``choices`` must resolve every nondeterministic point.

    With ``complete`` a short vector is extended with first options.
    """
    m = _Machine(unroll(program), num_lines, spec, strict, loop_cap)
    ch = _Chooser(choices, strict_replay=not complete)
    try:
        run = m.run(ch)
    except _Redundant:
        raise ChoiceError("rollback point lies past the end of the program") from None
    if len(ch.taken) < len(ch.prefix) or (not complete and len(ch.taken) != len(ch.prefix)):
        raise ChoiceError(f"choice vector has {len(ch.prefix)} entries, run used {len(ch.taken)}")
    run.choices = tuple(ch.taken)
    return run


def enumerate_runs(program: Program, num_lines: int, spec: Optional[SpecConfig],
                   strict: bool = False, loop_cap: int = 2,
                   max_runs: int = 1_000_000) -> Iterator[ConcreteRun]:
    """Every run, in lexicographic order of its choice vector."""
    m = _Machine(unroll(program), num_lines, spec, strict, loop_cap)
    prefix: list = []
    count = 0
    while True:
        ch = _Chooser(prefix)
        try:
            run = m.run(ch)
            run.choices = tuple(ch.taken)
            count += 1
            if count > max_runs:
                raise BudgetExceeded(f"more than {max_runs} concrete runs")
            yield run
        except _Redundant:
            pass
        taken, arity = ch.taken, ch.arity
        i = len(taken) - 1
        while i >= 0 and taken[i] + 1 >= arity[i]:
            i -= 1
        if i < 0:
            return
        prefix = taken[:i] + [taken[i] + 1]


# --- soundness --------------------------------------------------------------


@dataclass
class Counterexample:
    choices: tuple
    site: str
    var: str
    assertion: str

    def to_dict(self) -> dict:
        return {"choices": list(self.choices), "site": self.site, "var": self.var,
                "assertion": self.assertion}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "Counterexample":
        return cls(tuple(d["choices"]), d["site"], d["var"], d["assertion"])


@dataclass
class SoundnessReport:
    ok: bool
    runs: int
    truncated_runs: int
    counterexample: Optional[Counterexample] = None


class _Explorer:
    """Depth-first search over distinct concrete configurations.

    Equivalent to checking every run from ``enumerate_runs`` but each
    (position, cache, loop counters) configuration is expanded once.  The
    choice vector of the path being explored is kept in the same encoding
    ``simulate`` consumes, so any violation comes with a replayable run.
    """

    def __init__(self, m: _Machine, check, max_configs: int = 1_000_000):
        self.m = m
        self.check = check
        self.max_configs = max_configs
        self.seen: set = set()
        self.win_seen: set = set()
        self.checked: dict = {}
        self.choices: list = []
        self.configs = 0
        self.truncated = 0

    def _fork(self, n: int):
        """Yield option indexes, recording them in the choice vector when there is a choice."""
        if n == 1:
            yield 0
            return
        self.choices.append(0)
        for c in range(n):
            self.choices[-1] = c
            yield c
        self.choices.pop()

    def _verify(self, site, v, hit, before):
        key = (site, v, before.lines)
        if key not in self.checked:
            self.checked[key] = self.check(site, v, hit, before)
        msg = self.checked[key]
        if msg is None:
            return None
        var, assertion = msg
        return Counterexample(tuple(self.choices), str(site), var, assertion)

    def _options(self, inst) -> list:
        if isinstance(inst, Ref):
            return [inst.var]
        if isinstance(inst, (RefRegionUnknown, SecretRef)):
            return list(self.m.p.regions[inst.region].lines())
        return [None]

    def at(self, b: str, i: int, cache: ConcreteCache, edges: tuple):
        key = (b, i, cache.lines, edges)
        if key in self.seen:
            return None
        self.seen.add(key)
        self.configs += 1
        if self.configs > self.max_configs:
            raise BudgetExceeded(f"more than {self.max_configs} concrete configurations")
        blk = self.m.p.blocks[b]
        if i == len(blk.body):
            return self._term(b, cache, edges)
        opts = self._options(blk.body[i])
        for c in self._fork(len(opts)):
            v, nxt = opts[c], cache
            if v is not None:
                hit, nxt = cache.access(v)
                cex = self._verify(blk.site(i), v, hit, cache)
                if cex is None:
                    cex = self.at(b, i + 1, nxt, edges)
            else:
                cex = self.at(b, i + 1, nxt, edges)
            if cex is not None:
                return cex
        return None

    def _go(self, b: str, nxt: str, cache: ConcreteCache, edges: tuple):
        if (b, nxt) in self.m.retreat:
            d = dict(edges)
            d[(b, nxt)] = d.get((b, nxt), 0) + 1
            edges = tuple(sorted(d.items()))
        return self.at(nxt, 0, cache, edges)

    def _term(self, b: str, cache: ConcreteCache, edges: tuple):
        m = self.m
        if isinstance(m.p.blocks[b].terminator, Exit):
            return None
        succs = m.p.succs(b)
        counts = dict(edges)
        allowed = [s for s in succs if (b, s) not in m.retreat or counts.get((b, s), 0) < m.loop_cap]
        if not allowed:
            self.truncated += 1
            return None
        for c in self._fork(len(allowed)):
            nxt = allowed[c]
            d = m._depth(cache, m.p.blocks[b].terminator.cond_vars) if len(succs) == 2 else 0
            if d < 1:
                cex = self._go(b, nxt, cache, edges)
            else:
                wrong = succs[0] if nxt == succs[1] else succs[1]
                cex = None
                for pred in self._fork(2):
                    if pred == 0:
                        cex = self._go(b, nxt, cache, edges)
                    else:
                        self.choices.append(0)  # rollback point, filled in on resolution
                        kidx = len(self.choices) - 1
                        resume = (b, nxt, edges)
                        cex = self._window(wrong, 0, 0, d, cache, resume, kidx, True)
                        self.choices.pop()
                    if cex is not None:
                        break
            if cex is not None:
                return cex
        return None

    def _window(self, b, i, done, d, cache, resume, kidx, can_stop):
        key = (resume, b, i, done, cache.lines, can_stop)
        if key in self.win_seen:
            return None
        self.win_seen.add(key)
        if can_stop:
            self.choices[kidx] = done
            tail = self.choices[kidx + 1:]
            del self.choices[kidx + 1:]
            cex = self._go(resume[0], resume[1], cache, resume[2])
            self.choices.extend(tail)
            if cex is not None:
                return cex
        if done == d:
            return None
        blk = self.m.p.blocks[b]
        if i < len(blk.body):
            opts = self._options(blk.body[i])
            for c in self._fork(len(opts)):
                v = opts[c]
                nxt = cache.access(v)[1] if v is not None else cache
                cex = self._window(b, i + 1, done + 1, d, nxt, resume, kidx, True)
                if cex is not None:
                    return cex
            return None
        succs = self.m.p.succs(b)
        for c in self._fork(len(succs)):
            cex = self._window(succs[c], 0, done, d, cache, resume, kidx, False)
            if cex is not None:
                return cex
        return None


def _state_checker(result: FixpointResult):
    cfg = result.engine.cache
    verdicts = {v.site: v for v in classify(result)}

    def check(site, var, hit, before: ConcreteCache):
        st = result.per_site_in.get(site)
        state = st.combined() if st is not None else cd.bottom()
        if not state.reached:
            return var, "site reached concretely but not abstractly"
        v = verdicts.get(site)
        if v is not None and v.must_hit and not hit:
            return var, "MustHit access missed"
        for u in sorted(set(state.must) | set(before.lines)):
            if before.age(u) > state.must_age(u, cfg):
                return u, f"concrete age {before.age(u)} exceeds must age {state.must_age(u, cfg)}"
        if state.may is not None:
            for u in sorted(state.may):
                if before.age(u) < state.may_age(u, cfg):
                    return u, f"concrete age {before.age(u)} below may age {state.may_age(u, cfg)}"
        return None

    return check


def check_run(run: ConcreteRun, result: FixpointResult) -> Optional[Counterexample]:
    """First normal-flavor access in ``run`` that the abstract states do not cover."""
    check = _state_checker(result)
    for t in run.trace:
        if t.flavor == NORMAL:
            msg = check(t.site, t.var, t.hit, t.before)
            if msg is not None:
                return Counterexample(run.choices, str(t.site), msg[0], msg[1])
    return None


def check_soundness(program: Program, engine: EngineConfig, strict: bool = False,
                    loop_cap: int = 2, max_configs: int = 1_000_000) -> SoundnessReport:
    """Compare the analysis against every concrete run of ``program``.

    At each normal access the concrete cache must lie within the join of the
    normal and speculative states recorded for the site, and a MustHit site
    must hit.  With no speculation configured only prediction-correct runs
    exist, which is the setting the plain analysis is meant for.
    ``runs`` in the report counts distinct concrete configurations explored.
    """
    result = run(program, engine)
    m = _Machine(result.program, engine.cache.num_lines, engine.spec, strict, loop_cap)
    ex = _Explorer(m, _state_checker(result), max_configs)
    cex = ex.at(m.p.entry, 0, ConcreteCache(engine.cache.num_lines), ())
    return SoundnessReport(cex is None, ex.configs, ex.truncated, cex)


def replay(program: Program, cex: Counterexample, engine: EngineConfig, strict: bool = False,
           loop_cap: int = 2) -> tuple:
    """Re-run a counterexample; returns (run, violation found on it or None)."""
    r = simulate(program, cex.choices, engine.cache.num_lines, engine.spec, strict, loop_cap,
                 complete=True)
    return r, check_run(r, run(program, engine))


# --- random programs --------------------------------------------------------


@dataclass(frozen=True)
class FuzzSpec:
    max_vars: int = 6
    max_blocks: int = 12
    max_branches: int = 3
    max_region_size: int = 3
    loop_allowed: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_vars < 1 or self.max_blocks < 1 or self.max_branches < 0:
            raise ValueError("fuzz bounds must be positive")


def gen_program(fuzz: FuzzSpec) -> Program:
    """Structured random program: straight-line code, if/else diamonds and,
    when allowed, one bounded loop (given an unroll hint half of the time)."""
    rng = random.Random(fuzz.seed)
    nvars = rng.randint(1, fuzz.max_vars)
    names = [f"v{i}" for i in range(nvars)]
    regions = {}
    if fuzz.max_region_size >= 2 and rng.random() < 0.5:
        regions["R"] = Region("R", rng.randint(2, fuzz.max_region_size))
    all_vars = tuple(names) + tuple(v for r in regions.values() for v in r.lines())
    blocks: dict = {}
    budget = {"branches": rng.randint(0, fuzz.max_branches), "loop": fuzz.loop_allowed}
    hints: dict = {}
    counter = [0]

    def fresh() -> str:
        counter[0] += 1
        return f"b{counter[0]}"

    def body() -> tuple:
        out = []
        for _ in range(rng.randint(0, 3)):
            r = rng.random()
            if regions and r < 0.15:
                out.append(RefRegionUnknown("R"))
            elif regions and r < 0.25:
                out.append(SecretRef("R"))
            elif r < 0.3:
                out.append(Nop())
            else:
                out.append(Ref(rng.choice(all_vars)))
        return tuple(out)

    def cond() -> frozenset:
        return frozenset(rng.sample(names, rng.randint(0, min(2, len(names)))))

    def region(entry: str, exit_: str, depth: int) -> None:
        """Fill block ``entry`` with code that eventually jumps to ``exit_``."""
        room = len(blocks) + 4 <= fuzz.max_blocks
        r = rng.random()
        if room and budget["branches"] > 0 and depth < 3 and r < 0.45:
            budget["branches"] -= 1
            t, e, j = fresh(), fresh(), fresh()
            blocks[entry] = BasicBlock(entry, body(), Branch(cond(), t, e))
            region(t, j, depth + 1)
            region(e, j, depth + 1)
            region(j, exit_, depth + 1)
        elif room and budget["loop"] and budget["branches"] > 0 and r < 0.65:
            budget["loop"] = False
            budget["branches"] -= 1
            h, lb, out = fresh(), fresh(), fresh()
            blocks[entry] = BasicBlock(entry, body(), Goto(h))
            blocks[h] = BasicBlock(h, body(), Branch(cond(), lb, out))
            blocks[lb] = BasicBlock(lb, body(), Goto(h))
            if rng.random() < 0.5:
                hints[h] = rng.randint(1, 2)
            region(out, exit_, depth + 1)
        else:
            blocks[entry] = BasicBlock(entry, body(), Goto(exit_))

    blocks["entry"] = None  # reserve declaration order
    blocks["exit"] = None
    region("entry", "exit", 0)
    blocks["exit"] = BasicBlock("exit", body(), Exit())
    order = ["entry"] + [b for b in blocks if b not in ("entry", "exit")] + ["exit"]
    return Program(all_vars, regions, {b: blocks[b] for b in order}, "entry", hints)

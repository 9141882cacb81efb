"""Worklist engines: the plain must analysis and its speculative extension.

Nodes are basic blocks.  ``S[n]`` is the normal state on entry to ``n``;
``SS[(n, c)]`` is the speculative slot of color ``c`` on entry to ``n``.
The worklist is a FIFO deque; successors are enqueued in declaration order,
so iteration counts are reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import cache_domain as cd
from .cache_domain import AbstractCacheState, CacheConfig, Known, Unknown
from .cfg import unroll
from .ir import Program, Ref, RefRegionUnknown, SecretRef, Site
from .speculation import (SpecConfig, SpecPlan, build_spec_plan, inject,
                          rollback_join, select_depth)

HAVOC = "havoc"
ROTATING = "rotating"


class FixpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    cache: CacheConfig
    spec: Optional[SpecConfig] = None
    region_mode: str = HAVOC
    max_pops: int = 1_000_000

    def __post_init__(self):
        if self.region_mode not in (HAVOC, ROTATING):
            raise ValueError(f"unknown region mode {self.region_mode!r}")


@dataclass
class SiteStates:
    """Incoming states at one access: the normal flow and each speculative slot."""
    normal: AbstractCacheState
    slots: dict = field(default_factory=dict)

    def combined(self) -> AbstractCacheState:
        return cd.join_all([self.normal, *self.slots.values()])


@dataclass
class FixpointResult:
    program: Program  # after unrolling
    engine: EngineConfig
    S: dict
    SS: dict
    iterations: int
    per_site_in: dict  # Site -> SiteStates
    depth_used: dict  # branch block -> depth of its last window
    visits: dict  # Site -> rotating visit counter
    plan: Optional[SpecPlan] = None
    trace: list = field(default_factory=list)  # popped blocks, in order

    def state(self, block: str) -> AbstractCacheState:
        return self.S.get(block, cd.bottom())

    def slot(self, block: str, color: int) -> AbstractCacheState:
        return self.SS.get((block, color), cd.bottom())

    def state_at_exit(self, block: str) -> AbstractCacheState:
        """Normal state after the body of ``block``."""
        s = self.state(block)
        if not s.reached:
            return s
        blk = self.program.blocks[block]
        for i, inst in enumerate(blk.body):
            s = cd.transfer(s, self._access(blk.site(i), inst), self.engine.cache)
        return s

    def _access(self, site: Site, inst):
        return access_of(self.program, inst, self.engine.region_mode, self.visits.get(site, 1))


def access_of(program: Program, inst, region_mode: str, visit: int = 1):
    if isinstance(inst, Ref):
        return Known(inst.var)
    if isinstance(inst, RefRegionUnknown):
        lines = program.regions[inst.region].lines()
        if region_mode == ROTATING:
            return Unknown(lines, ROTATING, min(visit, len(lines)))
        return Unknown(lines)
    if isinstance(inst, SecretRef):
        return Unknown(program.regions[inst.region].lines())
    return None


class _Engine:
    def __init__(self, program: Program, engine: EngineConfig):
        self.p = unroll(program)
        self.e = engine
        self.cfg = engine.cache
        self.spec = engine.spec
        self.plan = build_spec_plan(self.p, self.spec.colors_enabled) if self.spec else None
        self.stops = self.plan.stops() if self.plan else {}
        self.order = {b: i for i, b in enumerate(self.p.blocks)}
        self.S: dict = {}
        self.SS: dict = {}
        self.per_site: dict = {}
        self.visits: dict = {}
        self.last_in: dict = {}
        self.depth_used: dict = {}
        self.rj_cache: dict = {}

    # one block, all flows
    def _body(self, bid: str, normal: AbstractCacheState, slots: dict):
        blk = self.p.blocks[bid]
        for i, inst in enumerate(blk.body):
            site = blk.site(i)
            self.per_site[site] = SiteStates(normal, dict(slots))
            if isinstance(inst, RefRegionUnknown) and self.e.region_mode == ROTATING:
                key = normal.key()
                if site not in self.visits:
                    self.visits[site] = 1
                elif self.last_in[site] != key:
                    size = len(self.p.regions[inst.region].lines())
                    self.visits[site] = min(self.visits[site] + 1, size)
                self.last_in[site] = key
            acc = access_of(self.p, inst, self.e.region_mode, self.visits.get(site, 1))
            if normal.reached:
                normal = cd.transfer(normal, acc, self.cfg)
            slots = {c: cd.transfer(s, acc, self.cfg) for c, s in slots.items()}
        return normal, slots

    def _rollback(self, bid: str, wrong: str, s0: AbstractCacheState, d: int):
        key = (bid, wrong, s0.key(), d)
        rj = self.rj_cache.get(key)
        if rj is None:
            rj = rollback_join(s0, wrong, d, self.p, self.cfg)
            self.rj_cache[key] = rj
        return rj

    def _contributions(self, bid: str) -> dict:
        """target block -> (normal contribution, {color: slot contribution})."""
        normal = self.S.get(bid, cd.bottom())
        slots = {c: s for (b, c), s in self.SS.items() if b == bid and s.reached}
        normal, slots = self._body(bid, normal, slots)
        out: dict = {}

        def add(target, slot, st):
            n, ss = out.setdefault(target, [cd.bottom(), {}])
            if slot is None:
                out[target][0] = cd.join(n, st)
            else:
                ss[slot] = cd.join(ss.get(slot, cd.bottom()), st)

        for t in self.p.succs(bid):
            if normal.reached:
                add(t, None, normal)
            converting = self.stops.get(t, ())
            for c, st in sorted(slots.items()):
                add(t, None if c in converting else c, st)

        bp = self.plan.branches.get(bid) if self.plan else None
        if bp is not None:
            s0 = cd.join_all([normal, *slots.values()])
            if s0.reached:
                d = select_depth(bp.cond_vars, s0, self.cfg, self.spec)
                self.depth_used[bid] = d
                for wrong, correct in bp.mispredictions():
                    rj = self._rollback(bid, wrong, s0, d)
                    for inj in inject(bp, correct, rj, self.spec):
                        add(inj.block, inj.slot, inj.state)
        return out

    def _apply(self, target: str, contrib) -> bool:
        n, ss = contrib
        changed = False
        cur = self.S.get(target, cd.bottom())
        if not cd.leq(n, cur):
            self.S[target] = cd.join(cur, n)
            changed = True
        for c, st in sorted(ss.items()):
            cur = self.SS.get((target, c), cd.bottom())
            if not cd.leq(st, cur):
                self.SS[(target, c)] = cd.join(cur, st)
                changed = True
        return changed

    def run(self) -> FixpointResult:
        self.S[self.p.entry] = cd.top(self.cfg)
        work = deque([self.p.entry])
        queued = {self.p.entry}
        pops = 0
        trace = []
        while work:
            bid = work.popleft()
            queued.discard(bid)
            trace.append(bid)
            pops += 1
            if pops > self.e.max_pops:
                raise FixpointError(f"no fixpoint after {self.e.max_pops} worklist pops")
            contribs = self._contributions(bid)
            for t in sorted(contribs, key=self.order.__getitem__):
                if self._apply(t, contribs[t]) and t not in queued:
                    work.append(t)
                    queued.add(t)
        return FixpointResult(self.p, self.e, self.S, self.SS, pops, self.per_site,
                              self.depth_used, self.visits, self.plan, trace)


def run_baseline(program: Program, engine: EngineConfig) -> FixpointResult:
    """Plain must analysis: no speculative flows, whatever ``engine.spec`` says."""
    if engine.spec is not None:
        engine = EngineConfig(engine.cache, None, engine.region_mode, engine.max_pops)
    return _Engine(program, engine).run()


def run_speculative(program: Program, engine: EngineConfig) -> FixpointResult:
    if engine.spec is None:
        raise ValueError("run_speculative needs a SpecConfig")
    return _Engine(program, engine).run()


def run(program: Program, engine: EngineConfig) -> FixpointResult:
    return (run_speculative if engine.spec is not None else run_baseline)(program, engine)


def is_fixpoint(result: FixpointResult) -> bool:
    """One more sweep of transfer and injection over the final states changes nothing."""
    eng = _Engine(result.program, result.engine)
    eng.S = dict(result.S)
    eng.SS = dict(result.SS)
    eng.visits = dict(result.visits)
    eng.last_in = {site: st.normal.key() for site, st in result.per_site_in.items()}
    for bid in result.program.blocks:
        if not result.state(bid).reached and not any(
                b == bid and s.reached for (b, _), s in result.SS.items()):
            continue
        for t, (n, ss) in eng._contributions(bid).items():
            if not cd.leq(n, result.state(t)):
                return False
            for c, st in ss.items():
                if not cd.leq(st, result.slot(t, c)):
                    return False
    return True


def pop_bound(program: Program, engine: EngineConfig) -> int:
    p = unroll(program)
    colors = len(build_spec_plan(p).colors) if engine.spec else 0
    nvars = len(p.vars) + sum(r.size for r in p.regions.values())
    return len(p.blocks) * (2 * nvars * engine.cache.out + 1) * (colors + 1)

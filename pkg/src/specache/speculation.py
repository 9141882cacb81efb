"""Speculative flows: per-branch plans, depth selection, rollback states, injections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import cache_domain as cd
from .cache_domain import AbstractCacheState, CacheConfig, Known, Unknown
from .cfg import postdominators
from .ir import Program, Ref, RefRegionUnknown, SecretRef

JIT = "jit"
ROLLBACK = "rollback"
STRATEGIES = (JIT, ROLLBACK)


@dataclass(frozen=True)
class SpecConfig:
    depth_hit: int = 20
    depth_miss: int = 200
    strategy: str = JIT
    colors_enabled: bool = True

    def __post_init__(self):
        if self.depth_hit < 0 or self.depth_miss < 0:
            raise ValueError("speculation depths must be non-negative")
        if self.depth_hit > self.depth_miss:
            raise ValueError("depth_hit must not exceed depth_miss")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown merge strategy {self.strategy!r}")


@dataclass(frozen=True)
class BranchPlan:
    block: str
    color: int
    then: str
    orelse: str
    # None when the branch cannot reach an exit
    stop: Optional[str]
    cond_vars: frozenset

    def mispredictions(self) -> tuple:
        """(wrong arm, correct arm) pairs for both directions."""
        return ((self.orelse, self.then), (self.then, self.orelse))


@dataclass(frozen=True)
class SpecPlan:
    branches: dict  # block id -> BranchPlan

    @property
    def colors(self) -> tuple:
        return tuple(sorted({bp.color for bp in self.branches.values()}))

    def stops(self) -> dict:
        """stop block -> set of colors converted there."""
        out: dict = {}
        for bp in self.branches.values():
            if bp.stop is not None:
                out.setdefault(bp.stop, set()).add(bp.color)
        return out


def build_spec_plan(program: Program, colors_enabled: bool = True) -> SpecPlan:
    """One color per two-way branch, merged back at its immediate postdominator.

    With colors disabled every branch shares color 1 (a single speculative
    slot), which then converts back at every stop node.
    """
    ipdom = postdominators(program)
    plans = {}
    for i, b in enumerate(program.branches(), 1):
        term = program.blocks[b].terminator
        stop = ipdom.get(b)
        plans[b] = BranchPlan(b, i if colors_enabled else 1, term.then, term.orelse,
                              stop, term.cond_vars)
    return SpecPlan(plans)


def select_depth(cond_vars, s: AbstractCacheState, cfg: CacheConfig, spec: SpecConfig) -> int:
    """Short window when every condition variable is a must-hit, else long."""
    if all(s.is_must_hit(v, cfg) for v in cond_vars):
        return spec.depth_hit
    return spec.depth_miss


def window_access(program: Program, inst) -> Optional[object]:
    """Cache effect of an instruction inside a speculative window (havoc for unknown indexes)."""
    if isinstance(inst, Ref):
        return Known(inst.var)
    if isinstance(inst, (RefRegionUnknown, SecretRef)):
        return Unknown(program.regions[inst.region].lines())
    return None


def _positions(program: Program, block: str) -> list:
    """Instruction positions reachable from the start of ``block`` without executing anything."""
    out, seen, work = [], set(), [block]
    while work:
        b = work.pop()
        if b in seen:
            continue
        seen.add(b)
        blk = program.blocks[b]
        if blk.body:
            out.append((b, 0))
        else:
            work.extend(reversed(program.succs(b)))
    return out


def _advance(program: Program, pos: tuple) -> list:
    b, i = pos
    if i + 1 < len(program.blocks[b].body):
        return [(b, i + 1)]
    out = []
    for s in program.succs(b):
        out.extend(_positions(program, s))
    return out


@dataclass(frozen=True)
class RollbackJoin:
    state: AbstractCacheState
    depth: int


def rollback_join(s0: AbstractCacheState, wrong_entry: str, depth: int,
                  program: Program, cfg: CacheConfig) -> RollbackJoin:
    """Join of every cache state left behind by a squashed window of up to ``depth`` instructions.

    Step ``k`` holds, per instruction position, the join of all states after
    executing ``k`` instructions from ``wrong_entry``.  Branches fan out to
    both successors; loops are allowed since the step count bounds the walk.
    """
    result = s0
    frontier = {p: s0 for p in _positions(program, wrong_entry)}
    for _ in range(depth):
        nxt: dict = {}
        for pos, st in frontier.items():
            inst = program.blocks[pos[0]].body[pos[1]]
            out = cd.transfer(st, window_access(program, inst), cfg)
            result = cd.join(result, out)
            for q in _advance(program, pos):
                nxt[q] = cd.join(nxt[q], out) if q in nxt else out
        if not nxt:
            break
        frontier = nxt
    return RollbackJoin(result, depth)


@dataclass(frozen=True)
class Injection:
    block: str
    slot: Optional[int]  # None means the normal state
    state: AbstractCacheState


def inject(plan: BranchPlan, correct: str, rj: RollbackJoin, spec: SpecConfig) -> list:
    """Where the rolled-back state re-enters the analysis.

    Just-in-time merging seeds the branch's speculative slot at the correct
    arm, to be folded into the normal state at the stop node.  Rollback
    merging joins it straight into the normal state at the correct arm.
    A zero-depth window adds nothing beyond the normal flow.
    """
    if rj.depth == 0:
        return []
    if spec.strategy == ROLLBACK or correct == plan.stop:
        return [Injection(correct, None, rj.state)]
    return [Injection(correct, plan.color, rj.state)]

"""User-facing results: per-site verdicts, miss counts and secret-index leaks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from . import cache_domain as cd
from .fixpoint import ROTATING, EngineConfig, FixpointResult, run
from .ir import Program, Ref, RefRegionUnknown, SecretRef, Site, format_instruction

MUST_HIT = "MustHit"
MAY_MISS = "MayMiss"

NO_LEAK = "none"
MIXED = "mixed"
ALL_MISSING = "all-possibly-missing"
UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class SiteVerdict:
    site: Site
    access: str
    normal: Optional[str]  # None when only speculative flows reach the site
    speculative_slots: dict  # color -> verdict

    @property
    def must_hit(self) -> bool:
        """Hit on every flow that reaches the site."""
        return self.normal != MAY_MISS and all(v == MUST_HIT for v in self.speculative_slots.values())

    def to_dict(self) -> dict:
        return {"site": str(self.site), "access": self.access, "normal": self.normal,
                "speculative": {str(c): v for c, v in sorted(self.speculative_slots.items())}}


@dataclass(frozen=True)
class LeakEntry:
    site: Site
    region: str
    leaking: bool
    kind: str
    must_hit_lines: tuple
    evicted_lines: tuple

    def to_dict(self) -> dict:
        return {"site": str(self.site), "region": self.region, "leaking": self.leaking,
                "kind": self.kind, "must_hit_lines": list(self.must_hit_lines),
                "evicted_lines": list(self.evicted_lines)}


def _lines_checked(result: FixpointResult, site: Site, inst) -> Optional[tuple]:
    """Lines that must all be cached for a hit, or None if the access never counts as one."""
    p = result.program
    if isinstance(inst, Ref):
        return (inst.var,)
    if isinstance(inst, RefRegionUnknown):
        lines = p.regions[inst.region].lines()
        if result.engine.region_mode == ROTATING:
            return (lines[min(result.visits.get(site, 1), len(lines)) - 1],)
        return None
    if isinstance(inst, SecretRef):
        return p.regions[inst.region].lines()
    return ()


def _verdict(state: cd.AbstractCacheState, lines: Optional[tuple], cfg: cd.CacheConfig) -> str:
    if lines is None:
        return MAY_MISS
    return MUST_HIT if all(state.is_must_hit(v, cfg) for v in lines) else MAY_MISS


def classify(result: FixpointResult, program: Optional[Program] = None,
             cfg: Optional[cd.CacheConfig] = None) -> list:
    """One verdict per reachable memory access, in program order.

    ``program`` and ``cfg`` default to the ones the result was computed on.
    """
    p = result.program
    cfg = cfg or result.engine.cache
    out = []
    for site, inst in p.sites():
        if isinstance(inst, (Ref, RefRegionUnknown, SecretRef)) and site in result.per_site_in:
            st = result.per_site_in[site]
            lines = _lines_checked(result, site, inst)
            normal = _verdict(st.normal, lines, cfg) if st.normal.reached else None
            slots = {c: _verdict(s, lines, cfg) for c, s in sorted(st.slots.items()) if s.reached}
            if normal is None and not slots:
                continue
            out.append(SiteVerdict(site, format_instruction(p, inst), normal, slots))
    return out


def count_misses(verdicts) -> tuple:
    """(misses on the normal flow, misses seen only on speculative flows)."""
    miss = sum(1 for v in verdicts if v.normal == MAY_MISS)
    spec = sum(1 for v in verdicts if v.normal != MAY_MISS
               and any(s == MAY_MISS for s in v.speculative_slots.values()))
    return miss, spec


def detect_leaks(result: FixpointResult, program: Optional[Program] = None,
                 cfg: Optional[cd.CacheConfig] = None) -> list:
    """A secret-indexed access leaks unless every line of its region is a must-hit
    on every flow reaching it."""
    p = result.program
    cfg = cfg or result.engine.cache
    out = []
    for site, inst in p.sites():
        if not isinstance(inst, SecretRef):
            continue
        lines = p.regions[inst.region].lines()
        st = result.per_site_in.get(site)
        state = st.combined() if st is not None else cd.bottom()
        if not state.reached:
            out.append(LeakEntry(site, inst.region, False, UNREACHABLE, (), ()))
            continue
        hit = tuple(v for v in lines if state.is_must_hit(v, cfg))
        evicted = tuple(v for v in lines if v not in hit)
        kind = NO_LEAK if not evicted else MIXED if hit else ALL_MISSING
        out.append(LeakEntry(site, inst.region, bool(evicted), kind, hit, evicted))
    return out


@dataclass
class AnalysisReport:
    config: dict
    verdicts: list
    miss_count: int
    spec_miss_count: int
    leaks: list
    iterations: int

    @property
    def has_leak(self) -> bool:
        return any(l.leaking for l in self.leaks)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "miss_count": self.miss_count,
            "spec_miss_count": self.spec_miss_count,
            "leaks": [l.to_dict() for l in self.leaks],
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    def format_text(self) -> str:
        lines = []
        cfgs = ", ".join(f"{k}={v}" for k, v in self.config.items() if k != "warnings")
        lines.append(f"config: {cfgs}")
        for w in self.config.get("warnings", []):
            lines.append(f"warning: {w}")
        lines.append("")
        w_site = max([4] + [len(str(v.site)) for v in self.verdicts])
        w_acc = max([6] + [len(v.access) for v in self.verdicts])
        lines.append(f"{'site':<{w_site}}  {'access':<{w_acc}}  {'normal':<8}  speculative")
        for v in self.verdicts:
            spec = " ".join(f"c{c}:{s}" for c, s in sorted(v.speculative_slots.items())) or "-"
            lines.append(f"{str(v.site):<{w_site}}  {v.access:<{w_acc}}  {v.normal or '-':<8}  {spec}")
        lines.append("")
        lines.append(f"#Miss {self.miss_count}  #SpMiss {self.spec_miss_count}  #Iteration {self.iterations}")
        if self.leaks:
            lines.append("")
            lines.append("Leak Detected:")
            for l in self.leaks:
                mark = "yes" if l.leaking else "no"
                ev = ",".join(l.evicted_lines) or "-"
                lines.append(f"  {l.site} {l.region}: {mark} ({l.kind}; possibly evicted: {ev})")
        return "\n".join(lines) + "\n"


def engine_summary(engine: EngineConfig) -> dict:
    cfg = {"lines": engine.cache.num_lines, "shadow": engine.cache.shadow,
           "region_mode": engine.region_mode, "speculative": engine.spec is not None}
    if engine.spec is not None:
        cfg.update(strategy=engine.spec.strategy, depth_hit=engine.spec.depth_hit,
                   depth_miss=engine.spec.depth_miss)
    warnings = []
    if engine.region_mode == ROTATING:
        warnings.append("rotating region mode is not proven sound; use havoc for guarantees")
    cfg["warnings"] = warnings
    return cfg


def report(result: FixpointResult) -> AnalysisReport:
    verdicts = classify(result)
    miss, spec = count_misses(verdicts)
    return AnalysisReport(engine_summary(result.engine), verdicts, miss, spec,
                          detect_leaks(result), result.iterations)


def analyze(program: Program, engine: EngineConfig) -> AnalysisReport:
    return report(run(program, engine))

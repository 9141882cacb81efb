"""Sound must-hit LRU cache analysis under speculative execution."""

from .analyses import (AnalysisReport, LeakEntry, SiteVerdict, analyze, classify,
                       count_misses, detect_leaks, report)
from .cache_domain import (AbstractCacheState, CacheConfig, Known, Unknown, bottom,
                           format_state, join, leq, top, transfer)
from .cfg import postdominators, unroll
from .fixpoint import (EngineConfig, FixpointResult, is_fixpoint, run, run_baseline,
                       run_speculative)
from .ir import IRError, Program, Site, format_program, parse_program
from .oracle import (ConcreteCache, ConcreteRun, Counterexample, FuzzSpec, check_soundness,
                     enumerate_runs, gen_program, simulate)
from .speculation import JIT, ROLLBACK, SpecConfig, build_spec_plan, rollback_join

__all__ = [name for name in dir() if not name.startswith("_")]

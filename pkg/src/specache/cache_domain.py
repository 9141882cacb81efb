"""Abstract LRU cache states for must-hit analysis.

A state maps every variable to an upper bound on its LRU age (``must``)
and, with shadow tracking, a lower bound (``may``: the youngest line the
variable may occupy on some path).  Ages run from 1 (most recently used)
to ``N + 1`` (not cached).  Entries at ``N + 1`` are never stored, so an
absent key reads as "outside the cache".
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union


@dataclass(frozen=True)
class CacheConfig:
    num_lines: int
    shadow: bool = False

    def __post_init__(self):
        if self.num_lines < 1:
            raise ValueError("num_lines must be >= 1")

    @property
    def out(self) -> int:
        return self.num_lines + 1


@dataclass(frozen=True)
class Known:
    var: str


@dataclass(frozen=True)
class Unknown:
    """Access to one line of a region whose index is not known statically.

    ``havoc`` ages every cached variable; ``rotating`` picks line
    ``visit - 1`` as if it were a known access.
    """

    lines: tuple
    mode: str = "havoc"
    visit: int = 1

    def __post_init__(self):
        if self.mode not in ("havoc", "rotating"):
            raise ValueError(f"unknown region mode {self.mode!r}")
        if not 1 <= self.visit <= len(self.lines):
            raise ValueError("visit counter out of range")


Access = Union[Known, Unknown, None]


class AbstractCacheState:
    __slots__ = ("reached", "must", "may")

    def __init__(self, reached: bool, must: Mapping[str, int] = (),
                 may: Optional[Mapping[str, int]] = None):
        self.reached = reached
        self.must = dict(must)
        self.may = None if may is None else dict(may)

    def must_age(self, v: str, cfg: CacheConfig) -> int:
        return self.must.get(v, cfg.out)

    def may_age(self, v: str, cfg: CacheConfig) -> int:
        if self.may is None:
            return 1
        return self.may.get(v, cfg.out)

    def is_must_hit(self, v: str, cfg: CacheConfig) -> bool:
        return self.reached and self.must.get(v, cfg.out) <= cfg.num_lines

    def key(self) -> tuple:
        may = None if self.may is None else tuple(sorted(self.may.items()))
        return (self.reached, tuple(sorted(self.must.items())), may)

    def __eq__(self, other) -> bool:
        return isinstance(other, AbstractCacheState) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        if not self.reached:
            return "AbstractCacheState(⊥)"
        return f"AbstractCacheState(must={self.must!r}, may={self.may!r})"


def bottom() -> AbstractCacheState:
    return AbstractCacheState(False)


def top(cfg: CacheConfig) -> AbstractCacheState:
    """The cold cache: nothing is cached on any path."""
    return AbstractCacheState(True, {}, {} if cfg.shadow else None)


def transfer(s: AbstractCacheState, access: Access, cfg: CacheConfig) -> AbstractCacheState:
    if not s.reached:
        raise ValueError("transfer applied to an unreached state")
    if access is None:
        return s
    if isinstance(access, Unknown):
        if access.mode == "rotating":
            return _access(s, access.lines[access.visit - 1], cfg)
        if len(access.lines) == 1:
            return _access(s, access.lines[0], cfg)
        return _havoc(s, access.lines, cfg)
    return _access(s, access.var, cfg)


def _access(s: AbstractCacheState, v: str, cfg: CacheConfig) -> AbstractCacheState:
    out = cfg.out
    av = s.must.get(v, out)
    if s.may is None:
        must = {u: a + 1 if a < av else a for u, a in s.must.items() if u != v}
        must = {u: a for u, a in must.items() if a < out}
        must[v] = 1
        return AbstractCacheState(True, must)

    mv = s.may.get(v, out)
    may = {}
    for u, a in s.may.items():
        if u != v:
            a = a + 1 if a <= mv else a
            if a < out:
                may[u] = a
    may[v] = 1

    # N_Young(u) counts shadow entries (other than u) at age <= Age(u) after
    # the shadow update; u only ages when that count reaches Age(u).
    ages = sorted(may.values())
    must = {}
    for u, a in s.must.items():
        if u == v:
            continue
        if a < av:
            n_young = bisect_right(ages, a) - (1 if may.get(u, out) <= a else 0)
            if n_young >= a:
                a += 1
        if a < out:
            must[u] = a
    must[v] = 1
    return AbstractCacheState(True, must, may)


def _havoc(s: AbstractCacheState, lines: Sequence[str], cfg: CacheConfig) -> AbstractCacheState:
    out = cfg.out
    must = {u: a + 1 for u, a in s.must.items() if a + 1 < out}
    may = None
    if s.may is not None:
        may = dict(s.may)
        for r in lines:
            may[r] = 1
    return AbstractCacheState(True, must, may)


def join(s1: AbstractCacheState, s2: AbstractCacheState,
         cfg: Optional[CacheConfig] = None) -> AbstractCacheState:
    if not s1.reached:
        return s2
    if not s2.reached:
        return s1
    must = {v: max(a, s2.must[v]) for v, a in s1.must.items() if v in s2.must}
    may = None
    if s1.may is not None and s2.may is not None:
        may = dict(s1.may)
        for v, a in s2.may.items():
            if a < may.get(v, a + 1):
                may[v] = a
    return AbstractCacheState(True, must, may)


def join_all(states: Iterable[AbstractCacheState]) -> AbstractCacheState:
    acc = bottom()
    for s in states:
        acc = join(acc, s)
    return acc


def leq(s1: AbstractCacheState, s2: AbstractCacheState) -> bool:
    if not s1.reached:
        return True
    if not s2.reached:
        return False
    for v, a in s2.must.items():
        if s1.must.get(v, a + 1) > a:
            return False
    if s1.may is not None and s2.may is not None:
        for v, a in s1.may.items():
            if s2.may.get(v, a + 1) > a:
                return False
    return True


# --- bucket notation --------------------------------------------------------


def _buckets(ages: Mapping[str, int], width: int) -> list:
    rows = [[] for _ in range(width)]
    for v, a in ages.items():
        if a <= width:
            rows[a - 1].append(v)
    return [sorted(r) for r in rows]


def _width(s: AbstractCacheState, cfg: CacheConfig, width: Optional[int]) -> int:
    if width is not None:
        return width
    ages = list(s.must.values()) + list((s.may or {}).values())
    return min(max(ages, default=0), cfg.num_lines)


def format_state(s: AbstractCacheState, cfg: CacheConfig, width: Optional[int] = None,
                 part: str = "both") -> str:
    """Age buckets, youngest first: ``[{∃a,a}, {}, {b}]``.

    ``part`` selects ``must``, ``may`` or ``both`` (shadow names first).
    Without ``width`` trailing empty buckets are trimmed.
    """
    if not s.reached:
        return "⊥"
    w = _width(s, cfg, width)
    must = _buckets(s.must, w)
    may = _buckets(s.may or {}, w)
    cells = []
    for mu, ma in zip(must, may):
        names = []
        if part in ("may", "both"):
            names += ["∃" + v for v in ma]
        if part in ("must", "both"):
            names += mu
        cells.append("{" + ",".join(names) + "}")
    return "[" + ", ".join(cells) + "]"


def format_row(s: AbstractCacheState, cfg: CacheConfig, rename=None) -> str:
    """Must ages as one slot per age, ``∅`` for an empty slot (Table-style)."""
    if not s.reached:
        return "⊥"
    rename = rename or (lambda v: v)
    w = max(s.must.values(), default=0)
    cells = []
    for b in _buckets(s.must, w):
        if not b:
            cells.append("∅")
        elif len(b) == 1:
            cells.append(rename(b[0]))
        else:
            cells.append("{" + ",".join(rename(v) for v in b) + "}")
    return "[" + ", ".join(cells) + "]"


def from_buckets(must: Sequence, cfg: CacheConfig, may: Optional[Sequence] = None) -> AbstractCacheState:
    """Build a state from bucket lists; bucket ``i`` holds variables of age ``i+1``.

    A bucket may be a name, an iterable of names, or ``None`` for empty.
    """
    def ages(rows) -> dict:
        out = {}
        for i, b in enumerate(rows):
            if b is None:
                continue
            for v in ([b] if isinstance(b, str) else b):
                if i + 1 < cfg.out:
                    out[v] = i + 1
        return out

    m = ages(must)
    if cfg.shadow:
        return AbstractCacheState(True, m, ages(may) if may is not None else dict(m))
    return AbstractCacheState(True, m)


def check_invariants(s: AbstractCacheState, cfg: CacheConfig) -> None:
    if not s.reached:
        assert not s.must and not s.may
        return
    for a in s.must.values():
        assert 1 <= a <= cfg.num_lines
    if s.may is not None:
        for a in s.may.values():
            assert 1 <= a <= cfg.num_lines
        for v, a in s.must.items():
            assert s.may.get(v, cfg.out) <= a, (v, s)

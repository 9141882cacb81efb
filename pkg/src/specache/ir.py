"""Program representation and the textual ``.cfgir`` format.

A program is a CFG of basic blocks.  Each block holds memory-reference
instructions and ends in exactly one terminator.  Every variable occupies
one cache line; a region of size ``m`` expands to the variables
``name.0 .. name.(m-1)``.

Grammar (one statement per line, ``#`` starts a comment)::

    config lines=<N>
    var <id> ...
    region <id> size=<m>
    entry <bb>
    unroll <bb> <k>
    block <bb>:
        ref <var> | ref <region>[<i>] | ref <region>[*]
        secret_ref <region> | nop
        goto <bb> | branch <v1,v2,...> ? <bbT> : <bbE> | exit
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union


class IRError(Exception):
    """Raised for malformed or inconsistent programs."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# --- instructions -----------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    var: str


@dataclass(frozen=True)
class RefRegionUnknown:
    region: str


@dataclass(frozen=True)
class SecretRef:
    region: str


@dataclass(frozen=True)
class Nop:
    pass


Instruction = Union[Ref, RefRegionUnknown, SecretRef, Nop]


# --- terminators ------------------------------------------------------------


@dataclass(frozen=True)
class Goto:
    target: str


@dataclass(frozen=True)
class Branch:
    cond_vars: frozenset
    then: str
    orelse: str


@dataclass(frozen=True)
class Exit:
    pass


Terminator = Union[Goto, Branch, Exit]


def successors(term: Terminator) -> tuple:
    if isinstance(term, Goto):
        return (term.target,)
    if isinstance(term, Branch):
        if term.then == term.orelse:
            return (term.then,)
        return (term.then, term.orelse)
    return ()


@dataclass(frozen=True)
class Region:
    name: str
    size: int

    def lines(self) -> tuple:
        return tuple(f"{self.name}.{i}" for i in range(self.size))


@dataclass(frozen=True)
class Site:
    """One instruction occurrence: source block, position, unroll copy."""

    block: str
    index: int
    copy: int = 0

    def __str__(self) -> str:
        if self.copy:
            return f"{self.block}[{self.index}]#{self.copy}"
        return f"{self.block}[{self.index}]"

    def sort_key(self):
        return (self.block, self.copy, self.index)


@dataclass(frozen=True)
class BasicBlock:
    id: str
    body: tuple
    terminator: Terminator
    # source block and unroll ordinal; differ from ``id`` / 0 only after unrolling
    origin: str = ""
    copy: int = 0

    def __post_init__(self):
        if not self.origin:
            object.__setattr__(self, "origin", self.id)

    def site(self, index: int) -> Site:
        return Site(self.origin, index, self.copy)


@dataclass(frozen=True)
class Program:
    vars: tuple
    regions: Mapping[str, Region]
    blocks: Mapping[str, BasicBlock]
    entry: str
    unroll_hints: Mapping[str, int] = field(default_factory=dict)
    lines: Optional[int] = None

    def __post_init__(self):
        validate(self)

    @property
    def order(self) -> tuple:
        """Block ids in declaration order; the index is the node id."""
        return tuple(self.blocks)

    def succs(self, bid: str) -> tuple:
        return successors(self.blocks[bid].terminator)

    def preds(self) -> dict:
        out = {b: [] for b in self.blocks}
        for b in self.blocks:
            for s in self.succs(b):
                out[s].append(b)
        return out

    def branches(self) -> list:
        return [b for b, blk in self.blocks.items()
                if isinstance(blk.terminator, Branch) and len(self.succs(b)) == 2]

    def sites(self) -> Iterator[tuple]:
        for blk in self.blocks.values():
            for i, inst in enumerate(blk.body):
                yield blk.site(i), inst

    def accessed(self, inst: Instruction) -> tuple:
        """Variables an instruction may touch."""
        if isinstance(inst, Ref):
            return (inst.var,)
        if isinstance(inst, (RefRegionUnknown, SecretRef)):
            return self.regions[inst.region].lines()
        return ()


def validate(p: Program) -> None:
    known = set(p.vars)
    if len(known) != len(p.vars):
        raise IRError("duplicate variable")
    for r in p.regions.values():
        if r.size < 1:
            raise IRError(f"region {r.name!r} must have size >= 1")
    if p.entry not in p.blocks:
        raise IRError(f"entry block {p.entry!r} is not defined")
    for blk in p.blocks.values():
        for inst in blk.body:
            if isinstance(inst, Ref) and inst.var not in known:
                raise IRError(f"undeclared variable {inst.var!r} in block {blk.id!r}")
            if isinstance(inst, (RefRegionUnknown, SecretRef)) and inst.region not in p.regions:
                raise IRError(f"undeclared region {inst.region!r} in block {blk.id!r}")
        term = blk.terminator
        if isinstance(term, Branch):
            for v in term.cond_vars:
                if v not in known:
                    raise IRError(f"undeclared variable {v!r} in branch of {blk.id!r}")
        for s in successors(term):
            if s not in p.blocks:
                raise IRError(f"block {blk.id!r} jumps to undefined block {s!r}")
    for h, k in p.unroll_hints.items():
        if h not in p.blocks:
            raise IRError(f"unroll hint names undefined block {h!r}")
        if k < 1:
            raise IRError(f"unroll count for {h!r} must be >= 1")
    if p.lines is not None and p.lines < 1:
        raise IRError("config lines must be >= 1")


# --- parsing ----------------------------------------------------------------

_ID = r"[A-Za-z_][A-Za-z0-9_.]*"
_BLOCK = re.compile(rf"^block\s+({_ID})\s*:\s*$")
_REGION = re.compile(rf"^region\s+({_ID})\s+size\s*=\s*(\d+)$")
_CONFIG = re.compile(r"^config\s+lines\s*=\s*(\d+)$")
_INDEXED = re.compile(rf"^({_ID})\[(\d+|\*)\]$")
_BRANCH = re.compile(rf"^branch\s*(.*?)\s*\?\s*({_ID})\s*:\s*({_ID})$")


def parse_program(text: str) -> Program:
    vars_: list = []
    regions: dict = {}
    blocks: dict = {}
    hints: dict = {}
    entry = None
    lines = None
    cur: Optional[str] = None
    body: list = []
    block_line = 0

    def var_ref(tok: str, lineno: int) -> str:
        m = _INDEXED.match(tok)
        if m:
            name, idx = m.groups()
            if name not in regions:
                raise IRError(f"undeclared region {name!r}", lineno)
            if idx == "*":
                raise IRError(f"'{tok}' is not a single variable", lineno)
            if int(idx) >= regions[name].size:
                raise IRError(f"index {idx} out of range for region {name!r}", lineno)
            return f"{name}.{idx}"
        if tok not in declared:
            raise IRError(f"undeclared variable {tok!r}", lineno)
        return tok

    declared: set = set()

    def close(term: Terminator, lineno: int) -> None:
        nonlocal cur, body
        if cur is None:
            raise IRError("terminator outside of a block", lineno)
        blocks[cur] = BasicBlock(cur, tuple(body), term)
        cur, body = None, []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word = line.split()[0]
        if cur is not None and word in ("config", "var", "region", "entry", "unroll", "block"):
            raise IRError(f"block {cur!r} has no terminator", block_line)
        if word == "config":
            m = _CONFIG.match(line)
            if not m:
                raise IRError(f"bad config statement: {line!r}", lineno)
            lines = int(m.group(1))
        elif word == "var":
            names = line.split()[1:]
            if not names:
                raise IRError("'var' needs at least one name", lineno)
            for n in names:
                if not re.fullmatch(_ID, n) or n in declared:
                    raise IRError(f"bad or duplicate variable {n!r}", lineno)
                declared.add(n)
                vars_.append(n)
        elif word == "region":
            m = _REGION.match(line)
            if not m:
                raise IRError(f"bad region statement: {line!r}", lineno)
            name, size = m.group(1), int(m.group(2))
            if name in regions or name in declared:
                raise IRError(f"duplicate region {name!r}", lineno)
            if size < 1:
                raise IRError(f"region {name!r} must have size >= 1", lineno)
            regions[name] = Region(name, size)
            for v in regions[name].lines():
                if v in declared:
                    raise IRError(f"region line {v!r} clashes with a variable", lineno)
                declared.add(v)
                vars_.append(v)
        elif word == "entry":
            parts = line.split()
            if len(parts) != 2:
                raise IRError("usage: entry <block>", lineno)
            entry = parts[1]
        elif word == "unroll":
            parts = line.split()
            if len(parts) != 3 or not parts[2].isdigit():
                raise IRError("usage: unroll <block> <count>", lineno)
            hints[parts[1]] = int(parts[2])
        elif word == "block":
            m = _BLOCK.match(line)
            if not m:
                raise IRError(f"bad block header: {line!r}", lineno)
            if m.group(1) in blocks:
                raise IRError(f"duplicate block {m.group(1)!r}", lineno)
            cur, block_line = m.group(1), lineno
        elif cur is None:
            raise IRError(f"statement outside of a block: {line!r}", lineno)
        elif word == "ref":
            parts = line.split()
            if len(parts) != 2:
                raise IRError("usage: ref <var>", lineno)
            m = _INDEXED.match(parts[1])
            if m and m.group(2) == "*":
                if m.group(1) not in regions:
                    raise IRError(f"undeclared region {m.group(1)!r}", lineno)
                body.append(RefRegionUnknown(m.group(1)))
            else:
                body.append(Ref(var_ref(parts[1], lineno)))
        elif word == "secret_ref":
            parts = line.split()
            if len(parts) != 2 or parts[1] not in regions:
                raise IRError(f"secret_ref needs a declared region: {line!r}", lineno)
            body.append(SecretRef(parts[1]))
        elif word == "nop":
            body.append(Nop())
        elif word == "goto":
            parts = line.split()
            if len(parts) != 2:
                raise IRError("usage: goto <block>", lineno)
            close(Goto(parts[1]), lineno)
        elif word == "exit":
            close(Exit(), lineno)
        elif word == "branch":
            m = _BRANCH.match(line)
            if not m:
                raise IRError(f"bad branch statement: {line!r}", lineno)
            conds = [c.strip() for c in m.group(1).split(",") if c.strip()]
            cv = frozenset(var_ref(c, lineno) for c in conds)
            close(Branch(cv, m.group(2), m.group(3)), lineno)
        else:
            raise IRError(f"unknown statement {word!r}", lineno)

    if cur is not None:
        raise IRError(f"block {cur!r} has no terminator", block_line)
    if entry is None:
        raise IRError("missing 'entry' statement")
    return Program(tuple(vars_), regions, blocks, entry, hints, lines)


# --- printing ---------------------------------------------------------------


def _fmt_var(p: Program, v: str) -> str:
    name, _, idx = v.rpartition(".")
    if name in p.regions and idx.isdigit():
        return f"{name}[{idx}]"
    return v


def format_instruction(p: Program, inst: Instruction) -> str:
    if isinstance(inst, Ref):
        return f"ref {_fmt_var(p, inst.var)}"
    if isinstance(inst, RefRegionUnknown):
        return f"ref {inst.region}[*]"
    if isinstance(inst, SecretRef):
        return f"secret_ref {inst.region}"
    return "nop"


def format_program(p: Program) -> str:
    """Canonical text; ``parse_program(format_program(p)) == p``."""
    out = []
    if p.lines is not None:
        out.append(f"config lines={p.lines}")
    region_lines = {v for r in p.regions.values() for v in r.lines()}
    plain = [v for v in p.vars if v not in region_lines]
    if plain:
        out.append("var " + " ".join(plain))
    for r in p.regions.values():
        out.append(f"region {r.name} size={r.size}")
    out.append(f"entry {p.entry}")
    for h, k in p.unroll_hints.items():
        out.append(f"unroll {h} {k}")
    for blk in p.blocks.values():
        out.append(f"block {blk.id}:")
        for inst in blk.body:
            out.append("    " + format_instruction(p, inst))
        t = blk.terminator
        if isinstance(t, Goto):
            out.append(f"    goto {t.target}")
        elif isinstance(t, Branch):
            conds = ",".join(_fmt_var(p, v) for v in sorted(t.cond_vars))
            out.append(f"    branch {conds + ' ' if conds else ''}? {t.then} : {t.orelse}")
        else:
            out.append("    exit")
    return "\n".join(out) + "\n"

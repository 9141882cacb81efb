"""Graph utilities over a Program: dominators, postdominators, loops, unrolling."""

from __future__ import annotations

from dataclasses import replace

import networkx as nx

from .ir import BasicBlock, Branch, Exit, Goto, IRError, Program, successors

EXIT = "<exit>"


def graph(p: Program) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(p.blocks)
    for b in p.blocks:
        for s in p.succs(b):
            g.add_edge(b, s)
    return g


def reachable(p: Program) -> set:
    return nx.descendants(graph(p), p.entry) | {p.entry}


def dominators(p: Program) -> dict:
    """Immediate dominators of blocks reachable from the entry."""
    return nx.immediate_dominators(graph(p), p.entry)


def dominates(idom: dict, a: str, b: str) -> bool:
    while True:
        if a == b:
            return True
        nxt = idom.get(b)
        if nxt is None or nxt == b:
            return False
        b = nxt


def postdominators(p: Program) -> dict:
    """Immediate postdominators; every ``exit`` block is funneled into ``EXIT``.

    Blocks that cannot reach an exit (infinite loops) have no entry.
    """
    g = graph(p).reverse(copy=True)
    g.add_node(EXIT)
    for b, blk in p.blocks.items():
        if isinstance(blk.terminator, Exit):
            g.add_edge(EXIT, b)
    ipdom = nx.immediate_dominators(g, EXIT)
    ipdom.pop(EXIT, None)
    return ipdom


def back_edges(p: Program) -> set:
    """Edges (u, h) where h dominates u."""
    idom = dominators(p)
    out = set()
    for u in idom:
        for h in p.succs(u):
            if h in idom and dominates(idom, h, u):
                out.add((u, h))
    return out


def retreating_edges(p: Program) -> set:
    """Edges that close a cycle in a DFS from the entry."""
    out = set()
    state: dict = {}
    stack = [(p.entry, iter(p.succs(p.entry)))]
    state[p.entry] = 1
    while stack:
        node, it = stack[-1]
        for s in it:
            if state.get(s) == 1:
                out.add((node, s))
            elif s not in state:
                state[s] = 1
                stack.append((s, iter(p.succs(s))))
                break
        else:
            state[node] = 2
            stack.pop()
    return out


def natural_loop(p: Program, header: str) -> set:
    if header not in p.blocks:
        raise IRError(f"unroll hint names {header!r}, which no longer exists after unrolling")
    latches = [u for (u, h) in back_edges(p) if h == header]
    if not latches:
        raise IRError(f"unroll hint on {header!r}, which is not a loop header")
    body = {header}
    live = reachable(p)
    preds = {b: [q for q in qs if q in live] for b, qs in p.preds().items()}
    work = [u for u in latches if u != header]
    body.update(work)
    while work:
        n = work.pop()
        for q in preds[n]:
            if q not in body:
                body.add(q)
                work.append(q)
    return body


def _retarget(term, mapping):
    if isinstance(term, Goto):
        return Goto(mapping(term.target))
    if isinstance(term, Branch):
        return Branch(term.cond_vars, mapping(term.then), mapping(term.orelse))
    return term


def _fresh(name: str, taken: set) -> str:
    while name in taken:
        name += "_"
    taken.add(name)
    return name


def unroll(p: Program) -> Program:
    """Fully unroll every loop named by an unroll hint.

    Copy ``i`` (1-based) of the loop jumps to copy ``i+1`` along its back
    edges.  In the last copy a back edge out of a branch is dropped, leaving
    the branch's other arm; an unconditional back edge instead continues into
    one more copy of the header whose in-loop successors are removed.
    """
    if not p.unroll_hints:
        return p
    cur = p
    for header, k in p.unroll_hints.items():
        # header ids are source ids; after earlier unrolls they stay in place
        bad = {(u, h) for (u, h) in retreating_edges(cur) if h == header} - back_edges(cur)
        if bad:
            raise IRError(f"loop at {header!r} is irreducible")
        cur = _unroll_one(cur, header, k)
    return Program(cur.vars, cur.regions, cur.blocks, cur.entry, {}, cur.lines)


def _unroll_one(p: Program, header: str, k: int) -> Program:
    body = natural_loop(p, header)
    taken = set(p.blocks)
    names = {}
    for i in range(1, k + 1):
        for b in body:
            names[(b, i)] = _fresh(f"{b}.u{i}", taken)

    def name_of(b: str, i: int) -> str:
        return names[(b, i)]

    blocks: dict = {}
    extra = None
    for bid, blk in p.blocks.items():
        if bid not in body:
            blocks[bid] = replace(blk, terminator=_retarget(
                blk.terminator, lambda t: name_of(t, 1) if t == header else t))
            continue
        for i in range(1, k + 1):
            def mapping(t, i=i):
                if t == header:
                    return name_of(header, i + 1) if i < k else None
                return name_of(t, i) if t in body else t
            term = blk.terminator
            if i == k and header in successors(term):
                if isinstance(term, Branch):
                    other = term.orelse if term.then == header else term.then
                    term = Goto(mapping(other))
                else:
                    if extra is None:
                        extra = _fresh(f"{header}.u{k + 1}", taken)
                    term = Goto(extra)
            else:
                term = _retarget(term, mapping)
            blocks[name_of(bid, i)] = BasicBlock(name_of(bid, i), blk.body, term, blk.origin, i)
    if extra is not None:
        h = p.blocks[header]
        outs = [s for s in successors(h.terminator) if s not in body]
        if not outs:
            raise IRError(f"loop at {header!r} has no exit reachable after {k} iterations")
        blocks[extra] = BasicBlock(extra, h.body, Goto(outs[0]) if len(outs) == 1 else
                                   Branch(h.terminator.cond_vars, outs[0], outs[1]),
                                   h.origin, k + 1)
    entry = name_of(header, 1) if p.entry == header else p.entry
    # keep declaration order: non-loop blocks in place, copies where the header was
    ordered: dict = {}
    for bid in p.blocks:
        if bid == header:
            for i in range(1, k + 1):
                for b in p.blocks:
                    if b in body:
                        ordered[name_of(b, i)] = blocks[name_of(b, i)]
            if extra is not None:
                ordered[extra] = blocks[extra]
        elif bid not in body:
            ordered[bid] = blocks[bid]
    return Program(p.vars, p.regions, ordered, entry, {}, p.lines)

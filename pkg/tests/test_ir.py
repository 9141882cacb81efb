import pytest

from specache.cfg import EXIT, back_edges, natural_loop, postdominators, unroll
from specache.ir import (Branch, Exit, Goto, IRError, Ref, RefRegionUnknown, SecretRef,
                         format_program, parse_program)

from conftest import CORPUS, load

SMALL = """config lines=4
var a b c
region R size=3
entry s
block s:
    ref a
    ref R[2]
    ref R[*]
    nop
    branch a,b ? t : e
block t:
    secret_ref R
    goto j
block e:
    goto j
block j:
    exit
"""


def test_parse_small():
    p = parse_program(SMALL)
    assert p.lines == 4
    assert p.vars == ("a", "b", "c", "R.0", "R.1", "R.2")
    s = p.blocks["s"]
    assert s.body[:3] == (Ref("a"), Ref("R.2"), RefRegionUnknown("R"))
    assert s.terminator == Branch(frozenset({"a", "b"}), "t", "e")
    assert p.blocks["t"].body == (SecretRef("R"),)
    assert isinstance(p.blocks["j"].terminator, Exit)


@pytest.mark.parametrize("path", sorted(CORPUS.glob("*.cfgir")), ids=lambda p: p.stem)
def test_round_trip(path):
    p = parse_program(path.read_text())
    text = format_program(p)
    assert parse_program(text) == p
    assert format_program(parse_program(text)) == text


def test_round_trip_small():
    p = parse_program(SMALL)
    assert parse_program(format_program(p)) == p


def test_empty_condition_branch_round_trips():
    p = parse_program("var a\nentry s\nblock s:\n    branch ? t : t\nblock t:\n    exit\n")
    assert "branch ? t : t" in format_program(p)
    assert p.succs("s") == ("t",)
    assert p.branches() == []


@pytest.mark.parametrize("text,line,fragment", [
    ("var a\nentry s\nblock s:\n    ref b\n    exit\n", 4, "undeclared variable 'b'"),
    ("var a\nentry s\nblock s:\n    ref R[*]\n    exit\n", 4, "undeclared region"),
    ("var a\nentry s\nblock s:\n    exit\nblock s:\n    exit\n", 5, "duplicate block"),
    ("var a\nblock s:\n    exit\n", None, "missing 'entry'"),
    ("var a\nentry s\nblock s:\n    ref a\n", 3, "no terminator"),
    ("var a\nentry s\nblock s:\n    ref a\nblock t:\n    exit\n", 3, "no terminator"),
    ("var a\nregion R size=2\nentry s\nblock s:\n    ref R[5]\n    exit\n", 5, "out of range"),
    ("var a\nentry s\nblock s:\n    frob a\n    exit\n", 4, "unknown statement"),
])
def test_parse_errors(text, line, fragment):
    with pytest.raises(IRError) as ei:
        parse_program(text)
    assert fragment in str(ei.value)
    assert ei.value.line == line
    if line is not None:
        assert str(ei.value).startswith(f"line {line}:")


def test_dangling_successor():
    with pytest.raises(IRError, match="undefined block 'nowhere'"):
        parse_program("var a\nentry s\nblock s:\n    goto nowhere\n")


def test_postdominators_funnel_exits():
    p = load("fig2")
    ipdom = postdominators(p)
    assert ipdom["pre"] == "join"
    assert ipdom["then"] == "join"
    assert ipdom["join"] == EXIT


def test_postdominator_of_branch_to_two_exits_is_virtual_exit():
    p = parse_program("var a\nentry s\nblock s:\n    branch ? t : e\n"
                      "block t:\n    exit\nblock e:\n    exit\n")
    assert postdominators(p)["s"] == EXIT


def test_infinite_loop_has_no_postdominator():
    p = parse_program("var a\nentry s\nblock s:\n    ref a\n    goto s\n")
    assert "s" not in postdominators(p)


def test_natural_loop_fig11():
    p = load("fig11")
    assert back_edges(p) == {("J", "H")}
    assert natural_loop(p, "H") == {"H", "B", "L", "R", "J"}


SELF_LOOP = """var a b
entry s
unroll h 1
block s:
    ref a
    goto h
block h:
    ref b
    branch ? h : x
block x:
    exit
"""


def test_unroll_self_loop_once():
    p = unroll(parse_program(SELF_LOOP))
    assert list(p.blocks) == ["s", "h.u1", "x"]
    assert p.blocks["s"].terminator == Goto("h.u1")
    assert p.blocks["h.u1"].terminator == Goto("x")
    assert p.blocks["h.u1"].origin == "h" and p.blocks["h.u1"].copy == 1
    assert back_edges(p) == set()


def test_unroll_fig11_three_times():
    text = (CORPUS / "fig11.cfgir").read_text().replace("entry A", "entry A\nunroll H 3")
    p = unroll(parse_program(text))
    assert back_edges(p) == set()
    for i in (1, 2, 3):
        assert {f"H.u{i}", f"B.u{i}", f"L.u{i}", f"R.u{i}", f"J.u{i}"} <= set(p.blocks)
    assert p.blocks["J.u1"].terminator == Branch(frozenset(), "H.u2", "X")
    assert p.blocks["J.u3"].terminator == Goto("X")
    # site identity keeps the source block and records the copy
    assert p.blocks["L.u2"].site(0).block == "L"
    assert p.blocks["L.u2"].site(0).copy == 2


def test_unroll_unconditional_back_edge_adds_header_copy():
    text = """var a
entry h
unroll h 2
block h:
    ref a
    branch ? b : x
block b:
    goto h
block x:
    exit
"""
    p = unroll(parse_program(text))
    assert p.entry == "h.u1"
    assert p.blocks["b.u2"].terminator == Goto("h.u3")
    assert p.blocks["h.u3"].terminator == Goto("x")


def test_unroll_rejects_non_header():
    with pytest.raises(IRError, match="not a loop header"):
        unroll(parse_program("var a\nentry s\nunroll s 2\nblock s:\n    exit\n"))


def test_unroll_rejects_irreducible_loop():
    text = """var a
entry s
unroll a1 2
block s:
    branch ? a1 : a2
block a1:
    branch ? a2 : x
block a2:
    branch ? a1 : x
block x:
    exit
"""
    with pytest.raises(IRError, match="irreducible|not a loop header"):
        unroll(parse_program(text))

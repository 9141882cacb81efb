import pytest
from hypothesis import given, settings, strategies as st

from specache import cache_domain as cd
from specache.cache_domain import CacheConfig, from_buckets, leq
from specache.cfg import EXIT
from specache.ir import parse_program
from specache.oracle import FuzzSpec, gen_program
from specache.speculation import (JIT, ROLLBACK, RollbackJoin, SpecConfig, build_spec_plan,
                                  inject, rollback_join, select_depth)

from conftest import load

N4 = CacheConfig(4)


def test_spec_config_validation():
    with pytest.raises(ValueError):
        SpecConfig(5, 2)
    with pytest.raises(ValueError):
        SpecConfig(-1, 2)
    with pytest.raises(ValueError):
        SpecConfig(1, 2, "eager")


def test_plan_colors_and_stops():
    plan = build_spec_plan(load("fig7"))
    bp = plan.branches["bb1"]
    assert (bp.color, bp.then, bp.orelse, bp.stop) == (1, "bb2", "bb3", "bb4")
    assert bp.mispredictions() == (("bb3", "bb2"), ("bb2", "bb3"))
    assert plan.stops() == {"bb4": {1}}


def test_plan_colors_per_branch_and_shared():
    p = load("quantl")
    plan = build_spec_plan(p)
    assert [bp.color for bp in plan.branches.values()] == [1, 2]
    assert plan.branches["bb3"].stop == "bb5"
    assert plan.branches["bb5"].stop == "bb8"
    shared = build_spec_plan(p, colors_enabled=False)
    assert shared.colors == (1,)


def test_branch_to_two_exits_stops_at_virtual_exit():
    p = parse_program("var a\nentry s\nblock s:\n    branch ? t : e\n"
                      "block t:\n    exit\nblock e:\n    exit\n")
    assert build_spec_plan(p).branches["s"].stop == EXIT


def test_select_depth():
    spec = SpecConfig(2, 7)
    s = from_buckets(["a"], N4)
    assert select_depth({"a"}, s, N4, spec) == 2
    assert select_depth({"a", "b"}, s, N4, spec) == 7
    assert select_depth(set(), s, N4, spec) == 2


def test_rollback_join_zero_depth_is_identity():
    p = load("fig7")
    s0 = from_buckets(["c", "b", "a"], N4)
    assert rollback_join(s0, "bb3", 0, p, N4).state == s0


def test_rollback_join_one_step():
    p = load("fig7")
    s0 = from_buckets(["c", "b", "a"], N4)
    rj = rollback_join(s0, "bb3", 1, p, N4)
    assert cd.format_state(rj.state, N4, 4) == "[{}, {c}, {b}, {a}]"
    rj2 = rollback_join(s0, "bb3", 2, p, N4)
    # the second step reaches the join block's ref a
    assert cd.format_state(rj2.state, N4, 4) == "[{}, {}, {c}, {a,b}]"


def test_rollback_join_window_crosses_blocks_and_branches():
    p = parse_program("""var a b c d
entry s
block s:
    branch ? t : e
block t:
    goto m
block e:
    branch ? x : y
block x:
    ref a
    goto m
block y:
    ref b
    ref c
    goto m
block m:
    ref d
    exit
""")
    s0 = from_buckets(["d"], N4)
    one = rollback_join(s0, "e", 1, p, N4).state
    assert one.must == {"d": 2}  # a on one path, b on the other
    two = rollback_join(s0, "e", 2, p, N4).state
    assert two.must_age("d", N4) == 3  # b, c along the longer path


def test_inject_strategies():
    p = load("fig7")
    bp = build_spec_plan(p).branches["bb1"]
    rj = RollbackJoin(from_buckets(["e"], N4), 1)
    jit = inject(bp, "bb2", rj, SpecConfig(1, 1, JIT))
    assert [(i.block, i.slot) for i in jit] == [("bb2", 1)]
    rb = inject(bp, "bb2", rj, SpecConfig(1, 1, ROLLBACK))
    assert [(i.block, i.slot) for i in rb] == [("bb2", None)]
    assert inject(bp, "bb2", RollbackJoin(rj.state, 0), SpecConfig(0, 0)) == []
    # a correct arm that is the stop node itself goes straight to the normal state
    assert [(i.block, i.slot) for i in inject(bp, "bb4", rj, SpecConfig(1, 1))] == [("bb4", None)]


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.booleans(), st.integers(0, 5))
def test_rollback_join_grows_with_depth(seed, n, shadow, d):
    cfg = CacheConfig(n, shadow)
    p = gen_program(FuzzSpec(max_vars=5, max_branches=2, seed=seed, loop_allowed=seed % 2 == 0))
    s0 = cd.top(cfg)
    for v in p.vars[:n]:
        s0 = cd.transfer(s0, cd.Known(v), cfg)
    for b in p.blocks:
        lo = rollback_join(s0, b, d, p, cfg).state
        hi = rollback_join(s0, b, d + 1, p, cfg).state
        assert leq(s0, lo)
        assert leq(lo, hi)

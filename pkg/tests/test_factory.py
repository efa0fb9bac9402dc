import pytest
from hypothesis import given, strategies as st

from corpus import CORPUS, corpus_flows, points
from oracles import cantor_walk
from veinlab import predicates as P
from veinlab.factory import (STAR, compose_tp, decode, encode, normalize_flow, pair, parse_branching,
                             question_from_spec, stage_branching, unpair, weak_totalize)
from veinlab.flow import BudgetExhausted, StagePoint, Undefined, eval_flow, true_path
from veinlab.formats import parse_flow_text, read_registry
from veinlab.vein import V01, V0w, V11, V1w, V21, VeinError, concat, normalize

FLOWS = corpus_flows()


def outcome(flow, x, n=6, budget=2000):
    try:
        return eval_flow(flow, x, n, budget)
    except Undefined:
        return "undefined"
    except BudgetExhausted:
        return "budget"


@pytest.fixture(scope="module")
def reg():
    return read_registry("samples/reg.toml")


# pairing --------------------------------------------------------------------------

def test_pairing_matches_the_diagonal_walk():
    for (a, b), n in cantor_walk(500).items():
        assert pair(a, b) == n
        assert unpair(n) == (a, b)


@given(st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=5))
def test_encode_decode_round_trip(xs):
    assert decode(encode(*xs), len(xs)) == tuple(xs)


def test_encode_nests_to_the_right():
    assert encode(1, 2, 3) == pair(1, pair(2, 3))
    with pytest.raises(ValueError):
        encode()


# registry pieces -------------------------------------------------------------------

def test_parse_branching():
    assert parse_branching("never")(0) is None
    assert parse_branching("2@5")(7) == (2, 5)
    b = parse_branching("2,3")
    assert b(0) == (2, 0) and b(1) == (3, 0) and b(9) == (3, 0)
    with pytest.raises(ValueError):
        parse_branching("0@1")


def test_question_from_spec():
    q = question_from_spec("atoms ends 1 | true", 2)
    assert q.atoms == ("ends 1", "true")
    with pytest.raises(ValueError):
        question_from_spec("atoms ends 2", 2)
    with pytest.raises(ValueError):
        question_from_spec("oracle 3", 1)


def test_registry_flow_shape(reg):
    v = concat(V21, V1w)
    f = reg.flow(encode(1, 0, 0, 0, 1), v)
    assert f.node(()).width == 3 and f.node(()).ready_at == 1
    assert f.node((0,)).rank == 1
    # leaves pick their function by the last outcome, cycling through the list
    assert f.leaf_fn((2, 7)).name == "lag 6" and f.leaf_fn((2, 4)).name == "lag 5"
    # out-of-range component indices give empty questions and nowhere-defined leaves
    g = reg.flow(encode(9, 9, 9, 9, 9), v)
    assert g.node(()).width == 0 and g.leaf_fn(()).nowhere


def test_stage_branching_waits_for_widths(reg):
    v = concat(V21, V1w)
    late = encode(1, 0, 0, 0, 0)
    assert list(stage_branching(reg, v, late, 0).nodes) == [()]
    frag = stage_branching(reg, v, late, 1, inf_limit=4)
    assert len(list(frag.nodes)) == 1 + 3 + 3 * 4
    assert len(frag.leaves) == 12
    assert all(len(p) == 2 for p in frag.leaves)


def test_stage_branching_announces_rank0_strings(reg):
    # "unary 1": string n converges at stage n
    for s in (0, 1, 3, 5):
        frag = stage_branching(reg, V0w, 0, s, eta_limit=10)
        assert sorted(frag.nodes) == [()] + [(n,) for n in range(s + 1)]


# weak totalization ----------------------------------------------------------------------

def test_totalizing_an_infinite_root_adds_a_cover():
    t = weak_totalize(FLOWS["ZERO_AT"])
    root = t.node(())
    assert root.rank == 2 and root.width == 2
    assert t.source((0,)) == STAR and t.leaf_fn((0,)).nowhere
    assert t.source((1, 3)) == (3,)
    # the original searches forever on 1^w; the totalized flow decides it lies nowhere
    ones = StagePoint("", "1")
    assert outcome(FLOWS["ZERO_AT"], ones) == "budget"
    assert outcome(t, ones) == "undefined"
    assert t.weakly_total


def test_doubled_node_layout():
    t = weak_totalize(FLOWS["DIR_THEN_CHOICE"])
    assert t.node(()).width == 4
    assert [t.source((k,)) for k in range(4)] == [STAR, (0,), STAR, (1,)]
    assert t.source((1, 4)) == (0, 4)


def test_totalizing_needs_room_for_the_complement():
    bad = parse_flow_text("""
name = "B"
[tree]
"<>" = "r1 fin 2"
"<*>" = "r1 inf"
"<*,*>" = "r0 leaf"
[questions]
"<>" = "atoms bit 0 0 | true"
"<*>" = "family zero_at"
[leaves]
"<*,*>" = "identity"
""").build()
    with pytest.raises(ValueError, match="strongly normal"):
        weak_totalize(bad).node(())


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_totalizing_keeps_the_function(name):
    f = FLOWS[name]
    t = weak_totalize(f)
    for x in points(17, 12):
        a, b = outcome(f, x), outcome(t, x)
        if a == "budget":
            continue
        assert a == b if isinstance(a, str) else (b != "undefined" and a.bits == b.bits)


# normalization of flows --------------------------------------------------------------------

@pytest.mark.parametrize("vein", [concat(V11, V11), concat(concat(V21, V11), V1w), concat(V01, V1w)],
                         ids=["merge", "merge-below-r2", "dispatch"])
def test_normalize_flow_keeps_the_function_on_its_domain(reg, vein):
    for e in (0, 7, 14, 35):
        f = reg.flow(e, vein)
        g = normalize_flow(f)
        assert g.vein == normalize(vein)
        for x in points(e, 10):
            a, b = outcome(f, x), outcome(g, x)
            if a in ("undefined", "budget"):
                continue
            assert b not in ("undefined", "budget")
            assert a.bits == b.bits


def test_normalize_flow_refuses_fin_over_inf_of_same_rank(reg):
    with pytest.raises(VeinError):
        normalize_flow(reg.flow(0, concat(V11, V1w)))


# composition -----------------------------------------------------------------------------

def test_compose_tp_reads_the_true_path():
    dir_ = FLOWS["DIR"]
    c = compose_tp(dir_, k=lambda prefix, path: "".join(str(path[0]) for _ in prefix))
    assert c(StagePoint("", "0"), 5, 500) == "11111"
    assert c(StagePoint("", "10"), 3, 500) == "000"


def test_compose_tp_through_a_map():
    dir_ = FLOWS["DIR"]
    flip = P.leaf_function("flip")
    c = compose_tp(dir_, h=flip, k=lambda prefix, path: str(path[0]))
    for x in points(5, 10):
        want = true_path(dir_, StagePoint(x.prefix.translate(str.maketrans("01", "10")),
                                          x.period.translate(str.maketrans("01", "10"))), 500).path
        assert c(x, 1, 500) == str(want[0])


def test_compose_tp_reports_unsettled_paths():
    c = compose_tp(FLOWS["ZERO_AT"])
    with pytest.raises(BudgetExhausted):
        c(StagePoint("", "1"), 3, 100)

import random

import pytest
from hypothesis import given, settings, strategies as st

from corpus import CORPUS, corpus_flows, points
from oracles import direct_path, naive_history
from veinlab import predicates as P
from veinlab.flow import (BudgetExhausted, StagePoint, Undefined, default_budget, eval_flow, initial_state,
                          liminf_path, priority_value, run_tp, settle_tilde, single_leaf_flow, tp, tp_step,
                          true_path)
from veinlab.semantics import decide_path, leftmost_leaf

FLOWS = corpus_flows()
DIR = FLOWS["DIR"]
bits = st.text(alphabet="01", max_size=48)


def zero_at_flow():
    return FLOWS["ZERO_AT"]


# points ----------------------------------------------------------------------------

def test_stage_point_parse_and_take():
    x = StagePoint.parse("01/10")
    assert x.take(7) == "0110101"
    assert x.eventually_periodic == ("01", "10")
    assert str(x) == "01/10"
    for bad in ("0101", "01/", "2/1"):
        with pytest.raises(ValueError):
            StagePoint.parse(bad)


def test_stage_point_from_callable():
    x = StagePoint(bit_at=lambda n: n % 3 == 0 and 1 or 0)
    assert x.take(7) == "1001001"
    assert x.eventually_periodic is None


# current path ------------------------------------------------------------------------

def test_dir_reads_its_timer_prefix():
    # at stage 4 the root was eligible 3 times, so it asks about "011", which ends in 1
    assert tp(DIR, "0110") == (0,)
    assert tp(DIR, "0100") == (1,)


def test_single_leaf_path_is_root():
    leaf = single_leaf_flow()
    for s in ("", "0", "0110"):
        assert tp(leaf, s) == ()


def test_zero_at_choice_on_110():
    # outcome n: x(n) = 0; the least surviving n on "110" is 2
    assert tp(zero_at_flow(), "110") == (2,)


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_engine_matches_naive_recomputation(name):
    flow = FLOWS[name]
    rng = random.Random(name)
    for _ in range(12):
        sigma = "".join(rng.choice("01") for _ in range(rng.randint(0, 60)))
        try:
            got = run_tp(flow, sigma).history
        except BudgetExhausted:
            continue
        assert got == naive_history(flow, sigma)


@given(bits)
@settings(max_examples=60, deadline=None)
def test_tp_step_agrees_with_a_fresh_run(sigma):
    flow = FLOWS["NESTED"]
    st_ = initial_state()
    for k in range(1, len(sigma) + 1):
        st_ = tp_step(flow, st_, sigma[:k])
    fresh = run_tp(flow, sigma, track_priors=True)
    assert st_.current == fresh.current
    assert st_.timers == fresh.timers
    assert st_.prior == fresh.prior


@given(bits)
@settings(max_examples=60, deadline=None)
def test_timers_are_monotone_and_count_eligibility(sigma):
    flow = FLOWS["DIR_THEN_CHOICE"]
    st_ = initial_state()
    seen: dict = {}
    prev: dict = {}
    for k in range(1, len(sigma) + 1):
        st_ = tp_step(flow, st_, sigma[:k])
        for node in st_.eligible:
            seen[node] = seen.get(node, 0) + 1
        timers = st_.timers
        assert all(timers.get(n, 0) >= v for n, v in prev.items())
        assert timers == seen
        prev = timers


@given(bits)
@settings(max_examples=40, deadline=None)
def test_runs_are_deterministic(sigma):
    flow = FLOWS["MIXED"]
    assert run_tp(flow, sigma).history == run_tp(flow, sigma).history


def test_tp_step_rejects_bad_extensions():
    st_ = tp_step(DIR, initial_state(), "0")
    with pytest.raises(ValueError):
        tp_step(DIR, st_, "011")
    with pytest.raises(ValueError):
        tp_step(DIR, st_, "10")


# priority values ----------------------------------------------------------------------

def test_priority_value_examples():
    sigma = "0101101"
    assert priority_value(DIR, (0,), sigma) == 0
    history = run_tp(DIR, sigma).history
    assert priority_value(DIR, (1,), sigma) == sum(1 for h in history[1:] if h == (0,))


@given(bits)
@settings(max_examples=40, deadline=None)
def test_priority_value_is_nondecreasing(sigma):
    values = [priority_value(FLOWS["NESTED"], (1, 0), sigma[:k]) for k in range(len(sigma) + 1)]
    assert values == sorted(values)


# true path and evaluation ----------------------------------------------------------------

def test_true_path_examples():
    tp0 = true_path(DIR, StagePoint("", "0"), 100)
    assert tp0.path == (1,) and tp0.certified and tp0.stabilized_at <= 10
    assert true_path(DIR, StagePoint("", "10"), 100).path == (0,)
    assert true_path(single_leaf_flow(), StagePoint("", "1"), 1) == true_path(single_leaf_flow(), StagePoint("", "0"), 1)
    assert true_path(single_leaf_flow(), StagePoint("", "1"), 1).stabilized_at == 1
    with pytest.raises(ValueError):
        true_path(DIR, StagePoint("", "1"), 0)


def test_liminf_certificate_needs_a_quiet_second_half():
    history = [()] + [(1,)] * 60 + [(0,)] + [(1,)] * 39
    got = liminf_path(history, 100)
    assert got.path == (0,) and not got.certified
    history = [()] + [(0,)] * 10 + [(1,)] * 90
    got = liminf_path(history, 100)
    assert got.path == (1,) and got.stabilized_at == 11


def test_eval_flow_examples():
    assert eval_flow(DIR, StagePoint("", "0"), 4, 100).bits == "1111"
    assert eval_flow(DIR, StagePoint("", "10"), 4, 200).bits == "0000"
    assert eval_flow(single_leaf_flow(), StagePoint("", "110"), 5, 10).bits == "11011"


def test_eval_flow_failures():
    with pytest.raises(Undefined):
        eval_flow(FLOWS["NEVER"], StagePoint("", "0"), 4, 50)
    with pytest.raises(Undefined):
        eval_flow(single_leaf_flow(P.NOWHERE), StagePoint("", "0"), 4, 50)
    with pytest.raises(BudgetExhausted):
        eval_flow(zero_at_flow(), StagePoint("", "1"), 4, 200)
    short = eval_flow(single_leaf_flow(P.leaf_function("lag 3")), StagePoint("", "1"), 8, 8)
    assert short.bits == "11111" and short.shortfall == 3


# settle_tilde ---------------------------------------------------------------------------

def test_settle_tilde_examples():
    assert settle_tilde(DIR, (), StagePoint("", "1"), 3, 100) == 3
    assert settle_tilde(DIR, (0,), StagePoint("", "0"), 1, 100) is None
    assert settle_tilde(DIR, (0,), StagePoint("", "0"), 0, 100) == 0


# semantics -------------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(CORPUS))
def test_semantic_decision_matches_direct_oracle(name):
    flow = FLOWS[name]
    for x in points(hash(name) % 1000, 15):
        try:
            got = decide_path(flow, x)
        except BudgetExhausted:
            got = None
        assert got == direct_path(flow, x)


def test_leftmost_leaf_needs_finite_tree():
    with pytest.raises(ValueError):
        leftmost_leaf(FLOWS["CHOICE"], StagePoint("", "0"))
    assert leftmost_leaf(DIR, StagePoint("", "0")) == (1,)


def test_default_budget_env(monkeypatch):
    monkeypatch.delenv("VEINLAB_BUDGET_DEFAULT", raising=False)
    assert default_budget(77) == 77
    monkeypatch.setenv("VEINLAB_BUDGET_DEFAULT", "1234")
    assert default_budget() == 1234
    monkeypatch.setenv("VEINLAB_BUDGET_DEFAULT", "lots")
    assert default_budget(5) == 5

import pytest

from scenarios import BY_NAME, s_points, stabilized_images, trace
from veinlab.construction import parse_tree_text
from veinlab.flow import BudgetExhausted, StagePoint
from veinlab.reductions import (ConstantTree, PointFiber, StageTree, Verdict, as_evaluator, check_cowadge,
                                check_weihrauch, leftmost_branch, pair_evaluator, pullback, summarize,
                                trivial_bundle)
from veinlab.verifier import build_verifier

S = parse_tree_text("%where ones_le 1\n")
XS = [StagePoint.parse(p) for p in ("/0", "1/0", "01/0", "0001/0")]


def verdicts(results):
    return [r.verdict for r in results]


# coWadge ----------------------------------------------------------------------------

def test_identity_reduces_a_problem_to_itself():
    got = check_cowadge(S, S, "identity", [(x, x) for x in XS], 16, 100)
    assert verdicts(got) == [Verdict.CONSISTENT] * len(XS)


def test_identity_reduces_T_to_S():
    tr = trace("sparse-v21")
    T = StageTree(tr, tr.stages)
    got = check_cowadge(T, S, "identity", [(x, x) for x in XS], 16, 200)
    assert summarize(got) == {"consistent": len(XS), "refuted": 0, "inconclusive": 0}


def test_a_bit_outside_the_tree_is_refuted():
    # flip sends 0^w to 1^w and 11 has two ones
    got = check_cowadge(S, S, "flip", [(XS[0], XS[0])], 16, 100)
    assert got[0].verdict is Verdict.REFUTED and got[0].at == 1
    assert str(got[0]) == "refuted(at bit 1)"


def test_running_out_of_budget_is_never_a_refutation():
    def slow(point, n, budget):
        raise BudgetExhausted("still thinking")
    got = check_cowadge(S, S, slow, [(x, x) for x in XS], 16, 100)
    assert verdicts(got) == [Verdict.INCONCLUSIVE] * len(XS)
    assert verdicts(check_cowadge(S, S, "flip", [(XS[0], XS[0])], 16, 0)) == [Verdict.INCONCLUSIVE]
    # too few bits is not wrong either
    short = check_cowadge(S, S, "lag 50", [(XS[0], XS[0])], 16, 40)
    assert verdicts(short) == [Verdict.INCONCLUSIVE]
    assert verdicts(check_cowadge(S, S, "nowhere", [(XS[0], XS[0])], 16, 100)) == [Verdict.INCONCLUSIVE]


def test_samples_outside_G_are_skipped():
    got = check_cowadge(S, S, "identity", [(XS[0], "11/0")], 8, 100)
    assert got[0].verdict is Verdict.INCONCLUSIVE and "not in G" in got[0].note


# Weihrauch ----------------------------------------------------------------------------

def test_identity_pair():
    got = check_weihrauch(PointFiber(), PointFiber(), "identity", "identity", XS, 8, 100)
    assert verdicts(got) == [Verdict.CONSISTENT] * len(XS)


def test_verifier_pipeline_solves_S_through_T():
    sc = BY_NAME["sparse-v21"]
    tr = trace(sc.name)
    vf = build_verifier(tr)
    T = StageTree(tr, tr.stages)
    samples = [(y, y) for _, _, y in stabilized_images(tr, sc)] + [(x, x) for x in s_points(sc)]
    got = check_weihrauch(S, T, "identity", vf, samples, 16, 2000)
    assert summarize(got)["consistent"] == len(samples)


def test_a_broken_forward_map_is_refuted():
    got = check_weihrauch(PointFiber(), PointFiber(), "flip", "identity", XS, 8, 100)
    assert verdicts(got) == [Verdict.REFUTED] * len(XS)
    assert all(r.at == 0 for r in got)


def test_pair_aware_backward_map():
    k = pair_evaluator(lambda x, y, n, budget: x.take(n))
    got = check_weihrauch(PointFiber(), ConstantTree(parse_tree_text("%full\n")), "flip", k, XS, 8, 100)
    assert verdicts(got) == [Verdict.CONSISTENT] * len(XS)


def test_leftmost_branch():
    assert leftmost_branch(S.__contains__, 5) == "00000"
    # only the cone above 0 is removed
    assert leftmost_branch(parse_tree_text("%avoid 0\n").__contains__, 3) == "100"
    assert leftmost_branch(parse_tree_text("<0,1>\n").__contains__, 3) is None


def test_evaluator_kinds():
    with pytest.raises(TypeError):
        as_evaluator(3)
    assert as_evaluator("flip")(XS[0], 4, 10) == "1111"


# bundles ------------------------------------------------------------------------------

def test_trivial_bundle_projects_and_has_a_section():
    b = trivial_bundle(S)
    x = XS[1]
    assert b.project(x, "0/0").take(8) == x.take(8)
    y = b.section(x, 10)
    assert y is not None and all(b.contains(x, y[:k]) for k in range(11))
    assert not b.contains(x, "11")


def test_pullback_along_the_identity_is_the_bundle():
    b = trivial_bundle(S)
    pb = pullback("identity", b)
    for x in XS:
        y = b.section(x, 8)
        assert pb.contains(x, (x, y), 8, 100) is True
    assert pb.contains(XS[0], (XS[1], "0/0"), 8, 100) is False


def test_pullback_along_a_constant_map():
    b = trivial_bundle(S)
    pb = pullback("const 0", b)
    zero = StagePoint("", "0")
    for x in XS:
        assert pb.fiber_over(x, 8, 100) == "00000000"
        assert pb.contains(x, (zero, "0/0"), 8, 100) is True
        assert pb.contains(x, (XS[1], "0/0"), 8, 100) is False


def test_pullback_mismatch_depends_on_precision():
    b = trivial_bundle(S)
    pb = pullback("identity", b)
    x, other = StagePoint("00001", "0"), StagePoint("", "0")
    # the two agree on four bits only
    assert pb.contains(x, (other, "0/0"), 4, 100) is True
    assert pb.contains(x, (other, "0/0"), 5, 100) is False


def test_pullback_budget_is_undecided():
    pb = pullback("lag 20", trivial_bundle(S))
    assert pb.contains(XS[0], (XS[0], "0/0"), 8, 10) is None

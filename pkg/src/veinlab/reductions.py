"""Finite-precision checkers for reductions between multifunctions.

A multifunction is anything with ``fiber(x) -> predicate on finite strings``
(the tree of prefixes of F(x)).  Evaluators are flows, leaf functions or plain
callables ``(point, n, budget) -> str``.  Verdicts are three-valued: running
out of budget, or getting too little output, is never a refutation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

from . import predicates as P
from .construction import TreeSpec, in_T, Trace
from .flow import BudgetExhausted, Flow, StagePoint, Undefined, eval_flow


class Verdict(enum.Enum):
    CONSISTENT = "consistent"
    REFUTED = "refuted"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SampleVerdict:
    verdict: Verdict
    at: int | None = None  # first offending bit for refutations
    note: str = ""

    def __str__(self):
        if self.verdict is Verdict.REFUTED:
            return f"refuted(at bit {self.at})"
        return self.verdict.value if not self.note else f"{self.verdict.value} ({self.note})"


# multifunctions --------------------------------------------------------------------

@dataclass
class ConstantTree:
    """x -> [T] for a fixed tree T."""

    tree: object  # anything supporting ``w in tree``

    def fiber(self, x: StagePoint) -> Callable:
        return self.tree.__contains__


@dataclass
class StageTree:
    """x -> [T_s]: the output tree of a construction at a fixed stage."""

    trace: Trace
    stage: int

    def fiber(self, x: StagePoint) -> Callable:
        return lambda w: in_T(self.trace, w, self.stage)


class PointFiber:
    """x -> {x}."""

    def fiber(self, x: StagePoint) -> Callable:
        return lambda w: x.take(len(w)) == w


def as_multifunction(obj):
    if hasattr(obj, "fiber"):
        return obj
    if isinstance(obj, TreeSpec):
        return ConstantTree(obj)
    raise TypeError(f"cannot use {type(obj).__name__} as a multifunction")


# evaluators ----------------------------------------------------------------------

def _leaf_eval(fn: P.LeafFunction):
    def run(point: StagePoint, n: int, budget: int) -> str:
        if fn.nowhere:
            raise Undefined(f"{fn.name} is nowhere defined")
        length = min(max(n, 1), budget)
        while True:
            out = fn.transform(point.take(length), length)
            if len(out) >= n:
                return out[:n]
            if length >= budget:
                raise BudgetExhausted(f"{fn.name} gave {len(out)} of {n} bits within {budget}")
            length = min(2 * length, budget)
    return run


def as_evaluator(obj) -> Callable:
    """Normalize a flow / leaf function / callable into ``(point, n, budget) -> str``."""
    if isinstance(obj, Flow):
        return lambda point, n, budget: eval_flow(obj, point, n, budget).bits
    if isinstance(obj, P.LeafFunction):
        return _leaf_eval(obj)
    if isinstance(obj, str):
        return _leaf_eval(P.leaf_function(obj))
    if callable(obj):
        return obj
    raise TypeError(f"cannot evaluate with {type(obj).__name__}")


def _run(ev: Callable, point: StagePoint, n: int, budget: int):
    """Output prefix, or a SampleVerdict explaining why there is none."""
    if budget <= 0:
        return SampleVerdict(Verdict.INCONCLUSIVE, note="no budget")
    try:
        return ev(point, n, budget)
    except BudgetExhausted as exc:
        return SampleVerdict(Verdict.INCONCLUSIVE, note=f"budget: {exc}")
    except Undefined as exc:
        # a partial answer is not wrong at any finite precision
        return SampleVerdict(Verdict.INCONCLUSIVE, note=f"undefined: {exc}")


def _judge(out: str, inside: Callable, precision: int) -> SampleVerdict:
    for k in range(len(out) + 1):
        if not inside(out[:k]):
            return SampleVerdict(Verdict.REFUTED, at=k - 1)
    if len(out) < precision:
        return SampleVerdict(Verdict.INCONCLUSIVE, note=f"only {len(out)} bits")
    return SampleVerdict(Verdict.CONSISTENT)


def _as_point(y) -> StagePoint:
    if isinstance(y, StagePoint):
        return y
    if isinstance(y, str):
        return StagePoint.parse(y) if "/" in y else StagePoint(y, "0")
    raise TypeError(f"not a point: {y!r}")


# checkers ------------------------------------------------------------------------

def check_cowadge(F, G, theta, samples, precision: int, budget: int) -> list:
    """Per sample (x, y) with y in G(x): does theta(y) stay inside F(x)?"""
    F, G = as_multifunction(F), as_multifunction(G)
    ev = as_evaluator(theta)
    out = []
    for x, y in samples:
        x, y = _as_point(x), _as_point(y)
        g = G.fiber(x)
        if not all(g(y.take(k)) for k in range(precision + 1)):
            out.append(SampleVerdict(Verdict.INCONCLUSIVE, note="sample not in G(x)"))
            continue
        got = _run(ev, y, precision, budget)
        out.append(got if isinstance(got, SampleVerdict) else _judge(got, F.fiber(x), precision))
    return out


def check_weihrauch(F, G, h, k, samples, precision: int, budget: int, solve: Callable | None = None) -> list:
    """Per sample x: y solves G at h(x), then k(x, y) must stay inside F(x).

    Samples are points x or pairs (x, y).  Without an explicit y, ``solve``
    picks one from the G-fiber at h(x) (default: leftmost branch).
    ``k`` sees the pair as ``(x, y)``; flows and leaf functions act on y.
    """
    F, G = as_multifunction(F), as_multifunction(G)
    hev = as_evaluator(h)
    kev = as_evaluator(k)
    pair_aware = callable(k) and not isinstance(k, (Flow, P.LeafFunction, str)) and getattr(k, "pair_aware", False)
    out = []
    for sample in samples:
        if isinstance(sample, tuple):
            x, y = _as_point(sample[0]), _as_point(sample[1])
        else:
            x, y = _as_point(sample), None
        hx = _run(hev, x, precision, budget)
        if isinstance(hx, SampleVerdict):
            out.append(hx)
            continue
        hpoint = StagePoint(hx, "0")
        g = G.fiber(hpoint)
        if y is None:
            found = (solve or leftmost_branch)(g, precision)
            if found is None:
                out.append(SampleVerdict(Verdict.INCONCLUSIVE, note="G has no solution at h(x)"))
                continue
            y = _as_point(found)
        elif not all(g(y.take(j)) for j in range(precision + 1)):
            out.append(SampleVerdict(Verdict.INCONCLUSIVE, note="sample not in G(h(x))"))
            continue
        if pair_aware:
            got = _run(lambda p, n, b: kev(x, p, n, b), y, precision, budget)
        else:
            got = _run(kev, y, precision, budget)
        out.append(got if isinstance(got, SampleVerdict) else _judge(got, F.fiber(x), precision))
    return out


def pair_evaluator(fn: Callable) -> Callable:
    """Mark ``fn(x, y, n, budget)`` as reading both components."""
    fn.pair_aware = True
    return fn


def leftmost_branch(inside: Callable, depth: int) -> str | None:
    """Leftmost string of the given length all of whose prefixes are inside."""
    if not inside(""):
        return None
    stack = [""]
    while stack:
        w = stack.pop()
        if len(w) == depth:
            return w
        for c in "10":
            if inside(w + c):
                stack.append(w + c)
    return None


def summarize(verdicts) -> dict:
    out = {v.value: 0 for v in Verdict}
    for v in verdicts:
        out[v.verdict.value] += 1
    return out


# bundles -------------------------------------------------------------------------

@dataclass
class Bundle:
    """A map from a total space of pairs (x, y) onto the x coordinate."""

    contains: Callable  # (x_prefix, y_prefix) -> bool
    project: Callable  # (x, y) -> point
    section: Callable | None = None  # (x, depth) -> y prefix or None


def trivial_bundle(F) -> Bundle:
    """The graph of F with the projection onto the first coordinate."""
    F = as_multifunction(F)

    def contains(x, w):
        return F.fiber(_as_point(x))(w)

    def section(x, depth):
        return leftmost_branch(F.fiber(_as_point(x)), depth)

    return Bundle(contains, lambda x, y: _as_point(x), section)


@dataclass
class Pullback:
    """Pairs (x, e) with h(x) = pi(e), checked on prefixes."""

    h: Callable
    bundle: Bundle

    def contains(self, x, e, precision: int, budget: int) -> bool | None:
        """True / False at this precision, None when h ran out of budget."""
        x = _as_point(x)
        ex, ey = _as_point(e[0]), _as_point(e[1])
        if not all(self.bundle.contains(ex, ey.take(k)) for k in range(precision + 1)):
            return False
        hx = _run(self.h, x, precision, budget)
        if isinstance(hx, SampleVerdict):
            return None
        return hx == self.bundle.project(ex, ey).take(precision)

    def fiber_over(self, x, precision: int, budget: int):
        """The base point of the fiber of the pulled-back bundle over x, to precision."""
        hx = _run(self.h, _as_point(x), precision, budget)
        return None if isinstance(hx, SampleVerdict) else hx


def pullback(h, bundle: Bundle) -> Pullback:
    return Pullback(as_evaluator(h), bundle)

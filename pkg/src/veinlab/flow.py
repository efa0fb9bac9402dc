"""Flows on labeled trees and their staged evaluation.

The current true path is computed stage by stage along a growing binary
string.  Rank-2 questions look at the prefix selected by the node's timer,
rank-1 questions must hold on every earlier prefix, rank-0 questions wait for a
finite string to be announced.  The limit behaviour (leftmost path visited
infinitely often) is recovered from a finite run together with a stabilization
certificate.
"""
from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from . import predicates as P
from .tree_core import strictly_left_of, format_path
from .vein import INF, LabeledTree, NodeInfo

DEFAULT_OUTCOME_BOUND = 64


def default_budget(fallback: int = 1000) -> int:
    raw = os.environ.get("VEINLAB_BUDGET_DEFAULT")
    if raw is None:
        return fallback
    try:
        return max(0, int(raw))
    except ValueError:
        return fallback


class BudgetExhausted(RuntimeError):
    """A bounded search ran out of room; the answer is unknown, not negative."""


# points ----------------------------------------------------------------------

class StagePoint:
    """A point of Cantor space read one bit at a time.

    Eventually periodic points keep their ``(prefix, period)`` witness; other
    points are given by a ``bit_at`` callable.
    """

    def __init__(self, prefix: str = "", period: str = "", bit_at: Callable | None = None):
        if bit_at is None and not period:
            raise ValueError("an eventually periodic point needs a nonempty period")
        self.prefix = prefix
        self.period = period
        self._bit_at = bit_at
        self._cache = ""

    @classmethod
    def parse(cls, text: str) -> "StagePoint":
        pre, sep, per = text.strip().partition("/")
        if not sep:
            raise ValueError(f"point must look like prefix/period, got {text!r}")
        if not re.fullmatch("[01]*", pre) or not re.fullmatch("[01]+", per):
            raise ValueError(f"bad point {text!r}")
        return cls(pre, per)

    @property
    def eventually_periodic(self) -> tuple | None:
        return (self.prefix, self.period) if self._bit_at is None else None

    def bit_at(self, n: int) -> str:
        if self._bit_at is not None:
            return str(self._bit_at(n))
        if n < len(self.prefix):
            return self.prefix[n]
        return self.period[(n - len(self.prefix)) % len(self.period)]

    def take(self, n: int) -> str:
        if len(self._cache) < n:
            if self._bit_at is None:
                reps = (n - len(self.prefix)) // len(self.period) + 2
                self._cache = (self.prefix + self.period * reps)[: max(n, 2 * len(self._cache))]
            else:
                self._cache += "".join(self.bit_at(k) for k in range(len(self._cache), n))
        return self._cache[:n]

    def __str__(self) -> str:
        if self._bit_at is None:
            return f"{self.prefix}/{self.period}"
        return "<point>"

    def __repr__(self) -> str:
        return f"StagePoint({self})"


ZEROS = StagePoint("", "0")


# questions ---------------------------------------------------------------------

class Question:

    def scanner(self, n: int):
        raise NotImplementedError

    def dfa(self, n: int) -> P.Dfa:
        raise NotImplementedError(f"{type(self).__name__} has no automaton")

    def holds(self, n: int, sigma: str, oracle_prefix: str = "") -> bool:
        sc = self.scanner(n)
        for c in sigma:
            sc.feed(c)
        return sc.ok


@dataclass
class AtomQuestion(Question):
    """A finite list of atoms, one per outcome."""

    rank: int
    atoms: tuple

    def dfa(self, n):
        if n >= len(self.atoms):
            return P.atom_dfa("false")
        return P.atom_dfa(self.atoms[n])

    def scanner(self, n):
        return P.DfaScanner(self.dfa(n))

    def describe(self):
        return list(self.atoms)


@dataclass
class FamilyQuestion(Question):
    """An indexed rank-1 family for infinitely branching nodes."""

    family: str
    rank = 1

    def __post_init__(self):
        if self.family not in P.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        self._cache = {}

    def dfa(self, n):
        d = self._cache.get(n)
        if d is None:
            d = self._cache[n] = P.FAMILIES[self.family](n)
        return d

    def scanner(self, n):
        return P.DfaScanner(self.dfa(n))

    def describe(self):
        return self.family


@dataclass
class EtaQuestion(Question):
    """Rank-0 question: outcome n is the cylinder of an announced string."""

    etas: P.EtaFamily
    rank: int = 0

    def eta(self, n: int, stage: int) -> str | None:
        return self.etas.at(n, stage)

    def converge(self, n: int):
        return self.etas.converge(n)

    def holds(self, n, sigma, oracle_prefix=""):
        e = self.etas.at(n, len(sigma))
        return e is not None and sigma.startswith(e)

    def describe(self):
        return self.etas.name


class ScannerQuestion(Question):
    """A question given directly by a scanner factory (no automaton available)."""

    def __init__(self, rank: int, factory: Callable, label: str = "custom"):
        self.rank = rank
        self.factory = factory
        self.label = label

    def scanner(self, n):
        return self.factory(n)

    def describe(self):
        return self.label


class SelectQuestion(Question):
    """A question that picks its outcome directly from the input read so far.

    ``select(run_node, bits, s)`` returns the least outcome at stage s (or
    None); per-run memory may be kept in ``run_node.eta`` as long as it has a
    ``clone()`` method.
    """

    rank = 1

    def select(self, run_node, bits: str, s: int):
        raise NotImplementedError


# flows -------------------------------------------------------------------------

@dataclass
class FlowNode:
    rank: int
    width: int | float
    ready_at: int | None = 0  # stage at which the width is known; None = never
    question: Question | None = None
    leaf: P.LeafFunction | None = None


class Flow:
    """A flow: a labeled tree with questions on inner nodes and leaf functions.

    ``resolve(path)`` returns the FlowNode at a path inside the tree.
    """

    def __init__(self, resolve: Callable, oracle: StagePoint = ZEROS,
                 outcome_bound: int = DEFAULT_OUTCOME_BOUND, name: str = "",
                 vein=None, weakly_total: bool = False):
        self._resolve = resolve
        self._nodes: dict = {}
        self.oracle = oracle
        self.outcome_bound = outcome_bound
        self.name = name
        self.vein = vein
        self.weakly_total = weakly_total

    def node(self, path) -> FlowNode:
        nd = self._nodes.get(path)
        if nd is None:
            nd = self._nodes[path] = self._resolve(tuple(path))
        return nd

    @property
    def tree(self) -> LabeledTree:
        return LabeledTree(lambda p: NodeInfo(self.node(p).rank, self.node(p).width), name=self.name)

    def contains(self, path) -> bool:
        for k in range(len(path)):
            if path[k] >= self.node(path[:k]).width:
                return False
        return True

    def is_leaf(self, path) -> bool:
        return self.node(path).width == 0

    def leaf_fn(self, path) -> P.LeafFunction:
        nd = self.node(path)
        return nd.leaf if nd.leaf is not None else P.NOWHERE

    def leaves_below(self, path) -> list:
        """All leaves extending ``path``; the subtree must be finite."""
        out, stack = [], [tuple(path)]
        while stack:
            p = stack.pop()
            nd = self.node(p)
            if nd.width == INF:
                raise ValueError(f"infinitely many leaves below {format_path(path)}")
            if nd.width == 0:
                out.append(p)
            else:
                stack.extend(p + (k,) for k in range(int(nd.width) - 1, -1, -1))
        return sorted(out)

    def is_finite_below(self, path) -> bool:
        stack = [tuple(path)]
        while stack:
            p = stack.pop()
            w = self.node(p).width
            if w == INF:
                return False
            stack.extend(p + (k,) for k in range(int(w)))
        return True

    def almost_terminal(self, path) -> bool:
        """Shallowest node on its branch with only finitely many extensions."""
        path = tuple(path)
        if not self.is_finite_below(path):
            return False
        return not path or not self.is_finite_below(path[:-1])

    def almost_terminal_above(self, path) -> tuple | None:
        path = tuple(path)
        for k in range(len(path) + 1):
            if self.is_finite_below(path[:k]):
                return path[:k]
        return None


def tree_flow(tree: LabeledTree, question_at: Callable, leaf_at: Callable, **kw) -> Flow:
    """Assemble a flow from a labeled tree and per-node lookups."""
    def resolve(path):
        info = tree.info(path)
        if info.width == 0:
            return FlowNode(info.rank, 0, 0, None, leaf_at(path))
        return FlowNode(info.rank, info.width, 0, question_at(path), None)
    return Flow(resolve, **kw)


def single_leaf_flow(leaf: P.LeafFunction = P.IDENTITY, name: str = "leaf") -> Flow:
    return Flow(lambda p: FlowNode(0, 0, 0, None, leaf), name=name)


# staged evaluation ---------------------------------------------------------------

class _Tracker:
    """Scanner position for one (node, outcome) pair along the current input."""

    __slots__ = ("delta", "accept", "state", "sc", "pos", "ok", "failed")

    def __init__(self, q: Question, n: int):
        self.pos = 0
        try:
            dfa = q.dfa(n)
        except NotImplementedError:
            dfa = None
        if dfa is not None:
            self.delta, self.accept, self.state, self.sc = dfa.delta, dfa.accept, dfa.start, None
            self.ok = dfa.accept[dfa.start]
        else:
            self.delta = self.accept = self.state = None
            self.sc = q.scanner(n)
            self.ok = self.sc.ok
        self.failed = not self.ok

    def clone(self):
        c = _Tracker.__new__(_Tracker)
        c.delta, c.accept, c.state, c.pos, c.ok, c.failed = (
            self.delta, self.accept, self.state, self.pos, self.ok, self.failed)
        c.sc = self.sc.clone() if self.sc is not None else None
        return c

    def advance(self, vals, bits, target: int, stop_on_fail: bool) -> None:
        pos = self.pos
        if self.sc is None:
            d, acc, q = self.delta, self.accept, self.state
            if stop_on_fail:
                while pos < target:
                    q = d[q][vals[pos]]
                    pos += 1
                    if not acc[q]:
                        self.failed = True
                        break
            else:
                while pos < target:
                    q = d[q][vals[pos]]
                    pos += 1
            self.state = q
            self.ok = acc[q]
        else:
            sc = self.sc
            while pos < target:
                sc.feed(bits[pos])
                pos += 1
                if stop_on_fail and not sc.ok:
                    self.failed = True
                    break
            self.ok = sc.ok
        self.pos = pos


class _EtaTracker:
    """Least announced outcome whose string the input extends.

    Once a string is announced and matched it stays matched, and once the
    input is long enough to refute it it stays refuted, so only undecided
    outcomes below the current best are revisited.
    """

    __slots__ = ("pending", "best", "next_index")

    def __init__(self):
        self.pending = []
        self.best = None
        self.next_index = 0

    def clone(self):
        c = _EtaTracker()
        c.pending, c.best, c.next_index = list(self.pending), self.best, self.next_index
        return c

    def query(self, q: EtaQuestion, width, bits: str, s: int):
        limit = s if width == INF else min(s, int(width) - 1)
        while self.next_index <= limit:
            if self.best is None or self.next_index < self.best:
                self.pending.append(self.next_index)
            self.next_index += 1
        if not self.pending:
            return self.best
        keep = []
        for i in self.pending:
            if self.best is not None and i >= self.best:
                continue
            c = q.converge(i)
            if c is None:
                continue
            if c > s:
                keep.append(i)
                continue
            e = q.etas.string(i)
            if len(e) <= s:
                if bits.startswith(e) and (self.best is None or i < self.best):
                    self.best = i
            elif bits.startswith(e[:s]):
                keep.append(i)
        self.pending = keep
        return self.best


class _RunNode:
    """Per-run mirror of a flow node: its timer and its scanners."""

    __slots__ = ("path", "nd", "timer", "trackers", "low", "eta", "kids", "kind", "limit")

    def __init__(self, path, nd, bound: int = DEFAULT_OUTCOME_BOUND):
        self.path = path
        self.nd = nd
        self.timer = 0
        self.trackers = []
        self.low = 0
        self.eta = None
        self.kids = {}
        width = nd.width
        self.limit = 0 if width == 0 else (bound if width == INF else int(width))
        if width == 0:
            self.kind = _TERMINAL
        elif isinstance(nd.question, SelectQuestion):
            self.kind = _SELECT
        else:
            self.kind = {2: _RANK2, 1: _RANK1}.get(nd.rank, _RANK0)

    def clone(self, parent_map=None):
        c = _RunNode.__new__(_RunNode)
        c.path, c.nd, c.kind, c.limit = self.path, self.nd, self.kind, self.limit
        c.timer, c.low = self.timer, self.low
        c.trackers = [t.clone() for t in self.trackers]
        c.eta = self.eta.clone() if self.eta is not None else None
        c.kids = {k: v.clone() for k, v in self.kids.items()}
        return c


# node kinds, used as literals in _advance
_TERMINAL, _SELECT, _RANK2, _RANK1, _RANK0 = 0, 1, 2, 3, 4


class TpState:
    """Timers, priority values and current path after reading a prefix.

    ``bits`` holds the input read so far (or any longer extension of it).
    The per-node scanner state lives in a mirror of the explored flow tree.
    """

    def __init__(self, track_priors: bool = True, keep_history: bool = True):
        self.stage = 0
        self.current: tuple = ()
        self.prior: dict = {(): 0} if track_priors else {}
        self.history: list | None = [()] if keep_history else None
        self.bits = ""
        self.vals: list = []
        self.track_priors = track_priors
        self.root: _RunNode | None = None

    def copy(self) -> "TpState":
        c = TpState.__new__(TpState)
        c.stage, c.current, c.bits, c.vals = self.stage, self.current, self.bits, list(self.vals)
        c.prior = dict(self.prior)
        c.history = list(self.history) if self.history is not None else None
        c.track_priors = self.track_priors
        c.root = self.root.clone() if self.root is not None else None
        return c

    def set_bits(self, bits: str) -> None:
        if len(bits) > len(self.vals) or not bits.startswith(self.bits[: len(self.vals)]):
            self.vals = [c == "1" for c in bits]
        self.bits = bits

    @property
    def timers(self) -> dict:
        out = {}
        stack = [self.root] if self.root is not None else []
        while stack:
            rn = stack.pop()
            if rn.timer:
                out[rn.path] = rn.timer
            stack.extend(rn.kids.values())
        return out

    @property
    def eligible(self) -> list:
        return [self.current[:k] for k in range(len(self.current) + 1)]


def _advance(flow: Flow, st: TpState, s: int) -> None:
    """Compute the current path at stage s and advance the eligible timers."""
    bound = flow.outcome_bound
    rn = st.root
    if rn is None:
        rn = st.root = _RunNode((), flow.node(()), bound)
    bits, vals = st.bits, st.vals
    try:
        while True:
            kind = rn.kind
            if kind == 0:  # terminal
                break
            nd = rn.nd
            ready = nd.ready_at
            if ready is None or ready > s:
                break
            limit = rn.limit
            choice = None
            if kind == 2:
                t = rn.timer
                trs = rn.trackers
                ntr = len(trs)
                for i in range(limit):
                    if i < ntr:
                        tr = trs[i]
                    else:
                        tr = _Tracker(nd.question, i)
                        trs.append(tr)
                        ntr += 1
                    pos = tr.pos
                    if pos < t:
                        if pos == t - 1 and tr.sc is None:
                            # one new bit: step the automaton in place
                            q = tr.delta[tr.state][vals[pos]]
                            tr.state = q
                            tr.pos = t
                            tr.ok = tr.accept[q]
                        else:
                            tr.advance(vals, bits, t, False)
                    if tr.ok:
                        choice = i
                        break
            elif kind == 3:
                trs = rn.trackers
                i = rn.low
                target = s - 1
                while i < limit:
                    if i < len(trs):
                        tr = trs[i]
                    else:
                        tr = _Tracker(nd.question, i)
                        trs.append(tr)
                    if not tr.failed:
                        pos = tr.pos
                        if pos < target:
                            if pos == target - 1 and tr.sc is None:
                                q = tr.delta[tr.state][vals[pos]]
                                tr.state = q
                                tr.pos = target
                                ok = tr.accept[q]
                                tr.ok = ok
                                if not ok:
                                    tr.failed = True
                            else:
                                tr.advance(vals, bits, target, True)
                    if tr.failed:
                        i += 1
                        rn.low = i
                        continue
                    choice = i
                    break
            elif kind == 4:
                if rn.eta is None:
                    rn.eta = _EtaTracker()
                choice = rn.eta.query(nd.question, nd.width, bits, s)
                if choice is None:
                    break
            else:
                # custom questions answer for themselves, without the outcome bound
                choice = nd.question.select(rn, bits, s)
            if choice is None:
                if nd.width == INF:
                    raise BudgetExhausted(
                        f"no outcome below {bound} at {format_path(rn.path)} (stage {s})")
                break
            rn.timer += 1
            kid = rn.kids.get(choice)
            if kid is None:
                kp = rn.path + (choice,)
                kid = rn.kids[choice] = _RunNode(kp, flow.node(kp), bound)
            rn = kid
    except BudgetExhausted:
        st.stage = s
        raise
    rn.timer += 1
    tp = rn.path
    st.stage = s
    st.current = tp
    if st.history is not None:
        st.history.append(tp)
    if st.track_priors:
        prior = st.prior
        for node in prior:
            prior[node] += _strict_left_count(tp, node)
        for k in range(len(tp) + 1):
            p = tp[:k]
            if p not in prior:
                prior[p] = (sum(_strict_left_count(h, p) for h in st.history[1:])
                            if st.history is not None else 0)


def _strict_left_count(tp: tuple, xi: tuple) -> int:
    """Number of prefixes of tp strictly left of xi."""
    for k in range(min(len(tp), len(xi))):
        if tp[k] != xi[k]:
            return len(tp) - k if tp[k] < xi[k] else 0
    return 0


def initial_state(track_priors: bool = True, keep_history: bool = True) -> TpState:
    return TpState(track_priors, keep_history)


def tp_step(flow: Flow, state: TpState, sigma: str) -> TpState:
    """One stage: read ``sigma`` (one bit longer than before) and return the new state."""
    if len(sigma) != state.stage + 1:
        raise ValueError(f"expected a string of length {state.stage + 1}, got {len(sigma)}")
    if not sigma.startswith(state.bits[: state.stage]):
        raise ValueError("sigma does not extend the previously read string")
    new = state.copy()
    new.set_bits(sigma)
    _advance(flow, new, len(sigma))
    return new


def tp(flow: Flow, sigma: str) -> tuple:
    """The current true path at ``sigma`` computed from scratch."""
    return run_tp(flow, sigma, keep_history=False, track_priors=False).current


def run_tp(flow: Flow, bits: str, stages: int | None = None, *, keep_history: bool = True,
           track_priors: bool = False, state: TpState | None = None) -> TpState:
    """Run stages ``state.stage+1 .. stages`` along ``bits`` in place."""
    st = state if state is not None else initial_state(track_priors, keep_history)
    if stages is None:
        stages = len(bits)
    if len(bits) < stages:
        raise ValueError("not enough input bits for the requested stages")
    st.set_bits(bits)
    for s in range(st.stage + 1, stages + 1):
        _advance(flow, st, s)
    return st


def priority_value(flow: Flow, xi, sigma: str) -> int:
    xi = tuple(xi)
    st = run_tp(flow, sigma, keep_history=True)
    return sum(_strict_left_count(h, xi) for h in st.history[1:])


@dataclass(frozen=True)
class TruePath:
    path: tuple
    stabilized_at: int | None  # None: no certificate within the budget

    @property
    def certified(self) -> bool:
        return self.stabilized_at is not None


def liminf_path(history: list, stages: int) -> TruePath:
    """Leftmost path visited infinitely often, judged on the second half of a run.

    ``history[s]`` is the current path at stage s.  The answer is certified
    when nothing strictly left of it occurs in the second half and it keeps
    recurring in the last quarter.
    """
    tail_start = stages // 2 + 1
    tail = Counter(history[tail_start: stages + 1])
    node: tuple = ()
    while True:
        d = len(node)
        best = None
        for h in tail:
            if len(h) > d and h[:d] == node:
                c = h[d]
                if best is None or c < best:
                    best = c
        if best is None:
            break
        node = node + (best,)
    d = len(node)
    left = {}
    last_left = 0
    for s in range(stages, 0, -1):
        h = history[s]
        v = left.get(h)
        if v is None:
            v = left[h] = _strict_left_count(h, node) > 0
        if v:
            last_left = s
            break
    quarter = 3 * stages // 4 + 1
    hits_tail = sum(n for h, n in tail.items() if h[:d] == node and len(h) >= d)
    hits_late = sum(1 for h in history[quarter: stages + 1] if h[:d] == node and len(h) >= d)
    certified = last_left <= stages // 2 and hits_tail >= 2 and hits_late >= 1
    return TruePath(node, last_left + 1 if certified else None)


def true_path(flow: Flow, x: StagePoint, stages: int) -> TruePath:
    if stages < 1:
        raise ValueError("stages must be at least 1")
    st = run_tp(flow, x.take(stages), stages, keep_history=True, track_priors=False)
    if stages == 1:
        # a single stage can only certify a path that nothing precedes
        return TruePath(st.current, 1 if not st.current or flow.is_leaf(st.current) else None)
    return liminf_path(st.history, stages)


class Undefined(Exception):
    """The flow produces no output here (true path not a leaf, or a nowhere-defined leaf)."""


@dataclass(frozen=True)
class Evaluation:
    bits: str
    path: tuple
    shortfall: int  # requested bits that were not produced


def eval_flow(flow: Flow, x: StagePoint, out_bits: int, stages: int) -> Evaluation:
    tpath = true_path(flow, x, stages)
    if not tpath.certified:
        raise BudgetExhausted(f"true path not stabilized within {stages} stages")
    path = tpath.path
    if not flow.is_leaf(path):
        raise Undefined(f"true path {format_path(path)} is not a leaf")
    fn = flow.leaf_fn(path)
    if fn.nowhere:
        raise Undefined(f"leaf {format_path(path)} is nowhere defined")
    n = out_bits
    length = min(max(n, 1), stages)
    while True:
        out = fn.transform(x.take(length), length)
        if len(out) >= n or length >= stages:
            break
        length = min(2 * length, stages)
    out = out[:n]
    return Evaluation(out, path, n - len(out))


def settle_tilde(flow: Flow, xi, x: StagePoint, n: int, budget: int) -> int | None:
    """Stage of the n-th eligibility of ``xi`` along x, or None on timeout."""
    if n == 0:
        return 0
    xi = tuple(xi)
    st = initial_state(track_priors=False, keep_history=False)
    st.set_bits(x.take(budget))
    seen = 0
    for s in range(1, budget + 1):
        _advance(flow, st, s)
        if st.current[: len(xi)] == xi:
            seen += 1
            if seen == n:
                return s
    return None

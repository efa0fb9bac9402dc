"""Constructors on flows: a registry enumeration of partial flows, their stage
approximations, weak-totalization, translation along vein normalization and
composition with the true-path function.

Complement questions built here are Pi^0_2 (or Pi^0_1) sets written in
"counter" form: a set is the set of points along which a nondecreasing counter
is unbounded, and the rank-2 predicate is "the least counter just went up".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from . import predicates as P
from .flow import (DEFAULT_OUTCOME_BOUND, AtomQuestion, EtaQuestion, FamilyQuestion, Flow,
                   FlowNode, Question, ScannerQuestion, StagePoint, ZEROS, true_path)
from .tree_core import FiniteTree, format_path
from .vein import INF, Mark, Vein, VeinError, increment_fin, normalize


# pairing ---------------------------------------------------------------------

def pair(a: int, b: int) -> int:
    return (a + b) * (a + b + 1) // 2 + b


def unpair(c: int) -> tuple:
    w = (math.isqrt(8 * c + 1) - 1) // 2
    b = c - w * (w + 1) // 2
    return w - b, b


def encode(*xs: int) -> int:
    """Right-nested pairing: encode(a, b, c) = pair(a, pair(b, c))."""
    if not xs:
        raise ValueError("nothing to encode")
    out = xs[-1]
    for x in reversed(xs[:-1]):
        out = pair(x, out)
    return out


def decode(c: int, n: int) -> tuple:
    out = []
    for _ in range(n - 1):
        a, c = unpair(c)
        out.append(a)
    out.append(c)
    return tuple(out)


# registry ----------------------------------------------------------------------

def parse_branching(text: str) -> Callable:
    """``never``; ``w@c`` (every finite node gets width w at stage c);
    ``w1,w2,...@c`` (the k-th finitely branching level gets w_k)."""
    text = text.strip()
    if text == "never":
        return lambda k: None
    widths, _, stage = text.partition("@")
    ws = [int(w) for w in widths.split(",")]
    c = int(stage) if stage else 0
    if any(w < 1 for w in ws):
        raise ValueError(f"branching widths must be positive: {text!r}")
    return lambda k: (ws[min(k, len(ws) - 1)], c)


def question_from_spec(spec: str, rank: int) -> Question:
    """``family NAME`` or ``atoms A | B | ...`` (one atom per outcome)."""
    head, _, rest = spec.strip().partition(" ")
    if head == "family":
        return FamilyQuestion(rest.strip())
    if head == "atoms":
        atoms = tuple(a.strip() for a in rest.split("|"))
        for a in atoms:
            P.atom_dfa(a)
        return AtomQuestion(rank, atoms)
    raise ValueError(f"unknown question spec {spec!r}")


@dataclass
class FlowRegistry:
    """Five component lists; flow index e decodes into one index per list."""

    branchings: list = field(default_factory=list)
    rank2: list = field(default_factory=list)
    rank1: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    leaves: list = field(default_factory=list)  # each entry: list of leaf texts
    machines: list = field(default_factory=list)  # plain stream machines for U indexing
    oracle: StagePoint = ZEROS
    join_oracle: StagePoint | None = None  # d in x (+) d when indexing U; None = no join
    outcome_bound: int = DEFAULT_OUTCOME_BOUND

    def components(self, e: int) -> tuple:
        return decode(e, 5)

    def _get(self, items, k):
        return items[k] if 0 <= k < len(items) else None

    def machine(self, k: int) -> P.LeafFunction:
        text = self._get(self.machines, k)
        return P.leaf_function(text) if text is not None else P.NOWHERE

    def flow(self, e: int, vein: Vein) -> Flow:
        return self.flow_from(self.components(e), vein, name=f"e{e}")

    def flow_from(self, comps: tuple, vein: Vein, name: str = "") -> Flow:
        e0, e1, e2, e3, e4 = comps
        btext = self._get(self.branchings, e0)
        branch = parse_branching(btext) if btext is not None else (lambda k: None)
        p_spec = self._get(self.rank2, e1)
        q_spec = self._get(self.rank1, e2)
        eta_text = self._get(self.etas, e3)
        leaf_texts = self._get(self.leaves, e4)
        p_q = question_from_spec(p_spec, 2) if p_spec else AtomQuestion(2, ("false",))
        q_q = question_from_spec(q_spec, 1) if q_spec else AtomQuestion(1, ("false",))
        etas = P.eta_family(eta_text) if eta_text else P.EtaFamily("never", lambda n: "", lambda n: None)
        leaf_fns = [P.leaf_function(t) for t in leaf_texts] if leaf_texts else [P.NOWHERE]
        fin_order = {}
        for k, l in enumerate(vein.levels):
            if l.mark is Mark.FIN:
                fin_order[k] = len(fin_order)

        def resolve(path):
            k = len(path)
            l = vein.levels[k]
            if l.mark is Mark.LEAF:
                return FlowNode(l.rank, 0, 0, None, leaf_fns[(path[-1] if path else 0) % len(leaf_fns)])
            if l.rank == 0:
                q = EtaQuestion(etas)
            elif l.rank == 2:
                q = p_q
            else:
                q = q_q
            if l.mark is Mark.INF:
                return FlowNode(l.rank, INF, 0, q)
            got = branch(fin_order[k])
            if got is None:
                # width unknown forever: the node stays terminal, with nothing to output
                return FlowNode(l.rank, 0, 0, None, P.NOWHERE)
            w, c = got
            return FlowNode(l.rank, w, c, q)

        return Flow(resolve, oracle=self.oracle, outcome_bound=self.outcome_bound,
                    name=name, vein=vein)


@dataclass(frozen=True)
class Fragment:
    """Stage-s approximation of a branching: its nodes and the nodes marked as leaves."""

    nodes: FiniteTree
    leaves: frozenset
    source: dict


def stage_branching(reg: FlowRegistry, vein: Vein, e: int, s: int, inf_limit: int = 4,
                    eta_limit: int | None = None) -> Fragment:
    """Nodes present at stage s: finite splits only once their width has
    converged, rank-0 infinite splits only for announced strings, rank>0
    infinite splits always (cut at ``inf_limit`` children)."""
    flow = reg.flow(e, vein)
    eta_limit = reg.outcome_bound if eta_limit is None else eta_limit
    nodes, leaves, source = [], set(), {}
    stack = [()]
    while stack:
        p = stack.pop()
        nodes.append(p)
        source[p] = vein.node(len(p))
        nd = flow.node(p)
        l = vein.levels[len(p)]
        if nd.width == 0:
            leaves.add(p)
            continue
        if l.mark is Mark.FIN:
            if nd.ready_at is None or nd.ready_at > s:
                continue
            kids = range(int(nd.width))
        elif l.rank == 0:
            kids = [n for n in range(eta_limit)
                    if nd.question.converge(n) is not None and nd.question.converge(n) <= s]
        else:
            kids = range(inf_limit)
        stack.extend(p + (n,) for n in kids)
    return Fragment(FiniteTree(tuple(nodes)), frozenset(leaves), source)


# counter scanners ----------------------------------------------------------------

class _Counted:
    """Rank-2 set as a counter: number of accepted prefixes so far."""

    __slots__ = ("sc", "count")

    def __init__(self, sc, count=0):
        self.sc, self.count = sc, count

    def feed(self, c):
        self.sc.feed(c)
        if self.sc.ok:
            self.count += 1

    def clone(self):
        return _Counted(self.sc.clone(), self.count)


class _Passing:
    """Rank-1 set as a counter: number of bits read while every prefix passed."""

    __slots__ = ("sc", "count", "alive")

    def __init__(self, sc, count=0, alive=None):
        self.sc, self.count = sc, count
        self.alive = sc.ok if alive is None else alive

    def feed(self, c):
        self.sc.feed(c)
        if self.alive and self.sc.ok:
            self.count += 1
        else:
            self.alive = False

    def clone(self):
        return _Passing(self.sc.clone(), self.count, self.alive)


class _Cylinder:
    """Prefix compatibility with one string (a clopen set as a closed scanner)."""

    __slots__ = ("word", "pos", "ok")

    def __init__(self, word: str | None, pos=0, ok=None):
        self.word, self.pos = word, pos
        self.ok = (word is not None) if ok is None else ok

    def feed(self, c):
        if self.ok and self.pos < len(self.word) and self.word[self.pos] != c:
            self.ok = False
        self.pos += 1

    def clone(self):
        return _Cylinder(self.word, self.pos, self.ok)


class _AvoidFamily:
    """Points lying in no set of a rank-1 family, as a counter: the least index
    not yet refuted.  The point avoids every set iff the counter is unbounded."""

    __slots__ = ("question", "bound", "bits", "k", "sc", "extra")

    def __init__(self, question: Question, bound: int):
        self.question, self.bound = question, bound
        self.bits: list = []
        self.k = 0
        self.extra = 0
        self.sc = question.scanner(0)
        self._settle()

    def _settle(self):
        while not self.sc.ok and self.k < self.bound:
            self.k += 1
            self.sc = self.question.scanner(self.k)
            for c in self.bits:
                self.sc.feed(c)
                if not self.sc.ok:
                    break

    @property
    def count(self):
        # past the outcome bound every set counts as refuted, so keep counting
        return self.k + (self.extra if self.k >= self.bound else 0)

    def feed(self, c):
        self.bits.append(c)
        if self.k >= self.bound:
            self.extra += 1
            return
        if self.sc.ok:
            self.sc.feed(c)
        self._settle()

    def clone(self):
        o = _AvoidFamily.__new__(_AvoidFamily)
        o.question, o.bound, o.bits, o.k, o.sc, o.extra = (
            self.question, self.bound, list(self.bits), self.k, self.sc.clone(), self.extra)
        return o


class _AvoidCylinders:
    """Points extending no announced string of a rank-0 family (closed)."""

    __slots__ = ("etas", "pending", "bits", "ok", "count")

    def __init__(self, etas: P.EtaFamily, bound: int):
        self.etas = etas
        self.pending = [m for m in range(bound) if etas.converge(m) is not None]
        self.bits = ""
        self.ok = True
        self.count = 0
        self._check()

    def _check(self):
        n = len(self.bits)
        keep = []
        for m in self.pending:
            if self.etas.converge(m) > n:
                keep.append(m)
                continue
            w = self.etas.string(m)
            if len(w) <= n:
                if self.bits.startswith(w):
                    self.ok = False
            elif w.startswith(self.bits):
                keep.append(m)
        self.pending = keep

    def feed(self, c):
        if not self.ok:
            return
        self.bits += c
        self._check()
        if self.ok:
            self.count += 1

    def clone(self):
        o = _AvoidCylinders.__new__(_AvoidCylinders)
        o.etas, o.pending, o.bits, o.ok, o.count = self.etas, list(self.pending), self.bits, self.ok, self.count
        return o


class _LeastRises:
    """Rank-2 predicate: the least of several counters increased on the last bit."""

    __slots__ = ("parts", "level", "ok")

    def __init__(self, parts, level=None, ok=False):
        self.parts = parts
        self.level = min(p.count for p in parts) if level is None else level
        self.ok = ok

    def feed(self, c):
        for p in self.parts:
            p.feed(c)
        new = min(p.count for p in self.parts)
        self.ok = new > self.level
        self.level = new

    def clone(self):
        return _LeastRises([p.clone() for p in self.parts], self.level, self.ok)


class _AllPass:
    """Rank-1 predicate: every part accepts the current prefix."""

    __slots__ = ("parts",)

    def __init__(self, parts):
        self.parts = parts

    @property
    def ok(self):
        return all(_part_ok(p) for p in self.parts)

    def feed(self, c):
        for p in self.parts:
            p.feed(c)

    def clone(self):
        return _AllPass([p.clone() for p in self.parts])


def _part_ok(p) -> bool:
    if isinstance(p, _Passing):
        return p.alive
    if isinstance(p, _AvoidFamily):
        return p.k < p.bound and p.sc.ok
    return p.ok


class _TrueScanner:
    ok = True

    def feed(self, c):
        pass

    def clone(self):
        return self


def _as_counter(flow: Flow, path: tuple, n: int | None, rank_hint: int):
    """Counter for the set attached to outcome n at ``path`` (n=None: everything)."""
    if n is None:
        return _Counted(_TrueScanner())
    nd = flow.node(path)
    if nd.rank == 0:
        c = nd.question.converge(n)
        return _Passing(_Cylinder(nd.question.etas.string(n) if c is not None else None))
    sc = nd.question.scanner(n)
    return _Counted(sc) if nd.rank == 2 else _Passing(sc)


def _avoid_children(flow: Flow, child: tuple):
    """Counter for "x lies in no set below the infinitely branching node ``child``"."""
    nd = flow.node(child)
    if nd.rank == 0:
        return _AvoidCylinders(nd.question.etas, flow.outcome_bound)
    return _AvoidFamily(nd.question, flow.outcome_bound)


def complement_question(flow: Flow, parent: tuple | None, n: int | None, child: tuple,
                        rank: int) -> ScannerQuestion:
    """Outcome set: (outcome n of ``parent``) minus the union of the sets below
    ``child``; as a rank-``rank`` question."""
    if rank == 2:
        def make(_):
            a = _as_counter(flow, parent, n, 2) if parent is not None else _as_counter(flow, (), None, 2)
            return _LeastRises([a, _avoid_children(flow, child)])
    else:
        def make(_):
            parts = [_avoid_children(flow, child)]
            if parent is not None:
                nd = flow.node(parent)
                if nd.rank == 0:
                    c = nd.question.converge(n)
                    parts.append(_Cylinder(nd.question.etas.string(n) if c is not None else None))
                else:
                    parts.append(nd.question.scanner(n))
            return _AllPass(parts)
    where = format_path(child)
    return ScannerQuestion(rank, make, f"avoid-below {where}")


class DoubledQuestion(Question):
    """Questions of a doubled node: 2n is the complement branch, 2n+1 the original."""

    def __init__(self, flow: Flow, path: tuple, rank: int):
        self.flow, self.path, self.rank = flow, path, rank
        self.orig = flow.node(path).question
        self._comp: dict = {}

    def _complement(self, n):
        q = self._comp.get(n)
        if q is None:
            child = self.path + (n,)
            if self.flow.node(child).width == INF:
                q = complement_question(self.flow, self.path, n, child, self.rank)
            else:
                # a finitely branching child needs no complement: the branch is empty
                q = AtomQuestion(self.rank, ("false",))
            self._comp[n] = q
        return q

    def scanner(self, k):
        n, odd = divmod(k, 2)
        if odd:
            return self.orig.scanner(n)
        return self._complement(n).scanner(0)

    def describe(self):
        return f"doubled({self.orig.describe()})"


class RootCoverQuestion(Question):
    """New root above an infinitely branching root: 0 = no original outcome, 1 = everything."""

    def __init__(self, flow: Flow, rank: int):
        self.rank = rank
        self._comp = complement_question(flow, None, None, (), rank)

    def scanner(self, k):
        if k == 0:
            return self._comp.scanner(0)
        if k == 1:
            return P.DfaScanner(P.atom_dfa("true"))
        return P.DfaScanner(P.atom_dfa("false"))

    def describe(self):
        return "root-cover"


STAR = "star"


def _is_doubled(flow: Flow, path: tuple) -> bool:
    nd = flow.node(path)
    if nd.width == 0 or nd.width == INF:
        return False
    return any(flow.node(path + (k,)).width == INF for k in range(int(nd.width)))


def totalized_source(flow: Flow, path: tuple, root_inf: bool):
    """Copy source of a node of the weak-totalization: an original path, STAR,
    or None for the added root."""
    rest = tuple(path)
    if root_inf:
        if not rest:
            return None
        if rest[0] == 0:
            return STAR if len(rest) == 1 else "invalid"
        rest = rest[1:]
    orig: tuple = ()
    for k in rest:
        if orig == STAR:
            return "invalid"
        if _is_doubled(flow, orig):
            orig = STAR if k % 2 == 0 else orig + (k // 2,)
        else:
            orig = orig + (k,)
    return orig


def weak_totalize(flow: Flow) -> Flow:
    """Make every infinite family a cover by doubling the finite split above it
    with complement branches that lead to nowhere-defined leaves."""
    root = flow.node(())
    root_inf = root.width == INF
    doubled_q: dict = {}

    def resolve(path):
        src = totalized_source(flow, path, root_inf)
        if src is None:
            return FlowNode(root.rank + 1, 2, 0, RootCoverQuestion(flow, root.rank + 1))
        if src == STAR:
            return FlowNode(0, 0, 0, None, P.NOWHERE)
        if src == "invalid":
            raise KeyError(f"{format_path(path)} is not in the totalized tree")
        nd = flow.node(src)
        if _is_doubled(flow, src):
            q = doubled_q.get(src)
            if q is None:
                for k in range(int(nd.width)):
                    child = flow.node(src + (k,))
                    if child.width == INF and child.rank + 1 > nd.rank:
                        raise ValueError(
                            f"cannot totalize at {format_path(src)}: the complement of the rank-{child.rank} "
                            f"family below needs rank {child.rank + 1} (vein not strongly normal)")
                q = doubled_q[src] = DoubledQuestion(flow, src, nd.rank)
            return FlowNode(nd.rank, 2 * nd.width, nd.ready_at, q)
        return nd

    vein = flow.vein
    if vein is not None and root_inf:
        vein = increment_fin(vein, root.rank + 1)
    out = Flow(resolve, oracle=flow.oracle, outcome_bound=flow.outcome_bound,
               name=(flow.name + "-tot") if flow.name else "tot", vein=vein, weakly_total=True)
    out.source = lambda path: totalized_source(flow, path, root_inf)
    out.base = flow
    return out


# normalization of flows --------------------------------------------------------------

def _dispatch(q: EtaQuestion, width: int, prefix: str) -> int | None:
    """Least outcome of a finite rank-0 split whose string the point extends,
    once the prefix decides it."""
    for i in range(width):
        c = q.converge(i)
        if c is None:
            continue
        w = q.etas.string(i)
        if len(prefix) >= len(w):
            if prefix.startswith(w):
                return i
            continue
        if w.startswith(prefix):
            return None  # still undecided
    return None


class _DispatchScanner:
    """Buffers bits until the dispatch is known, then behaves like the chosen scanner."""

    __slots__ = ("eta", "width", "make", "rank", "bits", "sc")

    def __init__(self, eta, width, make, rank):
        self.eta, self.width, self.make, self.rank = eta, width, make, rank
        self.bits = ""
        self.sc = None

    @property
    def ok(self):
        if self.sc is None:
            return self.rank == 1
        return self.sc.ok

    def feed(self, c):
        if self.sc is not None:
            self.sc.feed(c)
            return
        self.bits += c
        n = _dispatch(self.eta, self.width, self.bits)
        if n is not None:
            self.sc = self.make(n)
            for b in self.bits:
                self.sc.feed(b)

    def clone(self):
        o = _DispatchScanner(self.eta, self.width, self.make, self.rank)
        o.bits = self.bits
        o.sc = self.sc.clone() if self.sc is not None else None
        return o


class _ConjScanner:
    """Pi^0_1 conjunction checked on every prefix (used by rank-1 merges)."""

    __slots__ = ("a", "b", "alive")

    def __init__(self, a, b, alive=True):
        self.a, self.b, self.alive = a, b, alive

    @property
    def ok(self):
        return self.alive and self.a.ok and self.b.ok

    def feed(self, c):
        if not (self.a.ok and self.b.ok):
            self.alive = False
        self.a.feed(c)
        self.b.feed(c)

    def clone(self):
        return _ConjScanner(self.a.clone(), self.b.clone(), self.alive)


def _merge_dispatch(flow: Flow, k: int) -> Flow:
    """Remove the finite rank-0 level k: the choice moves into every question
    and leaf function below it."""
    vein = flow.vein
    if vein.levels[k + 1].rank == 0 and vein.levels[k + 1].mark is not Mark.LEAF:
        raise VeinError("merging a finite rank-0 split into a rank-0 split below is not supported")

    def resolve(path):
        if len(path) <= k - 1 or len(path) < k:
            return flow.node(path)
        head, rest = path[:k], path[k:]
        split = flow.node(head)
        eta, width = split.question, int(split.width)
        shape = flow.node(head + (0,) + rest)
        if shape.width == 0:
            fns = [flow.leaf_fn(head + (n,) + rest) for n in range(width)]

            def fn(prefix, budget, fns=fns):
                n = _dispatch(eta, width, prefix)
                return "" if n is None else fns[n].transform(prefix, budget)
            return FlowNode(shape.rank, 0, 0, None, P.LeafFunction(f"dispatch@{format_path(head)}", fn))
        qs = [flow.node(head + (n,) + rest).question for n in range(width)]
        ready = [flow.node(head + (n,) + rest).ready_at for n in range(width)]
        ready_at = None if any(r is None for r in ready) else max(ready + [split.ready_at or 0])
        q = ScannerQuestion(
            shape.rank,
            lambda i, qs=qs: _DispatchScanner(eta, width, lambda n: qs[n].scanner(i), shape.rank),
            "dispatch")
        return FlowNode(shape.rank, shape.width, ready_at, q)

    levels = vein.levels[:k] + vein.levels[k + 1:]
    return Flow(resolve, oracle=flow.oracle, outcome_bound=flow.outcome_bound,
                name=flow.name, vein=Vein(levels))


def _merge_into_parent(flow: Flow, k: int) -> Flow:
    """Remove level k by pairing its outcome into the parent's outcome
    (lexicographically, so the greedy descent is unchanged)."""
    vein = flow.vein
    parent, child = vein.levels[k - 1], vein.levels[k]
    if child.mark is not Mark.FIN:
        raise VeinError(
            f"merging an {child.mark.value} level into its parent does not keep an omega-type order")
    hi = k - 1

    def split(path):
        c = path[hi]
        w2 = int(flow.node(path[:hi] + (0,)).width)
        n, m = divmod(c, w2)
        return path[:hi] + (n, m) + path[hi + 1:]

    def resolve(path):
        if len(path) < hi:
            return flow.node(path)
        if len(path) > hi:
            return flow.node(split(path))
        top = flow.node(path)
        mid = flow.node(path + (0,))
        w2 = int(mid.width)
        width = INF if top.width == INF else int(top.width) * w2
        ready = None if (top.ready_at is None or mid.ready_at is None) else max(top.ready_at, mid.ready_at)
        rank = top.rank

        def make(c, path=path, w2=w2, rank=rank):
            n, m = divmod(c, w2)
            below = path + (n,)
            if rank == 2:
                return _LeastRises([_as_counter(flow, path, n, 2), _as_counter(flow, below, m, 2)])
            a = _scanner_for(flow, path, n)
            b = _scanner_for(flow, below, m)
            return _ConjScanner(a, b)
        return FlowNode(rank, width, ready, ScannerQuestion(rank, make, "merged"))

    levels = vein.levels[:k] + vein.levels[k + 1:]
    return Flow(resolve, oracle=flow.oracle, outcome_bound=flow.outcome_bound,
                name=flow.name, vein=Vein(levels))


def _scanner_for(flow: Flow, path: tuple, n: int):
    nd = flow.node(path)
    if nd.rank == 0:
        c = nd.question.converge(n)
        return _Cylinder(nd.question.etas.string(n) if c is not None else None)
    return nd.question.scanner(n)


def _normal_step(vein: Vein):
    lv = vein.levels
    for k, l in enumerate(lv):
        if l.mark is Mark.LEAF:
            continue
        if l.rank == 0 and l.mark is Mark.FIN:
            return "dispatch", k
        if k > 0:
            parent = lv[k - 1]
            if l.rank <= parent.rank and l.mark.order <= parent.mark.order:
                return "merge", k
        nxt = lv[k + 1]
        if l.mark is Mark.FIN and nxt.mark is Mark.INF and nxt.rank == l.rank:
            return "absorb", k
    return None


def normalize_flow(flow: Flow, target: Vein | None = None) -> Flow:
    """Translate a flow along the normalization of its vein, keeping the
    generated function on the flow's domain."""
    if flow.vein is None:
        raise ValueError("normalize_flow needs a flow that records its vein")
    target = normalize(flow.vein) if target is None else target
    out = flow
    while True:
        step = _normal_step(out.vein)
        if step is None:
            break
        kind, k = step
        if kind == "dispatch":
            out = _merge_dispatch(out, k)
        elif kind == "merge":
            out = _merge_into_parent(out, k)
        else:
            raise VeinError("a finite split directly above an infinite split of the same rank "
                            "has no order-preserving flow translation")
    if out.vein != target:
        raise VeinError(f"normalized flow lives on {out.vein}, expected {target}")
    return out


# composition with the true-path function -----------------------------------------------

def mapped_point(x: StagePoint, h: P.LeafFunction) -> StagePoint:
    """The point h(x), read by feeding h longer and longer prefixes of x."""
    if h.name == "identity":
        return x
    cache = {"out": ""}

    def bit(n):
        out = cache["out"]
        m = max(len(out), 1)
        while len(out) <= n:
            m = 2 * m
            out = h.transform(x.take(m), m)
            if m > 1 << 20:
                raise ValueError(f"{h.name} produces no bit {n}")
        cache["out"] = out
        return out[n]
    return StagePoint(bit_at=bit)


def leftmost_solution(G, x: StagePoint, depth: int) -> str | None:
    """Leftmost string of length ``depth`` in G(x restricted to depth) that
    has an extension at that height (a finite stand-in for the leftmost path)."""
    tree = G.at_prefix(x.take(depth))
    best = None
    for w in tree:
        if len(w) == depth and (best is None or w < best):
            best = w
    return best


@dataclass
class ComposedTp:
    """x -> k(x, TP(h(x))), optionally through a first stage y in G(h(x))."""

    flow: Flow
    h: P.LeafFunction
    k: Callable  # (x_prefix, path) -> bits
    G: object = None
    depth: int = 16

    def __call__(self, x: StagePoint, out_bits: int, stages: int) -> str:
        from .flow import BudgetExhausted
        hx = mapped_point(x, self.h)
        if self.G is not None:
            y = leftmost_solution(self.G, hx, self.depth)
            if y is None:
                raise BudgetExhausted("no solution of the first stage at this depth")
            hx = StagePoint(y, "0")
        tpath = true_path(self.flow, hx, stages)
        if not tpath.certified:
            raise BudgetExhausted("true path not stabilized")
        return self.k(x.take(out_bits), tpath.path)[:out_bits]


def compose_tp(flow: Flow, h: P.LeafFunction = P.IDENTITY, k: Callable | None = None,
               G=None, depth: int = 16) -> ComposedTp:
    if k is None:
        k = lambda prefix, path: prefix
    return ComposedTp(flow, h, k, G, depth)

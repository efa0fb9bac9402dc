"""Veins: schemas for families of ranked, branch-marked well-founded trees.

Every vein node has at most one child schema (a finitely branching node has a
single successor, an infinitely branching node has identical successors), so a
vein is stored as the chain of its levels from the root down to the leaf.  The
node at depth k is the path ``(0,) * k``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Callable, Mapping

from .tree_core import FiniteTree, format_path

INF = float("inf")


class Mark(enum.Enum):
    LEAF = "leaf"
    FIN = "fin"
    INF = "inf"

    @property
    def order(self) -> int:
        # br values 0 < 1 < omega
        return {"leaf": 0, "fin": 1, "inf": 2}[self.value]


@dataclass(frozen=True)
class Level:
    rank: int
    mark: Mark


class VeinError(ValueError):
    pass


@dataclass(frozen=True)
class Vein:
    levels: tuple

    def __post_init__(self):
        lv = tuple(Level(l.rank, Mark(l.mark)) if isinstance(l, Level) else Level(l[0], Mark(l[1]))
                   for l in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise VeinError("a vein has at least a root")
        for k, l in enumerate(lv):
            last = k == len(lv) - 1
            if last != (l.mark is Mark.LEAF):
                raise VeinError("exactly the last level of a vein is a leaf")
            if l.rank not in (0, 1, 2):
                raise VeinError(f"rank {l.rank} outside 0..2")
            if l.mark is Mark.INF and l.rank > 1:
                raise VeinError("infinitely branching nodes have rank at most 1")

    # views ---------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.levels)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> Level:
        return self.levels[0]

    def node(self, k: int) -> tuple:
        return (0,) * k

    @property
    def tree(self) -> FiniteTree:
        return FiniteTree(tuple(self.node(k) for k in range(len(self.levels))))

    def rank(self, path) -> int:
        return self.levels[len(path)].rank

    def mark(self, path) -> Mark:
        return self.levels[len(path)].mark

    def fin_nodes(self) -> list:
        return [self.node(k) for k, l in enumerate(self.levels) if l.mark is Mark.FIN]

    def __str__(self) -> str:
        return format_vein(self)


LEAF = Vein(((0, "leaf"),))
V21 = Vein(((2, "fin"), (0, "leaf")))
V11 = Vein(((1, "fin"), (0, "leaf")))
V1w = Vein(((1, "inf"), (0, "leaf")))
V0w = Vein(((0, "inf"), (0, "leaf")))
V01 = Vein(((0, "fin"), (0, "leaf")))


def basic(rank: int, mark: str) -> Vein:
    """The height-two vein with a root of the given rank and mark."""
    return Vein(((rank, mark), (0, "leaf")))


# text form ---------------------------------------------------------------

class VeinSyntaxError(VeinError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


_TOKEN = re.compile(r"\s*(?:(\()|(\))|r\s*(\d+)|(leaf|fin|inf)|(;[^\n]*)|([^\s()]+))")


def _tokens(text: str):
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex) if m.lastindex else m.end()
        line = text.count("\n", 0, start) + 1
        col = start - (text.rfind("\n", 0, start) + 1) + 1
        pos = m.end()
        if m.group(5):
            continue
        if m.group(6):
            raise VeinSyntaxError(f"unexpected {m.group(6)!r}", line, col)
        kind = ("(" if m.group(1) else ")" if m.group(2) else "rank" if m.group(3) else "mark")
        value = m.group(3) or m.group(4) or kind
        yield kind, value, line, col


def parse_vein(text: str) -> Vein:
    """Parse ``(r2 fin (r0 leaf))`` style text.  ``;`` starts a comment."""
    toks = list(_tokens(text))
    pos = 0
    end_line = text.count("\n") + 1
    end_col = len(text) - (text.rfind("\n") + 1) + 1

    def expect(kind):
        nonlocal pos
        if pos >= len(toks):
            raise VeinSyntaxError(f"expected {kind}, got end of input", end_line, end_col)
        tok = toks[pos]
        if tok[0] != kind:
            raise VeinSyntaxError(f"expected {kind}, got {tok[1]!r}", tok[2], tok[3])
        pos += 1
        return tok

    def node() -> list:
        nonlocal pos
        open_tok = expect("(")
        rank = int(expect("rank")[1])
        mark_tok = expect("mark")
        mark = Mark(mark_tok[1])
        kids = []
        while pos < len(toks) and toks[pos][0] == "(":
            kids.append(node())
        expect(")")
        if rank > 2:
            raise VeinSyntaxError(f"rank {rank} outside 0..2", open_tok[2], open_tok[3])
        if mark is Mark.LEAF and kids:
            raise VeinSyntaxError("a leaf has no children", mark_tok[2], mark_tok[3])
        if mark is not Mark.LEAF and len(kids) != 1:
            raise VeinSyntaxError(f"a {mark.value} node takes exactly one child schema",
                                  mark_tok[2], mark_tok[3])
        if mark is Mark.INF and rank > 1:
            raise VeinSyntaxError("an inf node has rank at most 1", open_tok[2], open_tok[3])
        return [(rank, mark)] + (kids[0] if kids else [])

    levels = node()
    if pos != len(toks):
        tok = toks[pos]
        raise VeinSyntaxError(f"trailing input {tok[1]!r}", tok[2], tok[3])
    return Vein(tuple(levels))


def format_vein(v: Vein) -> str:
    out = ""
    for l in v.levels:
        out += f"(r{l.rank} {l.mark.value}" + (" " if l.mark is not Mark.LEAF else "")
    return out + ")" * len(v.levels)


# structural operations ------------------------------------------------------

def concat(v0: Vein, v1: Vein) -> Vein:
    """Hang a copy of ``v1`` at the leaf of ``v0``."""
    return Vein(v0.levels[:-1] + v1.levels)


def transitive_closure(v: Vein, n: int) -> Vein:
    if n < 1:
        raise VeinError("transitive closure needs n >= 1")
    out = v
    for _ in range(n - 1):
        out = concat(out, v)
    return out


def closure(v: Vein) -> Vein:
    """Insert a rank-0 infinitely branching node above every finitely branching one."""
    out = []
    for l in v.levels:
        if l.mark is Mark.FIN:
            out.append(Level(0, Mark.INF))
        out.append(l)
    return Vein(tuple(out))


def increment_fin(v: Vein, rank: int) -> Vein:
    return Vein((Level(rank, Mark.FIN),) + v.levels)


def increment_inf(v: Vein, rank: int) -> Vein:
    if rank > 1:
        raise VeinError("an infinite increment of rank 2 leaves the rank (1,2) fragment")
    return Vein((Level(rank, Mark.INF),) + v.levels)


def almost_terminal_depth(v: Vein) -> int:
    """Depth of the unique almost-terminal node: the shallowest node with
    finitely many extensions, i.e. just below the last infinitely branching node."""
    last_inf = -1
    for k, l in enumerate(v.levels):
        if l.mark is Mark.INF:
            last_inf = k
    return last_inf + 1


def replacement(v: Vein, rank: int) -> Vein:
    """Turn the almost-terminal node into an infinitely branching node of the
    given rank over leaves, dropping whatever hung below it.

    The result is literal; it is not normalized.
    """
    if rank not in (0, 1):
        raise VeinError("replacement rank must be 0 or 1")
    k = almost_terminal_depth(v)
    return Vein(v.levels[:k] + (Level(rank, Mark.INF), Level(0, Mark.LEAF)))


def _br(l: Level) -> int:
    return l.mark.order


def is_normal(v: Vein) -> bool:
    lv = v.levels
    for k, l in enumerate(lv):
        if l.mark is Mark.LEAF:
            continue
        if l.rank == 0 and l.mark is not Mark.INF:
            return False
        if k > 0:
            parent = lv[k - 1]
            if parent.rank >= l.rank and not (parent.mark is Mark.FIN and l.mark is Mark.INF):
                return False
    return True


def is_strongly_normal(v: Vein) -> bool:
    if not is_normal(v):
        return False
    lv = v.levels
    for k in range(1, len(lv)):
        l, parent = lv[k], lv[k - 1]
        if l.mark is Mark.LEAF:
            continue
        drop = l.rank < parent.rank and _br(l) > _br(parent)
        rise = l.rank > parent.rank and _br(l) < _br(parent)
        if not (drop or rise):
            return False
    return True


def _normalize_once(lv: list) -> bool:
    for k, l in enumerate(lv):
        if l.mark is Mark.LEAF:
            continue
        if l.rank == 0 and l.mark is Mark.FIN:
            del lv[k]
            return True
        if k > 0:
            parent = lv[k - 1]
            if l.rank <= parent.rank and _br(l) <= _br(parent):
                del lv[k]
                return True
        nxt = lv[k + 1]
        # a finite split directly above an infinite split of the same rank
        # merges into the infinite one
        if l.mark is Mark.FIN and nxt.mark is Mark.INF and nxt.rank == l.rank:
            del lv[k]
            return True
    return False


def normalize(v: Vein) -> Vein:
    lv = list(v.levels)
    while _normalize_once(lv):
        pass
    return Vein(tuple(lv))


def prime(v: Vein) -> Vein:
    if not is_strongly_normal(v):
        raise VeinError("prime is defined here for strongly normal veins only")
    rep = replacement(v, 1)
    if v.root.mark is Mark.INF:
        return increment_fin(rep, v.root.rank + 1)
    return increment_fin(increment_inf(rep, 0), 1)


def double_prime(v: Vein) -> Vein:
    if not is_strongly_normal(v):
        raise VeinError("double_prime is defined here for strongly normal veins only")
    closed = closure(replacement(v, 1))
    if v.root.mark is Mark.INF:
        return increment_fin(closed, v.root.rank + 1)
    return increment_fin(closed, 1)


def preset_chain(kind: str, n: int) -> Vein:
    """``XY``: X0 Y0 ... Xn Yn, ``YX``: Y0 X0 ... Yn Xn, with X = V_{1,w}, Y = V_{2,1}."""
    if n < 0:
        raise VeinError("n must be nonnegative")
    pair = {"XY": (V1w, V21), "YX": (V21, V1w)}.get(kind.upper())
    if pair is None:
        raise VeinError(f"unknown chain kind {kind!r}")
    out = LEAF
    for _ in range(n + 1):
        out = concat(concat(out, pair[0]), pair[1])
    return out


# labeled trees --------------------------------------------------------------

@dataclass(frozen=True)
class NodeInfo:
    rank: int
    width: int | float  # natural, INF, or 0 for leaves
    source: tuple | None = None  # copy source in the parent vein


class LabeledTree:
    """A lazily explored tree over the naturals with rank and width labels.

    ``info(path)`` answers for nodes inside the tree; membership is decided by
    walking the widths from the root.
    """

    def __init__(self, info: Callable[[tuple], NodeInfo], name: str = ""):
        self._info = info
        self._cache: dict = {}
        self.name = name

    def info(self, path) -> NodeInfo:
        path = tuple(path)
        got = self._cache.get(path)
        if got is None:
            got = self._info(path)
            self._cache[path] = got
        return got

    def __contains__(self, path) -> bool:
        path = tuple(path)
        for k in range(len(path)):
            if path[k] >= self.info(path[:k]).width:
                return False
        return True

    def rank(self, path) -> int:
        return self.info(path).rank

    def width(self, path):
        return self.info(path).width

    def copy_source(self, path):
        return self.info(path).source

    def is_leaf(self, path) -> bool:
        return self.info(path).width == 0

    def children(self, path, limit: int | None = None) -> list:
        w = self.width(path)
        if w == INF:
            if limit is None:
                raise VeinError(f"{format_path(path)} is infinitely branching; pass a limit")
            w = limit
        return [tuple(path) + (n,) for n in range(int(w))]

    def is_finite_below(self, path) -> bool:
        """True iff only finitely many nodes extend ``path``."""
        stack = [tuple(path)]
        while stack:
            p = stack.pop()
            w = self.width(p)
            if w == INF:
                return False
            stack.extend(p + (n,) for n in range(int(w)))
        return True

    def explore(self, depth: int, inf_limit: int = 3) -> list:
        """Nodes up to the given depth, cutting infinite branchings at inf_limit."""
        out, frontier = [], [()]
        while frontier:
            p = frontier.pop()
            out.append(p)
            if len(p) < depth:
                frontier.extend(reversed(self.children(p, limit=inf_limit)))
        return sorted(out, key=lambda q: (len(q), q))


def b_branching(v: Vein, b: Mapping | Callable) -> LabeledTree:
    """Give every finitely branching vein node a concrete width b(node).

    ``b`` maps vein node paths (or depths) to positive naturals.
    """
    def width_of(k):
        if callable(b):
            w = b(v.node(k))
        else:
            w = b.get(v.node(k), b.get(k))
        if w is None:
            raise VeinError(f"branching function undefined on {format_path(v.node(k))}")
        if int(w) < 1:
            raise VeinError("branching widths are positive")
        return int(w)

    for k, l in enumerate(v.levels):
        if l.mark is Mark.FIN:
            width_of(k)

    def info(path):
        k = len(path)
        l = v.levels[k]
        if l.mark is Mark.LEAF:
            w = 0
        elif l.mark is Mark.INF:
            w = INF
        else:
            w = width_of(k)
        return NodeInfo(l.rank, w, v.node(k))

    return LabeledTree(info, name="b-branching")


def tree_of(v: Vein) -> LabeledTree:
    """The closure of ``v`` where the n-th copy below an inserted node is n-branching."""
    closed = closure(v)
    # depths in the closure that were inserted above a finitely branching node
    inserted = set()
    src = []
    k0 = 0
    for l in v.levels:
        if l.mark is Mark.FIN:
            inserted.add(len(src))
            src.append(None)
        src.append(v.node(k0))
        k0 += 1

    def info(path):
        k = len(path)
        l = closed.levels[k]
        if l.mark is Mark.LEAF:
            w = 0
        elif l.mark is Mark.INF:
            w = INF
        else:
            w = path[-1] if (k - 1) in inserted else 1
        return NodeInfo(l.rank, w, closed.node(k))

    return LabeledTree(info, name="tree-of")


def tree_depth(t: LabeledTree, inf_limit: int = 3) -> int:
    """Number of levels of the deepest branch, exploring infinite nodes up to inf_limit."""
    best = 0
    stack = [()]
    while stack:
        p = stack.pop()
        best = max(best, len(p) + 1)
        stack.extend(t.children(p, limit=inf_limit))
    return best


def vein_node_count(v: Vein) -> int:
    return len(v.levels)


def embeds(small: LabeledTree, big: LabeledTree, depth: int, inf_limit: int = 4) -> bool:
    """Every node of ``small`` (explored to ``depth``) is a node of ``big``, and
    every non-terminal node of ``small`` has the same rank there with no more
    children than ``big`` allows."""
    for p in small.explore(depth, inf_limit=inf_limit):
        if p not in big:
            return False
        if not small.is_leaf(p):
            if small.rank(p) != big.rank(p):
                return False
            if small.width(p) > big.width(p):
                return False
    return True

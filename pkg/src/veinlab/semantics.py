"""Direct semantic evaluation of flows on eventually periodic points.

Membership of ``u v^w`` in a rank-1 set ("every prefix accepted") or a rank-2
set ("infinitely many prefixes accepted") is decided exactly by following the
automaton through the lasso until the state at period boundaries repeats.
Nothing here uses timers or stages.
"""
from __future__ import annotations

from .flow import BudgetExhausted, EtaQuestion, Flow, StagePoint
from .predicates import Dfa
from .vein import INF


def lasso_states(dfa: Dfa, prefix: str, period: str) -> tuple:
    """(states seen anywhere, states seen infinitely often) along prefix + period^w."""
    d = dfa.delta
    q = dfa.start
    seen = {q}
    for c in prefix:
        q = d[q][c == "1"]
        seen.add(q)
    boundary_index = {}
    blocks = []
    while q not in boundary_index:
        boundary_index[q] = len(blocks)
        block = []
        for c in period:
            q = d[q][c == "1"]
            block.append(q)
        blocks.append(block)
        seen.update(block)
    start = boundary_index[q]
    recurring = set()
    for block in blocks[start:]:
        recurring.update(block)
    return seen, recurring


def always(dfa: Dfa, prefix: str, period: str) -> bool:
    seen, _ = lasso_states(dfa, prefix, period)
    return all(dfa.accept[q] for q in seen)


def infinitely_often(dfa: Dfa, prefix: str, period: str) -> bool:
    _, rec = lasso_states(dfa, prefix, period)
    return any(dfa.accept[q] for q in rec)


def _witness(x: StagePoint) -> tuple:
    w = x.eventually_periodic
    if w is None:
        raise ValueError("semantic evaluation needs an eventually periodic point")
    return w


def member(flow: Flow, path: tuple, i: int, x: StagePoint) -> bool:
    """Is x in the set attached to outcome i of the node at ``path``?"""
    u, v = _witness(x)
    nd = flow.node(path)
    q = nd.question
    if isinstance(q, EtaQuestion) or nd.rank == 0:
        if q.converge(i) is None:
            return False
        e = q.etas.string(i)
        return x.take(len(e)) == e
    if nd.rank == 2:
        return infinitely_often(q.dfa(i), u, v)
    return always(q.dfa(i), u, v)


def decide_path(flow: Flow, x: StagePoint, bound: int | None = None) -> tuple:
    """Descend taking the least outcome whose set contains x; stop where none does."""
    bound = flow.outcome_bound if bound is None else bound
    path = ()
    while True:
        nd = flow.node(path)
        if nd.width == 0 or nd.ready_at is None:
            return path
        limit = bound if nd.width == INF else int(nd.width)
        choice = next((i for i in range(limit) if member(flow, path, i, x)), None)
        if choice is None:
            if nd.width == INF:
                raise BudgetExhausted(f"no outcome below {bound} contains the point")
            return path
        path = path + (choice,)


def leftmost_leaf(flow: Flow, x: StagePoint) -> tuple | None:
    """Exhaustive search over a finite flow tree: the leftmost leaf all of
    whose edge conditions contain x."""
    def dfs(path):
        nd = flow.node(path)
        if nd.width == 0:
            return path
        if nd.width == INF:
            raise ValueError("exhaustive search needs a finite tree")
        if nd.ready_at is None:
            return None
        for i in range(int(nd.width)):
            if member(flow, path, i, x):
                got = dfs(path + (i,))
                if got is not None:
                    return got
        return None
    return dfs(())

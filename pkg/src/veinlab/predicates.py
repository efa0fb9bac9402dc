"""Built-in question library: finite automata over {0,1} plus incremental scanners.

Every built-in predicate is compiled to a small DFA.  The staged evaluator only
feeds bits into scanners, while the semantic decision procedure analyses the
same automaton on a lasso ``u v^w``; the two never share evaluation code.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable


@dataclass(frozen=True)
class Dfa:
    start: int
    delta: tuple  # delta[state] == (state after '0', state after '1')
    accept: tuple  # accept[state] -> bool

    def run(self, bits: str, state: int | None = None) -> int:
        q = self.start if state is None else state
        d = self.delta
        for c in bits:
            q = d[q][c == "1"]
        return q

    def accepts(self, bits: str) -> bool:
        return self.accept[self.run(bits)]

    def negate(self) -> "Dfa":
        return Dfa(self.start, self.delta, tuple(not a for a in self.accept))


def build_dfa(start, step: Callable, accept: Callable) -> Dfa:
    """Explore the reachable part of an automaton given by python callables."""
    index = {start: 0}
    order = [start]
    delta = []
    k = 0
    while k < len(order):
        q = order[k]
        row = []
        for b in "01":
            r = step(q, b)
            if r not in index:
                index[r] = len(order)
                order.append(r)
            row.append(index[r])
        delta.append(tuple(row))
        k += 1
    return Dfa(0, tuple(delta), tuple(bool(accept(q)) for q in order))


def product(a: Dfa, b: Dfa, combine: Callable[[bool, bool], bool]) -> Dfa:
    return build_dfa(
        (a.start, b.start),
        lambda q, c: (a.delta[q[0]][c == "1"], b.delta[q[1]][c == "1"]),
        lambda q: combine(a.accept[q[0]], b.accept[q[1]]),
    )


# scanners -------------------------------------------------------------------

class DfaScanner:
    """Feeds bits one at a time; ``ok`` is the predicate on what was fed."""

    __slots__ = ("delta", "accept", "state", "ok")

    def __init__(self, dfa: Dfa):
        self.delta = dfa.delta
        self.accept = dfa.accept
        self.state = dfa.start
        self.ok = dfa.accept[dfa.start]

    def feed(self, bit: str) -> None:
        self.state = self.delta[self.state][bit == "1"]
        self.ok = self.accept[self.state]

    def clone(self) -> "DfaScanner":
        c = DfaScanner.__new__(DfaScanner)
        c.delta, c.accept, c.state, c.ok = self.delta, self.accept, self.state, self.ok
        return c


# atoms ----------------------------------------------------------------------

def _suffix_dfa(w: str) -> Dfa:
    # state: longest suffix of the input that is a prefix of w (KMP style)
    def step(q, c):
        s = q + c
        while s and not w.startswith(s):
            s = s[1:]
        return s
    return build_dfa("", step, lambda q: q == w)


def _factor_dfa(w: str) -> Dfa:
    def step(q, c):
        if q is True:
            return True
        s = q + c
        if s == w:
            return True
        while s and not w.startswith(s):
            s = s[1:]
        return s
    return build_dfa("" if w else True, step, lambda q: q is True)


def atom_dfa(text: str) -> Dfa:
    return _atom_dfa(" ".join(text.split()))


@lru_cache(maxsize=None)
def _atom_dfa(text: str) -> Dfa:
    words = text.split()
    if not words:
        raise ValueError("empty predicate")
    if words[0] == "not":
        return _atom_dfa(" ".join(words[1:])).negate()
    if " or " in text or " and " in text:
        op = " or " if " or " in text else " and "
        left, right = text.split(op, 1)
        comb = (lambda a, b: a or b) if op == " or " else (lambda a, b: a and b)
        return product(_atom_dfa(left), _atom_dfa(right), comb)
    head, args = words[0], words[1:]
    try:
        if head == "true" and not args:
            return Dfa(0, ((0, 0),), (True,))
        if head == "false" and not args:
            return Dfa(0, ((0, 0),), (False,))
        if head in ("ends", "has", "lacks") and len(args) == 1 and re.fullmatch("[01]+", args[0]):
            if head == "ends":
                return _suffix_dfa(args[0])
            d = _factor_dfa(args[0])
            return d if head == "has" else d.negate()
        if head in ("ones_mod", "len_mod") and len(args) == 2:
            m, r = int(args[0]), int(args[1])
            if m < 1:
                raise ValueError
            inc = "1" if head == "ones_mod" else "01"
            return build_dfa(0, lambda q, c: (q + (c in inc)) % m, lambda q: q == r % m)
        if head == "bit" and len(args) == 2 and args[1] in ("0", "1"):
            k, b = int(args[0]), args[1]
            # closed set {x : x(k) = b}: vacuously true while the prefix is short
            def step(q, c):
                if isinstance(q, str):
                    return q
                return (("ok" if c == b else "bad") if q == k else q + 1)
            return build_dfa(0, step, lambda q: q != "bad")
        if head == "ones_le" and len(args) == 1:
            n = int(args[0])
            return build_dfa(0, lambda q, c: min(q + (c == "1"), n + 1), lambda q: q <= n)
    except ValueError:
        pass
    raise ValueError(f"unknown predicate {text!r}")


def atom_direct(text: str, sigma: str) -> bool:
    """Reference semantics of the atoms written with plain string operations."""
    text = " ".join(text.split())
    words = text.split()
    if words[0] == "not":
        return not atom_direct(" ".join(words[1:]), sigma)
    if " or " in text:
        a, b = text.split(" or ", 1)
        return atom_direct(a, sigma) or atom_direct(b, sigma)
    if " and " in text:
        a, b = text.split(" and ", 1)
        return atom_direct(a, sigma) and atom_direct(b, sigma)
    head, args = words[0], words[1:]
    if head == "true":
        return True
    if head == "false":
        return False
    if head == "ends":
        return sigma.endswith(args[0])
    if head == "has":
        return args[0] in sigma
    if head == "lacks":
        return args[0] not in sigma
    if head == "ones_mod":
        return sigma.count("1") % int(args[0]) == int(args[1]) % int(args[0])
    if head == "len_mod":
        return len(sigma) % int(args[0]) == int(args[1]) % int(args[0])
    if head == "bit":
        k = int(args[0])
        return len(sigma) <= k or sigma[k] == args[1]
    if head == "ones_le":
        return sigma.count("1") <= int(args[0])
    raise ValueError(f"unknown predicate {text!r}")


# indexed families for infinitely branching rank-1 nodes -----------------------

def _zero_at(n: int) -> Dfa:
    # |sigma| <= n or sigma[n] == '0'
    def step(q, c):
        if isinstance(q, str):
            return q
        if q == n:
            return "ok" if c == "0" else "bad"
        return q + 1
    return build_dfa(0, step, lambda q: q != "bad")


def _ones_or_zero_at(n: int) -> Dfa:
    # outcome 0: no zero seen yet; outcome n >= 1: position n-1 holds a zero
    return _atom_dfa("lacks 0") if n == 0 else _zero_at(n - 1)


def _ones_le(n: int) -> Dfa:
    return _atom_dfa(f"ones_le {n}")


def _first_one_at(n: int) -> Dfa:
    # closed: no 1 before position n, and position n (when present) is 1;
    # outcome sets partition the non-zero sequences, 0^w is uncovered
    def step(q, c):
        if isinstance(q, str):
            return q
        if q < n:
            return q + 1 if c == "0" else "bad"
        return "ok" if c == "1" else "bad"
    return build_dfa(0, step, lambda q: q != "bad")


FAMILIES: dict = {
    "zero_at": _zero_at,
    "ones_or_zero_at": _ones_or_zero_at,
    "ones_le": _ones_le,
    "first_one_at": _first_one_at,
}


# rank-0 string families -------------------------------------------------------

@dataclass(frozen=True)
class EtaFamily:
    """Outcome n is the cylinder of ``string(n)``, announced at stage ``converge(n)``."""

    name: str
    string: Callable
    converge: Callable  # n -> stage or None (never)

    def at(self, n: int, stage: int) -> str | None:
        c = self.converge(n)
        if c is None or c > stage:
            return None
        return self.string(n)


def eta_family(text: str) -> EtaFamily:
    words = text.split()
    head, args = words[0], words[1:]
    if head == "unary":
        # eta(n) = 1^n 0, converging at stage delay*n; optional cut: undefined from n >= cut
        delay = int(args[0]) if args else 0
        cut = int(args[1]) if len(args) > 1 else None
        return EtaFamily(text, lambda n: "1" * n + "0",
                         lambda n: None if (cut is not None and n >= cut) else delay * n)
    if head == "block":
        # eta(n) = the n-th binary string of length L, n < 2^L
        width = int(args[0])
        return EtaFamily(text, lambda n: format(n, f"0{width}b") if width else "",
                         lambda n: 0 if n < 2 ** width else None)
    if head == "list":
        # explicit strings, "s@c" announces s at stage c
        items = []
        for a in args:
            s, _, c = a.partition("@")
            if not re.fullmatch("[01]*", s):
                raise ValueError(f"bad string {s!r} in {text!r}")
            items.append((s, int(c) if c else 0))
        return EtaFamily(text, lambda n: items[n][0] if n < len(items) else "",
                         lambda n: items[n][1] if n < len(items) else None)
    raise ValueError(f"unknown clopen family {text!r}")


# leaf functions ----------------------------------------------------------------

@dataclass(frozen=True)
class LeafFunction:
    """Budgeted monotone stream function; ``None`` output means nowhere defined."""

    name: str
    fn: Callable  # (prefix, budget) -> str

    def transform(self, prefix: str, budget: int | None = None) -> str:
        if budget is None:
            budget = len(prefix)
        return self.fn(prefix, budget)

    @property
    def nowhere(self) -> bool:
        return self.name == "nowhere"


def leaf_function(text: str) -> LeafFunction:
    words = text.split()
    head, args = words[0], words[1:]
    flip = str.maketrans("01", "10")
    if head == "identity":
        return LeafFunction(text, lambda p, b: p[:b])
    if head == "const":
        bit = args[0]
        return LeafFunction(text, lambda p, b: bit * min(len(p), b))
    if head == "flip":
        return LeafFunction(text, lambda p, b: p[:b].translate(flip))
    if head == "shift":
        k = int(args[0])
        return LeafFunction(text, lambda p, b: p[k:][:b])
    if head == "lag":
        k = int(args[0])
        return LeafFunction(text, lambda p, b: p[: max(0, min(len(p) - k, b))])
    if head == "xor":
        w = args[0]
        return LeafFunction(
            text, lambda p, b: "".join("01"[(p[i] != w[i % len(w)])] for i in range(min(len(p), b))))
    if head == "nowhere":
        return LeafFunction("nowhere", lambda p, b: "")
    raise ValueError(f"unknown leaf function {text!r}")


IDENTITY = leaf_function("identity")
NOWHERE = leaf_function("nowhere")

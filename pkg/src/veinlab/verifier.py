"""The verifier flow: a flow that undoes the copies of a finished construction.

On a string outside every copy it is the identity.  Inside the copy of triple
c it reruns the c-th totalized flow, and at each almost-terminal node it asks
one more question: when did the true path last pass to the left, and how much
agreement with U has been seen.  The leaf below a guessed answer reads the
recorded copies back and outputs the preimage bit by bit.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import predicates as P
from .construction import Trace, gamma
from .factory import pair, unpair
from .flow import (EtaQuestion, Flow, FlowNode, ScannerQuestion, SelectQuestion,
                   initial_state, priority_value, settle_tilde, _advance, _strict_left_count)
from .tree_core import format_path
from .vein import INF, Vein, b_branching, embeds, prime


class MalformedTrace(ValueError):
    pass


class _NoRhoScanner:
    """Accepts while the prefix read so far extends none of the given strings."""

    __slots__ = ("rhos", "bits", "ok")

    def __init__(self, rhos, bits="", ok=True):
        self.rhos, self.bits, self.ok = rhos, bits, ok

    def feed(self, c):
        if not self.ok:
            return
        self.bits += c
        if any(self.bits.startswith(r) for r in self.rhos):
            self.ok = False

    def clone(self):
        return _NoRhoScanner(self.rhos, self.bits, self.ok)


class _Yes:
    ok = True

    def feed(self, c):
        pass

    def clone(self):
        return self


@dataclass
class _Ledger:
    """Agreement bookkeeping for one triple, read from the trace."""

    trace: Trace
    triple: tuple

    def __post_init__(self):
        self.rho = self.trace.rhos[self.triple]
        self.flow = self.trace.runs[self.triple].flow
        self._u: dict = {}
        self._events = [r for r in self.trace.events(self.triple, "attention")]

    def u_stage(self, s: int):
        got = self._u.get(s)
        if got is None:
            got = self._u[s] = self.trace.u_stage(self.triple, s)
        return got

    def leaf_agreements(self, xi: tuple, sigma: str) -> dict:
        """Agreement of each live leaf below xi on sigma."""
        s = len(sigma) - len(self.rho)
        if s < 0:
            return {}
        ust = self.u_stage(s)
        out = {}
        for lam in self.flow.leaves_below(xi):
            fn = self.flow.leaf_fn(lam)
            if not fn.nowhere:
                out[lam] = ust.agreement(fn.transform(sigma, len(sigma)))
        return out

    def agreement(self, xi: tuple, sigma: str) -> int:
        """Total agreement of the leaves below xi on sigma."""
        return sum(self.leaf_agreements(xi, sigma).values())

    def credited(self, xi: tuple, u: int) -> dict:
        """Per leaf, the largest agreement credited at attention before length u."""
        best: dict = {}
        for r in self._events:
            pl = r["payload"]
            if tuple(pl["xi"]) != xi or len(pl["sigma"]) >= u:
                continue
            for w in pl["witnesses"]:
                lam = tuple(w["leaf"])
                best[lam] = max(best.get(lam, 0), w["agreement"])
        return best

    def witnessed(self, xi: tuple, u: int) -> int:
        return sum(self.credited(xi, u).values())

    def blocked(self, xi: tuple, prefix: str, alpha_image: str) -> bool:
        """No leaf can witness again while the image of the acting anchor stays put."""
        got = self.credited(xi, len(prefix))
        for lam, agree in self.leaf_agreements(xi, prefix).items():
            old = self.flow.leaf_fn(lam).transform(alpha_image, len(alpha_image))
            if max(len(old), got.get(lam, 0)) < agree:
                return False
        return True


class _ScoreMemory:
    __slots__ = ("st", "pos", "last_left", "most")

    def __init__(self):
        self.st = initial_state(track_priors=False, keep_history=False)
        self.pos = 0
        self.last_left = 0
        self.most = 0

    def clone(self):
        c = _ScoreMemory.__new__(_ScoreMemory)
        c.st, c.pos, c.last_left, c.most = self.st.copy(), self.pos, self.last_left, self.most
        return c


class ScoreQuestion(SelectQuestion):
    """Outcome pair(last stage strictly left of xi, most agreement seen)."""

    rank = 1

    def __init__(self, ledger: _Ledger, xi: tuple):
        self.ledger, self.xi = ledger, xi

    def select(self, run_node, bits, s):
        mem = run_node.eta
        if mem is None:
            mem = run_node.eta = _ScoreMemory()
        flow = self.ledger.flow
        while mem.pos < s - 1:
            t = mem.pos + 1
            mem.st.set_bits(bits[:t])
            _advance(flow, mem.st, t)
            if _strict_left_count(mem.st.current, self.xi):
                mem.last_left = t
            mem.pos = t
            mem.most = max(mem.most, self.ledger.agreement(self.xi, bits[:t]))
        return pair(mem.last_left, mem.most)

    def describe(self):
        return f"score@{format_path(self.xi)}"


def _walk(anchors: dict, S, y: str, length: int) -> str | None:
    """The alpha of the given length in S whose image is a prefix of y."""
    if not y.startswith(gamma(anchors, "")):
        return None
    alpha = ""
    while len(alpha) < length:
        for b in "01":
            nxt = alpha + b
            if nxt in S and y.startswith(gamma(anchors, nxt)):
                alpha = nxt
                break
        else:
            return None
    return alpha


def decoding_leaf(trace: Trace, ledger: _Ledger, xi: tuple, guess: int) -> P.LeafFunction:
    """Output the preimage under the copy, trusting the guess (last-left stage, agreement)."""
    a, n = unpair(guess)
    flow, rho, S = ledger.flow, ledger.rho, trace.S
    last = trace.stages

    def to_stage(length_stage: int) -> int:
        return min(max(0, length_stage - len(rho)), last)

    def fn(prefix: str, budget: int) -> str:
        L = len(prefix)
        if a > L:
            return ""
        p = priority_value(flow, xi, prefix[:a]) if a > 0 else 0
        # first stage from which xi can no longer act on its anchor along prefix
        s0 = None
        for s in range(max(a, 1), L + 1):
            if ledger.agreement(xi, prefix[:s]) != n:
                continue
            alpha = _walk(trace.anchors_at(ledger.triple, to_stage(s)), S, prefix, p)
            if alpha is None:
                continue
            anchors = trace.anchors_at(ledger.triple, to_stage(s))
            if ledger.blocked(xi, prefix[:s], gamma(anchors, alpha)):
                s0 = s
                break
        if s0 is None:
            return ""
        from .flow import StagePoint
        y = StagePoint(prefix, "0")
        out = ""
        top = None
        for ell in range(1, budget + 1):
            target = max(ell, p)
            if ell <= p and top is not None:
                alpha = top
            else:
                seen = settle_tilde(flow, xi, y, target, L)
                if seen is None:
                    break
                anchors = trace.anchors_at(ledger.triple, to_stage(max(seen, s0)))
                alpha = _walk(anchors, S, prefix, target)
                if alpha is None:
                    break
                if ell <= p:
                    top = alpha
            if alpha[: ell - 1] != out:
                break
            out += alpha[ell - 1]
        return out

    return P.LeafFunction(f"decode@{format_path(xi)}:{a},{n}", fn)


def build_verifier(trace: Trace, codes=None) -> Flow:
    """The verifier flow for a finished trace (restricted to ``codes`` if given)."""
    from .construction import triple_code
    if not trace.snapshots or any(t not in trace.snapshots for t in trace.triples):
        raise MalformedTrace("trace is missing copy snapshots")
    by_code = {triple_code(*t): t for t in trace.triples}
    if codes is not None:
        by_code = {c: t for c, t in by_code.items() if c in set(codes)}
    rhos = tuple(trace.rhos[t] for t in by_code.values())
    ledgers = {c: _Ledger(trace, t) for c, t in by_code.items()}
    dispatch = P.EtaFamily(
        "rho", lambda c: trace.rhos[by_code[c]] if c in by_code else "",
        lambda c: 0 if c in by_code else None)
    root_q = ScannerQuestion(1, lambda n: _NoRhoScanner(rhos) if n == 0 else _Yes(), "no-rho")
    score_qs: dict = {}

    def resolve(path):
        if not path:
            return FlowNode(1, 2, 0, root_q)
        if path[0] == 0:
            if len(path) == 1:
                return FlowNode(0, 0, 0, None, P.IDENTITY)
            raise KeyError(format_path(path))
        if len(path) == 1:
            return FlowNode(0, INF, 0, EtaQuestion(dispatch))
        c = path[1]
        if c not in by_code:
            return FlowNode(0, 0, 0, None, P.NOWHERE)
        led = ledgers[c]
        tot = led.flow
        zeta = path[2:]
        # below an almost-terminal node of the totalized flow: one score question,
        # then decoding leaves
        for k in range(len(zeta) + 1):
            head = zeta[:k]
            if tot.almost_terminal(head):
                if k == len(zeta):
                    key = (c, head)
                    q = score_qs.get(key)
                    if q is None:
                        q = score_qs[key] = ScoreQuestion(led, head)
                    return FlowNode(1, INF, 0, q)
                if k == len(zeta) - 1:
                    return FlowNode(0, 0, 0, None, decoding_leaf(trace, led, head, zeta[-1]))
                raise KeyError(format_path(path))
        return tot.node(zeta)

    return Flow(resolve, name="verifier", outcome_bound=64)


def verifier_vein(trace: Trace) -> Vein:
    """Vein whose prime hosts the verifier: the (common) vein of the totalized flows."""
    veins = {trace.runs[t].flow.vein for t in trace.triples}
    if len(veins) != 1:
        raise ValueError("triples disagree on the totalized vein")
    return veins.pop()


def verifier_embeds(trace: Trace, verifier: Flow, depth: int = 8, width: int = 64) -> bool:
    host = b_branching(prime(verifier_vein(trace)), lambda node: width)
    return embeds(verifier.tree, host, depth)

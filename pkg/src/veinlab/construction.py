"""The tree construction: an embedding of the source tree S into a new tree T
through moving copies gamma_s, one copy per triple (e, i, j).

Each copy starts as rho + alpha and is redefined whenever a strategy (an
almost-terminal node of the e-th weak-totalized flow) sees its leaf function
push the image of a copy point into the opponent tree U.  A copy is stored as
a set of anchors: gamma(beta) = A[a] + beta[len(a):] for the longest anchor a
below beta.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Iterable

from . import predicates as P
from .factory import FlowRegistry, encode, weak_totalize
from .flow import (BudgetExhausted, Flow, StagePoint, Undefined, ZEROS, eval_flow,
                   initial_state, tp_step, run_tp)
from .tree_core import parse_path, path_to_bits, format_path, bits_to_path
from .vein import Vein


# trees of binary strings ---------------------------------------------------------

@dataclass
class TreeSpec:
    """A decidable tree of binary strings: explicit nodes plus directive-defined ones.

    Directives: ``where`` atoms must hold on every prefix, ``depth`` caps the
    length, ``avoid`` strings may not be extended, ``full`` turns the
    directive part on with no further condition.
    """

    explicit: frozenset = frozenset()
    where: tuple = ()
    depth: int | None = None
    avoid: tuple = ()
    full: bool = False
    name: str = ""

    def __post_init__(self):
        closed = set()
        for w in self.explicit:
            closed.update(w[:k] for k in range(len(w) + 1))
        self.explicit = frozenset(closed)
        self._dfas = [P.atom_dfa(a) for a in self.where]
        self._cache: dict = {}

    @property
    def has_directives(self) -> bool:
        return self.full or bool(self.where) or self.depth is not None or bool(self.avoid)

    def _directive_member(self, w: str) -> bool:
        if not self.has_directives:
            return False
        if self.depth is not None and len(w) > self.depth:
            return False
        if any(w.startswith(a) for a in self.avoid):
            return False
        for d in self._dfas:
            q = d.start
            if not d.accept[q]:
                return False
            for c in w:
                q = d.delta[q][c == "1"]
                if not d.accept[q]:
                    return False
        return True

    def __contains__(self, w: str) -> bool:
        got = self._cache.get(w)
        if got is None:
            got = self._cache[w] = w in self.explicit or self._directive_member(w)
        return got

    def level(self, n: int) -> list:
        """Members of length n in lexicographic order."""
        lvl = [""] if "" in self else []
        for _ in range(n):
            lvl = [w + c for w in lvl for c in "01" if w + c in self]
        return lvl

    def members(self, depth: int) -> list:
        out, lvl = [], ([""] if "" in self else [])
        for _ in range(depth + 1):
            out.extend(lvl)
            lvl = [w + c for w in lvl for c in "01" if w + c in self]
        return out


def parse_tree_text(text: str, name: str = "") -> TreeSpec:
    explicit, where, avoid = set(), [], []
    depth, full = None, False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%"):
            head, _, arg = line[1:].partition(" ")
            arg = arg.strip()
            if head == "where":
                P.atom_dfa(arg)
                where.append(arg)
            elif head == "depth":
                depth = int(arg)
            elif head == "avoid":
                avoid.append(arg)
            elif head == "full":
                full = True
            else:
                raise ValueError(f"line {lineno}: unknown directive %{head}")
            continue
        try:
            path = parse_path(line)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if any(b not in (0, 1) for b in path):
            raise ValueError(f"line {lineno}: tree nodes must be binary")
        explicit.add(path_to_bits(path))
    return TreeSpec(frozenset(explicit), tuple(where), depth, tuple(avoid), full, name)


def format_tree_text(spec: TreeSpec) -> str:
    lines = []
    for a in spec.where:
        lines.append(f"%where {a}")
    if spec.depth is not None:
        lines.append(f"%depth {spec.depth}")
    for a in spec.avoid:
        lines.append(f"%avoid {a}")
    if spec.full:
        lines.append("%full")
    for w in sorted(spec.explicit, key=lambda w: (len(w), w)):
        lines.append(format_path(bits_to_path(w)))
    return "\n".join(lines) + "\n"


@dataclass
class ApproxMultifunction:
    """tau -> U(tau): the base tree cut at height |tau| (fibers do not depend on tau's bits)."""

    base: TreeSpec

    def at_prefix(self, tau: str) -> list:
        return self.base.members(len(tau))

    def contains(self, tau: str, w: str) -> bool:
        return len(w) <= len(tau) and w in self.base


# rho strings --------------------------------------------------------------------------

@dataclass(frozen=True)
class Rhos:
    strings: tuple
    shortfall: int  # how many requested strings were not found within the depth bound


def rho_enumeration(S: TreeSpec, count: int, depth: int = 64, width: int = 1 << 15) -> Rhos:
    """Minimal strings outside S in length-lexicographic order.

    The search stops at ``depth`` or once a level of S holds more than
    ``width`` strings; whatever is missing then is reported as shortfall.
    """
    found = []
    if "" not in S:
        found.append("")
        return Rhos(tuple(found[:count]), max(0, count - 1))
    lvl = [""]
    for _ in range(depth):
        nxt = []
        for w in lvl:
            for c in "01":
                v = w + c
                if v in S:
                    nxt.append(v)
                else:
                    found.append(v)
        # within one length, lexicographic order
        if len(found) >= count:
            break
        lvl = nxt
        if not lvl or len(lvl) > width:
            break
    found.sort(key=lambda w: (len(w), w))
    return Rhos(tuple(found[:count]), max(0, count - len(found)))


def triple_code(e: int, i: int, j: int) -> int:
    return encode(e, i, j)


# opponent trees --------------------------------------------------------------------

@dataclass(frozen=True)
class UStage:
    """U^x_{i,j}[s]: members of U(tau) shorter than the agreement length."""

    base: TreeSpec
    tau: str
    ell: int

    def __contains__(self, w: str) -> bool:
        return len(w) <= len(self.tau) and len(w) < self.ell and w in self.base

    def materialize(self) -> list:
        return [w for w in self.base.members(min(len(self.tau), self.ell - 1))] if self.ell > 0 else []

    def agreement(self, out: str) -> int:
        """Longest prefix of ``out`` inside this tree (0 if even the root is missing)."""
        k = 0
        while k < len(out) and out[: k + 1] in self:
            k += 1
        return k


def joined(x: StagePoint, d: StagePoint | None, n: int) -> str:
    if d is None:
        return x.take(n)
    a, b = x.take((n + 1) // 2), d.take(n // 2)
    return "".join(a[k // 2] if k % 2 == 0 else b[k // 2] for k in range(n))


def u_indexed(reg: FlowRegistry, U: TreeSpec, i: int, j: int, x: StagePoint, s: int) -> UStage:
    tau = reg.machine(i).transform(x.take(s), s)
    back = reg.machine(j).transform(tau, s)
    target = joined(x, reg.join_oracle, s)
    ell = 0
    while ell < min(len(back), s) and back[ell] == target[ell]:
        ell += 1
    return UStage(U, tau, ell)


# copies ---------------------------------------------------------------------------------

def gamma(anchors: dict, beta: str) -> str:
    for k in range(len(beta), -1, -1):
        a = beta[:k]
        if a in anchors:
            return anchors[a] + beta[k:]
    raise KeyError("the empty string is always an anchor")


def gamma_inverse(anchors: dict, S: TreeSpec, sigma: str) -> str | None:
    """Longest alpha in S with gamma(alpha) a prefix of sigma."""
    if "" not in S or not sigma.startswith(gamma(anchors, "")):
        return None
    alpha = ""
    while True:
        for b in "01":
            nxt = alpha + b
            if nxt in S and sigma.startswith(gamma(anchors, nxt)):
                alpha = nxt
                break
        else:
            return alpha


def _anchor_of(anchors: dict, beta: str) -> str:
    for k in range(len(beta), -1, -1):
        if beta[:k] in anchors:
            return beta[:k]
    return ""


def image_prefixes_at(anchors: dict, S: TreeSpec, level: int) -> list:
    """Strings of exact length ``level`` that are prefixes of some gamma(alpha), alpha in S."""
    out = set()
    for a, img in anchors.items():
        if a not in S:
            continue
        if len(img) >= level:
            out.add(img[:level])
            continue
        need = level - len(img)
        walk = [a]
        for _ in range(need):
            nxt = []
            for w in walk:
                for c in "01":
                    v = w + c
                    if v in S and v not in anchors:
                        nxt.append(v)
            walk = nxt
        out.update(img + w[len(a):] for w in walk)
    return sorted(out)


def is_image_prefix(anchors: dict, S: TreeSpec, tau: str) -> bool:
    for a, img in anchors.items():
        if a not in S:
            continue
        if img.startswith(tau):
            return True
        if tau.startswith(img) and len(tau) > len(img):
            beta = a + tau[len(img):]
            if beta in S and _anchor_of(anchors, beta) == a:
                return True
    return False


# the run ------------------------------------------------------------------------------------

@dataclass
class TripleRun:
    triple: tuple
    rho: str
    flow: Flow
    anchors: dict
    frontier: dict = field(default_factory=dict)  # sigma -> TpState
    idle: bool = False
    attention: dict = field(default_factory=dict)  # strategy -> count
    last_change: dict = field(default_factory=dict)  # anchor -> stage
    credited: dict = field(default_factory=dict)  # (strategy, leaf) -> largest witnessed agreement
    _finite: dict = field(default_factory=dict)

    def strategy_on(self, path: tuple):
        for k in range(len(path) + 1):
            p = path[:k]
            fin = self._finite.get(p)
            if fin is None:
                fin = self._finite[p] = self.flow.is_finite_below(p)
            if fin:
                return p
        return None


@dataclass
class Trace:
    """Everything a run produced; ``records`` is the JSONL event stream."""

    S: TreeSpec
    U: TreeSpec
    reg: FlowRegistry
    vein: Vein
    triples: tuple
    rhos: dict
    stages: int
    depth: int
    fiber: StagePoint
    records: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # triple -> [(stage, anchors)]
    runs: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def anchors_at(self, triple, stage: int) -> dict:
        snaps = self.snapshots[triple]
        keys = [s for s, _ in snaps]
        k = bisect.bisect_right(keys, stage) - 1
        if k < 0:
            raise ValueError(f"no copy recorded for {triple} at stage {stage}")
        return snaps[k][1]

    def final_anchors(self, triple) -> dict:
        return self.snapshots[triple][-1][1]

    def events(self, triple=None, kind=None) -> list:
        out = []
        for r in self.records:
            if triple is not None and tuple(r["triple"]) != tuple(triple):
                continue
            if kind is not None and r["event"] != kind:
                continue
            out.append(r)
        return out

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    def u_stage(self, triple, s: int) -> UStage:
        _, i, j = triple
        return u_indexed(self.reg, self.U, i, j, self.fiber, s)

    def stabilization(self, triple) -> dict:
        """Per anchor: the last stage it was (re)defined; plus whether it moved late."""
        run = self.runs[triple]
        late = self.stages - max(1, self.stages // 4)
        return {a: {"last_change": s, "moving": s > late} for a, s in sorted(run.last_change.items())}


def _emit(trace: Trace, stage: int, triple, event: str, payload: dict) -> None:
    trace.records.append({"stage": stage, "triple": list(triple), "event": event, "payload": payload})


def _snapshot(trace: Trace, run: TripleRun, stage: int) -> None:
    trace.snapshots.setdefault(run.triple, []).append((stage, dict(run.anchors)))
    _emit(trace, stage, run.triple, "gamma", {"anchors": dict(sorted(run.anchors.items()))})


def start_construction(S: TreeSpec, U: TreeSpec, reg: FlowRegistry, vein: Vein, triples: Iterable,
                       stages: int, depth: int = 64, fiber: StagePoint = ZEROS) -> Trace:
    triples = tuple(tuple(t) for t in triples)
    codes = {t: triple_code(*t) for t in triples}
    need = max(codes.values(), default=-1) + 1
    rhos = rho_enumeration(S, need, depth)
    if rhos.shortfall:
        raise ValueError(f"S has only {len(rhos.strings)} minimal non-members up to depth {depth}, "
                         f"{need} needed")
    trace = Trace(S, U, reg, vein, triples, {t: rhos.strings[codes[t]] for t in triples},
                  stages, depth, fiber)
    for t in triples:
        flow = weak_totalize(reg.flow(t[0], vein))
        rho = trace.rhos[t]
        run = TripleRun(t, rho, flow, {"": rho})
        run.last_change[""] = 0
        trace.runs[t] = run
        _snapshot(trace, run, 0)
        if len(rho) > depth:
            run.idle = True
            _emit(trace, 0, t, "freeze", {"reason": "depth"})
            continue
        run.frontier = {sg: run_tp(flow, sg, track_priors=True, keep_history=True)
                        for sg in image_prefixes_at(run.anchors, S, len(rho))}
    return trace


def find_attention(trace: Trace, run: TripleRun, s: int):
    """The acting strategy at stage s, or None.  Candidates are ordered by
    substage, then by the length of the current image, then left to right."""
    S = trace.S
    ustage = trace.u_stage(run.triple, s)
    best = None
    for sigma, st in run.frontier.items():
        xi = run.strategy_on(st.current)
        if xi is None:
            continue
        p = st.prior.get(xi, 0)
        inv = gamma_inverse(run.anchors, S, sigma)
        if inv is None or p > len(inv) or p > s:
            continue
        alpha = inv[:p]
        img = gamma(run.anchors, alpha)
        witnesses = []
        for lam in run.flow.leaves_below(xi):
            fn = run.flow.leaf_fn(lam)
            if fn.nowhere:
                continue
            a = fn.transform(img, len(img))
            b = fn.transform(sigma, len(sigma))
            # the part of the new output that U still accepts must go past the old
            # output and past every agreement this leaf has already been credited with
            agree = ustage.agreement(b)
            if max(len(a), run.credited.get((xi, lam), 0)) < agree and b.startswith(a):
                witnesses.append({"leaf": list(lam), "agreement": agree})
        if not witnesses:
            continue
        key = (p, len(img), sigma, xi)
        if best is None or key < best[0]:
            best = (key, {"xi": list(xi), "sigma": sigma, "alpha": alpha, "substage": p,
                          "old_image": img, "witnesses": witnesses})
    return None if best is None else best[1]


def construction_stage(trace: Trace, s: int) -> None:
    """Stage s for every triple: act on the chosen strategy (if any), then move
    the frontier to the next level."""
    S = trace.S
    for t in trace.triples:
        run = trace.runs[t]
        if run.idle:
            continue
        act = find_attention(trace, run, s)
        if act is not None:
            alpha = act["alpha"]
            for a in [a for a in run.anchors if a.startswith(alpha) and a != alpha]:
                del run.anchors[a]
            run.anchors[alpha] = act["sigma"]
            run.last_change[alpha] = s + 1
            for a in list(run.last_change):
                if a not in run.anchors:
                    del run.last_change[a]
            xi = tuple(act["xi"])
            for w in act["witnesses"]:
                k = (xi, tuple(w["leaf"]))
                run.credited[k] = max(run.credited.get(k, 0), w["agreement"])
            key = format_path(xi)
            run.attention[key] = run.attention.get(key, 0) + 1
            _emit(trace, s, t, "attention", act)
            _snapshot(trace, run, s + 1)
        level = len(run.rho) + s + 1
        if level > trace.depth:
            run.idle = True
            run.frontier = {}
            _emit(trace, s + 1, t, "freeze", {"reason": "depth"})
            continue
        nxt = {}
        for sigma in image_prefixes_at(run.anchors, S, level):
            parent = run.frontier.get(sigma[:-1])
            if parent is None:
                trace.violations.append(("shrink", t, s, sigma))
                continue
            nxt[sigma] = tp_step(run.flow, parent, sigma)
        run.frontier = nxt


def run_construction(S: TreeSpec, U: TreeSpec, reg: FlowRegistry, vein: Vein, triples: Iterable,
                     stages: int, depth: int = 64, fiber: StagePoint = ZEROS) -> Trace:
    trace = start_construction(S, U, reg, vein, triples, stages, depth, fiber)
    for s in range(stages):
        if all(r.idle for r in trace.runs.values()):
            break
        construction_stage(trace, s)
    return trace


# the output tree ----------------------------------------------------------------------------

def in_T(trace: Trace, tau: str, stage: int) -> bool:
    """Membership in T_s: S, prefixes of copy images, or extensions of the level-s frontier."""
    if tau in trace.S:
        return True
    for t in trace.triples:
        anchors = trace.anchors_at(t, stage)
        if is_image_prefix(anchors, trace.S, tau):
            return True
        level = len(trace.rhos[t]) + stage
        if level <= trace.depth and len(tau) > level and is_image_prefix(anchors, trace.S, tau[:level]):
            return True
    return False


def build_T(trace: Trace, stage: int, depth: int) -> list:
    """T_s materialized up to ``depth`` (cones included, so keep depth small)."""
    out, lvl = [], [""]
    for _ in range(depth + 1):
        lvl = [w for w in lvl if in_T(trace, w, stage)]
        out.extend(lvl)
        lvl = [w + c for w in lvl for c in "01"]
    return out


# invariant checks ----------------------------------------------------------------------------

def _comparable(a: str, b: str) -> bool:
    return a.startswith(b) or b.startswith(a)


def check_monomorphism(trace: Trace) -> list:
    bad = []
    for t, snaps in trace.snapshots.items():
        for s, anchors in snaps:
            for a, img in anchors.items():
                if not a:
                    continue
                parent = gamma(anchors, a[:-1])
                if not (img.startswith(parent) and len(img) > len(parent)):
                    bad.append((t, s, a, "not above parent image"))
                sib = a[:-1] + ("1" if a[-1] == "0" else "0")
                if sib in trace.S and _comparable(gamma(anchors, sib), img):
                    bad.append((t, s, a, "comparable with sibling image"))
    return bad


def check_non_injury(trace: Trace) -> list:
    bad = []
    acts = {(tuple(r["triple"]), r["stage"]): r["payload"] for r in trace.records if r["event"] == "attention"}
    for t, snaps in trace.snapshots.items():
        for (s0, before), (s1, after) in zip(snaps, snaps[1:]):
            act = acts.get((t, s1 - 1))
            if act is None:
                bad.append((t, s1, "copy changed without attention"))
                continue
            alpha = act["alpha"]
            for a, img in after.items():
                if a == alpha:
                    if not img.startswith(gamma(before, alpha)):
                        bad.append((t, s1, a, "acted image does not extend the old one"))
                elif before.get(a) != img:
                    bad.append((t, s1, a, "untouched anchor moved"))
            for a in before:
                if a not in after and not (a.startswith(alpha) and a != alpha):
                    bad.append((t, s1, a, "anchor dropped outside the acted cone"))
    return bad


def check_rho_prefixing(trace: Trace) -> list:
    bad = []
    rhos = list(trace.rhos.items())
    for x in range(len(rhos)):
        for y in range(x + 1, len(rhos)):
            if _comparable(rhos[x][1], rhos[y][1]):
                bad.append((rhos[x][0], rhos[y][0], "rho strings comparable"))
    for t, snaps in trace.snapshots.items():
        for s, anchors in snaps:
            for a, img in anchors.items():
                if not img.startswith(trace.rhos[t]):
                    bad.append((t, s, a, "image does not extend rho"))
    return bad


def _active_stages(trace: Trace, t) -> range:
    return range(0, max(0, trace.depth - len(trace.rhos[t]) + 1))


def check_T_shrinks(trace: Trace) -> list:
    """T_{s+1} is inside T_s: new frontier strings hang below the old frontier and
    every image prefix of the next stage is already in T_s."""
    bad = list(trace.violations)
    for t in trace.triples:
        for s in _active_stages(trace, t):
            if s + 1 > trace.stages:
                break
            now, nxt = trace.anchors_at(t, s), trace.anchors_at(t, s + 1)
            level = len(trace.rhos[t]) + s
            if level + 1 > trace.depth:
                break
            cur = set(image_prefixes_at(now, trace.S, level))
            for sigma in image_prefixes_at(nxt, trace.S, level + 1):
                if sigma[:-1] not in cur:
                    bad.append((t, s, sigma, "frontier grew"))
            if nxt is now:
                continue
            for n in range(level + 2):
                for tau in image_prefixes_at(nxt, trace.S, n):
                    if not in_T(trace, tau, s):
                        bad.append((t, s, tau, "image prefix outside T_s"))
    return bad


def check_S_inside(trace: Trace, stride: int = 8) -> list:
    bad = []
    members = trace.S.members(trace.depth)
    for s in range(0, trace.stages + 1, stride):
        for w in members:
            if not in_T(trace, w, s):
                bad.append((s, w))
    return bad


def check_comb_closure(trace: Trace) -> list:
    bad = []
    for r in trace.records:
        if r["event"] != "attention":
            continue
        sigma, s = r["payload"]["sigma"], r["stage"]
        if not in_T(trace, sigma, s):
            bad.append((tuple(r["triple"]), s, sigma))
    return bad


def check_all(trace: Trace) -> dict:
    return {
        "monomorphism": check_monomorphism(trace),
        "non_injury": check_non_injury(trace),
        "rho_prefixing": check_rho_prefixing(trace),
        "T_shrinks": check_T_shrinks(trace),
        "S_inside": check_S_inside(trace),
        "comb_closure": check_comb_closure(trace),
    }


# requirement diagnostics --------------------------------------------------------------------

def final_image(trace: Trace, triple, x: StagePoint) -> StagePoint | None:
    """gamma(x) under the final copy, for an eventually periodic x in S."""
    w = x.eventually_periodic
    if w is None:
        raise ValueError("final_image needs an eventually periodic point")
    anchors = trace.final_anchors(triple)
    longest = max((a for a in anchors if x.take(len(a)) == a), key=len)
    pre = anchors[longest]
    # x = x[:len(longest)] + rest; the rest is eventually periodic again
    k = len(longest)
    prefix, period = w
    if k <= len(prefix):
        return StagePoint(pre + prefix[k:], period)
    r = (k - len(prefix)) % len(period)
    return StagePoint(pre, period[r:] + period[:r])


def check_requirement_N(trace: Trace, triple, x: StagePoint, precision: int, budget: int) -> str:
    """escaped / still-inside / inconclusive for the flow output on gamma(x)."""
    if budget <= 0:
        return "inconclusive"
    triple = tuple(triple)
    run = trace.runs[triple]
    moving = [a for a, info in trace.stabilization(triple).items()
              if info["moving"] and x.take(len(a)) == a]
    if moving:
        return "inconclusive"
    y = final_image(trace, triple, x)
    try:
        ev = eval_flow(run.flow, y, precision, budget)
    except Undefined:
        return "escaped"
    except BudgetExhausted:
        return "inconclusive"
    ustage = trace.u_stage(triple, budget)
    for k in range(len(ev.bits) + 1):
        if ev.bits[:k] not in ustage:
            return "escaped"
    return "still-inside"

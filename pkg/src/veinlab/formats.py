"""Text formats: flow files, registry manifests, tree files.

Flow files are TOML with four tables::

    name = "DIR"

    [tree]                      # node pattern -> "rN leaf" | "rN fin W[@C]" | "rN fin never" | "rN inf"
    "<>" = "r2 fin 2"
    "<*>" = "r0 leaf"           # "*" matches any outcome at that position

    [questions]                 # "atoms A | B", "family NAME" or "eta FAMILY"
    "<>" = "atoms ends 1 | true"

    [leaves]                    # leaf-function text
    "<0>" = "const 0"
    "<1>" = "const 1"

    [oracle]
    point = "/0"

A top-level ``totalize = true`` asks for the weak totalization of the flow
described by the tables, so ``flow totalize`` writes the input back out with
that flag set.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import predicates as P
from .construction import TreeSpec, parse_tree_text
from .factory import FlowRegistry, question_from_spec, weak_totalize
from .flow import DEFAULT_OUTCOME_BOUND, EtaQuestion, Flow, FlowNode, StagePoint
from .tree_core import format_path
from .vein import INF


class FormatError(ValueError):
    """A malformed input file; carries the 1-based line and column when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None, source: str = ""):
        self.message, self.line, self.col, self.source = message, line, col, source
        where = source or "<input>"
        if line is not None:
            where += f":{line}:{col or 1}"
        super().__init__(f"{where}: {message}")


def _locate(text: str, needle: str, section: str | None = None) -> tuple:
    """Line/column of the first occurrence of needle (after the [section]
    header, if given), for error messages."""
    start = 0
    if section is not None:
        m = re.search(rf"^\s*\[{re.escape(section)}\]", text, re.M)
        start = m.end() if m else 0
    at = text.find(needle, start)
    if at < 0:
        return None, None
    line = text.count("\n", 0, at) + 1
    col = at - (text.rfind("\n", 0, at) + 1) + 1
    return line, col


def load_toml(text: str, source: str = "") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = str(exc).split(" (at")[0]
        raise FormatError(msg, line, col, source) from None


# node patterns -----------------------------------------------------------------------

_PATTERN = re.compile(r"^<\s*((?:(?:\d+|\*)\s*(?:,\s*(?:\d+|\*)\s*)*)?)>$")


def parse_pattern(text: str) -> tuple:
    m = _PATTERN.match(text.strip())
    if not m:
        raise ValueError(f"bad node pattern {text!r}")
    body = m.group(1).strip()
    if not body:
        return ()
    return tuple("*" if p.strip() == "*" else int(p) for p in body.split(","))


def format_pattern(pat: tuple) -> str:
    return "<" + ",".join(str(p) for p in pat) + ">"


def _match(patterns: dict, path: tuple):
    """Most specific pattern matching path: exact components win, leftmost first."""
    best = None
    for pat, val in patterns.items():
        if len(pat) != len(path):
            continue
        if all(p == "*" or p == c for p, c in zip(pat, path)):
            key = tuple(p == "*" for p in pat)
            if best is None or key < best[0]:
                best = (key, val)
    return None if best is None else best[1]


@dataclass(frozen=True)
class NodeShape:
    rank: int
    mark: str  # leaf / fin / inf
    width: int = 0
    ready_at: int | None = 0

    @classmethod
    def parse(cls, text: str) -> "NodeShape":
        words = text.split()
        if len(words) < 2 or not re.fullmatch(r"r[012]", words[0]):
            raise ValueError(f"node shape must look like 'r2 fin 2', got {text!r}")
        rank, mark = int(words[0][1:]), words[1]
        if mark == "leaf" and len(words) == 2:
            return cls(rank, "leaf")
        if mark == "inf" and len(words) == 2:
            return cls(rank, "inf", 0)
        if mark == "fin" and len(words) == 3:
            if words[2] == "never":
                return cls(rank, "fin", 0, None)
            w, _, c = words[2].partition("@")
            if not w.isdigit() or int(w) < 1 or (c and not c.isdigit()):
                raise ValueError(f"bad width {words[2]!r}")
            return cls(rank, "fin", int(w), int(c) if c else 0)
        raise ValueError(f"bad node shape {text!r}")

    def __str__(self):
        if self.mark == "fin":
            if self.ready_at is None:
                return f"r{self.rank} fin never"
            return f"r{self.rank} fin {self.width}" + (f"@{self.ready_at}" if self.ready_at else "")
        return f"r{self.rank} {self.mark}"


def parse_question(text: str, rank: int):
    head, _, rest = text.strip().partition(" ")
    if head == "eta":
        return EtaQuestion(P.eta_family(rest.strip()))
    return question_from_spec(text, rank)


# flow files ---------------------------------------------------------------------------

@dataclass
class FlowSpec:
    name: str = ""
    shapes: dict = field(default_factory=dict)  # pattern -> NodeShape
    questions: dict = field(default_factory=dict)  # pattern -> text
    leaves: dict = field(default_factory=dict)  # pattern -> text
    oracle: str = "/0"
    outcome_bound: int = DEFAULT_OUTCOME_BOUND
    totalize: bool = False

    def build(self) -> Flow:
        shapes, qs, ls = self.shapes, self.questions, self.leaves
        qcache: dict = {}

        def resolve(path):
            shape = _match(shapes, path)
            if shape is None:
                raise KeyError(f"no [tree] entry for {format_path(path)}")
            if shape.mark == "leaf":
                text = _match(ls, path)
                return FlowNode(shape.rank, 0, 0, None, P.leaf_function(text) if text else P.NOWHERE)
            if shape.ready_at is None:
                # width never announced: nothing below, nothing output
                return FlowNode(shape.rank, 0, 0, None, P.NOWHERE)
            text = _match(qs, path)
            if text is None:
                raise KeyError(f"no [questions] entry for {format_path(path)}")
            key = (text, shape.rank)
            q = qcache.get(key)
            if q is None:
                q = qcache[key] = parse_question(text, shape.rank)
            width = INF if shape.mark == "inf" else shape.width
            return FlowNode(shape.rank, width, shape.ready_at, q)

        flow = Flow(resolve, oracle=StagePoint.parse(self.oracle), outcome_bound=self.outcome_bound,
                    name=self.name)
        return weak_totalize(flow) if self.totalize else flow


def parse_flow_text(text: str, source: str = "") -> FlowSpec:
    data = load_toml(text, source)
    spec = FlowSpec(name=str(data.get("name", "")))
    unknown = set(data) - {"name", "tree", "questions", "leaves", "oracle", "outcome_bound", "totalize"}
    if unknown:
        key = sorted(unknown)[0]
        raise FormatError(f"unknown key {key!r}", *_locate(text, key), source)
    spec.outcome_bound = int(data.get("outcome_bound", DEFAULT_OUTCOME_BOUND))
    spec.totalize = bool(data.get("totalize", False))

    def table(name, conv):
        out = {}
        for key, val in data.get(name, {}).items():
            try:
                out[parse_pattern(key)] = conv(val)
            except (ValueError, TypeError) as exc:
                raise FormatError(f"[{name}] {key}: {exc}", *_locate(text, f'"{key}"', name), source) from None
        return out

    spec.shapes = table("tree", lambda v: NodeShape.parse(str(v)))
    if () not in spec.shapes:
        raise FormatError("[tree] needs a root entry \"<>\"", *_locate(text, "[tree]"), source)
    ranks = {pat: sh.rank for pat, sh in spec.shapes.items()}

    spec.questions = table("questions", str)
    for pat, q in spec.questions.items():
        try:
            parse_question(q, ranks.get(pat, 1))
        except ValueError as exc:
            raise FormatError(f"[questions] {format_pattern(pat)}: {exc}",
                              *_locate(text, format_pattern(pat), "questions"), source) from None
    spec.leaves = table("leaves", str)
    for pat, lf in spec.leaves.items():
        try:
            P.leaf_function(lf)
        except (ValueError, IndexError) as exc:
            raise FormatError(f"[leaves] {format_pattern(pat)}: {exc}",
                              *_locate(text, format_pattern(pat), "leaves"), source) from None
    oracle = data.get("oracle", {}).get("point", "/0")
    try:
        StagePoint.parse(oracle)
    except ValueError as exc:
        raise FormatError(str(exc), *_locate(text, "point", "oracle"), source) from None
    spec.oracle = oracle
    return spec


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_flow_text(spec: FlowSpec) -> str:
    order = lambda pat: (len(pat), tuple((1, 0) if p == "*" else (0, p) for p in pat))
    lines = []
    if spec.name:
        lines.append(f"name = {_quote(spec.name)}")
    if spec.outcome_bound != DEFAULT_OUTCOME_BOUND:
        lines.append(f"outcome_bound = {spec.outcome_bound}")
    if spec.totalize:
        lines.append("totalize = true")
    for title, items in (("tree", spec.shapes), ("questions", spec.questions), ("leaves", spec.leaves)):
        lines.append("")
        lines.append(f"[{title}]")
        for pat in sorted(items, key=order):
            lines.append(f"{_quote(format_pattern(pat))} = {_quote(str(items[pat]))}")
    lines += ["", "[oracle]", f"point = {_quote(spec.oracle)}"]
    return "\n".join(lines).lstrip("\n") + "\n"


def read_flow(path: str) -> FlowSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_flow_text(fh.read(), source=path)


# registry manifests ----------------------------------------------------------------------

_REGISTRY_KEYS = ("branchings", "rank2", "rank1", "etas", "leaves", "machines")


def parse_registry_text(text: str, source: str = "") -> FlowRegistry:
    """A TOML manifest with one list per registry component, plus ``oracle``,
    ``join_oracle`` and ``outcome_bound``."""
    data = load_toml(text, source)
    unknown = set(data) - set(_REGISTRY_KEYS) - {"oracle", "join_oracle", "outcome_bound"}
    if unknown:
        key = sorted(unknown)[0]
        raise FormatError(f"unknown key {key!r}", *_locate(text, key), source)
    kw = {k: list(data.get(k, [])) for k in _REGISTRY_KEYS}
    kw["leaves"] = [[x] if isinstance(x, str) else list(x) for x in kw["leaves"]]
    checks = (
        ("rank2", lambda v: question_from_spec(v, 2)),
        ("rank1", lambda v: question_from_spec(v, 1)),
        ("etas", P.eta_family),
        ("machines", P.leaf_function),
    )
    for key, check in checks:
        for v in kw[key]:
            try:
                check(v)
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{key}: {exc}", *_locate(text, v), source) from None
    for group in kw["leaves"]:
        for v in group:
            try:
                P.leaf_function(v)
            except (ValueError, IndexError) as exc:
                raise FormatError(f"leaves: {exc}", *_locate(text, v), source) from None
    try:
        reg = FlowRegistry(**kw, oracle=StagePoint.parse(data.get("oracle", "/0")),
                           join_oracle=StagePoint.parse(data["join_oracle"]) if "join_oracle" in data else None,
                           outcome_bound=int(data.get("outcome_bound", DEFAULT_OUTCOME_BOUND)))
    except ValueError as exc:
        raise FormatError(str(exc), None, None, source) from None
    return reg


def read_registry(path: str) -> FlowRegistry:
    with open(path, encoding="utf-8") as fh:
        return parse_registry_text(fh.read(), source=path)


def read_tree(path: str) -> TreeSpec:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_tree_text(text, name=path)
    except ValueError as exc:
        m = re.match(r"line (\d+): (.*)", str(exc))
        if m:
            raise FormatError(m.group(2), int(m.group(1)), 1, path) from None
        raise FormatError(str(exc), None, None, path) from None

"""Finite strings over the naturals, prefix-closed trees and the left-of order.

Paths are plain tuples of ints.  Binary strings are plain ``str`` objects over
``'0'``/``'1'`` so that slicing and ``startswith`` stay cheap in the hot loops.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

NodePath = tuple  # tuple[int, ...]

ROOT: NodePath = ()

_PATH_RE = re.compile(r"^<\s*((?:\d+\s*(?:,\s*\d+\s*)*)?)>$")


def is_prefix(sigma: NodePath, tau: NodePath) -> bool:
    return len(sigma) <= len(tau) and tuple(tau[: len(sigma)]) == tuple(sigma)


def first_difference(sigma, tau) -> int | None:
    """Index of the first disagreement, or None when one extends the other."""
    for k, (a, b) in enumerate(zip(sigma, tau)):
        if a != b:
            return k
    return None


def left_of(sigma: NodePath, tau: NodePath) -> bool:
    """Non-strict left-of: equal, or smaller at the first difference.

    A proper prefix is never left of its extension (nor the other way round).
    """
    if tuple(sigma) == tuple(tau):
        return True
    k = first_difference(sigma, tau)
    return k is not None and sigma[k] < tau[k]


def strictly_left_of(sigma: NodePath, tau: NodePath) -> bool:
    k = first_difference(sigma, tau)
    return k is not None and sigma[k] < tau[k]


def comparable(sigma, tau) -> bool:
    return first_difference(sigma, tau) is None


def format_path(path: NodePath) -> str:
    return "<" + ",".join(str(n) for n in path) + ">"


def parse_path(text: str) -> NodePath:
    m = _PATH_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a node path: {text!r}")
    body = m.group(1).strip()
    if not body:
        return ()
    return tuple(int(part) for part in body.split(","))


def is_bitstring(s: str) -> bool:
    return all(c in "01" for c in s)


def bits_to_path(bits: str) -> NodePath:
    return tuple(int(c) for c in bits)


def path_to_bits(path: NodePath) -> str:
    if any(n not in (0, 1) for n in path):
        raise ValueError(f"path {format_path(path)} is not binary")
    return "".join(str(n) for n in path)


def prefixes(path) -> Iterator:
    """All prefixes, shortest first, including the empty one and path itself."""
    for k in range(len(path) + 1):
        yield path[:k]


@dataclass(frozen=True)
class FiniteTree:
    """A finite prefix-closed set of paths, stored sorted."""

    nodes: tuple = field(default=())

    def __post_init__(self):
        canon = tuple(sorted(set(tuple(n) for n in self.nodes), key=lambda p: (len(p), p)))
        object.__setattr__(self, "nodes", canon)
        members = set(canon)
        for node in canon:
            if node and node[:-1] not in members:
                raise ValueError(f"not prefix-closed: parent of {format_path(node)} missing")

    @classmethod
    def closure_of(cls, paths: Iterable) -> "FiniteTree":
        acc = set()
        for p in paths:
            acc.update(prefixes(tuple(p)))
        return cls(tuple(acc))

    def __contains__(self, path) -> bool:
        return tuple(path) in self._members()

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def _members(self) -> frozenset:
        cached = self.__dict__.get("_member_cache")
        if cached is None:
            cached = frozenset(self.nodes)
            object.__setattr__(self, "_member_cache", cached)
        return cached

    def children(self, path) -> list:
        path = tuple(path)
        return [n for n in self.nodes if len(n) == len(path) + 1 and n[:-1] == path]

    def height(self) -> int:
        return max((len(n) for n in self.nodes), default=0)


def leaves(tree: FiniteTree | Iterable) -> set:
    """The prefix-maximal members.  An empty tree has no leaves."""
    nodes = set(tuple(n) for n in tree)
    parents = {n[:-1] for n in nodes if n}
    return {n for n in nodes if n not in parents}

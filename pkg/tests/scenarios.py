"""Seeded construction scenarios shared by the construction, verifier and
reduction tests.  Runs are cached per process since each costs about a second."""
from __future__ import annotations

import functools
from dataclasses import dataclass

from veinlab.construction import final_image, parse_tree_text, run_construction
from veinlab.factory import FlowRegistry
from veinlab.flow import StagePoint
from veinlab.vein import LEAF, V1w, V21, concat

STAGES = 5000
DEPTH = 64

SPARSE = "%where ones_le 1\n"
ZEROS_ONLY = "%where ones_le 0\n"
SPARSE_NO_LEADING_ONE = "%where ones_le 1\n%avoid 1\n"


def _registry(leaves, rank2=("atoms ends 1 | true", "atoms has 11 | true"), machines=("identity",)):
    return FlowRegistry(branchings=["2@0", "3@1"], rank2=list(rank2), rank1=["family first_one_at"],
                        etas=["unary 1"], leaves=[list(l) for l in leaves], machines=list(machines))


LAGS = (("lag 5",), ("lag 5", "lag 6"))
MIXED_LEAVES = (("lag 4",), ("lag 3", "flip"))
TRIPLES = ((0, 0, 0), (1, 0, 0), (0, 1, 0))


@dataclass(frozen=True)
class Scenario:
    name: str
    s_tree: str
    u_tree: str
    leaves: tuple
    vein_name: str
    triples: tuple = TRIPLES
    machines: tuple = ("identity",)

    @property
    def vein(self):
        return VEINS[self.vein_name]

    def registry(self):
        return _registry(self.leaves, machines=self.machines)


VEINS = {"leaf": LEAF, "v21": V21, "v1w": V1w, "v21-v1w": concat(V21, V1w), "v1w-v21": concat(V1w, V21)}

SCENARIOS = (
    Scenario("sparse-leaf", SPARSE, "%depth 12\n", LAGS, "leaf"),
    Scenario("sparse-v21", SPARSE, "%depth 12\n", LAGS, "v21"),
    Scenario("sparse-v1w", SPARSE, "%depth 12\n", LAGS, "v1w"),
    Scenario("sparse-v21-v1w", SPARSE, "%depth 12\n", LAGS, "v21-v1w"),
    Scenario("sparse-v1w-v21", SPARSE, "%depth 12\n", LAGS, "v1w-v21"),
    Scenario("zeros-v21", ZEROS_ONLY, "%depth 8\n", MIXED_LEAVES, "v21"),
    Scenario("zeros-v21-v1w", ZEROS_ONLY, "%depth 8\n", MIXED_LEAVES, "v21-v1w"),
    Scenario("late-v21", SPARSE_NO_LEADING_ONE, "%depth 10\n", LAGS, "v21"),
    Scenario("late-v1w-v21", SPARSE_NO_LEADING_ONE, "%depth 10\n", MIXED_LEAVES, "v1w-v21"),
    Scenario("wrong-index-v21", SPARSE, "%depth 12\n", LAGS, "v21", machines=("identity", "flip"),
             triples=((0, 0, 1), (1, 1, 1))),
    Scenario("shallow-u-leaf", SPARSE, "%depth 3\n", MIXED_LEAVES, "leaf"),
)

BY_NAME = {sc.name: sc for sc in SCENARIOS}


def run(sc: Scenario, stages: int = STAGES, depth: int = DEPTH):
    return run_construction(parse_tree_text(sc.s_tree), parse_tree_text(sc.u_tree), sc.registry(), sc.vein,
                            sc.triples, stages, depth)


@functools.lru_cache(maxsize=None)
def trace(name: str):
    return run(BY_NAME[name])


# points of S used as samples: finitely many ones, then zeros forever
S_SAMPLES = ("/0", "1/0", "01/0", "0001/0", "00000001/0")


def s_points(sc: Scenario) -> list:
    S = parse_tree_text(sc.s_tree)
    out = []
    for text in S_SAMPLES:
        x = StagePoint.parse(text)
        if all(x.take(n) in S for n in range(DEPTH)):
            out.append(x)
    return out


def stabilized_images(tr, sc: Scenario) -> list:
    """(triple, x, gamma(x)) for sample points whose copy no longer moves."""
    out = []
    for t in tr.triples:
        moving = [a for a, info in tr.stabilization(t).items() if info["moving"]]
        for x in s_points(sc):
            if any(x.take(len(a)) == a for a in moving):
                continue
            out.append((t, x, final_image(tr, t, x)))
    return out

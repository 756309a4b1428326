"""R-vine tree sequences as edge lists, plus the union-find used to build them.

A structure is a list of tree levels; an edge at level t pairs two
conditioned variables given a conditioning set of size t-1. Levels are
spanning trees of the previous level's edges, and every level-t edge's
endpoints must be level-(t-1) edges whose variable supports differ in
exactly one element (the proximity rule, checked on supports).

Edge lists, not structure matrices, are the canonical representation here;
nothing in the package ever needs the matrix form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from vinebc.errors import DataError


@dataclass(frozen=True, order=True)
class Edge:
    """Vine edge (a, b | C): conditioned pair plus conditioning set."""

    conditioned: tuple[int, int]
    conditioning: tuple[int, ...] = ()

    def __post_init__(self):
        a, b = self.conditioned
        if a == b:
            raise DataError(f"conditioned pair must be distinct, got ({a}, {b})")
        if a > b:
            object.__setattr__(self, "conditioned", (b, a))
        cond = tuple(sorted(self.conditioning))
        if len(set(cond)) != len(cond):
            raise DataError(f"conditioning set has duplicates: {self.conditioning}")
        if a in cond or b in cond:
            raise DataError(f"conditioned variable also in conditioning set: {self}")
        object.__setattr__(self, "conditioning", cond)

    @property
    def level(self) -> int:
        return len(self.conditioning) + 1

    @property
    def support(self) -> frozenset:
        """Variable support V(e) = {a, b} union C."""
        return frozenset(self.conditioned) | frozenset(self.conditioning)

    def __str__(self):
        a, b = self.conditioned
        if self.conditioning:
            return f"({a},{b}|{','.join(str(c) for c in self.conditioning)})"
        return f"({a},{b})"


def edge_support(e: Edge) -> frozenset:
    """Variable support of an edge."""
    return e.support


class DisjointSetUnion:
    """Union-find with path compression and union by rank."""

    def __init__(self, nodes):
        self._parent = {n: n for n in nodes}
        self._rank = {n: 0 for n in nodes}

    def find(self, node):
        try:
            parent = self._parent[node]
        except KeyError:
            raise DataError(f"unknown DSU node {node!r}") from None
        root = node
        while self._parent[root] != root:
            root = self._parent[root]
        while parent != root:
            self._parent[node] = root
            node, parent = parent, self._parent[parent]
        return root

    def union(self, a, b) -> bool:
        """Merge the components of a and b; False if already the same."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1
        return True

    @property
    def n_components(self) -> int:
        return sum(1 for n, p in self._parent.items() if n == p)


@dataclass(frozen=True)
class VineStructure:
    """Sequence of tree levels over a fixed variable set.

    ``len(levels)`` is the effective truncation level; a structure with
    ``d - 1`` levels is complete. Variables are arbitrary integer labels
    so that structures over disjoint variable sets can be merged.
    """

    variables: tuple[int, ...]
    levels: tuple[tuple[Edge, ...], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(sorted(self.variables)))
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in self.levels))

    @property
    def dimension(self) -> int:
        return len(self.variables)

    @property
    def truncation(self) -> int:
        return len(self.levels)

    @property
    def is_complete(self) -> bool:
        return len(self.levels) == self.dimension - 1

    def edges(self):
        for level in self.levels:
            yield from level

    def truncate(self, level: int) -> "VineStructure":
        return VineStructure(self.variables, self.levels[:level])


def validate(structure: VineStructure) -> list[str]:
    """Check R-vine validity; returns a list of violations (empty = ok).

    Per level: conditioning-set sizes, node counts, spanning tree
    (connected, acyclic). Between levels: each edge's endpoints must be
    previous-level edges whose supports are ``C + {a}`` and ``C + {b}``.
    """
    violations = []
    d = structure.dimension
    varset = set(structure.variables)
    if structure.truncation > max(d - 1, 0):
        violations.append(f"{structure.truncation} levels for dimension {d}")

    prev_supports: dict[frozenset, Edge] = {}
    for t, level in enumerate(structure.levels, start=1):
        level_errors = len(violations)
        expected = d - t
        if len(level) != expected:
            violations.append(f"level {t}: expected {expected} edges, found {len(level)}")
        seen_supports = {}
        if t == 1:
            nodes = list(varset)
        else:
            nodes = list(prev_supports)
        dsu = DisjointSetUnion(nodes)
        for e in level:
            if e.level != t:
                violations.append(f"level {t}: edge {e} has conditioning size {len(e.conditioning)}")
                continue
            if e.support in seen_supports:
                violations.append(f"level {t}: duplicate support for {e} and {seen_supports[e.support]}")
                continue
            seen_supports[e.support] = e
            a, b = e.conditioned
            if t == 1:
                if a not in varset or b not in varset:
                    violations.append(f"level 1: edge {e} uses unknown variables")
                    continue
                ends = (a, b)
            else:
                cond = frozenset(e.conditioning)
                ua, ub = cond | {a}, cond | {b}
                if ua not in prev_supports or ub not in prev_supports:
                    violations.append(f"level {t}: edge {e} violates proximity (missing endpoint)")
                    continue
                ends = (ua, ub)
            if not dsu.union(*ends):
                violations.append(f"level {t}: edge {e} closes a cycle")
        if len(violations) == level_errors and dsu.n_components != 1:
            violations.append(f"level {t}: graph not connected ({dsu.n_components} components)")
        prev_supports = seen_supports
    return violations


# ---------------------------------------------------------------------------
# structure file format: one line per edge, "level,a,b,C1;C2;...[,bridge]"


def save_structure(structure: VineStructure, path, bridge_edges=None) -> None:
    """Write the edge-list file; bridging edges get a trailing flag."""
    bridges = set(bridge_edges or ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for t, level in enumerate(structure.levels, start=1):
            for e in level:
                a, b = e.conditioned
                cond = ";".join(str(c) for c in e.conditioning)
                row = [t, a, b, cond]
                if bridges:
                    row.append(1 if e in bridges else 0)
                writer.writerow(row)


def load_structure(path) -> tuple[VineStructure, set[Edge]]:
    """Read an edge-list file; returns (structure, bridging edges)."""
    levels: dict[int, list[Edge]] = {}
    bridges: set[Edge] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) not in (4, 5):
                raise DataError(f"bad structure line: {row}")
            t, a, b = int(row[0]), int(row[1]), int(row[2])
            cond = tuple(int(c) for c in row[3].split(";") if c.strip() != "")
            e = Edge((a, b), cond)
            if e.level != t:
                raise DataError(f"edge {e} inconsistent with its declared level {t}")
            levels.setdefault(t, []).append(e)
            if len(row) == 5 and row[4].strip() == "1":
                bridges.add(e)
    if not levels:
        raise DataError(f"structure file {path} has no edges")
    max_t = max(levels)
    if set(levels) != set(range(1, max_t + 1)):
        raise DataError("structure file has gaps in its level sequence")
    variables = sorted({v for e in levels[1] for v in e.support})
    ordered = tuple(tuple(levels[t]) for t in range(1, max_t + 1))
    return VineStructure(tuple(variables), ordered), bridges

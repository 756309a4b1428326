"""Merging several vine structures into one valid R-vine.

The merge works level by level: edge lists of the inputs are concatenated,
then each level is completed into a spanning tree by bridging edges. A
bridging candidate is any non-adjacent node pair whose variable supports
differ in exactly one element; candidates are ordered by the bridging
policy (manual picks first, then random, Kendall-tau-scored, or
lexicographic) and added greedily under a union-find acyclicity check.

Node supports are held as integer bitmasks internally; the quadratic
candidate scan is the dominant cost and stays well under a second for a
hundred variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from vinebc.errors import ConfigError, DataError, NumericalError
from vinebc.pair_copula import PairCopulaSpec, fit_pair
from vinebc.structure import DisjointSetUnion, Edge, VineStructure, validate
from vinebc.vine import ConditionalMargins, FitOptions, VineModel, fit_vine


@dataclass(frozen=True)
class LevelNode:
    """A node of the level-t graph: a variable (t=1) or a level-(t-1) edge."""

    index: int
    support: frozenset
    edge: Edge | None = None


@dataclass(frozen=True)
class BridgeCandidate:
    """An admissible bridging edge between two level nodes."""

    node_u: int
    node_v: int
    conditioned: tuple[int, int]
    conditioning: tuple[int, ...]

    @property
    def edge(self) -> Edge:
        return Edge(self.conditioned, self.conditioning)


@dataclass
class BridgingPolicy:
    """How bridging candidates are ordered during completion.

    ``manual_edges`` are always preferred, in the order given, regardless of
    mode; each must be an admissible candidate at its level. The remaining
    candidates follow the mode: deterministic lexicographic order
    ("manual"), a seeded shuffle ("random"), or descending |Kendall tau| of
    the candidates' conditional pseudo-observations ("tau", which requires
    the pseudo-observation matrix). ``strict_lemma`` restricts candidates to
    cross-vine pairs at level 1 and, above, to pairs with at least one
    previous bridging edge as endpoint.
    """

    mode: str = "manual"
    manual_edges: tuple = ()
    seed: int = 0
    pseudo_obs: np.ndarray | None = None
    pseudo_vars: tuple[int, ...] | None = None
    strict_lemma: bool = False

    def __post_init__(self):
        if self.mode not in ("manual", "random", "tau"):
            raise ConfigError(f"unknown bridging policy mode {self.mode!r}")
        if self.mode == "tau" and self.pseudo_obs is None:
            raise ConfigError("tau policy requires a pseudo-observation matrix")
        self.manual_edges = tuple(self.manual_edges)


@dataclass
class MergeResult:
    structure: VineStructure
    bridge_edges: tuple[Edge, ...]
    pair_copulas: dict | None = None
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# level-wise algorithms


def concat_levels(vines: list[VineStructure]) -> VineStructure:
    """Concatenate edge lists level by level (step 1 of the merge).

    Inputs must have pairwise disjoint variable sets. The result keeps all
    within-vine edges verbatim and is padded with empty levels up to the
    merge target: dimension-1 when every input is complete, otherwise the
    largest input truncation.
    """
    if len(vines) < 2:
        raise DataError("need at least two vines to merge")
    variables: list[int] = []
    seen = set()
    for v in vines:
        overlap = seen & set(v.variables)
        if overlap:
            raise DataError(f"variable indices overlap across vines: {sorted(overlap)}")
        seen |= set(v.variables)
        variables.extend(v.variables)
    d = len(variables)
    if all(v.is_complete for v in vines):
        target_t = d - 1
    else:
        target_t = max(v.truncation for v in vines)
    levels = []
    for t in range(1, target_t + 1):
        merged = []
        for v in vines:
            if t <= v.truncation:
                merged.extend(v.levels[t - 1])
        levels.append(tuple(merged))
    return VineStructure(tuple(variables), tuple(levels))


def reconstruct_and_init_dsu(
    t: int, e_prev: list[Edge], e_t: list[Edge], variables=None
) -> tuple[list[LevelNode], DisjointSetUnion]:
    """Build the level-t node set and seed the union-find with E_t.

    At level 1 nodes are the variables themselves; above, one node per
    previous-level edge, identified by its variable support. Cycles already
    present in E_t and edges whose endpoints match no node are errors.
    """
    if t == 1:
        if variables is None:
            raise DataError("level 1 reconstruction needs the variable set")
        nodes = [LevelNode(i, frozenset((v,))) for i, v in enumerate(sorted(variables))]
    else:
        if not e_prev:
            raise DataError(f"level {t} reconstruction needs previous-level edges")
        nodes = [LevelNode(i, e.support, e) for i, e in enumerate(e_prev)]
    by_support = {}
    for node in nodes:
        if node.support in by_support:
            raise DataError(f"duplicate node support {sorted(node.support)}")
        by_support[node.support] = node.index
    dsu = DisjointSetUnion(range(len(nodes)))
    for e in e_t:
        a, b = e.conditioned
        cond = frozenset(e.conditioning)
        try:
            ia, ib = by_support[cond | {a}], by_support[cond | {b}]
        except KeyError:
            raise DataError(f"edge {e} endpoints cannot be matched to level-{t} nodes") from None
        if not dsu.union(ia, ib):
            raise DataError(f"cycle detected in current level at edge {e}")
    return nodes, dsu


def build_candidates(
    nodes: list[LevelNode], e_t: list[Edge], bridge_endpoints: set | None = None
) -> list[BridgeCandidate]:
    """Enumerate admissible bridging edges from support overlaps.

    A non-adjacent node pair is admissible when the supports share all but
    one variable each; the two leftovers form the conditioned pair and the
    intersection the conditioning set. ``bridge_endpoints`` (node indices)
    switches on the strict variant requiring one endpoint from that set.
    """
    var_bits: dict[int, int] = {}
    masks = []
    for node in nodes:
        m = 0
        for v in node.support:
            bit = var_bits.setdefault(v, 1 << len(var_bits))
            m |= bit
        masks.append(m)
    bit_var = {bit: v for v, bit in var_bits.items()}

    adjacent = set()
    support_to_index = {node.support: node.index for node in nodes}
    for e in e_t:
        a, b = e.conditioned
        cond = frozenset(e.conditioning)
        ia = support_to_index.get(cond | {a})
        ib = support_to_index.get(cond | {b})
        if ia is not None and ib is not None:
            adjacent.add((min(ia, ib), max(ia, ib)))

    size = len(nodes[0].support) if nodes else 0
    out = []
    n = len(nodes)
    for i in range(n):
        mi = masks[i]
        for j in range(i + 1, n):
            if (i, j) in adjacent:
                continue
            if bridge_endpoints is not None and i not in bridge_endpoints and j not in bridge_endpoints:
                continue
            inter = mi & masks[j]
            if inter.bit_count() != size - 1:
                continue
            a = bit_var[mi & ~inter]
            b = bit_var[masks[j] & ~inter]
            cond = tuple(sorted(bit_var[1 << k] for k in range(inter.bit_length()) if inter >> k & 1))
            out.append(BridgeCandidate(i, j, (min(a, b), max(a, b)), cond))
    return out


def greedy_augment(
    e_t: list[Edge],
    candidates: list[BridgeCandidate],
    dsu: DisjointSetUnion,
    target: int,
    trace: list | None = None,
) -> tuple[list[Edge], list[Edge]]:
    """Add candidates in order while they join distinct components.

    Returns the augmented edge list and the accepted bridging edges. Stops
    at ``target`` edges or when candidates run out; a shortfall is the
    driver's problem, not an error here.
    """
    e_t = list(e_t)
    accepted = []
    for cand in candidates:
        if len(e_t) >= target:
            break
        if dsu.find(cand.node_u) == dsu.find(cand.node_v):
            if trace is not None:
                trace.append(("skip-cycle", cand.edge))
            continue
        dsu.union(cand.node_u, cand.node_v)
        e_t.append(cand.edge)
        accepted.append(cand.edge)
        if trace is not None:
            trace.append(("accept", cand.edge))
    return e_t, accepted


# ---------------------------------------------------------------------------
# candidate ordering


def _order_candidates(candidates, policy, level, margins, rng):
    """Manual picks first (validated), then the policy's ordering."""
    manual_at_level = [e for e in policy.manual_edges if e.level == level]
    by_edge = {c.edge: c for c in candidates}
    head = []
    for e in manual_at_level:
        if e not in by_edge:
            raise DataError(f"manual bridging edge {e} is not an admissible candidate at level {level}")
        head.append(by_edge[e])
    rest = [c for c in candidates if c.edge not in set(manual_at_level)]
    if policy.mode == "random":
        rng.shuffle(rest)
    elif policy.mode == "tau":
        def score(c):
            a, b = c.conditioned
            s = frozenset(c.conditioning)
            za = margins.margin(a, s | {a})
            zb = margins.margin(b, s | {b})
            tau = stats.kendalltau(za, zb).statistic
            return 0.0 if not np.isfinite(tau) else abs(tau)

        rest.sort(key=lambda c: (-score(c), c.conditioned, c.conditioning))
    else:
        rest.sort(key=lambda c: (c.conditioned, c.conditioning))
    return head + rest


# ---------------------------------------------------------------------------
# driver


def merge(
    vines: list[VineStructure],
    policy: BridgingPolicy | None = None,
    input_copulas: dict | None = None,
    fit_options: FitOptions | None = None,
    max_level: int | None = None,
) -> MergeResult:
    """Merge vines into one valid R-vine by level-wise completion.

    Concatenates the input edge lists, then for every level short of its
    ``d - t`` target reconstructs the node set, enumerates bridging
    candidates, and adds them greedily in policy order. Fails naming the
    level if a level cannot be completed. With a "tau" policy the
    conditional pseudo-observations are propagated through the input
    copulas (independence where not given), and bridging pair copulas are
    fitted as edges are accepted.
    """
    policy = policy or BridgingPolicy()
    base = concat_levels(vines)
    variables = base.variables
    target_t = base.truncation if max_level is None else min(base.truncation, max_level)
    rng = np.random.default_rng(policy.seed)

    margins = None
    fitted: dict[Edge, PairCopulaSpec] | None = None
    if policy.mode == "tau":
        if policy.pseudo_vars is None:
            pseudo_vars = variables
        else:
            pseudo_vars = tuple(policy.pseudo_vars)
        if set(pseudo_vars) != set(variables):
            raise ConfigError("pseudo-observation columns must cover the merged variables")
        margins = ConditionalMargins(policy.pseudo_obs, pseudo_vars)
        fitted = dict(input_copulas or {})
        indep = PairCopulaSpec("independence")
        for v in vines:
            for e in v.edges():
                spec = fitted.get(e, indep)
                fitted[e] = spec
                margins.register(e, spec)

    # strict-lemma bookkeeping: variable -> input vine at level 1
    vine_of = {}
    for k, v in enumerate(vines):
        for var in v.variables:
            vine_of[var] = k

    for e in policy.manual_edges:
        if e.level > target_t:
            raise DataError(f"manual bridging edge {e} targets level {e.level} beyond {target_t}")

    levels = [list(lv) for lv in base.levels[:target_t]]
    bridges: list[Edge] = []
    trace: list[dict] = []
    prev_level: list[Edge] = []
    for t in range(1, target_t + 1):
        e_t = levels[t - 1]
        m_t = len(variables) - t
        record = {"level": t, "target": m_t, "existing": len(e_t), "events": []}
        if len(e_t) >= m_t:
            stray = [e for e in policy.manual_edges if e.level == t]
            if stray:
                raise DataError(
                    f"manual bridging edge {stray[0]} targets level {t}, which is already complete"
                )
        if len(e_t) < m_t:
            nodes, dsu = reconstruct_and_init_dsu(t, prev_level, e_t, variables)
            strict = None
            if policy.strict_lemma:
                if t == 1:
                    strict = set()  # handled by pair filter below
                else:
                    bridge_set = set(bridges)
                    strict = {n.index for n in nodes if n.edge in bridge_set}
            candidates = build_candidates(nodes, e_t, bridge_endpoints=strict if t > 1 else None)
            if policy.strict_lemma and t == 1:
                candidates = [
                    c
                    for c in candidates
                    if vine_of[c.conditioned[0]] != vine_of[c.conditioned[1]]
                ]
            record["candidates"] = [c.edge for c in candidates]
            ordered = _order_candidates(candidates, policy, t, margins, rng)
            new_e_t, accepted = greedy_augment(e_t, ordered, dsu, m_t, trace=record["events"])
            if len(new_e_t) < m_t:
                raise DataError(f"merge failed at level {t}: {len(new_e_t)} of {m_t} edges")
            levels[t - 1] = new_e_t
            bridges.extend(accepted)
            if margins is not None:
                for e in accepted:
                    p, q = e.conditioned
                    cond = frozenset(e.conditioning)
                    spec = fit_pair(
                        margins.margin(p, cond | {p}),
                        margins.margin(q, cond | {q}),
                        family_set=(fit_options or FitOptions()).family_set,
                        criterion=(fit_options or FitOptions()).criterion,
                    )
                    fitted[e] = spec
                    margins.register(e, spec)
        trace.append(record)
        prev_level = levels[t - 1]

    structure = VineStructure(variables, tuple(tuple(lv) for lv in levels))
    return MergeResult(structure, tuple(bridges), fitted, trace)


def complete_structure(structure: VineStructure, seed: int | None = None) -> VineStructure:
    """Extend a truncated structure to a complete one (d-1 levels).

    Uses the bridging machinery on a single vine; deterministic
    (lexicographic candidate order) unless a seed asks for a random
    completion. Existing levels are preserved verbatim.
    """
    d = structure.dimension
    if structure.is_complete:
        return structure
    policy = BridgingPolicy(mode="manual" if seed is None else "random", seed=seed or 0)
    levels = [list(lv) for lv in structure.levels] + [
        [] for _ in range(d - 1 - structure.truncation)
    ]
    rng = np.random.default_rng(policy.seed)
    prev_level: list[Edge] = []
    for t in range(1, d):
        e_t = levels[t - 1]
        m_t = d - t
        if len(e_t) < m_t:
            nodes, dsu = reconstruct_and_init_dsu(t, prev_level, e_t, structure.variables)
            candidates = build_candidates(nodes, e_t)
            ordered = _order_candidates(candidates, policy, t, None, rng)
            new_e_t, _ = greedy_augment(e_t, ordered, dsu, m_t)
            if len(new_e_t) < m_t:
                raise NumericalError(f"completion failed at level {t}")
            levels[t - 1] = new_e_t
        prev_level = levels[t - 1]
    return VineStructure(structure.variables, tuple(tuple(lv) for lv in levels))


def random_structure(d: int, truncation: int | None = None, seed: int = 0) -> VineStructure:
    """A uniform-ish random valid R-vine on variables 1..d (for testing/demos)."""
    empty = VineStructure(tuple(range(1, d + 1)), ())
    full = complete_structure(empty, seed=seed)
    if truncation is not None:
        return full.truncate(truncation)
    return full


# ---------------------------------------------------------------------------
# the NVC fit: location-specific vines bridged through a variable-specific vine


def nvc_fit(
    u: np.ndarray,
    n_vars: int,
    n_locs: int,
    bridging_location: int,
    options: FitOptions | None = None,
    adjacency_pairs: set | None = None,
) -> tuple[VineModel, MergeResult]:
    """Fit the nested vine model on a PIT matrix with (i-1)*s+j column order.

    Fits one spatial vine per variable over its location columns (first
    tree optionally restricted to grid-adjacent pairs), one variable vine
    over the bridging location's columns, merges the spatial vines with the
    variable vine's edges as preferred bridging candidates (Kendall-tau
    ordering beyond them), fits the bridging pair copulas on conditional
    pseudo-observations, and truncates at ``options.truncation``.
    """
    options = options or FitOptions()
    u = np.asarray(u, dtype=float)
    d, s = n_vars, n_locs
    if u.ndim != 2 or u.shape[1] != d * s:
        raise DataError(f"expected {d * s} columns for {d} variables x {s} locations")
    if not 1 <= bridging_location <= s:
        raise DataError(f"bridging location {bridging_location} out of 1..{s}")

    def col_id(i, j):
        return (i - 1) * s + j

    input_copulas: dict[Edge, PairCopulaSpec] = {}
    location_vines = []
    var_options = FitOptions(
        family_set=options.family_set,
        criterion=options.criterion,
    )
    for i in range(1, d + 1):
        cols = [col_id(i, j) - 1 for j in range(1, s + 1)]
        labels = tuple(col_id(i, j) for j in range(1, s + 1))
        if s == 1:
            location_vines.append(VineStructure(labels, ()))
            continue
        whitelist = None
        if adjacency_pairs is not None:
            whitelist = {
                frozenset((col_id(i, ja), col_id(i, jb))) for ja, jb in adjacency_pairs
            }
        opts = FitOptions(
            family_set=options.family_set,
            criterion=options.criterion,
            truncation=options.truncation,
            first_tree_whitelist=whitelist,
        )
        vm = fit_vine(u[:, cols], opts, variables=labels)
        location_vines.append(vm.structure)
        input_copulas.update(vm.pair_copulas)

    manual: tuple[Edge, ...] = ()
    if d >= 2:
        var_cols = [col_id(i, bridging_location) - 1 for i in range(1, d + 1)]
        var_labels = tuple(col_id(i, bridging_location) for i in range(1, d + 1))
        var_vm = fit_vine(u[:, var_cols], var_options, variables=var_labels)
        keep = options.truncation if options.truncation is not None else d - 1
        manual = tuple(e for level in var_vm.structure.levels[:keep] for e in level)

    if d == 1:
        structure = location_vines[0]
        model = VineModel(structure, dict(input_copulas))
        if options.truncation is not None:
            model = model.truncate(options.truncation)
        return model, MergeResult(model.structure, ())

    policy = BridgingPolicy(
        mode="tau",
        manual_edges=manual,
        pseudo_obs=u,
        pseudo_vars=tuple(range(1, d * s + 1)),
    )
    result = merge(
        location_vines,
        policy,
        input_copulas=input_copulas,
        fit_options=options,
        max_level=options.truncation,
    )
    copulas = {e: result.pair_copulas[e] for e in result.structure.edges()}
    model = VineModel(result.structure, copulas)
    return model, result

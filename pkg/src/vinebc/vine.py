"""Fitted vine copulas: structure selection, density, Rosenblatt transforms.

Structure selection is the greedy tree-by-tree approach: each level is a
maximum spanning tree on absolute empirical Kendall tau, pair copulas are
fitted per edge, and pseudo-observations are propagated with the fitted
h-functions.

The Rosenblatt transform and its inverse are exact for vines. Truncated
models are completed above the truncation level with independence pair
copulas (a deterministic, lexicographic completion that leaves the
distribution unchanged); the resulting conditioning order is recorded with
the model so the transform is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from vinebc.errors import DataError, NumericalError
from vinebc.pair_copula import EPS, FAMILIES, PairCopulaSpec, fit_pair, hfunc, hinv
from vinebc.pair_copula import log_density as pc_log_density
from vinebc.structure import DisjointSetUnion, Edge, VineStructure


class ConditionalMargins:
    """Cache of conditional PITs keyed by (variable, variable support).

    ``margin(x, S)`` is the conditional CDF value of variable ``x`` given
    the variables ``S - {x}``, computed recursively through the registered
    pair copulas. The recursion relies on the R-vine property that for any
    support there is exactly one edge, with ``x`` in its conditioned pair.
    """

    def __init__(self, u=None, variables=None):
        self._cache: dict[tuple[int, frozenset], np.ndarray] = {}
        self._by_support: dict[frozenset, tuple[Edge, PairCopulaSpec]] = {}
        if u is not None:
            u = np.clip(np.asarray(u, dtype=float), EPS, 1.0 - EPS)
            for idx, var in enumerate(variables):
                self._cache[(var, frozenset((var,)))] = u[:, idx]

    def set_base(self, var: int, values: np.ndarray) -> None:
        self._cache[(var, frozenset((var,)))] = values

    def set_margin(self, var: int, support: frozenset, values: np.ndarray) -> None:
        self._cache[(var, support)] = values

    def register(self, edge: Edge, spec: PairCopulaSpec) -> None:
        self._by_support[edge.support] = (edge, spec)

    def spec_of(self, edge: Edge) -> PairCopulaSpec:
        return self._by_support[edge.support][1]

    def margin(self, var: int, support: frozenset) -> np.ndarray:
        key = (var, support)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        try:
            edge, spec = self._by_support[support]
        except KeyError:
            raise NumericalError(f"no edge with support {sorted(support)}") from None
        p, q = edge.conditioned
        cond = frozenset(edge.conditioning)
        zp = self.margin(p, cond | {p})
        zq = self.margin(q, cond | {q})
        if var == p:
            val = hfunc(spec, zp, zq, "cond_on_second")
        elif var == q:
            val = hfunc(spec, zp, zq, "cond_on_first")
        else:
            raise NumericalError(f"variable {var} not conditioned in edge {edge}")
        self._cache[key] = val
        return val


@dataclass
class FitOptions:
    """Options for structure selection and pair-copula estimation."""

    family_set: tuple = FAMILIES
    truncation: int | None = None
    criterion: str = "aic"
    first_tree_whitelist: set | None = None  # unordered variable-label pairs


@dataclass(eq=False)
class VineModel:
    """A vine structure plus one fitted pair copula per edge."""

    structure: VineStructure
    pair_copulas: dict[Edge, PairCopulaSpec]
    variable_labels: tuple[str, ...] | None = None
    _transform: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        edges = set(self.structure.edges())
        have = set(self.pair_copulas)
        if edges != have:
            missing = edges - have
            extra = have - edges
            raise DataError(
                f"pair copulas do not match structure: missing {len(missing)}, extra {len(extra)}"
            )
        if self.variable_labels is not None and len(self.variable_labels) != self.dimension:
            raise DataError("one label per variable required")

    @property
    def variables(self) -> tuple[int, ...]:
        return self.structure.variables

    @property
    def dimension(self) -> int:
        return self.structure.dimension

    @property
    def truncation(self) -> int:
        return self.structure.truncation

    @property
    def sampling_order(self) -> tuple[int, ...]:
        return self._transform_parts()[0]

    def truncate(self, level: int) -> "VineModel":
        struct = self.structure.truncate(level)
        copulas = {e: s for e, s in self.pair_copulas.items() if e.level <= level}
        return VineModel(struct, copulas, self.variable_labels)

    # -- transform plumbing -------------------------------------------------

    def _transform_parts(self):
        """(order, chains, completed levels): computed once, then cached."""
        if self._transform is None:
            completed = _complete_levels(self.structure)
            order, chains = _peel(completed, self.variables)
            self._transform = (order, chains, completed)
        return self._transform

    def _margins(self, u) -> ConditionalMargins:
        cm = ConditionalMargins(u, self.variables)
        for edge, spec in self.pair_copulas.items():
            cm.register(edge, spec)
        return cm

    def _margins_full(self, u) -> ConditionalMargins:
        cm = self._margins(u)
        _, _, completed = self._transform_parts()
        indep = PairCopulaSpec("independence")
        for level in completed[self.truncation :]:
            for edge in level:
                cm.register(edge, indep)
        return cm

    # -- convenience methods (module-level functions do the work) ----------

    def log_density(self, u):
        return log_density(self, u)

    def rosenblatt(self, u):
        return rosenblatt(self, u)

    def inverse_rosenblatt(self, w):
        return inverse_rosenblatt(self, w)

    def simulate(self, n, seed):
        return simulate(self, n, seed)


def _complete_levels(structure: VineStructure) -> list[list[Edge]]:
    """Structure levels extended to d-1 with a deterministic completion.

    The added levels carry independence copulas, so the distribution is
    unchanged; they exist only to give the Rosenblatt recursion a full
    conditioning order.
    """
    from vinebc.merge import complete_structure

    if structure.is_complete:
        return [list(lv) for lv in structure.levels]
    return [list(lv) for lv in complete_structure(structure).levels]


def _peel(levels: list[list[Edge]], variables) -> tuple[tuple[int, ...], dict]:
    """Conditioning order and per-variable edge chains of a complete vine.

    Repeatedly takes the top edge, removes the larger of its conditioned
    variables together with the one edge per level where it appears
    conditioned, and recurses on what is left. In two dimensions this
    leaves w = (u1, h(u2|u1)).
    """
    remaining = [list(lv) for lv in levels]
    order: list[int] = []
    chains: dict[int, list[Edge]] = {}
    left = set(variables)
    for k in range(len(variables) - 1, 0, -1):
        top = remaining[k - 1]
        if len(top) != 1:
            raise NumericalError(f"level {k} of a complete vine must have one edge")
        v = max(top[0].conditioned)
        chain = []
        for lv in remaining[:k]:
            matches = [e for e in lv if v in e.conditioned]
            if len(matches) != 1:
                raise NumericalError("structure is not a valid R-vine (peeling failed)")
            chain.append(matches[0])
            lv.remove(matches[0])
        order.append(v)
        chains[v] = chain
        left.discard(v)
    last = left.pop()
    order.append(last)
    chains[last] = []
    return tuple(order), chains


def _as_matrix(u, d):
    u = np.asarray(u, dtype=float)
    squeeze = u.ndim == 1
    if squeeze:
        u = u.reshape(1, -1)
    if u.shape[1] != d:
        raise DataError(f"expected {d} columns, got {u.shape[1]}")
    return u, squeeze


# ---------------------------------------------------------------------------
# fitting


def fit_vine(u, options: FitOptions | None = None, variables=None) -> VineModel:
    """Greedy tree-by-tree vine fit on (0,1) pseudo-observations.

    Level 1 is a maximum spanning tree on |empirical Kendall tau| over all
    column pairs (restricted to ``first_tree_whitelist`` when given); each
    further level repeats the construction on the h-function
    pseudo-observations over the proximity-admissible pairs.
    """
    options = options or FitOptions()
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise DataError("fit_vine expects an n x d matrix")
    n, d = u.shape
    if n < 30:
        raise DataError(f"need at least 30 rows to fit a vine, got {n}")
    if variables is None:
        variables = tuple(range(1, d + 1))
    variables = tuple(variables)
    if len(variables) != d:
        raise DataError("one variable label per column required")

    cm = ConditionalMargins(u, variables)
    max_level = d - 1 if options.truncation is None else min(options.truncation, d - 1)
    levels: list[list[Edge]] = []
    copulas: dict[Edge, PairCopulaSpec] = {}

    def _tau(x, y):
        t = stats.kendalltau(x, y).statistic
        return 0.0 if not np.isfinite(t) else abs(t)

    # level 1: variables as nodes
    whitelist = options.first_tree_whitelist
    if whitelist is not None:
        whitelist = {frozenset(p) for p in whitelist}
    scored = []
    for i in range(d):
        for j in range(i + 1, d):
            a, b = variables[i], variables[j]
            if whitelist is not None and frozenset((a, b)) not in whitelist:
                continue
            w = _tau(cm.margin(a, frozenset((a,))), cm.margin(b, frozenset((b,))))
            scored.append((-w, a, b))
    scored.sort()
    dsu = DisjointSetUnion(variables)
    level1: list[Edge] = []
    for _, a, b in scored:
        if dsu.union(a, b):
            level1.append(Edge((a, b)))
            if len(level1) == d - 1:
                break
    if len(level1) < d - 1:
        raise DataError("first-tree whitelist does not connect all variables")

    prev = level1
    for t in range(1, max_level + 1):
        if t >= 2:
            # proximity-admissible pairs of previous-level edges
            scored2 = []
            for i in range(len(prev)):
                for j in range(i + 1, len(prev)):
                    ei, ej = prev[i], prev[j]
                    inter = ei.support & ej.support
                    if len(inter) != len(ei.support) - 1:
                        continue
                    (a,) = ei.support - inter
                    (b,) = ej.support - inter
                    cand = Edge((a, b), tuple(inter))
                    w = _tau(
                        cm.margin(a, inter | {a}),
                        cm.margin(b, inter | {b}),
                    )
                    scored2.append((-w, cand, ei.support, ej.support))
            scored2.sort(key=lambda r: (r[0], r[1]))
            dsu = DisjointSetUnion([e.support for e in prev])
            level_t: list[Edge] = []
            for _, cand, su, sv in scored2:
                if dsu.union(su, sv):
                    level_t.append(cand)
                    if len(level_t) == d - t:
                        break
            if len(level_t) < d - t:
                raise NumericalError(f"could not span level {t} during selection")
            prev = level_t
        for e in prev:
            p, q = e.conditioned
            cond = frozenset(e.conditioning)
            spec = fit_pair(
                cm.margin(p, cond | {p}),
                cm.margin(q, cond | {q}),
                family_set=options.family_set,
                criterion=options.criterion,
            )
            copulas[e] = spec
            cm.register(e, spec)
        levels.append(list(prev))

    structure = VineStructure(variables, tuple(tuple(lv) for lv in levels))
    return VineModel(structure, copulas)


# ---------------------------------------------------------------------------
# density and transforms


def log_density(model: VineModel, u):
    """Log density of the vine copula at u (rows of a matrix, or one point)."""
    u, squeeze = _as_matrix(u, model.dimension)
    cm = model._margins(u)
    total = np.zeros(u.shape[0])
    for level in model.structure.levels:
        for e in level:
            p, q = e.conditioned
            cond = frozenset(e.conditioning)
            zp = cm.margin(p, cond | {p})
            zq = cm.margin(q, cond | {q})
            total = total + pc_log_density(cm.spec_of(e), zp, zq)
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite vine log-density")
    return float(total[0]) if squeeze else total


def rosenblatt(model: VineModel, u):
    """Map u ~ model to independent uniforms via the h-function recursion.

    Component j of the output is the conditional CDF of variable
    ``order[j]`` given all variables later in the model's conditioning
    order; under the model the components are iid uniform.
    """
    u, squeeze = _as_matrix(u, model.dimension)
    order, _, _ = model._transform_parts()
    cm = model._margins_full(u)
    col = {v: i for i, v in enumerate(model.variables)}
    out = np.empty_like(u)
    for j, v in enumerate(order):
        support = frozenset(order[j:])
        out[:, col[v]] = cm.margin(v, support)
    out = np.clip(out, EPS, 1.0 - EPS)
    return out[0] if squeeze else out


def inverse_rosenblatt(model: VineModel, w):
    """Inverse of :func:`rosenblatt`: maps iid uniforms to the model."""
    w, squeeze = _as_matrix(w, model.dimension)
    w = np.clip(w, EPS, 1.0 - EPS)
    order, chains, _ = model._transform_parts()
    cm = model._margins_full(None)  # bases filled variable by variable below
    col = {v: i for i, v in enumerate(model.variables)}

    for j in range(len(order) - 1, -1, -1):
        v = order[j]
        chain = chains[v]
        z = w[:, col[v]]
        inner = []  # conditional values of v along the chain, top to bottom
        for e in reversed(chain):
            inner.append(z)
            p, q = e.conditioned
            cond = frozenset(e.conditioning)
            spec = cm.spec_of(e)
            if v == p:
                m = cm.margin(q, cond | {q})
                z = hinv(spec, z, m, "cond_on_second")
            else:
                m = cm.margin(p, cond | {p})
                z = hinv(spec, z, m, "cond_on_first")
        cm.set_base(v, z)
        for e, z_e in zip(reversed(chain), inner):
            cm.set_margin(v, e.support, z_e)
    out = np.empty_like(w)
    for v in order:
        out[:, col[v]] = cm.margin(v, frozenset((v,)))
    return out[0] if squeeze else out


def simulate(model: VineModel, n: int, seed: int):
    """n iid rows from the model; deterministic for a fixed seed."""
    if n < 1:
        raise DataError("n must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(n, model.dimension))
    return inverse_rosenblatt(model, w)


# ---------------------------------------------------------------------------
# model file IO


def save_model(model: VineModel, path, bridge_edges=None) -> None:
    """Write the model file: header plus one line per edge with its copula."""
    bridges = set(bridge_edges or ())
    order, _, _ = model._transform_parts()
    lines = [
        "vinebc-model,1",
        "variables," + ";".join(str(v) for v in model.variables),
        f"truncation,{model.truncation}",
        "order," + ";".join(str(v) for v in order),
    ]
    if model.variable_labels is not None:
        lines.append("labels," + ";".join(model.variable_labels))
    for t, level in enumerate(model.structure.levels, start=1):
        for e in level:
            spec = model.pair_copulas[e]
            a, b = e.conditioned
            cond = ";".join(str(c) for c in e.conditioning)
            par = "" if spec.parameter is None else format(spec.parameter, ".17g")
            lines.append(
                f"edge,{t},{a},{b},{cond},{spec.family},{spec.rotation},{par},"
                f"{1 if e in bridges else 0}"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> VineModel:
    """Read a model file written by :func:`save_model`."""
    header: dict[str, str] = {}
    levels: dict[int, list[Edge]] = {}
    copulas: dict[Edge, PairCopulaSpec] = {}
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != "vinebc-model,1":
            raise DataError(f"not a vinebc model file: {path}")
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            kind, _, rest = raw.partition(",")
            if kind == "edge":
                f = rest.split(",")
                t, a, b = int(f[0]), int(f[1]), int(f[2])
                cond = tuple(int(c) for c in f[3].split(";") if c.strip() != "")
                fam, rot = f[4], int(f[5])
                par = None if f[6] == "" else float(f[6])
                e = Edge((a, b), cond)
                if e.level != t:
                    raise DataError(f"edge {e} inconsistent with level {t}")
                levels.setdefault(t, []).append(e)
                copulas[e] = PairCopulaSpec(fam, par, rot)
            else:
                header[kind] = rest
    variables = tuple(int(v) for v in header["variables"].split(";"))
    trunc = int(header["truncation"])
    labels = tuple(header["labels"].split(";")) if "labels" in header else None
    ordered = tuple(tuple(levels[t]) for t in sorted(levels))
    if len(ordered) != trunc:
        raise DataError("model file truncation does not match its edge lines")
    structure = VineStructure(variables, ordered)
    return VineModel(structure, copulas, labels)

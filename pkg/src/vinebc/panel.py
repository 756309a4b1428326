"""Space-time panels and grid adjacency.

A panel stores observations for ``d`` variables at ``s`` locations over time
as a dense ``n_time x (d*s)`` array. Column ``(i-1)*s + j`` (1-based) holds
variable ``i`` at location ``j``; every routine downstream relies on this
ordering, so it is owned here and nowhere else.
"""

from __future__ import annotations

import csv
import datetime as dt
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from vinebc.errors import DataError

PERIOD_TAGS = ("rc", "mc", "mp", "rp")


@dataclass(frozen=True)
class VariableDef:
    """Variable descriptor: name plus the marginal family used for it."""

    name: str
    family: str = "gaussian"


@dataclass(frozen=True)
class Location:
    """Grid location with id and coordinates in degrees."""

    id: str
    lat: float = 0.0
    lon: float = 0.0


def column_index(i: int, j: int, s: int) -> int:
    """1-based column of variable ``i`` at location ``j`` among ``s`` locations.

    Follows the ``(i-1)*s + j`` layout used throughout: all locations of
    variable 1 first, then all locations of variable 2, and so on.
    """
    if i < 1 or j < 1 or j > s:
        raise DataError(f"index out of range: variable {i}, location {j} of {s}")
    return (i - 1) * s + j


@dataclass
class PanelDataset:
    """Dense multivariate space-time panel.

    Parameters
    ----------
    values : ndarray, shape (n_time, d*s)
        Observations, columns ordered by ``column_index``.
    variables : list of VariableDef
    locations : list of Location
    dates : list of datetime.date, strictly increasing
    period_tag : {"rc", "mc", "mp", "rp"} or None
    """

    values: np.ndarray
    variables: list[VariableDef]
    locations: list[Location]
    dates: list[dt.date]
    period_tag: str | None = None
    require_monotonic_time: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("panel values must be a 2-d array")
        d, s = len(self.variables), len(self.locations)
        if self.values.shape[1] != d * s:
            raise DataError(
                f"expected {d * s} columns for {d} variables x {s} locations, "
                f"got {self.values.shape[1]}"
            )
        if self.values.shape[0] != len(self.dates):
            raise DataError("number of rows does not match number of dates")
        if not np.all(np.isfinite(self.values)):
            t, k = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite value at date {self.dates[t]}, column {k + 1}")
        if self.period_tag is not None and self.period_tag not in PERIOD_TAGS:
            raise DataError(f"unknown period tag {self.period_tag!r}")
        if self.require_monotonic_time and len(self.dates) > 1:
            prev = self.dates[0]
            for date in self.dates[1:]:
                if date <= prev:
                    raise DataError(f"dates not strictly increasing at {date}")
                prev = date
        self.values.setflags(write=False)

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_locs(self) -> int:
        return len(self.locations)

    @property
    def day_of_year(self) -> np.ndarray:
        """Day-of-year 1..366 per row."""
        return np.array([d.timetuple().tm_yday for d in self.dates])

    def column(self, i: int, j: int) -> np.ndarray:
        """Series for variable ``i`` at location ``j`` (both 1-based)."""
        return self.values[:, column_index(i, j, self.n_locs) - 1]

    def variable_block(self, i: int) -> np.ndarray:
        """All-location block (n_time x s) of variable ``i`` (1-based)."""
        s = self.n_locs
        return self.values[:, (i - 1) * s : i * s]

    def with_values(self, values: np.ndarray, period_tag: str | None = None) -> "PanelDataset":
        """Copy of this panel with new values (and optionally a new tag)."""
        return PanelDataset(
            values=np.array(values),
            variables=self.variables,
            locations=self.locations,
            dates=list(self.dates),
            period_tag=self.period_tag if period_tag is None else period_tag,
            require_monotonic_time=self.require_monotonic_time,
        )


def load_panel(
    path,
    variables: list[VariableDef] | None = None,
    locations: list[Location] | None = None,
    period_tag: str | None = None,
) -> PanelDataset:
    """Read a long-format delimited panel file.

    The file must be UTF-8 text with a header naming the columns
    ``date,variable,location,value`` (ISO-8601 dates). Variable and location
    order may be given explicitly; otherwise it follows first appearance.
    Missing cells are an error listing the offending (variable, location, date).
    """
    cells: dict[tuple[str, str, dt.date], float] = {}
    var_order: list[str] = []
    loc_order: list[str] = []
    dates_seen: dict[dt.date, None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "variable", "location", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"panel file must have columns {sorted(required)}")
        for row in reader:
            date = dt.date.fromisoformat(row["date"].strip())
            var = row["variable"].strip()
            loc = row["location"].strip()
            key = (var, loc, date)
            if key in cells:
                raise DataError(f"duplicate cell for {var}, {loc}, {date}")
            cells[key] = float(row["value"])
            if var not in var_order:
                var_order.append(var)
            if loc not in loc_order:
                loc_order.append(loc)
            dates_seen.setdefault(date)

    if not cells:
        raise DataError(f"panel file {path} contains no rows")

    if variables is None:
        variables = [VariableDef(v) for v in var_order]
    if locations is None:
        locations = [Location(l) for l in loc_order]
    known_locs = {l.id for l in locations}
    for v, l, _ in cells:
        if l not in known_locs:
            raise DataError(f"unknown location id {l!r}")
        if v not in {vd.name for vd in variables}:
            raise DataError(f"unknown variable {v!r}")

    dates = sorted(dates_seen)
    d, s = len(variables), len(locations)
    values = np.full((len(dates), d * s), np.nan)
    for t, date in enumerate(dates):
        for i, var in enumerate(variables, start=1):
            for j, loc in enumerate(locations, start=1):
                key = (var.name, loc.id, date)
                if key not in cells:
                    raise DataError(
                        f"missing cell: variable {var.name}, location {loc.id}, date {date}"
                    )
                values[t, column_index(i, j, s) - 1] = cells[key]
    return PanelDataset(values, variables, locations, dates, period_tag)


def save_panel(panel: PanelDataset, path) -> None:
    """Write a panel in the long format read by :func:`load_panel`.

    Values are written with 17 significant digits so that a load/save
    round trip is bit-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "variable", "location", "value"])
        s = panel.n_locs
        for t, date in enumerate(panel.dates):
            for i, var in enumerate(panel.variables, start=1):
                for j, loc in enumerate(panel.locations, start=1):
                    val = panel.values[t, column_index(i, j, s) - 1]
                    writer.writerow([date.isoformat(), var.name, loc.id, format(val, ".17g")])


def split_periods(
    panel: PanelDataset,
    calib: tuple[dt.date, dt.date],
    proj: tuple[dt.date, dt.date],
    tags: tuple[str, str] | None = None,
) -> tuple[PanelDataset, PanelDataset]:
    """Split a panel into calibration and projection sub-panels.

    ``calib`` and ``proj`` are inclusive date ranges; they must be disjoint
    and each must select at least one row. Tags default to ``("rc", "rp")``
    or ``("mc", "mp")`` depending on the source tag, when one is set.
    """
    (c0, c1), (p0, p1) = calib, proj
    if c0 > c1 or p0 > p1:
        raise DataError("date ranges must have start <= end")
    if not (c1 < p0 or p1 < c0):
        raise DataError("calibration and projection ranges overlap")
    if tags is None:
        if panel.period_tag and panel.period_tag[0] == "m":
            tags = ("mc", "mp")
        else:
            tags = ("rc", "rp")

    dates = np.array(panel.dates)
    calib_mask = np.array([(c0 <= d <= c1) for d in panel.dates])
    proj_mask = np.array([(p0 <= d <= p1) for d in panel.dates])
    if not calib_mask.any():
        raise DataError(f"calibration range {c0}..{c1} selects no rows")
    if not proj_mask.any():
        raise DataError(f"projection range {p0}..{p1} selects no rows")

    def take(mask, tag):
        return PanelDataset(
            values=panel.values[mask],
            variables=panel.variables,
            locations=panel.locations,
            dates=[d for d, m in zip(panel.dates, mask) if m],
            period_tag=tag,
        )

    return take(calib_mask, tags[0]), take(proj_mask, tags[1])


@dataclass(frozen=True)
class GridAdjacency:
    """Undirected adjacency over location ids (shared grid-cell borders)."""

    edges: frozenset[frozenset]

    @staticmethod
    def from_pairs(pairs) -> "GridAdjacency":
        edges = set()
        for a, b in pairs:
            if a == b:
                raise DataError(f"self-loop on location {a!r}")
            edges.add(frozenset((a, b)))
        return GridAdjacency(frozenset(edges))

    def neighbors(self, node) -> set:
        out = set()
        for e in self.edges:
            if node in e:
                out.update(e - {node})
        return out

    def pairs(self) -> list[tuple]:
        return [tuple(sorted(e)) for e in self.edges]


def load_adjacency(path) -> GridAdjacency:
    """Read an adjacency sidecar file with columns ``loc_a,loc_b``."""
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"loc_a", "loc_b"}.issubset(reader.fieldnames):
            raise DataError("adjacency file must have columns loc_a,loc_b")
        for row in reader:
            pairs.append((row["loc_a"].strip(), row["loc_b"].strip()))
    return GridAdjacency.from_pairs(pairs)


def shortest_path_bins(adjacency: GridAdjacency, location_ids: list) -> dict[int, set]:
    """All-pairs shortest path lengths over the adjacency graph, binned.

    Returns a map from graph distance ``r`` to the set of unordered location
    pairs exactly ``r`` adjacency steps apart. The bins partition all
    ``s*(s-1)/2`` pairs; a disconnected graph is an error.
    """
    ids = list(location_ids)
    neighbor_map = {i: set() for i in ids}
    for e in adjacency.edges:
        a, b = tuple(e)
        if a not in neighbor_map or b not in neighbor_map:
            raise DataError(f"adjacency references unknown location in {sorted(e)}")
        neighbor_map[a].add(b)
        neighbor_map[b].add(a)

    bins: dict[int, set] = {}
    for src in ids:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            node = queue.popleft()
            for nb in neighbor_map[node]:
                if nb not in dist:
                    dist[nb] = dist[node] + 1
                    queue.append(nb)
        missing = set(ids) - set(dist)
        if missing:
            raise DataError(f"adjacency graph disconnected: {sorted(missing)} unreachable")
        for other, r in dist.items():
            if other == src:
                continue
            bins.setdefault(r, set()).add(frozenset((src, other)))
    return bins

"""Bias-correction methods: quantile mapping, vine-based correction, and
the full GAM + nested-vine pipeline.

Five config-selectable variants share one engine, differing in three
flags: whether margins are handled by GAM PITs or empirical ranks, whether
the dependence model is one nested joint vine or per-location vines, and
(implied) whether the back-transform carries the modeled mean change.

    method   margins    dependence        applied
    qm       empirical  none              per column
    vbc      empirical  unstructured vine per location
    g_vbc    GAM PITs   unstructured vine per location
    n_vbc    empirical  nested vine       jointly
    gn_vbc   GAM PITs   nested vine       jointly

The alignment step always maps the projection-period PIT vectors through
the projection-period model's Rosenblatt transform and back through the
inverse transform of the reference-calibration model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from vinebc.errors import ConfigError, DataError
from vinebc.gam import GamFit, fit_gam, inverse_pit_delta, pit, reuniformize
from vinebc.merge import nvc_fit
from vinebc.panel import GridAdjacency, PanelDataset, column_index
from vinebc.pair_copula import FAMILIES
from vinebc.vine import FitOptions, fit_vine, inverse_rosenblatt, rosenblatt

METHODS = ("qm", "vbc", "g_vbc", "n_vbc", "gn_vbc")


@dataclass
class BcConfig:
    """Configuration shared by all correction methods."""

    method: str = "gn_vbc"
    bridging_location: str | int | None = None
    truncation: int | None = 22
    family_set: tuple = FAMILIES
    criterion: str = "aic"
    k_time: int = 10
    k_space: int = 20
    lambda_selection: object = "gcv"
    reuniformize_alpha: float = 0.01
    use_adjacency: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.method in ("n_vbc", "gn_vbc") and self.bridging_location is None:
            raise ConfigError(f"method {self.method} requires a bridging location")
        if self.method not in ("n_vbc", "gn_vbc") and self.bridging_location is not None:
            raise ConfigError(f"method {self.method} does not take a bridging location")

    @property
    def use_gam(self) -> bool:
        return self.method in ("g_vbc", "gn_vbc")

    @property
    def use_nvc(self) -> bool:
        return self.method in ("n_vbc", "gn_vbc")

    @property
    def site_wise(self) -> bool:
        return self.method in ("vbc", "g_vbc")


@dataclass
class CorrectionState:
    """Fitted objects a run may expose for serialization and inspection."""

    gam_fits: dict = field(default_factory=dict)  # (dataset, variable name) -> GamFit
    vine_models: dict = field(default_factory=dict)  # dataset -> VineModel
    merge_results: dict = field(default_factory=dict)
    reuniformize_maps: dict = field(default_factory=dict)  # (dataset, column) -> map


# ---------------------------------------------------------------------------
# empirical quantile mapping


def _plot_positions(n: int) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1.0)


def _ecdf(values: np.ndarray, at: np.ndarray) -> np.ndarray:
    srt = np.sort(values)
    return np.interp(at, srt, _plot_positions(len(srt)))


def _equantile(values: np.ndarray, u: np.ndarray) -> np.ndarray:
    srt = np.sort(values)
    return np.interp(u, _plot_positions(len(srt)), srt)


def _qm_column(rc, mc, y, counters) -> np.ndarray:
    """Empirical Q_rc(F_mc(y)) with constant extrapolation in the tails."""
    if len(rc) < 30 or len(mc) < 30:
        raise DataError("quantile mapping needs at least 30 calibration points per column")
    counters["qm_tail_hits"] = counters.get("qm_tail_hits", 0) + int(
        np.sum((y < mc.min()) | (y > mc.max()))
    )
    return _equantile(rc, _ecdf(mc, y))


def run_qm(rc: PanelDataset, mc: PanelDataset, mp: PanelDataset, counters=None) -> PanelDataset:
    """Column-wise empirical quantile mapping (all-data pooling)."""
    counters = counters if counters is not None else {}
    out = np.empty_like(mp.values)
    for k in range(mp.values.shape[1]):
        out[:, k] = _qm_column(rc.values[:, k], mc.values[:, k], mp.values[:, k], counters)
    return mp.with_values(out)


# ---------------------------------------------------------------------------
# margin handling


def _rank_pits(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    out = np.empty_like(values, dtype=float)
    for k in range(values.shape[1]):
        out[:, k] = stats.rankdata(values[:, k], method="average") / (n + 1.0)
    return out


def _covariates_for(panel: PanelDataset, i: int, j: int):
    doy = panel.day_of_year.astype(float)
    loc = panel.locations[j - 1]
    n = panel.n_time
    return doy, np.full(n, loc.lat), np.full(n, loc.lon)


def _stacked_covariates(panel: PanelDataset, loc_indices):
    doy = panel.day_of_year.astype(float)
    d_parts, la_parts, lo_parts = [], [], []
    for j in loc_indices:
        loc = panel.locations[j - 1]
        d_parts.append(doy)
        la_parts.append(np.full(panel.n_time, loc.lat))
        lo_parts.append(np.full(panel.n_time, loc.lon))
    return np.concatenate(d_parts), np.concatenate(la_parts), np.concatenate(lo_parts)


def _fit_gams(panels: dict, var_index: int, loc_indices, config: BcConfig) -> dict:
    """One GAM per dataset for a variable over the given locations."""
    fits = {}
    for name, panel in panels.items():
        y = np.concatenate([panel.column(var_index, j) for j in loc_indices])
        cov = _stacked_covariates(panel, loc_indices)
        family = panel.variables[var_index - 1].family
        fits[name] = fit_gam(
            y, cov, family, k_time=config.k_time, k_space=config.k_space,
            lambda_selection=config.lambda_selection,
        )
    return fits


def _column_rng(seed: int, dataset: str, column: int):
    code = {"rc": 1, "mc": 2, "mp": 3, "rp": 4}.get(dataset, 9)
    return np.random.default_rng([seed, code, column])


# ---------------------------------------------------------------------------
# the shared vine-correction engine


def _vine_correct_block(
    panels: dict,
    loc_indices: list[int],
    config: BcConfig,
    counters: dict,
    state: CorrectionState,
    adjacency_pairs=None,
    j0: int | None = None,
):
    """Correct the (all variables) x (given locations) block of mp.

    Returns the corrected columns, stacked in (i-1)*s+j order over the
    block's own location indexing.
    """
    rc, mc, mp = panels["rc"], panels["mc"], panels["mp"]
    d = rc.n_vars
    s_blk = len(loc_indices)
    cols = [
        column_index(i, j, rc.n_locs) - 1 for i in range(1, d + 1) for j in loc_indices
    ]

    if config.use_gam:
        gam_fits: dict[tuple[str, int], GamFit] = {}
        for i in range(1, d + 1):
            fits = _fit_gams(panels, i, loc_indices, config)
            for name, f in fits.items():
                gam_fits[(name, i)] = f
                state.gam_fits[(name, rc.variables[i - 1].name, tuple(loc_indices))] = f
        u_mats = {}
        for name in ("rc", "mp"):
            panel = panels[name]
            u = np.empty((panel.n_time, d * s_blk))
            for i in range(1, d + 1):
                for bj, j in enumerate(loc_indices):
                    k_blk = (i - 1) * s_blk + bj
                    col = panel.column(i, j)
                    cov = _covariates_for(panel, i, j)
                    rng = _column_rng(config.seed, name, cols[k_blk])
                    u[:, k_blk] = pit(gam_fits[(name, i)], col, cov, rng).values
            u_mats[name] = u
        maps = {}
        for name in ("rc", "mp"):
            for k_blk in range(d * s_blk):
                u_new, m = reuniformize(u_mats[name][:, k_blk], config.reuniformize_alpha)
                u_mats[name][:, k_blk] = u_new
                maps[(name, k_blk)] = m
                state.reuniformize_maps[(name, cols[k_blk])] = m
                if m.applied:
                    counters["reuniformized"] = counters.get("reuniformized", 0) + 1
    else:
        u_mats = {
            "rc": _rank_pits(rc.values[:, cols]),
            "mp": _rank_pits(mp.values[:, cols]),
        }

    # dependence models on the projection-period and reference PITs
    models = {}
    if d * s_blk == 1:
        aligned = u_mats["mp"]
    else:
        opts = FitOptions(
            family_set=config.family_set,
            truncation=config.truncation,
            criterion=config.criterion,
        )
        for name in ("mp", "rc"):
            if config.use_nvc:
                model, merged = nvc_fit(
                    u_mats[name], d, s_blk, j0, opts, adjacency_pairs=adjacency_pairs
                )
                state.merge_results[name] = merged
            else:
                model = fit_vine(u_mats[name], opts)
            models[name] = model
            state.vine_models[name] = model
        w = rosenblatt(models["mp"], u_mats["mp"])
        aligned = inverse_rosenblatt(models["rc"], w)

    # back to the data scale
    out = np.empty((mp.n_time, d * s_blk))
    for i in range(1, d + 1):
        for bj, j in enumerate(loc_indices):
            k_blk = (i - 1) * s_blk + bj
            k_full = cols[k_blk]
            u_col = aligned[:, k_blk]
            if config.use_gam:
                u_col = maps[("rc", k_blk)].inverse(u_col)
                cov = _covariates_for(mp, i, j)
                fits = (gam_fits[("rc", i)], gam_fits[("mc", i)], gam_fits[("mp", i)])
                out[:, k_blk] = inverse_pit_delta(u_col, fits, cov, counters)
            else:
                y_interim = _equantile(mp.values[:, k_full], u_col)
                out[:, k_blk] = _qm_column(
                    rc.values[:, k_full], mc.values[:, k_full], y_interim, counters
                )
    return out, cols


def run_correction(
    rc: PanelDataset,
    mc: PanelDataset,
    mp: PanelDataset,
    config: BcConfig,
    adjacency: GridAdjacency | None = None,
) -> tuple[PanelDataset, dict, CorrectionState]:
    """Dispatch a correction method; returns (corrected, manifest, state).

    The manifest records the method's flag pattern, stage timings, and
    warning counters; the state carries fitted GAMs and vine models for
    serialization.
    """
    for name, p in (("rc", rc), ("mc", mc), ("mp", mp)):
        if [v.name for v in p.variables] != [v.name for v in rc.variables]:
            raise DataError(f"panel {name} has mismatched variables")
        if [l.id for l in p.locations] != [l.id for l in rc.locations]:
            raise DataError(f"panel {name} has mismatched locations")

    counters: dict = {}
    state = CorrectionState()
    stages: dict[str, float] = {}
    t0 = time.perf_counter()

    if config.method == "qm":
        corrected = run_qm(rc, mc, mp, counters)
        stages["correct"] = time.perf_counter() - t0
    else:
        panels = {"rc": rc, "mc": mc, "mp": mp}
        out = np.array(mp.values)
        adjacency_pairs = None
        if adjacency is not None and config.use_adjacency:
            idx_of = {loc.id: j for j, loc in enumerate(rc.locations, start=1)}
            adjacency_pairs = {
                (idx_of[a], idx_of[b]) for a, b in adjacency.pairs()
            }
        if config.site_wise:
            for j in range(1, rc.n_locs + 1):
                block, cols = _vine_correct_block(panels, [j], config, counters, state)
                out[:, cols] = block
        else:
            j0 = None
            if config.use_nvc:
                j0 = _resolve_location(rc, config.bridging_location)
            block, cols = _vine_correct_block(
                panels,
                list(range(1, rc.n_locs + 1)),
                config,
                counters,
                state,
                adjacency_pairs=adjacency_pairs,
                j0=j0,
            )
            out[:, cols] = block
        corrected = mp.with_values(out)
        stages["correct"] = time.perf_counter() - t0

    manifest = {
        "method": config.method,
        "flags": {
            "use_gam": config.use_gam,
            "use_nvc": config.use_nvc,
            "site_wise": config.site_wise,
        },
        "seed": config.seed,
        "counters": counters,
        "stage_seconds": stages,
    }
    return corrected, manifest, state


def _resolve_location(panel: PanelDataset, which) -> int:
    """Bridging location as a 1-based index, from an id or an index."""
    ids = [loc.id for loc in panel.locations]
    if isinstance(which, str):
        if which not in ids:
            raise ConfigError(f"bridging location {which!r} not among panel locations")
        return ids.index(which) + 1
    j = int(which)
    if not 1 <= j <= len(ids):
        raise ConfigError(f"bridging location index {j} out of 1..{len(ids)}")
    return j

"""Evaluation metrics: Wasserstein distances, spatial correlation, ACF,
and the annual block bootstrap.

The 2-Wasserstein distance between samples is computed exactly via the
assignment problem; unequal sample sizes are subsampled to the smaller
size and anything beyond 2000 points per side is subsampled to 2000, both
with the caller's seed, and flagged in the result when requested.
"""

from __future__ import annotations

from collections import Counter

import numpy as np
from scipy import optimize

from vinebc.errors import DataError
from vinebc.panel import PanelDataset

ASSIGNMENT_CAP = 2000


def wasserstein2(a, b, seed: int = 0, cap: int = ASSIGNMENT_CAP) -> float:
    """Exact empirical 2-Wasserstein distance between two point clouds.

    Solves the assignment problem on squared Euclidean cost; the returned
    value is the square root of the mean matched cost.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("wasserstein2 requires non-empty samples")
    if a.shape[1] != b.shape[1]:
        raise DataError("samples must share the same dimension")
    rng = np.random.default_rng(seed)
    n = min(a.shape[0], b.shape[0], cap)
    if a.shape[0] > n:
        a = a[rng.choice(a.shape[0], size=n, replace=False)]
    if b.shape[0] > n:
        b = b[rng.choice(b.shape[0], size=n, replace=False)]
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    rows, cols = optimize.linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def improvement(ref, raw, corrected, seed: int = 0) -> float | None:
    """Relative improvement in W2 distance to the reference.

    (W2(ref, raw) - W2(ref, corrected)) / W2(ref, raw); ``None`` when the
    raw distance is zero and the ratio is undefined.
    """
    d_raw = wasserstein2(ref, raw, seed=seed)
    if d_raw == 0.0:
        return None
    d_corr = wasserstein2(ref, corrected, seed=seed)
    return (d_raw - d_corr) / d_raw


def spatial_correlation(panel: PanelDataset, variable: int, bins: dict) -> dict:
    """Spatial correlation of one variable over adjacency-distance bins.

    Columns are standardized over time first; per time step, anomalies
    from the spatial mean are multiplied over the location pairs in each
    bin, averaged over time, and normalized by the time-averaged spatial
    variance. A panel with zero spatial variance (all locations identical)
    has perfect coherence: 1 in every bin.
    """
    x = np.array(panel.variable_block(variable), dtype=float)
    n, s = x.shape
    sd = x.std(axis=0)
    if np.any(sd < 1e-12):
        raise DataError("constant series cannot be standardized for spatial correlation")
    x = (x - x.mean(axis=0)) / sd
    anomalies = x - x.mean(axis=1, keepdims=True)
    denom = float(np.mean(anomalies**2))
    idx_of = {loc.id: k for k, loc in enumerate(panel.locations)}
    out = {}
    for r in sorted(bins):
        pairs = bins[r]
        if not pairs:
            continue
        if denom < 1e-12:
            out[r] = 1.0
            continue
        acc = 0.0
        for pair in pairs:
            p, q = tuple(pair)
            acc += float(np.mean(anomalies[:, idx_of[p]] * anomalies[:, idx_of[q]]))
        out[r] = acc / len(pairs) / denom
    return out


def spatial_corr_mse(rho_method: dict, rho_ref: dict) -> float:
    """Mean squared difference of two spatial correlation functions."""
    if set(rho_method) != set(rho_ref):
        raise DataError("spatial correlation functions cover different radii")
    radii = sorted(rho_ref)
    diffs = np.array([rho_method[r] - rho_ref[r] for r in radii])
    return float(np.mean(diffs**2))


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation with biased normalization, lags 0..max_lag."""
    y = np.asarray(series, dtype=float)
    n = y.size
    if n <= max_lag + 30:
        raise DataError(f"series of length {n} too short for max_lag {max_lag}")
    yc = y - y.mean()
    denom = float(np.sum(yc * yc))
    if denom <= 0.0:
        raise DataError("constant series has no autocorrelation")
    full = np.correlate(yc, yc, mode="full")[n - 1 : n + max_lag]
    return full / denom


def acf_sq_diff(corrected, ref, max_lag: int = 365) -> np.ndarray:
    """Squared ACF differences per lag 1..max_lag between two series."""
    a = acf(corrected, max_lag)
    b = acf(ref, max_lag)
    return (a[1:] - b[1:]) ** 2


# ---------------------------------------------------------------------------
# annual block bootstrap


def _year_slices(panel: PanelDataset) -> list[np.ndarray]:
    """Row indices per whole year, edge years shorter than the mode dropped."""
    years: dict[int, list[int]] = {}
    for t, date in enumerate(panel.dates):
        years.setdefault(date.year, []).append(t)
    keys = sorted(years)
    lengths = Counter(len(years[y]) for y in keys)
    mode_len = lengths.most_common(1)[0][0]
    kept = list(keys)
    dropped = []
    for edge in (keys[0], keys[-1]):
        if len(keys) > 1 and len(years[edge]) < mode_len and edge in kept:
            kept.remove(edge)
            dropped.append(edge)
    if dropped:
        import warnings

        warnings.warn(f"partial edge years truncated: {dropped}")
    return [np.asarray(years[y]) for y in kept]


def bootstrap_year_indices(
    panel: PanelDataset, n_blocks: int | None, n_rep: int, seed: int
) -> list[np.ndarray]:
    """Row-index vectors for each bootstrap replicate (years drawn jointly)."""
    slices = _year_slices(panel)
    if len(slices) < 1:
        raise DataError("panel has no whole years to resample")
    k = n_blocks if n_blocks is not None else len(slices)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_rep):
        picks = rng.integers(0, len(slices), size=k)
        out.append(np.concatenate([slices[p] for p in picks]))
    return out


def block_bootstrap(
    panel: PanelDataset, n_blocks: int | None = None, n_rep: int = 20, seed: int = 0
) -> list[PanelDataset]:
    """Annual block bootstrap: whole years resampled with replacement.

    Every replicate concatenates full-year row slices jointly across all
    columns, preserving within-year temporal and cross-column structure.
    Deterministic per seed.
    """
    reps = []
    for idx in bootstrap_year_indices(panel, n_blocks, n_rep, seed):
        reps.append(
            PanelDataset(
                values=panel.values[idx],
                variables=panel.variables,
                locations=panel.locations,
                dates=[panel.dates[t] for t in idx],
                period_tag=panel.period_tag,
                require_monotonic_time=False,
            )
        )
    return reps

"""Multivariate bias correction with GAM margins and nested vine copulas.

The package provides, in dependency order:

- :mod:`vinebc.panel` -- space-time panels in long format, adjacency graphs.
- :mod:`vinebc.pair_copula` -- bivariate copula families and h-functions.
- :mod:`vinebc.structure` -- R-vine tree sequences and validity checking.
- :mod:`vinebc.vine` -- fitted vine models, Rosenblatt transforms, simulation.
- :mod:`vinebc.merge` -- merging several vines into one by bridging edges.
- :mod:`vinebc.gam` -- penalized-spline marginal models and PITs.
- :mod:`vinebc.correct` -- quantile mapping and the vine-based correctors.
- :mod:`vinebc.metrics` -- Wasserstein, spatial-correlation and ACF metrics.
- :mod:`vinebc.synthetic` -- AR(1)/vine synthetic benchmark generator.
- :mod:`vinebc.cli` -- the ``vinebc`` command-line front end.
"""

from vinebc.panel import (
    GridAdjacency,
    PanelDataset,
    column_index,
    load_adjacency,
    load_panel,
    save_panel,
    shortest_path_bins,
    split_periods,
)
from vinebc.pair_copula import PairCopulaSpec, fit_pair, param_to_tau, tau_to_param
from vinebc.structure import DisjointSetUnion, Edge, VineStructure, validate
from vinebc.vine import VineModel, fit_vine
from vinebc.merge import BridgingPolicy, merge, nvc_fit
from vinebc.gam import GamFit, fit_gam, inverse_pit_delta, pit, reuniformize
from vinebc.correct import BcConfig, run_correction
from vinebc.metrics import (
    acf,
    acf_sq_diff,
    block_bootstrap,
    improvement,
    spatial_corr_mse,
    spatial_correlation,
    wasserstein2,
)
from vinebc.synthetic import SimConfig, generate

__version__ = "0.1.0"

__all__ = [
    "BcConfig",
    "BridgingPolicy",
    "DisjointSetUnion",
    "Edge",
    "GamFit",
    "GridAdjacency",
    "PairCopulaSpec",
    "PanelDataset",
    "SimConfig",
    "VineModel",
    "VineStructure",
    "acf",
    "acf_sq_diff",
    "block_bootstrap",
    "column_index",
    "fit_gam",
    "fit_pair",
    "fit_vine",
    "generate",
    "improvement",
    "inverse_pit_delta",
    "load_adjacency",
    "load_panel",
    "merge",
    "nvc_fit",
    "param_to_tau",
    "pit",
    "reuniformize",
    "run_correction",
    "save_panel",
    "shortest_path_bins",
    "spatial_corr_mse",
    "spatial_correlation",
    "split_periods",
    "tau_to_param",
    "validate",
    "wasserstein2",
]

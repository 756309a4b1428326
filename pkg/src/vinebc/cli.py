"""Command-line front end: simulate, correct, evaluate, merge-demo.

All randomness comes from config seeds, so two runs with the same config
produce byte-identical data outputs (the run manifest records wall-clock
stage timings and is the one exception). Config files are flat TOML key
to value; unknown keys are hard errors.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from vinebc import __version__
from vinebc.correct import METHODS, BcConfig, run_correction
from vinebc.errors import ConfigError, DataError, NumericalError, VinebcError
from vinebc.gam import GamFit
from vinebc.merge import BridgingPolicy, merge
from vinebc.metrics import (
    acf_sq_diff,
    bootstrap_year_indices,
    improvement,
    spatial_corr_mse,
    spatial_correlation,
)
from vinebc.panel import load_adjacency, load_panel, save_panel, shortest_path_bins
from vinebc.structure import Edge, load_structure, save_structure
from vinebc.synthetic import SimConfig, generate
from vinebc.vine import save_model

SIMULATE_KEYS = {
    "n_time", "phi_ref", "phi_model", "within_ref", "between_ref", "within_model",
    "between_model", "mu_lo", "mu_hi", "sigma_lo", "sigma_hi", "burn_in",
    "start_year", "seed",
}
CORRECT_KEYS = {
    "method", "bridging_location", "truncation", "family_set", "criterion",
    "k_time", "k_space", "lambda", "reuniformize_alpha", "use_adjacency", "seed",
}
EVALUATE_KEYS = {
    "seed", "n_rep", "n_blocks", "max_lag", "workers",
}
MERGE_KEYS = {"policy", "seed", "manual_edges", "strict_lemma"}


class StageTimer:
    """Tracks named stages for the run manifest, including the failing one."""

    def __init__(self):
        self.seconds: dict[str, float] = {}
        self.current: str | None = None

    def stage(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                timer.current = name
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                timer.seconds[name] = timer.seconds.get(name, 0.0) + (
                    time.perf_counter() - self.t0
                )
                if exc_type is None:
                    timer.current = None
                return False

        return _Ctx()


def _load_config(path, allowed: set, required: set = frozenset()) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}; allowed: {sorted(allowed)}")
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"missing required config keys: {sorted(missing)}")
    return cfg


def _config_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _load_panel_checked(path, **kw):
    if not os.path.exists(path):
        raise DataError(f"panel file not found: {path}")
    return load_panel(path, **kw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, timer: StageTimer, manifest: dict) -> None:
    cfg = _load_config(args.config, SIMULATE_KEYS)
    kw = dict(cfg)
    mu = (kw.pop("mu_lo", 0.0), kw.pop("mu_hi", 10.0))
    sig = (kw.pop("sigma_lo", 0.5), kw.pop("sigma_hi", 2.0))
    sim = SimConfig(mu_range=mu, sigma_range=sig, **kw)
    manifest["seeds"] = {"simulate": sim.seed}
    with timer.stage("generate"):
        panels, truth = generate(sim)
    with timer.stage("write"):
        os.makedirs(args.out, exist_ok=True)
        for name, panel in panels.items():
            out = os.path.join(args.out, f"{name}.csv")
            save_panel(panel, out)
            manifest["outputs"].append(out)
        truth_path = os.path.join(args.out, "truth.json")
        _write_json(truth_path, truth)
        manifest["outputs"].append(truth_path)


def cmd_correct(args, timer: StageTimer, manifest: dict) -> None:
    cfg = _load_config(args.config, CORRECT_KEYS)
    method = args.method or cfg.get("method")
    if method is None:
        raise ConfigError("method must be given via --method or the config file")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; pick one of {METHODS}")
    config = BcConfig(
        method=method,
        bridging_location=cfg.get("bridging_location"),
        truncation=cfg.get("truncation", 22),
        family_set=tuple(cfg.get("family_set", list(BcConfig.family_set))),
        criterion=cfg.get("criterion", "aic"),
        k_time=cfg.get("k_time", 10),
        k_space=cfg.get("k_space", 20),
        lambda_selection=cfg.get("lambda", "gcv"),
        reuniformize_alpha=cfg.get("reuniformize_alpha", 0.01),
        use_adjacency=cfg.get("use_adjacency", True),
        seed=cfg.get("seed", 0),
    )
    manifest["seeds"] = {"correct": config.seed}
    with timer.stage("load"):
        rc = _load_panel_checked(args.rc, period_tag="rc")
        mc = _load_panel_checked(args.mc, period_tag="mc")
        mp = _load_panel_checked(args.mp, period_tag="mp")
        adjacency = load_adjacency(args.adjacency) if args.adjacency else None
    with timer.stage("correct"):
        corrected, run_info, state = run_correction(rc, mc, mp, config, adjacency)
    manifest["counters"] = run_info["counters"]
    manifest["flags"] = run_info["flags"]
    with timer.stage("write"):
        os.makedirs(args.out, exist_ok=True)
        out = os.path.join(args.out, "corrected.csv")
        save_panel(corrected, out)
        manifest["outputs"].append(out)
        state_dir = os.path.join(args.out, "state")
        os.makedirs(state_dir, exist_ok=True)
        for (ds, var, _locs), fit in state.gam_fits.items():
            p = os.path.join(state_dir, f"gam_{ds}_{var}.txt")
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(fit.to_text() + "\n")
            manifest["outputs"].append(p)
        for ds, model in state.vine_models.items():
            p = os.path.join(state_dir, f"vine_{ds}.csv")
            bridge = ()
            if ds in state.merge_results:
                bridge = state.merge_results[ds].bridge_edges
            save_model(model, p, bridge_edges=bridge)
            manifest["outputs"].append(p)


def _replicate_metrics(payload):
    """Metrics for one replicate; a plain function so pools can run it."""
    (idx_rows, ref_vals, raw_vals, corr_vals, d, s, var_names, loc_ids,
     bins, max_lag, seed) = payload
    ref = ref_vals[idx_rows]
    raw = raw_vals[idx_rows]
    corr = corr_vals[idx_rows]
    out = {"inter_variable": {}, "spatial": {}, "spatial_corr_mse": {}, "acf": {}}
    for j in range(1, s + 1):
        cols = [(i - 1) * s + j - 1 for i in range(1, d + 1)]
        out["inter_variable"][loc_ids[j - 1]] = improvement(
            ref[:, cols], raw[:, cols], corr[:, cols], seed=seed
        )
    for i in range(1, d + 1):
        cols = [(i - 1) * s + j - 1 for j in range(1, s + 1)]
        out["spatial"][var_names[i - 1]] = improvement(
            ref[:, cols], raw[:, cols], corr[:, cols], seed=seed
        )
    if bins is not None:
        from vinebc.panel import Location, PanelDataset, VariableDef
        import datetime as dt

        def tiny_panel(vals):
            dates = [dt.date(2000, 1, 1) + dt.timedelta(days=int(t)) for t in range(len(vals))]
            return PanelDataset(
                vals,
                [VariableDef(v) for v in var_names],
                [Location(l) for l in loc_ids],
                dates,
            )

        for i in range(1, d + 1):
            rho_ref = spatial_correlation(tiny_panel(ref), i, bins)
            rho_corr = spatial_correlation(tiny_panel(corr), i, bins)
            out["spatial_corr_mse"][var_names[i - 1]] = spatial_corr_mse(rho_corr, rho_ref)
    if max_lag >= 1:
        for i in range(1, d + 1):
            for j in range(1, s + 1):
                k = (i - 1) * s + j - 1
                sq = acf_sq_diff(corr[:, k], ref[:, k], max_lag)
                out["acf"][f"{var_names[i - 1]}:{loc_ids[j - 1]}"] = float(np.mean(sq))
    return out


def cmd_evaluate(args, timer: StageTimer, manifest: dict) -> None:
    cfg = _load_config(args.config, EVALUATE_KEYS) if args.config else {}
    seed = cfg.get("seed", 0)
    n_rep = cfg.get("n_rep", 20)
    n_blocks = cfg.get("n_blocks")
    workers = cfg.get("workers", os.cpu_count() or 1)
    manifest["seeds"] = {"evaluate": seed}

    with timer.stage("load"):
        ref = _load_panel_checked(args.ref, period_tag="rp")
        raw = _load_panel_checked(args.raw, period_tag="mp")
        corrected = {}
        for item in args.corrected:
            label, _, path = item.partition("=")
            if not path:
                label, path = os.path.splitext(os.path.basename(item))[0], item
            corrected[label] = _load_panel_checked(path)
        bins = None
        if args.adjacency:
            adjacency = load_adjacency(args.adjacency)
            bins = shortest_path_bins(adjacency, [l.id for l in ref.locations])

    if ref.n_time != raw.n_time or any(c.n_time != ref.n_time for c in corrected.values()):
        raise DataError("reference, raw, and corrected panels must cover the same rows")

    d, s = ref.n_vars, ref.n_locs
    var_names = [v.name for v in ref.variables]
    loc_ids = [l.id for l in ref.locations]
    max_lag = cfg.get("max_lag", min(365, ref.n_time - 31))

    with timer.stage("metrics"):
        index_sets = [np.arange(ref.n_time)]
        if n_rep > 0:
            index_sets += bootstrap_year_indices(ref, n_blocks, n_rep, seed)
        report = {"replicates": len(index_sets), "methods": {}, "max_lag": int(max_lag)}
        rows = []
        for label, panel in corrected.items():
            payloads = [
                (idx, ref.values, raw.values, panel.values, d, s, var_names,
                 loc_ids, bins, max_lag, seed)
                for idx in index_sets
            ]
            if workers > 1 and len(payloads) > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(_replicate_metrics, payloads))
            else:
                results = [_replicate_metrics(p) for p in payloads]
            method_report = {}
            for rep, res in enumerate(results):
                for metric, per_unit in res.items():
                    for unit, value in per_unit.items():
                        method_report.setdefault(metric, {}).setdefault(unit, []).append(value)
                        rows.append((label, metric, unit, rep, value))
            report["methods"][label] = method_report

    with timer.stage("write"):
        os.makedirs(args.out, exist_ok=True)
        rep_path = os.path.join(args.out, "report.json")
        _write_json(rep_path, report)
        manifest["outputs"].append(rep_path)
        csv_path = os.path.join(args.out, "report.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("method,metric,unit,replicate,value\n")
            for label, metric, unit, rep, value in rows:
                v = "" if value is None else format(value, ".17g")
                fh.write(f"{label},{metric},{unit},{rep},{v}\n")
        manifest["outputs"].append(csv_path)


def _parse_manual_edges(specs) -> tuple[Edge, ...]:
    out = []
    for spec in specs or ():
        body, _, cond = spec.partition("|")
        a, b = (int(x) for x in body.split(","))
        conditioning = tuple(int(c) for c in cond.split(";") if c.strip()) if cond else ()
        out.append(Edge((a, b), conditioning))
    return tuple(out)


def cmd_merge_demo(args, timer: StageTimer, manifest: dict) -> None:
    cfg = _load_config(args.config, MERGE_KEYS) if args.config else {}
    mode = args.policy or cfg.get("policy", "manual")
    seed = cfg.get("seed", 0)
    manual = _parse_manual_edges(args.pick) + _parse_manual_edges(cfg.get("manual_edges"))
    with timer.stage("load"):
        vines = []
        for path in args.structures:
            if not os.path.exists(path):
                raise DataError(f"structure file not found: {path}")
            structure, _ = load_structure(path)
            vines.append(structure)
    policy_kw = dict(mode=mode, manual_edges=manual, seed=seed,
                     strict_lemma=cfg.get("strict_lemma", False))
    if mode == "tau":
        if not args.data:
            raise ConfigError("tau policy needs --data with pseudo-observations")
        u = np.loadtxt(args.data, delimiter=",", ndmin=2)
        policy_kw["pseudo_obs"] = u
    policy = BridgingPolicy(**policy_kw)
    with timer.stage("merge"):
        result = merge(vines, policy)
    for record in result.trace:
        print(f"level {record['level']}: target {record['target']}, "
              f"existing {record['existing']}")
        for kind, edge in record.get("events", []):
            print(f"  {kind} {edge}")
    with timer.stage("write"):
        os.makedirs(args.out, exist_ok=True)
        out = os.path.join(args.out, "merged_structure.csv")
        save_structure(result.structure, out, bridge_edges=result.bridge_edges)
        manifest["outputs"].append(out)
    print(f"merged {len(vines)} vines into dimension {result.structure.dimension} "
          f"with {len(result.bridge_edges)} bridging edges")


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vinebc",
        description="Multivariate bias correction with GAM margins and nested vine copulas.",
    )
    parser.add_argument("--version", action="version", version=f"vinebc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "simulate",
        help="generate the synthetic benchmark panels",
        epilog="config keys: " + ", ".join(sorted(SIMULATE_KEYS)),
    )
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "correct",
        help="bias-correct model projections",
        epilog="config keys: " + ", ".join(sorted(CORRECT_KEYS)),
    )
    p.add_argument("--method", choices=METHODS, help="override the config method")
    p.add_argument("--config", required=True)
    p.add_argument("--rc", required=True, help="reference calibration panel")
    p.add_argument("--mc", required=True, help="model calibration panel")
    p.add_argument("--mp", required=True, help="model projection panel")
    p.add_argument("--adjacency", help="grid adjacency sidecar file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser(
        "evaluate",
        help="evaluate corrected panels against the reference",
        epilog="config keys: " + ", ".join(sorted(EVALUATE_KEYS)),
    )
    p.add_argument("--config", help="TOML config file (optional)")
    p.add_argument("--ref", required=True, help="reference projection panel")
    p.add_argument("--raw", required=True, help="uncorrected model projection panel")
    p.add_argument(
        "--corrected", action="append", required=True,
        help="label=path of a corrected panel (repeatable)",
    )
    p.add_argument("--adjacency", help="adjacency file for spatial correlation bins")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "merge-demo",
        help="merge vine structure files and print the level-by-level trace",
        epilog="config keys: " + ", ".join(sorted(MERGE_KEYS)),
    )
    p.add_argument("structures", nargs="+", help="two or more structure files")
    p.add_argument("--policy", choices=("manual", "random", "tau"))
    p.add_argument("--pick", action="append", help='manual bridging edge, e.g. "3,4" or "1,4|2"')
    p.add_argument("--data", help="CSV pseudo-observation matrix for the tau policy")
    p.add_argument("--config", help="TOML config file (optional)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    timer = StageTimer()
    manifest: dict = {
        "command": args.command,
        "version": __version__,
        "outputs": [],
        "status": "ok",
    }
    if getattr(args, "config", None):
        try:
            manifest["config_sha256"] = _config_hash(args.config)
        except OSError:
            manifest["config_sha256"] = None
    code = 0
    try:
        args.func(args, timer, manifest)
    except ConfigError as exc:
        manifest["status"] = "config-error"
        manifest["error"] = str(exc)
        print(f"config error: {exc}", file=sys.stderr)
        code = 2
    except DataError as exc:
        manifest["status"] = "data-error"
        manifest["error"] = str(exc)
        print(f"data error: {exc}", file=sys.stderr)
        code = 3
    except (NumericalError, VinebcError) as exc:
        manifest["status"] = "numerical-error"
        manifest["error"] = str(exc)
        print(f"numerical error: {exc}", file=sys.stderr)
        code = 4
    finally:
        if manifest["status"] != "ok":
            manifest["failed_stage"] = timer.current
        manifest["stage_seconds"] = timer.seconds
        out_dir = getattr(args, "out", None)
        if out_dir:
            try:
                os.makedirs(out_dir, exist_ok=True)
                _write_json(os.path.join(out_dir, "manifest.json"), manifest)
            except OSError:
                pass
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: ``stftr simulate|fit|bootstrap|compare|report``.

Exit codes: 0 success, 2 success with warnings (for example degenerate
standard errors or an unconverged inner solve), 1 error or a final solve
that did not meet its KKT tolerance.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .container import ContainerError, read_container, write_container
from .forward import TrialDataset
from .inference import averaged_absolute_t
from .metrics import mse_ratio, reconstruct_all, rectified_mse
from .penalty import build_group_tree
from .pipeline import (bootstrap_mner, bootstrap_stftr, dictionary_for, fit_mner, fit_stftr)
from .report import (aggregate_ratios, ensure_dir, heatmap_svg, read_grid_csv, read_rows_csv,
                     write_grid_csv, write_rows_csv)
from .simulate import SimulationSpec, generate_dataset, prewhiten
from .stft import StftDictionary, build_dictionary

__all__ = ["main", "build_parser"]

logger = logging.getLogger("stftr")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
COMPARE_COLUMNS = ["seed", "noise_level", "snr", "scope", "mse_stftr", "mse_mner", "ratio"]


class CliError(RuntimeError):
    pass


# ----------------------------------------------------------------- helpers

def _thread_limit(threads):
    if threads is None:
        env = os.environ.get("STFTR_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise CliError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def _load_dataset(path):
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise CliError(f"dataset container not found: {path}")
    arrays, meta = read_container(path)
    for name in ("M", "G", "X"):
        if name not in arrays:
            raise ContainerError(f"array {name!r} missing from dataset {path}")
    data = TrialDataset(arrays["M"], arrays["G"], arrays["X"],
                        float(meta.get("sampling_rate", 100.0)),
                        whitened=bool(meta.get("whitened", False)))
    return data, arrays, meta


def _model_data(data: TrialDataset, arrays: dict) -> TrialDataset:
    """Prewhiten with the stored noise covariance unless already whitened."""
    if not data.whitened and "noise_cov" in arrays:
        return prewhiten(data, arrays["noise_cov"])
    return data


def _dictionary_from_meta(meta: dict) -> StftDictionary:
    w = meta["dictionary"]
    return build_dictionary(int(w["T"]), int(w["T0"]), int(w["tau0"]), w["window_kind"])


def _dict_meta(d: StftDictionary) -> dict:
    return {"T": d.T, "T0": d.T0, "tau0": d.tau0, "window_kind": d.window_kind}


def _resolve_rois(cfg: RunConfig, config_path, meta: dict) -> tuple[list, list]:
    """ROIs as ``(names, index lists)``: from the ROI file if configured, else the dataset."""
    roi_file = cfg.penalty.roi_file
    if roi_file is not None:
        p = Path(roi_file)
        if not p.is_absolute() and config_path is not None:
            p = Path(config_path).parent / p
        if not p.exists():
            raise ConfigError(f"ROI file not found: {p}")
        try:
            obj = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid ROI file {p}: {exc}") from exc
        if isinstance(obj, dict):
            names, rois = list(obj), [list(map(int, v)) for v in obj.values()]
        elif isinstance(obj, list):
            names = [f"roi{i}" for i in range(len(obj))]
            rois = [list(map(int, v)) for v in obj]
        else:
            raise ConfigError(f"ROI file {p} must hold a list or an object of index lists")
    else:
        regions = meta.get("regions", {})
        targets = meta.get("targets", [])
        names = list(targets)
        rois = [list(map(int, regions[t])) for t in targets]
    if cfg.penalty.weight_policy == "roi-free" and not rois:
        raise ConfigError("weight policy 'roi-free' needs ROIs: set penalty.roi_file")
    return names, rois


def _initial_groups(policy: str, n_roi: int):
    if policy == "rois":
        return None
    if policy == "empty":
        return []
    raise CliError(f"unknown initial active-set policy {policy!r}")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _warning_messages(records) -> list[str]:
    seen = []
    for w in records:
        msg = f"{w.category.__name__}: {w.message}"
        if msg not in seen:
            seen.append(msg)
    return seen


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    spec_obj = {}
    if args.config:
        try:
            spec_obj = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"simulation spec not found: {args.config}") from exc
    if args.seed is not None:
        spec_obj["seed"] = args.seed
    if args.snr_db:
        spec_obj["snr_db"] = True
    try:
        spec = SimulationSpec.from_dict(spec_obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation spec: {exc}") from exc
    d = spec.dictionary()
    data, truth = generate_dataset(spec, d)
    out = ensure_dir(args.out)
    meta = {
        "kind": "dataset", "sampling_rate": data.sampling_rate, "whitened": False,
        "regions": spec.regions, "targets": list(spec.targets), "spec": json.loads(spec.to_json()),
        "dictionary": _dict_meta(d),
    }
    write_container(out, {"M": data.M, "G": data.G, "X": data.X, "Z_true": truth.Z_true,
                          "sources": truth.sources, "noise_cov": truth.noise_cov,
                          "curve": truth.curve}, meta)
    (out / "spec.json").write_text(spec.to_json() + "\n")
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    if args.method:
        cfg.method = args.method
    if args.seed is not None:
        cfg.bootstrap.seed = args.seed
    raw, arrays, meta = _load_dataset(args.dataset)
    data = _model_data(raw, arrays)
    d = dictionary_for(data, cfg)
    out = ensure_dir(args.out)
    base = {"kind": "fit", "method": cfg.method, "dataset": str(Path(args.dataset).resolve()),
            "dictionary": _dict_meta(d), "config": cfg.to_dict()}
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        if cfg.method == "mne-r":
            fit = fit_mner(data, d, cfg)
            write_rows_csv(out / "cv.csv", fit.cv_table, ["lambda", "fold", "error"])
            meta_out = {**base, "converged": True, "params": {"lambda": fit.lam},
                        "scales": {"mne": fit.scale}}
            arrays_out = {"Z": fit.Z}
            converged = True
        else:
            names, rois = _resolve_rois(cfg, args.config, meta)
            init = _initial_groups(args.initial_active, len(rois))
            fit = fit_stftr(data, d, rois, cfg, initial_J=init)
            if fit.cv is not None:
                fit.cv.to_csv(out / "cv.csv")
            else:
                write_rows_csv(out / "cv.csv", [], ["alpha", "beta", "gamma", "lambda2",
                                                    "fold", "error"])
            rep = fit.solve.report
            kkt = {"total_violation": rep.total_violation,
                   "threshold": fit.solve.kkt_threshold,
                   "multipliers_converged": rep.multipliers_converged,
                   "per_group_violation": {str(k): v for k, v in rep.per_group_violation.items()}}
            _dump(out / "trace.json", {"rounds": fit.solve.trace, "kkt": kkt})
            converged = bool(fit.converged)
            meta_out = {**base, "converged": converged, "params": fit.params,
                        "scales": fit.scales, "roi_names": names, "rois": rois,
                        "active_groups": fit.solve.active_groups, "kkt": kkt}
            arrays_out = {"Z": fit.Z, "Z_l21": fit.Z_l21, "support": fit.Z_l21 != 0}
    msgs = _warning_messages(rec)
    meta_out["warnings"] = msgs
    write_container(out, arrays_out, meta_out)
    for m in msgs:
        print(f"warning: {m}", file=sys.stderr)
    if not converged:
        print("error: active-set solve did not reach the KKT tolerance "
              "(artifacts written)", file=sys.stderr)
        return EXIT_ERROR
    print(f"fit ({cfg.method}) written to {out}")
    return EXIT_WARN if msgs else EXIT_OK


def cmd_bootstrap(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.bootstrap.seed = args.seed
    raw, arrays, meta = _load_dataset(args.dataset)
    fit_dir = Path(args.fit)
    if not (fit_dir / "manifest.json").exists():
        raise CliError(f"fit artifacts not found: {fit_dir}")
    fit_arrays, fit_meta = read_container(fit_dir)
    data = _model_data(raw, arrays)
    d = _dictionary_from_meta(fit_meta)
    method = fit_meta["method"]
    out = ensure_dir(args.out)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        if method == "mne-r":
            res = bootstrap_mner(data, d, fit_meta["params"]["lambda"], cfg)
            info = {}
            names = list(meta.get("targets", []))
            rois = [meta["regions"][t] for t in names]
        else:
            names, rois = fit_meta["roi_names"], fit_meta["rois"]
            params = fit_meta["params"]
            tree = build_group_tree(rois, data.m, d.s, data.p, params["alpha"], params["beta"],
                                    params["gamma"], cfg.penalty.weight_policy)
            rel = cfg.bootstrap.lambda2_grid or cfg.cv.lambda2_grid
            grid = sorted(f * fit_meta["scales"]["hessian"] for f in rel)
            res, info = bootstrap_stftr(data, d, tree, params, cfg, lambda2_grid=grid)
    msgs = _warning_messages(rec)
    n_deg = int(res.degenerate.sum())
    write_container(out, {"estimate": res.estimate, "se": res.se, "t_stat": res.t_stat,
                          "support": res.support, "degenerate": res.degenerate},
                    {"kind": "bootstrap", "method": method, "B": res.B,
                     "seed": cfg.bootstrap.seed, "degenerate_se": n_deg > 0,
                     "n_degenerate": n_deg, "info": info, "lambda2": res.lambda2,
                     "roi_names": names, "rois": rois, "dictionary": _dict_meta(d),
                     "warnings": msgs})
    freqs = d.frequencies_hz(data.sampling_rate)
    times = d.window_times(data.sampling_rate) * 1000.0
    for name, roi in zip(names, rois):
        for k in range(data.p):
            grid = averaged_absolute_t(res, roi, k, d)
            write_grid_csv(out / f"avg_abs_t_{name}_x{k}.csv", grid, freqs, times)
    for m in msgs:
        print(f"warning: {m}", file=sys.stderr)
    if n_deg:
        print(f"warning: {n_deg} coefficient parts have zero bootstrap standard error",
              file=sys.stderr)
    print(f"bootstrap ({method}) written to {out}")
    return EXIT_WARN if (n_deg or msgs) else EXIT_OK


def cmd_compare(args) -> int:
    raw, arrays, meta = _load_dataset(args.dataset)
    if "sources" not in arrays:
        raise CliError("dataset has no ground-truth 'sources' array")
    fits = {}
    for label, path in (("stft-r fit", args.fit_stftr), ("mne-r fit", args.fit_mner)):
        p = Path(path)
        if not (p / "manifest.json").exists():
            raise CliError(f"missing {label}: {p}")
        fits[label] = read_container(p, ["Z"])
    (Zs, ms), (Zm, mm) = fits["stft-r fit"], fits["mne-r fit"]
    Zs, Zm = Zs["Z"], Zm["Z"]
    if Zs.shape != Zm.shape:
        raise CliError(f"fit shapes differ: stft-r {Zs.shape} vs mne-r {Zm.shape}")
    d = _dictionary_from_meta(ms)
    est_s = reconstruct_all(Zs, raw.X, d)
    est_m = reconstruct_all(Zm, raw.X, d)
    truth = arrays["sources"]
    regions, targets = meta.get("regions", {}), meta.get("targets", [])
    scopes = {"all": None}
    if targets:
        scopes["roi"] = np.concatenate([np.asarray(regions[t], int) for t in targets])
    spec = meta.get("spec", {})
    rows = []
    for scope, idx in scopes.items():
        a = rectified_mse(est_s, truth, idx)
        b = rectified_mse(est_m, truth, idx)
        rows.append({"seed": spec.get("seed", ""), "noise_level": spec.get("noise_level", ""),
                     "snr": spec.get("snr", ""), "scope": scope, "mse_stftr": repr(a),
                     "mse_mner": repr(b), "ratio": repr(mse_ratio(a, b))})
    out = ensure_dir(args.out)
    write_rows_csv(out / "compare.csv", rows, COMPARE_COLUMNS)
    for label, bdir in (("stft-r", args.bootstrap_stftr), ("mne-r", args.bootstrap_mner)):
        if bdir is None:
            continue
        bdir = Path(bdir)
        files = sorted(bdir.glob("avg_abs_t_*.csv"))
        if not files:
            raise CliError(f"no avg_abs_t tables in {bdir}")
        for f in files:
            grid, freqs, times = read_grid_csv(f)
            svg = heatmap_svg(grid, freqs, times, title=f"{label} {f.stem}")
            (out / f"{label}_{f.stem}.svg").write_text(svg)
    for row in rows:
        print(f"{row['scope']}: ratio {float(row['ratio']):.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        p = Path(path)
        f = p / "compare.csv" if p.is_dir() else p
        if not f.exists():
            raise CliError(f"comparison table not found: {f}")
        rows.extend(read_rows_csv(f))
    if not rows:
        raise CliError("no comparison rows to aggregate")
    table = aggregate_ratios(rows)
    out = ensure_dir(args.out)
    write_rows_csv(out / "report.csv", table,
                   ["noise_level", "snr", "scope", "n_runs", "mean_ratio", "se_ratio"])
    for row in table:
        print(f"noise {row['noise_level']} snr {row['snr']} {row['scope']}: "
              f"{row['mean_ratio']:.4f} +/- {row['se_ratio']:.4f} (n={row['n_runs']})")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration (simulation spec for 'simulate')")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--threads", type=int,
                        help="cap on BLAS threads (default: STFTR_THREADS or unlimited)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stftr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--snr-db", action="store_true", help="interpret snr in decibels")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit STFT-R or MNE-R")
    p.add_argument("dataset")
    p.add_argument("--method", choices=["stft-r", "mne-r"], help="override config method")
    p.add_argument("--initial-active", choices=["rois", "empty"], default="rois",
                   help="starting active set of the screening loop")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bootstrap", parents=[common], help="bootstrap T-statistics of a fit")
    p.add_argument("dataset")
    p.add_argument("fit")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("compare", parents=[common], help="compare STFT-R with MNE-R")
    p.add_argument("dataset")
    p.add_argument("fit_stftr")
    p.add_argument("fit_mner")
    p.add_argument("--bootstrap-stftr", help="bootstrap output of the STFT-R fit (for heatmaps)")
    p.add_argument("--bootstrap-mner", help="bootstrap output of the MNE-R fit (for heatmaps)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", parents=[common], help="aggregate comparison tables")
    p.add_argument("inputs", nargs="+", help="compare directories or CSV files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (CliError, ConfigError, ContainerError, ValueError, np.linalg.LinAlgError,
            FloatingPointError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

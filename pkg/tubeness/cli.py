"""
cli.py - command-line entry point.

    python -m tubeness calibrate --scale wardlaw --out models/wardlaw.model
    python -m tubeness segment --t2 t2.nii --roi cs.nii --out out/case01
    python -m tubeness optimize --manifest cohort.csv --model wardlaw --out results/
    python -m tubeness evaluate --csv counts.csv
    python -m tubeness phantom --n-tubes 12 --out phantoms/p01
    python -m tubeness filter --volume t2.nii --out out/t2_vesselness

Reports go to stdout (and to files where a path is given); diagnostics go
to the logger. Exit status is 0 on success, 1 on a tubeness error and 2 on
a file system or usage error.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import argparse
import pathlib
import sys
from typing import List, Optional, Sequence

# Import external packages
import numpy as np
import pandas as pd

# Import functions from local modules
from tubeness.errors import StatsError, TubenessError
from tubeness.ologit import (
    PUBLISHED_MODELS,
    SCALES,
    fit_detailed,
    generate_synthetic,
    get_scale,
    load_model,
    probability_table,
    save_model,
    weighted_probability_sum,
)
from tubeness.optimizer import (
    Case,
    GridPoint,
    ParamGrid,
    SegmentationSettings,
    export_all_surfaces,
    grid_search,
    load_manifest,
    segment_case,
)
from tubeness.phantom import PhantomSpec, generate_phantom, rate_phantom
from tubeness.stats import spearman
from tubeness.vesselness import FilterParams, vesselness_multiscale
from tubeness.volume import (
    load_mask,
    load_volume,
    reslice_isotropic,
    reslice_mask,
    save_mask,
    save_volume,
)
from utils.utils_config import Config, format_config, resolve_config
from utils.utils_logger import get_log_file_path, get_log_level, logger

# largest count shown by `calibrate --curves`
CURVE_MAX_COUNT = 60

#####################################
# Shared helpers
#####################################


def _config(args: argparse.Namespace, keys: Sequence[str]) -> Config:
    overrides = {key: getattr(args, key, None) for key in keys}
    return resolve_config(overrides, args.config)


def _filter_params(cfg: Config, polarity: str = "bright", threshold: float = 0.35) -> FilterParams:
    return FilterParams(
        s_min=cfg.s_min, s_max=cfg.s_max, s_step=cfg.s_step,
        alpha=cfg.alpha, beta_f=cfg.beta_f, c=cfg.c,
        polarity=polarity, threshold=threshold,
    )


def _settings(cfg: Config) -> SegmentationSettings:
    return SegmentationSettings(
        filter=_filter_params(cfg),
        fusion=cfg.fusion,
        min_length_mm=cfg.min_length_mm,
        max_length_mm=cfg.max_length_mm,
        axis=cfg.axis,
    )


def _emit(text: str, path: Optional[pathlib.Path] = None) -> None:
    sys.stdout.write(text)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        logger.info(f"Wrote report to {path}")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


FILTER_KEYS = ("s_min", "s_max", "s_step", "alpha", "beta_f", "c", "threads", "target_spacing")

#####################################
# calibrate
#####################################


def cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = _config(args, ("scale", "n", "seed", "lognormal_mu", "lognormal_sigma", "rating_from"))
    scale = get_scale(cfg.scale)
    dataset = generate_synthetic(
        scale, n=cfg.n, seed=cfg.seed,
        lognormal_mu=cfg.lognormal_mu, lognormal_sigma=cfg.lognormal_sigma,
        rating_from=cfg.rating_from,
    )
    if args.data:
        dataset.save_csv(args.data)
    result = fit_detailed(dataset, scale.m, scale.name)
    model = result.model
    save_model(model, args.out)

    class_counts = np.bincount(dataset.rc, minlength=scale.m).tolist()
    lines = [
        f"scale = {scale.name}",
        f"n = {cfg.n}",
        f"seed = {cfg.seed}",
        f"class_counts = {' '.join(str(c) for c in class_counts)}",
        f"beta = {_fmt(model.beta)}",
        f"mu = {' '.join(_fmt(v) for v in model.mu)}",
        f"boundary_ratios = {' '.join(_fmt(v) for v in model.boundary_ratios())}",
        f"logl = {_fmt(result.log_likelihood)}",
        f"weighted_probability_sum = {_fmt(weighted_probability_sum(model, dataset))}",
        f"converged = {str(result.converged).lower()}",
        f"at_bound = {str(result.at_bound).lower()}",
        f"empty_classes = {' '.join(str(j) for j in result.empty_classes) or 'none'}",
    ]
    _emit("\n".join(lines) + "\n", pathlib.Path(args.report) if args.report else None)

    if args.curves:
        counts = np.arange(0, CURVE_MAX_COUNT + 1, dtype=np.float64)
        path = pathlib.Path(args.curves)
        path.parent.mkdir(parents=True, exist_ok=True)
        probability_table(model, counts).to_csv(path, index=False, float_format="%.10f")
        logger.info(f"Wrote class-probability curves to {path}")
    return 0


#####################################
# segment
#####################################


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = _config(args, FILTER_KEYS + ("t1", "t2", "fusion", "axis", "min_length_mm", "max_length_mm"))
    t1 = reslice_isotropic(load_volume(args.t1_path), cfg.target_spacing) if args.t1_path else None
    t2 = reslice_isotropic(load_volume(args.t2_path), cfg.target_spacing) if args.t2_path else None
    roi = reslice_mask(load_mask(args.roi), cfg.target_spacing)
    case = Case(id=pathlib.Path(args.out).name, roi=roi, rating=0, t1=t1, t2=t2)

    point = GridPoint(cfg.s_min, cfg.s_max, cfg.t1, cfg.t2)
    result = segment_case(case, point, _settings(cfg), threads=cfg.threads)

    prefix = pathlib.Path(args.out)
    save_mask(result.mask, f"{prefix}_mask")
    lines = [
        f"slice_count = {result.slice_count}",
        f"total_count = {result.total_count}",
        f"total_volume_mm3 = {_fmt(result.total_volume_mm3)}",
        f"selected_slice = {result.counts.selected_slice}",
    ]
    _emit("\n".join(lines) + "\n", prefix.with_name(prefix.name + "_report.txt"))
    return 0


#####################################
# optimize
#####################################


def _resolve_model(name: str):
    if name in PUBLISHED_MODELS:
        return PUBLISHED_MODELS[name]
    return load_model(name)


def cmd_optimize(args: argparse.Namespace) -> int:
    keys = FILTER_KEYS + (
        "grid_s_min", "grid_s_max", "grid_t1", "grid_t2",
        "scale", "count_kind", "fusion", "axis", "min_length_mm", "max_length_mm",
    )
    model = _resolve_model(args.model)
    overrides = {key: getattr(args, key, None) for key in keys}
    if overrides["scale"] is None and model.scale in SCALES:
        overrides["scale"] = model.scale
    cfg = resolve_config(overrides, args.config)
    count_kind = cfg.resolved_count_kind()

    cases = load_manifest(args.manifest, cfg.target_spacing)
    grid = ParamGrid(s_min=cfg.grid_s_min, s_max=cfg.grid_s_max, t1=cfg.grid_t1, t2=cfg.grid_t2)
    result = grid_search(
        cases, model, grid, count_kind=count_kind, settings=_settings(cfg),
        threads=cfg.threads, use_cache=not args.no_cache,
    )

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "best_params.conf").write_text(format_config(result.best.as_dict()))
    result.surface.to_csv(out / "grid.csv", index=False, float_format="%.10g")
    result.case_counts.to_csv(out / "case_counts.csv", index=False, float_format="%.6f")
    export_all_surfaces(result, out)

    lines = [
        f"cases = {len(cases)}",
        f"grid_points = {len(result.surface)}",
        f"count_kind = {count_kind}",
        f"fusion = {cfg.fusion}",
    ]
    lines += [f"{name} = {value:g}" for name, value in result.best.as_dict().items()]
    lines.append(f"logl = {_fmt(result.best_logl)}")
    _emit("\n".join(lines) + "\n", out / "report.txt")
    return 0


#####################################
# evaluate
#####################################


def _read_table(path: str) -> pd.DataFrame:
    try:
        table = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise StatsError(f"malformed CSV {path}: {e}") from e
    missing = [c for c in ("id", "count", "volume", "rating") if c not in table.columns]
    if missing:
        raise StatsError(f"malformed CSV {path}: missing columns {missing}")
    for column in ("count", "volume", "rating"):
        values = pd.to_numeric(table[column], errors="coerce")
        if values.isna().any():
            raise StatsError(f"malformed CSV {path}: non-numeric value in column {column}")
        table[column] = values
    return table


def cmd_evaluate(args: argparse.Namespace) -> int:
    table = _read_table(args.csv)
    lines = [f"n = {len(table)}"]
    for column in ("count", "volume"):
        result = spearman(table[column].to_numpy(), table["rating"].to_numpy())
        lines.append(f"{column}_rho = {_fmt(result.rho)}")
        lines.append(f"{column}_p = {result.p_value:.6g}")
    _emit("\n".join(lines) + "\n", pathlib.Path(args.report) if args.report else None)
    return 0


#####################################
# phantom
#####################################


def cmd_phantom(args: argparse.Namespace) -> int:
    cfg = _config(args, ("seed",))
    spec = PhantomSpec(
        dims=tuple(args.dims),
        spacing=tuple(args.spacing),
        n_tubes=args.n_tubes,
        radius_range=(args.radius_min, args.radius_max),
        length_range=(args.length_min, args.length_max),
        contrast=args.contrast,
        background=args.background,
        polarity=args.polarity,
        noise_sigma=args.noise,
        seed=cfg.seed,
        min_separation_mm=args.min_separation,
    )
    phantom = generate_phantom(spec)
    phantom.save(args.out)
    lines = [f"true_count = {phantom.true_count}"]
    lines += [f"rating_{name} = {rate_phantom(phantom.true_count, scale)}" for name, scale in SCALES.items()]
    _emit("\n".join(lines) + "\n")
    return 0


#####################################
# filter
#####################################


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = _config(args, FILTER_KEYS)
    vol = reslice_isotropic(load_volume(args.volume), cfg.target_spacing)
    response = vesselness_multiscale(vol, _filter_params(cfg, polarity=args.polarity), threads=cfg.threads)
    save_volume(response, args.out)
    _emit(f"max_vesselness = {_fmt(float(response.data.max()))}\n")
    return 0


#####################################
# Parser
#####################################


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--s-min", dest="s_min", type=float, help="smallest scale in mm (default 1.4)")
    p.add_argument("--s-max", dest="s_max", type=float, help="largest scale in mm (default 3.2)")
    p.add_argument("--s-step", dest="s_step", type=float, help="scale step in mm (default 0.2)")
    p.add_argument("--alpha", type=float, help="plate sensitivity (default 0.5)")
    p.add_argument("--beta-f", dest="beta_f", type=float, help="blob sensitivity (default 0.5)")
    p.add_argument("--c", type=float, help="structure sensitivity in intensity units (default 500)")
    p.add_argument("--target-spacing", dest="target_spacing", type=float, help="reslice spacing in mm (default 1)")


def _add_segmentation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fusion", choices=("intersection", "union", "t1", "t2"), help="how T1 and T2 masks combine")
    p.add_argument("--axis", choices=("x", "y", "z"), help="slice axis for the densest-slice count (default z)")
    p.add_argument("--min-length", dest="min_length_mm", type=float, help="shortest kept component in mm (default 3)")
    p.add_argument("--max-length", dest="max_length_mm", type=float, help="longest kept component in mm (default 50)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of `key = value` settings")
    common.add_argument("--threads", type=int, help="worker threads (default: TUBENESS_THREADS or all cores)")

    parser = argparse.ArgumentParser(
        prog="tubeness", description="Rating-supervised vesselness segmentation of perivascular spaces."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit an ordered logit model on synthetic ratings")
    p.add_argument("--scale", choices=sorted(SCALES), help="rating scale (default wardlaw)")
    p.add_argument("--n", type=int, help="synthetic sample size (default 1000)")
    p.add_argument("--seed", type=int, help="PRNG seed (default 7)")
    p.add_argument("--lognormal-mu", dest="lognormal_mu", type=float, help="log-normal mu of true counts")
    p.add_argument("--lognormal-sigma", dest="lognormal_sigma", type=float, help="log-normal sigma of true counts")
    p.add_argument("--rating-from", dest="rating_from", choices=("pc", "npc"), help="count binned into the rating")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--data", help="also write the synthetic dataset as CSV")
    p.add_argument("--curves", help="also write class-probability curves as CSV")
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("segment", parents=[common], help="segment and count PVS in one case")
    p.add_argument("--t1", dest="t1_path", help="T1-weighted volume")
    p.add_argument("--t2", dest="t2_path", help="T2-weighted volume")
    p.add_argument("--roi", required=True, help="region of interest mask")
    p.add_argument("--t1-threshold", dest="t1", type=float, help="T1 vesselness threshold (default 0.96)")
    p.add_argument("--t2-threshold", dest="t2", type=float, help="T2 vesselness threshold (default 0.35)")
    _add_filter_flags(p)
    _add_segmentation_flags(p)
    p.add_argument("--out", required=True, help="output prefix for <prefix>_mask and <prefix>_report.txt")
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser("optimize", parents=[common], help="grid search segmentation parameters on a rated cohort")
    p.add_argument("--manifest", required=True, help="CSV with id,t1_path,t2_path,roi_path,rating")
    p.add_argument("--model", default="wardlaw", help="model file, or wardlaw / patankar for the published models")
    p.add_argument("--scale", choices=sorted(SCALES), help="rating scale of the cohort")
    p.add_argument("--count-kind", dest="count_kind", choices=("slice", "total", "auto"), help="count fed to the model")
    p.add_argument("--grid-s-min", dest="grid_s_min", help="start,stop,step for s_min")
    p.add_argument("--grid-s-max", dest="grid_s_max", help="start,stop,step for s_max")
    p.add_argument("--grid-t1", dest="grid_t1", help="start,stop,step for the T1 threshold")
    p.add_argument("--grid-t2", dest="grid_t2", help="start,stop,step for the T2 threshold")
    p.add_argument("--no-cache", dest="no_cache", action="store_true", help="recompute vesselness at every grid point")
    _add_filter_flags(p)
    _add_segmentation_flags(p)
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("evaluate", parents=[common], help="Spearman correlation of counts and volumes with ratings")
    p.add_argument("--csv", required=True, help="CSV with id,count,volume,rating")
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("phantom", parents=[common], help="generate a synthetic tube phantom")
    p.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64], metavar=("NX", "NY", "NZ"))
    p.add_argument("--spacing", type=float, nargs=3, default=[1.0, 1.0, 1.0], metavar=("SX", "SY", "SZ"))
    p.add_argument("--n-tubes", dest="n_tubes", type=int, default=12)
    p.add_argument("--radius-min", dest="radius_min", type=float, default=0.8)
    p.add_argument("--radius-max", dest="radius_max", type=float, default=1.5)
    p.add_argument("--length-min", dest="length_min", type=float, default=5.0)
    p.add_argument("--length-max", dest="length_max", type=float, default=20.0)
    p.add_argument("--contrast", type=float, default=3000.0)
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--polarity", choices=("bright", "dark"), default="bright")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    p.add_argument("--min-separation", dest="min_separation", type=float, default=4.0, help="mm between centrelines")
    p.add_argument("--seed", type=int, help="PRNG seed (default 7)")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("filter", parents=[common], help="write the multiscale vesselness map of one volume")
    p.add_argument("--volume", required=True, help="input volume")
    p.add_argument("--polarity", choices=("bright", "dark"), default="bright")
    _add_filter_flags(p)
    p.add_argument("--out", required=True, help="output volume path")
    p.set_defaults(handler=cmd_filter)
    return parser


#####################################
# Main
#####################################


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "segment" and not (args.t1_path or args.t2_path):
        parser.error("segment needs --t1, --t2 or both")
    logger.info(f"Running {args.command}; logging to {get_log_file_path()} at {get_log_level()}")
    try:
        return args.handler(args)
    except TubenessError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except OSError as e:
        logger.error(f"{args.command} failed on {getattr(e, 'filename', None) or 'a file'}: {e}")
        return 2

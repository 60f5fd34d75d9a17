# ventriq_main.py

"""
ventriq command line
--------------------
    phantom   write a synthetic beating-LV dataset plus its ground truth
    analyze   LV mask series -> ED/ES phase selection -> ejection fraction
    metrics   segmentation quality of a predicted dataset against a reference
    noise     corrupt a dataset's intensity stacks with MRI noise
    ensemble  majority vote or probability average of several segmentations
    agree     agreement statistics of reference vs estimated EF values

Exit codes: 0 ok, 1 domain error, 2 usage error, 3 I/O error.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from tqdm import tqdm

from evaluation.agreement import bland_altman, mean_abs_difference, plot_points, proportional_bias_check
from evaluation.metrics import dice, hausdorff, icc_2_1, slice_dice
from pipeline.cycle import CycleSeries, MetricKind, build_series
from pipeline.ensemble import average_probabilities, majority_vote
from pipeline.errors import DimensionMismatchError, DomainError, StackIOError, UsageError, VentriqError
from pipeline.fitting import FitMethod, GPHyper, estimate_ef, estimate_ef_interpolated, select_phases
from pipeline.ingestion import find_datasets, subject_name
from pipeline.morph import HoleMode, StructuringElement, postprocess
from pipeline.noise import DEFAULT_SNR, MIXED_DEFAULT_SNR, NoiseModel, NoiseSpec, corrupt_series
from pipeline.phantom import PhantomSpec, generate
from pipeline.stackio import (
    read_ground_truth, read_pairs_csv, read_probability_maps, read_stack_series, write_ground_truth,
    write_report, write_rows_csv, write_stack_series,
)
from pipeline.volgrid import Phase, StackSeries, mask_volume, normalize_minmax, threshold
from utils.config import HAUSDORFF_UNITS, OUTPUT_FORMATS, PipelineConfig, load_config
from utils.logger import LOG_FILE_NAME, setup_logger

GROUND_TRUTH_NAME = "ground_truth.json"
SUMMARY_NAME = "run_summary.csv"
SUMMARY_FIELDS = ["subject", "reference", "estimate", "status", "details"]
ENSEMBLE_MODES = ("vote", "average")


# --- Argument types ---

def _int_at_least(minimum: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value
    return parse


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _seed(text: str) -> int:
    value = _int_at_least(0)(text)
    if value >= 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ventriq", description="Ejection-fraction estimation from LV mask series.")
    parser.add_argument("--config", help="YAML/JSON configuration file; flags override it.")
    parser.add_argument("--log-dir", help="Directory of the rotating log file (default: paths.logs).")
    parser.add_argument("--verbose", action="store_true", help="Show DEBUG messages on the console.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="Write a synthetic dataset with ground truth.")
    p.add_argument("--out", required=True, help="Output dataset directory.")
    p.add_argument("--phases", type=_int_at_least(2), default=13)
    p.add_argument("--ef", type=float, default=55.0, help="Target ejection fraction in percent.")
    p.add_argument("--ved", type=float, default=500.0, help="Target end-diastolic volume in mm^3.")
    p.add_argument("--es-fraction", type=float, default=0.4, help="ES position as a fraction of the cycle.")
    p.add_argument("--wall", type=_int_at_least(0), default=3, help="Myocardial wall thickness in voxels.")
    p.add_argument("--noise-snr", type=_positive_float, help="Add Rician noise to the intensities at this SNR.")
    p.add_argument("--seed", type=_seed, default=42)

    a = sub.add_parser("analyze", help="Select ED/ES phases and estimate EF.")
    a.add_argument("--stacks", required=True, help="manifest.json, or a directory searched for datasets.")
    a.add_argument("--out", required=True, help="Report file (single dataset) or output directory (batch).")
    a.add_argument("--metric", choices=[m.value for m in MetricKind])
    a.add_argument("--fit", choices=["gp", "poly4", "poly"])
    a.add_argument("--curve", help="CSV of observed points and fitted samples (single dataset).")
    a.add_argument("--format", choices=OUTPUT_FORMATS, dest="output_format")
    a.add_argument("--interpolated", action="store_true", help="Also report the unsnapped fitted extrema.")
    a.add_argument("--grid-size", type=_int_at_least(2))
    a.add_argument("--postprocess", action="store_true", help="Threshold, open and fill masks before analysis.")
    a.add_argument("--threshold", type=float)
    a.add_argument("--se", choices=[s.value for s in StructuringElement], dest="structuring_element")
    a.add_argument("--iterations", type=_int_at_least(1))
    a.add_argument("--hole-mode", choices=[h.value for h in HoleMode])
    a.add_argument("--restarts", type=_int_at_least(0))
    a.add_argument("--seed", type=_seed)

    m = sub.add_parser("metrics", help="Dice, Hausdorff and volume agreement per phase.")
    m.add_argument("--pred", required=True, help="Predicted dataset manifest.")
    m.add_argument("--ref", required=True, help="Reference dataset manifest.")
    m.add_argument("--out", required=True)
    m.add_argument("--units", choices=HAUSDORFF_UNITS, help="Units of the headline Hausdorff value.")

    n = sub.add_parser("noise", help="Corrupt intensity stacks with MRI noise.")
    n.add_argument("--stacks", required=True, help="Input dataset manifest.")
    n.add_argument("--out", required=True, help="Output dataset directory.")
    n.add_argument("--model", choices=[model.value for model in NoiseModel])
    n.add_argument("--snr", type=_positive_float)
    n.add_argument("--seed", type=_seed)
    n.add_argument("--normalize-first", action="store_true", help="Min-max normalize each stack before corrupting.")

    e = sub.add_parser("ensemble", help="Combine several segmentations of one cycle.")
    e.add_argument("--members", nargs="+", required=True, help="Dataset manifests, one per segmentation.")
    e.add_argument("--out", required=True, help="Output dataset directory.")
    e.add_argument("--mode", choices=ENSEMBLE_MODES, default="vote",
                   help="Majority vote of masks, or averaging of probability maps.")

    g = sub.add_parser("agree", help="Bland-Altman and MD of reference vs estimate.")
    g.add_argument("--pairs", required=True, help="CSV with columns subject,reference,estimate.")
    g.add_argument("--out", required=True)
    g.add_argument("--plot", help="Differences-vs-means CSV (default: <out>_points.csv).")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.command == "analyze":
        cfg = cfg.override("analysis", metric=args.metric, fit=args.fit, grid_size=args.grid_size,
                           snap=False if args.interpolated else None)
        cfg = cfg.override("postprocess", enabled=True if args.postprocess else None, threshold=args.threshold,
                           structuring_element=args.structuring_element, iterations=args.iterations,
                           hole_mode=args.hole_mode)
        cfg = cfg.override("gp", restarts=args.restarts)
        if args.output_format:
            cfg.output_format = args.output_format
    elif args.command == "noise":
        cfg = cfg.override("noise", model=args.model, snr=args.snr,
                           normalize_first=True if args.normalize_first else None)
    elif args.command == "metrics":
        cfg = cfg.override("metrics", hausdorff_units=args.units)
    if getattr(args, "seed", None) is not None and args.command != "phantom":
        cfg.seed = args.seed
    return cfg


# --- phantom ---

def cmd_phantom(args, cfg: PipelineConfig, logger) -> int:
    spec = PhantomSpec(n_phases=args.phases, v_ed_target=args.ved, ef_target=args.ef,
                       es_phase_fraction=args.es_fraction, wall_thickness=args.wall,
                       seed=args.seed, noise_snr=args.noise_snr)
    series, gt = generate(spec)
    write_stack_series(series, args.out)
    write_ground_truth(gt, os.path.join(args.out, GROUND_TRUTH_NAME))
    logger.info(f"Phantom written to {args.out}: EF {gt.ef_percent:.4f}%, ED {gt.ed_phase}, ES {gt.es_phase}")
    return 0


# --- analyze ---

def analyze_dataset(manifest_path: str, cfg: PipelineConfig, max_workers: int = 1) -> Tuple[dict, object, CycleSeries]:
    """Returns (report dict, PhaseSelection, metric series) of one dataset."""
    series = read_stack_series(manifest_path)
    if cfg.postprocess.enabled:
        pp = cfg.postprocess
        maps = read_probability_maps(manifest_path)
        series = series.with_masks([postprocess(p, pp.threshold, pp.structuring_element, pp.iterations, pp.hole_mode)
                                    for p in maps])

    analysis = cfg.analysis
    metric_series = build_series(series, analysis.metric, max_workers)
    volume_series = metric_series if analysis.metric is MetricKind.VOLUME else build_series(series, MetricKind.VOLUME)
    hyper = GPHyper(cfg.gp.amplitude, cfg.gp.length_scale, cfg.gp.jitter)
    selection = select_phases(metric_series, analysis.fit, hyper, cfg.gp.restarts, cfg.seed, analysis.grid_size)
    ef = estimate_ef(volume_series, selection)

    report = ef.to_dict()
    if metric_series.mid_slice_index is not None:
        report["mid_slice_index"] = metric_series.mid_slice_index
    report["phase_selection"] = selection.to_dict()
    if selection.method is FitMethod.GP:
        model = selection.model
        report["gp"] = {
            "amplitude": model.hyper.amplitude,
            "length_scale": model.hyper.length_scale,
            "log_marginal_likelihood": model.log_marginal_likelihood,
        }
    if not analysis.snap:
        report["ef_interpolated_percent"] = estimate_ef_interpolated(
            volume_series, selection, hyper, cfg.gp.restarts, cfg.seed)
    report["volumes_mm3"] = [float(v) for v in volume_series.values]
    return report, selection, metric_series


def curve_rows(selection, metric_series: CycleSeries) -> List[dict]:
    rows = [{"kind": "observed", "phase": float(p), "value": float(v)}
            for p, v in zip(metric_series.phases, metric_series.values)]
    rows += [{"kind": "fitted", "phase": float(x), "value": float(y)}
             for x, y in zip(selection.curve_x, selection.curve_y)]
    return rows


def _write_analysis(report: dict, path: str, fmt: str) -> None:
    if fmt == "csv":
        flat = {k: v for k, v in report.items() if not isinstance(v, (dict, list))}
        write_report(flat, path, "csv")
    else:
        write_report(report, path, "json")


def _reference_ef(manifest_path: str) -> Optional[float]:
    gt_path = os.path.join(os.path.dirname(manifest_path), GROUND_TRUTH_NAME)
    if not os.path.isfile(gt_path):
        return None
    return read_ground_truth(gt_path).ef_percent


def cmd_analyze(args, cfg: PipelineConfig, logger) -> int:
    threads = cfg.effective_threads()
    if os.path.isfile(args.stacks):
        report, selection, metric_series = analyze_dataset(args.stacks, cfg, threads)
        _write_analysis(report, args.out, cfg.output_format)
        if args.curve:
            write_rows_csv(curve_rows(selection, metric_series), args.curve)
        logger.info(f"EF {report['ef_percent']:.3f}% (ED {report['ed_phase']}, ES {report['es_phase']}) -> {args.out}")
        return 0

    if args.curve:
        raise UsageError("--curve applies to a single dataset; batch runs write curve.csv per dataset")
    manifests = find_datasets(args.stacks, logger)
    if not manifests:
        logger.warning(f"No datasets found under {args.stacks}")
        write_rows_csv([], os.path.join(args.out, SUMMARY_NAME), SUMMARY_FIELDS)
        return 0

    def _process(manifest_path: str) -> dict:
        subject = subject_name(manifest_path, args.stacks)
        out_dir = os.path.join(args.out, subject)
        report, selection, metric_series = analyze_dataset(manifest_path, cfg)
        _write_analysis(report, os.path.join(out_dir, f"report.{cfg.output_format}"), cfg.output_format)
        write_rows_csv(curve_rows(selection, metric_series), os.path.join(out_dir, "curve.csv"))
        return {"subject": subject, "reference": _reference_ef(manifest_path), "estimate": report["ef_percent"],
                "status": "SUCCESS", "details": f"ED {report['ed_phase']}, ES {report['es_phase']}"}

    results: Dict[str, dict] = {}
    worst = 0
    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(_process, path): path for path in manifests}
        for future in tqdm(as_completed(futures), total=len(futures), desc="Analyzing datasets", unit="dataset"):
            path = futures[future]
            try:
                results[path] = future.result()
            except VentriqError as e:
                logger.error(f"{path}: {e}")
                worst = max(worst, e.exit_code)
                results[path] = {"subject": subject_name(path, args.stacks), "reference": None,
                                 "estimate": None, "status": "ERROR", "details": str(e)}
    for path in manifests:
        logger.info(f"{results[path]['subject']}: {results[path]['status']} ({results[path]['details']})")

    summary_path = os.path.join(args.out, SUMMARY_NAME)
    write_rows_csv([results[p] for p in manifests], summary_path, SUMMARY_FIELDS)
    logger.info(f"Run summary saved to: {summary_path}")
    return worst


# --- metrics ---

def cmd_metrics(args, cfg: PipelineConfig, logger) -> int:
    pred, ref = read_stack_series(args.pred), read_stack_series(args.ref)
    if pred.dims != ref.dims:
        raise DimensionMismatchError(f"Prediction dims {pred.dims} differ from reference dims {ref.dims}")
    if pred.phase_indices != ref.phase_indices:
        raise DomainError(f"Prediction phases {pred.phase_indices} differ from reference phases {ref.phase_indices}")

    use_mm = cfg.metrics.hausdorff_units == "mm"
    rows = []
    for p, r in zip(pred.phases, ref.phases):
        if p.mask.is_empty() or r.mask.is_empty():
            logger.warning(f"Phase {p.index}: empty mask, Hausdorff distance undefined")
            hd_mm = hd_vox = None
        else:
            hd_mm = hausdorff(p.mask, r.mask, use_spacing=True)
            hd_vox = hausdorff(p.mask, r.mask, use_spacing=False)
        rows.append({
            "t": p.index,
            "dice": dice(p.mask, r.mask),
            "hausdorff": hd_mm if use_mm else hd_vox,
            "hausdorff_mm": hd_mm,
            "hausdorff_voxel": hd_vox,
            "volume_pred_mm3": mask_volume(p.mask),
            "volume_ref_mm3": mask_volume(r.mask),
            "slice_dice": slice_dice(p.mask, r.mask),
        })

    dices = np.array([row["dice"] for row in rows])
    report = {
        "n_phases": len(rows),
        "mean_dice": float(dices.mean()),
        "sd_dice": float(dices.std(ddof=1)) if len(rows) > 1 else 0.0,
        "hausdorff_units": cfg.metrics.hausdorff_units,
        "volume_icc": None,
        "phases": rows,
    }
    if len(rows) >= 3:
        ratings = [[row["volume_ref_mm3"], row["volume_pred_mm3"]] for row in rows]
        result = icc_2_1(ratings, cfg.metrics.icc_form)
        report["volume_icc"] = {"form": cfg.metrics.icc_form, **result._asdict()}
    write_report(report, args.out, "json")
    logger.info(f"Mean Dice {report['mean_dice']:.4f} over {len(rows)} phases -> {args.out}")
    return 0


# --- noise ---

def cmd_noise(args, cfg: PipelineConfig, logger) -> int:
    series = read_stack_series(args.stacks)
    if not series.has_intensities:
        raise DomainError(f"{args.stacks} has no intensity stacks to corrupt")
    model = cfg.noise.model
    snr = cfg.noise.snr or (MIXED_DEFAULT_SNR if model is NoiseModel.MIXED else DEFAULT_SNR)
    if cfg.noise.normalize_first:
        series = series.with_intensities([normalize_minmax(p.intensity) for p in series.phases])

    result = corrupt_series(series, NoiseSpec(model, snr, cfg.seed), cfg.effective_threads())
    write_stack_series(result.series, args.out)
    metadata = {
        "model": model.value,
        "snr": snr,
        "seed": cfg.seed,
        "normalize_first": cfg.noise.normalize_first,
        "stacks": [{"t": p.index, "model": m.value, "sigma": s}
                   for p, m, s in zip(result.series.phases, result.models, result.sigmas)],
    }
    write_report(metadata, os.path.join(args.out, "noise.json"), "json")
    logger.info(f"{model.value} noise at SNR {snr:g} written to {args.out}")
    return 0


# --- ensemble ---

def cmd_ensemble(args, cfg: PipelineConfig, logger) -> int:
    members = [read_stack_series(path) for path in args.members]
    first = members[0]
    for path, series in zip(args.members[1:], members[1:]):
        if series.phase_indices != first.phase_indices:
            raise DimensionMismatchError(f"{path}: phases {list(series.phase_indices)} differ from "
                                         f"{list(first.phase_indices)} in {args.members[0]}")

    probabilities = None
    if args.mode == "average":
        member_maps = [read_probability_maps(path) for path in args.members]
        probabilities = [average_probabilities(maps) for maps in zip(*member_maps)]
        masks = [threshold(p, cfg.postprocess.threshold) for p in probabilities]
    else:
        masks = [majority_vote(phase_masks) for phase_masks in zip(*(s.masks for s in members))]

    combined = StackSeries(tuple(Phase(p.index, mask, p.intensity) for p, mask in zip(first.phases, masks)))
    write_stack_series(combined, args.out, probabilities)
    logger.info(f"{args.mode} ensemble of {len(members)} datasets written to {args.out}")
    return 0


# --- agree ---

def cmd_agree(args, cfg: PipelineConfig, logger) -> int:
    pairs = read_pairs_csv(args.pairs)
    ba = bland_altman(pairs)
    md, md_sd = mean_abs_difference(pairs)
    report = {"n": len(pairs), "md": md, "md_sd": md_sd, "bland_altman": ba.to_dict(),
              "proportional_bias": None, "icc": None}
    if len(pairs) >= 3:
        try:
            report["proportional_bias"] = proportional_bias_check(pairs).to_dict()
        except DomainError as e:
            logger.warning(f"Proportional bias check skipped: {e}")
        result = icc_2_1(np.column_stack([pairs.reference, pairs.estimate]), cfg.metrics.icc_form)
        report["icc"] = {"form": cfg.metrics.icc_form, **result._asdict()}
    write_report(report, args.out, "json")
    plot_path = args.plot or os.path.splitext(args.out)[0] + "_points.csv"
    write_rows_csv(plot_points(pairs), plot_path, ["subject", "mean", "difference"])
    logger.info(f"Bias {ba.bias:.3f}, LoA [{ba.loa_lower:.3f}, {ba.loa_upper:.3f}], MD {md:.3f} -> {args.out}")
    return 0


COMMANDS = {
    "phantom": cmd_phantom,
    "analyze": cmd_analyze,
    "metrics": cmd_metrics,
    "noise": cmd_noise,
    "ensemble": cmd_ensemble,
    "agree": cmd_agree,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        cfg = resolve_config(args)
    except UsageError as e:
        print(f"ventriq: {e}", file=sys.stderr)
        return e.exit_code

    log_dir = args.log_dir or cfg.paths.logs
    logger = setup_logger("ventriq", os.path.join(log_dir, LOG_FILE_NAME),
                          console_level=logging.DEBUG if args.verbose else logging.INFO)
    logger.info("=" * 20 + f" {args.command.upper()} STARTED " + "=" * 20)
    logger.debug(f"Resolved configuration: {cfg.to_dict()}")

    try:
        code = COMMANDS[args.command](args, cfg, logger)
    except VentriqError as e:
        logger.error(f"{type(e).__name__}: {e}")
        code = e.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        code = StackIOError.exit_code
    logger.info("=" * 20 + f" {args.command.upper()} ENDED (exit {code}) " + "=" * 20)
    return code


if __name__ == "__main__":
    sys.exit(main())

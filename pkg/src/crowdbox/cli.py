"""Command-line entry point.

Subcommands: loss, grad-check, nms, eval, analyze, simulate, sweep.
Machine-readable output (JSON, CSV) goes to standard output or files;
diagnostics go to standard error. Exit codes: 0 success, 1 validation
error, 2 runtime error. Stochastic subcommands take explicit seeds; there
are no wall-clock defaults anywhere.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, SCHEMA_VERSION
from .assignment import assign
from .dataio import (
    DataFormatError,
    load_annotations,
    load_detections,
    load_json_config,
    join_detections,
    render_scene_svg,
    write_csv,
    write_curve_csv,
    write_detections,
    DetectionSet,
    ImageDetections,
)
from .evaluation import SUBSETS, evaluate
from .geometry import Box
from .gradcheck import run_grad_check
from .losses import LossConfig, total_loss
from .simulator import (
    DEFAULT_NMS_SWEEP_THRESHOLDS,
    OptimizerConfig,
    SceneConfig,
    nms_sensitivity_sweep,
    paired_comparison,
    run_scene,
    sigma_grid,
)
from .nms import greedy_nms


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with code 1 on bad flags."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _print_json(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _load_boxes_file(path: str) -> tuple[list[Box], list[Box]]:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict) or set(raw) != {"proposals", "ground_truths"}:
        raise DataFormatError(
            f"{path}: expected an object with 'proposals' and 'ground_truths'"
        )

    def to_boxes(key: str) -> list[Box]:
        entries = raw[key]
        if not isinstance(entries, list):
            raise DataFormatError(f"{path}: {key} must be a list of boxes")
        boxes = []
        for k, item in enumerate(entries):
            if not (isinstance(item, list) and len(item) == 4):
                raise DataFormatError(f"{path}: {key}[{k}] must be [left, top, width, height]")
            try:
                boxes.append(Box(*[float(v) for v in item]))
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: {key}[{k}]: {exc}") from exc
        return boxes

    return to_boxes("proposals"), to_boxes("ground_truths")


def _loss_config(args) -> LossConfig:
    if getattr(args, "loss_config", None):
        return load_json_config(args.loss_config, LossConfig)
    return LossConfig()


def _cmd_loss(args) -> int:
    proposals, gts = _load_boxes_file(args.boxes)
    cfg = _loss_config(args)
    assignment = assign(proposals, gts, args.iou_threshold)
    positives = assignment.positive_indices
    predicted = [proposals[i] for i in positives]
    targets = [gts[assignment.target_of[i]] for i in positives]
    reps = [
        gts[r] if (r := assignment.rep_target_of[i]) is not None else None
        for i in positives
    ]
    partition = [assignment.partition[i] for i in positives]
    breakdown = total_loss(predicted, targets, reps, partition, cfg)
    _print_json({"assignment": assignment.to_dict(), "loss": breakdown.to_dict()})
    return 0


def _cmd_grad_check(args) -> int:
    cfg = load_json_config(args.loss_config, LossConfig) if args.loss_config else None
    report = run_grad_check(args.scenes, args.seed, args.step, cfg=cfg)
    _print_json(report.to_dict())
    if report.max_rel_error > args.tolerance:
        print(
            f"grad-check: max relative error {report.max_rel_error:g} exceeds "
            f"tolerance {args.tolerance:g}",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_nms(args) -> int:
    detections = load_detections(args.detections)
    filtered = DetectionSet(
        images=tuple(
            ImageDetections(
                image_id=img.image_id,
                detections=tuple(greedy_nms(img.detections, args.iou_threshold)),
            )
            for img in detections.images
        )
    )
    if args.out:
        write_detections(filtered, args.out)
    else:
        from .dataio import dumps_detections

        sys.stdout.write(dumps_detections(filtered))
    return 0


def _cmd_eval(args) -> int:
    dataset = load_annotations(args.annotations)
    for warning in dataset.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    detections = load_detections(args.detections)
    det_map = join_detections(dataset, detections)
    report = evaluate(
        dataset.by_image(), det_map, subset=args.subset, iou_threshold=args.iou_threshold
    )
    if args.out_curve:
        write_curve_csv(report.curve, args.out_curve)
    _print_json(
        {
            "subset": args.subset,
            "iou_threshold": args.iou_threshold,
            "mr2": report.mr2,
            "fp_taxonomy": report.fp_taxonomy.to_dict(),
            "num_images": report.n_images,
            "num_gts": report.n_gts,
        }
    )
    return 0


def _cmd_analyze(args) -> int:
    dataset = load_annotations(args.annotations)
    for warning in dataset.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    detections = load_detections(args.detections)
    det_map = join_detections(dataset, detections)
    report = evaluate(
        dataset.by_image(), det_map, subset=args.subset, iou_threshold=args.iou_threshold
    )
    if args.out_missed:
        write_csv(args.out_missed, ("score", "missed"), report.missed_by_score)
    if args.out_crowd_fp:
        write_csv(
            args.out_crowd_fp,
            ("score", "crowd_fraction", "fp_count"),
            report.fp_crowd_fraction_by_score,
        )
    _print_json(
        {
            "subset": args.subset,
            "num_images": report.n_images,
            "num_gts": report.n_gts,
            "fp_taxonomy": report.fp_taxonomy.to_dict(),
        }
    )
    return 0


def _scene_config(args) -> SceneConfig:
    if getattr(args, "scene_config", None):
        return load_json_config(args.scene_config, SceneConfig)
    return SceneConfig()


def _opt_config(args) -> OptimizerConfig:
    if getattr(args, "opt_config", None):
        return load_json_config(args.opt_config, OptimizerConfig)
    return OptimizerConfig()


def _cmd_simulate(args) -> int:
    from dataclasses import replace

    scene_cfg = _scene_config(args)
    loss_cfg = _loss_config(args)
    opt_cfg = _opt_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.seeds):
        sc = replace(scene_cfg, seed=scene_cfg.seed + i)
        oc = replace(opt_cfg, seed=opt_cfg.seed + i)
        run = run_scene(sc, loss_cfg, oc)
        tag = f"seed{sc.seed:04d}"
        write_csv(
            out_dir / f"{tag}_trajectory.csv",
            ("step", "attraction", "rep_gt", "rep_box", "total"),
            [
                (k, s.loss.attraction, s.loss.rep_gt, s.loss.rep_box, s.loss.total)
                for k, s in enumerate(run.trajectory.steps)
            ],
        )
        sweep = nms_sensitivity_sweep(
            run.trajectory.detections, DEFAULT_NMS_SWEEP_THRESHOLDS, run.scene
        )
        write_csv(out_dir / f"{tag}_sweep.csv", ("threshold", "detected", "fp"), sweep)
        if args.svg:
            render_scene_svg(
                run.scene,
                run.trajectory.initial_boxes,
                run.trajectory.final_boxes,
                out_dir / f"{tag}_scene.svg",
                extent=sc.scene_extent,
            )
    print(f"wrote {args.seeds} run(s) to {out_dir}", file=sys.stderr)
    return 0


def _fraction(pairs, predicate) -> float:
    hits = sum(1 for p in pairs if predicate(p))
    return hits / len(pairs) if pairs else 0.0


def _cmd_sweep(args) -> int:
    scene_cfg = _scene_config(args)
    opt_cfg = _opt_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seeds))
    baseline = LossConfig(alpha=0.0, beta=0.0)
    variants = {
        "repgt": LossConfig(alpha=args.alpha, beta=0.0, sigma_gt=1.0),
        "repbox": LossConfig(alpha=0.0, beta=args.beta, sigma_box=0.0),
    }

    rows = []
    summary: dict[str, dict] = {"seeds": args.seeds}
    for term, variant in variants.items():
        results = paired_comparison(scene_cfg, opt_cfg, baseline, variant, seeds)
        for r in results:
            rows.append(
                (
                    r.seed,
                    term,
                    r.baseline.mean_repulsion_iog,
                    r.variant.mean_repulsion_iog,
                    r.baseline.missed_after_nms,
                    r.variant.missed_after_nms,
                    r.baseline.detected_count_variance,
                    r.variant.detected_count_variance,
                    r.baseline.mean_cross_group_iou,
                    r.variant.mean_cross_group_iou,
                )
            )
        base_iog = [r.baseline.mean_repulsion_iog for r in results]
        var_iog = [r.variant.mean_repulsion_iog for r in results]
        mean_base_iog = sum(base_iog) / len(base_iog)
        mean_var_iog = sum(var_iog) / len(var_iog)
        summary[term] = {
            "mean_repulsion_iog_baseline": mean_base_iog,
            "mean_repulsion_iog_variant": mean_var_iog,
            "repulsion_iog_reduction": (
                1.0 - mean_var_iog / mean_base_iog if mean_base_iog else 0.0
            ),
            "missed_le_baseline_fraction": _fraction(
                results, lambda r: r.variant.missed_after_nms <= r.baseline.missed_after_nms
            ),
            "variance_smaller_fraction": _fraction(
                results,
                lambda r: r.variant.detected_count_variance
                < r.baseline.detected_count_variance,
            ),
            "cross_iou_lower_fraction": _fraction(
                results,
                lambda r: r.variant.mean_cross_group_iou < r.baseline.mean_cross_group_iou,
            ),
        }

    write_csv(
        out_dir / "comparison.csv",
        (
            "seed",
            "term",
            "baseline_rep_iog",
            "variant_rep_iog",
            "baseline_missed",
            "variant_missed",
            "baseline_detected_variance",
            "variant_detected_variance",
            "baseline_cross_iou",
            "variant_cross_iou",
        ),
        rows,
    )

    cells = sigma_grid(scene_cfg, opt_cfg, seeds, alpha=args.alpha, beta=args.beta)
    write_csv(
        out_dir / "sigma_grid.csv",
        (
            "term",
            "sigma",
            "mean_rep_iog",
            "mean_missed",
            "mean_detected_variance",
            "mean_cross_iou",
        ),
        [
            (
                c.term,
                c.sigma,
                c.mean_repulsion_iog,
                c.mean_missed,
                c.mean_detected_variance,
                c.mean_cross_group_iou,
            )
            for c in cells
        ],
    )
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote comparison.csv, sigma_grid.csv, summary.json to {out_dir}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdbox", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"crowdbox {__version__} (schema {SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("loss", help="assignment and loss breakdown for one scene")
    p.add_argument("--boxes", required=True, help="JSON with 'proposals' and 'ground_truths'")
    p.add_argument("--loss-config", help="LossConfig JSON file")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(handler=_cmd_loss)

    p = sub.add_parser("grad-check", help="finite-difference check of the analytic gradients")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--loss-config", help="LossConfig JSON file (default: cycle the smoothing levels)")
    p.set_defaults(handler=_cmd_grad_check)

    p = sub.add_parser("nms", help="greedy non-maximum suppression over a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--out", help="output detections JSON (default: stdout)")
    p.set_defaults(handler=_cmd_nms)

    p = sub.add_parser("eval", help="miss-rate evaluation against annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--subset", default="reasonable", choices=sorted(SUBSETS))
    p.add_argument("--out-curve", help="write the fppi/miss-rate curve CSV here")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("analyze", help="missed-by-score and crowd-error sweeps")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--subset", default="crowd", choices=sorted(SUBSETS))
    p.add_argument("--out-missed", help="CSV of missed ground truths per score threshold")
    p.add_argument("--out-crowd-fp", help="CSV of crowd-error share per score threshold")
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("simulate", help="run seeded scenes through the optimizer")
    p.add_argument("--scene-config", help="SceneConfig JSON file")
    p.add_argument("--loss-config", help="LossConfig JSON file")
    p.add_argument("--opt-config", help="OptimizerConfig JSON file")
    p.add_argument("--seeds", type=int, required=True, help="number of consecutive seeds")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--svg", action="store_true", help="also render per-scene SVGs")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("sweep", help="paired baseline-vs-repulsion runs and the sigma grid")
    p.add_argument("--scene-config", help="SceneConfig JSON file")
    p.add_argument("--opt-config", help="OptimizerConfig JSON file")
    p.add_argument("--seeds", type=int, required=True, help="number of consecutive seeds")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.set_defaults(handler=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (DataFormatError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"crowdbox: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures: simulation aborts, I/O mid-write
        print(f"crowdbox: runtime error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()

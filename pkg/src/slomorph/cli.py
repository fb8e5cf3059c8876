"""Command line interface.

    slomorph analyze --config run.conf          batch over a directory
    slomorph analyze IMAGE [--masks DIR]        single image
    slomorph compare A.csv B.csv --pair-on COL  agreement between two runs
    slomorph render --input IMAGE [--masks DIR] overlay only

Exit codes: 0 success, 1 fatal config/IO error, 2 robust mode skipped a file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from PIL import Image

from . import pipeline
from .errors import SlomorphError
from .logs import ProcessLog


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slomorph")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="measure one image or a batch")
    analyze.add_argument("image", nargs="?", help="single image to analyse")
    analyze.add_argument("--config", help="batch run configuration file")
    analyze.add_argument("--masks", help="directory holding the mask rasters")
    analyze.add_argument("--output", default="slomorph_output",
                         help="output directory for single-image runs")
    analyze.add_argument("--fallback", action="store_true",
                         help="enable classical fallback segmentation")

    compare = sub.add_parser("compare", help="agreement between two result files")
    compare.add_argument("results_a")
    compare.add_argument("results_b")
    compare.add_argument("--pair-on", default="filename")
    compare.add_argument("--output", help="write the report table here")

    render = sub.add_parser("render", help="write the overlay composite only")
    render.add_argument("--input", required=True)
    render.add_argument("--masks")
    render.add_argument("--output", help="overlay path (default <input>_overlay.png)")
    return parser


def _single_config(args) -> pipeline.RunConfig:
    image = Path(args.image)
    return pipeline.RunConfig(
        input_dir=image.parent,
        output_dir=Path(args.output),
        mask_dir=Path(args.masks) if args.masks else None,
        use_fallback_segmentation=args.fallback,
    )


def _cmd_analyze(args) -> int:
    if args.config:
        log = ProcessLog()
        cfg = pipeline.parse_config(args.config, log)
        if args.masks:
            cfg.mask_dir = Path(args.masks)
        if args.fallback:
            cfg.use_fallback_segmentation = True
        collated, failures = pipeline.run_batch(cfg)
        for message in log.messages("WARN"):
            print(f"warning: {message}", file=sys.stderr)
        print(f"collated results: {collated}")
        return 2 if failures else 0
    if not args.image:
        print("error: provide an image or --config", file=sys.stderr)
        return 1
    cfg = _single_config(args)
    row, log, records, artifacts = pipeline.process_one(Path(args.image), cfg)
    pipeline.write_artifacts(Path(args.image).stem, row, log, artifacts,
                             records, cfg)
    pipeline.write_collated([row], cfg.output_dir / "collated_results.csv")
    present = sum(1 for r in records if r.value is not None)
    print(f"{Path(args.image).name}: {present}/{len(records)} metrics -> "
          f"{cfg.output_dir}")
    return 0


def _cmd_compare(args) -> int:
    reports = pipeline.compare_results(args.results_a, args.results_b,
                                       pair_on=args.pair_on)
    header = ("metric", "n", "mae", "pearson", "spearman", "icc_3_1",
              "ba_mean_diff", "ba_loa_low", "ba_loa_high", "lambda_mean_pct")
    print(",".join(header))
    for report in reports:
        print(",".join(pipeline._format_value(report[c]) for c in header))
    if args.output:
        pipeline.write_compare(reports, args.output)
    return 0


def _cmd_render(args) -> int:
    from . import ingest

    image_path = Path(args.input)
    log = ProcessLog()
    image, _ = ingest.load_image(image_path, log)
    mask_dir = Path(args.masks) if args.masks else image_path.parent
    bundle = ingest.load_masks(mask_dir, image_path.stem, image.shape, log)
    fovea = disc = rois = None
    if bundle.fovea is not None and bundle.fovea.any():
        from . import geometry

        fovea = geometry.fovea_centroid(bundle.fovea, log)
    if bundle.optic_disc is not None:
        from . import geometry

        disc = geometry.fit_disc_ellipse(bundle.optic_disc, log)
        rois = geometry.build_zones(disc, image.shape)
    overlay = pipeline.render_overlay(image, bundle, fovea, disc, rois)
    out = Path(args.output) if args.output else image_path.with_name(
        image_path.stem + "_overlay.png")
    Image.fromarray(overlay).save(out)
    print(f"overlay written to {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"analyze": _cmd_analyze, "compare": _cmd_compare,
                "render": _cmd_render}
    try:
        return handlers[args.command](args)
    except SlomorphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

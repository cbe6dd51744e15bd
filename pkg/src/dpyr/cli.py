"""Command-line entry point: ``dpyr {pyramid,detect,score,selftest,bench}``.

Flag defaults can be overridden with ``DPYR_<FLAG>`` environment variables
(e.g. ``DPYR_THREADS=4``); explicit flags win over the environment.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import OPS, format_table, run_bench
from .core import ConfigurationError, DomainError, ParameterError
from .detect import NMS_KINDS, NmsPolicy, PyramidMeta, detections_document, dumps_document, extract_detections, nms
from .dpm_cnn import check_feature_spec, score_pyramid
from .features import (CellMeanExtractor, Hog31Extractor, PyramidConfig, PyramidFormatError,
                       build_feature_pyramid, export_pyramid, import_pyramid, is_pyramid_file, load_image)
from .model import ModelFormatError, load_model, validate

log = logging.getLogger("dpyr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env(name, default, kind=str):
    raw = os.environ.get(f"DPYR_{name}")
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"environment variable DPYR_{name}={raw!r} is not a valid {kind.__name__}") from None


def _float(text):
    return float(text)  # accepts "inf" / "-inf"


def _add_pyramid_flags(p):
    p.add_argument("--max-dim", type=int, default=_env("MAX_DIM", 1713, int),
                   help="level-0 size of the image's longest side in pixels (default 1713)")
    p.add_argument("--levels", type=int, default=_env("LEVELS", 7, int))
    p.add_argument("--interval", type=int, default=_env("INTERVAL", 2, int),
                   help="levels per octave; scale step is 2^(-1/interval)")
    p.add_argument("--pad-y", type=int, default=_env("PAD_Y", 0, int), help="zero cells added above and below")
    p.add_argument("--pad-x", type=int, default=_env("PAD_X", 0, int), help="zero cells added left and right")


def _pyramid_config(args) -> PyramidConfig:
    try:
        return PyramidConfig(args.max_dim, args.levels, args.interval, args.pad_y, args.pad_x)
    except ParameterError as e:
        raise UsageError(str(e)) from None


def _require_file(path):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")


def _load_input(path, cfg, features, cell, stride):
    """Return (pyramid, image or None) for an image or a DPYR file."""
    _require_file(path)
    if is_pyramid_file(path):
        return import_pyramid(path), None
    try:
        image = load_image(path)
    except OSError as e:
        raise UsageError(f"cannot read image {path}: {e}") from None
    extractor = Hog31Extractor(cell) if features == "hog31" else CellMeanExtractor(stride)
    return build_feature_pyramid(image, cfg, extractor), image


def cmd_pyramid(args) -> int:
    cfg = _pyramid_config(args)
    pyr, _ = _load_input(args.input, cfg, args.features, args.cell, args.stride)
    export_pyramid(pyr, args.out)
    print("level\tscale\trows\tcols\tchannels\tcells")
    for i, fm in enumerate(pyr.levels):
        r, c = pyr.unpadded_shape(i)
        print(f"{i}\t{pyr.scales[i]:.10g}\t{fm.rows}\t{fm.cols}\t{fm.channels}\t{r * c}")
    print(f"total_cells\t{pyr.total_cells()}")
    return EXIT_OK


def _load_checked_model(path):
    _require_file(path)
    model = load_model(path)
    problems = validate(model)
    if problems:
        raise UsageError("invalid model: " + "; ".join(map(str, problems)))
    return model


def _model_pyramid(args, model):
    cfg = _pyramid_config(args)
    spec = model.feature_spec
    features = args.features or ("hog31" if spec.kind == "hog31" else "import")
    pyr, image = _load_input(args.input, cfg, features, spec.stride, spec.stride)
    if pyr.levels:
        check_feature_spec(pyr.channels, pyr.stride, model)
    return pyr, image


def cmd_detect(args) -> int:
    policy = NmsPolicy(args.nms, args.nms_threshold, args.max_detections)
    model = _load_checked_model(args.model)
    pyr, image = _model_pyramid(args, model)
    scores = score_pyramid(pyr, model, threads=args.threads)
    dets = extract_detections(scores, PyramidMeta.of(pyr), model, args.threshold)
    kept = nms(dets, policy)
    doc = detections_document(kept, model, policy, args.threshold,
                              image_size=list(pyr.image_size), candidates=len(dets))
    text = dumps_document(doc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"{len(kept)} detections ({len(dets)} before NMS) -> {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    if args.render:
        from .plotting import render_detections
        canvas = image if image is not None else np.full((*pyr.image_size, 3), 255, np.uint8)
        render_detections(canvas, kept, args.render, title=model.class_name)
    return EXIT_OK


def cmd_score(args) -> int:
    model = _load_checked_model(args.model)
    pyr, _ = _model_pyramid(args, model)
    scores = score_pyramid(pyr, model, threads=args.threads)
    arrays = {}
    print("level\tscale\trows\tcols\tfinite\tmax_score\tbest_component")
    for i, lv in enumerate(scores.levels):
        arrays[f"level{i}_scores"] = lv.combined
        arrays[f"level{i}_winner"] = lv.winner
        fin = np.isfinite(lv.combined)
        if fin.any():
            y, x = np.unravel_index(np.argmax(np.where(fin, lv.combined, -np.inf)), lv.combined.shape)
            best, comp = f"{lv.combined[y, x]:.6g}", str(lv.winner[y, x])
        else:
            best, comp = "-inf", "-"
        print(f"{i}\t{pyr.scales[i]:.10g}\t{lv.combined.shape[0]}\t{lv.combined.shape[1]}\t{int(fin.sum())}\t{best}\t{comp}")
    np.savez(args.out, scales=np.asarray(pyr.scales), **arrays)
    if args.render:
        from .plotting import plot_score_pyramid
        plot_score_pyramid(scores, args.render, pyr.scales)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import format_report, run_selftest
    if args.cases < 1:
        raise UsageError("--cases must be >= 1")
    results = run_selftest(args.seed, args.cases, args.inject_fault)
    sys.stdout.write(format_report(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED suites: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print("all suites passed", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repeat < 1:
        raise UsageError("--repeat must be >= 1")
    sizes = args.sizes or {"dt1d": [2 ** k for k in range(16, 21)], "dt2d": [64, 128, 256, 512],
                           "conv": [32, 64, 128], "pipeline": [32, 64, 128]}[args.op]
    rows = run_bench(args.op, sizes, args.repeat, args.seed)
    table = format_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    if args.plot:
        from .plotting import plot_bench
        plot_bench(rows, args.plot)
    return EXIT_OK


def _sizes(text):
    try:
        sizes = [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpyr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pyramid", help="build a feature pyramid and write a DPYR file")
    p.add_argument("input", help="image (PNG/JPEG/...) or DPYR file")
    p.add_argument("--features", choices=("hog31", "import"), default=_env("FEATURES", "hog31"),
                   help="hog31: built-in HOG cells; import: DPYR file as-is, or for an image the "
                        "cell-mean stand-in for an external front-end")
    p.add_argument("--cell", type=int, default=_env("CELL", 8, int), help="HOG cell size in pixels")
    p.add_argument("--stride", type=int, default=_env("STRIDE", 16, int), help="stride of imported features")
    p.add_argument("--out", required=True)
    _add_pyramid_flags(p)
    p.set_defaults(func=cmd_pyramid)

    for name, func, hlp in (("detect", cmd_detect, "detect objects and write a detections document"),
                            ("score", cmd_score, "dump raw score pyramids to .npz")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("input", help="image or DPYR file")
        p.add_argument("--model", required=True)
        p.add_argument("--features", choices=("hog31", "import"), default=_env("FEATURES", None),
                       help="feature front-end for image input (default: from the model)")
        p.add_argument("--threads", type=int, default=_env("THREADS", 1, int))
        p.add_argument("--render", help="also write a PNG figure here")
        _add_pyramid_flags(p)
        if name == "detect":
            p.add_argument("--nms", choices=NMS_KINDS, default=_env("NMS", "iou"))
            p.add_argument("--nms-threshold", type=float, default=_env("NMS_THRESHOLD", 0.3, float))
            p.add_argument("--max-detections", type=int, default=_env("MAX_DETECTIONS", None, int))
            p.add_argument("--threshold", type=_float, default=_env("THRESHOLD", -math.inf, float),
                           help="minimum score to report (default: -inf)")
            p.add_argument("--out", help="detections JSON (default: stdout)")
        else:
            p.add_argument("--out", required=True, help="output .npz")
        p.set_defaults(func=func)

    p = sub.add_parser("selftest", help="run oracle-equivalence suites")
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--cases", type=int, default=_env("CASES", 50, int))
    p.add_argument("--inject-fault", choices=("dt-intersection",), default=None,
                   help="corrupt the fast DT to check that the suites catch it")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("bench", help="time an operation over a list of sizes")
    p.add_argument("--op", required=True, choices=OPS)
    p.add_argument("--sizes", type=_sizes, help="comma-separated sizes")
    p.add_argument("--repeat", type=int, default=_env("REPEAT", 3, int))
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--out", help="also write the table (TSV) here")
    p.add_argument("--plot", help="also write a log-log timing plot (PNG) here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"dpyr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("dpyr: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ParameterError, DomainError,
            ModelFormatError, PyramidFormatError, OSError) as e:
        print(f"dpyr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.exception("internal failure")
        print(f"dpyr: internal error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

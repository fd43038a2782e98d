"""``palletmap`` command line.

Every option can also come from a JSON config file (``--config``), either as
flat keys named after the option (``iou_thresh``) or inside a section named
after the subcommand, and from ``PALLETMAP_<OPTION>`` environment variables.
Precedence: command line > environment > config file > built-in default.

Exit codes: 0 success, 1 validation findings or failed checks, 2 usage or
configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from palletmap import __version__
from palletmap.annotation_io import (
    SPLITS,
    check_fractions,
    load_manifest,
    parse_annotations,
    parse_grid,
    parse_predictions,
    decode_grid,
    serialize_annotations,
)
from palletmap.association import DEFAULT_TAU, METHODS, AssociationConfig, associate_detections
from palletmap.augmentation import AugmentationSpec, augment, load_spec
from palletmap.errors import ConfigError, ParseError, PalletmapError, StudyError, ValidationError
from palletmap.evaluation import COCO_THRESHOLDS, DEFAULT_CONF_THRESH, evaluate
from palletmap.gradcheck import run_all
from palletmap.pipeline import load_images, run_pipeline
from palletmap.raster import read_pnm, write_pnm
from palletmap.tuner import StudyConfig, load_space, run_study
from palletmap.objectives import OBJECTIVES, get_objective

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
ENV_PREFIX = "PALLETMAP_"


class UsageError(Exception):
    pass


def parse_map_range(text: str) -> tuple[float, ...]:
    """``"0.50:0.95:0.05"`` -> (0.5, 0.55, ..., 0.95); a single number is one threshold."""
    parts = [float(p) for p in str(text).split(":")]
    if len(parts) == 1:
        return (parts[0],)
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise argparse.ArgumentTypeError(f"map range must be start:stop:step, got {text!r}")
    start, stop, step = parts
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + k * step, 10) for k in range(n))


def _dump(doc, output: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _emit(text, output)


def _emit(text: str, output: str | None) -> None:
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _need(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _need_paths(*paths: str | Path) -> None:
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file or directory: {p}")


# --- validate -----------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    _need(args, "manifest")
    _need_paths(args.manifest)
    findings: list[dict] = []

    def add(file: str, message: str, line: int | None = None) -> None:
        findings.append({"file": file, "line": line, "message": message})

    try:
        manifest = load_manifest(args.manifest)
    except (json.JSONDecodeError, ConfigError) as exc:
        add(str(args.manifest), f"unreadable manifest: {exc}")
        _dump({"manifest": str(args.manifest), "images": 0, "findings": findings, "ok": False}, args.output)
        return EXIT_FINDINGS

    num_classes = len(manifest.classes)
    seen: set[str] = set()
    for entry in manifest.images:
        if entry.id in seen:
            add(str(args.manifest), f"duplicate image id {entry.id!r}")
        seen.add(entry.id)
        if entry.split not in SPLITS:
            add(str(args.manifest), f"image {entry.id!r} has split {entry.split!r}; expected one of {SPLITS}")
        if entry.width <= 0 or entry.height <= 0:
            add(str(args.manifest), f"image {entry.id!r} has non-positive size")
        path = manifest.label_path(entry)
        if not path.is_file():
            add(str(path), "label file missing")
            continue
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            try:
                parse_annotations(line, num_classes)
            except (ParseError, ValidationError) as exc:
                msg = str(exc).split(": ", 1)[1] if str(exc).startswith("line ") else str(exc)
                add(str(path), msg, lineno)

    if manifest.fractions is not None:
        try:
            fractions = check_fractions(manifest.fractions)
        except ConfigError as exc:
            add(str(args.manifest), str(exc))
        else:
            n = len(manifest.images)
            for name, f in zip(SPLITS, fractions):
                count = len(manifest.split(name))
                if abs(count - f * n) >= 1:
                    add(str(args.manifest), f"split {name!r} has {count} images, expected about {f * n:.1f}")

    _dump(
        {"manifest": str(args.manifest), "images": len(manifest.images), "findings": findings, "ok": not findings},
        args.output,
    )
    return EXIT_FINDINGS if findings else EXIT_OK


# --- associate ----------------------------------------------------------------


def cmd_associate(args: argparse.Namespace) -> int:
    _need(args, "pred", "width", "height")
    _need_paths(args.pred)
    text = Path(args.pred).read_text(encoding="utf-8")
    if Path(args.pred).suffix == ".grid":
        dets = decode_grid(parse_grid(text), args.width, args.height, args.grid_conf)
    else:
        dets = parse_predictions(text, args.width, args.height)
    cfg = AssociationConfig(args.method, args.tau)
    amap, _, _ = associate_detections(dets, cfg)
    image_id = args.image_id or Path(args.pred).stem
    _dump(amap.to_json(image_id), args.output)
    return EXIT_OK


# --- evaluate -----------------------------------------------------------------


def _write_curves(rows, path: str) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "conf", "precision", "recall", "f1"])
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def cmd_evaluate(args: argparse.Namespace) -> int:
    _need(args, "manifest", "pred_dir")
    _need_paths(args.manifest, args.pred_dir)
    manifest = load_manifest(args.manifest)
    data = load_images(manifest, Path(args.pred_dir), args.split, args.grid_conf)
    report = evaluate(data.preds, data.gts, manifest.classes, args.iou_thresh, args.conf_thresh, args.map_range)
    doc = report.to_json()
    doc["images"] = len(data.ids)
    doc["skipped"] = data.skipped
    _dump(doc, args.output)
    if args.curves_csv:
        _write_curves(report.curve_rows(), args.curves_csv)
    return EXIT_OK


# --- pipeline -----------------------------------------------------------------


def cmd_pipeline(args: argparse.Namespace) -> int:
    _need(args, "manifest", "pred_dir")
    _need_paths(args.manifest, args.pred_dir)
    result = run_pipeline(
        args.manifest,
        args.pred_dir,
        AssociationConfig(args.method, args.tau),
        args.iou_thresh,
        args.conf_thresh,
        args.map_range,
        args.split,
        args.grid_conf,
    )
    _dump(result.to_json(), args.output)
    if args.curves_csv:
        _write_curves(result.report.curve_rows(), args.curves_csv)
    return EXIT_OK


# --- augment ------------------------------------------------------------------


def cmd_augment(args: argparse.Namespace) -> int:
    _need(args, "spec", "in_dir", "out_dir")
    _need_paths(args.spec, args.in_dir)
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = AugmentationSpec(**{**spec.to_json(), "seed": args.seed})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    images = sorted(p for p in Path(args.in_dir).iterdir() if p.suffix in (".ppm", ".pgm"))
    for path in images:
        img = read_pnm(path)
        label = path.with_suffix(".txt")
        anns = parse_annotations(label.read_text(encoding="utf-8")) if label.is_file() else []
        out, new, ops = augment(img, anns, spec, path.stem)
        write_pnm(out, out_dir / path.name)
        (out_dir / f"{path.stem}.txt").write_text(serialize_annotations(new), encoding="utf-8")
        records.append(
            {
                "id": path.stem,
                "hflip": ops.hflip,
                "vflip": ops.vflip,
                "zoom": ops.zoom,
                "anchor": list(ops.anchor),
                "sigma": ops.sigma,
                "noise_fraction": ops.noise_fraction,
                "boxes_in": len(anns),
                "boxes_out": len(new),
            }
        )
    _dump({"seed": spec.seed, "images": records}, args.output)
    return EXIT_OK


# --- tune ---------------------------------------------------------------------


def cmd_tune(args: argparse.Namespace) -> int:
    _need(args, "space")
    _need_paths(args.space)
    space = load_space(args.space)
    try:
        objective = get_objective(args.objective, space)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    cfg = StudyConfig(
        n_trials=args.trials,
        n_startup_trials=min(args.startup_trials, args.trials),
        warmup_steps=args.warmup_steps,
        seed=args.seed,
    )
    result = run_study(space, cfg, objective)
    lines = "".join(json.dumps(t.to_json(), sort_keys=True) + "\n" for t in result.history)
    _emit(lines, args.output)
    return EXIT_OK


# --- losscheck ----------------------------------------------------------------


def cmd_losscheck(args: argparse.Namespace) -> int:
    reports = run_all(args.samples, args.seed)
    _dump([r.to_json() for r in reports], args.output)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FINDINGS


# --- parser -------------------------------------------------------------------


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output", help="write the JSON result here instead of stdout")
    p.add_argument("--config", help="JSON config file mirroring the options")


def _add_assoc(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="centroid", help="association strategy")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="IoU threshold of the iou method")


def _add_eval(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--pred-dir", help="directory of <id>.txt or <id>.grid prediction files")
    p.add_argument("--iou-thresh", type=float, default=0.5, help="matching IoU for confusion matrix and F1")
    p.add_argument("--conf-thresh", type=float, default=DEFAULT_CONF_THRESH, help="confidence cut for the confusion matrix")
    p.add_argument(
        "--map-range", type=parse_map_range, default=COCO_THRESHOLDS, help="IoU thresholds start:stop:step (default 0.50:0.95:0.05)"
    )
    p.add_argument("--split", choices=SPLITS, help="restrict to one split")
    p.add_argument("--grid-conf", type=float, default=0.0, help="confidence cut applied when decoding grid files")
    p.add_argument("--curves-csv", help="also write confidence-F1 curve samples as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palletmap", description="Pallet / pallet-hole detection post-processing")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset manifest and its label files")
    p.add_argument("--manifest", help="dataset manifest JSON")
    _add_output(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("associate", help="link pallet holes to pallets in one prediction file")
    p.add_argument("--pred", help="prediction file (.txt or .grid)")
    p.add_argument("--width", type=int, help="image width in pixels")
    p.add_argument("--height", type=int, help="image height in pixels")
    p.add_argument("--image-id", help="id to report (defaults to the file stem)")
    p.add_argument("--grid-conf", type=float, default=0.0, help="confidence cut for grid files")
    _add_assoc(p)
    _add_output(p)
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("evaluate", help="detection metrics over a manifest")
    _add_eval(p)
    _add_output(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="ingest, associate and evaluate in one pass")
    _add_eval(p)
    _add_assoc(p)
    _add_output(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("augment", help="augment PPM/PGM images and their YOLO labels")
    p.add_argument("--spec", help="augmentation spec JSON")
    p.add_argument("--in", dest="in_dir", help="input directory of .ppm/.pgm + .txt labels")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    _add_output(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("tune", help="TPE search with median pruning")
    p.add_argument("--space", help="parameter space JSON")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--startup-trials", type=int, default=5)
    p.add_argument("--warmup-steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objective", choices=OBJECTIVES, default="quadratic")
    _add_output(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("losscheck", help="finite-difference check of the loss gradients")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)
    p.set_defaults(func=cmd_losscheck)
    return parser


def _convert(action: argparse.Action, raw):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
    if isinstance(raw, str) and action.type is not None:
        return action.type(raw)
    if isinstance(raw, (int, float)) and action.type is parse_map_range:
        return (float(raw),)
    if isinstance(raw, list) and action.type is parse_map_range:
        return tuple(float(v) for v in raw)
    return raw


def _apply_overrides(
    sub: argparse.ArgumentParser, command: str, config: dict, environ: dict[str, str]
) -> None:
    section = config.get(command, {}) if isinstance(config.get(command), dict) else {}
    defaults = {}
    for action in sub._actions:
        dest = action.dest
        if dest in ("help", "config", "func") or not action.option_strings:
            continue
        for source in (config, section):
            if dest in source and not isinstance(source[dest], dict):
                defaults[dest] = _convert(action, source[dest])
        env_key = ENV_PREFIX + dest.upper()
        if env_key in environ:
            defaults[dest] = _convert(action, environ[env_key])
        if dest in defaults and action.choices is not None and defaults[dest] not in action.choices:
            raise UsageError(f"invalid value {defaults[dest]!r} for {dest}; choose from {list(action.choices)}")
    sub.set_defaults(**defaults)


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser | None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(command)
    return None


def main(argv: Sequence[str] | None = None, environ: dict[str, str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    environ = dict(os.environ if environ is None else environ)
    parser = build_parser()
    try:
        # first pass finds the subcommand and config file so their defaults can be layered in
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("command", nargs="?")
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        sub = _subparser(parser, known.command) if known.command else None
        if sub is not None:
            config = {}
            config_path = known.config or environ.get(ENV_PREFIX + "CONFIG")
            if config_path:
                config = json.loads(Path(config_path).read_text(encoding="utf-8"))
                if not isinstance(config, dict):
                    raise UsageError("config file must hold a JSON object")
            _apply_overrides(sub, known.command, config, environ)
    except UsageError as exc:
        print(f"palletmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"palletmap: config error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_USAGE
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"palletmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE

    handler: Callable[[argparse.Namespace], int] = args.func
    try:
        return handler(args)
    except UsageError as exc:
        print(f"palletmap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"palletmap {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValidationError, StudyError, PalletmapError) as exc:
        print(f"palletmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    except OSError as exc:
        print(f"palletmap {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""``radarseg`` command line: simulate | fit | predict | evaluate | pr-curve.

Exit codes: 0 success, 1 numerical/internal failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .exceptions import (
    FitFailureError,
    FrameParseError,
    InsufficientDataError,
    ModelFormatError,
    RadarSegError,
    SceneConfigError,
    SingularCovarianceError,
)
from .gmm import FitConfig
from .labeling import CLASS_NAMES
from .metrics import default_thresholds
from .pipeline import (
    curve_csv,
    load_model,
    make_manifest,
    read_frames,
    read_truth,
    run_evaluate,
    run_fit,
    run_predict,
    save_model,
    truth_by_side,
    write_frames,
    write_report,
    write_truth,
)
from .simulator import SceneConfig, default_scene, simulate_scene

log = logging.getLogger("radarseg")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(RadarSegError):
    pass


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON config: {exc}") from exc


def _write_text(dest, text):
    if dest in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


def _write_manifest_sidecar(path, manifest):
    if path in (None, "-"):
        return
    Path(f"{path}.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args):
    if args.config:
        cfg = SceneConfig.from_dict(_load_json(args.config))
    else:
        n = {"train": 8000, "test": 1200}.get(args.preset, 100)
        cfg = default_scene(n)
    overrides = {}
    if args.frames is not None:
        overrides["n_frames"] = args.frames
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.quantize:
        overrides["quantize"] = True
    if overrides:
        cfg = SceneConfig.from_dict({**cfg.to_dict(), **overrides})
    scene = simulate_scene(cfg)
    write_frames(scene.frames, args.output)
    truth_path = args.truth
    if truth_path is None and args.output != "-":
        truth_path = str(Path(args.output).with_suffix("")) + ".truth.csv"
    if truth_path is not None:
        write_truth(scene.frames, scene.truth, truth_path)
    manifest = make_manifest("simulate", cfg.to_dict(), seeds={"scene": cfg.seed})
    manifest["classes"] = {str(c): n for c, n in CLASS_NAMES.items()}
    _write_manifest_sidecar(args.output, manifest)
    n_points = sum(len(f.points) for f in scene.frames)
    log.info("simulated %d frames, %d points (seed %d)", len(scene.frames), n_points, cfg.seed)
    return EXIT_OK


# -- fit --------------------------------------------------------------------

def _fit_config(args):
    raw = _load_json(args.config)
    allowed = {f.name for f in fields(FitConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise UsageError(f"unknown fit config keys: {sorted(unknown)}")
    for name, value in (("n_components", args.k), ("seed", args.seed), ("init", args.init),
                        ("max_iter", args.max_iter), ("tol", args.tol),
                        ("reg_covar", args.reg_covar)):
        if value is not None:
            raw[name] = value
    return FitConfig(**raw)


def cmd_fit(args):
    config = _fit_config(args)
    frameset = read_frames(args.input)
    model, report, manifest = run_fit(frameset, config, inputs=[args.input])
    save_model(model, args.output, manifest)
    print(f"iterations: {report.n_iter}")
    print(f"log-likelihood: {report.final_log_likelihood!r}")
    print(f"converged: {str(report.converged).lower()}")
    return EXIT_OK


# -- predict ----------------------------------------------------------------

def cmd_predict(args):
    model, _ = load_model(args.model)
    frameset = read_frames(args.input)
    pred = run_predict(model, frameset)
    rows = []
    n = 0
    for frame in frameset.frames:
        for i in range(len(frame.points)):
            cls = "" if pred.classes is None else int(pred.classes[n])
            rows.append((frame.frame_id, i, int(pred.clusters[n]), cls))
            n += 1
    out = sys.stdout if args.output == "-" else open(args.output, "w", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("frame_id", "point_index", "cluster", "class_code"))
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    _write_manifest_sidecar(args.output, make_manifest(
        "predict", {"model": args.model}, [args.model, args.input]))
    return EXIT_OK


# -- evaluate / pr-curve ----------------------------------------------------

def _truth(args, frameset):
    if args.truth is not None:
        return read_truth(args.truth, frameset.frames)
    if args.truth_from_side:
        return truth_by_side(frameset.frames, args.side_axis)
    raise UsageError("ground truth required: pass --truth PATH or --truth-from-side")


def _thresholds(step):
    try:
        return default_thresholds(step)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_evaluate(args):
    model, _ = load_model(args.model)
    frameset = read_frames(args.input)
    frameset.truth = _truth(args, frameset)
    report = run_evaluate(model, frameset, reassociate=args.reassociate,
                          thresholds=_thresholds(args.threshold_step))
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = make_manifest("evaluate", config, [args.model, args.input, args.truth])
    write_report(report, args.output, manifest)
    if args.store_label_map:
        stored, model_manifest = load_model(args.model)
        model_manifest = {**model_manifest, "label_map_from": manifest}
        save_model(stored.with_label_map(report.label_map), args.model, model_manifest)
    print(f"{'class':<12}{'precision':>10}{'recall':>10}{'f1':>10}{'iou':>10}{'support':>10}")
    for c, m in enumerate(report.metrics):
        print(f"{report.class_names[c]:<12}{m.precision:>10.4f}{m.recall:>10.4f}"
              f"{m.f1:>10.4f}{m.iou:>10.4f}{m.support:>10d}")
    return EXIT_OK


def _class_code(value, K):
    names = {n: c for c, n in CLASS_NAMES.items()}
    if value in names:
        code = names[value]
    else:
        try:
            code = int(value)
        except ValueError:
            raise UsageError(f"unknown class {value!r}") from None
    if not 0 <= code < K:
        raise UsageError(f"class {value!r} out of range for K={K}")
    return code


def cmd_pr_curve(args):
    model, _ = load_model(args.model)
    frameset = read_frames(args.input)
    frameset.truth = _truth(args, frameset)
    code = _class_code(args.class_, model.params.n_components)
    report = run_evaluate(model, frameset, reassociate=args.reassociate,
                          thresholds=_thresholds(args.threshold_step))
    _write_text(args.output, curve_csv(report.curves[code]))
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="radarseg",
        description="GMM point-wise segmentation of mmWave radar point clouds.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labeled synthetic scene")
    p.add_argument("--config", help="scene config JSON")
    p.add_argument("--preset", choices=("default", "train", "test"), default="default",
                   help="frame count preset when no --config is given (100/8000/1200)")
    p.add_argument("--frames", type=int, help="override the number of frames")
    p.add_argument("--seed", type=int)
    p.add_argument("--quantize", action="store_true",
                   help="snap measurements to the sensor resolutions")
    p.add_argument("--output", required=True, help="frame JSONL path or - for stdout")
    p.add_argument("--truth", help="truth CSV path (default: <output>.truth.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the mixture on training frames")
    p.add_argument("input", help="frame JSONL path or -")
    p.add_argument("--config", help="fit config JSON (FitConfig fields)")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=("kmeans", "random"))
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--reg-covar", type=float)
    p.add_argument("--output", required=True, help="model JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="MAP cluster (and class) for every point")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_predict)

    for name, func, help_ in (("evaluate", cmd_evaluate, "score predictions against truth"),
                              ("pr-curve", cmd_pr_curve, "one-vs-rest PR curve for a class")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("input")
        p.add_argument("--model", required=True)
        p.add_argument("--truth", help="truth CSV (frame_id,point_index,class_code)")
        p.add_argument("--truth-from-side", action="store_true",
                       help="label points by the side of the line of sight of their track")
        p.add_argument("--side-axis", choices=("x", "y", "z"), default="x")
        p.add_argument("--threshold-step", type=float, default=0.01)
        p.add_argument("--reassociate", action="store_true",
                       help="ignore a label map stored in the model")
        p.set_defaults(func=func)
        if name == "evaluate":
            p.add_argument("--output", required=True, help="report directory")
            p.add_argument("--store-label-map", action="store_true",
                           help="write the cluster->class association back into the model")
        else:
            p.add_argument("--class", dest="class_", required=True,
                           help="class name (clutter/pedestrian/car) or code")
            p.add_argument("--output", default="-")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. ``head``) closed the pipe
        sys.stderr.close()
        return EXIT_OK
    except (FitFailureError, SingularCovarianceError) as exc:
        print(f"radarseg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (UsageError, FrameParseError, ModelFormatError, SceneConfigError,
            InsufficientDataError, OSError, ValueError) as exc:
        print(f"radarseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RadarSegError as exc:
        print(f"radarseg: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

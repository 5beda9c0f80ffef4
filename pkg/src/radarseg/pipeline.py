"""File formats, model persistence and the fit / predict / evaluate workflow.

Frames travel as JSONL (one frame object per line), ground truth as a
``frame_id,point_index,class_code`` CSV, models as JSON with shortest
round-trip float reprs so parameters survive at full binary precision.
Every artifact written here carries a run manifest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .exceptions import FrameParseError, InsufficientDataError, ModelFormatError
from .features import Frame, RadarPoint, TrackCentroid, frames_to_features
from .gmm import FitConfig, GmmModel, GmmParams, e_step, fit_em, weighted_log_prob
from .labeling import CLASS_NAMES, apply_label_map, associate_labels, ground_truth_by_side
from .metrics import class_metrics, confusion_matrix, default_thresholds, pr_curve

MODEL_FORMAT = "radarseg-gmm/1"
TRUTH_HEADER = ("frame_id", "point_index", "class_code")
METRICS_HEADER = ("class_code", "class_name", "precision", "recall", "f1", "iou", "support")

_POINT_FIELDS = ("r", "theta_az", "theta_el", "vD", "snr", "noise")
_CENTROID_FIELDS = ("pX", "pY", "pZ", "vX", "vY", "vZ")


@dataclass
class FrameSet:
    frames: list
    truth: Optional[list] = None
    source: Optional[str] = None
    seed: Optional[int] = None

    def __len__(self):
        return len(self.frames)

    @property
    def n_points(self):
        return sum(len(f.points) for f in self.frames)

    def all_truth(self):
        if self.truth is None:
            return None
        return np.concatenate(self.truth) if self.truth else np.empty(0, dtype=np.int64)


# -- manifests --------------------------------------------------------------

def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def make_manifest(command, config, inputs=(), seeds=None):
    """Record what produced an artifact: command, config snapshot, seeds, input digests."""
    digests = {}
    for p in inputs:
        if p is None:
            continue
        digests[str(p)] = "stdin" if str(p) == "-" else file_digest(p)
    return {
        "tool": "radarseg",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": dict(seeds or {}),
        "inputs": digests,
    }


# -- frames -----------------------------------------------------------------

def _open_text(source, mode="r"):
    if source in ("-", None):
        return (sys.stdin if "r" in mode else sys.stdout), False
    if isinstance(source, (str, Path)):
        return open(source, mode, encoding="utf-8", newline=""), True
    return source, False


def frame_to_dict(frame):
    d = {"frame_id": frame.frame_id}
    if frame.timestamp is not None:
        d["timestamp"] = frame.timestamp
    d["centroids"] = [
        {"track_id": c.track_id, **{k: getattr(c, k) for k in _CENTROID_FIELDS}}
        for c in frame.centroids
    ]
    pts = []
    for p in frame.points:
        pd = {k: getattr(p, k) for k in _POINT_FIELDS}
        if p.track_id is not None:
            pd["track_id"] = p.track_id
        pts.append(pd)
    d["points"] = pts
    return d


def write_frames(frames, dest):
    fh, close = _open_text(dest, "w")
    try:
        for frame in frames:
            fh.write(json.dumps(frame_to_dict(frame), allow_nan=False) + "\n")
    finally:
        if close:
            fh.close()


def _number(obj, key, lineno, where, required=True):
    if key not in obj:
        if required:
            raise FrameParseError(f"missing field in {where}", lineno, key)
        return None
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FrameParseError(f"expected a number in {where}, got {v!r}", lineno, key)
    if not math.isfinite(v):
        raise FrameParseError(f"non-finite value in {where}", lineno, key)
    return float(v)


def _integer(obj, key, lineno, where, required=True):
    if key not in obj or obj[key] is None:
        if required:
            raise FrameParseError(f"missing field in {where}", lineno, key)
        return None
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise FrameParseError(f"expected a non-negative integer in {where}, got {v!r}",
                              lineno, key)
    return v


def _list(obj, key, lineno):
    v = obj.get(key, [])
    if not isinstance(v, list):
        raise FrameParseError("expected a list", lineno, key)
    for item in v:
        if not isinstance(item, dict):
            raise FrameParseError("expected a list of objects", lineno, key)
    return v


def parse_frame(obj, lineno=None):
    """Build a validated :class:`Frame` from one decoded JSONL object."""
    if not isinstance(obj, dict):
        raise FrameParseError("frame must be a JSON object", lineno)
    frame_id = _integer(obj, "frame_id", lineno, "frame")
    timestamp = _number(obj, "timestamp", lineno, "frame", required=False)
    centroids = []
    for j, c in enumerate(_list(obj, "centroids", lineno)):
        where = f"centroid {j}"
        vals = [_number(c, k, lineno, where) for k in _CENTROID_FIELDS]
        centroids.append(TrackCentroid(_integer(c, "track_id", lineno, where), *vals))
    known = {c.track_id for c in centroids}
    if len(known) != len(centroids):
        raise FrameParseError(f"duplicate track_id in frame {frame_id}", lineno, "track_id")
    points = []
    for i, p in enumerate(_list(obj, "points", lineno)):
        where = f"point {i}"
        vals = [_number(p, k, lineno, where) for k in _POINT_FIELDS]
        track = _integer(p, "track_id", lineno, where, required=False)
        if track is not None and track not in known:
            raise FrameParseError(
                f"frame {frame_id}, point {i}: track_id {track} has no centroid",
                lineno, "track_id",
            )
        try:
            points.append(RadarPoint(*vals, track_id=track))
        except ValueError as exc:
            field_name = "r" if "range" in str(exc) else next(
                (k for k in _POINT_FIELDS if k in str(exc)), None)
            raise FrameParseError(f"{where}: {exc}", lineno, field_name) from exc
    return Frame(frame_id, points, centroids, timestamp)


def read_frames(source):
    """Parse frame JSONL from a path, ``"-"`` (stdin) or an open text stream."""
    fh, close = _open_text(source, "r")
    frames = []
    last_id = -1
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FrameParseError(f"malformed JSON: {exc.msg}", lineno) from exc
            frame = parse_frame(obj, lineno)
            if frame.frame_id <= last_id:
                raise FrameParseError(
                    f"frame_id {frame.frame_id} is not increasing (previous {last_id})",
                    lineno, "frame_id",
                )
            last_id = frame.frame_id
            frames.append(frame)
    finally:
        if close:
            fh.close()
    return FrameSet(frames, source=None if not isinstance(source, (str, Path)) else str(source))


# -- truth ------------------------------------------------------------------

def write_truth(frames, truth, dest):
    fh, close = _open_text(dest, "w")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for frame, labels in zip(frames, truth):
            for i, code in enumerate(labels):
                w.writerow((frame.frame_id, i, int(code)))
    finally:
        if close:
            fh.close()


def read_truth(source, frames):
    """Read a truth CSV and align it with ``frames``; every point must appear exactly once."""
    fh, close = _open_text(source, "r")
    index = {f.frame_id: k for k, f in enumerate(frames)}
    truth = [np.full(len(f.points), -1, dtype=np.int64) for f in frames]
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRUTH_HEADER:
            raise FrameParseError(f"truth header must be {','.join(TRUTH_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FrameParseError("expected 3 columns", lineno)
            try:
                fid, idx, code = (int(v) for v in row)
            except ValueError as exc:
                raise FrameParseError(f"non-integer value: {exc}", lineno) from exc
            if fid not in index:
                raise FrameParseError(f"unknown frame_id {fid}", lineno, "frame_id")
            labels = truth[index[fid]]
            if not 0 <= idx < labels.size:
                raise FrameParseError(f"point_index {idx} out of range", lineno, "point_index")
            if labels[idx] != -1:
                raise FrameParseError(f"duplicate label for frame {fid} point {idx}",
                                      lineno, "point_index")
            if code < 0:
                raise FrameParseError("class_code must be non-negative", lineno, "class_code")
            labels[idx] = code
    finally:
        if close:
            fh.close()
    for f, labels in zip(frames, truth):
        missing = np.flatnonzero(labels < 0)
        if missing.size:
            raise FrameParseError(
                f"truth missing for frame {f.frame_id} point {int(missing[0])}")
    return truth


def truth_by_side(frames, axis="x"):
    return [np.array(ground_truth_by_side(f, axis), dtype=np.int64) for f in frames]


# -- models -----------------------------------------------------------------

def model_to_dict(model, manifest=None):
    p = model.params
    d = {
        "format": MODEL_FORMAT,
        "k": p.n_components,
        "d": p.n_features,
        "weights": p.weights.tolist(),
        "means": p.means.tolist(),
        "covariances": p.covariances.tolist(),
    }
    if model.label_map is not None:
        d["label_map"] = {str(k): v for k, v in sorted(model.label_map.items())}
    d["manifest"] = manifest or {}
    return d


def dumps_model(model, manifest=None):
    return json.dumps(model_to_dict(model, manifest), indent=2, sort_keys=True,
                      allow_nan=False) + "\n"


def save_model(model, path, manifest=None):
    Path(path).write_text(dumps_model(model, manifest), encoding="utf-8")


def model_from_dict(d):
    if not isinstance(d, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if d.get("format") != MODEL_FORMAT:
        raise ModelFormatError(
            f"unsupported model format {d.get('format')!r} (expected {MODEL_FORMAT!r})")
    try:
        params = GmmParams(d["weights"], d["means"], d["covariances"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"malformed parameters: {exc}") from exc
    if (params.n_components, params.n_features) != (d.get("k"), d.get("d")):
        raise ModelFormatError("declared k/d do not match parameter shapes")
    try:
        params.check()
    except ValueError as exc:
        raise ModelFormatError(f"invalid parameters: {exc}") from exc
    label_map = d.get("label_map")
    try:
        model = GmmModel(params, None if label_map is None
                         else {int(k): int(v) for k, v in label_map.items()})
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(str(exc)) from exc
    return model, d.get("manifest", {})


def load_model(path):
    """Return ``(GmmModel, manifest)``."""
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(d)


# -- workflow ---------------------------------------------------------------

def run_fit(frameset, config, inputs=()):
    """Pool every point's features, fit the mixture; returns ``(model, report, manifest)``."""
    if len(frameset) == 0 or frameset.n_points == 0:
        raise InsufficientDataError("training input contains no points")
    X = frames_to_features(frameset.frames)
    model, report = fit_em(X, config)
    manifest = make_manifest("fit", asdict(config), inputs, {"fit": config.seed})
    manifest["fit"] = {
        "n_points": int(X.shape[0]),
        "n_iter": report.n_iter,
        "converged": report.converged,
        "log_likelihood": report.final_log_likelihood,
        "reg_covar": report.reg_covar,
    }
    return model, report, manifest


@dataclass
class Prediction:
    clusters: np.ndarray
    posteriors: np.ndarray
    classes: Optional[np.ndarray] = None


def run_predict(model, frameset):
    X = frames_to_features(frameset.frames)
    if X.shape[0] == 0:
        K = model.params.n_components
        return Prediction(np.empty(0, dtype=np.int64), np.empty((0, K)),
                          None if model.label_map is None else np.empty(0, dtype=np.int64))
    clusters = np.argmax(weighted_log_prob(model.params, X), axis=1)
    posteriors = e_step(model.params, X)
    classes = None if model.label_map is None else apply_label_map(clusters, model.label_map)
    return Prediction(clusters, posteriors, classes)


@dataclass
class EvalReport:
    label_map: dict
    confusion: np.ndarray
    metrics: list
    curves: dict = field(default_factory=dict)
    class_names: dict = field(default_factory=dict)


def run_evaluate(model, frameset, truth=None, reassociate=False, thresholds=None):
    """MAP-predict every point, associate clusters with classes, score.

    ``truth`` defaults to ``frameset.truth``.  The model's stored label map
    is reused unless absent or ``reassociate`` is set.
    """
    truth = frameset.truth if truth is None else truth
    if truth is None:
        raise ValueError("evaluation requires ground-truth labels")
    y = np.concatenate(truth) if len(truth) else np.empty(0, dtype=np.int64)
    K = model.params.n_components
    if y.size == 0:
        raise InsufficientDataError("evaluation input contains no points")
    if y.max() >= K:
        raise ValueError(f"truth uses class code {int(y.max())} but the model has K={K}")
    pred = run_predict(model, frameset)
    if model.label_map is None or reassociate:
        label_map = associate_labels(pred.clusters, y, K)
    else:
        label_map = model.label_map
    classes = apply_label_map(pred.clusters, label_map)
    cm = confusion_matrix(classes, y, K)
    # posterior of class c = posterior of the cluster mapped to it
    inverse = np.empty(K, dtype=np.int64)
    for cluster, cls in label_map.items():
        inverse[cls] = cluster
    class_post = pred.posteriors[:, inverse]
    thr = default_thresholds() if thresholds is None else thresholds
    curves = {c: pr_curve(class_post, y, c, thr) for c in range(K)}
    names = {c: CLASS_NAMES.get(c, f"class_{c}") for c in range(K)}
    return EvalReport(label_map, cm, class_metrics(cm), curves, names)


def metrics_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for c, m in enumerate(report.metrics):
        w.writerow((c, report.class_names[c], f"{m.precision:.4f}", f"{m.recall:.4f}",
                    f"{m.f1:.4f}", f"{m.iou:.4f}", m.support))
    return buf.getvalue()


def confusion_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    K = report.confusion.shape[0]
    w.writerow(["truth\\pred", *(report.class_names[c] for c in range(K))])
    for t in range(K):
        w.writerow([report.class_names[t], *report.confusion[t].tolist()])
    return buf.getvalue()


def curve_csv(curve):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("threshold", "precision", "recall"))
    for t, p, r in curve.rows():
        w.writerow((f"{t:.4f}", f"{p:.4f}", f"{r:.4f}"))
    return buf.getvalue()


def write_report(report, out_dir, manifest):
    """Write metrics.csv, confusion.csv, pr_<class>.csv and report.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(report), encoding="utf-8")
    (out / "confusion.csv").write_text(confusion_csv(report), encoding="utf-8")
    for c, curve in report.curves.items():
        (out / f"pr_{report.class_names[c]}.csv").write_text(curve_csv(curve), encoding="utf-8")
    summary = {
        "classes": {str(c): n for c, n in report.class_names.items()},
        "label_map": {str(k): v for k, v in sorted(report.label_map.items())},
        "confusion": report.confusion.tolist(),
        "metrics": {report.class_names[c]: m._asdict() for c, m in enumerate(report.metrics)},
        "manifest": manifest,
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return out

import io
import json
import sys

import numpy as np
import pytest

from radarseg import cli
from radarseg.exceptions import FrameParseError, InsufficientDataError, ModelFormatError
from radarseg.features import Frame, RadarPoint, frames_to_features
from radarseg.gmm import FitConfig, GmmModel, GmmParams, e_step, predict_map
from radarseg.pipeline import (
    FrameSet,
    dumps_model,
    frame_to_dict,
    load_model,
    metrics_csv,
    read_frames,
    read_truth,
    run_evaluate,
    run_fit,
    run_predict,
    save_model,
    write_frames,
    write_truth,
)
from radarseg.simulator import default_scene, simulate_scene


@pytest.fixture(scope="module")
def scene():
    return simulate_scene(default_scene(120, seed=10))


@pytest.fixture(scope="module")
def fitted(scene):
    model, report, manifest = run_fit(FrameSet(scene.frames), FitConfig(seed=0))
    return model, manifest


def random_model(seed, K=3, d=5):
    rng = np.random.default_rng(seed)
    covs = []
    for _ in range(K):
        A = rng.normal(size=(d, d))
        covs.append(A @ A.T / d + 0.3 * np.eye(d))
    return GmmModel(GmmParams(rng.dirichlet(np.ones(K)), rng.normal(0, 3, (K, d)), covs))


# -- frames -----------------------------------------------------------------

def test_read_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert len(read_frames(path)) == 0


def test_frames_round_trip(tmp_path, scene):
    path = tmp_path / "frames.jsonl"
    write_frames(scene.frames, path)
    back = read_frames(path)
    assert [frame_to_dict(f) for f in back.frames] == [frame_to_dict(f) for f in scene.frames]
    assert back.frames == scene.frames


def test_read_frames_from_stream(scene):
    buf = io.StringIO()
    write_frames(scene.frames[:3], buf)
    buf.seek(0)
    assert read_frames(buf).frames == list(scene.frames[:3])


def _frame_line(**point_overrides):
    point = {"r": 5.0, "theta_az": 0.0, "theta_el": 0.0, "vD": 0.0, "snr": 10.0, "noise": 10.0}
    point.update(point_overrides)
    point = {k: v for k, v in point.items() if v is not None}
    return json.dumps({"frame_id": 1, "centroids": [], "points": [point]})


def test_missing_field_names_line_and_field(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"frame_id": 0, "centroids": [], "points": []})
    path.write_text(good + "\n" + _frame_line(r=None) + "\n")
    with pytest.raises(FrameParseError) as info:
        read_frames(path)
    assert info.value.line == 2 and info.value.field == "r"
    assert "line 2" in str(info.value) and "'r'" in str(info.value)


@pytest.mark.parametrize("text,field", [
    ('{"frame_id": 0, "points": [', None),
    (_frame_line(r=-1.0), "r"),
    (_frame_line(theta_az=120.0), "theta_az"),
    (_frame_line(snr="loud"), "snr"),
    (_frame_line(track_id=4), "track_id"),
    ('{"points": []}', "frame_id"),
])
def test_schema_violations(tmp_path, text, field):
    path = tmp_path / "bad.jsonl"
    path.write_text(text + "\n")
    with pytest.raises(FrameParseError) as info:
        read_frames(path)
    assert info.value.line == 1 and info.value.field == field


def test_frame_ids_must_increase(tmp_path):
    path = tmp_path / "f.jsonl"
    line = json.dumps({"frame_id": 3, "centroids": [], "points": []})
    path.write_text(line + "\n" + line + "\n")
    with pytest.raises(FrameParseError, match="not increasing"):
        read_frames(path)


def test_truth_round_trip(tmp_path, scene):
    path = tmp_path / "truth.csv"
    write_truth(scene.frames, scene.truth, path)
    back = read_truth(path, scene.frames)
    assert all(np.array_equal(a, b) for a, b in zip(back, scene.truth))


def test_truth_must_cover_every_point(tmp_path):
    frames = [Frame(0, [RadarPoint(5, 0, 0, 0, 0, 0), RadarPoint(6, 0, 0, 0, 0, 0)])]
    path = tmp_path / "t.csv"
    path.write_text("frame_id,point_index,class_code\n0,0,1\n")
    with pytest.raises(FrameParseError, match="missing"):
        read_truth(path, frames)
    path.write_text("frame_id,point_index,class_code\n0,0,1\n0,1,0\n0,1,2\n")
    with pytest.raises(FrameParseError, match="duplicate"):
        read_truth(path, frames)


# -- models -----------------------------------------------------------------

def test_model_round_trip_bit_identical(tmp_path):
    model = random_model(1).with_label_map({0: 2, 1: 0, 2: 1})
    path = tmp_path / "m.json"
    save_model(model, path, {"note": "x"})
    back, manifest = load_model(path)
    assert manifest == {"note": "x"} and back.label_map == model.label_map
    for name in ("weights", "means", "covariances"):
        assert np.array_equal(getattr(back.params, name), getattr(model.params, name))
    X = np.random.default_rng(2).normal(0, 4, (1000, 5))
    assert np.array_equal(e_step(back.params, X), e_step(model.params, X))


def test_save_is_idempotent(tmp_path, fitted):
    model, manifest = fitted
    first = tmp_path / "a.json"
    save_model(model, first, manifest)
    again, m2 = load_model(first)
    second = tmp_path / "b.json"
    save_model(again, second, m2)
    assert first.read_bytes() == second.read_bytes()


def _tamper(tmp_path, model, fn):
    d = json.loads(dumps_model(model))
    fn(d)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    return path


def test_load_rejects_bad_weight_sum(tmp_path):
    def edit(d):
        d["weights"] = [0.3, 0.3, 0.3]
    with pytest.raises(ModelFormatError, match="sum to 1"):
        load_model(_tamper(tmp_path, random_model(0), edit))


def test_load_rejects_asymmetric_covariance(tmp_path):
    def edit(d):
        d["covariances"][1][0][2] += 1e-6
    with pytest.raises(ModelFormatError, match="symmetric"):
        load_model(_tamper(tmp_path, random_model(0), edit))


def test_load_rejects_non_pd_covariance(tmp_path):
    def edit(d):
        d["covariances"][0] = [[1.0 if i == j else 2.0 for j in range(5)] for i in range(5)]
    with pytest.raises(ModelFormatError, match="positive definite"):
        load_model(_tamper(tmp_path, random_model(0), edit))


def test_load_rejects_other_format(tmp_path):
    def edit(d):
        d["format"] = "radarseg-gmm/0"
    with pytest.raises(ModelFormatError, match="unsupported"):
        load_model(_tamper(tmp_path, random_model(0), edit))


def test_load_rejects_bad_label_map(tmp_path):
    def edit(d):
        d["label_map"] = {"0": 0, "1": 0, "2": 1}
    with pytest.raises(ModelFormatError):
        load_model(_tamper(tmp_path, random_model(0), edit))


# -- workflow ---------------------------------------------------------------

def test_run_fit_empty_input():
    with pytest.raises(InsufficientDataError):
        run_fit(FrameSet([]), FitConfig())
    with pytest.raises(InsufficientDataError):
        run_fit(FrameSet([Frame(0)]), FitConfig())


def test_run_fit_reproducible(scene, fitted):
    model, manifest = fitted
    again, _, manifest2 = run_fit(FrameSet(scene.frames), FitConfig(seed=0))
    assert dumps_model(model, manifest) == dumps_model(again, manifest2)
    assert manifest["config"]["seed"] == 0 and manifest["fit"]["converged"]


def test_run_predict_matches_map(scene, fitted):
    model, _ = fitted
    pred = run_predict(model, FrameSet(scene.frames[:10]))
    X = frames_to_features(scene.frames[:10])
    assert pred.clusters.tolist() == [predict_map(model, x)[0] for x in X]
    assert pred.classes is None


def test_evaluate_perfect_predictions(scene, fitted):
    model, _ = fitted
    fs = FrameSet(scene.frames)
    clusters = run_predict(model, fs).clusters
    sizes = [len(f.points) for f in scene.frames]
    fs.truth = np.split(clusters, np.cumsum(sizes)[:-1])
    report = run_evaluate(model, fs)
    assert report.label_map == {0: 0, 1: 1, 2: 2}
    assert np.array_equal(report.confusion, np.diag(np.bincount(clusters, minlength=3)))
    for m in report.metrics:
        assert m[:4] == (1.0, 1.0, 1.0, 1.0)


def test_evaluate_on_simulation(scene, fitted):
    model, _ = fitted
    report = run_evaluate(model, FrameSet(scene.frames, scene.truth))
    assert all(m.iou >= 0.5 for m in report.metrics)
    lines = metrics_csv(report).splitlines()
    assert lines[0] == "class_code,class_name,precision,recall,f1,iou,support"
    assert [line.split(",")[1] for line in lines[1:]] == ["clutter", "pedestrian", "car"]
    assert all(len(v.split(".")[1]) == 4 for v in lines[1].split(",")[2:6])


def test_evaluate_requires_truth(scene, fitted):
    with pytest.raises(ValueError, match="ground-truth"):
        run_evaluate(fitted[0], FrameSet(scene.frames))


def test_evaluate_k_mismatch(scene, fitted):
    truth = [np.full(len(f.points), 3) for f in scene.frames]
    with pytest.raises(ValueError, match="K=3"):
        run_evaluate(fitted[0], FrameSet(scene.frames, truth))


# -- CLI --------------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["simulate", "--frames", "150", "--seed", "1", "--output",
                     str(d / "train.jsonl")]) == 0
    assert cli.main(["simulate", "--frames", "60", "--seed", "2", "--output",
                     str(d / "test.jsonl")]) == 0
    return d


def test_cli_simulate_outputs(workdir):
    assert (workdir / "train.truth.csv").exists()
    manifest = json.loads((workdir / "train.jsonl.manifest.json").read_text())
    assert manifest["seeds"] == {"scene": 1} and manifest["classes"]["2"] == "car"


def test_cli_fit_is_reproducible(workdir, capsys):
    a, b = workdir / "a.json", workdir / "b.json"
    assert cli.main(["fit", str(workdir / "train.jsonl"), "--k", "3", "--seed", "4",
                     "--output", str(a)]) == 0
    out = capsys.readouterr().out
    assert "iterations:" in out and "log-likelihood:" in out
    assert cli.main(["fit", str(workdir / "train.jsonl"), "--k", "3", "--seed", "4",
                     "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cli_fit_from_stdin(workdir, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO((workdir / "train.jsonl").read_text()))
    out = workdir / "stdin.json"
    assert cli.main(["fit", "-", "--output", str(out)]) == 0
    model, manifest = load_model(out)
    assert manifest["inputs"] == {"-": "stdin"}


def test_cli_fit_empty_input_exit_2(tmp_path, capsys):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert cli.main(["fit", str(empty), "--output", str(tmp_path / "m.json")]) == 2
    assert "no points" in capsys.readouterr().err


def test_cli_bad_input_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(_frame_line(r=None) + "\n")
    assert cli.main(["fit", str(bad), "--output", str(tmp_path / "m.json")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_cli_usage_error_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["fit"])
    assert info.value.code == 2


def test_cli_numeric_failure_exit_1(workdir, monkeypatch):
    from radarseg.exceptions import FitFailureError

    def boom(*a, **k):
        raise FitFailureError("diverged")
    monkeypatch.setattr(cli, "run_fit", boom)
    assert cli.main(["fit", str(workdir / "train.jsonl"), "--output",
                     str(workdir / "x.json")]) == 1


def test_cli_evaluate_and_store_label_map(workdir, capsys):
    model = workdir / "eval.json"
    assert cli.main(["fit", str(workdir / "train.jsonl"), "--output", str(model)]) == 0
    rep = workdir / "report"
    assert cli.main(["evaluate", str(workdir / "test.jsonl"), "--model", str(model),
                     "--truth", str(workdir / "test.truth.csv"), "--output", str(rep),
                     "--store-label-map"]) == 0
    for name in ("metrics.csv", "confusion.csv", "pr_clutter.csv", "pr_pedestrian.csv",
                 "pr_car.csv", "report.json"):
        assert (rep / name).exists()
    summary = json.loads((rep / "report.json").read_text())
    stored, _ = load_model(model)
    assert stored.label_map == {int(k): v for k, v in summary["label_map"].items()}
    assert summary["manifest"]["command"] == "evaluate"

    pred_csv = workdir / "pred.csv"
    assert cli.main(["predict", str(workdir / "test.jsonl"), "--model", str(model),
                     "--output", str(pred_csv)]) == 0
    rows = pred_csv.read_text().splitlines()
    assert rows[0] == "frame_id,point_index,cluster,class_code"
    assert rows[1].split(",")[3] != ""


def test_cli_pr_curve(workdir, capsys):
    model = workdir / "pr.json"
    assert cli.main(["fit", str(workdir / "train.jsonl"), "--output", str(model)]) == 0
    capsys.readouterr()
    assert cli.main(["pr-curve", str(workdir / "test.jsonl"), "--model", str(model),
                     "--truth-from-side", "--class", "pedestrian",
                     "--threshold-step", "0.1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "threshold,precision,recall" and len(lines) == 12
    assert lines[1].split(",")[2] == "1.0000"


def test_cli_evaluate_without_truth_exit_2(workdir, tmp_path):
    model = workdir / "nt.json"
    assert cli.main(["fit", str(workdir / "train.jsonl"), "--output", str(model)]) == 0
    assert cli.main(["evaluate", str(workdir / "test.jsonl"), "--model", str(model),
                     "--output", str(tmp_path / "r")]) == 2

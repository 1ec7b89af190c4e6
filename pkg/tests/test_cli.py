import json

import pytest

from fixsearch.cli import main

SMALL = ["--ws", "12", "--window", "32", "--levels", "32"]


def outputs(out):
    return json.loads((out / "manifest.json").read_text())["outputs"]


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantom")
    assert main(["phantom", "--out", str(out), "--seed", "2", "--width", "160", "--height", "160",
                 "--n-blobs", "40", "--blob-sigma", "5", "--radius", "7"]) == 0
    return out


@pytest.fixture(scope="module")
def pipeline_a_dir(tmp_path_factory, phantom_dir):
    out = tmp_path_factory.mktemp("pa")
    assert main(["pipeline-a", "--out", str(out), "--image", str(phantom_dir / "phantom.raw"), *SMALL]) == 0
    return out


def test_phantom_outputs(phantom_dir):
    assert set(outputs(phantom_dir)) == {"phantom.raw", "phantom.raw.json", "truth.json"}
    truth = json.loads((phantom_dir / "truth.json").read_text())["truth"]
    assert truth["center"] == [80, 80]


def test_pipeline_a_outputs(pipeline_a_dir):
    assert set(outputs(pipeline_a_dir)) == {
        "report.json", "initial.csv", "final.csv", "mask.pgm", "labels.csv", "gmm.json", "overlay.png"}
    report = json.loads((pipeline_a_dir / "report.json").read_text())
    assert "timings_ms" not in report
    manifest = json.loads((pipeline_a_dir / "manifest.json").read_text())
    assert "gmm" in manifest["timings_ms"]


def run_twice(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([argv[0], "--out", str(a), *argv[1:]]) == 0
    assert main([argv[0], "--out", str(b), *argv[1:]]) == 0
    assert outputs(a) == outputs(b)
    return a


@pytest.mark.parametrize("command", ["pipeline-a", "pipeline-b", "pipeline-thresh", "glcm",
                                     "gabor", "correlate"])
def test_image_commands_deterministic(tmp_path, phantom_dir, command):
    img = str(phantom_dir / "phantom.raw")
    run_twice(tmp_path, [command, "--image", img, *SMALL])


def test_candidate_commands_deterministic(tmp_path, phantom_dir, pipeline_a_dir):
    img = str(phantom_dir / "phantom.raw")
    final = str(pipeline_a_dir / "final.csv")
    initial = str(pipeline_a_dir / "initial.csv")
    gaze = tmp_path / "gaze.csv"
    gaze.write_text("observer_id,t_ms,x,y,valid\no1,100,80,80,1\no2,100,5,5,1\n")
    run_twice(tmp_path / "agree", ["agree", "--a", final, "--b", initial])
    run_twice(tmp_path / "overlay", ["overlay", "--image", img, "--candidates", final])
    out = run_twice(tmp_path / "gaze", ["gaze", "--gaze", str(gaze), "--candidates", initial])
    assert 0 <= json.loads((out / "gaze.json").read_text())["containment"] <= 1
    run_twice(tmp_path / "glcmpts", ["glcm", "--image", img, "--points", final, *SMALL])
    run_twice(tmp_path / "phantom", ["phantom", "--width", "128", "--height", "128", "--radius", "6"])


def test_threads_do_not_change_outputs(tmp_path, phantom_dir):
    img = str(phantom_dir / "phantom.raw")
    for n in ("1", "8"):
        assert main(["pipeline-b", "--out", str(tmp_path / n), "--threads", n, "--image", img, *SMALL]) == 0
    assert outputs(tmp_path / "1") == outputs(tmp_path / "8")


def test_levels_one_is_usage_error(tmp_path, phantom_dir, capsys):
    code = main(["glcm", "--out", str(tmp_path), "--image", str(phantom_dir / "phantom.raw"),
                 "--levels", "1"])
    assert code == 1
    assert "levels must be >= 2" in capsys.readouterr().err


def test_bad_image_is_data_error(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n4 4\n255\n\x00")
    assert main(["gabor", "--out", str(tmp_path / "o"), "--image", str(bad)]) == 2
    assert main(["gabor", "--out", str(tmp_path / "o"), "--image", str(tmp_path / "nope.pgm")]) == 2


def test_unknown_flag_is_usage_error(tmp_path):
    assert main(["pipeline-a", "--out", str(tmp_path), "--image", "x", "--bogus"]) == 1
    assert main(["pipeline-a", "--out", str(tmp_path), "--image", "x", "--threads", "0"]) == 1


def test_dump_config(capsys):
    assert main(["pipeline-b", "--out", "unused", "--image", "unused", "--k-b", "4",
                 "--dump-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["gmm_b"]["k"] == 4
    assert cfg["peaks"]["margin"] == 25 and cfg["peaks"]["min_separation"] == 25.0


def test_config_file_overridden_by_flags(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"glcm": {"levels": 64, "window": 40}}))
    assert main(["pipeline-a", "--out", "u", "--image", "u", "--config", str(path),
                 "--window", "50", "--dump-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["glcm"]["levels"] == 64 and cfg["glcm"]["window"] == 50


def test_suite_small(tmp_path):
    assert main(["suite", "--out", str(tmp_path), "--seeds", "2"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n"] == 2
    assert {"pipeline-a_hits", "pipeline-b_hits", "pipeline-thresh_hits"} <= set(summary)

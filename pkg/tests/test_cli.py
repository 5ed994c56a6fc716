import csv
import filecmp
import json

import pytest

from hlfusion.cli import box_to_json, main, run_predictions
from hlfusion.dataio import MANIFEST, load_dataset, split_dataset
from hlfusion.detector import STAGES, DetectorModel


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, model = root / "data", root / "model.json"
    assert run("generate", "--data", data, "--frames", 30, "--seed", 4) == 0
    assert run("train", "--data", data, "--model", model, "--seed", 4) == 0
    return root, data, model


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_generate_zero_frames(tmp_path):
    assert run("generate", "--data", tmp_path / "d", "--frames", 0, "--seed", 1) == 0
    assert load_dataset(tmp_path / "d") == []


def test_generate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--data", tmp_path / name, "--frames", 8, "--seed", 7) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_generate_threads_match_serial(tmp_path):
    run("generate", "--data", tmp_path / "a", "--frames", 6, "--seed", 2)
    run("generate", "--data", tmp_path / "b", "--frames", 6, "--seed", 2, "--threads", 3)
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_seed_required(tmp_path):
    assert run("generate", "--data", tmp_path / "d", "--frames", 2) == 2


def test_bad_config_values(tmp_path, workspace):
    _, data, model = workspace
    assert run("eval", "--data", data, "--model", model, "--seed", 4, "--train-fraction", 1.5) == 2
    assert run("train", "--data", data, "--model", tmp_path / "m.json", "--seed", 4, "--eps", -1) == 2
    assert run("train", "--data", data, "--model", tmp_path / "m.json", "--seed", 4, "--threads", 0) == 2
    bad = tmp_path / "cfg.json"
    bad.write_text('{"bogus": 1}')
    assert run("train", "--config", bad, "--data", data, "--model", tmp_path / "m.json", "--seed", 4) == 2


def test_missing_dataset_is_io_error(tmp_path):
    assert run("train", "--data", tmp_path / "nowhere", "--model", tmp_path / "m.json", "--seed", 1) == 3


def test_train_outputs(workspace):
    root, data, model = workspace
    timing = json.loads(model.with_suffix(".timing.json").read_text())
    assert set(timing["training"]["stages_s"]) == {*STAGES, "total"}
    assert timing["config"]["seed"] == 4
    again = root / "again.json"
    assert run("train", "--data", data, "--model", again, "--seed", 4) == 0
    assert again.read_bytes() == model.read_bytes()


def test_config_file_precedence(tmp_path, workspace):
    _, data, _ = workspace
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"eps": 0.7, "min_pts": 8}))
    out = tmp_path / "m.json"
    assert run("train", "--config", cfg, "--data", data, "--model", out, "--seed", 4, "--min-pts", 9) == 0
    hp = json.loads(out.read_text())["hyperparams"]["dbscan"]
    assert hp == {"eps": 0.7, "min_pts": 9}


def test_no_training_data(tmp_path, workspace):
    _, data, _ = workspace
    doc = json.loads((data / MANIFEST).read_text())
    for fr in doc["frames"]:
        fr["annotations"] = []
        fr["cloud"] = str(data / fr["cloud"])
    (tmp_path / MANIFEST).write_text(json.dumps(doc))
    assert run("train", "--data", tmp_path, "--model", tmp_path / "m.json", "--seed", 4) == 4
    assert run("eval", "--data", tmp_path, "--oracle", "--seed", 4) == 4


def test_eval_oracle_is_perfect(tmp_path, workspace, capsys):
    _, data, _ = workspace
    rep = tmp_path / "r.json"
    assert run("eval", "--data", data, "--seed", 4, "--oracle", "--report", rep) == 0
    doc = json.loads(rep.read_text())
    assert doc["avg"] == pytest.approx(100.0)
    assert doc["avg_3d"] == pytest.approx(100.0)
    assert "Avg" in capsys.readouterr().out


def test_eval_report_and_histogram(tmp_path, workspace):
    _, data, model = workspace
    rep, hist = tmp_path / "r.json", tmp_path / "h.csv"
    assert run("eval", "--data", data, "--model", model, "--seed", 4, "--report", rep, "--hist", hist) == 0
    doc = json.loads(rep.read_text())
    accs = list(doc["accuracy"].values())
    assert len(accs) == 7
    assert doc["avg"] == pytest.approx(sum(accs) / 7, abs=0.05)
    rows = list(csv.reader(hist.open()))
    assert rows[0] == ["bin_low", "bin_high", "count"]
    assert sum(int(r[2]) for r in rows[1:]) == doc["matched"]
    # threaded evaluation yields the same report
    rep2 = tmp_path / "r2.json"
    assert run("eval", "--data", data, "--model", model, "--seed", 4, "--report", rep2, "--threads", 3) == 0
    assert rep2.read_bytes() != b"" and json.loads(rep2.read_text())["accuracy"] == doc["accuracy"]


def test_version_mismatch_exit(tmp_path, workspace):
    _, data, model = workspace
    doc = json.loads(model.read_text())
    doc["version"] = 99
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("eval", "--data", data, "--model", bad, "--seed", 4) == 5


def test_predict_matches_eval_path(tmp_path, workspace):
    _, data, model = workspace
    frames = load_dataset(data)
    _, test = split_dataset(frames, 0.8, 4)
    m = DetectorModel.load(model)
    internal = run_predictions(m, test)
    for frame, boxes in zip(test, internal):
        out = tmp_path / f"{frame.id}.json"
        assert run("predict", "--data", data, "--model", model, "--frame", frame.id, "--report", out) == 0
        doc = json.loads(out.read_text())
        assert doc["frame"] == frame.id
        assert doc["predictions"] == [box_to_json(b) for b in boxes]
        for p in doc["predictions"]:
            if p is not None:
                assert min(p["size"]) >= 0.1


def test_predict_unknown_and_empty_frame(tmp_path, workspace, capsys):
    _, data, model = workspace
    assert run("predict", "--data", data, "--model", model, "--frame", "nope") == 4
    doc = json.loads((data / MANIFEST).read_text())
    doc["frames"][0]["annotations"] = []
    for fr in doc["frames"]:
        fr["cloud"] = str(data / fr["cloud"])
    (tmp_path / MANIFEST).write_text(json.dumps(doc))
    capsys.readouterr()
    fid = doc["frames"][0]["id"]
    assert run("predict", "--data", tmp_path, "--model", model, "--frame", fid) == 0
    assert json.loads(capsys.readouterr().out)["predictions"] == []


def test_bench_accounting(tmp_path, workspace):
    _, data, model = workspace
    docs = []
    for k in range(2):
        out = tmp_path / f"b{k}.json"
        assert run("bench", "--data", data, "--model", model, "--seed", 4, "--report", out) == 0
        docs.append(json.loads(out.read_text()))
    inf = docs[0]["inference_ms"]
    assert sum(inf[s]["mean"] for s in STAGES) <= inf["total"]["mean"] + 1e-3
    assert all(inf[s]["n"] == docs[0]["frames"] for s in (*STAGES, "total"))
    for d in docs:
        del d["inference_ms"], d["config"]["report"]
    assert docs[0] == docs[1]

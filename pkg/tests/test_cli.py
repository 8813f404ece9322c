import csv
import json
import shutil

import numpy as np
import pytest

from posereid import cli
from posereid.core import JointSet, load_descriptors, save_joints
from posereid.dataset import SplitSpec
from posereid.fusion import DeepEmbedding, save_embeddings
from posereid.synthetic import write_image_dataset
from posereid.xqda import load_model


def posereid(capsys, *argv):
    rc = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    summary = json.loads(out) if rc == 0 and out.strip() else None
    diag = json.loads(err.strip().splitlines()[-1]) if rc != 0 else None
    return rc, summary, diag


def _dataset(root, n_ids, per_cam=1, n_cams=2, seed=0):
    write_image_dataset(root, n_ids=n_ids, n_cams=n_cams, per_cam=per_cam, seed=seed, size=(64, 32))
    return root


def _cache_records(out):
    return {p.name.split("-")[0]: load_descriptors(p) for p in sorted((out / "cache").glob("*.lomo.bin"))}


@pytest.fixture
def ten(tmp_path, capsys):
    root = _dataset(tmp_path / "data", n_ids=5)
    rc, _, _ = posereid(capsys, "split", "--dataset-root", root, "--split", tmp_path / "split.json",
                        "--kind", "cuhk03", "--test-ids", 2, "--val-fraction", 0)
    assert rc == 0
    return tmp_path, root


def _common(tmp, root, out="out"):
    return ["--dataset-root", root, "--split", tmp / "split.json", "--output", tmp / out, "--workers", 1]


def test_extract_ten_images(ten, capsys):
    tmp, root = ten
    rc, summary, _ = posereid(capsys, "extract", *_common(tmp, root))
    assert rc == 0
    records = _cache_records(tmp / "out")
    assert sum(len(v) for v in records.values()) == 10
    assert all(s.descriptor.dim == 26960 for v in records.values() for s in v)
    assert summary["failures"] == []


def test_extract_skips_existing_caches(ten, capsys):
    tmp, root = ten
    posereid(capsys, "extract", *_common(tmp, root))
    stamps = {p: p.stat().st_mtime_ns for p in (tmp / "out" / "cache").glob("*.bin")}
    rc, summary, _ = posereid(capsys, "extract", *_common(tmp, root))
    assert rc == 0 and summary["partitions"] == {}
    assert sorted(summary["skipped"]) == ["gallery", "probe", "train"]
    assert {p: p.stat().st_mtime_ns for p in stamps} == stamps
    rc, summary, _ = posereid(capsys, "extract", *_common(tmp, root), "--force")
    assert sum(summary["partitions"].values()) == 10


def test_extract_parallel_matches_serial(ten, capsys):
    tmp, root = ten
    posereid(capsys, "extract", *_common(tmp, root, "serial"))
    posereid(capsys, "extract", "--dataset-root", root, "--split", tmp / "split.json",
             "--output", tmp / "pool", "--workers", 2)
    for a, b in zip(sorted((tmp / "serial" / "cache").glob("*.bin")), sorted((tmp / "pool" / "cache").glob("*.bin"))):
        assert a.read_bytes() == b.read_bytes()


def test_extract_tolerates_one_corrupt_image(ten, capsys):
    tmp, root = ten
    victim = sorted((root / "images").glob("*.png"))[3]
    victim.write_bytes(b"not a png")
    rc, summary, _ = posereid(capsys, "extract", *_common(tmp, root))
    assert rc == 0
    assert sum(len(v) for v in _cache_records(tmp / "out").values()) == 9
    assert [f["key"] for f in summary["failures"]] == ["images/" + victim.name]


def test_extract_fails_above_failure_budget(ten, capsys):
    tmp, root = ten
    for p in sorted((root / "images").glob("*.png"))[:2]:
        p.write_bytes(b"")
    rc, _, diag = posereid(capsys, "extract", *_common(tmp, root))
    assert rc == 14 and diag["error"] == "ExtractionFailed"


def test_extract_writes_region_csv(ten, capsys):
    tmp, root = ten
    key = "images/0001_c1_00.png"
    pts = np.column_stack([np.linspace(8, 24, 14), np.linspace(4, 60, 14)])
    save_joints({key: JointSet(pts)}, tmp / "joints.txt")
    rc, _, _ = posereid(capsys, "extract", *_common(tmp, root), "--joints", tmp / "joints.txt")
    assert rc == 0
    rows = list(csv.reader(open(tmp / "out" / "regions.csv")))
    assert [r[:2] for r in rows[1:]] == [[key, "head"], [key, "upper"], [key, "lower"]]


@pytest.fixture
def trained(tmp_path, capsys):
    root = _dataset(tmp_path / "data", n_ids=12, per_cam=2)
    posereid(capsys, "split", "--dataset-root", root, "--split", tmp_path / "split.json", "--kind", "viper",
             "--seed", 1)
    assert posereid(capsys, "extract", *_common(tmp_path, root))[0] == 0
    return tmp_path, root


def test_train_separable_fixture(trained, capsys):
    tmp, root = trained
    rc, report, _ = posereid(capsys, "train", *_common(tmp, root))
    assert rc == 0
    assert report["rank"] >= 1 and report["eigvals"][0] > 1
    assert report["intra_pairs"] > 0 and report["extra_pairs"] > 0
    model = load_model(tmp / "out" / "model-lomo.xqda")
    assert model.dim == 26960 and model.provenance == report["config_hash"]
    first = (tmp / "out" / "model-lomo.xqda").read_bytes()
    posereid(capsys, "train", *_common(tmp, root))
    assert (tmp / "out" / "model-lomo.xqda").read_bytes() == first


def test_train_single_camera(tmp_path, capsys):
    root = _dataset(tmp_path / "data", n_ids=6, per_cam=2, n_cams=1)
    posereid(capsys, "split", "--dataset-root", root, "--split", tmp_path / "split.json", "--kind", "viper")
    posereid(capsys, "extract", *_common(tmp_path, root))
    rc, _, diag = posereid(capsys, "train", *_common(tmp_path, root))
    assert rc == 7
    assert diag["error"] == "InsufficientPairs" and "cameras [1]" in diag["message"]


def test_eval_reports_identical_across_runs(trained, capsys):
    tmp, root = trained
    reports = []
    for out in ("a", "b"):
        args = _common(tmp, root, out)
        posereid(capsys, "extract", *args)
        posereid(capsys, "train", *args)
        rc, summary, _ = posereid(capsys, "eval", *args, "--trials", 10)
        assert rc == 0 and summary["protocol"] == "single_shot_cmc"
        reports.append((tmp / out / "eval_report.json").read_bytes())
        assert (tmp / out / "cmc.png").is_file()
        assert (tmp / out / "ranked_lists.csv").is_file()
    assert reports[0] == reports[1]


def _oracle_embeddings(spec, path):
    emb = {}
    for key, (pid, _, _) in spec.items.items():
        parts = np.zeros((4, 256))
        parts[:, pid] = 1.0
        emb[key] = DeepEmbedding(parts)
    save_embeddings(emb, path)


def test_eval_oracle_plumbing_and_ablation(trained, capsys):
    tmp, root = trained
    _oracle_embeddings(SplitSpec.load(tmp / "split.json"), tmp / "oracle.bin")
    rc, summary, _ = posereid(capsys, "eval", *_common(tmp, root), "--fusion", "deep", "--metric", "cosine",
                              "--embeddings", tmp / "oracle.bin", "--protocol", "single_query_map",
                              "--ablation")
    assert rc == 0
    assert summary["mAP"] == 1.0 and summary["cmc"]["1"] == 1.0
    report = json.loads((tmp / "out" / "eval_report.json").read_text())
    assert [r["row"] for r in report["ablation"]] == ["Global", "Head", "Body", "Leg", "Concat"]
    assert (tmp / "out" / "ablation.csv").is_file() and (tmp / "out" / "ablation.png").is_file()


def test_eval_without_model(trained, capsys):
    tmp, root = trained
    rc, _, diag = posereid(capsys, "eval", *_common(tmp, root))
    assert rc == 1 and "run train first" in diag["message"]


def _add_twin(tmp, root, junk):
    """Put a byte-copy of a probe image into the gallery; returns (probe key, twin key)."""
    spec = SplitSpec.load(tmp / "split.json")
    probe = spec.partitions["probe"][0]
    twin = "images/twin.png"
    shutil.copy(root / probe, root / twin)
    pid, _, _ = spec.items[probe]
    spec.items[twin] = (pid, 9, junk)
    spec.partitions["gallery"].append(twin)
    spec.save(tmp / "split.json")
    return probe, twin


def _extract_with_twin(capsys, tmp, root, junk):
    probe, twin = _add_twin(tmp, root, junk)
    assert posereid(capsys, "extract", *_common(tmp, root), "--force")[0] == 0
    gallery = _cache_records(tmp / "out")["gallery"]
    assert twin in [s.key for s in gallery]
    return probe, twin


def _query_rows(tmp, probe):
    name = "query_" + probe.replace("/", "_") + ".csv"
    return list(csv.DictReader(open(tmp / "out" / name)))


def test_query_twin_ranks_first(trained, capsys):
    tmp, root = trained
    probe, twin = _extract_with_twin(capsys, tmp, root, junk=False)
    rc, summary, _ = posereid(capsys, "query", *_common(tmp, root), "--metric", "cosine", "--probe", probe,
                              "--topk", 10)
    assert rc == 0
    rows = _query_rows(tmp, probe)
    assert len(rows) == 10 and summary["results"][0] == twin
    assert rows[0]["gallery"] == twin and abs(float(rows[0]["distance"])) <= 1e-12
    d = [float(r["distance"]) for r in rows]
    assert d == sorted(d)
    assert (tmp / "out" / ("query_" + probe.replace("/", "_") + ".png")).is_file()


def test_query_drops_junk_twin(trained, capsys):
    tmp, root = trained
    probe, twin = _extract_with_twin(capsys, tmp, root, junk=True)
    rc, _, _ = posereid(capsys, "query", *_common(tmp, root), "--metric", "cosine", "--probe", probe,
                        "--no-montage")
    assert rc == 0
    assert twin not in [r["gallery"] for r in _query_rows(tmp, probe)]


def test_query_unknown_key(trained, capsys):
    tmp, root = trained
    rc, _, diag = posereid(capsys, "query", *_common(tmp, root), "--metric", "cosine", "--probe", "nope.png")
    assert rc == 13 and diag["error"] == "UnknownKey"


def test_config_file_and_flag_precedence(trained, capsys):
    tmp, root = trained
    (tmp / "run.json").write_text(json.dumps({"metric": "cosine", "trials": 3, "protocol": "single_shot_cmc"}))
    rc, _, _ = posereid(capsys, "eval", *_common(tmp, root), "--config", tmp / "run.json", "--trials", 4,
                        "--no-figures")
    assert rc == 0
    report = json.loads((tmp / "out" / "eval_report.json").read_text())
    assert report["metric"] == "cosine" and report["trials"] == 4
    assert not (tmp / "out" / "cmc.png").exists()
    (tmp / "bad.json").write_text(json.dumps({"colour": "red"}))
    assert posereid(capsys, "eval", *_common(tmp, root), "--config", tmp / "bad.json")[0] == 2


def test_cache_dir_from_environment(ten, capsys, monkeypatch):
    tmp, root = ten
    monkeypatch.setenv("REID_CACHE_DIR", str(tmp / "shared"))
    assert posereid(capsys, "extract", *_common(tmp, root))[0] == 0
    assert len(list((tmp / "shared").glob("*.lomo.bin"))) == 3
    assert not (tmp / "out" / "cache").exists()


def test_missing_split_is_io_error(tmp_path, capsys):
    rc, _, diag = posereid(capsys, "extract", "--split", tmp_path / "none.json", "--output", tmp_path)
    assert rc == 15 and diag["error"] == "FileNotFoundError"


def test_synth_then_ablate(tmp_path, capsys):
    root = tmp_path / "syn"
    rc, summary, _ = posereid(capsys, "synth", "--dataset-root", root, "--ids", 8, "--seed", 2)
    assert rc == 0 and summary["images"] == 32
    rc, rows, _ = posereid(capsys, "ablate", "--embeddings", root / "embeddings.bin",
                           "--split", tmp_path / "absent.json", "--output", tmp_path / "abl")
    assert rc == 0 and list(rows) == sorted(["Global", "Head", "Body", "Leg", "Concat"])
    report = json.loads((tmp_path / "abl" / "ablation_report.json").read_text())
    assert [r["row"] for r in report["rows"]] == ["Global", "Head", "Body", "Leg", "Concat"]

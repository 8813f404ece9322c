"""Exit criteria, one test each; outcomes are listed at the end of the pytest run."""

import json
import os
import time

import numpy as np
import pytest

from oracles import average_precision_brute, geneig_by_reduction, scatter_brute
from posereid import cli
from posereid.core import PersonImage
from posereid.evaluation import Labels, cmc_single_shot, distance_matrix, map_single_query
from posereid.fusion import save_embeddings
from posereid.lomo import extract_lomo, lomo_bands, siltp_histogram
from posereid.synthetic import part_embeddings, two_camera_benchmark, write_image_dataset
from posereid.xqda import compute_scatter, geneig_residuals, train_xqda

pytestmark = pytest.mark.acceptance


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_lomo_dimensionality(acceptance):
    img = PersonImage(np.random.default_rng(0).uniform(0, 255, (128, 48, 3)))
    with Timer() as t:
        desc = extract_lomo(img)
    bands = lomo_bands(img)
    ok = desc.dim == 26960 and bands.shape == (40, 512 + 81 + 81) and t.seconds < 1.0
    acceptance("LOMO dimensionality", ok, f"dim={desc.dim} bands={bands.shape} {t.seconds:.3f}s (<1s)")


def test_siltp_scale_invariance(acceptance):
    rng = np.random.default_rng(1)
    mismatches = 0
    with Timer() as t:
        for _ in range(1000):
            window = rng.uniform(0, 127.5, (16, 16))
            window[window == 0] = 1.0  # keep intensities strictly positive
            c = rng.uniform(0.5, 2.0)
            for radius in (3, 5):
                a = siltp_histogram(window, radius)
                b = siltp_histogram(window * c, radius)
                mismatches += not np.array_equal(a, b)
    acceptance("SILTP scale invariance", mismatches == 0 and t.seconds < 5.0,
               f"{mismatches} mismatching histograms over 1000 windows x 2 radii, {t.seconds:.2f}s (<5s)")


def _scatter_instance(rng):
    while True:
        n, d = int(rng.integers(4, 51)), int(rng.integers(1, 21))
        ids = rng.integers(0, max(2, n // 3), n)
        cams = rng.integers(1, int(rng.integers(2, 4)) + 1, n)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if ids[i] == ids[j] and cams[i] != cams[j]]
        if pairs:
            return rng.normal(size=(n, d)) * rng.uniform(0.1, 10), ids, cams


def test_scatter_oracle(acceptance):
    rng = np.random.default_rng(2)
    worst = 0.0
    with Timer() as t:
        for _ in range(50):
            X, ids, cams = _scatter_instance(rng)
            sp = compute_scatter(X, ids, cams)
            S_I, S_E, n_I, n_E = scatter_brute(X, ids, cams)
            assert (sp.n_I, sp.n_E) == (n_I, n_E)
            for got, ref in ((sp.sigma_I, S_I), (sp.sigma_E, S_E)):
                scale = np.linalg.norm(ref)
                err = np.linalg.norm(got - ref) / scale if scale else np.linalg.norm(got)
                worst = max(worst, err)
    acceptance("Scatter oracle", worst <= 1e-10 and t.seconds < 10.0,
               f"max relative Frobenius error {worst:.2e} (<=1e-10), {t.seconds:.2f}s (<10s)")


def test_geneig_residual(acceptance):
    rng = np.random.default_rng(3)
    worst_ratio, worst_val, worst_vec, kept = 0.0, 0.0, 0.0, 0
    with Timer() as t:
        for _ in range(30):
            d = int(rng.integers(2, 33))
            n_ids = int(rng.integers(8, 21))
            centers = rng.normal(scale=rng.uniform(0.5, 3), size=(n_ids, d))
            ids = np.repeat(np.arange(n_ids), 6)
            cams = np.tile([1, 1, 1, 2, 2, 2], n_ids)
            X = centers[ids] + rng.normal(size=(ids.size, d)) * rng.uniform(0.2, 2, d)
            reg = 1e-3
            model = train_xqda(X, ids, cams, reg=reg, project=False)
            sp = compute_scatter(X, ids, cams)
            A, B = sp.sigma_E, sp.sigma_I + reg * np.eye(d)
            res, bound = geneig_residuals(A, B, model.eigvals, model.W)
            worst_ratio = max(worst_ratio, float(np.max(res / bound)))
            ref_vals, ref_vecs = geneig_by_reduction(A, B)
            r = model.rank
            kept += r
            worst_val = max(worst_val, float(np.max(np.abs(model.eigvals - ref_vals[:r]) / np.abs(ref_vals[:r]))))
            # eigenvectors are unique (up to sign) only for isolated eigenvalues
            gaps = np.abs(np.diff(ref_vals))
            gap = np.minimum(np.r_[np.inf, gaps], np.r_[gaps, np.inf])[:r]
            iso = gap > 1e-6 * np.abs(ref_vals[:r])
            cos = np.abs(np.sum(model.W[:, iso] * (B @ ref_vecs[:, :r][:, iso]), axis=0))
            worst_vec = max(worst_vec, float(np.max(np.abs(cos - 1), initial=0.0)))
    ok = worst_ratio <= 1.0 and worst_val <= 1e-8 and worst_vec <= 1e-8 and t.seconds < 10.0
    acceptance("Generalized-eig residual", ok,
               f"max residual/bound {worst_ratio:.2e} over {kept} kept pairs, eigval rel err {worst_val:.1e}, "
               f"vector misalignment {worst_vec:.1e} vs reduction solve, {t.seconds:.2f}s (<10s)")


def _rank1(dist, probe, gallery):
    return cmc_single_shot(dist, Labels(probe.ids, probe.cams), Labels(gallery.ids, gallery.cams),
                           trials=1).at(1)


def test_metric_beats_baseline(acceptance):
    xq, cos = [], []
    with Timer() as t:
        for seed in range(10):
            train, probe, gallery = two_camera_benchmark(seed)
            model = train_xqda(train.X, train.ids, train.cams)
            xq.append(_rank1(distance_matrix(probe.X, gallery.X, model), probe, gallery))
            cos.append(_rank1(distance_matrix(probe.X, gallery.X, "cosine"), probe, gallery))
    gap = 100 * (np.mean(xq) - np.mean(cos))
    acceptance("Metric beats baseline", gap >= 15.0 and t.seconds < 60.0,
               f"XQDA {100 * np.mean(xq):.1f}% vs cosine {100 * np.mean(cos):.1f}% Rank-1, "
               f"gap {gap:.1f} pp (>=15), {t.seconds:.1f}s (<60s)")


def test_map_oracle(acceptance):
    rng = np.random.default_rng(4)
    worst, junk_cases = 0.0, 0
    with Timer() as t:
        for _ in range(100):
            n_p, n_g = int(rng.integers(1, 8)), int(rng.integers(1, 31))
            probes = Labels(rng.integers(0, 6, n_p), rng.integers(1, 4, n_p))
            junk = rng.random(n_g) < 0.2
            gallery = Labels(rng.integers(0, 6, n_g), rng.integers(1, 4, n_g), junk)
            junk_cases += bool(junk.any())
            d = rng.random((n_p, n_g)) if rng.random() < 0.5 else rng.integers(0, 4, (n_p, n_g)).astype(float)
            res = map_single_query(d, probes, gallery)
            ref = [average_precision_brute(d[i], probes.ids[i], probes.cams[i], gallery.ids, gallery.cams, junk)
                   for i in range(n_p)]
            ref = [a for a in ref if a is not None]
            assert res.n_valid == len(ref) and res.n_excluded == n_p - len(ref)
            if ref:
                worst = max(worst, abs(res.mAP - float(np.mean(ref))))
    acceptance("mAP oracle", worst <= 1e-12 and t.seconds < 10.0,
               f"max |mAP - brute force| {worst:.1e} (<=1e-12) over 100 instances, "
               f"{junk_cases} with junk, {t.seconds:.2f}s (<10s)")


def test_cmc_properties(acceptance):
    rng = np.random.default_rng(5)
    failures = []
    with Timer() as t:
        for trial in range(20):
            n_ids = int(rng.integers(2, 12))
            probes = Labels(np.repeat(np.arange(n_ids), 2), np.ones(2 * n_ids))
            gallery = Labels(np.repeat(np.arange(n_ids), 3), np.full(3 * n_ids, 2))
            d = rng.random((len(probes), len(gallery)))
            base = cmc_single_shot(d, probes, gallery, trials=5, seed=trial).curve
            if np.any(np.diff(base) < 0) or base[-1] != 1.0:
                failures.append(f"monotone/complete #{trial}")
            oracle = (probes.ids[:, None] != gallery.ids[None, :]).astype(float)
            if cmc_single_shot(oracle, probes, gallery, trials=5, seed=trial).at(1) != 1.0:
                failures.append(f"oracle #{trial}")
            base_map = map_single_query(d, probes, gallery)
            for f in (lambda x: 2 * x + 1, lambda x: x ** 3):
                if not np.array_equal(cmc_single_shot(f(d), probes, gallery, trials=5, seed=trial).curve, base):
                    failures.append(f"cmc argsort #{trial}")
                m = map_single_query(f(d), probes, gallery)
                if m.mAP != base_map.mAP or not np.array_equal(m.curve, base_map.curve):
                    failures.append(f"map argsort #{trial}")
    acceptance("CMC properties", not failures and t.seconds < 5.0,
               f"{len(failures)} violations {failures[:3]} over 20 instances, {t.seconds:.2f}s (<5s)")


def test_ablation_ordering(acceptance, tmp_path, capsys):
    with Timer() as t:
        emb, meta = part_embeddings(seed=0)
        save_embeddings(emb, tmp_path / "parts.bin", meta)
        rc = cli.main(["ablate", "--embeddings", str(tmp_path / "parts.bin"), "--split", str(tmp_path / "none.json"),
                       "--output", str(tmp_path / "out")])
        capsys.readouterr()
    report = json.loads((tmp_path / "out" / "ablation_report.json").read_text())
    r1 = {r["row"]: r["rank1"] for r in report["rows"]}
    rows = [r["row"] for r in report["rows"]]
    ok = (rc == 0 and rows == ["Global", "Head", "Body", "Leg", "Concat"]
          and all(r1["Global"] > r1[p] for p in ("Head", "Body", "Leg")) and r1["Concat"] > r1["Global"]
          and t.seconds < 60.0)
    acceptance("Ablation harness shape", ok,
               " ".join(f"{k}={100 * v:.1f}" for k, v in r1.items()) + f" Rank-1, {t.seconds:.1f}s (<60s)")


VIPER_ROOT = os.environ.get("REID_VIPER_ROOT")


@pytest.mark.integration
def test_viper_reference_number(acceptance, tmp_path, capsys):
    if not VIPER_ROOT:
        acceptance("VIPeR LOMO+XQDA reference", True, "no data (set REID_VIPER_ROOT)", asserted=False,
                   status="SKIP")
        pytest.skip("set REID_VIPER_ROOT to a VIPeR directory (cam_a/, cam_b/)")
    common = ["--dataset-root", VIPER_ROOT, "--split", str(tmp_path / "split.json"), "--output", str(tmp_path)]
    for cmd in (["split", "--kind", "viper", "--val-fraction", "0"], ["extract"], ["train"],
                ["eval", "--protocol", "single_shot_cmc", "--no-figures"]):
        assert cli.main(cmd[:1] + common + cmd[1:]) == 0
    capsys.readouterr()
    rank1 = 100 * json.loads((tmp_path / "eval_report.json").read_text())["cmc"]["1"]
    acceptance("VIPeR LOMO+XQDA reference", abs(rank1 - 40.0) <= 3.0,
               f"Rank-1 {rank1:.1f} vs 40.0 reference, deviation {rank1 - 40.0:+.1f} (reported only)",
               asserted=False)


def _pipeline(tmp_path, out, capsys):
    common = ["--dataset-root", str(tmp_path / "data"), "--split", str(tmp_path / "split.json"),
              "--output", str(tmp_path / out), "--seed", "4"]
    for cmd in (["extract"], ["train"], ["eval", "--trials", "20"]):
        assert cli.main(cmd + common) == 0
    capsys.readouterr()
    return (tmp_path / out / "eval_report.json").read_bytes()


def test_end_to_end_determinism(acceptance, tmp_path, capsys):
    with Timer() as t:
        write_image_dataset(tmp_path / "data", n_ids=16, per_cam=2, seed=4)
        assert cli.main(["split", "--dataset-root", str(tmp_path / "data"), "--split", str(tmp_path / "split.json"),
                         "--kind", "viper", "--seed", "4"]) == 0
        first = _pipeline(tmp_path, "run1", capsys)
        second = _pipeline(tmp_path, "run2", capsys)
    acceptance("End-to-end determinism", first == second and t.seconds < 120.0,
               f"eval_report.json byte-identical: {first == second} ({len(first)} bytes), {t.seconds:.1f}s (<120s)")

"""Run configuration and the extract / train / eval / query / ablate workflows."""

import csv
import hashlib
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import (Descriptor, DescriptorKind, Sample, load_descriptors, load_joints,
                   load_records, normalize_size, save_descriptors)
from .dataset import PARTITIONS, SplitSpec, build_split
from .errors import (ExtractionFailed, FusionError, InsufficientPairs, ReidError, UnknownKey)
from .evaluation import (EvalProtocol, Labels, ProtocolKind, distance_matrix, dump_json,
                         emit_ranked_lists, evaluate, write_ranked_csv)
from .fusion import PART_LABELS, PARTS, FusionMode, fuse, load_embeddings, part_subset
from .lomo import LomoConfig, extract_lomo
from .regions import group_joints_to_regions, write_boxes_csv
from .xqda import load_model, save_model, train_xqda

log = logging.getLogger("posereid")

MAX_FAILURE_RATE = 0.10
# fields that locate files or tune execution but never change results
_NON_SEMANTIC = {"dataset_root", "split", "output_dir", "embeddings", "joints", "workers", "force"}
_CONTENT_HASHED = ("split", "embeddings", "joints")


@dataclass
class RunConfig:
    dataset_root: str = "."
    split: str = "split.json"
    output_dir: str = "run"
    dataset_kind: str = "viper"
    test_ids: Optional[int] = None
    val_fraction: float = 0.2
    lomo: dict = field(default_factory=dict)
    fusion: str = "lomo"
    alpha: float = 0.5
    embeddings: Optional[str] = None
    joints: Optional[str] = None
    metric: str = "xqda"
    reg: float = 1e-3
    max_dim: Optional[int] = None
    eig_threshold: float = 1.0
    train_partitions: List[str] = field(default_factory=lambda: ["train", "val"])
    protocol: str = "auto"
    trials: int = 100
    ranks: List[int] = field(default_factory=lambda: [1, 5, 10])
    seed: int = 0
    topk: int = 10
    workers: int = 0
    force: bool = False

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, **overrides):
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @property
    def lomo_config(self):
        return LomoConfig.from_mapping(self.lomo)

    @property
    def fusion_mode(self):
        return FusionMode(self.fusion)

    @property
    def out(self):
        path = Path(self.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def cache_dir(self):
        path = Path(os.environ.get("REID_CACHE_DIR") or Path(self.output_dir) / "cache")
        path.mkdir(parents=True, exist_ok=True)
        return path

    def semantic(self):
        """Config fields that determine results; file inputs enter by content digest."""
        data = {k: v for k, v in asdict(self).items() if k not in _NON_SEMANTIC}
        data["lomo"] = asdict(self.lomo_config)
        for name in _CONTENT_HASHED:
            path = getattr(self, name)
            data[f"{name}_sha256"] = _file_digest(path) if path and Path(path).is_file() else None
        return data

    def digest(self):
        return _sha256(json.dumps(self.semantic(), sort_keys=True).encode())


def _sha256(raw):
    return hashlib.sha256(raw).hexdigest()


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def lomo_digest(config):
    return _sha256(json.dumps(asdict(config), sort_keys=True).encode())[:12]


def load_split(cfg):
    return SplitSpec.load(cfg.split)


def make_split(cfg):
    spec = build_split(cfg.dataset_root, cfg.dataset_kind, cfg.seed, cfg.test_ids, cfg.val_fraction)
    spec.save(cfg.split)
    return spec


def default_protocol(cfg, spec=None):
    kind = cfg.protocol
    if kind == "auto":
        single_shot = spec is not None and spec.kind in ("viper", "cuhk03")
        kind = ProtocolKind.SINGLE_SHOT_CMC if single_shot else ProtocolKind.SINGLE_QUERY_MAP
    return EvalProtocol(kind, cfg.trials, tuple(cfg.ranks))


# -- extraction ----------------------------------------------------------------

def read_image(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def _extract_one(args):
    root, key, lomo_cfg = args
    try:
        pixels = read_image(Path(root) / key)
        desc = extract_lomo(normalize_size(pixels), lomo_cfg)
        return key, desc.values, pixels.shape[:2], None
    except Exception as exc:  # reported per image, the run continues
        return key, None, None, f"{type(exc).__name__}: {exc}"


def lomo_cache_path(cfg, partition):
    return cfg.cache_dir / f"{partition}-{lomo_digest(cfg.lomo_config)}.lomo.bin"


def extract(cfg, spec=None):
    """Compute LOMO caches for every non-empty partition; returns a summary dict."""
    spec = spec or load_split(cfg)
    lomo_cfg = cfg.lomo_config
    joints = load_joints(cfg.joints) if cfg.joints else {}
    workers = cfg.workers or os.cpu_count() or 1
    summary = {"partitions": {}, "failures": [], "skipped": []}
    boxes = {}
    total = 0
    for part in PARTITIONS:
        keys = spec.partitions[part]
        if not keys:
            continue
        path = lomo_cache_path(cfg, part)
        if path.exists() and not cfg.force:
            log.info("skip %s: cache %s exists", part, path)
            summary["skipped"].append(part)
            continue
        jobs = [(cfg.dataset_root, k, lomo_cfg) for k in keys]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_extract_one, jobs, chunksize=8))
        else:
            results = [_extract_one(j) for j in jobs]
        samples = []
        for key, values, shape, err in results:
            total += 1
            if err is not None:
                log.warning("extract failed for %s: %s", key, err)
                summary["failures"].append({"key": key, "error": err})
                continue
            pid, cam, junk = spec.items[key]
            samples.append(Sample(Descriptor(DescriptorKind.LOMO, values), pid, cam, junk, key))
            if key in joints:
                regions = group_joints_to_regions(joints[key], shape[1], shape[0])
                boxes[key] = dict(regions.items())
        save_descriptors(samples, path, kind=DescriptorKind.LOMO)
        dump_json({"config_hash": cfg.digest(), "lomo": asdict(lomo_cfg), "partition": part,
                   "records": len(samples)}, str(path) + ".meta.json")
        summary["partitions"][part] = len(samples)
        log.info("%s: %d descriptors -> %s", part, len(samples), path)
    if boxes:
        write_boxes_csv(boxes, cfg.out / "regions.csv")
    if total and len(summary["failures"]) > MAX_FAILURE_RATE * total:
        raise ExtractionFailed(f"{len(summary['failures'])} of {total} images failed to extract")
    return summary


# -- descriptor assembly -------------------------------------------------------

def _lomo_samples(cfg, part):
    path = lomo_cache_path(cfg, part)
    if not path.exists():
        raise ReidError(f"missing LOMO cache for {part} ({path}); run extract first")
    return load_descriptors(path)


def partition_samples(cfg, spec, part, embeddings=None):
    """Descriptors of one partition under the configured fusion mode."""
    mode = cfg.fusion_mode
    if mode is FusionMode.LOMO_ONLY:
        return _lomo_samples(cfg, part)
    if embeddings is None:
        if not cfg.embeddings:
            raise FusionError(f"fusion mode {mode.value!r} needs an embeddings file")
        embeddings = load_embeddings(cfg.embeddings)
    keys = spec.partitions[part]
    missing = [k for k in keys if k not in embeddings]
    if mode is FusionMode.DEEP_ONLY:
        if missing:
            raise FusionError(f"{len(missing)} {part} images lack embeddings, e.g. {missing[0]}")
        return [Sample(fuse(embeddings[k], None, mode, cfg.alpha), *spec.items[k], key=k) for k in keys]
    lomo = _lomo_samples(cfg, part)
    lacking = [s.key for s in lomo if s.key not in embeddings]
    if lacking:
        raise FusionError(f"{len(lacking)} {part} images lack embeddings, e.g. {lacking[0]}")
    return [Sample(fuse(embeddings[s.key], s.descriptor, mode, cfg.alpha), s.identity, s.camera,
                   s.junk, s.key) for s in lomo]


def _matrix(samples):
    return np.stack([s.descriptor.values for s in samples]).astype(np.float64)


# -- training ------------------------------------------------------------------

def model_path(cfg):
    return cfg.out / f"model-{cfg.fusion_mode.value}.xqda"


def train(cfg, spec=None):
    spec = spec or load_split(cfg)
    samples = []
    for part in cfg.train_partitions:
        if spec.partitions.get(part):
            samples += partition_samples(cfg, spec, part)
    ids = np.array([s.identity for s in samples])
    cams = np.array([s.camera for s in samples])
    try:
        model = train_xqda(_matrix(samples) if samples else np.zeros((0, 1)), ids, cams, reg=cfg.reg,
                           max_dim=cfg.max_dim, eig_threshold=cfg.eig_threshold,
                           junk=[s.junk for s in samples], provenance=cfg.digest())
    except InsufficientPairs as exc:
        raise InsufficientPairs(
            f"{exc} ({len(samples)} samples, {len(set(ids.tolist()))} identities, "
            f"cameras {sorted(set(cams.tolist()))})") from None
    save_model(model, model_path(cfg))
    report = {
        "config_hash": cfg.digest(),
        "rank": model.rank,
        "dim": model.dim,
        "eigvals": model.eigvals.tolist(),
        "intra_pairs": model.n_I,
        "extra_pairs": model.n_E,
        "samples": len(samples),
        "identities": len(set(ids.tolist())),
    }
    dump_json(report, cfg.out / "train_report.json")
    return model, report


# -- evaluation ----------------------------------------------------------------

def _metric(cfg):
    if cfg.metric == "cosine":
        return "cosine"
    if cfg.metric != "xqda":
        raise ValueError(f"unknown metric {cfg.metric!r}")
    path = model_path(cfg)
    if not path.exists():
        raise ReidError(f"no trained model at {path}; run train first")
    return load_model(path)


def ablation_rows(embeddings, probe_keys, gallery_keys, probes, gallery, protocol, seed):
    """Table rows for each single part and the concatenation of all four, cosine matching."""
    selections = [(PART_LABELS[p], (p,)) for p in PARTS] + [("Concat", PARTS)]
    rows = []
    for label, parts in selections:
        P = np.stack([part_subset(embeddings[k], parts) for k in probe_keys])
        G = np.stack([part_subset(embeddings[k], parts) for k in gallery_keys])
        res = evaluate(distance_matrix(P, G, "cosine"), probes, gallery, protocol, seed)
        row = {"row": label, "parts": list(parts), "rank1": res["cmc"][str(protocol.ranks_reported[0])]}
        if "mAP" in res:
            row["mAP"] = res["mAP"]
        row["cmc"] = res["cmc"]
        rows.append(row)
    return rows


def write_ablation(rows, out_dir):
    from .plots import plot_ablation

    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "rank1", "mAP"])
        for r in rows:
            writer.writerow([r["row"], repr(r["rank1"]), repr(r["mAP"]) if "mAP" in r else ""])
    plot_ablation(rows, out_dir / "ablation.png")


def run_eval(cfg, spec=None, ablation=False, figures=True):
    spec = spec or load_split(cfg)
    protocol = default_protocol(cfg, spec)
    embeddings = load_embeddings(cfg.embeddings) if cfg.embeddings else None
    probe_samples = partition_samples(cfg, spec, "probe", embeddings)
    gallery_samples = partition_samples(cfg, spec, "gallery", embeddings)
    probes, gallery = Labels.from_samples(probe_samples), Labels.from_samples(gallery_samples)
    metric = _metric(cfg)
    dist = distance_matrix(probe_samples, gallery_samples, metric)
    result = evaluate(dist, probes, gallery, protocol, cfg.seed)
    report = {
        "config_hash": cfg.digest(),
        "config": cfg.semantic(),
        "dataset": spec.name,
        "metric": cfg.metric,
        "fusion": cfg.fusion,
        "seed": cfg.seed,
        "probes": len(probes),
        "gallery": len(gallery),
        **result,
    }
    if ablation:
        if embeddings is None:
            raise FusionError("ablation needs an embeddings file")
        report["ablation"] = ablation_rows(embeddings, probes.keys, gallery.keys, probes, gallery,
                                           protocol, cfg.seed)
        write_ablation(report["ablation"], cfg.out)
    dump_json(report, cfg.out / "eval_report.json")
    write_ranked_csv(emit_ranked_lists(dist, probes, gallery, cfg.topk), cfg.out / "ranked_lists.csv")
    if figures:
        from .plots import plot_cmc

        plot_cmc({f"{cfg.fusion}+{cfg.metric}": result["curve"]}, cfg.out / "cmc.png",
                 title=spec.name)
    return report


def run_ablation(cfg, spec=None):
    """Part ablation over an embeddings file.

    Probe/gallery come from the split manifest when one exists; otherwise
    from the identity/camera fields of a binary embeddings file, with the
    lowest camera of each identity as probe.
    """
    if not cfg.embeddings:
        raise FusionError("ablate needs --embeddings")
    embeddings = load_embeddings(cfg.embeddings)
    if spec is None and Path(cfg.split).is_file():
        spec = load_split(cfg)
    if spec is not None:
        pk, gk = spec.partitions["probe"], spec.partitions["gallery"]
        probes = Labels(*zip(*[spec.items[k] for k in pk]), keys=pk)
        gallery = Labels(*zip(*[spec.items[k] for k in gk]), keys=gk)
    else:
        _, _, records, keys = load_records(cfg.embeddings)
        first_cam = {}
        for rec in records:
            pid = int(rec["identity"])
            first_cam[pid] = min(int(rec["camera"]), first_cam.get(pid, int(rec["camera"])))
        is_probe = np.array([int(r["camera"]) == first_cam[int(r["identity"])] for r in records], dtype=bool)
        meta = [(int(r["identity"]), int(r["camera"]), bool(r["junk"])) for r in records]
        pk = [k for k, p in zip(keys, is_probe) if p]
        gk = [k for k, p in zip(keys, is_probe) if not p]
        probes = Labels(*zip(*[m for m, p in zip(meta, is_probe) if p]), keys=pk)
        gallery = Labels(*zip(*[m for m, p in zip(meta, is_probe) if not p]), keys=gk)
    protocol = default_protocol(cfg, spec)
    rows = ablation_rows(embeddings, pk, gk, probes, gallery, protocol, cfg.seed)
    report = {"config_hash": cfg.digest(), "protocol": protocol.kind.value, "seed": cfg.seed, "rows": rows}
    dump_json(report, cfg.out / "ablation_report.json")
    write_ablation(rows, cfg.out)
    return report


def _safe_name(key):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", key)


def run_query(cfg, probe_key, spec=None, montage=True):
    spec = spec or load_split(cfg)
    if probe_key not in spec.partitions["probe"]:
        raise UnknownKey(f"{probe_key!r} is not in the probe partition")
    embeddings = load_embeddings(cfg.embeddings) if cfg.embeddings else None
    probe_samples = [s for s in partition_samples(cfg, spec, "probe", embeddings) if s.key == probe_key]
    if not probe_samples:
        raise UnknownKey(f"{probe_key!r} has no descriptor (failed extraction?)")
    gallery_samples = partition_samples(cfg, spec, "gallery", embeddings)
    dist = distance_matrix(probe_samples, gallery_samples, _metric(cfg))
    ranked = emit_ranked_lists(dist, Labels.from_samples(probe_samples),
                               Labels.from_samples(gallery_samples), cfg.topk)[0]
    stem = cfg.out / f"query_{_safe_name(probe_key)}"
    write_ranked_csv([ranked], f"{stem}.csv")
    if montage:
        root = Path(cfg.dataset_root)
        paths = [root / probe_key] + [root / e.gallery for e in ranked.entries]
        if all(p.is_file() for p in paths):
            from .plots import plot_montage

            crops = [normalize_size(read_image(p)).pixels for p in paths]
            plot_montage(crops[0], crops[1:], [e.correct for e in ranked.entries], f"{stem}.png")
    return ranked


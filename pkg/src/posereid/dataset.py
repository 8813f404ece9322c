"""Benchmark layouts, filename conventions and reproducible split manifests."""

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path, PurePath

import numpy as np

from .errors import FilenameError, LayoutError

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"}
PARTITIONS = ("train", "val", "probe", "gallery")
MARKET_DIRS = {"train": "bounding_box_train", "gallery": "bounding_box_test", "probe": "query"}
DEFAULT_TEST_IDS = {"cuhk03": 100}

_MARKET_RE = re.compile(r"^(-?\d+)_c(\d+)(?:s\d+)?_")


def parse_market_name(filename):
    """Return (identity, camera, junk) from a Market-1501 / DukeMTMC-reID file name.

    Identity -1 marks junk detections; identity 0 is a distractor and stays a
    normal gallery negative.
    """
    name = PurePath(filename).name
    m = _MARKET_RE.match(name)
    if not m:
        raise FilenameError(f"cannot parse identity/camera from {name!r}")
    identity, camera = int(m.group(1)), int(m.group(2))
    return identity, camera, identity == -1


@dataclass
class SplitSpec:
    name: str
    kind: str
    seed: int
    partitions: dict = field(default_factory=lambda: {p: [] for p in PARTITIONS})
    items: dict = field(default_factory=dict)

    def identity(self, key):
        return self.items[key][0]

    def camera(self, key):
        return self.items[key][1]

    def is_junk(self, key):
        return self.items[key][2]

    def identities(self, partition):
        return {self.items[k][0] for k in self.partitions[partition] if not self.items[k][2]}

    def check(self):
        """Raise LayoutError when train and test identities overlap."""
        train = self.identities("train") | self.identities("val")
        test = self.identities("probe") | self.identities("gallery")
        shared = (train & test) - {0}
        if shared:
            raise LayoutError(f"train/test identities overlap: {sorted(shared)[:10]}")
        missing = {k for p in PARTITIONS for k in self.partitions[p]} - set(self.items)
        if missing:
            raise LayoutError(f"keys without metadata: {sorted(missing)[:5]}")

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "seed": self.seed,
            "partitions": {p: list(self.partitions[p]) for p in PARTITIONS},
            "items": {k: [int(i), int(c), bool(j)] for k, (i, c, j) in sorted(self.items.items())},
        }

    @classmethod
    def from_dict(cls, data):
        try:
            parts = {p: list(data["partitions"].get(p, [])) for p in PARTITIONS}
            items = {k: (int(v[0]), int(v[1]), bool(v[2])) for k, v in data["items"].items()}
            return cls(data["name"], data["kind"], int(data["seed"]), parts, items)
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise LayoutError(f"malformed split manifest: {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _images(directory):
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _rel(path, root):
    return path.relative_to(root).as_posix()


def _read_labels(root):
    items = {}
    with open(root / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                junk = bool(int(row.get("junk") or 0))
                items[row["key"]] = (int(row["identity"]), int(row["camera"]), junk)
            except (KeyError, ValueError) as exc:
                raise LayoutError(f"bad labels.csv row {row}: {exc}") from None
    for key in items:
        if not (root / key).is_file():
            raise LayoutError(f"labels.csv lists missing image {key}")
    return items


def _read_viper(root):
    items = {}
    for cam, sub in enumerate(("cam_a", "cam_b"), 1):
        for p in _images(root / sub):
            try:
                pid = int(p.stem.split("_")[0])
            except ValueError:
                raise FilenameError(f"VIPeR image name without numeric id: {p.name}") from None
            items[_rel(p, root)] = (pid, cam, False)
    return items


def _hold_out_val(spec, val_fraction, rng):
    train = spec.partitions["train"]
    n_val = int(round(val_fraction * len(train)))
    picked = set(rng.permutation(len(train))[:n_val].tolist()) if n_val else set()
    spec.partitions["val"] = [k for i, k in enumerate(train) if i in picked]
    spec.partitions["train"] = [k for i, k in enumerate(train) if i not in picked]


def build_split(root, kind, seed=0, test_ids=None, val_fraction=0.2, name=None):
    """Build a SplitSpec from a dataset directory.

    ``kind`` is "market"/"duke" (provided train/query/gallery directories),
    "viper" (identities halved at random) or "cuhk03" (``test_ids``
    identities, default 100, held out at random). Random-split kinds read
    either their native layout or ``images/`` plus ``labels.csv``; test
    images from the lowest camera become probes, the rest gallery.
    Training images are further split into train/val by ``val_fraction``.
    """
    root = Path(root)
    kind = kind.lower()
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} does not exist")
    rng = np.random.default_rng(seed)
    spec = SplitSpec(name or root.name, kind, int(seed))

    if kind in ("market", "duke"):
        for part, sub in MARKET_DIRS.items():
            if not (root / sub).is_dir():
                raise LayoutError(f"missing directory {sub} under {root}")
        for part, sub in MARKET_DIRS.items():
            for p in _images(root / sub):
                key = _rel(p, root)
                spec.items[key] = parse_market_name(p.name)
                spec.partitions[part].append(key)
        spec.partitions["train"] = [k for k in spec.partitions["train"] if not spec.is_junk(k)]
    elif kind in ("viper", "cuhk03"):
        if (root / "labels.csv").is_file():
            spec.items = _read_labels(root)
        elif kind == "viper" and (root / "cam_a").is_dir() and (root / "cam_b").is_dir():
            spec.items = _read_viper(root)
        else:
            raise LayoutError(f"{root} has neither labels.csv nor a recognised {kind} layout")
        ids = sorted({v[0] for v in spec.items.values() if not v[2]})
        if test_ids is not None:
            n_test = int(test_ids)
        elif kind == "viper":
            n_test = len(ids) // 2
        else:
            n_test = DEFAULT_TEST_IDS[kind]
        if not 0 < n_test < len(ids):
            raise LayoutError(f"cannot hold out {n_test} of {len(ids)} identities")
        test = set(np.asarray(ids)[rng.permutation(len(ids))[:n_test]].tolist())
        for key in sorted(spec.items):
            pid, cam, junk = spec.items[key]
            if junk:
                continue
            if pid not in test:
                spec.partitions["train"].append(key)
        test_keys = [k for k in sorted(spec.items) if spec.items[k][0] in test and not spec.items[k][2]]
        probe_cam = {}
        for k in test_keys:
            pid, cam, _ = spec.items[k]
            probe_cam[pid] = min(cam, probe_cam.get(pid, cam))
        for k in test_keys:
            pid, cam, _ = spec.items[k]
            spec.partitions["probe" if cam == probe_cam[pid] else "gallery"].append(k)
    else:
        raise LayoutError(f"unknown dataset kind {kind!r}")

    _hold_out_val(spec, val_fraction, rng)
    spec.check()
    return spec

"""Deep part embeddings and their fusion with LOMO descriptors."""

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (DEEP_DIM, Descriptor, DescriptorKind, Sample, load_records,
                   save_descriptors)
from .errors import FormatError, FusionError, SelectionError

PART_DIM = 256
PARTS = ("global", "head", "upper", "lower")
# row labels used in ablation reports
PART_LABELS = {"global": "Global", "head": "Head", "upper": "Body", "lower": "Leg"}


class FusionMode(str, enum.Enum):
    DEEP_ONLY = "deep"
    LOMO_ONLY = "lomo"
    CONCAT = "concat"


@dataclass(frozen=True, eq=False)
class DeepEmbedding:
    """Four 256-d part features in the order global, head, upper, lower."""

    parts: np.ndarray

    def __post_init__(self):
        parts = np.array(self.parts, dtype=np.float64)
        if parts.size != len(PARTS) * PART_DIM:
            raise FormatError(f"embedding must hold {len(PARTS)}x{PART_DIM} values, got {parts.size}")
        parts = parts.reshape(len(PARTS), PART_DIM)
        if not np.all(np.isfinite(parts)):
            raise FormatError("embedding has non-finite entries")
        parts.setflags(write=False)
        object.__setattr__(self, "parts", parts)

    def part(self, name):
        return self.parts[PARTS.index(name)]

    def flat(self):
        return self.parts.ravel()


def l2_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v.copy()


def part_subset(deep, parts):
    """Concatenate the selected parts, each L2-normalized, in canonical order."""
    selected = set(parts)
    unknown = selected - set(PARTS)
    if unknown:
        raise SelectionError(f"unknown parts {sorted(unknown)}")
    if not selected:
        raise SelectionError("empty part selection")
    return np.concatenate([l2_normalize(deep.part(p)) for p in PARTS if p in selected])


def fuse(deep, lomo, mode=FusionMode.CONCAT, alpha=0.5):
    mode = FusionMode(mode)
    if not 0.0 <= alpha <= 1.0:
        raise FusionError(f"alpha must lie in [0, 1], got {alpha}")
    if mode is FusionMode.DEEP_ONLY:
        if deep is None:
            raise FusionError("deep-only fusion needs an embedding")
        return Descriptor(DescriptorKind.DEEP, part_subset(deep, PARTS))
    if lomo is None or lomo.kind != DescriptorKind.LOMO:
        raise FusionError("fusion needs a LOMO descriptor")
    if mode is FusionMode.LOMO_ONLY:
        return lomo
    if deep is None:
        raise FusionError("concat fusion needs an embedding")
    deep_block = alpha * part_subset(deep, PARTS)
    lomo_block = (1.0 - alpha) * lomo.values.astype(np.float64)
    return Descriptor(DescriptorKind.FUSED, np.concatenate([deep_block, lomo_block]))


def _check_unique(keys, path):
    seen = set()
    for k in keys:
        if k in seen:
            raise FormatError(f"{path}: duplicate key {k}")
        seen.add(k)


def load_embeddings(path):
    """Read embeddings keyed by image key from a binary cache or ``.csv`` file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_embeddings_csv(path)
    kind, dim, records, keys = load_records(path)
    if kind != DescriptorKind.DEEP or dim != DEEP_DIM:
        raise FormatError(f"{path}: expected DEEP records of dim {DEEP_DIM}")
    _check_unique(keys, path)
    return {k: DeepEmbedding(rec["values"]) for k, rec in zip(keys, records)}


def _load_embeddings_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0] == "key"):
                continue
            if len(row) - 1 != DEEP_DIM:
                raise FormatError(f"{path}:{lineno}: expected {DEEP_DIM} values, got {len(row) - 1}")
            if row[0] in out:
                raise FormatError(f"{path}: duplicate key {row[0]}")
            try:
                out[row[0]] = DeepEmbedding([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def save_embeddings(embeddings, path, metadata=None):
    """Write embeddings; ``metadata`` optionally maps key -> (identity, camera, junk)."""
    path = Path(path)
    metadata = metadata or {}
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key"] + [f"v{i}" for i in range(DEEP_DIM)])
            for key, emb in embeddings.items():
                writer.writerow([key] + [repr(float(v)) for v in emb.flat()])
        return
    samples = [
        Sample(Descriptor(DescriptorKind.DEEP, emb.flat()), *metadata.get(key, (0, 0, False)), key=key)
        for key, emb in embeddings.items()
    ]
    save_descriptors(samples, path, kind=DescriptorKind.DEEP, dim=DEEP_DIM)

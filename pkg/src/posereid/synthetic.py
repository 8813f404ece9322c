"""Synthetic fixtures: two-camera feature benchmarks, part embeddings and tiny image datasets."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import PART_DIM, PARTS, DeepEmbedding


@dataclass
class FeatureSet:
    X: np.ndarray
    ids: np.ndarray
    cams: np.ndarray


def two_camera_benchmark(seed, n_train=40, n_test=20, dim=256, signal_dim=10,
                         train_per_cam=4, offset_scale=3.0, signal_scale=1.0, intra_scale=0.25,
                         loud_dims=60, loud_scale=1.0, quiet_scale=0.3):
    """Identity signal in a random low-dimensional subspace, plus camera offsets and anisotropic noise.

    Returns (train, probe, gallery); test identities are disjoint from
    training ones, with one probe image in camera 0 and one gallery image in
    camera 1 per test identity.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    signal_basis = basis[:, :signal_dim]
    noise_std = np.full(dim, quiet_scale)
    noise_std[signal_dim:signal_dim + loud_dims] = loud_scale
    noise_std[:signal_dim] = intra_scale
    offsets = rng.standard_normal((2, dim)) * offset_scale
    mean = rng.standard_normal(dim)

    def draw(identities, per_cam, cams):
        latent = rng.standard_normal((len(identities), signal_dim)) * signal_scale
        rows, ids, cs = [], [], []
        for k, pid in enumerate(identities):
            for cam in cams:
                for _ in range(per_cam):
                    noise = (rng.standard_normal(dim) * noise_std) @ basis.T
                    rows.append(mean + signal_basis @ latent[k] + offsets[cam] + noise)
                    ids.append(pid)
                    cs.append(cam)
        return FeatureSet(np.array(rows), np.array(ids), np.array(cs))

    train = draw(range(n_train), train_per_cam, (0, 1))
    test_ids = range(n_train, n_train + n_test)
    both = draw(test_ids, 1, (0, 1))
    probe = FeatureSet(both.X[0::2], both.ids[0::2], both.cams[0::2])
    gallery = FeatureSet(both.X[1::2], both.ids[1::2], both.cams[1::2])
    return train, probe, gallery


def part_embeddings(seed, n_ids=100, images_per_cam=2, signal=(0.5, 0.3, 0.35, 0.35), noise=1.0):
    """Embeddings whose parts carry independent identity signal of the given strengths.

    Returns (embeddings dict, metadata dict key -> (identity, camera, junk)).
    """
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((n_ids, len(PARTS), PART_DIM))
    emb, meta = {}, {}
    for pid in range(n_ids):
        for cam in (1, 2):
            for j in range(images_per_cam):
                parts = np.stack([
                    signal[p] * protos[pid, p] + noise * rng.standard_normal(PART_DIM)
                    for p in range(len(PARTS))
                ])
                key = f"{pid + 1:04d}_c{cam}s1_{j:06d}_00.jpg"
                emb[key] = DeepEmbedding(parts)
                meta[key] = (pid + 1, cam, False)
    return emb, meta


def person_image(rng, palette, height=160, width=64):
    """A crude pedestrian: three coloured horizontal bands with pixel noise."""
    img = np.empty((height, width, 3))
    cuts = [0, height // 4, (5 * height) // 8, height]
    for colour, (a, b) in zip(palette, zip(cuts, cuts[1:])):
        img[a:b] = colour
    img += rng.normal(0, 12, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def write_image_dataset(root, n_ids=6, n_cams=2, per_cam=2, seed=0, size=(160, 64)):
    """Write ``images/*.png`` and ``labels.csv`` (key,identity,camera,junk) under root."""
    from PIL import Image

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for pid in range(1, n_ids + 1):
        palette = rng.uniform(0, 255, (3, 3))
        for cam in range(1, n_cams + 1):
            shift = rng.uniform(0.7, 1.3)
            for j in range(per_cam):
                key = f"images/{pid:04d}_c{cam}_{j:02d}.png"
                pixels = person_image(rng, np.clip(palette * shift, 0, 255), *size)
                Image.fromarray(pixels).save(root / key)
                rows.append((key, pid, cam, 0))
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "identity", "camera", "junk"])
        writer.writerows(rows)
    return rows

"""Retrieval evaluation: distance matrices, single-shot CMC, single-query mAP, ranked lists.

All rankings use a stable sort, so equal distances are ordered by gallery index.
"""

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import stack_samples
from .errors import DimError, ProtocolError
from .xqda import XqdaModel, xqda_distance_matrix


class ProtocolKind(str, enum.Enum):
    SINGLE_QUERY_MAP = "single_query_map"
    SINGLE_SHOT_CMC = "single_shot_cmc"


@dataclass(frozen=True)
class EvalProtocol:
    kind: ProtocolKind = ProtocolKind.SINGLE_QUERY_MAP
    trials: int = 100
    ranks_reported: tuple = (1, 5, 10)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        object.__setattr__(self, "ranks_reported", tuple(int(r) for r in self.ranks_reported))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        r = self.ranks_reported
        if not r or r[0] < 1 or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("ranks must be positive and strictly ascending")


@dataclass
class Labels:
    """Per-image metadata of a probe or gallery set."""

    ids: np.ndarray
    cams: np.ndarray
    junk: Optional[np.ndarray] = None
    keys: Optional[List[str]] = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.cams = np.asarray(self.cams, dtype=np.int64)
        n = self.ids.size
        self.junk = np.zeros(n, dtype=bool) if self.junk is None else np.asarray(self.junk, dtype=bool)
        self.keys = [str(i) for i in range(n)] if self.keys is None else list(self.keys)
        if not (self.cams.size == self.junk.size == len(self.keys) == n):
            raise ValueError("label arrays differ in length")

    def __len__(self):
        return self.ids.size

    @classmethod
    def from_samples(cls, samples):
        _, ids, cams, junk, keys = stack_samples(samples)
        return cls(ids, cams, junk, keys)


def _features(x):
    if isinstance(x, np.ndarray):
        return np.atleast_2d(x.astype(np.float64))
    x = list(x)
    if x and hasattr(x[0], "descriptor"):
        return stack_samples(x)[0]
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def distance_matrix(probes, gallery, metric="cosine"):
    """|P| x |G| distances; ``metric`` is "cosine" or a trained XqdaModel."""
    P, G = _features(probes), _features(gallery)
    if P.shape[1] != G.shape[1]:
        raise DimError(f"probe dim {P.shape[1]} != gallery dim {G.shape[1]}")
    if isinstance(metric, XqdaModel):
        return xqda_distance_matrix(metric, P, G)
    if metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}")
    pn = np.linalg.norm(P, axis=1)
    gn = np.linalg.norm(G, axis=1)
    denom = np.outer(pn, gn)
    sim = np.divide(P @ G.T, denom, out=np.zeros_like(denom), where=denom > 0)
    return 1.0 - sim


def _junk_mask(probe_id, probe_cam, gallery):
    return gallery.junk | ((gallery.ids == probe_id) & (gallery.cams == probe_cam))


@dataclass
class CmcResult:
    curve: np.ndarray
    trials: int
    seed: int

    def at(self, k):
        return float(self.curve[min(k, len(self.curve)) - 1])


def cmc_single_shot(dist, probes, gallery, trials=100, seed=0):
    """Single-shot CMC averaged over random trials.

    Each trial picks one probe image per probe identity and one gallery image
    per gallery identity; for an identity present on both sides the gallery
    image is drawn from cameras other than the chosen probe's. The curve is
    indexed by rank - 1 over the gallery identities.
    """
    dist = np.asarray(dist, dtype=np.float64)
    valid_g = np.flatnonzero(~gallery.junk)
    bad = set()
    for i in range(len(probes)):
        same = valid_g[(gallery.ids[valid_g] == probes.ids[i]) & (gallery.cams[valid_g] != probes.cams[i])]
        if same.size == 0:
            bad.add(int(probes.ids[i]))
    if bad:
        raise ProtocolError(f"probe identities without a cross-camera gallery image: {sorted(bad)}", bad)

    probe_ids = np.unique(probes.ids)
    gallery_ids = np.unique(gallery.ids[valid_g])
    probe_pool = {pid: np.flatnonzero(probes.ids == pid) for pid in probe_ids}
    gallery_pool = {gid: valid_g[gallery.ids[valid_g] == gid] for gid in gallery_ids}
    correct_col = np.searchsorted(gallery_ids, probe_ids)
    rng = np.random.default_rng(seed)
    hits = np.zeros(gallery_ids.size, dtype=np.int64)

    for _ in range(trials):
        chosen_p = {}
        for pid in probe_ids:
            pool = probe_pool[pid]
            chosen_p[pid] = pool[rng.integers(pool.size)]
        chosen_g = np.empty(gallery_ids.size, dtype=np.int64)
        for j, gid in enumerate(gallery_ids):
            pool = gallery_pool[gid]
            if gid in chosen_p:
                # a probe image always has a cross-camera candidate (checked above)
                pool = pool[gallery.cams[pool] != probes.cams[chosen_p[gid]]]
            chosen_g[j] = pool[rng.integers(pool.size)]
        rows = np.array([chosen_p[pid] for pid in probe_ids])
        sub = dist[np.ix_(rows, chosen_g)]
        correct_d = sub[np.arange(probe_ids.size), correct_col]
        gidx = chosen_g[None, :]
        cidx = chosen_g[correct_col][:, None]
        ahead = (sub < correct_d[:, None]) | ((sub == correct_d[:, None]) & (gidx < cidx))
        ranks = ahead.sum(axis=1)
        np.add.at(hits, ranks, 1)

    curve = np.cumsum(hits) / float(probe_ids.size * trials)
    return CmcResult(curve, trials, seed)


@dataclass
class MapResult:
    mAP: float
    curve: np.ndarray
    ap: np.ndarray
    n_valid: int
    n_excluded: int

    def at(self, k):
        if self.curve.size == 0:
            return 0.0
        return float(self.curve[min(k, len(self.curve)) - 1])


def map_single_query(dist, probes, gallery):
    """Single-query mAP and CMC with junk filtering.

    Per probe, gallery entries flagged junk or sharing both identity and
    camera with the probe are dropped before ranking. Probes left with no
    correct match are excluded from both mAP and CMC and counted.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n_g = len(gallery)
    hits = np.zeros(max(n_g, 1), dtype=np.int64)
    aps = []
    excluded = 0
    for i in range(len(probes)):
        if probes.junk[i]:
            excluded += 1
            continue
        order = np.argsort(dist[i], kind="stable")
        order = order[~_junk_mask(probes.ids[i], probes.cams[i], gallery)[order]]
        matches = gallery.ids[order] == probes.ids[i]
        pos = np.flatnonzero(matches)
        if pos.size == 0:
            excluded += 1
            continue
        precision = np.arange(1, pos.size + 1) / (pos + 1.0)
        aps.append(precision.mean())
        hits[pos[0]] += 1
    aps = np.array(aps)
    n_valid = aps.size
    curve = np.cumsum(hits) / n_valid if n_valid else np.zeros(0)
    return MapResult(float(aps.mean()) if n_valid else 0.0, curve, aps, n_valid, excluded)


@dataclass
class RankEntry:
    gallery: str
    distance: float
    correct: bool


@dataclass
class RankedList:
    probe: str
    entries: List[RankEntry] = field(default_factory=list)


def emit_ranked_lists(dist, probes, gallery, k=10):
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = np.asarray(dist, dtype=np.float64)
    out = []
    for i in range(len(probes)):
        order = np.argsort(dist[i], kind="stable")
        order = order[~_junk_mask(probes.ids[i], probes.cams[i], gallery)[order]][:k]
        out.append(RankedList(probes.keys[i], [
            RankEntry(gallery.keys[j], float(dist[i, j]), bool(gallery.ids[j] == probes.ids[i]))
            for j in order
        ]))
    return out


def write_ranked_csv(lists, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe", "rank", "gallery", "distance", "correct"])
        for rl in lists:
            for rank, e in enumerate(rl.entries, 1):
                writer.writerow([rl.probe, rank, e.gallery, repr(e.distance), int(e.correct)])


def ranked_lists_to_json(lists):
    return [
        {"probe": rl.probe,
         "results": [{"rank": r, "gallery": e.gallery, "distance": e.distance, "correct": e.correct}
                     for r, e in enumerate(rl.entries, 1)]}
        for rl in lists
    ]


def evaluate(dist, probes, gallery, protocol=EvalProtocol(), seed=0):
    """Run a protocol and return a JSON-ready summary dict."""
    if protocol.kind is ProtocolKind.SINGLE_QUERY_MAP:
        res = map_single_query(dist, probes, gallery)
        return {
            "protocol": protocol.kind.value,
            "mAP": res.mAP,
            "cmc": {str(k): res.at(k) for k in protocol.ranks_reported},
            "valid_probes": res.n_valid,
            "excluded_probes": res.n_excluded,
            "curve": res.curve.tolist(),
        }
    res = cmc_single_shot(dist, probes, gallery, protocol.trials, seed)
    return {
        "protocol": protocol.kind.value,
        "trials": protocol.trials,
        "seed": seed,
        "cmc": {str(k): res.at(k) for k in protocol.ranks_reported},
        "curve": res.curve.tolist(),
    }


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Shared domain types, image resampling and the binary descriptor cache."""

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidImage

IMAGE_HEIGHT = 128
IMAGE_WIDTH = 48
LOMO_DIM = 26960
DEEP_DIM = 1024
NUM_JOINTS = 14

CACHE_MAGIC = b"REID"
CACHE_VERSION = 1
KEYS_MAGIC = b"KEYS"
_HEADER = struct.Struct("<4sIBIQ")


class DescriptorKind(enum.IntEnum):
    LOMO = 0
    DEEP = 1
    FUSED = 2


_FIXED_DIMS = {DescriptorKind.LOMO: LOMO_DIM, DescriptorKind.DEEP: DEEP_DIM}


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PersonImage:
    """A 128x48 RGB image, float channels in [0, 255], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.shape != (IMAGE_HEIGHT, IMAGE_WIDTH, 3):
            raise InvalidImage(
                f"person image must be {IMAGE_HEIGHT}x{IMAGE_WIDTH}x3, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 255:
            raise InvalidImage("pixel values must be finite and within [0, 255]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class Descriptor:
    """Feature vector stored as float32 so caches round-trip bit-exactly."""

    kind: DescriptorKind
    values: np.ndarray

    def __post_init__(self):
        kind = DescriptorKind(self.kind)
        values = np.array(self.values, dtype=np.float32).ravel()
        if values.size == 0:
            raise ValueError("descriptor must have positive dimension")
        if not np.all(np.isfinite(values)):
            raise ValueError("descriptor entries must be finite")
        expected = _FIXED_DIMS.get(kind)
        if expected is not None and values.size != expected:
            raise ValueError(f"{kind.name} descriptor must have dim {expected}, got {values.size}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", _frozen(values))

    @property
    def dim(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, Descriptor):
            return NotImplemented
        return self.kind == other.kind and self.values.tobytes() == other.values.tobytes()

    __hash__ = None


@dataclass(frozen=True)
class Sample:
    descriptor: Descriptor
    identity: int
    camera: int
    junk: bool = False
    key: str = ""


@dataclass(frozen=True, eq=False)
class JointSet:
    """Fourteen (x, y) joint locations with per-joint confidences."""

    joints: np.ndarray
    confidence: np.ndarray = None

    def __post_init__(self):
        joints = np.array(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, 2):
            raise ValueError(f"expected {NUM_JOINTS} joints with (x, y), got shape {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("joint coordinates must be finite")
        conf = np.ones(NUM_JOINTS) if self.confidence is None else np.array(self.confidence, dtype=np.float64)
        if conf.shape != (NUM_JOINTS,) or np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidences must be 14 values in [0, 1]")
        object.__setattr__(self, "joints", _frozen(joints))
        object.__setattr__(self, "confidence", _frozen(conf))


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel rectangle, end-exclusive: columns x0..x1-1, rows y0..y1-1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"empty box {self}")

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def translated(self, dx, dy):
        return Box(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(frozen=True)
class RegionBoxes:
    head: Box
    upper: Box
    lower: Box

    def items(self):
        return (("head", self.head), ("upper", self.upper), ("lower", self.lower))


def normalize_size(image, height=IMAGE_HEIGHT, width=IMAGE_WIDTH):
    """Resample an RGB grid of shape (H, W, 3) to the person-image size.

    Bilinear interpolation on an align-corners grid, so the four corner
    pixels of the input are reproduced exactly and an input that already
    has the target size comes back unchanged.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidImage(f"expected an (H, W, 3) RGB grid, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise InvalidImage(f"image too small to resample: {h}x{w}")

    def axis(n_in, n_out):
        pos = np.linspace(0.0, n_in - 1, n_out)
        lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
        return lo, pos - lo

    y0, fy = axis(h, height)
    x0, fx = axis(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x0 + 1] * fx
    bottom = img[y0 + 1][:, x0] * (1 - fx) + img[y0 + 1][:, x0 + 1] * fx
    out = top * (1 - fy) + bottom * fy
    return PersonImage(np.clip(out, 0.0, 255.0))


def stack_samples(samples):
    """Split samples into (features float64 (n, d), identities, cameras, junk, keys)."""
    samples = list(samples)
    if not samples:
        return (np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=bool), [])
    dims = {s.descriptor.dim for s in samples}
    if len(dims) != 1:
        raise FormatError(f"samples have mixed dimensions {sorted(dims)}")
    X = np.stack([s.descriptor.values for s in samples]).astype(np.float64)
    ids = np.array([s.identity for s in samples], dtype=np.int64)
    cams = np.array([s.camera for s in samples], dtype=np.int64)
    junk = np.array([s.junk for s in samples], dtype=bool)
    return X, ids, cams, junk, [s.key for s in samples]


def _record_dtype(dim):
    return np.dtype([("identity", "<i8"), ("camera", "<i4"), ("junk", "u1"), ("values", "<f4", (dim,))])


def save_descriptors(samples, path, kind=DescriptorKind.LOMO, dim=None):
    """Write samples to the binary cache.

    Layout: header (magic, version u32, kind u8, dim u32, count u64), then
    fixed-size records (identity i64, camera i32, junk u8, dim x f32), all
    little-endian. Image keys follow the records in a trailer so the record
    region stays seekable. ``kind``/``dim`` only matter for an empty list.
    """
    samples = list(samples)
    if samples:
        kinds = {s.descriptor.kind for s in samples}
        dims = {s.descriptor.dim for s in samples}
        if len(kinds) != 1 or len(dims) != 1:
            raise FormatError("all samples in a cache must share one kind and dimension")
        kind, dim = kinds.pop(), dims.pop()
    else:
        kind = DescriptorKind(kind)
        dim = dim if dim is not None else _FIXED_DIMS.get(kind, 1)

    records = np.zeros(len(samples), dtype=_record_dtype(dim))
    for i, s in enumerate(samples):
        records[i] = (s.identity, s.camera, int(bool(s.junk)), s.descriptor.values)

    trailer = bytearray(KEYS_MAGIC)
    for s in samples:
        raw = s.key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"key too long: {s.key[:40]}...")
        trailer += struct.pack("<H", len(raw)) + raw

    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, int(kind), dim, len(samples)))
        fh.write(records.tobytes())
        fh.write(bytes(trailer))


def read_cache_header(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, kind, dim, count = _HEADER.unpack_from(buf, 0)
    if magic != CACHE_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"unsupported cache version {version}")
    try:
        kind = DescriptorKind(kind)
    except ValueError:
        raise FormatError(f"unknown descriptor kind {kind}") from None
    expected = _FIXED_DIMS.get(kind)
    if dim == 0 or (expected is not None and dim != expected):
        raise FormatError(f"{kind.name} cache declares dim {dim}")
    return kind, dim, count


def load_records(path):
    """Return (kind, dim, structured record array, keys) from a cache file."""
    buf = Path(path).read_bytes()
    kind, dim, count = read_cache_header(buf)
    rdt = _record_dtype(dim)
    start = _HEADER.size
    end = start + count * rdt.itemsize
    if len(buf) < end:
        raise FormatError(f"truncated cache: expected {count} records of dim {dim}")
    records = np.frombuffer(buf, dtype=rdt, count=count, offset=start)
    keys = _read_keys(buf, end, count)
    return kind, dim, records, keys


def _read_keys(buf, pos, count):
    if pos == len(buf):
        return [str(i) for i in range(count)]
    if buf[pos:pos + 4] != KEYS_MAGIC:
        raise FormatError("unexpected trailing bytes after records")
    pos += 4
    keys = []
    for _ in range(count):
        if pos + 2 > len(buf):
            raise FormatError("truncated key trailer")
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + n > len(buf):
            raise FormatError("truncated key trailer")
        keys.append(buf[pos:pos + n].decode("utf-8"))
        pos += n
    if pos != len(buf):
        raise FormatError("unexpected trailing bytes after key trailer")
    return keys


def load_descriptors(path):
    kind, _, records, keys = load_records(path)
    if not np.all(np.isfinite(records["values"])):
        raise FormatError("cache holds non-finite descriptor entries")
    return [
        Sample(Descriptor(kind, rec["values"]), int(rec["identity"]), int(rec["camera"]),
               bool(rec["junk"]), key)
        for rec, key in zip(records, keys)
    ]


def load_joints(path):
    """Parse a joint file: one line per image, ``key`` then 14 ``x y conf`` triples."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 1 + 3 * NUM_JOINTS:
            raise FormatError(f"{path}:{lineno}: expected key and {3 * NUM_JOINTS} numbers")
        try:
            vals = np.array([float(v) for v in parts[1:]]).reshape(NUM_JOINTS, 3)
            joints = JointSet(vals[:, :2], vals[:, 2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if parts[0] in out:
            raise FormatError(f"{path}:{lineno}: duplicate key {parts[0]}")
        out[parts[0]] = joints
    return out


def save_joints(joints, path):
    with open(path, "w") as fh:
        for key, js in joints.items():
            triples = np.column_stack([js.joints, js.confidence]).ravel()
            fh.write(key + " " + " ".join(repr(float(v)) for v in triples) + "\n")

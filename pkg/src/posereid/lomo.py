"""Local Maximal Occurrence (LOMO) descriptor.

Each pyramid level is covered by 10x10 windows with stride 5. Every window
yields a joint HSV histogram and two SILTP texture histograms; windows in the
same row (a band) are max-pooled bin by bin. Bands from all levels are
concatenated, log-compressed and L2-normalized per feature family.
"""

import colorsys
import configparser
from dataclasses import asdict, dataclass
from typing import NamedTuple, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Descriptor, DescriptorKind, PersonImage
from .errors import InvalidImage


@dataclass(frozen=True)
class LomoConfig:
    window: int = 10
    stride: int = 5
    hsv_bins: Tuple[int, int, int] = (8, 8, 8)
    siltp_tau: float = 0.3
    siltp_radii: Tuple[int, ...] = (3, 5)
    siltp_neighbors: int = 4
    pyramid_levels: int = 3
    downsample_factor: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hsv_bins", tuple(int(b) for b in self.hsv_bins))
        object.__setattr__(self, "siltp_radii", tuple(int(r) for r in self.siltp_radii))
        if not self.window >= self.stride >= 1:
            raise ValueError("need window >= stride >= 1")
        if len(self.hsv_bins) != 3 or min(self.hsv_bins) < 1:
            raise ValueError("hsv_bins must be three positive counts")
        if self.siltp_neighbors != 4:
            raise ValueError("only the 4-neighbour SILTP coder is supported")
        if not self.siltp_radii or min(self.siltp_radii) < 1:
            raise ValueError("siltp_radii must be positive")
        if self.siltp_tau <= 0:
            raise ValueError("siltp_tau must be positive")
        if self.pyramid_levels < 1 or self.downsample_factor < 2:
            raise ValueError("need at least one pyramid level and a downsample factor >= 2")

    @property
    def hsv_size(self):
        return int(np.prod(self.hsv_bins))

    @property
    def siltp_size(self):
        return 3 ** self.siltp_neighbors

    @property
    def band_size(self):
        return self.hsv_size + len(self.siltp_radii) * self.siltp_size

    def save(self, path):
        parser = configparser.ConfigParser()
        parser["lomo"] = {
            k: ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
            for k, v in asdict(self).items()
        }
        with open(path, "w") as fh:
            parser.write(fh)

    @classmethod
    def load(cls, path):
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        return cls.from_mapping(parser["lomo"] if parser.has_section("lomo") else {})

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string or native values; unknown keys are rejected."""
        kwargs = {}
        for name, default in asdict(cls()).items():
            if name not in mapping:
                continue
            raw = mapping[name]
            if isinstance(default, tuple):
                if isinstance(raw, str):
                    raw = [x for x in raw.split(",") if x.strip()]
                kwargs[name] = tuple(int(x) for x in raw)
            else:
                kwargs[name] = type(default)(raw)
        unknown = set(mapping) - set(asdict(cls()))
        if unknown:
            raise ValueError(f"unknown LOMO config keys: {sorted(unknown)}")
        return cls(**kwargs)


class PyramidLevel(NamedTuple):
    rgb: np.ndarray
    hsv: np.ndarray
    value: np.ndarray


def rgb_to_hsv(pixel):
    """RGB triple in [0, 255] -> (hue in degrees [0, 360), saturation, value)."""
    r, g, b = (float(c) / 255.0 for c in pixel)
    h, s, v = colorsys.rgb_to_hsv(r, g, b)
    return (h * 360.0) % 360.0, s, v


def rgb_to_hsv_image(rgb):
    """Vectorised hexcone HSV for an (..., 3) array in [0, 255]."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_v = np.where(v > 0, v, 1.0)
    s = np.where(v > 0, c / safe_v, 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(v == r, ((g - b) / safe_c) % 6.0,
                 np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0))
    h = np.where(c > 0, h * 60.0, 0.0) % 360.0
    return np.stack([h, s, v], axis=-1)


def hsv_bin_indices(hsv, bins=(8, 8, 8)):
    hb, sb, vb = bins
    h = np.minimum(np.floor(hsv[..., 0] / 360.0 * hb), hb - 1).astype(np.int64)
    s = np.minimum(np.floor(hsv[..., 1] * sb), sb - 1).astype(np.int64)
    v = np.minimum(np.floor(hsv[..., 2] * vb), vb - 1).astype(np.int64)
    return (h * sb + s) * vb + v


def hsv_joint_histogram(window_hsv, bins=(8, 8, 8)):
    idx = hsv_bin_indices(np.asarray(window_hsv, dtype=np.float64), bins).ravel()
    if idx.size == 0:
        raise ValueError("empty window")
    return np.bincount(idx, minlength=int(np.prod(bins)))


def siltp_code(center, neighbors, tau=0.3):
    """Ternary code of one pixel; neighbours ordered up, right, down, left.

    Digit k is 1 when neighbour k exceeds (1 + tau) * center, 2 when it is
    below (1 - tau) * center, else 0. Code = sum(digit_k * 3**k).
    """
    code = 0
    for k, n in enumerate(neighbors):
        if n > (1 + tau) * center:
            code += 3 ** k
        elif n < (1 - tau) * center:
            code += 2 * 3 ** k
    return code


def siltp_codes(intensity, radius, tau=0.3):
    """SILTP code for every pixel of a 2-D array, edges replicate-padded."""
    img = np.asarray(intensity, dtype=np.float64)
    p = np.pad(img, radius, mode="edge")
    h, w = img.shape
    r = radius
    neighbours = (
        p[0:h, r:r + w],                    # up
        p[r:r + h, 2 * r:2 * r + w],        # right
        p[2 * r:2 * r + h, r:r + w],        # down
        p[r:r + h, 0:w],                    # left
    )
    upper = (1 + tau) * img
    lower = (1 - tau) * img
    codes = np.zeros(img.shape, dtype=np.int64)
    for k, n in enumerate(neighbours):
        codes += 3 ** k * ((n > upper) + 2 * (n < lower))
    return codes


def siltp_histogram(window, radius, tau=0.3):
    codes = siltp_codes(window, radius, tau)
    return np.bincount(codes.ravel(), minlength=81)


def _pool(arr, f):
    h, w = arr.shape[0] // f * f, arr.shape[1] // f * f
    arr = arr[:h, :w]
    return arr.reshape(h // f, f, w // f, f, *arr.shape[2:]).mean(axis=(1, 3))


def build_pyramid(image, levels=3, factor=2):
    """Return pyramid levels; each level average-pools the previous RGB by factor x factor."""
    rgb = image.pixels if isinstance(image, PersonImage) else np.asarray(image, dtype=np.float64)
    out = []
    for i in range(levels):
        if i:
            rgb = _pool(rgb, factor)
        hsv = rgb_to_hsv_image(rgb)
        out.append(PyramidLevel(rgb, hsv, rgb.max(axis=-1)))
    return out


def band_counts(config=LomoConfig(), height=128):
    counts = []
    for _ in range(config.pyramid_levels):
        counts.append(max(0, (height - config.window) // config.stride + 1))
        height //= config.downsample_factor
    return counts


def lomo_dim(config=LomoConfig(), height=128):
    return sum(band_counts(config, height)) * config.band_size


def hsv_mask(config=LomoConfig(), height=128):
    """Boolean mask over the descriptor marking HSV entries (the rest are SILTP)."""
    n_bands = sum(band_counts(config, height))
    band = np.zeros(config.band_size, dtype=bool)
    band[:config.hsv_size] = True
    return np.tile(band, n_bands)


def _band_max(codes, n_bins, window, stride):
    """Per-band element-wise max over window histograms of an integer code map."""
    wins = sliding_window_view(codes, (window, window))[::stride, ::stride]
    n_rows, n_cols = wins.shape[:2]
    flat = wins.reshape(n_rows * n_cols, -1)
    offsets = np.arange(n_rows * n_cols)[:, None] * n_bins
    hist = np.bincount((flat + offsets).ravel(), minlength=n_rows * n_cols * n_bins)
    return hist.reshape(n_rows, n_cols, n_bins).max(axis=1)


def lomo_bands(image, config=LomoConfig()):
    """Raw (pre-log) max-occurrence features, shape (n_bands, band_size)."""
    bands = []
    for level in build_pyramid(image, config.pyramid_levels, config.downsample_factor):
        if min(level.value.shape) < config.window:
            continue
        parts = [_band_max(hsv_bin_indices(level.hsv, config.hsv_bins), config.hsv_size,
                           config.window, config.stride)]
        for radius in config.siltp_radii:
            codes = siltp_codes(level.value, radius, config.siltp_tau)
            parts.append(_band_max(codes, config.siltp_size, config.window, config.stride))
        bands.append(np.concatenate(parts, axis=1))
    return np.concatenate(bands, axis=0)


def extract_lomo(image, config=LomoConfig()):
    """Compute the LOMO descriptor (26960 values with default settings)."""
    if not isinstance(image, PersonImage):
        arr = np.asarray(image, dtype=np.float64)
        if arr.shape != (128, 48, 3):
            raise InvalidImage(f"LOMO expects a 128x48x3 image, got {arr.shape}")
        image = PersonImage(arr)
    feat = np.log1p(lomo_bands(image, config).astype(np.float64)).ravel()
    mask = hsv_mask(config, image.height)
    for sel in (mask, ~mask):
        norm = np.linalg.norm(feat[sel])
        if norm > 0:
            feat[sel] /= norm
    kind = DescriptorKind.LOMO if feat.size == 26960 else DescriptorKind.FUSED
    return Descriptor(kind, feat)

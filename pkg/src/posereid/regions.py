"""Group 14 body joints into head, upper-body and lower-body boxes."""

import csv
import math

import numpy as np

from .core import Box, PersonImage, RegionBoxes
from .errors import DegenerateRegions, InvalidBox

# joint index convention
HEAD_TOP, NECK = 0, 1
R_SHOULDER, L_SHOULDER = 2, 3
R_ELBOW, L_ELBOW = 4, 5
R_WRIST, L_WRIST = 6, 7
R_HIP, L_HIP = 8, 9
R_KNEE, L_KNEE = 10, 11
R_ANKLE, L_ANKLE = 12, 13

JOINT_NAMES = (
    "head_top", "neck", "r_shoulder", "l_shoulder", "r_elbow", "l_elbow",
    "r_wrist", "l_wrist", "r_hip", "l_hip", "r_knee", "l_knee", "r_ankle", "l_ankle",
)

# hips are shared by the upper and lower groups
REGION_JOINTS = {
    "head": (HEAD_TOP, NECK, R_SHOULDER, L_SHOULDER),
    "upper": (NECK, R_SHOULDER, L_SHOULDER, R_ELBOW, L_ELBOW, R_WRIST, L_WRIST, R_HIP, L_HIP),
    "lower": (R_HIP, L_HIP, R_KNEE, L_KNEE, R_ANKLE, L_ANKLE),
}

# row fractions (start, end) used when the pose gives no usable box
FALLBACK_ROWS = {
    "head": (0.0, 0.25),
    "upper": (0.1875, 0.6875),
    "lower": (0.625, 1.0),
}


def fallback_box(region, width, height):
    top, bottom = FALLBACK_ROWS[region]
    return Box(0, int(round(top * height)), int(width), int(round(bottom * height)))


def _region_box(points, width, height, margin):
    x0, y0 = points.min(axis=0)
    x1, y1 = points.max(axis=0)
    pad = margin * max(x1 - x0, y1 - y0)
    x0, x1 = max(x0 - pad, 0.0), min(x1 + pad, float(width))
    y0, y1 = max(y0 - pad, 0.0), min(y1 + pad, float(height))
    if not (x1 > x0 and y1 > y0):
        return None
    return Box(math.floor(x0), math.floor(y0), math.ceil(x1), math.ceil(y1))


def group_joints_to_regions(joints, width, height, margin=0.1, fallback=True):
    """Turn a JointSet into RegionBoxes clipped to a width x height image.

    Each region is the bounding box of its member joints, padded on every
    side by ``margin * max(box_w, box_h)`` and clipped. Regions of zero area
    are replaced by fixed horizontal strips, or raise DegenerateRegions when
    ``fallback`` is off.
    """
    pts = joints.joints
    boxes = {}
    for region, members in REGION_JOINTS.items():
        box = _region_box(pts[list(members)], width, height, margin)
        if box is None:
            if not fallback:
                raise DegenerateRegions(f"{region} region has zero area")
            box = fallback_box(region, width, height)
        boxes[region] = box
    return RegionBoxes(**boxes)


def crop_region(image, box):
    pixels = image.pixels if isinstance(image, PersonImage) else np.asarray(image)
    h, w = pixels.shape[:2]
    x0, y0, x1, y1 = box.as_tuple() if isinstance(box, Box) else box
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise InvalidBox(f"box {(x0, y0, x1, y1)} outside {w}x{h} image")
    return pixels[y0:y1, x0:x1].copy()


def write_boxes_csv(boxes_by_key, path):
    """Write ``key,region,x0,y0,x1,y1`` rows, keys in insertion order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "region", "x0", "y0", "x1", "y1"])
        for key, regions in boxes_by_key.items():
            for name, box in regions.items():
                writer.writerow([key, name, *box.as_tuple()])

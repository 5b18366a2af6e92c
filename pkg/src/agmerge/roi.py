"""Background exclusion: super-class foreground, block dilation and ROIs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _dense

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Roi:
    superclass_id: int
    bbox: tuple        # (x0, y0, x1, y1), end-exclusive
    scale: float
    scaled_size: tuple  # (h, w)

    @property
    def height(self):
        return self.bbox[3] - self.bbox[1]

    @property
    def width(self):
        return self.bbox[2] - self.bbox[0]


def superclass_partition(semantic, table):
    """Per-pixel winning super-class id, 0 where background wins or ties."""
    semantic = np.asarray(semantic)
    ids = np.r_[np.asarray(table.superclass_ids, dtype=np.int64), 0]
    win = _dense.superclass_winner(semantic, table.lookup(), len(table.superclass_ids))
    return ids[win]


def superclass_foreground(semantic, table, superclass_id):
    if superclass_id not in table.superclass_ids:
        raise KeyError(f"unknown super-class {superclass_id}")
    return superclass_partition(semantic, table) == superclass_id


def superpixel_dilate(mask, block=32):
    """Mark every aligned ``block x block`` tile holding a true pixel as true."""
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    th, tw = -(-h // block), -(-w // block)
    padded = np.zeros((th * block, tw * block), dtype=bool)
    padded[:h, :w] = mask
    tiles = padded.reshape(th, block, tw, block).any(axis=(1, 3))
    return np.repeat(np.repeat(tiles, block, axis=0), block, axis=1)[:h, :w]


def connected_components(mask):
    """8-connected components, numbered 1..n by first pixel in scanline order."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if n == 0:
        return labels, 0
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[idx], idx)
    order = np.argsort(first[1:], kind="stable") + 1
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[order] = np.arange(1, n + 1)
    return remap[labels], n


def component_bboxes(labels, n, extension=16):
    h, w = labels.shape
    boxes = []
    for sl in ndimage.find_objects(labels, max_label=n):
        ys, xs = sl
        boxes.append((max(0, xs.start - extension), max(0, ys.start - extension),
                      min(w, xs.stop + extension), min(h, ys.stop + extension)))
    return boxes


def connected_rois(mask, extension=16):
    """Extended, clipped bounding boxes of the 8-connected areas of ``mask``."""
    labels, n = connected_components(mask)
    return component_bboxes(labels, n, extension)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def resize_roi(bbox, superclass_id=0, target_height=513, max_scale=4.0):
    x0, y0, x1, y1 = bbox
    h, w = y1 - y0, x1 - x0
    if h <= 0 or w <= 0:
        raise ValueError(f"empty bbox {bbox}")
    scale = min(max_scale, target_height / h) if h < target_height else 1.0
    scale = max(scale, 1.0)
    return Roi(superclass_id, tuple(bbox), scale,
               (_round_half_up(h * scale), _round_half_up(w * scale)))


def _nearest_index(n_out, n_in):
    return np.minimum((np.arange(n_out) + 0.5) * n_in / n_out, n_in - 1).astype(np.int64)


def resample_nearest(grid, size):
    """Nearest-neighbor resample of the first two axes to ``size = (h, w)``."""
    grid = np.asarray(grid)
    rows = _nearest_index(size[0], grid.shape[0])
    cols = _nearest_index(size[1], grid.shape[1])
    return grid[rows][:, cols]


def _linear_weights(n_out, n_in):
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resample_bilinear(grid, size):
    """Bilinear resample (half-pixel centers) of the first two axes."""
    grid = np.asarray(grid, dtype=np.float64)
    r0, r1, fr = _linear_weights(size[0], grid.shape[0])
    c0, c1, fc = _linear_weights(size[1], grid.shape[1])
    extra = (None,) * (grid.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bot = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def map_back(scaled_labels, roi_size):
    """Sample a scaled label grid back onto the ROI's original pixel grid.

    Each original pixel reads the scaled pixel that nearest-neighbor upsampling
    drew from it, so ``map_back(resample_nearest(g, s), g.shape) == g``.
    """
    sh, sw = scaled_labels.shape
    h, w = roi_size
    rows = np.minimum(np.floor((np.arange(h) + 0.5) * sh / h), sh - 1).astype(np.int64)
    cols = np.minimum(np.floor((np.arange(w) + 0.5) * sw / w), sw - 1).astype(np.int64)
    return scaled_labels[rows][:, cols]

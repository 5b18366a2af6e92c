"""Ground-truth map provider.

Scenes are painted from axis-aligned rectangles and ellipses; later shapes
overwrite earlier ones. A fragmented instance is cut into two parts by a
straight gap band. Perfect semantic and affinity maps follow directly from
the instance grid, and ``perturb`` degrades affinities for robustness runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _dense
from .affinity import DEFAULT_SCHEME
from .roi import resample_nearest

NUM_CLASSES = 8
MIN_SIDE = 32
MIN_VISIBLE = 16
MAX_ATTEMPTS = 200
# after a ROI is upscaled to the target height, a fragment gap must stay
# below the longest scheme distance; 60 leaves room for rounding
REACH_BUDGET = 60
TARGET_HEIGHT = 513

_EIGHT = np.ones((3, 3), dtype=bool)


class SceneSynthesisError(RuntimeError):
    pass


@dataclass
class Scene:
    height: int
    width: int
    instance_map: np.ndarray
    class_map: dict
    seed: int | None = None
    fragmented: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.instance_map = np.asarray(self.instance_map, dtype=np.int64)
        if self.instance_map.shape != (self.height, self.width):
            raise ValueError(f"instance map shape {self.instance_map.shape} "
                             f"!= ({self.height}, {self.width})")
        self.class_map = {int(k): int(v) for k, v in self.class_map.items()}
        ids = sorted(self.class_map)
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"instance ids must be contiguous from 1, got {ids}")
        present = np.unique(self.instance_map)
        if present.size and (present.min() < 0 or present.max() > len(ids)):
            raise ValueError("instance map holds an id without a class")

    @property
    def num_instances(self):
        return len(self.class_map)

    def class_grid(self):
        lut = np.zeros(self.num_instances + 1, dtype=np.int64)
        for i, c in self.class_map.items():
            lut[i] = c
        return lut[self.instance_map]

    def view(self, bbox, size=None):
        """The scene cropped to ``bbox`` and nearest-resampled to ``size``."""
        x0, y0, x1, y1 = bbox
        grid = self.instance_map[y0:y1, x0:x1]
        if size is not None and tuple(size) != grid.shape:
            grid = resample_nearest(grid, size)
        return Scene(grid.shape[0], grid.shape[1], grid, self.class_map, self.seed,
                     self.fragmented)

    def instance_masks(self):
        return {i: self.instance_map == i for i in self.class_map}


@dataclass(frozen=True)
class NoiseSpec:
    gaussian_std: float = 0.0
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.gaussian_std >= 0:
            raise ValueError(f"gaussian_std must be >= 0, got {self.gaussian_std}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")

    @property
    def is_zero(self):
        return self.gaussian_std == 0 and self.flip_prob == 0


def _shape_mask(kind, h, w):
    if kind == "rect":
        return np.ones((h, w), dtype=bool)
    yy = (np.arange(h) + 0.5 - h / 2) / (h / 2)
    xx = (np.arange(w) + 0.5 - w / 2) / (w / 2)
    return yy[:, None] ** 2 + xx[None, :] ** 2 <= 1.0


def max_fragment_gap(extent):
    """Widest gap that keeps both parts of an ``extent``-tall instance in reach."""
    return int(min(31, REACH_BUDGET * extent // TARGET_HEIGHT))


def _cut(mask, gap, rng):
    """Remove a band of ``gap`` lines across the longer side of ``mask``."""
    vertical = mask.shape[1] >= mask.shape[0]
    m = mask if vertical else mask.T
    side = m.shape[1]
    lo = gap + 2
    hi = side - 2 * gap - 2
    if hi < lo:
        return None
    start = int(rng.integers(lo, hi + 1))
    out = m.copy()
    out[:, start:start + gap] = False
    return out if vertical else out.T


def _draw(rng, height, width, n_instances, fragment_prob):
    top = max(MIN_SIDE, min(height, width) // 3)
    shapes = []
    for _ in range(n_instances):
        h = int(rng.integers(MIN_SIDE, top + 1))
        w = int(rng.integers(MIN_SIDE, top + 1))
        y = int(rng.integers(0, height - h + 1))
        x = int(rng.integers(0, width - w + 1))
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        cls = int(rng.integers(1, NUM_CLASSES + 1))
        frag = bool(rng.random() < fragment_prob)
        mask = _shape_mask(kind, h, w)
        if frag:
            gap_max = max_fragment_gap(h)
            gap = int(rng.integers(1, gap_max + 1)) if gap_max >= 1 else 0
            cut = _cut(mask, gap, rng) if gap else None
            if cut is None:
                frag = False
            else:
                mask = cut
        shapes.append((frag, y, x, mask, cls))
    # fragmented instances go last so nothing occludes their parts
    order = sorted(range(n_instances), key=lambda i: shapes[i][0])
    grid = np.zeros((height, width), dtype=np.int64)
    class_map, fragmented, drawn = {}, [], {}
    for new_id, i in enumerate(order, start=1):
        frag, y, x, mask, cls = shapes[i]
        region = grid[y:y + mask.shape[0], x:x + mask.shape[1]]
        region[mask] = new_id
        class_map[new_id] = cls
        drawn[new_id] = int(mask.sum())
        if frag:
            fragmented.append(new_id)
    return grid, class_map, tuple(fragmented), drawn


def _valid(grid, class_map, fragmented, drawn):
    for i in class_map:
        m = grid == i
        if m.sum() < MIN_VISIBLE:
            return False
        _, n = ndimage.label(m, structure=_EIGHT)
        if i in fragmented:
            if n != 2 or m.sum() != drawn[i]:
                return False
        elif n != 1:
            return False
    return True


def synth_scene(height, width, n_instances, fragment_prob=0.0, seed=0):
    """Random labeled scene; deterministic given ``seed``."""
    if height < 64 or width < 64:
        raise ValueError(f"scene must be at least 64x64, got {height}x{width}")
    if n_instances < 1:
        raise ValueError(f"n_instances must be >= 1, got {n_instances}")
    if not 0.0 <= fragment_prob <= 1.0:
        raise ValueError(f"fragment_prob must lie in [0, 1], got {fragment_prob}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        grid, class_map, fragmented, drawn = _draw(rng, height, width, n_instances,
                                                   fragment_prob)
        if _valid(grid, class_map, fragmented, drawn):
            return Scene(height, width, grid, class_map, seed, fragmented)
    raise SceneSynthesisError(
        f"no valid {height}x{width} scene with {n_instances} instances "
        f"after {MAX_ATTEMPTS} attempts")


def seeded_scene(seed, height=512, width=512, fragment_prob=0.3, n_instances=None):
    """``synth_scene`` with 3 to 10 instances drawn from ``seed`` when not given."""
    if n_instances is None:
        n_instances = int(np.random.default_rng(seed).integers(3, 11))
    return synth_scene(height, width, n_instances, fragment_prob, seed)


def gt_semantic(scene, softness=0.0, num_classes=NUM_CLASSES):
    """One-hot class probabilities blended with a uniform floor ``softness``."""
    if not 0.0 <= softness < 0.5:
        raise ValueError(f"softness must lie in [0, 0.5), got {softness}")
    cls = scene.class_grid()
    if cls.max(initial=0) > num_classes:
        raise ValueError(f"class id {cls.max()} exceeds {num_classes}")
    floor = softness / (num_classes + 1)
    out = np.full(cls.shape + (num_classes + 1,), floor, dtype=np.float32)
    np.put_along_axis(out, cls[..., None], np.float32(1.0 - softness + floor), axis=-1)
    return out


def gt_affinity(scene, scheme=DEFAULT_SCHEME):
    """1 where a pixel and its scheme neighbor are in the same instance, else 0."""
    inst = scene.instance_map
    out = np.empty(inst.shape + (scheme.channel_count,), dtype=np.float32)
    _dense.gt_affinity(inst, np.asarray(scheme.distances, dtype=np.int64), out)
    return out


def perturb(affinity, noise):
    """Replace values by uniform draws with prob ``flip_prob``, else add noise."""
    affinity = np.asarray(affinity)
    if noise.is_zero:
        return affinity.copy()
    rng = np.random.default_rng(noise.seed)
    flip = rng.random(affinity.shape) < noise.flip_prob
    uniform = rng.random(affinity.shape)
    gauss = rng.normal(0.0, noise.gaussian_std, affinity.shape) if noise.gaussian_std else 0.0
    out = np.where(flip, uniform, np.clip(affinity + gauss, 0.0, 1.0))
    return out.astype(affinity.dtype)

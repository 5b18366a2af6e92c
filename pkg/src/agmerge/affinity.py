"""Neighbor scheme, affinity symmetrization and semantic refinement.

Affinity maps are ``(H, W, 56)`` arrays. Channel ``r * 8 + k`` holds the
probability that pixel ``(x, y)`` and ``(x + dx, y + dy)`` share an instance,
where ``d = DISTANCES[r]`` and ``(dx, dy) = OFFSET_UNITS[k] * d``. ``x`` is the
column and ``y`` the row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _dense

DISTANCES = (1, 2, 4, 8, 16, 32, 64)
OFFSET_UNITS = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))
# offset ranks whose negation is ranks 3..0; one per undirected pair
FORWARD_RANKS = (4, 5, 6, 7)
CHANNEL_COUNT = len(DISTANCES) * len(OFFSET_UNITS)

STAGE_SUBSETS = {
    "small": (1, 2, 4),
    "medium": (8, 16),
    "large": (32, 64),
}

CITYSCAPES_CLASSES = ("person", "rider", "car", "truck", "bus", "train",
                      "motorcycle", "bicycle")


@dataclass(frozen=True)
class NeighborScheme:
    distances: tuple = DISTANCES

    @property
    def channel_count(self):
        return len(self.distances) * 8

    def offsets(self, d):
        return [(ux * d, uy * d) for ux, uy in OFFSET_UNITS]

    def channel_offset(self, channel):
        r, k = divmod(channel_check(channel, self.channel_count), 8)
        ux, uy = OFFSET_UNITS[k]
        d = self.distances[r]
        return ux * d, uy * d

    def distance_rank(self, d):
        return self.distances.index(d)


DEFAULT_SCHEME = NeighborScheme()


def channel_check(channel, count=CHANNEL_COUNT):
    if not 0 <= channel < count:
        raise ValueError(f"channel {channel} out of range [0, {count})")
    return channel


def channel_index(distance_rank, offset_rank):
    if not 0 <= distance_rank < len(DISTANCES):
        raise ValueError(f"distance rank {distance_rank} out of range")
    if not 0 <= offset_rank < 8:
        raise ValueError(f"offset rank {offset_rank} out of range")
    return distance_rank * 8 + offset_rank


def opposite_channel(channel):
    r, k = divmod(channel_check(channel), 8)
    return r * 8 + (7 - k)


@dataclass
class SuperClassTable:
    """Maps foreground class ids ``1..m`` onto super-class ids."""

    class_to_superclass: dict = field(default_factory=lambda: {
        1: 1, 2: 1,              # person, rider
        3: 2, 4: 2, 5: 2, 6: 2,  # car, truck, bus, train
        7: 3, 8: 3,              # motorcycle, bicycle
    })

    def __post_init__(self):
        self.class_to_superclass = {int(k): int(v) for k, v in self.class_to_superclass.items()}
        classes = sorted(self.class_to_superclass)
        if classes != list(range(1, len(classes) + 1)):
            raise ValueError(f"classes must be 1..m, got {classes}")

    @property
    def num_classes(self):
        return len(self.class_to_superclass)

    @property
    def superclass_ids(self):
        return sorted(set(self.class_to_superclass.values()))

    def members(self, superclass_id):
        if superclass_id not in self.superclass_ids:
            raise KeyError(f"unknown super-class {superclass_id}")
        return [c for c, s in sorted(self.class_to_superclass.items()) if s == superclass_id]

    def lookup(self):
        """Array ``lut[c]`` giving the super-class index (0-based) of class ``c``."""
        ids = self.superclass_ids
        lut = np.full(self.num_classes + 1, -1, dtype=np.int64)
        for c, s in self.class_to_superclass.items():
            lut[c] = ids.index(s)
        return lut


def superclass_sums(semantic, table):
    """Per-pixel summed probability of every super-class, ``(H, W, K)``."""
    semantic = np.asarray(semantic)
    ids = table.superclass_ids
    out = np.zeros(semantic.shape[:-1] + (len(ids),), dtype=np.float64)
    for j, s in enumerate(ids):
        out[..., j] = semantic[..., table.members(s)].sum(axis=-1)
    return out


def superclass_argmax(semantic, table):
    """0-based index of the most probable foreground super-class per pixel."""
    return np.argmax(superclass_sums(semantic, table), axis=-1)


def sigma(x, alpha=5.0):
    x = np.asarray(x, dtype=np.float64)
    out = 2.0 * (1.0 / (1.0 + np.exp(-alpha * x)) - 0.5)
    return out if out.ndim else float(out)


def semantic_inner_product(p, q, table):
    """Foreground inner product of two class-probability vectors.

    Zero when the two pixels fall in different foreground super-classes.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if superclass_argmax(p, table) != superclass_argmax(q, table):
        return 0.0
    return float(np.dot(p[1:], q[1:]))


def _dists(scheme):
    return np.asarray(scheme.distances, dtype=np.int64)


def refine_affinity(affinity, semantic, table, alpha=5.0, scheme=DEFAULT_SCHEME):
    """Scale every affinity by ``sigma`` of the pixels' foreground inner product.

    The inner product counts as 0 when the two pixels' most probable
    foreground super-classes differ; pairs leaving the grid become 0.
    """
    affinity = np.asarray(affinity)
    semantic = np.asarray(semantic)
    _check_maps(affinity, semantic, table, scheme)
    out = np.empty(affinity.shape, dtype=np.result_type(affinity.dtype, np.float32))
    sc = _dense.superclass_index(semantic, table.lookup(), len(table.superclass_ids))
    _dense.refine(affinity, semantic, sc, float(alpha), _dists(scheme), out)
    return out


def _check_pair(table, class_pair):
    a, b = class_pair
    if a not in table.class_to_superclass or b not in table.class_to_superclass:
        raise ValueError(f"unknown classes in pair {class_pair}")
    if table.class_to_superclass[a] != table.class_to_superclass[b]:
        raise ValueError(f"classes {a} and {b} are not in one super-class")
    return a, b


def _check_maps(affinity, semantic, table, scheme):
    if affinity.ndim != 3 or semantic.ndim != 3:
        raise ValueError("affinity and semantic maps must be 3-D")
    if affinity.shape[:2] != semantic.shape[:2]:
        raise ValueError(f"dimension mismatch: affinity {affinity.shape[:2]} "
                         f"vs semantic {semantic.shape[:2]}")
    if affinity.shape[2] != scheme.channel_count:
        raise ValueError(f"expected {scheme.channel_count} channels, got {affinity.shape[2]}")
    if semantic.shape[2] != table.num_classes + 1:
        raise ValueError(f"expected {table.num_classes + 1} semantic channels, "
                         f"got {semantic.shape[2]}")


def remap_cross_class_d64(refined, semantic, table, class_pair=(7, 8), alpha=5.0,
                          scheme=DEFAULT_SCHEME):
    """Apply ``sigma`` to longest-distance affinities joining ``class_pair`` pixels."""
    a, b = _check_pair(table, class_pair)
    refined = np.asarray(refined)
    semantic = np.asarray(semantic)
    if refined.shape[:2] != semantic.shape[:2]:
        raise ValueError(f"dimension mismatch: refined {refined.shape[:2]} "
                         f"vs semantic {semantic.shape[:2]}")
    out = refined.copy()
    cls = np.argmax(semantic, axis=-1)
    r = len(scheme.distances) - 1
    _dense.remap_last(refined, cls, a, b, float(alpha), scheme.distances[r], r, out)
    return out


def symmetrize(affinity, scheme=DEFAULT_SCHEME):
    """Undirected pair weights from a directed affinity map.

    Returns ``(H, W, R, 4)``: entry ``[y, x, r, j]`` is the weight of the pair
    ``p = (x, y)`` and ``p + offset`` for forward offset rank
    ``FORWARD_RANKS[j]`` at distance rank ``r``. The two stored directions are
    averaged; if one is NaN the other is used. Pairs leaving the grid are NaN.
    """
    affinity = np.asarray(affinity)
    if affinity.ndim != 3 or affinity.shape[2] != scheme.channel_count:
        raise ValueError(f"expected (H, W, {scheme.channel_count}), got {affinity.shape}")
    h, w = affinity.shape[:2]
    out = np.empty((h, w, len(scheme.distances), 4))
    _dense.symmetrize(affinity, _dists(scheme), out)
    return out


def pair_weights(affinity, semantic, table, class_pair=(7, 8), alpha=5.0,
                 scheme=DEFAULT_SCHEME):
    """Refined, remapped and symmetrized pair weights ``(H, W, R, 4)`` in one pass.

    Equal to ``symmetrize(remap_cross_class_d64(refine_affinity(...)))``
    without materializing the two directed maps.
    """
    affinity = np.asarray(affinity)
    semantic = np.asarray(semantic)
    _check_maps(affinity, semantic, table, scheme)
    a, b = _check_pair(table, class_pair)
    sc = _dense.superclass_index(semantic, table.lookup(), len(table.superclass_ids))
    cls = np.argmax(semantic, axis=-1)
    same = np.zeros(semantic.shape[:2], dtype=bool)
    same[:, 1:] = np.all(semantic[:, 1:] == semantic[:, :-1], axis=-1)
    h, w = affinity.shape[:2]
    r = len(scheme.distances) - 1
    cast = np.zeros(1, dtype=np.result_type(affinity.dtype, np.float32))
    out = np.empty((h, w, len(scheme.distances), 4))
    _dense.pair_weights(affinity, semantic, sc, cls, same, float(alpha), _dists(scheme), r, a, b,
                        cast, out)
    return out


def forward_offset(distance_rank, j, scheme=DEFAULT_SCHEME):
    d = scheme.distances[distance_rank]
    ux, uy = OFFSET_UNITS[FORWARD_RANKS[j]]
    return ux * d, uy * d

"""Pixel graph construction, staged greedy merging and instance extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _dense
from . import _kernels as K
from .affinity import DEFAULT_SCHEME, STAGE_SUBSETS


@dataclass
class MergeConfig:
    r_ws: float = 0.97
    r_wm: float = 0.7
    r_wl: float = 0.3
    r_c: int = 30
    merge_window: int = 2

    def __post_init__(self):
        if not 0.0 <= self.r_wl <= self.r_wm <= self.r_ws <= 1.0:
            raise ValueError("thresholds must satisfy 0 <= r_wl <= r_wm <= r_ws <= 1")
        if self.r_c < 1:
            raise ValueError(f"r_c must be >= 1, got {self.r_c}")
        if self.merge_window not in (1, 2, 4):
            raise ValueError(f"merge_window must be 1, 2 or 4, got {self.merge_window}")

    @property
    def thresholds(self):
        return (self.r_ws, self.r_wm, self.r_wl)


class MergeGraph:
    """Undirected weighted graph over super-pixels with averaging contraction.

    Initial vertices are ``0..n-1``; contracting two vertices keeps the
    smaller id and averages parallel edges. ``coords`` optionally holds the
    ``(row, col)`` of each initial vertex inside an image of shape ``frame``.
    """

    def __init__(self, n, coords=None, frame=None):
        self.n = int(n)
        self._st = K.new_state(self.n)
        self.coords = None if coords is None else np.asarray(coords, dtype=np.int64)
        self.frame = frame

    @classmethod
    def from_edges(cls, n, src, dst, weights, **kwargs):
        g = cls(n, **kwargs)
        g.add_edges(src, dst, weights)
        return g

    # -- inspection -------------------------------------------------------
    @property
    def num_vertices(self):
        return int(self._st[K.CTR][K.N_ALIVE])

    @property
    def num_edges(self):
        return int(self._st[K.CTR][K.N_EDGES])

    def vertex_ids(self):
        return sorted(int(i) for i in self._st[K.SID][self._st[K.ALIVE]])

    def __contains__(self, vid):
        return 0 <= vid < self.n and self._st[K.ID2SLOT][vid] >= 0

    def _slot(self, vid):
        if vid not in self:
            raise KeyError(f"no vertex {vid}")
        return int(self._st[K.ID2SLOT][vid])

    def members(self, vid):
        s = self._slot(vid)
        out = []
        m = self._st[K.MEM][s, 0]
        while m != -1:
            out.append(int(m))
            m = self._st[K.MEM_NEXT][m]
        return sorted(out)

    def size(self, vid):
        return int(self._st[K.MEM][self._slot(vid), 2])

    def weight(self, u, v):
        w = K.edge_weight(self._st, self._slot(u), self._slot(v))
        return None if w < 0 else float(w)

    def edges(self):
        """``{(min id, max id): weight}`` for every edge."""
        a, b, w = K.edge_arrays(self._st)
        return {(int(i), int(j)): float(x) for i, j, x in zip(a, b, w)}

    def labels(self):
        """Id of the vertex currently holding each initial vertex."""
        return K.vertex_labels(self._st)

    def partition(self):
        return {frozenset(self.members(v)) for v in self.vertex_ids()}

    # -- mutation ---------------------------------------------------------
    def _grow_pool(self, extra=0):
        used = int(self._st[K.CTR][K.POOL_USED])
        self._st = K.with_pool(self._st, max(used + extra, 2 * self._st[K.POOL].shape[0]))

    def add_edges(self, src, dst, weights):
        src = np.ascontiguousarray(src, dtype=np.int64)
        dst = np.ascontiguousarray(dst, dtype=np.int64)
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if not (src.shape == dst.shape == weights.shape):
            raise ValueError("src, dst and weights must have equal length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.n):
            raise IndexError("vertex index out of range")
        if weights.size and not (np.all(weights >= 0) and np.all(weights <= 1)):
            raise ValueError("edge weights must lie in [0, 1]")
        fresh = self._st[K.CTR][K.POOL_USED] == 0 and self.num_vertices == self.n
        self._st = K.with_table(self._st, self.num_edges + src.size)
        used = int(self._st[K.CTR][K.POOL_USED])
        self._st = K.with_pool(self._st, used + 2 * src.size)
        if fresh:
            if K.add_fresh_edges(self._st, src, dst, weights):
                return self
            # a repeated pair: start over on the general path
            self._st = K.with_pool(K.with_table(K.new_state(self.n), src.size), 2 * src.size)
        K.add_edges(self._st, src, dst, weights)
        return self

    def add_grid_edges(self, weights, index, ranks, dists):
        """``add_edges`` for the pixel pairs of a ``(H, W, R, 4)`` weight grid.

        Equal to ``add_edges`` on the pair arrays, which are never built.
        """
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        index = np.ascontiguousarray(index, dtype=np.int64)
        if self._st[K.CTR][K.POOL_USED] == 0 and self.num_vertices == self.n:
            offs = K.grid_degrees(weights, index, ranks, dists, self.n)
            if offs is None:
                raise ValueError("edge weights must lie in [0, 1]")
            self._st = K.with_table(self._st, offs[-1] // 2)
            self._st = K.with_pool(self._st, int(offs[-1]))
            K.fill_grid_edges(self._st, weights, index, ranks, dists, offs)
            return self
        grouped = K.grid_pair_means(self._st, weights, index, ranks, dists)
        if grouped is None:
            raise ValueError("edge weights must lie in [0, 1]")
        src, dst, mean = grouped
        self._st = K.with_table(self._st, self.num_edges + src.size)
        used = int(self._st[K.CTR][K.POOL_USED])
        self._st = K.with_pool(self._st, used + 2 * src.size)
        K.add_edges(self._st, src, dst, mean)
        return self

    def contract(self, u, v):
        """Merge ``u`` and ``v`` (which must share an edge); return the new id."""
        if u == v:
            raise ValueError("cannot contract a vertex with itself")
        if self.weight(u, v) is None:
            raise KeyError(f"no edge between {u} and {v}")
        return self._merge(u, v)

    def _merge(self, u, v):
        su, sv = self._slot(u), self._slot(v)
        kept = K.merge_pair(self._st, su, sv)
        if kept == K.NEED_POOL:
            self._grow_pool(int(self._st[K.NB][[su, sv], 2].min()))
            kept = K.merge_pair(self._st, su, sv)
        return int(self._st[K.SID][kept])


def pixel_pairs(weights, foreground, distance_subset, scheme=DEFAULT_SCHEME):
    """Foreground pixel pairs for the given distances, as flat pixel indices.

    Returns ``(src, dst, w)`` with one entry per undirected pair whose two
    endpoints are foreground and whose weight is defined, ordered by
    distance, offset rank, then source pixel in scanline order.
    """
    fg = np.asarray(foreground, dtype=bool)
    flat = np.where(fg, np.arange(fg.size, dtype=np.int64).reshape(fg.shape), -1)
    return _vertex_pairs(weights, flat, distance_subset, scheme)


def _vertex_pairs(weights, index, distance_subset, scheme):
    ranks = np.array([scheme.distance_rank(d) for d in distance_subset], dtype=np.int64)
    dists = np.array(distance_subset, dtype=np.int64)
    return _dense.pixel_pairs(np.asarray(weights, dtype=np.float64), index, ranks, dists)


def build_graph(weights, foreground, distance_subset=STAGE_SUBSETS["small"],
                scheme=DEFAULT_SCHEME):
    """Graph whose vertices are foreground pixels in scanline order."""
    fg = np.asarray(foreground, dtype=bool)
    rows, cols = np.nonzero(fg)
    g = MergeGraph(rows.size, coords=np.stack([rows, cols], axis=1), frame=fg.shape)
    add_distance_edges(g, weights, distance_subset, scheme)
    return g


def add_distance_edges(graph, weights, distance_subset, scheme=DEFAULT_SCHEME):
    if graph.coords is None:
        raise ValueError("graph has no pixel coordinates")
    index = np.full(graph.frame, -1, dtype=np.int64)
    index[graph.coords[:, 0], graph.coords[:, 1]] = np.arange(graph.n)
    ranks = np.array([scheme.distance_rank(d) for d in distance_subset], dtype=np.int64)
    graph.add_grid_edges(weights, index, ranks, np.array(distance_subset, dtype=np.int64))
    return graph


def merge_stage(graph, threshold):
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    while K.merge_stage(graph._st, float(threshold)) == K.NEED_POOL:
        graph._grow_pool()
    return graph


def tile_groups(coords, window):
    """Initial vertices grouped by aligned ``window x window`` tile.

    Tiles come in scanline order, members in ascending vertex id.
    """
    tiles_y = coords[:, 0] // window
    tiles_x = coords[:, 1] // window
    order = np.lexsort((np.arange(len(coords)), tiles_x, tiles_y)).astype(np.int64)
    key = tiles_y[order] * (int(tiles_x.max(initial=0)) + 1) + tiles_x[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]]) if len(order) else np.zeros(0, np.int64)
    return order, np.r_[starts, len(order)].astype(np.int64)


def force_local_merge(graph, window):
    """Contract all vertices inside each aligned ``window x window`` tile."""
    if window not in (1, 2, 4):
        raise ValueError(f"window must be 1, 2 or 4, got {window}")
    if window == 1 or graph.n == 0:
        return graph
    order, starts = tile_groups(graph.coords, window)
    resume = 0
    while resume >= 0:
        resume = K.merge_groups(graph._st, order, starts, resume)
        if resume >= 0:
            graph._grow_pool()
    return graph


def run_staged_merge(weights, foreground, config, on_stage=None, scheme=DEFAULT_SCHEME):
    """Three-stage merge over short, medium and long distances.

    ``on_stage(stage, graph)`` is called after each stage (1, 2, 3).
    """
    g = build_graph(weights, foreground, STAGE_SUBSETS["small"], scheme)
    force_local_merge(g, config.merge_window)
    merge_stage(g, config.r_ws)
    if on_stage:
        on_stage(1, g)
    add_distance_edges(g, weights, STAGE_SUBSETS["medium"], scheme)
    merge_stage(g, config.r_wm)
    if on_stage:
        on_stage(2, g)
    add_distance_edges(g, weights, STAGE_SUBSETS["large"], scheme)
    merge_stage(g, config.r_wl)
    if on_stage:
        on_stage(3, g)
    return g


@dataclass
class Instance:
    pixels: np.ndarray  # (N, 2) rows and cols
    class_id: int
    confidence: float
    roi_id: int = 0

    @property
    def area(self):
        return len(self.pixels)

    def mask(self, shape):
        m = np.zeros(shape, dtype=bool)
        m[self.pixels[:, 0], self.pixels[:, 1]] = True
        return m


def instance_confidence(labels_grid, weights, scheme=DEFAULT_SCHEME):
    """Mean initial pair weight inside each label, as ``(sums, counts)``.

    ``labels_grid`` holds a non-negative label per pixel, -1 off the graph.
    """
    labels_grid = np.asarray(labels_grid, dtype=np.int64)
    top = int(labels_grid.max(initial=-1)) + 1
    return _dense.label_confidence(labels_grid, np.asarray(weights, dtype=np.float64),
                                   np.asarray(scheme.distances, dtype=np.int64), top)


def extract_instances(graph, weights, semantic, config, roi_id=0, scheme=DEFAULT_SCHEME):
    """Instances from a merged graph: size filter, confidence and class vote."""
    if graph.n == 0:
        return []
    h, w = graph.frame
    semantic = np.asarray(semantic)
    vlabels = graph.labels()
    ids, dense = np.unique(vlabels, return_inverse=True)
    grid = np.full((h, w), -1, dtype=np.int64)
    rows, cols = graph.coords[:, 0], graph.coords[:, 1]
    grid[rows, cols] = dense
    sizes = np.bincount(dense, minlength=len(ids))
    sums, counts = instance_confidence(grid, weights, scheme)

    probs = semantic[rows, cols, 1:].astype(np.float64)
    votes = np.argmax(probs, axis=1)
    m = probs.shape[1]
    k = len(ids)
    vote_counts = np.bincount(dense * m + votes, minlength=k * m).reshape(k, m)
    prob_sums = np.stack([np.bincount(dense, probs[:, c], minlength=k) for c in range(m)], axis=1)

    order = np.argsort(dense, kind="stable")
    bounds = np.r_[0, np.cumsum(sizes)]
    out = []
    for i in range(len(ids)):
        if sizes[i] < config.r_c:
            continue
        best = vote_counts[i] == vote_counts[i].max()
        cands = np.flatnonzero(best)
        cls = cands[np.argmax(prob_sums[i, cands])] + 1
        conf = sums[i] / counts[i] if counts[i] else 0.0
        members = order[bounds[i]:bounds[i + 1]]
        pix = np.stack([rows[members], cols[members]], axis=1)
        out.append(Instance(pix, int(cls), float(min(max(conf, 0.0), 1.0)), roi_id))
    return out


def mask_overlap_iou(a, b):
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 0.0


def stitch(instances, image_size, dedupe_iou=0.8):
    """Sort by confidence and drop same-class near-duplicates (IoU >= 0.8)."""
    ordered = sorted(instances, key=lambda i: -i.confidence)
    kept, masks = [], []
    for inst in ordered:
        m = inst.mask(image_size)
        dup = any(k.class_id == inst.class_id and mask_overlap_iou(m, km) >= dedupe_iou
                  for k, km in zip(kept, masks))
        if not dup:
            kept.append(inst)
            masks.append(m)
    return kept

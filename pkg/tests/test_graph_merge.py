import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agmerge.affinity import STAGE_SUBSETS
from agmerge.graph_merge import (Instance, MergeConfig, MergeGraph, _vertex_pairs,
                                 add_distance_edges, build_graph, extract_instances,
                                 force_local_merge, instance_confidence, merge_stage,
                                 pixel_pairs, run_staged_merge, stitch)
from oracles import DictGraph, naive_merge_stage, sequential_tile_merge
from reference import ref_instance_confidence, ref_pixel_pairs

R = 7  # distance ranks


def grid_weights(h, w, value=np.nan):
    return np.full((h, w, R, 4), value, dtype=np.float64)


def random_graph(seed, max_n=60, max_m=200):
    """Random multigraph; odd seeds draw unique pairs, some seeds round weights into ties."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    if seed % 2:
        key = np.unique(np.minimum(src, dst) * n + np.maximum(src, dst))
        src, dst = key // n, key % n
    w = rng.random(src.size)
    if seed % 3 == 0:
        w = np.round(w, 1)
    return n, src, dst, w, float(rng.random())


def random_scene_weights(seed, h=24, w=26):
    """Weights with instance structure: high inside blocks, low across, some NaN."""
    rng = np.random.default_rng(seed)
    inst = rng.integers(0, 4, size=(h // 6 + 1, w // 6 + 1)).repeat(6, 0).repeat(6, 1)[:h, :w]
    wts = rng.uniform(0.0, 0.4, size=(h, w, R, 4))
    high = rng.uniform(0.6, 1.0, size=(h, w, R, 4))
    from agmerge.affinity import forward_offset
    for r in range(R):
        for j in range(4):
            dx, dy = forward_offset(r, j)
            ys, xs = np.mgrid[0:h, 0:w]
            qy, qx = ys + dy, xs + dx
            ok = (qy >= 0) & (qy < h) & (qx >= 0) & (qx < w)
            same = np.zeros((h, w), dtype=bool)
            same[ok] = inst[ys[ok], xs[ok]] == inst[qy[ok], qx[ok]]
            wts[same, r, j] = high[same, r, j]
            wts[~ok, r, j] = np.nan
    if seed % 2:
        wts = np.round(wts, 1)   # ties
    wts[rng.random(wts.shape) < 0.03] = np.nan
    fg = inst > 0
    return wts, fg


def oracle_graph(wts, fg, subset):
    h, w = fg.shape
    rows, cols = np.nonzero(fg)
    vid = np.full(h * w, -1)
    vid[rows * w + cols] = np.arange(rows.size)
    src, dst, x = ref_pixel_pairs(wts, fg, subset)
    return DictGraph.from_pairs(rows.size, vid[src], vid[dst], x), np.stack([rows, cols], 1), vid


class TestBuild:
    def test_empty_foreground(self):
        g = build_graph(grid_weights(4, 4, 0.5), np.zeros((4, 4), dtype=bool))
        assert g.num_vertices == 0 and g.num_edges == 0

    def test_two_pixels(self):
        wts = grid_weights(1, 2)
        wts[0, 0, 0, 0] = 0.9
        g = build_graph(wts, np.ones((1, 2), dtype=bool))
        assert g.num_vertices == 2 and g.edges() == {(0, 1): 0.9}

    def test_background_neighbor_dropped(self):
        wts = grid_weights(1, 3, 0.9)
        fg = np.array([[True, True, False]])
        g = build_graph(wts, fg)
        assert g.edges() == {(0, 1): 0.9}

    def test_bad_weight_rejected(self):
        wts = grid_weights(1, 2)
        wts[0, 0, 0, 0] = 1.5
        with pytest.raises(ValueError):
            build_graph(wts, np.ones((1, 2), dtype=bool))

    @pytest.mark.parametrize("seed", range(5))
    def test_pixel_pairs_match_reference(self, seed):
        wts, fg = random_scene_weights(seed)
        for subset in STAGE_SUBSETS.values():
            ours = pixel_pairs(wts, fg, subset)
            ref = ref_pixel_pairs(wts, fg, subset)
            for a, b in zip(ours, ref):
                np.testing.assert_array_equal(a, b)


class TestContract:
    def test_triangle_averages(self):
        g = MergeGraph.from_edges(3, [0, 0, 1], [1, 2, 2], [0.9, 0.6, 0.8])
        uv = g.contract(0, 1)
        assert uv == 0
        assert g.edges() == {(0, 2): pytest.approx(0.7)}
        assert g.members(0) == [0, 1]

    def test_path_inherits(self):
        g = MergeGraph.from_edges(3, [0, 1], [1, 2], [0.9, 0.8])
        g.contract(0, 1)
        assert g.edges() == {(0, 2): 0.8}

    def test_two_vertices(self):
        g = MergeGraph.from_edges(2, [0], [1], [0.5])
        g.contract(1, 0)
        assert g.vertex_ids() == [0] and g.num_edges == 0

    def test_needs_edge(self):
        g = MergeGraph.from_edges(3, [0], [1], [0.5])
        with pytest.raises(KeyError):
            g.contract(0, 2)
        with pytest.raises(ValueError):
            g.contract(1, 1)

    def test_add_edges_rules(self):
        g = MergeGraph(3)
        g.add_edges([0, 1], [1, 0], [0.4, 0.6])
        assert g.weight(0, 1) == pytest.approx(0.5)
        g.add_edges([0], [2], [0.8])
        g.add_edges([2, 2], [0, 0], [0.3, 0.5])
        assert g.weight(0, 2) == pytest.approx(0.6)

    @pytest.mark.parametrize("seed", range(30))
    def test_random_contractions_match_oracle(self, seed):
        n, src, dst, w, _ = random_graph(seed, max_n=25, max_m=80)
        g = MergeGraph.from_edges(n, src, dst, w)
        ref = DictGraph.from_pairs(n, src, dst, w)
        rng = np.random.default_rng(seed)
        for _ in range(n):
            edges = sorted(ref.edges())
            if not edges:
                break
            a, b = edges[int(rng.integers(len(edges)))]
            assert g.contract(a, b) == ref.contract(a, b)
            assert g.edges() == ref.edges()
        assert g.partition() == ref.partition()


class TestMergeStage:
    def test_below_threshold_unchanged(self):
        g = MergeGraph.from_edges(3, [0, 1], [1, 2], [0.5, 0.6])
        before = g.edges()
        merge_stage(g, 0.97)
        assert g.edges() == before and g.num_vertices == 3

    def test_chain(self):
        g = MergeGraph.from_edges(3, [0, 1], [1, 2], [0.99, 0.98])
        merge_stage(g, 0.97)
        assert g.partition() == {frozenset({0, 1, 2})}

    def test_averaging_can_stop_the_chain(self):
        # after 0-1 merges, e(01, 2) = (0.98 + 0.5) / 2 < 0.97
        g = MergeGraph.from_edges(3, [0, 1, 0], [1, 2, 2], [0.99, 0.98, 0.5])
        merge_stage(g, 0.97)
        assert g.partition() == {frozenset({0, 1}), frozenset({2})}

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            merge_stage(MergeGraph(1), 1.5)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_naive_rescan(self, seed):
        n, src, dst, w, thr = random_graph(seed)
        g = merge_stage(MergeGraph.from_edges(n, src, dst, w), thr)
        ref = naive_merge_stage(DictGraph.from_pairs(n, src, dst, w), thr)
        assert g.partition() == ref.partition()
        assert g.edges() == ref.edges()

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_invariants(self, seed):
        n, src, dst, w, thr = random_graph(seed, max_n=40, max_m=120)
        g = MergeGraph.from_edges(n, src, dst, w)
        merge_stage(g, thr)
        members = sorted(p for v in g.vertex_ids() for p in g.members(v))
        assert members == list(range(n))
        assert n - g.num_vertices <= n - 1
        assert all(0.0 <= x <= 1.0 for x in g.edges().values())
        assert max(g.edges().values(), default=0.0) < thr or g.num_edges == 0


class TestDistanceEdges:
    def test_aggregate_then_average(self):
        # two super-pixels A = {0, 1}, B = {2, 3} in a 2x2 image
        wts = grid_weights(2, 2)
        wts[0, 0, 0, 0] = 1.0   # (0,0)-(1,0): inside A
        wts[1, 0, 0, 0] = 1.0   # (0,1)-(1,1): inside B
        wts[0, 0, 0, 2] = 0.4   # (0,0)-(0,1): A-B
        wts[0, 1, 0, 2] = 0.6   # (1,0)-(1,1): A-B
        g = build_graph(grid_weights(2, 2), np.ones((2, 2), dtype=bool))
        g.add_edges([0, 2], [1, 3], [1.0, 1.0])
        g.contract(0, 1)
        g.contract(2, 3)
        add_distance_edges(g, wts, (1,))
        assert g.edges() == {(0, 2): pytest.approx(0.5)}
        wts2 = grid_weights(2, 2)
        wts2[0, 0, 0, 2] = 0.2
        add_distance_edges(g, wts2, (1,))
        assert g.weight(0, 2) == pytest.approx(0.35)

    def test_prior_edge_combination(self):
        g = MergeGraph(2, coords=np.array([[0, 0], [0, 1]]), frame=(1, 2))
        g.add_edges([0], [1], [0.8])
        wts = grid_weights(1, 2)
        wts[0, 0, 0, 0] = 0.4
        add_distance_edges(g, wts, (1,))
        assert g.weight(0, 1) == pytest.approx(0.6)

    def test_inside_pair_dropped(self):
        g = MergeGraph.from_edges(2, [0], [1], [1.0], coords=np.array([[0, 0], [0, 1]]),
                                  frame=(1, 2))
        g.contract(0, 1)
        wts = grid_weights(1, 2)
        wts[0, 0, 0, 0] = 0.3
        add_distance_edges(g, wts, (1,))
        assert g.num_edges == 0

    @pytest.mark.parametrize("seed", range(30))
    def test_grid_route_equals_pair_route(self, seed):
        wts, fg = random_scene_weights(seed)
        rng = np.random.default_rng(seed)
        cfg = MergeConfig(merge_window=int(rng.choice([1, 2, 4])), r_ws=0.9, r_wm=0.5, r_wl=0.3)

        def pair_route(g, subset):
            index = np.full(g.frame, -1, dtype=np.int64)
            index[g.coords[:, 0], g.coords[:, 1]] = np.arange(g.n)
            from agmerge.affinity import DEFAULT_SCHEME
            g.add_edges(*_vertex_pairs(wts, index, subset, DEFAULT_SCHEME))

        rows, cols = np.nonzero(fg)
        a = build_graph(wts, fg)
        b = MergeGraph(rows.size, coords=np.stack([rows, cols], 1), frame=fg.shape)
        pair_route(b, STAGE_SUBSETS["small"])
        assert a.edges() == b.edges()
        for g in (a, b):
            force_local_merge(g, cfg.merge_window)
            merge_stage(g, cfg.r_ws)
        for subset, thr in ((STAGE_SUBSETS["medium"], cfg.r_wm), (STAGE_SUBSETS["large"], cfg.r_wl)):
            add_distance_edges(a, wts, subset)
            pair_route(b, subset)
            assert a.edges() == b.edges()
            merge_stage(a, thr)
            merge_stage(b, thr)
            assert a.partition() == b.partition()


class TestForceLocalMerge:
    def test_window_one_is_identity(self):
        wts, fg = random_scene_weights(0)
        g = build_graph(wts, fg)
        before = g.edges()
        force_local_merge(g, 1)
        assert g.edges() == before and g.num_vertices == g.n

    def test_uniform_weights(self):
        wts = grid_weights(8, 8, 0.6)
        g = force_local_merge(build_graph(wts, np.ones((8, 8), dtype=bool)), 2)
        assert g.num_vertices == 16
        np.testing.assert_allclose(list(g.edges().values()), 0.6, rtol=1e-15)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            force_local_merge(MergeGraph(0), 3)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("window", [2, 4])
    def test_matches_sequential_contraction(self, seed, window):
        rng = np.random.default_rng(seed)
        wts = rng.random((8, 8, R, 4))
        fg = rng.random((8, 8)) < 0.85
        g = force_local_merge(build_graph(wts, fg), window)
        ref, coords, _ = oracle_graph(wts, fg, STAGE_SUBSETS["small"])
        sequential_tile_merge(ref, coords, window)
        assert g.partition() == ref.partition()
        ours, theirs = g.edges(), ref.edges()
        assert ours.keys() == theirs.keys()
        assert max((abs(ours[k] - theirs[k]) for k in ours), default=0.0) <= 1e-12


class TestStagedMerge:
    @pytest.mark.parametrize("seed", range(12))
    def test_matches_oracle_pipeline(self, seed):
        wts, fg = random_scene_weights(seed)
        window = (1, 2, 4)[seed % 3]
        cfg = MergeConfig(merge_window=window)
        g = run_staged_merge(wts, fg, cfg)
        ref, coords, vid = oracle_graph(wts, fg, STAGE_SUBSETS["small"])
        sequential_tile_merge(ref, coords, window)
        naive_merge_stage(ref, cfg.r_ws)
        for subset, thr in ((STAGE_SUBSETS["medium"], cfg.r_wm),
                            (STAGE_SUBSETS["large"], cfg.r_wl)):
            src, dst, x = ref_pixel_pairs(wts, fg, subset)
            ref.add_pairs(vid[src], vid[dst], x)
            naive_merge_stage(ref, thr)
        assert g.partition() == ref.partition()

    def test_perfect_affinities_recover_instances(self):
        inst = np.zeros((40, 50), dtype=int)
        inst[2:20, 3:30] = 1
        inst[22:38, 5:45] = 2
        inst[5:15, 35:48] = 3
        from agmerge.oracle import Scene, gt_affinity
        from agmerge.affinity import symmetrize
        scene = Scene(40, 50, inst, {1: 1, 2: 3, 3: 7})
        wts = symmetrize(gt_affinity(scene))
        g = run_staged_merge(wts, inst > 0, MergeConfig(r_c=1, merge_window=1))
        rows, cols = np.nonzero(inst > 0)
        truth = {frozenset(np.flatnonzero(inst[rows, cols] == i)) for i in (1, 2, 3)}
        assert g.partition() == truth

    def test_zero_affinities_keep_tiles(self):
        wts = grid_weights(8, 8, 0.0)
        g = run_staged_merge(wts, np.ones((8, 8), dtype=bool), MergeConfig(merge_window=2))
        assert g.num_vertices == 16
        g = run_staged_merge(wts, np.ones((8, 8), dtype=bool), MergeConfig(merge_window=1))
        assert g.num_vertices == 64

    @staticmethod
    def _bridged(gap):
        w = 8 + gap + 16
        fg = np.zeros((8, w), dtype=bool)
        fg[:, :8] = True
        fg[:, 8 + gap:] = True
        wts = grid_weights(8, w, 1.0)
        wts[:, :, 6, :] = 0.5   # every d = 64 pair
        seen = {}
        run_staged_merge(wts, fg, MergeConfig(r_c=1, merge_window=1),
                         on_stage=lambda s, g: seen.setdefault(s, g.num_vertices))
        return seen

    def test_long_bridge_joins_in_last_stage(self):
        assert self._bridged(48) == {1: 2, 2: 2, 3: 1}

    def test_out_of_reach_stays_apart(self):
        assert self._bridged(65)[3] == 2


class TestExtract:
    @staticmethod
    def _strip(n, classes, probs=None):
        wts = grid_weights(1, n, 1.0)
        sem = np.zeros((1, n, 9))
        for i, c in enumerate(classes):
            sem[0, i, c] = 1.0 if probs is None else probs[i]
            sem[0, i, 0] = 0.0 if probs is None else 1.0 - probs[i]
        g = run_staged_merge(wts, np.ones((1, n), dtype=bool), MergeConfig(r_c=1, merge_window=1))
        return g, wts, sem

    def test_size_filter(self):
        g, wts, sem = self._strip(5, [1] * 5)
        assert len(extract_instances(g, wts, sem, MergeConfig(r_c=5))) == 1
        assert extract_instances(g, wts, sem, MergeConfig(r_c=6)) == []

    def test_confidence_one(self):
        g, wts, sem = self._strip(6, [3] * 6)
        (inst,) = extract_instances(g, wts, sem, MergeConfig(r_c=1))
        assert inst.confidence == 1.0 and inst.class_id == 3 and inst.area == 6

    def test_majority_vote(self):
        g, wts, sem = self._strip(13, [1] * 10 + [2] * 3)
        (inst,) = extract_instances(g, wts, sem, MergeConfig(r_c=1))
        assert inst.class_id == 1

    def test_vote_tie_goes_to_larger_probability(self):
        g, wts, sem = self._strip(4, [1, 1, 2, 2], probs=[0.6, 0.6, 0.7, 0.7])
        (inst,) = extract_instances(g, wts, sem, MergeConfig(r_c=1))
        assert inst.class_id == 2

    def test_singleton_confidence_zero(self):
        wts = grid_weights(1, 3)
        sem = np.zeros((1, 3, 9))
        sem[..., 1] = 1
        g = run_staged_merge(wts, np.ones((1, 3), dtype=bool), MergeConfig(r_c=1, merge_window=1))
        out = extract_instances(g, wts, sem, MergeConfig(r_c=1))
        assert [i.confidence for i in out] == [0.0, 0.0, 0.0]

    @pytest.mark.parametrize("seed", range(5))
    def test_confidence_matches_reference(self, seed):
        wts, _ = random_scene_weights(seed, 30, 31)
        rng = np.random.default_rng(seed)
        labels = rng.integers(-1, 6, size=(30, 31))
        s1, c1 = instance_confidence(labels, wts)
        s2, c2 = ref_instance_confidence(labels, wts)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_allclose(s1, s2, rtol=1e-12)


class TestStitch:
    @staticmethod
    def _inst(pixels, cls, conf, roi=0):
        return Instance(np.array(pixels), cls, conf, roi)

    def test_single_roi_sorted(self):
        a = self._inst([[0, 0]], 1, 0.2)
        b = self._inst([[1, 1]], 1, 0.8)
        assert stitch([a, b], (2, 2)) == [b, a]

    def test_duplicate_suppressed(self):
        a = self._inst([[0, 0], [0, 1]], 1, 0.5, roi=0)
        b = self._inst([[0, 0], [0, 1]], 1, 0.9, roi=1)
        out = stitch([a, b], (2, 2))
        assert len(out) == 1 and out[0].confidence == 0.9

    def test_other_class_or_disjoint_kept(self):
        a = self._inst([[0, 0], [0, 1]], 1, 0.5)
        b = self._inst([[0, 0], [0, 1]], 2, 0.9)
        c = self._inst([[1, 0]], 1, 0.7)
        assert len(stitch([a, b, c], (2, 2))) == 3

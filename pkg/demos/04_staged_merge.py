"""
Staged graph merging
====================

Pixels start as vertices. Short-range edges are merged first at a strict
threshold, then mid and long-range edges are added between the resulting
super-pixels with looser thresholds. Two halves of an object split by a
48-pixel gap only meet through the longest distance.
"""

import numpy as np

from agmerge import MergeConfig, MergeGraph, merge_stage, run_staged_merge

# averaging contraction on a triangle
g = MergeGraph.from_edges(3, [0, 0, 1], [1, 2, 2], [0.9, 0.6, 0.8])
g.contract(0, 1)
print("triangle after contract(0, 1):", g.edges())

# a chain merges completely at 0.97
g = merge_stage(MergeGraph.from_edges(3, [0, 1], [1, 2], [0.99, 0.98]), 0.97)
print("chain partition:", g.partition())

# two fragments bridged only by d = 64
fg = np.zeros((8, 72), dtype=bool)
fg[:, :8] = True
fg[:, 56:] = True
weights = np.ones((8, 72, 7, 4))
weights[:, :, 6, :] = 0.5
graph = run_staged_merge(weights, fg, MergeConfig(r_c=1, merge_window=1),
                         on_stage=lambda s, g: print(f"after stage {s}: {g.num_vertices} vertices"))

"""
Robustness to affinity noise
============================

Gaussian noise and random flips are applied to the oracle affinities of each
region. With one-pixel tiles the averaging during merges absorbs moderate
noise entirely. Forced 2x2 tiles cost some AP even on clean input, since a
tile on an instance border is pulled whole into one side.
"""

import numpy as np

from agmerge import (Detection, MergeConfig, OracleProvider, PipelineConfig, ap_report,
                     detections_from_labels, run_pipeline, seeded_scene)

scenes = [seeded_scene(s, 256, 256) for s in range(3)]
for window in (1, 2):
    for std, flip in [(0.0, 0.0), (0.1, 0.02), (0.3, 0.1)]:
        aps = []
        for seed, scene in enumerate(scenes):
            config = PipelineConfig(merge=MergeConfig(merge_window=window), noise_std=std,
                                    flip_prob=flip, seed=seed)
            result = run_pipeline(config, OracleProvider(scene, config))
            gts = [Detection(m, scene.class_map[i]) for i, m in scene.instance_masks().items()]
            aps.append(ap_report(detections_from_labels(result.labels, result.records), gts).ap)
        print(f"window {window}, std {std:.2f}, flip {flip:.2f}: mean AP {np.mean(aps):.3f}")

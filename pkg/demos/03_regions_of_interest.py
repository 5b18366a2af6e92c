"""
Regions of interest
===================

Pixels are split by winning super-class, dilated to 32x32 blocks and grouped
into connected regions. Each region gets a bounding box with a margin and a
scale factor towards a fixed working height.
"""

import numpy as np

from agmerge import (SuperClassTable, connected_rois, gt_semantic, resize_roi, seeded_scene,
                     superclass_partition, superpixel_dilate)

table = SuperClassTable()
scene = seeded_scene(4, 320, 384)
part = superclass_partition(gt_semantic(scene), table)
print("pixels per super-class:", dict(zip(*np.unique(part, return_counts=True))))

for sc in table.superclass_ids:
    mask = superpixel_dilate(part == sc)
    for bbox in connected_rois(mask):
        roi = resize_roi(bbox, sc)
        print(f"super-class {sc}: bbox {bbox} scale {roi.scale:.3f} -> {roi.scaled_size}")

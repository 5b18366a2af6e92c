"""Proposal-free instance segmentation by staged merging of pixel-affinity graphs.

A semantic map and a 56-channel affinity map become instance masks in four
steps: foreground ROIs per super-class, semantic refinement of the
affinities, a three-stage greedy contraction of the pixel graph, and
stitching of the per-ROI instances.
"""

from .affinity import (DEFAULT_SCHEME, DISTANCES, FORWARD_RANKS, OFFSET_UNITS, STAGE_SUBSETS,
                       NeighborScheme, SuperClassTable, channel_index, opposite_channel,
                       pair_weights, refine_affinity, remap_cross_class_d64, sigma, symmetrize)
from .evaluate import (ApReport, Detection, ap_report, ap_single, confusion_matrix,
                       detections_from_labels, mask_iou)
from .graph_merge import (Instance, MergeConfig, MergeGraph, build_graph, extract_instances,
                          force_local_merge, merge_stage, run_staged_merge, stitch)
from .oracle import NoiseSpec, Scene, gt_affinity, gt_semantic, perturb, seeded_scene, synth_scene
from .pipeline import (FileProvider, OracleProvider, PipelineConfig, PipelineError,
                       PipelineResult, run_pipeline)
from .roi import Roi, connected_rois, map_back, resize_roi, superclass_partition, superpixel_dilate
from .tensor_io import (InstanceRecord, decode_tensor, encode_tensor, read_instances_json,
                        read_label_png, read_tensor, write_instances_json, write_label_png,
                        write_tensor)

__version__ = "0.1.0"

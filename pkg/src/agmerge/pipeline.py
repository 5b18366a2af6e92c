"""End-to-end driver: ROIs, refinement, staged merge, map-back and stitching."""

from __future__ import annotations

import contextlib
import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .affinity import DEFAULT_SCHEME, SuperClassTable, pair_weights
from .graph_merge import (Instance, MergeConfig, extract_instances, run_staged_merge,
                          stitch)
from .oracle import NoiseSpec, Scene, gt_affinity, gt_semantic, perturb
from .roi import (component_bboxes, connected_components, map_back, resample_bilinear,
                  resample_nearest, resize_roi, superclass_partition, superpixel_dilate)
from .tensor_io import (InstanceRecord, read_instances_json, read_label_png,
                        write_instances_json, write_label_png)

LABELS_FILE = "labels.png"
INSTANCES_FILE = "instances.json"


class PipelineError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:  # surface the failing stage
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc


@dataclass
class PipelineConfig:
    merge: MergeConfig = field(default_factory=MergeConfig)
    superclasses: SuperClassTable = field(default_factory=SuperClassTable)
    block: int = 32
    extension: int = 16
    target_height: int = 513
    max_scale: float = 4.0
    alpha: float = 5.0
    remap_pair: tuple = (7, 8)
    provider: str = "oracle"
    seed: int = 0
    noise_std: float = 0.0
    flip_prob: float = 0.0
    softness: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.provider not in ("oracle", "files"):
            raise ValueError(f"provider must be 'oracle' or 'files', got {self.provider!r}")
        if self.block < 1 or self.extension < 0:
            raise ValueError("block must be >= 1 and extension >= 0")
        if self.target_height < 1 or self.max_scale < 1:
            raise ValueError("target_height must be >= 1 and max_scale >= 1")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        self.remap_pair = tuple(self.remap_pair)
        NoiseSpec(self.noise_std, self.flip_prob)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["superclasses"] = {str(k): v for k, v in
                               self.superclasses.class_to_superclass.items()}
        out["remap_pair"] = list(self.remap_pair)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(data.get("merge"), dict):
            data["merge"] = MergeConfig(**data["merge"])
        if isinstance(data.get("superclasses"), dict):
            data["superclasses"] = SuperClassTable(data["superclasses"])
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def roi_noise(config, roi_index):
    seed = int(np.random.SeedSequence([config.seed, roi_index]).generate_state(1)[0])
    return NoiseSpec(config.noise_std, config.flip_prob, seed)


class OracleProvider:
    """Maps sampled from a ground-truth scene at each ROI's scaled size."""

    def __init__(self, scene, config):
        self.scene = scene
        self.config = config
        self.num_classes = config.superclasses.num_classes

    def image_semantic(self):
        return gt_semantic(self.scene, self.config.softness, self.num_classes)

    def roi_maps(self, roi_index, roi):
        view = self.scene.view(roi.bbox, roi.scaled_size)
        semantic = gt_semantic(view, self.config.softness, self.num_classes)
        affinity = gt_affinity(view)
        noise = roi_noise(self.config, roi_index)
        if not noise.is_zero:
            affinity = perturb(affinity, noise)
        return semantic, affinity


class FileProvider:
    """Whole-image maps, cropped per ROI and resampled bilinearly."""

    def __init__(self, semantic, affinity):
        semantic = np.asarray(semantic)
        affinity = np.asarray(affinity)
        if semantic.ndim != 3 or affinity.ndim != 3:
            raise PipelineError("inputs", "semantic and affinity maps must be 3-D")
        if semantic.shape[:2] != affinity.shape[:2]:
            raise PipelineError("inputs", f"dimension mismatch: semantic {semantic.shape[:2]} "
                                          f"vs affinity {affinity.shape[:2]}")
        if affinity.shape[2] != DEFAULT_SCHEME.channel_count:
            raise PipelineError("inputs", f"affinity needs {DEFAULT_SCHEME.channel_count} "
                                          f"channels, got {affinity.shape[2]}")
        self.semantic = semantic
        self.affinity = affinity

    def image_semantic(self):
        return self.semantic

    def roi_maps(self, roi_index, roi):
        x0, y0, x1, y1 = roi.bbox
        sem = self.semantic[y0:y1, x0:x1]
        aff = self.affinity[y0:y1, x0:x1]
        if roi.scaled_size != sem.shape[:2]:
            sem = resample_bilinear(sem, roi.scaled_size).astype(self.semantic.dtype)
            aff = resample_bilinear(aff, roi.scaled_size).astype(self.affinity.dtype)
        return sem, aff


@dataclass
class RoiTask:
    index: int
    roi: object
    component: np.ndarray  # dilated component mask cropped to the ROI


def plan_rois(semantic, config):
    """ROIs per super-class, ordered by super-class then first scanline pixel."""
    table = config.superclasses
    part = superclass_partition(semantic, table)
    tasks = []
    for sc in table.superclass_ids:
        dilated = superpixel_dilate(part == sc, config.block)
        labels, n = connected_components(dilated)
        for k, bbox in enumerate(component_bboxes(labels, n, config.extension), start=1):
            x0, y0, x1, y1 = bbox
            roi = resize_roi(bbox, sc, config.target_height, config.max_scale)
            tasks.append(RoiTask(len(tasks), roi, labels[y0:y1, x0:x1] == k))
    return tasks


def roi_weights(semantic, affinity, config):
    """Refined, remapped and symmetrized pair weights ``(H, W, R, 4)``."""
    return pair_weights(affinity, semantic, config.superclasses, config.remap_pair,
                        config.alpha)


def roi_foreground(semantic, task, config):
    own = resample_nearest(task.component, task.roi.scaled_size)
    return own & (superclass_partition(semantic, config.superclasses) == task.roi.superclass_id)


def map_instances_back(instances, task):
    """Scaled-grid instances re-expressed in original image pixels."""
    roi = task.roi
    grid = np.zeros(roi.scaled_size, dtype=np.int64)
    for i, inst in enumerate(instances, start=1):
        grid[inst.pixels[:, 0], inst.pixels[:, 1]] = i
    back = map_back(grid, (roi.height, roi.width))
    flat = back.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(len(instances) + 2))
    x0, y0 = roi.bbox[0], roi.bbox[1]
    out = []
    for i, inst in enumerate(instances, start=1):
        idx = order[bounds[i]:bounds[i + 1]]
        if idx.size == 0:
            continue
        rows, cols = np.divmod(idx, roi.width)
        out.append(Instance(np.stack([rows + y0, cols + x0], axis=1), inst.class_id,
                            inst.confidence, task.index))
    return out


def process_roi(provider, task, config):
    with _stage("provider"):
        semantic, affinity = provider.roi_maps(task.index, task.roi)
    with _stage("refine"):
        weights = roi_weights(semantic, affinity, config)
    with _stage("merge"):
        fg = roi_foreground(semantic, task, config)
        graph = run_staged_merge(weights, fg, config.merge)
    with _stage("extract"):
        instances = extract_instances(graph, weights, semantic, config.merge, task.index)
    with _stage("map_back"):
        return map_instances_back(instances, task)


@dataclass
class PipelineResult:
    labels: np.ndarray
    records: list
    instances: list


def paint(instances, image_size):
    """Label grid and records; earlier (more confident) instances keep contested pixels."""
    labels = np.zeros(image_size, dtype=np.int64)
    records, kept = [], []
    for inst in instances:
        rows, cols = inst.pixels[:, 0], inst.pixels[:, 1]
        free = labels[rows, cols] == 0
        if not free.any():
            continue
        rid = len(records) + 1
        rows, cols = rows[free], cols[free]
        labels[rows, cols] = rid
        bbox = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
        records.append(InstanceRecord(rid, inst.class_id, inst.confidence, bbox, int(rows.size)))
        kept.append(inst)
    return labels, records, kept


def run_pipeline(config, provider, out_dir=None):
    """Run every ROI and stitch; writes label PNG + instances JSON to ``out_dir``."""
    with _stage("inputs"):
        if provider is None:
            raise ValueError("no map provider given")
        semantic = np.asarray(provider.image_semantic())
        if semantic.ndim != 3 or semantic.shape[2] != config.superclasses.num_classes + 1:
            raise ValueError(f"semantic map must be (H, W, "
                             f"{config.superclasses.num_classes + 1}), got {semantic.shape}")
    with _stage("roi"):
        tasks = plan_rois(semantic, config)

    def work(task):
        return process_roi(provider, task, config)

    if config.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            per_roi = list(pool.map(work, tasks))
    else:
        per_roi = [work(t) for t in tasks]

    with _stage("stitch"):
        image_size = semantic.shape[:2]
        merged = stitch([i for group in per_roi for i in group], image_size)
        labels, records, kept = paint(merged, image_size)
    if out_dir is not None:
        with _stage("write"):
            os.makedirs(out_dir, exist_ok=True)
            write_label_png(os.path.join(out_dir, LABELS_FILE), labels)
            write_instances_json(os.path.join(out_dir, INSTANCES_FILE), records)
    return PipelineResult(labels, records, kept)


def scene_from_ground_truth(labels, records):
    """Rebuild a scene from a ground-truth label grid and its records."""
    labels = np.asarray(labels, dtype=np.int64)
    ids = sorted(r.id for r in records)
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError("ground-truth ids must be contiguous from 1")
    return Scene(labels.shape[0], labels.shape[1], labels, {r.id: r.class_id for r in records})


def write_ground_truth(scene, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for i, c in sorted(scene.class_map.items()):
        rows, cols = np.nonzero(scene.instance_map == i)
        bbox = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
        records.append(InstanceRecord(i, c, 1.0, bbox, int(rows.size)))
    write_label_png(os.path.join(out_dir, LABELS_FILE), scene.instance_map)
    write_instances_json(os.path.join(out_dir, INSTANCES_FILE), records)
    return records


def read_run(directory):
    """``(labels, records)`` from a directory written by ``run_pipeline``."""
    labels = read_label_png(os.path.join(directory, LABELS_FILE))
    return labels, read_instances_json(os.path.join(directory, INSTANCES_FILE))

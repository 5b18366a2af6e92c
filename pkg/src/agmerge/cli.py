"""Command line: ``synth``, ``infer``, ``eval`` and ``viz``.

Exit status is 0 on success, 1 on a usage error and 2 when a run fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from .evaluate import ap_report, detections_from_labels
from .graph_merge import MergeConfig
from .oracle import NoiseSpec, gt_affinity, gt_semantic, perturb, seeded_scene
from .pipeline import (FileProvider, OracleProvider, PipelineConfig, read_run, run_pipeline,
                       scene_from_ground_truth, write_ground_truth)
from .tensor_io import read_label_png, read_tensor, write_tensor

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

SEMANTIC_FILE = "semantic.agmt"
AFFINITY_FILE = "affinity.agmt"
GT_DIR = "gt"
SCENE_FILE = "scene.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _thresholds(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"need three thresholds, got {len(vals)}")
    return vals


def _config_flags(p):
    p.add_argument("--config", help="JSON pipeline config; flags override its fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--r-c", type=int, default=None, help="minimum instance size in pixels")
    p.add_argument("--merge-window", type=int, default=None, choices=(1, 2, 4))
    p.add_argument("--thresholds", type=_thresholds, default=None,
                   help="stage thresholds small,medium,large")
    p.add_argument("--noise-std", type=float, default=None)
    p.add_argument("--flip-prob", type=float, default=None)


def build_parser():
    parser = _Parser(prog="agmerge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a scene, its oracle tensors and ground truth")
    _config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--instances", type=int, default=None,
                   help="instance count (default: 3 to 10, drawn from the seed)")
    p.add_argument("--fragment-prob", type=float, default=0.3)
    p.add_argument("--softness", type=float, default=None)

    p = sub.add_parser("infer", help="run the pipeline on tensor files or a ground truth")
    _config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--semantic", help="semantic tensor (H, W, m + 1)")
    p.add_argument("--affinity", help="affinity tensor (H, W, 56)")
    p.add_argument("--gt", help="ground-truth directory; maps come from the oracle")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("eval", help="AP report of a run against a ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, help="directory written by infer")
    p.add_argument("--out", help="report path (default: stdout only)")

    p = sub.add_parser("viz", help="colorize a label PNG")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    return parser


def load_config(args):
    """Pipeline config from ``--config`` with any given flag taking precedence."""
    config = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    data = config.to_dict()
    merge = data["merge"]
    if args.r_c is not None:
        merge["r_c"] = args.r_c
    if args.merge_window is not None:
        merge["merge_window"] = args.merge_window
    if args.thresholds is not None:
        merge["r_ws"], merge["r_wm"], merge["r_wl"] = args.thresholds
    for flag, key in (("seed", "seed"), ("noise_std", "noise_std"),
                      ("flip_prob", "flip_prob"), ("softness", "softness"),
                      ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    data["merge"] = MergeConfig(**merge)
    return PipelineConfig.from_dict(data)


def label_colors(labels):
    """RGB image with a fixed pseudo-random color per id; 0 stays black."""
    labels = np.asarray(labels, dtype=np.uint64)
    z = labels * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    rgb = np.stack([(z >> np.uint64(s)) & np.uint64(0xFF) for s in (0, 8, 16)], axis=-1)
    # keep instances visibly apart from the black background
    rgb = 64 + rgb.astype(np.uint8) // 4 * 3
    rgb[labels == 0] = 0
    return rgb.astype(np.uint8)


def cmd_synth(args):
    config = load_config(args)
    scene = seeded_scene(config.seed, args.height, args.width, args.fragment_prob,
                         args.instances)
    os.makedirs(args.out, exist_ok=True)
    write_tensor(os.path.join(args.out, SEMANTIC_FILE),
                 gt_semantic(scene, config.softness, config.superclasses.num_classes))
    noise = NoiseSpec(config.noise_std, config.flip_prob, config.seed)
    write_tensor(os.path.join(args.out, AFFINITY_FILE), perturb(gt_affinity(scene), noise))
    write_ground_truth(scene, os.path.join(args.out, GT_DIR))
    meta = {"seed": config.seed, "height": scene.height, "width": scene.width,
            "instances": scene.num_instances, "fragmented": list(scene.fragmented),
            "fragment_prob": args.fragment_prob, "config": config.to_dict()}
    with open(os.path.join(args.out, SCENE_FILE), "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    print(f"scene with {scene.num_instances} instances written to {args.out}")


def cmd_infer(args):
    files = args.semantic is not None or args.affinity is not None
    if files and args.gt is not None:
        raise UsageError("infer: give either --semantic/--affinity or --gt, not both")
    if files and (args.semantic is None or args.affinity is None):
        raise UsageError("infer: --semantic and --affinity go together")
    if not files and args.gt is None:
        raise UsageError("infer: no inputs; give --semantic and --affinity, or --gt")
    config = load_config(args)
    if files:
        config.provider = "files"
        provider = FileProvider(read_tensor(args.semantic), read_tensor(args.affinity))
    else:
        config.provider = "oracle"
        provider = OracleProvider(scene_from_ground_truth(*read_run(args.gt)), config)
    result = run_pipeline(config, provider, args.out)
    print(f"{len(result.records)} instances written to {args.out}")


def cmd_eval(args):
    gt_labels, gt_records = read_run(args.gt)
    labels, records = read_run(args.pred)
    if labels.shape != gt_labels.shape:
        raise ValueError(f"dimension mismatch: prediction {labels.shape} "
                         f"vs ground truth {gt_labels.shape}")
    report = ap_report(detections_from_labels(labels, records),
                       detections_from_labels(gt_labels, gt_records))
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)


def cmd_viz(args):
    Image.fromarray(label_colors(read_label_png(args.labels))).save(
        args.out, format="PNG")
    print(f"colorized labels written to {args.out}")


COMMANDS = {"synth": cmd_synth, "infer": cmd_infer, "eval": cmd_eval, "viz": cmd_viz}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args) or EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except Exception as exc:
        print(f"agmerge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

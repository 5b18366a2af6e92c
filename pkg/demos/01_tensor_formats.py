"""
Tensor files, label PNGs and instance JSON
==========================================

Every intermediate of a run can be written to disk and read back unchanged.
"""

import tempfile
from pathlib import Path

import numpy as np

from agmerge import (InstanceRecord, encode_tensor, read_instances_json, read_label_png,
                     read_tensor, write_instances_json, write_label_png, write_tensor)

out = Path(tempfile.mkdtemp())

# a float32 grid: 19 header bytes, then the little-endian payload
grid = np.random.default_rng(0).random((4, 5, 56)).astype(np.float32)
blob = encode_tensor(grid)
print("header", blob[:19].hex(), "payload bytes", len(blob) - 19)
write_tensor(out / "a.agmt", grid)
assert read_tensor(out / "a.agmt").tobytes() == grid.tobytes()

# label maps are 16-bit grayscale PNGs
labels = np.zeros((6, 8), dtype=np.int64)
labels[1:4, 2:6] = 1
labels[4:, :3] = 300
write_label_png(out / "labels.png", labels)
print("ids read back:", np.unique(read_label_png(out / "labels.png")))

# instance records are sorted by confidence on write
write_instances_json(out / "inst.json", [InstanceRecord(1, 2, 0.4, (2, 1, 6, 4), 12),
                                         InstanceRecord(2, 7, 0.9, (0, 4, 3, 6), 6)])
for rec in read_instances_json(out / "inst.json"):
    print(rec)

"""Build a model archive on disk, reload it, and show what validation catches.

The archive is a plain directory: manifest.json plus one raw little-endian
float32 .bin per tensor, so any framework can write it.
"""
import tempfile
from pathlib import Path

import numpy as np

from infoprune import ArchiveError, load_archive, save_archive, validate
from common import toy_network

manifest, tensors = toy_network()

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model"
    save_archive(manifest, tensors, path)
    print("archive contents:")
    for f in sorted(path.iterdir()):
        print(f"  {f.name:<22} {f.stat().st_size:>8} bytes")

    loaded_manifest, loaded_tensors = load_archive(path)
    same = all(loaded_tensors[n].data.tobytes() == tensors[n].data.tobytes()
               for n in tensors)
    print(f"\nround-trip bit-exact: {same}")

# validation is total: malformed inputs raise structured errors
broken = dict(tensors)
broken["conv1.weight"].data[0, 0, 0, 0] = np.nan
try:
    validate(manifest, broken)
except ArchiveError as exc:
    print(f"\nvalidation caught: {exc}")

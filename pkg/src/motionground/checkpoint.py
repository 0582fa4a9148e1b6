"""Array persistence: a JSON manifest plus a flat little-endian float32 blob.

Shared by model checkpoints and text banks. Round-trips are bit-exact for
float32 inputs; float64 tensors are stored at float32 (training runs in
float32, so nothing is lost on the training path).
"""

from __future__ import annotations

import os

import numpy as np

from .util import dump_json, load_json

FORMAT_NAME = "motionground-f32"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _base(path: str) -> str:
    for suffix in (".manifest.json", ".f32"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def manifest_path(path: str) -> str:
    return _base(path) + ".manifest.json"


def blob_path(path: str) -> str:
    return _base(path) + ".f32"


def save_arrays(path: str, arrays: dict[str, np.ndarray], extra: dict | None = None) -> str:
    """Write `arrays` (insertion order preserved) and optional metadata."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        raw = data.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "count": int(data.size),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "total_bytes": offset,
        "entries": entries,
    }
    if extra is not None:
        manifest["extra"] = extra
    base = _base(path)
    os.makedirs(os.path.dirname(os.path.abspath(base)), exist_ok=True)
    with open(blob_path(base), "wb") as fh:
        for raw in chunks:
            fh.write(raw)
    dump_json(manifest, manifest_path(base))
    return base


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read back arrays (as float32) and the manifest's extra metadata."""
    base = _base(path)
    mpath, bpath = manifest_path(base), blob_path(base)
    if not os.path.exists(mpath):
        raise CheckpointError(f"missing manifest: {mpath}")
    manifest = load_json(mpath)
    if manifest.get("format") != FORMAT_NAME:
        raise CheckpointError(f"unrecognized format {manifest.get('format')!r} in {mpath}")
    with open(bpath, "rb") as fh:
        raw = fh.read()
    expected = manifest["total_bytes"]
    if len(raw) != expected:
        raise CheckpointError(
            f"blob {bpath} is {len(raw)} bytes, manifest expects {expected}"
        )
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        nbytes = entry["count"] * 4
        chunk = raw[entry["offset"]: entry["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(
                f"entry {entry['name']!r} overruns blob: needs {nbytes} bytes at offset {entry['offset']}"
            )
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return arrays, manifest.get("extra", {})

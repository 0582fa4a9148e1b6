"""Manifest + float32 blob persistence."""

import json

import numpy as np
import pytest

from motionground import checkpoint as ckpt


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.RandomState(0)
    arrays = {
        "a.w": rng.standard_normal((3, 4)).astype(np.float32),
        "b": rng.standard_normal(7).astype(np.float32),
        "scalar": np.float32(2.5).reshape(()),
    }
    base = str(tmp_path / "ckpt")
    ckpt.save_arrays(base, arrays, extra={"note": "x"})
    loaded, extra = ckpt.load_arrays(base)
    assert extra["note"] == "x"
    for name, arr in arrays.items():
        assert loaded[name].shape == arr.shape
        assert np.array_equal(loaded[name], arr)


def test_blob_is_little_endian_f32_at_stated_offsets(tmp_path):
    arrays = {"x": np.arange(6, dtype=np.float32).reshape(2, 3)}
    base = str(tmp_path / "c")
    ckpt.save_arrays(base, arrays)
    manifest = json.load(open(base + ".manifest.json"))
    entry = manifest["entries"][0]
    raw = open(base + ".f32", "rb").read()
    decoded = np.frombuffer(raw[entry["offset"]: entry["offset"] + entry["count"] * 4],
                            dtype="<f4").reshape(entry["shape"])
    assert np.array_equal(decoded, arrays["x"])


def test_truncated_blob_reports_byte_counts(tmp_path):
    base = str(tmp_path / "c")
    ckpt.save_arrays(base, {"x": np.ones(8, dtype=np.float32)})
    raw = open(base + ".f32", "rb").read()
    with open(base + ".f32", "wb") as fh:
        fh.write(raw[:-4])
    with pytest.raises(ckpt.CheckpointError) as err:
        ckpt.load_arrays(base)
    assert "28" in str(err.value) and "32" in str(err.value)


def test_missing_manifest_is_an_error(tmp_path):
    with pytest.raises(ckpt.CheckpointError, match="manifest"):
        ckpt.load_arrays(str(tmp_path / "nope"))


def test_wrong_format_rejected(tmp_path):
    base = str(tmp_path / "c")
    ckpt.save_arrays(base, {"x": np.ones(2, dtype=np.float32)})
    manifest = json.load(open(base + ".manifest.json"))
    manifest["format"] = "other"
    json.dump(manifest, open(base + ".manifest.json", "w"))
    with pytest.raises(ckpt.CheckpointError, match="format"):
        ckpt.load_arrays(base)


def test_rewriting_identical_arrays_is_byte_identical(tmp_path):
    rng = np.random.RandomState(1)
    arrays = {"w": rng.standard_normal((5, 5)).astype(np.float32)}
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    ckpt.save_arrays(a, arrays)
    ckpt.save_arrays(b, arrays)
    assert open(a + ".f32", "rb").read() == open(b + ".f32", "rb").read()
    assert open(a + ".manifest.json").read() == open(b + ".manifest.json").read()

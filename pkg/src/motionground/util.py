"""Small shared helpers: stable hashing, seeded RNG, canonical ordering, JSON."""

from __future__ import annotations

import json
import math

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; bit-identical on every platform."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def stable_rng(*seeds: int) -> np.random.RandomState:
    """RandomState keyed by one or more integers.

    RandomState's bit streams are frozen by numpy's compatibility policy,
    which is what makes the pseudo-embedder reproducible across versions.
    """
    mixed = FNV_OFFSET
    for s in seeds:
        for byte in int(s).to_bytes(8, "little", signed=False):
            mixed = ((mixed ^ byte) * FNV_PRIME) & _MASK64
    return np.random.RandomState([mixed & 0xFFFFFFFF, mixed >> 32])


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, exact 1.0 for bit-identical inputs.

    sqrt(x*x) == x holds in IEEE round-to-nearest, so the denominator of
    cosine(u, u) collapses to the numerator exactly."""
    num = float(np.dot(u, v))
    den = math.sqrt(float(np.dot(u, u)) * float(np.dot(v, v)))
    return num / den


def canonical_row_order(*arrays: np.ndarray) -> np.ndarray:
    """Indices sorting rows by their byte content across the given arrays.

    Reductions evaluated in this order are invariant to the caller's row
    permutation bit-for-bit, since the summand sequence is identical."""
    n = arrays[0].shape[0]
    keys = [np.ascontiguousarray(a.reshape(n, -1)) for a in arrays]
    columns = []
    for k in keys:
        for j in range(k.shape[1]):
            columns.append(k[:, j])
    # np.lexsort treats the LAST key as primary
    return np.lexsort(tuple(reversed(columns)))


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def file_sha256(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

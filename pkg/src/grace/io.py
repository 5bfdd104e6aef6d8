"""Deterministic file containers: named float64 arrays and provenance CSVs.

The binary container is a magic line, one JSON header line (sorted keys,
array names/shapes in order), then the raw little-endian float64 payload.
Re-writing identical content yields identical bytes, which the pipeline
relies on for reproducibility checks.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"GRACEBIN1\n"


class ContainerError(ValueError):
    pass


def save_arrays(path, arrays: dict, meta: dict | None = None):
    entries = [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in arrays.items()]
    header = {"arrays": entries, "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for v in arrays.values():
            arr = np.ascontiguousarray(np.asarray(v, dtype=np.float64))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_arrays(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic {magic!r}")
        header = json.loads(fh.readline().decode())
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ContainerError(f"{path}: truncated payload for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, header.get("meta", {})


def format_float(x) -> str:
    return format(float(x), ".12g")


def write_csv(path, header_cols, rows, provenance: str | None = None):
    """Write rows (iterables of str/num) with an optional `# ...` first line."""
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(
                c if isinstance(c, str) else format_float(c) for c in row) + "\n")

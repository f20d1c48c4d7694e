"""Binary array serialization: little-endian float64 blobs with JSON headers.

Used for corpus view sidecars and training checkpoints. A logical file
``name`` is stored as ``name.json`` (shape/ids/metadata) plus ``name.bin``
(raw C-order little-endian float64 data). Writes are byte-deterministic for
identical inputs.
"""

import json
import os
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

_DTYPE = "<f8"


def _dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_matrix(path_base, matrix: np.ndarray, ids: Sequence[str], meta: Optional[dict] = None) -> None:
    """Write one array (first axis indexed by ``ids``) as header + blob."""
    arr = np.ascontiguousarray(matrix, dtype=np.float64)
    if arr.shape[0] != len(ids):
        raise ValueError(f"{len(ids)} ids for axis of length {arr.shape[0]}")
    header = {
        "dtype": _DTYPE,
        "shape": list(arr.shape),
        "ids": list(ids),
        "meta": meta or {},
    }
    _dump_json(str(path_base) + ".json", header)
    with open(str(path_base) + ".bin", "wb") as fh:
        fh.write(arr.astype(_DTYPE).tobytes(order="C"))


def read_matrix(path_base) -> Tuple[np.ndarray, list, dict]:
    header = _load_json(str(path_base) + ".json")
    shape = tuple(header["shape"])
    with open(str(path_base) + ".bin", "rb") as fh:
        raw = fh.read()
    arr = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float64)
    return arr, list(header["ids"]), dict(header.get("meta", {}))


def write_arrays(path_base, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write a named set of arrays as one header + one concatenated blob."""
    entries = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.astype(_DTYPE).tobytes(order="C"))
    header = {"dtype": _DTYPE, "arrays": entries, "meta": meta or {}}
    _dump_json(str(path_base) + ".json", header)
    with open(str(path_base) + ".bin", "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)


def read_arrays(path_base) -> Tuple[Dict[str, np.ndarray], dict]:
    header = _load_json(str(path_base) + ".json")
    with open(str(path_base) + ".bin", "rb") as fh:
        raw = fh.read()
    flat = np.frombuffer(raw, dtype=_DTYPE)
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = flat[start : start + size].reshape(shape).astype(np.float64)
    return arrays, dict(header.get("meta", {}))


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)

"""Directory format for named arrays: ``manifest.json`` plus one raw file per array.

Raw files hold little-endian values with no header; shapes and dtypes live in
the manifest. Used for checkpoints, adapters, token caches and binary
feature matrices.
"""
import json
import os

import numpy as np

from .errors import InvalidArgument

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "bool": "|b1"}


def write_arrays(path, arrays, meta=None):
    os.makedirs(path, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        kind = str(arr.dtype)
        if kind not in _DTYPES:
            raise InvalidArgument(f"array {name!r}: unsupported dtype {kind}")
        fname = f"{name}.bin"
        arr.astype(_DTYPES[kind], copy=False).tofile(os.path.join(path, fname))
        entries[name] = {"shape": list(arr.shape), "dtype": kind, "file": fname}
    manifest = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "arrays": entries,
        "meta": meta or {},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_arrays(path):
    """Returns ``(arrays, meta)``; arrays come back in native byte order."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise InvalidArgument(f"{path}: no manifest.json")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported format version {manifest.get('format_version')}")
    if manifest.get("byte_order") != "little":
        raise InvalidArgument(f"{path}: unsupported byte order {manifest.get('byte_order')}")
    arrays = {}
    for name, e in manifest["arrays"].items():
        fpath = os.path.join(path, e["file"])
        raw = np.fromfile(fpath, dtype=_DTYPES[e["dtype"]])
        expected = int(np.prod(e["shape"], dtype=np.int64))
        if raw.size != expected:
            raise InvalidArgument(f"{fpath}: expected {expected} values, found {raw.size}")
        arrays[name] = raw.astype(e["dtype"]).reshape(e["shape"])
    return arrays, manifest["meta"]

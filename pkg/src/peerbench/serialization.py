"""Bit-exact binary persistence for fitted forests.

Layout: ``b"PBFOREST"``, a little-endian uint32 format version, a uint32
header length, a UTF-8 JSON header (params and array table), then the raw
little-endian array bytes in table order. No timestamps are written, so
identical forests give identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import DataError
from .forest import BenchmarkForest

MAGIC = b"PBFOREST"
VERSION = 1
_ARRAYS = ("feature_", "threshold_", "left_", "right_", "value_", "n_nodes_", "in_bag_counts_",
           "tree_seeds_", "oob_prediction_")


def forest_to_bytes(forest: BenchmarkForest) -> bytes:
    table, blobs = [], []
    for name in _ARRAYS:
        arr = np.ascontiguousarray(getattr(forest, name))
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "params": {"m_try": forest.m_try, "n_tree": int(forest.n_tree),
                   "min_node_size": int(forest.min_node_size), "random_state": forest.random_state},
        "fitted": {"m_try_": int(forest.m_try_), "seed_": int(forest.seed_),
                   "n_features_in_": int(forest.n_features_in_)},
        "arrays": table,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + b"".join(blobs)


def forest_from_bytes(buf: bytes) -> BenchmarkForest:
    if buf[:8] != MAGIC:
        raise DataError("not a forest file (bad magic)")
    version, hlen = struct.unpack("<II", buf[8:16])
    if version != VERSION:
        raise DataError(f"unsupported forest file version {version}")
    header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    forest = BenchmarkForest(**header["params"])
    for k, v in header["fitted"].items():
        setattr(forest, k, v)
    pos = 16 + hlen
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        size = count * dt.itemsize
        if pos + size > len(buf):
            raise DataError("forest file is truncated")
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(entry["shape"])
        setattr(forest, entry["name"], arr.astype(dt.newbyteorder("="), copy=True))
        pos += size
    if pos != len(buf):
        raise DataError("trailing bytes in forest file")
    return forest


def save_forest(forest: BenchmarkForest, path) -> None:
    with open(path, "wb") as fh:
        fh.write(forest_to_bytes(forest))


def load_forest(path) -> BenchmarkForest:
    with open(path, "rb") as fh:
        return forest_from_bytes(fh.read())

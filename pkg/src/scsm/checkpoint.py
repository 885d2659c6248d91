"""Single-file weight archive.

Layout: 8-byte magic, uint32 format version, uint64 JSON index length, the
JSON index (a list of {path, dtype, shape, nbytes} entries sorted by path),
then the raw little-endian element bytes for each entry in index order.
Round trips are bit-exact by construction.
"""

import json
import struct

import numpy as np

from .params import named_params
from .tensor import Tensor

MAGIC = b"SCSMCKPT"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


def _entries(weights):
    if isinstance(weights, dict):
        pairs = sorted(weights.items())
    else:
        pairs = sorted(named_params(weights), key=lambda kv: kv[0])
    out = []
    for path, t in pairs:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        tag = "<f4" if arr.dtype == np.float32 else "<f8"
        out.append((path, tag, np.ascontiguousarray(arr.astype(_DTYPE_TAGS[tag], copy=False))))
    return out


def save_checkpoint(path, weights):
    """Write the parameters of a weights object (or a {path: tensor} dict)."""
    entries = _entries(weights)
    index = [{"path": p, "dtype": tag, "shape": list(a.shape), "nbytes": a.nbytes}
             for p, tag, a in entries]
    blob = json.dumps({"version": FORMAT_VERSION, "params": index},
                      separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, _, a in entries:
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Read an archive back into {path: ndarray}."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (jlen,) = struct.unpack("<Q", fh.read(8))
        index = json.loads(fh.read(jlen))
        out = {}
        for ent in index["params"]:
            dtype = _DTYPE_TAGS.get(ent["dtype"])
            if dtype is None:
                raise CheckpointError(f"{path}: unknown dtype tag {ent['dtype']!r}")
            raw = fh.read(ent["nbytes"])
            if len(raw) != ent["nbytes"]:
                raise CheckpointError(f"{path}: truncated payload at {ent['path']}")
            out[ent["path"]] = np.frombuffer(raw, dtype=dtype).reshape(ent["shape"]).copy()
    return out


def restore_checkpoint(path, weights):
    """Load an archive into an existing weights object, matching parameter
    paths exactly; mismatched path sets or shapes are errors."""
    stored = load_checkpoint(path)
    live = dict(named_params(weights))
    missing = sorted(set(live) - set(stored))
    unexpected = sorted(set(stored) - set(live))
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: parameter paths do not match model "
            f"(missing {missing[:4]}{'...' if len(missing) > 4 else ''}, "
            f"unexpected {unexpected[:4]}{'...' if len(unexpected) > 4 else ''})")
    for key, arr in stored.items():
        t = live[key]
        if tuple(arr.shape) != tuple(t.data.shape):
            raise CheckpointError(
                f"{path}: shape mismatch at {key}: stored {arr.shape}, model {t.data.shape}")
        t.data = arr.astype(t.data.dtype, copy=False)
    return weights

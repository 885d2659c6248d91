"""Parameter plumbing shared by the weight dataclasses: deterministic
walking (path -> tensor), init helpers, freeze flags, and content hashing
used to enforce the freeze contract."""

import dataclasses
import hashlib

import numpy as np

from .tensor import Tensor


def named_params(obj, prefix=""):
    """Yield (path, Tensor) pairs in a deterministic order.

    Walks dataclasses by field order, sequences by index, dicts by sorted
    key. Non-tensor leaves (configs, floats) are skipped.
    """
    if isinstance(obj, Tensor):
        yield (prefix or "param"), obj
        return
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_params(getattr(obj, f.name), sub)
        return
    if isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from named_params(v, f"{prefix}.{i}" if prefix else str(i))
        return
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from named_params(obj[k], f"{prefix}.{k}" if prefix else str(k))
        return


def uniform_init(rng, shape, fan_in, trainable=True):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=trainable)


def zeros_init(shape, trainable=True):
    return Tensor(np.zeros(shape), requires_grad=trainable)


def set_trainable(obj, flag, match=None):
    """Flip requires_grad for every parameter whose path satisfies match
    (all of them when match is None)."""
    for path, t in named_params(obj):
        if match is None or match(path):
            t.requires_grad = bool(flag)


def trainable_params(obj):
    return [t for _, t in named_params(obj) if t.requires_grad]


def param_digest(obj, match=None):
    """SHA-256 over the exact bytes of every matching parameter, walked in
    path-sorted order; bit-identical weights give identical digests."""
    h = hashlib.sha256()
    for path, t in sorted(named_params(obj), key=lambda kv: kv[0]):
        if match is None or match(path):
            h.update(path.encode())
            h.update(str(t.data.shape).encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()

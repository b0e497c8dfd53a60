"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"EDAS" | version | len | spec JSON (UTF-8) | count | records...

Each record is ``len | name (UTF-8) | rank | dims... | float32 data``.
Learned parameters come first, followed by normalization buffers, each
in store order; buffer names end in ``running_mean`` / ``running_var``.
"""

from __future__ import annotations

import struct

import numpy as np

from edaseg.arch import ArchitectureSpec, parse_spec, serialize_spec
from edaseg.network import NetworkInstance, expand_blocks

MAGIC = b"EDAS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _u32(v):
    return struct.pack("<I", v)


def _str(s):
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def checkpoint_bytes(net: NetworkInstance) -> bytes:
    parts = [MAGIC, _u32(VERSION), _str(serialize_spec(net.spec))]
    records = list(net.params.items()) + list(net.buffers.items())
    parts.append(_u32(len(records)))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(_str(name))
        parts.append(_u32(arr.ndim))
        parts.extend(_u32(d) for d in arr.shape)
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(net: NetworkInstance, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(net))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what} "
                                  f"at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what):
        return self.take(self.u32(what), what).decode("utf-8")


def checkpoint_from_bytes(data: bytes, expect: ArchitectureSpec | None = None) -> NetworkInstance:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    spec = parse_spec(r.string("spec"))
    if expect is not None and expect != spec:
        raise CheckpointError(f"checkpoint holds architecture {spec.name!r}, which differs "
                              f"from the requested {expect.name!r}")
    records = {}
    for i in range(r.u32("record count")):
        name = r.string(f"record {i} name")
        rank = r.u32(f"{name} rank")
        shape = tuple(r.u32(f"{name} dims") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * count, f"{name} data")
        records[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last record")

    head_w = records.get("head.conv.weight")
    if head_w is None:
        raise CheckpointError("checkpoint has no head.conv.weight record")
    num_classes = head_w.shape[0]
    params, buffers = {}, {}
    for block in expand_blocks(spec, num_classes):
        for store, shapes in ((params, block.param_shapes()), (buffers, block.buffer_shapes())):
            for name, shape in shapes.items():
                if name not in records:
                    raise CheckpointError(f"checkpoint is missing record {name!r}")
                if records[name].shape != tuple(shape):
                    raise CheckpointError(f"record {name!r} has shape {records[name].shape}, "
                                          f"architecture needs {tuple(shape)}")
                store[name] = records.pop(name)
    if records:
        raise CheckpointError(f"unexpected records: {sorted(records)[:5]}")
    return NetworkInstance(spec, num_classes, params, buffers)


def load_checkpoint(path, expect: ArchitectureSpec | None = None) -> NetworkInstance:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read(), expect)

"""Binary checkpoint format for network parameters.

Layout (all integers little-endian):

    magic   8 bytes  b"TENPROJC"
    version uint32   currently 1
    nlayers uint32
    per layer:
        kind     uint16 length + that many UTF-8 bytes
        narrays  uint16
        per array: uint8 ndim, then ndim * uint32 dims
    then, for each layer in declaration order, each parameter array as raw
    float64 little-endian bytes (C order).

Loading targets an already-built network whose layer kinds and parameter
shapes must match the file's table exactly.
"""

import struct

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"TENPROJC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path):
    """Write all layer parameters of ``model`` to ``path``."""
    blobs = []
    header = [struct.pack("<8sII", MAGIC, VERSION, len(model.layers))]
    for layer in model.layers:
        kind = layer.kind.encode("utf-8")
        params = layer.params()
        header.append(struct.pack("<H", len(kind)))
        header.append(kind)
        header.append(struct.pack("<H", len(params)))
        for arr in params:
            header.append(struct.pack("<B", arr.ndim))
            header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(header))
        for blob in blobs:
            f.write(blob)


def _read(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(model, path):
    """Load parameters from ``path`` into ``model`` (in place).

    The file's layer table must match the model's layer kinds and parameter
    shapes; mismatches raise CheckpointError.
    """
    with open(path, "rb") as f:
        magic, version, nlayers = struct.unpack("<8sII", _read(f, 16, "header"))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if nlayers != len(model.layers):
            raise CheckpointError(
                f"checkpoint has {nlayers} layers, model has {len(model.layers)}"
            )
        table = []
        for i in range(nlayers):
            (klen,) = struct.unpack("<H", _read(f, 2, "kind length"))
            kind = _read(f, klen, "kind").decode("utf-8")
            (narr,) = struct.unpack("<H", _read(f, 2, "array count"))
            shapes = []
            for _ in range(narr):
                (ndim,) = struct.unpack("<B", _read(f, 1, "ndim"))
                shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "shape"))
                shapes.append(tuple(int(d) for d in shape))
            table.append((kind, shapes))
        for i, (layer, (kind, shapes)) in enumerate(zip(model.layers, table)):
            params = layer.params()
            if layer.kind != kind:
                raise CheckpointError(
                    f"layer {i}: model kind {layer.kind!r} != checkpoint kind {kind!r}"
                )
            if [p.shape for p in params] != shapes:
                raise CheckpointError(
                    f"layer {i} ({kind}): parameter shapes "
                    f"{[p.shape for p in params]} != checkpoint {shapes}"
                )
        for layer in model.layers:
            for arr in layer.params():
                raw = _read(f, 8 * arr.size, "parameter data")
                arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
        if f.read(1):
            raise CheckpointError("trailing bytes after parameter data")

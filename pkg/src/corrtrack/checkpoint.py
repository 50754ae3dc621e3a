"""Weight checkpoint container.

Layout: a UTF-8 text manifest terminated by an ``END`` line, followed by the
concatenated raw little-endian buffers. Manifest lines:

    CKPT1
    meta <key> <value>
    tensor <name> <dtype> <d0,d1,...> <byte offset> <byte length>
    END

Offsets are relative to the first byte after the manifest. Round-trips are
bit-exact.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAGIC = "CKPT1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None):
    meta = meta or {}
    lines = [MAGIC]
    for key, value in meta.items():
        value = str(value)
        if "\n" in key or "\n" in value or " " in key:
            raise ValueError(f"illegal meta entry {key!r}")
        lines.append(f"meta {key} {value}")
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if " " in name:
            raise ValueError(f"tensor name may not contain spaces: {name!r}")
        arr = np.asarray(arr)
        if not arr.flags["C_CONTIGUOUS"]:
            # note: ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"tensor {name} {arr.dtype.name} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.index(b"\n")
    if blob[:nl].decode() != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    end = blob.index(b"\nEND\n")
    header = blob[nl + 1:end].decode().splitlines()
    payload = blob[end + len(b"\nEND\n"):]
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(header, start=2):
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "tensor":
            name, dtype, shape_s, off_s, len_s = rest.split(" ")
            shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
            off, nbytes = int(off_s), int(len_s)
            arr = np.frombuffer(payload[off:off + nbytes],
                                dtype=np.dtype(dtype).newbyteorder("<"))
            tensors[name] = arr.astype(dtype).reshape(shape)
        else:
            raise ValueError(f"{path}: bad manifest line {lineno}: {line!r}")
    return tensors, meta


def checkpoint_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()

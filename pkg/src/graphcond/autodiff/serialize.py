"""Parameter snapshot files.

Layout: an ASCII header line ``GCPARAMS <count>``, one line per tensor with
``<name> <ndim> <dims...>``, then the little-endian float64 buffers in
declaration order.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "GCPARAMS"


def save_params(params: dict, path) -> int:
    """Write ``params`` (ordered name -> array); returns bytes written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{MAGIC} {len(params)}"]
    for name, arr in params.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        arr = np.asarray(arr)
        lines.append(" ".join([name, str(arr.ndim), *map(str, arr.shape)]))
    header = ("\n".join(lines) + "\n").encode("ascii")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.values())
    path.write_bytes(header + body)
    return len(header) + len(body)


def load_params(path) -> dict:
    raw = Path(path).read_bytes()
    pos = raw.index(b"\n")
    first = raw[:pos].decode("ascii").split()
    if len(first) != 2 or first[0] != MAGIC:
        raise ValueError(f"{path}: not a parameter snapshot")
    count = int(first[1])
    specs = []
    for _ in range(count):
        end = raw.index(b"\n", pos + 1)
        parts = raw[pos + 1:end].decode("ascii").split()
        ndim = int(parts[1])
        specs.append((parts[0], tuple(int(s) for s in parts[2:2 + ndim])))
        pos = end
    offset = pos + 1
    out = {}
    for name, shape in specs:
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
        offset += 8 * size
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes")
    return out

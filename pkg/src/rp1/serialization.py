"""Plain-text checkpoint format shared by ensembles and policies.

Layout::

    rp1-checkpoint 1
    meta <key> <value>          (zero or more)
    array <name> <ndim> <d0> <d1> ...
    <row-major values, space separated, repr() precision>
    ...

Values use Python's shortest round-trip float repr, so save/load is exact.
"""
from __future__ import annotations

import os

import numpy as np

MAGIC = "rp1-checkpoint 1"


def save_checkpoint(path, meta: dict, arrays: dict) -> None:
    lines = [MAGIC]
    for key, value in meta.items():
        lines.append(f"meta {key} {value}")
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {arr.ndim} {dims}".rstrip())
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: not an rp1 checkpoint")
    meta, arrays = {}, {}
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "meta":
            meta[head[1]] = " ".join(head[2:])
            i += 1
        elif head[0] == "array":
            name, ndim = head[1], int(head[2])
            shape = tuple(int(d) for d in head[3 : 3 + ndim])
            body = lines[i + 1].split() if i + 1 < len(lines) else []
            values = np.array([float(v) for v in body], dtype=np.float64)
            arrays[name] = values.reshape(shape)
            i += 2
        else:
            raise ValueError(f"{path}: unexpected line {lines[i][:40]!r}")
    return meta, arrays

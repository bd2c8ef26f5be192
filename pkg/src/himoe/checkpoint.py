"""Flat named-tensor checkpoints: raw little-endian float64 blob plus a text index.

Index lines are ``name<TAB>shape<TAB>offset<TAB>count`` with shape written as
comma-separated sizes (empty for scalars) and offset/count in elements.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError

BLOB = "model.bin"
INDEX = "model.index"


def save_checkpoint(state: dict[str, np.ndarray], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines, offset = [], 0
    with open(directory / BLOB, "wb") as fh:
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f8")
            fh.write(arr.tobytes())
            shape = ",".join(str(n) for n in arr.shape)
            lines.append(f"{name}\t{shape}\t{offset}\t{arr.size}")
            offset += arr.size
    (directory / INDEX).write_text("\n".join(lines) + "\n")
    return directory


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    for fname in (BLOB, INDEX):
        if not (directory / fname).exists():
            raise FormatError(f"{fname}: file missing in {directory}")
    blob = np.frombuffer((directory / BLOB).read_bytes(), dtype="<f8")
    state = {}
    for n, line in enumerate((directory / INDEX).read_text().splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{INDEX}: line {n} malformed")
        name, shape_s, off_s, count_s = parts
        shape = tuple(int(x) for x in shape_s.split(",")) if shape_s else ()
        off, count = int(off_s), int(count_s)
        if int(np.prod(shape)) != count or off + count > blob.size:
            raise FormatError(f"{INDEX}: entry {name!r} inconsistent with {BLOB}")
        state[name] = blob[off:off + count].astype(np.float64).reshape(shape)
    return state

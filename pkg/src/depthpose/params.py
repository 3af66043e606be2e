"""Named parameter blocks with a stable flat layout, plus binary serialization."""

from __future__ import annotations

import json
import struct

import numpy as np


class ParamVector:
    """Ordered mapping of block name to float64 array.

    Block names are ``group/...``; the group (text before the first slash)
    selects optimizer settings such as the learning rate.
    """

    def __init__(self, blocks=None):
        self._blocks = {}
        for name, value in (blocks or {}).items():
            self[name] = value

    def __getitem__(self, name):
        return self._blocks[name]

    def __setitem__(self, name, value):
        self._blocks[name] = np.array(value, dtype=float)

    def __contains__(self, name):
        return name in self._blocks

    def __iter__(self):
        return iter(self._blocks)

    def __len__(self):
        return len(self._blocks)

    def items(self):
        return self._blocks.items()

    def names(self):
        return list(self._blocks)

    @staticmethod
    def group(name):
        return name.split("/", 1)[0]

    @property
    def size(self):
        return sum(v.size for v in self._blocks.values())

    def layout(self):
        out, offset = [], 0
        for name, v in self._blocks.items():
            out.append((name, v.shape, offset))
            offset += v.size
        return out

    def flatten(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._blocks.values()])

    def unflatten(self, vec) -> ParamVector:
        """New vector with this layout filled from ``vec``."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a flat vector of size {self.size}, got {vec.shape}")
        out = ParamVector()
        for name, shape, offset in self.layout():
            n = int(np.prod(shape))
            out[name] = vec[offset : offset + n].reshape(shape)
        return out

    def copy(self) -> ParamVector:
        return ParamVector({k: v.copy() for k, v in self._blocks.items()})

    def zeros_like(self) -> ParamVector:
        return ParamVector({k: np.zeros_like(v) for k, v in self._blocks.items()})

    def same_layout(self, other) -> bool:
        return [(n, s) for n, s, _ in self.layout()] == [(n, s) for n, s, _ in other.layout()]

    def __repr__(self):
        inner = ", ".join(f"{k}: {v.shape}" for k, v in self._blocks.items())
        return f"ParamVector({inner})"


_MAGIC = b"DPPARAM1"


def save_params(params: ParamVector, path):
    """Write ``magic | u64 header length | JSON header | float64 LE data``."""
    header = {
        "dtype": "<f8",
        "blocks": [
            {"name": name, "shape": list(shape), "count": int(np.prod(shape)), "offset": offset}
            for name, shape, offset in params.layout()
        ],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(params.flatten().astype("<f8").tobytes())


def load_params(path) -> ParamVector:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a parameter file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        data = np.frombuffer(fh.read(), dtype="<f8")
    out = ParamVector()
    for b in header["blocks"]:
        out[b["name"]] = data[b["offset"] : b["offset"] + b["count"]].reshape(b["shape"])
    return out

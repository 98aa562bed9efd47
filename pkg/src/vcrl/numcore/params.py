"""Named parameter collections with paired gradient buffers.

A ParamSet maps names to leaf Tensors.  Gradients live on the tensors
themselves and are zero-filled arrays from the moment a parameter is
registered, so `grads` always mirrors `entries` in keys and shapes.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"VCRP"
VERSION = 1


class ParamSet:
    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"parameter {name!r} contains non-finite entries")
        t.grad = np.zeros_like(t.data)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    @property
    def entries(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self._tensors.items()}

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad[...] = 0.0

    def num_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def copy(self, requires_grad: bool = False) -> "ParamSet":
        out = ParamSet()
        for name, t in self._tensors.items():
            out.add(name, t.data.copy(), requires_grad=requires_grad)
        return out

    def subset(self, prefixes: Iterable[str]) -> "ParamSet":
        """View sharing the same tensors; used to scope an optimizer."""
        prefixes = tuple(prefixes)
        out = ParamSet()
        for name, t in self._tensors.items():
            if name.startswith(prefixes):
                out._tensors[name] = t
        return out

    def copy_from(self, other: "ParamSet"):
        for name, t in self._tensors.items():
            t.data[...] = other[name].data

    def lerp_from(self, other: "ParamSet", weight_on_other: float):
        """data <- (1-w)*data + w*other, per matching entry."""
        w = float(weight_on_other)
        for name, t in self._tensors.items():
            t.data *= 1.0 - w
            t.data += w * other[name].data

    # --- flat binary serialization -------------------------------------
    # layout: "VCRP" magic, u32 version, then per entry:
    #   u32 name length, name bytes (utf-8), u32 rank, u32 dims..., f64 LE payload

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            for name, t in self._tensors.items():
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", t.data.ndim))
                for dim in t.data.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(t.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, requires_grad: bool = True) -> "ParamSet":
        out = cls()
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise ValueError(f"{path}: not a parameter file (bad magic)")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            while True:
                head = fh.read(4)
                if not head:
                    break
                (name_len,) = struct.unpack("<I", head)
                name = fh.read(name_len).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
                count = int(np.prod(shape)) if shape else 1
                payload = fh.read(8 * count)
                data = np.frombuffer(payload, dtype="<f8").reshape(shape)
                out.add(name, data.copy(), requires_grad=requires_grad)
        return out


def global_grad_norm(params: ParamSet) -> float:
    total = 0.0
    for t in params.tensors():
        total += float(np.dot(t.grad.ravel(), t.grad.ravel()))
    return float(np.sqrt(total))


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for t in params.tensors():
            t.grad *= scale
    return norm


def he_uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)

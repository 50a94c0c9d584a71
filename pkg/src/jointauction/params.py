"""Named trainable parameters, Adam optimizer state, and checkpoint IO.

A ``ParameterStore`` holds named shaped arrays plus Adam moments, the step
counter, and the Lagrange multipliers / penalty weight used by constrained
training. Checkpoints are a small versioned binary container: a magic tag, a
JSON header carrying the format version and a config digest, then named
little-endian arrays (parameters first, then optimizer and Lagrangian
state). Round trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Iterator

import numpy as np

from .autodiff import Node
from .errors import ConfigError, DimensionError, DomainError

_MAGIC = b"JAUCKPT1"
FORMAT_VERSION = 1


class ParameterStore:
    """Named parameter arrays with Adam state and Lagrangian variables."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0
        self.lam = np.zeros(0)
        self.rho = 1.0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=self.dtype)
        self.params[name] = arr
        self.adam_m[name] = np.zeros_like(arr)
        self.adam_v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        old = self.params[name]
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != old.shape:
            raise DimensionError(f"shape mismatch for {name!r}: {arr.shape} vs {old.shape}")
        self.params[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> Iterator[str]:
        return iter(self.params)

    def nodes(self, names=None) -> dict[str, Node]:
        """Fresh graph leaves for (a subset of) the parameters."""
        keys = self.params.keys() if names is None else names
        return {k: Node(self.params[k]) for k in keys}

    def n_elements(self, prefix: str = "") -> int:
        return sum(v.size for k, v in self.params.items() if k.startswith(prefix))

    def init_lambda(self, size: int, value: float = 0.0) -> None:
        self.lam = np.full(size, value, dtype=float)

    # -- optimizers ---------------------------------------------------------

    def adam_step(self, grads: dict[str, np.ndarray], lr: float,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Standard Adam update on the named subset present in ``grads``."""
        self.step += 1
        bc1 = 1.0 - beta1 ** self.step
        bc2 = 1.0 - beta2 ** self.step
        for name, g in grads.items():
            if name not in self.params:
                raise ConfigError(f"gradient for unknown parameter {name!r}")
            g = np.asarray(g, dtype=self.dtype)
            m = self.adam_m[name]
            v = self.adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + eps)
            self.params[name] = self.params[name] - self.dtype.type(lr) * update

    def sgd_step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            self.params[name] = self.params[name] - self.dtype.type(lr) * np.asarray(g, dtype=self.dtype)

    # -- checkpoint container ------------------------------------------------

    def save(self, path, config_digest: str = "", meta: dict | None = None) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(config_digest=config_digest, meta=meta))

    def to_bytes(self, config_digest: str = "", meta: dict | None = None) -> bytes:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        header = {
            "format_version": FORMAT_VERSION,
            "config_digest": config_digest,
            "dtype": self.dtype.str,
            "param_names": list(self.params),
            "meta": meta or {},
        }
        raw = json.dumps(header, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
        entries: list[tuple[str, np.ndarray]] = list(self.params.items())
        entries += [(f"optim.m.{k}", v) for k, v in self.adam_m.items()]
        entries += [(f"optim.v.{k}", v) for k, v in self.adam_v.items()]
        entries.append(("optim.step", np.array(self.step, dtype=np.int64)))
        entries.append(("lagrange.lambda", np.asarray(self.lam, dtype=np.float64)))
        entries.append(("lagrange.rho", np.array(self.rho, dtype=np.float64)))
        buf.write(struct.pack("<Q", len(entries)))
        for name, arr in entries:
            _write_array(buf, name, arr)
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> tuple["ParameterStore", dict]:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["ParameterStore", dict]:
        buf = io.BytesIO(blob)
        if buf.read(len(_MAGIC)) != _MAGIC:
            raise DomainError("not a checkpoint container (bad magic)")
        (hlen,) = struct.unpack("<Q", buf.read(8))
        header = json.loads(buf.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise DomainError(f"unsupported checkpoint version {header.get('format_version')}")
        (n_entries,) = struct.unpack("<Q", buf.read(8))
        arrays = {}
        for _ in range(n_entries):
            name, arr = _read_array(buf)
            arrays[name] = arr
        store = cls(dtype=np.dtype(header["dtype"]))
        for name in header["param_names"]:
            store.params[name] = arrays[name]
            store.adam_m[name] = arrays[f"optim.m.{name}"]
            store.adam_v[name] = arrays[f"optim.v.{name}"]
        store.step = int(arrays["optim.step"].item())
        store.lam = arrays["lagrange.lambda"]
        store.rho = float(arrays["lagrange.rho"].item())
        return store, header


def _write_array(buf, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<I", len(nb)))
    buf.write(nb)
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    ds = dt.str.encode("ascii")
    buf.write(struct.pack("<B", len(ds)))
    buf.write(ds)
    buf.write(struct.pack("<B", arr.ndim))
    for s in arr.shape:
        buf.write(struct.pack("<Q", s))
    buf.write(arr.astype(dt, copy=False).tobytes())


def _read_array(buf) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", buf.read(4))
    name = buf.read(nlen).decode("utf-8")
    (dlen,) = struct.unpack("<B", buf.read(1))
    dt = np.dtype(buf.read(dlen).decode("ascii"))
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf.read(count * dt.itemsize), dtype=dt).reshape(shape)
    return name, arr.copy()

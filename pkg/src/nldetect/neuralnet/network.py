"""Sequential networks and their binary serialisation.

Model file layout (all integers little-endian)::

    b"NLNN"                       4 bytes magic
    u32 version                   currently 1
    u32 n                         byte length of the header JSON
    n bytes                       UTF-8 JSON: {"networks": [...], "meta": {...}}
    u32 count                     number of parameter tensors
    count x tensor:
        u32 ndim, ndim x u32 dims, prod(dims) x f64 values (C order)
    u32 crc32                     zlib.crc32 of every preceding byte

Each entry of ``networks`` holds ``name``, ``input_shape``, ``dtype`` (the
compute precision; tensors are always stored as f64) and ``layers``
(layer specs as dicts with a ``type`` key). Tensors follow in network order,
layer order, then parameter name order (``W`` before ``b``).
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import (
    ChecksumError,
    ConfigError,
    ContractError,
    FileFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .layers import make_layer, spec_from_dict, spec_to_dict

MAGIC = b"NLNN"
VERSION = 1


class Network:
    """Ordered stack of layers built from specs for a fixed input shape."""

    def __init__(self, specs, input_shape, seed=0, name="net", dtype="float64"):
        self.name = name
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ConfigError(f"unsupported dtype {dtype!r}; use float32 or float64")
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        init_rng = np.random.default_rng(seed)
        self.layers = []
        shape = self.input_shape
        self.shapes = [shape]
        for i, spec in enumerate(self.specs):
            try:
                layer = make_layer(spec, shape, init_rng)
            except ConfigError as exc:
                raise ConfigError(f"{name} layer {i} ({type(spec).__name__}): {exc}") from None
            shape = layer.out_shape(shape)
            if min(shape) < 1:
                raise ConfigError(f"{name} layer {i} produces empty output {shape}")
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(self.dtype)
            self.layers.append(layer)
            self.shapes.append(shape)
        self.output_shape = shape
        # dropout stream, separate from initialisation
        self.rng = np.random.default_rng([int(seed), 1])
        self._ran_forward = False

    def __repr__(self):
        return f"Network({self.name!r}, {self.input_shape} -> {self.output_shape}, {self.n_params} params)"

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ContractError(f"{self.name} expects input (batch, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=self.rng)
        self._ran_forward = True
        return x

    __call__ = forward

    def backward(self, g, param_grads=True, from_logits=False):
        """Back-propagate ``g = dL/d(output)``; fills ``grads`` and returns ``dL/d(input)``.

        With ``param_grads=False`` only the input gradient is computed and the
        stored parameter gradients are reset to zero (used to pass gradients
        through a frozen network). With ``from_logits=True``, ``g`` is the
        gradient with respect to the last layer's pre-activation (see
        :attr:`logits`).
        """
        if not self._ran_forward:
            raise ContractError(f"{self.name}: backward called without a cached forward pass")
        g = np.asarray(g, dtype=self.dtype)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            g = self.layers[i].backward(g, param_grads, from_logits and i == last)
        return g

    @property
    def logits(self):
        """Pre-activation of the last layer from the most recent forward pass."""
        cache = getattr(self.layers[-1], "_cache", None)
        if not self._ran_forward or cache is None or not hasattr(self.layers[-1].spec, "activation"):
            raise ContractError(f"{self.name}: no cached pre-activation of an activated output layer")
        return cache[-2]

    def param_items(self):
        for i, layer in enumerate(self.layers):
            for key in sorted(layer.params):
                yield (i, key), layer.params[key]

    def params(self):
        return [p for _, p in self.param_items()]

    def grads(self):
        out = []
        for layer in self.layers:
            for key in sorted(layer.params):
                out.append(layer.grads.get(key, np.zeros_like(layer.params[key])))
        return out

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params()))

    def get_flat(self):
        ps = self.params()
        return np.concatenate([p.ravel() for p in ps]) if ps else np.zeros(0, dtype=self.dtype)

    def set_flat(self, flat):
        flat = np.asarray(flat)
        if flat.size != self.n_params:
            raise ContractError(f"expected {self.n_params} values, got {flat.size}")
        i = 0
        for p in self.params():
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size

    def flat_grads(self):
        gs = self.grads()
        return np.concatenate([g.ravel() for g in gs]) if gs else np.zeros(0)

    def checksum(self):
        return hashlib.sha256(self.get_flat().tobytes()).hexdigest()

    def describe(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "dtype": self.dtype.name,
            "layers": [spec_to_dict(s) for s in self.specs],
        }

    @classmethod
    def from_description(cls, desc):
        return cls([spec_from_dict(d) for d in desc["layers"]], desc["input_shape"], name=desc["name"],
                   dtype=desc.get("dtype", "float64"))


def backward(network: Network, x, upstream, training=False):
    """Run a forward pass on ``x`` and back-propagate ``upstream``."""
    network.forward(x, training=training)
    return network.backward(upstream)


# --------------------------------------------------------------------------
# persistence


def save_networks(path, networks, meta=None):
    header = json.dumps(
        {"networks": [n.describe() for n in networks], "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    tensors = [p for n in networks for p in n.params()]
    parts.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def load_networks(path):
    """Return ``(networks, meta)`` from a model file."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FileFormatError(f"{path}: not a model file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"{path}: model format version {version}, expected {VERSION}")
    intact = len(data) >= 12 and struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
        count = r.u32()
        tensors = []
        for _ in range(count):
            ndim = r.u32()
            dims = r.u32(ndim) if ndim > 1 else ((r.u32(),) if ndim == 1 else ())
            n = int(np.prod(dims)) if dims else 1
            tensors.append(np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(float))
        end = r.pos
        (crc,) = struct.unpack("<I", r.take(4))
    except TruncatedFileError:
        if intact:
            raise FileFormatError(f"{path}: inconsistent tensor table") from None
        raise
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ChecksumError(f"{path}: corrupted content ({exc})") from None
    if crc != zlib.crc32(data[:end]):
        raise ChecksumError(f"{path}: checksum mismatch")
    if r.pos != len(data):
        raise FileFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    networks = [Network.from_description(d) for d in header["networks"]]
    it = iter(tensors)
    for net in networks:
        for p in net.params():
            t = next(it)
            if t.shape != p.shape:
                raise FileFormatError(f"{path}: tensor shape {t.shape} does not match layer {p.shape}")
            p[...] = t
    return networks, header.get("meta", {})

"""Binary model checkpoints with a bit-exact round trip.

Layout (all integers little-endian unsigned):
  magic     4 bytes  b"TVCK"
  version   u32      currently 1
  n_config  u32      number of config lines
  lines     n_config times: u32 byte length + UTF-8 "key=value"
  n_params  u32
  params    n_params times:
              u32 name byte length + UTF-8 name
              u32 ndim + ndim * u32 dims
              prod(dims) float64 values, little-endian, row-major
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError
from .models import build_model, config_from_strings

MAGIC = b"TVCK"
VERSION = 1


def save_checkpoint(path: str, config: dict[str, str], params: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(config)))
        for key in sorted(config):
            line = f"{key}={config[key]}".encode("utf-8")
            fh.write(struct.pack("<I", len(line)))
            fh.write(line)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f8")  # tobytes() emits row-major
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        (n_config,) = struct.unpack("<I", fh.read(4))
        config: dict[str, str] = {}
        for _ in range(n_config):
            (n,) = struct.unpack("<I", fh.read(4))
            key, _, value = fh.read(n).decode("utf-8").partition("=")
            config[key] = value
        (n_params,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (n,) = struct.unpack("<I", fh.read(4))
            name = fh.read(n).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            count = int(np.prod(dims)) if dims else 1
            params[name] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).copy()
    return config, params


def save_model(path: str, model) -> None:
    save_checkpoint(path, model.checkpoint_config(), {k: t.data for k, t in model.params.items()})


def load_model(path: str):
    config_strings, arrays = load_checkpoint(path)
    kind, config = config_from_strings(config_strings)
    model = build_model(kind, config, seed=0)
    have, want = set(arrays), set(model.params.tensors)
    if have != want:
        raise ConfigError(f"checkpoint parameters do not match model: missing {want - have}, extra {have - want}")
    for name, tensor in model.params.items():
        if tensor.data.shape != arrays[name].shape:
            raise ConfigError(f"parameter {name} has shape {arrays[name].shape}, expected {tensor.data.shape}")
        tensor.data = arrays[name]
    return model

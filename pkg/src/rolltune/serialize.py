"""Versioned binary container for parameters and optimizer state.

Layout (little-endian):
  magic    4s  = b"RTCK"
  version  u32 = 1
  count    u32 entries
then per entry:
  key_len  u16, key utf-8
  dtype    u8  (0 = f32, 1 = f64, 2 = i64)
  ndim     u8
  dims     u32 x ndim
  payload  raw row-major bytes

Checkpoints store network config under ``config/``, trainable tensors
under ``param/<group>/<name>``, running stats under ``stat/...`` and
optimizer state under ``optim/...``; round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataFormatError, ValidationError
from .model import NetworkConfig, NetworkParams, build_network

_MAGIC = b"RTCK"
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def write_container(path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(entries)))
        for key, arr in entries.items():
            arr = np.asarray(arr)
            code = _CODES.get(arr.dtype)
            if code is None:
                raise ValidationError(f"unsupported dtype {arr.dtype} for {key!r}")
            kb = key.encode()
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(f, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise DataFormatError(
            f"truncated container: expected {size} bytes for {what} "
            f"at offset {f.tell() - len(buf)}")
    return buf


def read_container(path) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != _MAGIC:
            raise DataFormatError(f"bad magic {magic!r} at offset 0")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != _VERSION:
            raise DataFormatError(
                f"unsupported container version {version} (expected {_VERSION})")
        for i in range(count):
            klen, = struct.unpack("<H", _read_exact(f, 2, f"key length {i}"))
            key = _read_exact(f, klen, f"key {i}").decode()
            code, ndim = struct.unpack("<BB", _read_exact(f, 2, f"entry header {key!r}"))
            if code not in _DTYPES:
                raise DataFormatError(f"unknown dtype code {code} for {key!r}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"dims of {key!r}"))
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            raw = _read_exact(f, nbytes, f"payload of {key!r}")
            entries[key] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return entries


# -- checkpoints ---------------------------------------------------------


def _config_entries(config: NetworkConfig) -> dict[str, np.ndarray]:
    return {
        "config/widths": np.asarray(config.widths, dtype=np.int64),
        "config/input_shape": np.asarray(config.input_shape, dtype=np.int64),
        "config/embedding_dim": np.asarray(config.embedding_dim, dtype=np.int64),
        "config/num_classes": np.asarray(config.num_classes, dtype=np.int64),
        "config/convs_per_block": np.asarray(config.convs_per_block, dtype=np.int64),
        "config/kernel_size": np.asarray(config.kernel_size, dtype=np.int64),
        "config/leaky_slope": np.asarray(config.leaky_slope, dtype=np.float64),
        "config/bn_momentum": np.asarray(config.bn_momentum, dtype=np.float64),
        "config/bn_epsilon": np.asarray(config.bn_epsilon, dtype=np.float64),
        "config/precision": np.asarray(
            0 if config.precision == "float32" else 1, dtype=np.int64),
    }


def _config_from_entries(e: dict[str, np.ndarray]) -> NetworkConfig:
    return NetworkConfig(
        widths=tuple(int(w) for w in e["config/widths"]),
        input_shape=tuple(int(d) for d in e["config/input_shape"]),
        embedding_dim=int(e["config/embedding_dim"]),
        num_classes=int(e["config/num_classes"]),
        convs_per_block=int(e["config/convs_per_block"]),
        kernel_size=int(e["config/kernel_size"]),
        leaky_slope=float(e["config/leaky_slope"]),
        bn_momentum=float(e["config/bn_momentum"]),
        bn_epsilon=float(e["config/bn_epsilon"]),
        precision="float32" if int(e["config/precision"]) == 0 else "float64",
    )


def save_checkpoint(path, params: NetworkParams,
                    optimizer_state: dict[str, np.ndarray] | None = None) -> None:
    entries = _config_entries(params.config)
    for group in params.groups():
        for name, t in group.tensors.items():
            entries[f"param/{group.group_id}/{name}"] = t.data
        for name, arr in group.stats.items():
            entries[f"stat/{group.group_id}/{name}"] = arr
    if optimizer_state is not None:
        for key, arr in optimizer_state.items():
            entries[f"optim/{key}"] = arr
    write_container(path, entries)


def load_checkpoint(path) -> tuple[NetworkParams, dict[str, np.ndarray] | None]:
    entries = read_container(path)
    config = _config_from_entries(entries)
    params = build_network(config, seed=0)
    for group in params.groups():
        for name, t in group.tensors.items():
            key = f"param/{group.group_id}/{name}"
            if key not in entries:
                raise DataFormatError(f"checkpoint is missing {key!r}")
            if entries[key].shape != t.data.shape:
                raise DataFormatError(
                    f"checkpoint shape {entries[key].shape} for {key!r}, "
                    f"expected {t.data.shape}")
            np.copyto(t.data, entries[key])
        for name, arr in group.stats.items():
            np.copyto(arr, entries[f"stat/{group.group_id}/{name}"])
    optim = {k[len("optim/"):]: v for k, v in entries.items() if k.startswith("optim/")}
    return params, (optim or None)

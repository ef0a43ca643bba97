"""Named-tensor checkpoint files.

Layout (little-endian throughout):
  magic "LPRB" | version u32 | tensor count u32
  per tensor: name_len u16, name utf-8, rank u8, dims u32 each, raw f32 data
  trailing utf-8 key=value block (one pair per line), read to end of file

Writes go through a temp file plus rename, so readers never see a torn file.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Optional

import numpy as np

from ..errors import FormatError
from .config import BackboneConfig
from .model import BackboneModel

__all__ = ["MAGIC", "VERSION", "write_tensors", "read_tensors",
           "save_checkpoint", "load_checkpoint"]

MAGIC = b"LPRB"
VERSION = 1


def write_tensors(path: str, tensors: dict[str, np.ndarray],
                  config: Optional[dict] = None) -> None:
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(tensors)))
            for name, arr in tensors.items():
                arr = np.ascontiguousarray(arr, dtype=np.float32)
                nb = name.encode("utf-8")
                f.write(struct.pack("<H", len(nb)))
                f.write(nb)
                f.write(struct.pack("<B", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(arr.tobytes(order="C"))
            if config:
                lines = "".join(f"{k}={v}\n" for k, v in config.items())
                f.write(lines.encode("utf-8"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensors(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {VERSION}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        tensors[name] = data.copy()
    config: dict[str, str] = {}
    if off < len(blob):
        try:
            text = blob[off:].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: config block is not utf-8") from exc
        for line in text.splitlines():
            if not line.strip():
                continue
            if "=" not in line:
                raise FormatError(f"{path}: malformed config line {line!r}")
            k, v = line.split("=", 1)
            config[k.strip()] = v.strip()
    return tensors, config


def save_checkpoint(model: BackboneModel, path: str,
                    extra_tensors: Optional[dict[str, np.ndarray]] = None,
                    extra_config: Optional[dict] = None) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    if extra_tensors:
        tensors.update(extra_tensors)
    config = {f"config.{k}": v for k, v in model.config.to_dict().items()}
    config["seed"] = model.seed
    if extra_config:
        config.update(extra_config)
    write_tensors(path, tensors, config)


def load_checkpoint(path: str, mode: Optional[str] = None
                    ) -> tuple[BackboneModel, dict[str, np.ndarray], dict[str, str]]:
    """Rebuild a model; ``mode`` overrides the stored one (same param shapes).

    Returns (model, extra tensors such as optimizer state, extra config).
    """
    tensors, config = read_tensors(path)
    cfg_raw = {k[len("config."):]: v for k, v in config.items() if k.startswith("config.")}
    if mode is not None:
        cfg_raw["mode"] = mode
    cfg = BackboneConfig.from_dict(cfg_raw)
    model = BackboneModel(cfg, seed=int(config.get("seed", "0")))
    extra_t: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name in model.params:
            if model.params[name].data.shape != arr.shape:
                raise FormatError(f"{path}: tensor {name} has shape {arr.shape}, "
                                  f"expected {model.params[name].data.shape}")
            model.params[name].data = arr
        elif name.startswith(("opt.", "readout.")):
            extra_t[name] = arr
        else:
            raise FormatError(f"{path}: unknown tensor name {name!r}")
    extra_c = {k: v for k, v in config.items()
               if not k.startswith("config.") and k != "seed"}
    return model, extra_t, extra_c

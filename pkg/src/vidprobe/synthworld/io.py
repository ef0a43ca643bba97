"""Dataset directory format.

index.txt: utf-8 key=value lines (version, count, spec_hash, plus the
generation parameters the hash covers). sample_{i}.bin: little-endian
length-prefixed sections in fixed order

  header u32[5] (frames, height, width, n_tracks, n_boxes)
  video u8 rgb | depth f32 | tracks f32 positions + u8 (visible, in-scene)
  boxes f32 (4 coords + validity as 0/1) | pose f32[12] | labels u16[2]

followed by a u32 crc32 of everything before it.
"""

from __future__ import annotations

import hashlib
import os
import struct
import zlib
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..errors import FormatError
from .generate import SceneSample

__all__ = ["write_dataset", "read_dataset", "read_sample", "dataset_index",
           "spec_hash", "FORMAT_VERSION"]

FORMAT_VERSION = 1


def spec_hash(params: dict) -> str:
    canon = "".join(f"{k}={params[k]}\n" for k in sorted(params))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _pack_section(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def _sample_bytes(s: SceneSample) -> bytes:
    T, H, W, _ = s.video.shape
    K = s.tracks_xy.shape[1]
    B = s.boxes.shape[1]
    header = struct.pack("<5I", T, H, W, K, B)
    tracks = (s.tracks_xy.astype("<f4").tobytes()
              + s.tracks_vis.astype(np.uint8).tobytes()
              + s.tracks_in.astype(np.uint8).tobytes())
    boxes = np.concatenate([s.boxes, s.boxes_valid[..., None].astype(np.float32)],
                           axis=2).astype("<f4").tobytes()
    body = b"".join([
        _pack_section(header),
        _pack_section(s.video.tobytes()),
        _pack_section(s.depth.astype("<f4").tobytes()),
        _pack_section(tracks),
        _pack_section(boxes),
        _pack_section(s.pose.astype("<f4").tobytes()),
        _pack_section(struct.pack("<2H", s.class_label, s.action_label)),
    ])
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _parse_sample(blob: bytes, name: str) -> SceneSample:
    if len(blob) < 4:
        raise FormatError(f"{name}: truncated sample file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"{name}: checksum mismatch, sample is corrupt")
    off = 0
    sections = []
    while off < len(body):
        if off + 4 > len(body):
            raise FormatError(f"{name}: truncated section header")
        (n,) = struct.unpack("<I", body[off:off + 4])
        off += 4
        if off + n > len(body):
            raise FormatError(f"{name}: truncated section payload")
        sections.append(body[off:off + n])
        off += n
    if len(sections) != 7:
        raise FormatError(f"{name}: expected 7 sections, found {len(sections)}")
    T, H, W, K, B = struct.unpack("<5I", sections[0])
    video = np.frombuffer(sections[1], dtype=np.uint8).reshape(T, H, W, 3).copy()
    depth = np.frombuffer(sections[2], dtype="<f4").reshape(T, H, W).copy()
    n_pos = T * K * 2 * 4
    tracks_xy = np.frombuffer(sections[3][:n_pos], dtype="<f4").reshape(T, K, 2).copy()
    flags = np.frombuffer(sections[3][n_pos:], dtype=np.uint8)
    tracks_vis = flags[:T * K].reshape(T, K).astype(bool)
    tracks_in = flags[T * K:].reshape(T, K).astype(bool)
    boxes5 = np.frombuffer(sections[4], dtype="<f4").reshape(T, B, 5)
    pose = np.frombuffer(sections[5], dtype="<f4").reshape(3, 4).copy()
    cls, act = struct.unpack("<2H", sections[6])
    return SceneSample(video=video, depth=depth, tracks_xy=tracks_xy,
                       tracks_vis=tracks_vis, tracks_in=tracks_in,
                       boxes=boxes5[:, :, :4].copy(),
                       boxes_valid=boxes5[:, :, 4] > 0.5,
                       pose=pose, class_label=cls, action_label=act)


def write_dataset(samples: Iterable[SceneSample], out_dir: str, params: dict) -> str:
    """Write samples plus an index; returns the dataset's spec hash."""
    os.makedirs(out_dir, exist_ok=True)
    count = 0
    for i, sample in enumerate(samples):
        with open(os.path.join(out_dir, f"sample_{i}.bin"), "wb") as f:
            f.write(_sample_bytes(sample))
        count += 1
    h = spec_hash(params)
    with open(os.path.join(out_dir, "index.txt"), "w", encoding="utf-8") as f:
        f.write(f"version={FORMAT_VERSION}\n")
        f.write(f"count={count}\n")
        f.write(f"spec_hash={h}\n")
        for k in sorted(params):
            f.write(f"param.{k}={params[k]}\n")
    return h


def dataset_index(dir_path: str) -> dict:
    path = os.path.join(dir_path, "index.txt")
    if not os.path.exists(path):
        raise FormatError(f"{dir_path}: missing index.txt")
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}: malformed line {line!r}")
            k, v = line.split("=", 1)
            out[k] = v
    if out.get("version") != str(FORMAT_VERSION):
        raise FormatError(f"{dir_path}: dataset version {out.get('version')!r}, "
                          f"expected {FORMAT_VERSION}")
    return out


def read_sample(dir_path: str, i: int) -> SceneSample:
    name = os.path.join(dir_path, f"sample_{i}.bin")
    try:
        with open(name, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise FormatError(f"{name}: {exc}") from exc
    return _parse_sample(blob, name)


def read_dataset(dir_path: str) -> list[SceneSample]:
    index = dataset_index(dir_path)
    return [read_sample(dir_path, i) for i in range(int(index["count"]))]

"""Time-indexed binary archive of trained fields.

Single append-only file with random access by time index:

    [0]   magic   8 bytes  b"CHRONOF1"
    [8]   version u32
    [12]  count   u32      number of archived timesteps
    [16]  index   u64      file offset of the index (0 while empty)
    [24]  metalen u32
    [28]  metadata        canonical JSON: half_extent, scene_scale,
                          field config, config digest
    ...   records         time u32 | payload_bytes u64 | crc32 u32 | payload
    ...   index           count * (time u32 | record_offset u64)

Payloads are the field parameters as little-endian float32 in canonical
layout order. Appending writes the new record over the stale index region,
writes a fresh index after it, then atomically publishes both by rewriting
the header's count and index offset: readers never observe a partial index.

Reads use an unbuffered handle and touch only the header, the index, and the
requested record.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import threading
import zlib
from pathlib import Path

import numpy as np

from .encoding import GridConfig
from .errors import DataError
from .field import FieldConfig, TimestepField, parameter_count, theta_layout

MAGIC = b"CHRONOF1"
VERSION = 1
_HEADER = struct.Struct("<8sIIQI")          # magic, version, count, index_offset, metalen
_RECORD_HEADER = struct.Struct("<IQI")      # time, payload_bytes, crc32
_INDEX_ENTRY = struct.Struct("<IQ")         # time, record_offset


def config_to_dict(config: FieldConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(d: dict) -> FieldConfig:
    grid = GridConfig(**d["grid"])
    rest = {k: v for k, v in d.items() if k != "grid"}
    return FieldConfig(grid=grid, **rest)


def config_digest(config: FieldConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Archive:
    """Random-access container of TimestepField records (single writer)."""

    def __init__(self, path, handle, meta: dict, count: int, index_offset: int,
                 writable: bool):
        self.path = Path(path)
        self._fh = handle
        self._meta = meta
        self._count = count
        self._index_offset = index_offset
        self._writable = writable
        self._index: dict[int, int] = {}
        self._lock = threading.Lock()
        self._config = config_from_dict(meta["field_config"])
        self._payload_bytes = parameter_count(self._config) * 4
        self._load_index()

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, path, config: FieldConfig, scene_scale: float = 1.0) -> "Archive":
        meta = {
            "half_extent": config.grid.half_extent,
            "scene_scale": scene_scale,
            "field_config": config_to_dict(config),
            "config_digest": config_digest(config),
        }
        blob = json.dumps(meta, sort_keys=True).encode()
        fh = open(path, "w+b", buffering=0)
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, 0, len(blob)))
        fh.write(blob)
        fh.flush()
        return cls(path, fh, meta, 0, 0, writable=True)

    @classmethod
    def open(cls, path, mode: str = "r") -> "Archive":
        if mode not in ("r", "a"):
            raise ValueError(f"mode must be 'r' or 'a', got {mode!r}")
        fh = open(path, "r+b" if mode == "a" else "rb", buffering=0)
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            fh.close()
            raise DataError(f"{path}: truncated archive header")
        magic, version, count, index_offset, metalen = _HEADER.unpack(head)
        if magic != MAGIC:
            fh.close()
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            fh.close()
            raise DataError(f"{path}: unsupported version {version}")
        meta = json.loads(fh.read(metalen).decode())
        return cls(path, fh, meta, count, index_offset, writable=(mode == "a"))

    def _load_index(self):
        self._index.clear()
        if self._count == 0:
            return
        self._fh.seek(self._index_offset)
        raw = self._fh.read(_INDEX_ENTRY.size * self._count)
        for i in range(self._count):
            t, off = _INDEX_ENTRY.unpack_from(raw, i * _INDEX_ENTRY.size)
            self._index[t] = off

    # -- metadata ----------------------------------------------------------

    @property
    def config(self) -> FieldConfig:
        return self._config

    @property
    def scene_scale(self) -> float:
        return self._meta["scene_scale"]

    def timesteps(self) -> list[int]:
        return sorted(self._index)

    def __contains__(self, t: int) -> bool:
        return int(t) in self._index

    def __len__(self) -> int:
        return len(self._index)

    # -- writing -----------------------------------------------------------

    def append_timestep(self, field: TimestepField) -> None:
        """Append one trained field; durable once the call returns."""
        if not self._writable:
            raise DataError(f"{self.path}: archive opened read-only")
        if field.time_index in self._index:
            raise DataError(f"timestep {field.time_index} already archived")
        if config_digest(field.config) != self._meta["config_digest"]:
            raise DataError("field config does not match the archive's config")
        if field.dtype != np.float32:
            raise DataError("archives store float32 parameters; cast the field first")

        payload = b"".join(np.ascontiguousarray(field.theta[name]).astype("<f4").tobytes()
                           for name, _, _ in theta_layout(field.config))
        assert len(payload) == self._payload_bytes
        crc = zlib.crc32(payload) & 0xFFFFFFFF

        with self._lock:
            record_offset = self._index_offset if self._count else self._end_of_records()
            self._fh.seek(record_offset)
            self._fh.write(_RECORD_HEADER.pack(field.time_index, len(payload), crc))
            self._fh.write(payload)
            new_index = dict(self._index)
            new_index[field.time_index] = record_offset
            index_offset = self._fh.tell()
            for t in sorted(new_index):
                self._fh.write(_INDEX_ENTRY.pack(t, new_index[t]))
            self._fh.flush()
            os.fsync(self._fh.fileno())
            # commit point: header now references the new index
            self._fh.seek(0)
            self._fh.write(_HEADER.pack(MAGIC, VERSION, len(new_index), index_offset,
                                        len(json.dumps(self._meta, sort_keys=True).encode())))
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._index = new_index
            self._count = len(new_index)
            self._index_offset = index_offset

    def _end_of_records(self) -> int:
        meta_len = len(json.dumps(self._meta, sort_keys=True).encode())
        return _HEADER.size + meta_len

    # -- reading -----------------------------------------------------------

    def read_timestep(self, t: int) -> TimestepField:
        """Bitwise-exact reconstruction of an archived field."""
        t = int(t)
        if t not in self._index:
            raise DataError(f"timestep {t} not in archive (have {self.timesteps()})")
        with self._lock:
            self._fh.seek(self._index[t])
            rt, nbytes, crc = _RECORD_HEADER.unpack(self._fh.read(_RECORD_HEADER.size))
            payload = self._fh.read(nbytes)
        if rt != t or len(payload) != nbytes:
            raise DataError(f"timestep {t}: corrupt record header")
        if (zlib.crc32(payload) & 0xFFFFFFFF) != crc:
            raise DataError(f"timestep {t}: checksum mismatch")
        theta: dict[str, np.ndarray] = {}
        off = 0
        for name, shape, _ in theta_layout(self._config):
            size = int(np.prod(shape)) * 4
            arr = np.frombuffer(payload[off:off + size], dtype="<f4").reshape(shape)
            theta[name] = arr.astype(np.float32, copy=True)
            off += size
        return TimestepField(t, theta, self._config, self.scene_scale)

    # -- reporting ---------------------------------------------------------

    def info(self) -> dict:
        """Machine-readable summary (also what the CLI and service emit)."""
        n = parameter_count(self._config)
        return {
            "path": str(self.path),
            "version": VERSION,
            "timesteps": self.timesteps(),
            "timestep_count": len(self._index),
            "parameter_count": n,
            "payload_bytes_per_timestep": n * 4,
            "record_bytes_per_timestep": n * 4 + _RECORD_HEADER.size,
            "total_bytes": self.path.stat().st_size,
            "half_extent": self._meta["half_extent"],
            "scene_scale": self.scene_scale,
            "config_digest": self._meta["config_digest"],
            "field_config": self._meta["field_config"],
        }

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def archive_info(path) -> dict:
    with Archive.open(path) as a:
        return a.info()


def format_info(info: dict) -> str:
    """Human-readable rendering of archive_info output."""
    lines = [
        f"archive        {info['path']}",
        f"timesteps      {info['timestep_count']}  {info['timesteps']}",
        f"parameters     {info['parameter_count']:,} per timestep",
        f"record size    {info['record_bytes_per_timestep']:,} bytes "
        f"({info['payload_bytes_per_timestep'] / 1e6:.1f} MB payload)",
        f"total size     {info['total_bytes']:,} bytes",
        f"config digest  {info['config_digest']}",
        f"scene scale    {info['scene_scale']}",
        f"half extent    {info['half_extent']}",
    ]
    return "\n".join(lines)

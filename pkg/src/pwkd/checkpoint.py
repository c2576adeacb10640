"""Versioned little-endian binary checkpoints.

Layout::

    b"PWKDCKPT"  u32 version  u32 meta_len  meta (UTF-8 JSON, sorted keys)
    u32 count    count x entry

    entry: u32 name_len, name (UTF-8), u8 dtype code, u8 rank,
           rank x u32 dims, payload (little-endian, C order)

Entries hold every parameter, every per-width BN running statistic and the
optimizer velocity buffers (prefixed ``velocity/``). Writing is a pure
function of the network state, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointError
from .slimmable import ArchSpec, SlimmableNet

MAGIC = b"PWKDCKPT"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODE_FOR = {np.dtype("float32"): 1, np.dtype("float64"): 2}
VELOCITY_PREFIX = "velocity/"


def _encode_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, net: SlimmableNet, meta: Optional[dict] = None, velocity: Optional[Dict[str, np.ndarray]] = None) -> Path:
    path = Path(path)
    merged = dict(getattr(net, "meta", {}) or {})
    merged.update(meta or {})
    merged["arch"] = net.spec.to_dict()
    merged["width_list"] = list(net.width_list)
    merged["kind"] = "plain" if net.width_list == (1.0,) else "slimmable"
    merged["dtype"] = net.dtype.name
    velocity = velocity if velocity is not None else getattr(net, "velocity", {}) or {}

    entries = list(net.state_dict().items())
    entries += [(VELOCITY_PREFIX + k, v) for k, v in sorted(velocity.items())]
    seen = set()
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta_bytes = _encode_meta(merged)
    chunks += [struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(entries))]
    for name, arr in entries:
        if name in seen:
            raise CheckpointError(path, f"name collision on entry {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        code = CODE_FOR.get(arr.dtype)
        if code is None:
            raise CheckpointError(path, f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)) + raw_name + struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, path: Path, raw: bytes):
        self.path, self.raw, self.pos = path, raw, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(self.path, f"truncated while reading {what}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path):
    """Return ``(meta, entries)`` without building a network."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(path, f"cannot read: {exc.strerror or exc}") from exc
    r = _Reader(path, raw)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(path, "not a pwkd checkpoint (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(path, f"format version {version} unsupported (expected {VERSION})")
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(path, f"corrupt metadata block: {exc}") from exc
    (count,) = r.unpack("<I", "entry count")
    entries: Dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = r.unpack("<I", f"entry {i} name length")
        try:
            name = r.take(nlen, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(path, f"entry {i}: name is not UTF-8") from exc
        code, rank = r.unpack("<BB", f"entry {name!r} header")
        if code not in DTYPE_CODES:
            raise CheckpointError(path, f"entry {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I", f"entry {name!r} dims")
        dt = DTYPE_CODES[code]
        payload = r.take(int(np.prod(dims, dtype=np.int64)) * dt.itemsize, f"entry {name!r} payload")
        if name in entries:
            raise CheckpointError(path, f"name collision on entry {name!r}")
        entries[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if r.pos != len(raw):
        raise CheckpointError(path, f"{len(raw) - r.pos} trailing bytes after last entry")
    return meta, entries


def load_checkpoint(path) -> SlimmableNet:
    """Rebuild the network; metadata and velocity land on ``net.meta`` / ``net.velocity``."""
    meta, entries = read_checkpoint(path)
    try:
        spec = ArchSpec.from_dict(meta["arch"])
        net = SlimmableNet(spec, meta["width_list"], np.dtype(meta.get("dtype", "float32")))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(path, f"metadata lacks architecture information ({exc})") from exc
    state = {k: v for k, v in entries.items() if not k.startswith(VELOCITY_PREFIX)}
    try:
        net.load_state_dict(state)
    except Exception as exc:
        raise CheckpointError(path, str(exc)) from exc
    net.meta = {k: v for k, v in meta.items() if k not in ("arch", "width_list", "kind", "dtype")}
    net.velocity = {k[len(VELOCITY_PREFIX):]: v for k, v in entries.items() if k.startswith(VELOCITY_PREFIX)}
    return net

"""Binary checkpoint format ("XDCM").

Layout: 4-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, float32 little-endian payload.  The header carries the tensor
manifest (name, shape, offset in floats), a config snapshot, the seed, the
phase tag, and the producing config hash.  Compute stays in float64; the
round-trip contract is exact at float32 precision.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .numerics import Tensor

MAGIC = b"XDCM"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    params: dict[str, Tensor],
    config: dict,
    seed: int,
    phase: str,
):
    manifest = []
    offset = 0
    for name in sorted(params):
        t = params[name]
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset, "numel": int(t.size)})
        offset += int(t.size)
    header = {
        "format_version": VERSION,
        "phase": phase,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "tensors": manifest,
        "payload_floats": offset,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([params[m["name"]].data.reshape(-1) for m in manifest]) if manifest else np.zeros(0)
    with Path(path).open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(blob)))
        f.write(blob)
        f.write(payload.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read header and tensors; a truncated or mangled file fails whole."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an XDCM checkpoint")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    expected = 16 + hlen + 4 * header["payload_floats"]
    if len(raw) != expected:
        raise CheckpointError(f"{path}: payload size mismatch (expected {expected} bytes, file has {len(raw)})")
    payload = np.frombuffer(raw[16 + hlen :], dtype="<f4").astype(np.float64)
    tensors = {}
    for m in header["tensors"]:
        start = m["offset"]
        tensors[m["name"]] = payload[start : start + m["numel"]].reshape(m["shape"])
    return header, tensors


def load_into(params: dict[str, Tensor], path: str | Path, subset_prefix: str = "") -> dict:
    """Copy checkpoint tensors into live parameters, name and shape checked.

    Mismatched shapes (or names present on one side only) abort with an
    explicit diff so artifacts from different configs never silently mix.
    """
    header, tensors = load_checkpoint(path)
    if subset_prefix:
        tensors = {k: v for k, v in tensors.items() if k.startswith(subset_prefix)}
    target = {k: v for k, v in params.items() if not subset_prefix or k.startswith(subset_prefix)}
    diffs = []
    for name in sorted(set(target) | set(tensors)):
        if name not in tensors:
            diffs.append(f"missing from checkpoint: {name} {list(target[name].shape)}")
        elif name not in target:
            diffs.append(f"unexpected in checkpoint: {name} {list(tensors[name].shape)}")
        elif tuple(tensors[name].shape) != target[name].shape:
            diffs.append(f"shape mismatch: {name} {list(tensors[name].shape)} vs {list(target[name].shape)}")
    if diffs:
        raise CheckpointError(f"{path}: checkpoint does not match model:\n  " + "\n  ".join(diffs))
    for name, arr in tensors.items():
        params[name].data = arr.copy()
    return header

"""On-disk formats.

Feature matrix (``*.fm``)
    4-byte magic ``WSFM``, little-endian uint32 ``T``, uint32 ``F``, then
    ``T*F`` little-endian float32 values in row-major order.

Ground truth (``truth.txt``)
    Run-length encoded frame labels, one ``<speaker_id> <num_frames>`` per line.

Manifest (``manifest.tsv``)
    ``<recording_id>\\t<weak_label>\\t<split>\\t<relative_dir>`` per recording.

Checkpoint (``*.ckpt``)
    8-byte magic ``WSPKCKPT``, uint32 version, uint32 metadata length, UTF-8
    JSON metadata, uint32 block count, then per block: uint16 name length,
    name, uint32 ndim, ndim x uint32 dims, float64 little-endian payload.

RTTM
    ``SPEAKER <rec> 1 <tbeg> <tdur> <NA> <NA> <label> <NA> <NA>`` with times in
    seconds rounded to two decimals.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import UnsupportedFormatError

FEATURE_MAGIC = b"WSFM"
CHECKPOINT_MAGIC = b"WSPKCKPT"
CHECKPOINT_VERSION = 1


def write_bytes_if_changed(path, data: bytes):
    """Atomic write; leaves the file (and its mtime) alone when content matches."""
    path = Path(path)
    if path.exists() and path.read_bytes() == data:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_text(path, text: str):
    write_bytes_if_changed(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    write_text(path, dump_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# -- feature matrices ---------------------------------------------------------

def encode_features(features) -> bytes:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    T, F = arr.shape
    return FEATURE_MAGIC + struct.pack("<II", T, F) + arr.tobytes()


def write_features(path, features):
    write_bytes_if_changed(path, encode_features(features))


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise UnsupportedFormatError("magic", f"{path} is not a feature matrix file")
    T, F = struct.unpack("<II", data[4:12])
    arr = np.frombuffer(data, dtype="<f4", count=T * F, offset=12)
    return arr.reshape(T, F).astype(np.float64)


# -- ground truth -------------------------------------------------------------

def encode_truth(labels) -> str:
    labels = np.asarray(labels)
    lines = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            lines.append(f"{int(labels[start])} {t - start}")
            start = t
    return "\n".join(lines) + "\n"


def read_truth(path) -> np.ndarray:
    parts = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            spk, n = line.split()
            parts.append(np.full(int(n), int(spk), dtype=np.int64))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


# -- checkpoints --------------------------------------------------------------

def encode_checkpoint(params: dict, metadata: dict) -> bytes:
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta]
    out.append(struct.pack("<I", len(params)))
    for name, value in params.items():
        arr = np.array(value, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_checkpoint(data: bytes):
    if data[:8] != CHECKPOINT_MAGIC:
        raise UnsupportedFormatError("magic", "not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedFormatError("version", f"checkpoint version {version}")
    pos = 16
    metadata = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_blocks,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(n_blocks):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return params, metadata


def write_checkpoint(path, params, metadata):
    write_bytes_if_changed(path, encode_checkpoint(params, metadata))


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


# -- RTTM ---------------------------------------------------------------------

def rttm_lines(recording_id, clustering, frame_shift=0.01):
    rows = []
    for label, chunks in clustering.clusters.items():
        for ch in chunks:
            rows.append((ch.start, ch.end, label))
    rows.sort()
    return [
        f"SPEAKER {recording_id} 1 {start * frame_shift:.2f} {(end - start) * frame_shift:.2f} "
        f"<NA> <NA> {label} <NA> <NA>"
        for start, end, label in rows
    ]


def parse_rttm(lines):
    """Yields ``(recording, start_s, dur_s, label)``."""
    for line in lines:
        toks = line.split()
        if not toks or toks[0] != "SPEAKER":
            continue
        yield toks[1], float(toks[3]), float(toks[4]), toks[7]

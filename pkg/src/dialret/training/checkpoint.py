"""Binary checkpoints: magic, length-prefixed JSON manifest, little-endian f32 blob.

Layout::

    b"DCLZ0001" | u64 LE manifest length | manifest (UTF-8 JSON) | blob

The manifest holds ``format_version``, the model config, the completed
stages, ``blob_bytes`` and one ``[name, shape, offset]`` entry per parameter
(offsets in bytes from the start of the blob).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..model import DialogRetriever, ModelConfig

MAGIC = b"DCLZ0001"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CorruptManifestError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedBlobError(CheckpointError):
    pass


def save_checkpoint(model: DialogRetriever, path: str | Path) -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        entries.append([name, list(p.shape), offset])
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "completed_stages": list(model.completed_stages),
        "params": entries,
        "blob_bytes": offset,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)
    return path


def read_manifest(raw: bytes) -> tuple[dict, int]:
    """Parse the header; returns the manifest and the blob's start offset."""
    if len(raw) < len(MAGIC) + _LEN.size or raw[: len(MAGIC)] != MAGIC:
        if raw[:4] == MAGIC[:4] and len(raw) >= len(MAGIC):
            raise VersionMismatchError(f"unsupported checkpoint format {raw[:len(MAGIC)]!r}")
        raise CorruptManifestError("not a checkpoint file (bad magic)")
    (n,) = _LEN.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + n > len(raw):
        raise TruncatedBlobError(f"file ends inside the {n}-byte manifest")
    try:
        manifest = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptManifestError(f"manifest is not valid JSON: {e}") from None
    if not isinstance(manifest, dict):
        raise CorruptManifestError("manifest must be a JSON object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format_version {version!r}, this build reads {FORMAT_VERSION}")
    for key in ("config", "params", "blob_bytes"):
        if key not in manifest:
            raise CorruptManifestError(f"manifest missing {key!r}")
    return manifest, start + n


def load_checkpoint(path: str | Path) -> DialogRetriever:
    """Rebuild the model from the stored config and fill in every parameter.

    Nothing is returned unless the whole file checks out.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e.strerror}") from None
    manifest, blob_start = read_manifest(raw)
    blob = raw[blob_start:]
    if len(blob) < manifest["blob_bytes"]:
        raise TruncatedBlobError(f"blob has {len(blob)} bytes, manifest declares {manifest['blob_bytes']}")
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
        state = {}
        for name, shape, offset in manifest["params"]:
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + 4 * count
            if end > len(blob):
                raise TruncatedBlobError(f"{name}: bytes [{offset}, {end}) beyond blob of {len(blob)}")
            state[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)
    except (TypeError, ValueError, KeyError) as e:
        raise CorruptManifestError(f"malformed manifest entry: {e}") from None
    try:
        model = DialogRetriever(cfg)
        model.load_state_dict(state)
    except Exception as e:
        raise CorruptManifestError(str(e)) from None
    model.completed_stages = list(manifest.get("completed_stages", []))
    for _, p in model.named_parameters():
        p.requires_grad = False
    return model

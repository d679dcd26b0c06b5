"""Self-describing on-disk container: ``manifest.json`` plus raw float32 blocks.

Datasets and model checkpoints share this layout.  Every tensor block is a
flat little-endian float32 file whose shape is recorded in the manifest.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
DTYPE = "f32le"
MANIFEST = "manifest.json"


class ContainerError(Exception):
    """Base class for container read/write failures."""


class MissingManifestError(ContainerError):
    pass


class FormatVersionError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    """A block's byte count disagrees with the shape declared in the manifest."""


def write_container(path, manifest: dict, blocks: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        fname = f"{name}.f32"
        arr.tofile(path / fname)
        entries[name] = {"file": fname, "shape": list(arr.shape)}
    doc = {"format_version": FORMAT_VERSION, "dtype": DTYPE, **manifest, "blocks": entries}
    tmp = path / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
    os.replace(tmp, path / MANIFEST)


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.is_file():
        raise MissingManifestError(f"no {MANIFEST} in {path}")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"unreadable manifest {mpath}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    if doc.get("dtype") != DTYPE:
        raise ContainerError(f"unsupported dtype {doc.get('dtype')!r}")
    return doc


def read_block(path, manifest: dict, name: str) -> np.ndarray:
    try:
        entry = manifest["blocks"][name]
    except KeyError:
        raise ContainerError(f"manifest has no block {name!r}") from None
    shape = tuple(int(s) for s in entry["shape"])
    fpath = Path(path) / entry["file"]
    if not fpath.is_file():
        raise ShapeMismatchError(f"block file {fpath} is missing")
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    actual = fpath.stat().st_size
    if actual != expected:
        raise ShapeMismatchError(
            f"block {name!r}: shape {shape} needs {expected} bytes, file holds {actual}"
        )
    return np.fromfile(fpath, dtype="<f4").astype(np.float32).reshape(shape)

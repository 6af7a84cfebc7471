"""Self-describing array containers: a directory with ``manifest.json`` and raw files.

Every array is stored as one little-endian, row-major binary file whose
element type is ``f64`` (float64) or ``c128`` (complex128, real/imaginary
pairs).  The manifest records shapes and types; readers never infer shapes
from file sizes, and a size mismatch is an error naming the array.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

__all__ = ["SCHEMA_VERSION", "ContainerError", "write_container", "read_container",
           "read_manifest"]

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
_DTYPES = {"f64": np.dtype("<f8"), "c128": np.dtype("<c16")}


class ContainerError(ValueError):
    """Malformed or inconsistent container."""


def _kind(arr: np.ndarray) -> str:
    if np.iscomplexobj(arr):
        return "c128"
    if arr.dtype == bool or np.issubdtype(arr.dtype, np.number):
        return "f64"
    raise ContainerError(f"unsupported array dtype {arr.dtype}")


def write_container(path, arrays: dict, meta: dict | None = None) -> Path:
    """Write ``arrays`` (name -> ndarray) and JSON-serializable ``meta``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        kind = _kind(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
        fname = f"{name}.bin"
        with open(path / fname, "wb") as fh:
            fh.write(data.tobytes(order="C"))
        entries[name] = {"file": fname, "shape": list(arr.shape), "dtype": kind}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "byte_order": "little",
        "layout": "row-major",
        "arrays": entries,
        "meta": meta or {},
    }
    tmp = path / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, path / MANIFEST)
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise ContainerError(f"no {MANIFEST} in {path}") from exc
    except json.JSONDecodeError as exc:
        raise ContainerError(f"corrupt {MANIFEST} in {path}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ContainerError(f"unsupported schema version {manifest.get('schema_version')!r}")
    if manifest.get("byte_order") != "little" or manifest.get("layout") != "row-major":
        raise ContainerError("only little-endian row-major containers are supported")
    return manifest


def read_container(path, names=None) -> tuple[dict, dict]:
    """Read arrays (all, or ``names``) and the metadata dictionary."""
    path = Path(path)
    manifest = read_manifest(path)
    entries = manifest.get("arrays", {})
    if names is None:
        names = list(entries)
    out = {}
    for name in names:
        if name not in entries:
            raise ContainerError(f"array {name!r} not in container {path}")
        entry = entries[name]
        kind = entry.get("dtype")
        if kind not in _DTYPES:
            raise ContainerError(f"array {name!r}: unknown element type {kind!r}")
        shape = tuple(int(v) for v in entry.get("shape", ()))
        if any(v < 0 for v in shape):
            raise ContainerError(f"array {name!r}: negative dimension in shape {shape}")
        dtype = _DTYPES[kind]
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        fpath = path / entry["file"]
        try:
            size = fpath.stat().st_size
        except FileNotFoundError as exc:
            raise ContainerError(f"array {name!r}: missing file {fpath.name}") from exc
        if size != expected:
            raise ContainerError(
                f"array {name!r}: manifest shape {list(shape)} needs {expected} bytes "
                f"but {fpath.name} has {size}")
        out[name] = np.fromfile(fpath, dtype=dtype).reshape(shape)
    return out, manifest.get("meta", {})

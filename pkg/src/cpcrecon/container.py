"""Directory container: ``manifest.json`` plus one raw array file per name.

Arrays are little-endian, row-major. Complex arrays are stored with real and
imaginary parts interleaved. The default precision is single (``complex64``
/ ``float32``); ``complex128`` / ``float64`` are accepted for exact round
trips. Every manifest carries ``format`` and ``version`` keys and readers
reject versions they do not know.
"""
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ContainerError

VERSION = 1
_DTYPES = {
    "complex64": ("<f4", True),
    "complex128": ("<f8", True),
    "float32": ("<f4", False),
    "float64": ("<f8", False),
}


def _store_dtype(arr, precision):
    cplx = np.iscomplexobj(arr)
    if precision == "single":
        return "complex64" if cplx else "float32"
    if precision == "double":
        return "complex128" if cplx else "float64"
    raise ContainerError(f"unknown precision {precision!r}")


def write_array(path, arr, precision="single"):
    """Write one array; returns its manifest entry."""
    arr = np.asarray(arr)
    dtype = _store_dtype(arr, precision)
    base, cplx = _DTYPES[dtype]
    if cplx:
        raw = np.empty(arr.shape + (2,), dtype=base)
        raw[..., 0] = arr.real
        raw[..., 1] = arr.imag
    else:
        raw = np.ascontiguousarray(arr, dtype=base)
    Path(path).write_bytes(raw.tobytes(order="C"))
    return {"file": Path(path).name, "dtype": dtype, "shape": list(arr.shape)}


def read_array(directory, entry):
    dtype = entry.get("dtype")
    if dtype not in _DTYPES:
        raise ContainerError(f"unsupported array dtype {dtype!r}")
    base, cplx = _DTYPES[dtype]
    shape = tuple(entry["shape"])
    path = Path(directory) / entry["file"]
    raw = np.frombuffer(path.read_bytes(), dtype=base)
    expected = int(np.prod(shape)) * (2 if cplx else 1)
    if raw.size != expected:
        raise ContainerError(f"{path.name}: expected {expected} values, found {raw.size}")
    if cplx:
        raw = raw.reshape(shape + (2,))
        out = np.empty(shape, dtype=np.complex64 if base == "<f4" else np.complex128)
        out.real = raw[..., 0]
        out.imag = raw[..., 1]
        return out
    return raw.reshape(shape).copy()


@contextmanager
def atomic_dir(directory):
    """Yield a sibling temporary directory that replaces ``directory`` on success.

    On any error the temporary directory is removed and ``directory`` is left
    untouched, so a failed run never leaves half-written output behind.
    """
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        yield tmp
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def write_container(directory, kind, manifest, arrays, precision="single", extra_files=None,
                    atomic=True):
    """Write a container directory, atomically unless ``atomic=False``.

    ``precision`` is ``"single"``, ``"double"`` or a per-array dict.
    """
    if atomic:
        with atomic_dir(directory) as tmp:
            write_container(tmp, kind, manifest, arrays, precision, extra_files, atomic=False)
        return Path(directory)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        prec = precision[name] if isinstance(precision, dict) else precision
        entries[name] = write_array(directory / f"{name}.bin", arr, prec)
    doc = {"format": kind, "version": VERSION, **manifest, "arrays": entries}
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    for fname, text in (extra_files or {}).items():
        (directory / fname).write_text(text)
    return directory


def read_manifest(directory, kind=None):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ContainerError(f"no manifest.json in {directory}")
    doc = json.loads(path.read_text())
    if doc.get("version") != VERSION:
        raise ContainerError(f"unsupported manifest version {doc.get('version')!r} in {directory}")
    if kind is not None and doc.get("format") != kind:
        raise ContainerError(f"{directory} holds {doc.get('format')!r}, expected {kind!r}")
    return doc


def read_container(directory, kind=None):
    """Return ``(manifest, {name: array})``."""
    doc = read_manifest(directory, kind)
    arrays = {name: read_array(directory, e) for name, e in doc.get("arrays", {}).items()}
    return doc, arrays

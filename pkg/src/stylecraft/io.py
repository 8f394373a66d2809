"""Tensor file format and bundle helpers.

One tensor per file: magic ``SCT1``, a JSON header line with name/dtype/shape,
then raw little-endian values. A directory of such files plus a
``manifest.json`` forms a bundle (datasets and checkpoints both use this).
"""

from __future__ import annotations

import json
import os

import numpy as np

MAGIC = b"SCT1"
_DTYPES = {"f32": "<f4", "f64": "<f8"}
_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class TensorFileError(RuntimeError):
    pass


def save_tensor(path, name, array):
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _NAMES:
        raise TensorFileError(f"unsupported dtype {arr.dtype} for {path}")
    header = json.dumps(
        {"name": name, "dtype": _NAMES[arr.dtype], "shape": list(arr.shape)},
        sort_keys=True,
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(arr.astype(_DTYPES[_NAMES[arr.dtype]], copy=False).tobytes())


def load_tensor(path):
    """Returns (name, array). Raises TensorFileError naming the file on corruption."""
    try:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != MAGIC:
                raise TensorFileError(f"{path}: bad magic {magic!r}")
            header_bytes = bytearray()
            while True:
                ch = f.read(1)
                if not ch:
                    raise TensorFileError(f"{path}: truncated header")
                if ch == b"\n":
                    break
                header_bytes.extend(ch)
            header = json.loads(header_bytes.decode("utf-8"))
            dtype = _DTYPES.get(header.get("dtype"))
            shape = tuple(header.get("shape", ()))
            if dtype is None:
                raise TensorFileError(f"{path}: unknown dtype {header.get('dtype')}")
            count = int(np.prod(shape)) if shape else 1
            raw = f.read()
            arr = np.frombuffer(raw, dtype=dtype)
            if arr.size != count:
                raise TensorFileError(
                    f"{path}: payload has {arr.size} values, header says {count}"
                )
            return header["name"], arr.reshape(shape).copy()
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TensorFileError(f"{path}: corrupt header ({exc})") from exc


def write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)

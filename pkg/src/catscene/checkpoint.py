"""Single-file checkpoint container with a byte-deterministic layout.

A checkpoint is an uncompressed zip archive holding one ``<name>.npy`` entry
per named parameter (standard NPY format, row-major float32) plus a
``meta.json`` entry with configs, step count, and seed. All entries carry a
fixed timestamp and are written in sorted name order, so saving the same
state twice produces byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)
_META_NAME = "meta.json"


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(params):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(params[name]))
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())
        meta_bytes = json.dumps(meta, sort_keys=True).encode()
        zf.writestr(zipfile.ZipInfo(_META_NAME, date_time=_EPOCH), meta_bytes)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    params: dict[str, np.ndarray] = {}
    meta: dict = {}
    with zipfile.ZipFile(path) as zf:
        for info in zf.infolist():
            if info.filename == _META_NAME:
                meta = json.loads(zf.read(info))
            elif info.filename.endswith(".npy"):
                params[info.filename[: -len(".npy")]] = np.lib.format.read_array(
                    io.BytesIO(zf.read(info))
                )
    return params, meta

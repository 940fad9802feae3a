"""On-disk formats: raw float64 trajectories with a text header, PGM snapshots.

A trajectory directory holds

``header.txt``
    ``key = value`` lines; values are JSON literals.
``states.f64``
    little-endian float64 records of length ``n_species * side**2``,
    species-major then row-major, one record per stored step.
``observations.f64``
    records of length ``n_wavelengths * side**2``, wavelength-major then
    row-major (one record per observation step; optional).

Files are written under a temporary name and renamed into place on close.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

F64 = np.dtype("<f8")
STATES = "states.f64"
OBSERVATIONS = "observations.f64"
HEADER = "header.txt"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_header(path, fields: dict) -> None:
    lines = [f"{k} = {json.dumps(v)}" for k, v in fields.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_header(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        out[key.strip()] = json.loads(value)
    return out


class RecordWriter:
    """Append fixed-length float64 records to a file; rename into place on close."""

    def __init__(self, path, record_len: int):
        self.path = Path(path)
        self.record_len = int(record_len)
        self.count = 0
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.", suffix=".tmp")
        self._fh = os.fdopen(fd, "wb")

    def write(self, record) -> None:
        a = np.ascontiguousarray(record, dtype=F64).reshape(-1)
        if a.size != self.record_len:
            raise ValueError(f"record length {a.size} != {self.record_len}")
        self._fh.write(a.tobytes())
        self.count += 1

    def close(self) -> None:
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        self._fh.close()
        if os.path.exists(self._tmp):
            os.unlink(self._tmp)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()


def read_records(path, record_len: int, shape=None) -> np.ndarray:
    data = np.fromfile(path, dtype=F64)
    if data.size % record_len:
        raise ValueError(f"{path}: size {data.size} is not a multiple of record length {record_len}")
    data = data.reshape(-1, record_len)
    if shape is not None:
        data = data.reshape(-1, *shape)
    return data.astype(float)


def read_trajectory(directory) -> dict:
    """Load a trajectory directory -> dict with ``header``, ``states``, ``observations``."""
    d = Path(directory)
    h = read_header(d / HEADER)
    side = h["side"]
    out = {"header": h}
    out["states"] = read_records(d / STATES, h["n_species"] * side * side, (h["n_species"], side, side))
    if (d / OBSERVATIONS).exists():
        nl = h["n_wavelengths"]
        out["observations"] = read_records(d / OBSERVATIONS, nl * side * side, (nl, side, side))
    return out


def write_pgm(path, field, vmax=None) -> None:
    """8-bit binary PGM, pixel = round(255 * value / vmax) clipped to [0, 255]."""
    a = np.asarray(field, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM snapshot needs a 2-D field")
    top = float(np.max(a)) if vmax is None else float(vmax)
    scaled = np.zeros_like(a) if top <= 0 else np.clip(a, 0.0, None) / top * 255.0
    pix = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = pix.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode())
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    pos += 1
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)

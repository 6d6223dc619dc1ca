"""Binary field dumps, CSV tables and configuration loading."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import SimConfig, env_overrides, parse_config
from .errors import FormatError, SchemaError
from .quantum import GridSpec, WaveField

MAGIC = b"ABSF"
VERSION = 1
# magic, version, dims, extents, origin
HEADER = struct.Struct("<4sI3I3d3d")


def field_bytes(field: WaveField) -> bytes:
    g = field.grid
    head = HEADER.pack(MAGIC, VERSION, *g.shape, *g.extents, *g.origin)
    return head + np.ascontiguousarray(field.data, dtype="<c16").tobytes()


def parse_field(buf: bytes) -> WaveField:
    if len(buf) < 4:
        raise FormatError(len(buf), "file ends inside the magic number")
    if buf[:4] != MAGIC:
        raise FormatError(0, "bad magic number")
    if len(buf) < HEADER.size:
        raise FormatError(len(buf), "file ends inside the header")
    _, version, nx, ny, nz, ex, ey, ez, ox, oy, oz = HEADER.unpack_from(buf)
    if version != VERSION:
        raise FormatError(4, f"unsupported version {version}")
    try:
        grid = GridSpec((nx, ny, nz), (ex, ey, ez), (ox, oy, oz))
    except Exception as e:
        raise FormatError(8, f"invalid grid: {e}") from None
    need = HEADER.size + 16 * grid.size
    if len(buf) < need:
        raise FormatError(len(buf), f"data truncated, expected {need} bytes")
    if len(buf) > need:
        raise FormatError(need, "trailing bytes after the data block")
    data = np.frombuffer(buf, dtype="<c16", offset=HEADER.size).reshape(grid.shape)
    return WaveField(grid, data.astype(np.complex128))


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_field(path, field: WaveField, meta: Optional[dict] = None) -> None:
    """Write an ABSF dump; ``meta`` (e.g. class labels) goes to a JSON sidecar."""
    Path(path).write_bytes(field_bytes(field))
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_field(path) -> WaveField:
    return parse_field(Path(path).read_bytes())


def read_meta(path) -> Optional[dict]:
    p = sidecar_path(path)
    return json.loads(p.read_text()) if p.exists() else None


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17e" % x
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def load_config(source, environ=None) -> SimConfig:
    """Parse a JSON config file (or an already loaded dict), applying ABSIM_ overrides."""
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text())
        except json.JSONDecodeError as e:
            raise SchemaError("config", f"invalid JSON at line {e.lineno}: {e.msg}") from None
        except OSError as e:
            raise SchemaError("config", f"cannot read {source}: {e.strerror}") from None
    if not isinstance(doc, dict):
        raise SchemaError("config", "expected a JSON object")
    return parse_config(env_overrides(doc, environ if environ is not None else {}))

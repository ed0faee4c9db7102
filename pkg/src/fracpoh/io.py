"""Solution files and report writers.

A solution file is MAGIC, an 8-byte little-endian header length, a UTF-8
JSON header (grid spec, kernel spec, problem data, sha256 of the body) and
the node values as a flat little-endian float64 array in grid order.
"""

import csv
import hashlib
import io
import json
import os
import struct
import tempfile

import numpy as np

from .errors import CompatibilityError, CorruptionError
from .geometry import grid_from_spec
from .nonlocal_op import GridFunction

MAGIC = b"FRACPOH\x01"
FORMAT_VERSION = 1
_DTYPE = "<f8"


def atomic_write(path, data):
    """Write bytes to path via a temporary file in the same directory and rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_solution(u, kernel=None, problem=None):
    body = np.ascontiguousarray(u.values, dtype=_DTYPE).tobytes()
    header = {
        "format": "fracpoh-solution",
        "version": FORMAT_VERSION,
        "grid": u.grid.spec(),
        "kernel": None if kernel is None else kernel.spec(),
        "problem": problem or {},
        "dtype": _DTYPE,
        "count": int(u.values.size),
        "sha256": hashlib.sha256(body).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + body


def serialize_solution(u, path, kernel=None, problem=None):
    atomic_write(path, encode_solution(u, kernel, problem))


def decode_header(data):
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CorruptionError("not a solution file (bad magic or truncated header)")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise CorruptionError("truncated header")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable header: {exc}") from exc
    if header.get("format") != "fracpoh-solution":
        raise CorruptionError("header does not describe a solution file")
    if header.get("version") != FORMAT_VERSION:
        raise CompatibilityError(f"unsupported format version {header.get('version')!r}")
    return header, data[start + hlen:]


def load_solution(path, grid=None, kernel=None):
    """Read a solution file; with grid/kernel given, refuse data built for a different one."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, body = decode_header(data)
    if len(body) != 8 * header["count"]:
        raise CorruptionError(f"body has {len(body)} bytes, expected {8 * header['count']}")
    if hashlib.sha256(body).hexdigest() != header["sha256"]:
        raise CorruptionError("checksum mismatch")
    if grid is not None and _normalized(grid.spec()) != _normalized(header["grid"]):
        raise CompatibilityError(f"file grid {header['grid']} does not match the requested grid {grid.spec()}")
    if kernel is not None and header["kernel"] is not None \
            and _normalized(kernel.spec()) != _normalized(header["kernel"]):
        raise CompatibilityError("file kernel does not match the requested kernel")
    g = grid if grid is not None else grid_from_spec(header["grid"])
    if g.size != header["count"]:
        raise CompatibilityError(f"grid has {g.size} nodes, file has {header['count']}")
    values = np.frombuffer(body, dtype=_DTYPE).astype(float)
    return GridFunction(g, values, info={"kernel": header["kernel"], "problem": header["problem"]})


def _normalized(spec):
    return json.loads(json.dumps(spec, sort_keys=True))


def csv_bytes(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue().encode("utf-8")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def json_bytes(obj):
    return (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode("utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")

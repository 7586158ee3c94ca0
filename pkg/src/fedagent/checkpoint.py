"""Binary checkpoints for parameter vectors and server state.

ParamVector block::

    b"FAPV" | u32 version | u64 D | D x f64      (all little-endian)

ServerState file::

    b"FASS" | u32 version | u32 manifest_len | manifest (UTF-8 JSON)
    | one ParamVector block per buffer named in manifest["sections"]
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .fedalgo import ScaffoldState, ServerState

VECTOR_MAGIC = b"FAPV"
STATE_MAGIC = b"FASS"
VERSION = 1

_VEC_HEAD = struct.Struct("<4sIQ")
_STATE_HEAD = struct.Struct("<4sII")


def encode_vector(vec: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(vec, dtype="<f8")
    if arr.ndim != 1:
        raise ValueError("parameter vectors are one-dimensional")
    return _VEC_HEAD.pack(VECTOR_MAGIC, VERSION, arr.size) + arr.tobytes()


def decode_vector(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) - offset < _VEC_HEAD.size:
        raise CorruptCheckpoint("truncated vector header")
    magic, version, n = _VEC_HEAD.unpack_from(buf, offset)
    if magic != VECTOR_MAGIC:
        raise CorruptCheckpoint(f"bad vector magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"vector version {version}, expected {VERSION}")
    start = offset + _VEC_HEAD.size
    end = start + 8 * n
    if end > len(buf):
        raise CorruptCheckpoint(f"truncated vector: need {8 * n} bytes, have {len(buf) - start}")
    vec = np.frombuffer(buf, dtype="<f8", count=n, offset=start).astype(np.float64)
    return vec, end


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_vector(vec: np.ndarray, path: str | Path) -> None:
    _atomic_write(path, encode_vector(vec))


def load_vector(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    vec, end = decode_vector(buf)
    if end != len(buf):
        raise CorruptCheckpoint("trailing bytes after vector")
    return vec


def encode_state(state: ServerState) -> bytes:
    bufs = state.buffers()
    manifest = {
        "algorithm": state.algorithm,
        "round": state.round,
        "sections": list(bufs),
        "eta_s": None if state.scaffold is None else state.scaffold.eta_s,
        "extra": state.extra,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_STATE_HEAD.pack(STATE_MAGIC, VERSION, len(head)), head]
    parts += [encode_vector(v) for v in bufs.values()]
    return b"".join(parts)


def decode_state(buf: bytes) -> ServerState:
    if len(buf) < _STATE_HEAD.size:
        raise CorruptCheckpoint("truncated checkpoint header")
    magic, version, hlen = _STATE_HEAD.unpack_from(buf, 0)
    if magic != STATE_MAGIC:
        raise CorruptCheckpoint(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    pos = _STATE_HEAD.size
    if pos + hlen > len(buf):
        raise CorruptCheckpoint("truncated manifest")
    try:
        manifest = json.loads(buf[pos : pos + hlen].decode("utf-8"))
        sections = list(manifest["sections"])
        algorithm = str(manifest["algorithm"])
        rnd = int(manifest["round"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable manifest: {exc}") from exc
    pos += hlen
    vectors = {}
    for name in sections:
        vectors[name], pos = decode_vector(buf, pos)
    if pos != len(buf):
        raise CorruptCheckpoint("trailing bytes after last section")
    if "global_params" not in vectors:
        raise CorruptCheckpoint("checkpoint lacks global_params")

    scaffold = None
    if "scaffold.c" in vectors:
        clients = {
            int(name.rsplit(".", 1)[1]): vec
            for name, vec in vectors.items()
            if name.startswith("scaffold.c_clients.")
        }
        scaffold = ScaffoldState(float(manifest.get("eta_s") or 1.0), vectors["scaffold.c"], clients)
    return ServerState(
        algorithm=algorithm,
        global_params=vectors["global_params"],
        round=rnd,
        m=vectors.get("m"),
        v=vectors.get("v"),
        momentum_model=vectors.get("momentum_model"),
        scaffold=scaffold,
        extra=dict(manifest.get("extra") or {}),
    )


def save_checkpoint(state: ServerState, path: str | Path) -> None:
    _atomic_write(path, encode_state(state))


def load_checkpoint(path: str | Path) -> ServerState:
    return decode_state(Path(path).read_bytes())

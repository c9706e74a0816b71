"""Binary checkpoint format shared by codec and encoder models.

Layout (little-endian)::

    "NNCK" u32 count
    count x [u32 name_len, name bytes, u32 ndim, ndim x u32 dims, f32 values]
    then zero or more tagged sections: 4-byte tag, u32 byte length, payload

Known section tags: ``CDBK`` (u32 C, u32 S, C*S f32 codebook entries) and
``META`` (UTF-8 JSON with the architecture and training config).
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NNCK"


class CheckpointError(ValueError):
    pass


def dump_params(params: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def codebook_section(entries: np.ndarray) -> bytes:
    c, s = entries.shape
    return struct.pack("<II", c, s) + np.ascontiguousarray(entries, dtype="<f4").tobytes()


def parse_codebook_section(payload: bytes) -> np.ndarray:
    c, s = struct.unpack_from("<II", payload)
    return np.frombuffer(payload, dtype="<f4", count=c * s, offset=8).reshape(c, s).copy()


def save(path: str | Path, params: dict[str, np.ndarray], *, codebook: np.ndarray | None = None,
         meta: dict | None = None) -> None:
    out = [dump_params(params)]
    if codebook is not None:
        payload = codebook_section(codebook)
        out.append(b"CDBK" + struct.pack("<I", len(payload)) + payload)
    if meta is not None:
        payload = json.dumps(meta, sort_keys=True).encode("utf-8")
        out.append(b"META" + struct.pack("<I", len(payload)) + payload)
    Path(path).write_bytes(b"".join(out))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, bytes]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    try:
        (count,) = struct.unpack_from("<I", data, 4)
        pos = 8
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
            pos += 4 * n
        sections: dict[str, bytes] = {}
        while pos < len(data):
            tag = data[pos:pos + 4].decode("ascii")
            (size,) = struct.unpack_from("<I", data, pos + 4)
            sections[tag] = data[pos + 8:pos + 8 + size]
            pos += 8 + size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return params, sections


def load_meta(sections: dict[str, bytes]) -> dict:
    return json.loads(sections["META"].decode("utf-8")) if "META" in sections else {}

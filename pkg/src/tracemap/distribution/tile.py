"""Binary tile format for risk maps.

All fields are little-endian.  Byte offsets:

====== ====== ============================================
offset size   field
====== ====== ============================================
0      8      magic ``b"RISKTILE"``
8      2      version (u16), currently 1
10     8      origin_x (f64, meters)
18     8      origin_y (f64, meters)
26     8      origin_t (i64, seconds)
34     8      cell_size_xy (f64, meters)
42     8      cell_size_t (f64, seconds)
50     8      p0 (f64)
58     8      sigma_x (f64)
66     8      sigma_y (f64)
74     8      sigma_t (f64)
82     8      truncation_eps (f64)
90     8      entry_count (u64)
98     24*n   entries: i (i32), j (i32), k (i64), log_q (f64)
====== ====== ============================================

Entries are strictly increasing in ``(k, i, j)``.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import (
    BadMagicError,
    DuplicateEntryError,
    TruncatedPayloadError,
    UnsortedEntriesError,
    UnsupportedVersionError,
)
from ..grid_map import GridSpec, RiskMap
from ..risk_model import RiskParams

MAGIC = b"RISKTILE"
VERSION = 1
HEADER = struct.Struct("<8sHddqdddddddQ")
ENTRY_DTYPE = np.dtype([("i", "<i4"), ("j", "<i4"), ("k", "<i8"), ("log_q", "<f8")])

assert HEADER.size == 98 and ENTRY_DTYPE.itemsize == 24


def encode(risk_map: RiskMap) -> bytes:
    spec, params = risk_map.spec, risk_map.params
    head = HEADER.pack(
        MAGIC, VERSION,
        spec.origin_x, spec.origin_y, spec.origin_t, spec.cell_size_xy, float(spec.cell_size_t),
        params.p0, params.sigma_x, params.sigma_y, params.sigma_t,
        risk_map.truncation_eps, len(risk_map),
    )
    body = np.empty(len(risk_map), dtype=ENTRY_DTYPE)
    idx = risk_map.indices
    body["i"], body["j"], body["k"] = idx[:, 0], idx[:, 1], idx[:, 2]
    body["log_q"] = risk_map.log_q
    return head + body.tobytes()


def decode(data: bytes) -> RiskMap:
    data = bytes(data)
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise BadMagicError("not a risk tile (bad magic)")
    if len(data) < 10:
        raise TruncatedPayloadError("payload ends inside the header")
    (version,) = struct.unpack_from("<H", data, 8)
    if version != VERSION:
        raise UnsupportedVersionError(f"tile version {version} is not supported")
    if len(data) < HEADER.size:
        raise TruncatedPayloadError("payload ends inside the header")
    (_, _, ox, oy, ot, cxy, ct, p0, sx, sy, st, eps, count) = HEADER.unpack_from(data, 0)
    expected = HEADER.size + count * ENTRY_DTYPE.itemsize
    if len(data) < expected:
        raise TruncatedPayloadError(f"expected {count} entries, payload holds {len(data) - HEADER.size} bytes")
    if len(data) > expected:
        raise TruncatedPayloadError("entry count does not match payload length")
    body = np.frombuffer(data, dtype=ENTRY_DTYPE, count=count, offset=HEADER.size)
    idx = np.stack([body["i"].astype(np.int64), body["j"].astype(np.int64), body["k"].astype(np.int64)], axis=1)
    if count > 1:
        a, b = idx[:-1], idx[1:]
        same = np.all(a == b, axis=1)
        if same.any():
            raise DuplicateEntryError(f"duplicate entry at index {tuple(a[np.argmax(same)])}")
        ka, kb = a[:, [2, 0, 1]], b[:, [2, 0, 1]]
        diff = kb - ka
        first = np.argmax(diff != 0, axis=1)
        if np.any(diff[np.arange(len(diff)), first] < 0):
            raise UnsortedEntriesError("entries are not sorted by (k, i, j)")
    spec = GridSpec(ox, oy, ot, cxy, ct)
    params = RiskParams(p0, sx, sy, st)
    return RiskMap(spec, params, eps, idx, body["log_q"].copy())


def write_tile(path, risk_map: RiskMap) -> bytes:
    data = encode(risk_map)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read_tile(path) -> RiskMap:
    with open(path, "rb") as fh:
        return decode(fh.read())

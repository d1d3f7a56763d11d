"""Request/response framing for map downloads.

Every exchange is one request and one response on a fresh byte-stream
connection.  All integers are little-endian.

Request header (12 bytes)::

    0   4  magic b"RTQ1"
    4   1  opcode (1 = list versions, 2 = get tile)
    5   3  zero padding
    8   4  payload length (u32)

Get-tile payload (40 bytes)::

    0   8  map version (u64, 0 = latest)
    8   4  i_min (i32)     12  4  i_max (i32)
    16  4  j_min (i32)     20  4  j_max (i32)
    24  8  k_min (i64)     32  8  k_max (i64)

List-versions requests carry no payload.

Response header (24 bytes)::

    0   4  magic b"RTR1"
    4   1  status (0 ok, 1 protocol error, 2 unknown version, 3 no maps)
    5   3  zero padding
    8   8  map version served (u64, 0 when not applicable)
    16  8  payload length (u64)

A successful get-tile response carries a tile file as its payload; a list
response carries the published version ids as consecutive u64 values; an
error response carries a UTF-8 message.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import ProtocolError
from ..grid_map import INT32_MAX, INT32_MIN, INT64_MAX, INT64_MIN

REQUEST_MAGIC = b"RTQ1"
RESPONSE_MAGIC = b"RTR1"
REQUEST_HEADER = struct.Struct("<4sB3xI")
RESPONSE_HEADER = struct.Struct("<4sB3xQQ")
GET_PAYLOAD = struct.Struct("<Qiiiiqq")

OP_LIST = 1
OP_GET = 2

STATUS_OK = 0
STATUS_PROTOCOL_ERROR = 1
STATUS_UNKNOWN_VERSION = 2
STATUS_NO_MAPS = 3

MAX_PAYLOAD = 1 << 20


@dataclass(frozen=True)
class MapRequest:
    """Rectangular index ranges (inclusive) plus the wanted map version.

    There is deliberately no field that could carry a trajectory.
    """

    i_range: tuple[int, int] = (INT32_MIN, INT32_MAX)
    j_range: tuple[int, int] = (INT32_MIN, INT32_MAX)
    k_range: tuple[int, int] = (INT64_MIN, INT64_MAX)
    map_version: int = 0

    def __post_init__(self):
        for name, lo_lim, hi_lim in (("i_range", INT32_MIN, INT32_MAX), ("j_range", INT32_MIN, INT32_MAX),
                                     ("k_range", INT64_MIN, INT64_MAX)):
            lo, hi = (int(v) for v in getattr(self, name))
            if not lo_lim <= lo <= hi <= hi_lim:
                raise ProtocolError(f"{name} must be an ordered pair within index limits, got {(lo, hi)}")
            object.__setattr__(self, name, (lo, hi))
        if not 0 <= self.map_version < 2**64:
            raise ProtocolError("map_version must fit in u64")

    def to_bytes(self) -> bytes:
        payload = GET_PAYLOAD.pack(self.map_version, *self.i_range, *self.j_range, *self.k_range)
        return REQUEST_HEADER.pack(REQUEST_MAGIC, OP_GET, len(payload)) + payload

    @classmethod
    def from_payload(cls, payload: bytes) -> "MapRequest":
        if len(payload) != GET_PAYLOAD.size:
            raise ProtocolError(f"get-tile payload must be {GET_PAYLOAD.size} bytes")
        v, i0, i1, j0, j1, k0, k1 = GET_PAYLOAD.unpack(payload)
        return cls((i0, i1), (j0, j1), (k0, k1), v)


def list_request() -> bytes:
    return REQUEST_HEADER.pack(REQUEST_MAGIC, OP_LIST, 0)


def parse_request_header(head: bytes) -> tuple[int, int]:
    if len(head) != REQUEST_HEADER.size:
        raise ProtocolError("short request header")
    magic, op, length = REQUEST_HEADER.unpack(head)
    if magic != REQUEST_MAGIC:
        raise ProtocolError("bad request magic")
    if op not in (OP_LIST, OP_GET):
        raise ProtocolError(f"unknown opcode {op}")
    if length > MAX_PAYLOAD:
        raise ProtocolError("request payload too large")
    return op, length


def response(status: int, version: int, payload: bytes) -> bytes:
    return RESPONSE_HEADER.pack(RESPONSE_MAGIC, status, version, len(payload)) + payload


def parse_response_header(head: bytes) -> tuple[int, int, int]:
    if len(head) != RESPONSE_HEADER.size:
        raise ProtocolError("short response header")
    magic, status, version, length = RESPONSE_HEADER.unpack(head)
    if magic != RESPONSE_MAGIC:
        raise ProtocolError("bad response magic")
    return status, version, length

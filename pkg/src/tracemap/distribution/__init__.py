"""Risk-map tiles, the download server, and the local-only client."""

from .client import (
    DEFAULT_THRESHOLD,
    LoopbackTransport,
    MapClient,
    RecordingTransport,
    TcpTransport,
    assess,
    client_evaluate,
)
from .protocol import MapRequest
from .server import DirectoryMapStore, MapServer, MapStore, serve
from .tile import decode, encode, read_tile, write_tile

__all__ = [
    "DEFAULT_THRESHOLD",
    "DirectoryMapStore",
    "LoopbackTransport",
    "MapClient",
    "MapRequest",
    "MapServer",
    "MapStore",
    "RecordingTransport",
    "TcpTransport",
    "assess",
    "client_evaluate",
    "decode",
    "encode",
    "read_tile",
    "serve",
    "write_tile",
]

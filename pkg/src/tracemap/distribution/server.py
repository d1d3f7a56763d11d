"""Map publication and the download endpoint."""

from __future__ import annotations

import logging
import socketserver
import threading
from pathlib import Path

import numpy as np

from ..errors import ProtocolError, TileDecodeError
from ..grid_map import RiskMap
from . import protocol as proto
from .tile import encode, read_tile

log = logging.getLogger(__name__)


class MapStore:
    """Versioned, immutable published maps.

    Publishing swaps in a new version table under a lock; readers grab the
    current table reference once per request, so they never see a partial
    update.
    """

    def __init__(self, maps=()):
        self._lock = threading.Lock()
        self._versions: dict[int, RiskMap] = {}
        for m in maps:
            self.publish(m)

    def publish(self, risk_map: RiskMap) -> int:
        with self._lock:
            version = max(self._versions, default=0) + 1
            table = dict(self._versions)
            table[version] = risk_map
            self._versions = table
        return version

    def versions(self) -> list[int]:
        return sorted(self._versions)

    def get(self, version: int = 0) -> tuple[int, RiskMap]:
        table = self._versions
        if not table:
            raise LookupError("no maps published")
        if version == 0:
            version = max(table)
        if version not in table:
            raise KeyError(version)
        return version, table[version]

    def refresh(self) -> None:
        """Hook for stores backed by external storage."""

    def handle(self, data: bytes) -> bytes:
        """Answer one framed request with one framed response."""
        try:
            op, length = proto.parse_request_header(data[:proto.REQUEST_HEADER.size])
            payload = data[proto.REQUEST_HEADER.size:]
            if len(payload) != length:
                raise ProtocolError("payload length does not match header")
            self.refresh()
            if op == proto.OP_LIST:
                if length:
                    raise ProtocolError("list request takes no payload")
                ids = self.versions()
                return proto.response(proto.STATUS_OK, max(ids, default=0),
                                      np.array(ids, dtype="<u8").tobytes())
            request = proto.MapRequest.from_payload(payload)
        except ProtocolError as exc:
            return proto.response(proto.STATUS_PROTOCOL_ERROR, 0, str(exc).encode())
        try:
            version, risk_map = self.get(request.map_version)
        except KeyError:
            return proto.response(proto.STATUS_UNKNOWN_VERSION, 0,
                                  f"unknown map version {request.map_version}".encode())
        except LookupError:
            return proto.response(proto.STATUS_NO_MAPS, 0, b"no maps published")
        clipped = risk_map.clip(request.i_range, request.j_range, request.k_range)
        return proto.response(proto.STATUS_OK, version, encode(clipped))


class DirectoryMapStore(MapStore):
    """Publishes every ``*.tile`` file in a directory, in filename order.

    New files are picked up on the next request; version ids follow the sorted
    filenames, so names should sort in publication order.
    """

    def __init__(self, directory):
        super().__init__()
        self.directory = Path(directory)
        self._loaded: set[str] = set()
        self._scan_lock = threading.Lock()
        self.refresh()

    def refresh(self) -> None:
        with self._scan_lock:
            for name in sorted(p.name for p in self.directory.glob("*.tile")):
                if name in self._loaded:
                    continue
                try:
                    m = read_tile(self.directory / name)
                except (OSError, TileDecodeError) as exc:
                    log.warning("skipping %s: %s", name, exc)
                    continue
                version = self.publish(m)
                self._loaded.add(name)
                log.info("published %s as version %d", name, version)


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 16))
        if not chunk:
            raise ProtocolError("connection closed mid-message")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        store: MapStore = self.server.store
        try:
            head = _recv_exact(self.request, proto.REQUEST_HEADER.size)
            _, length = proto.parse_request_header(head)
            payload = _recv_exact(self.request, length)
            reply = store.handle(head + payload)
        except ProtocolError as exc:
            reply = proto.response(proto.STATUS_PROTOCOL_ERROR, 0, str(exc).encode())
        self.request.sendall(reply)


class MapServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: MapStore, address=("127.0.0.1", 0)):
        super().__init__(address, _Handler)
        self.store = store

    @property
    def endpoint(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def start(self) -> "MapServer":
        """Serve from a daemon thread; returns self."""
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self

    def __exit__(self, *exc):
        self.shutdown()
        super().__exit__(*exc)


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)


def serve(store: MapStore, address=("127.0.0.1", 0)) -> MapServer:
    """Start a threaded server for ``store``; call ``shutdown()`` to stop it."""
    return MapServer(store, address).start()

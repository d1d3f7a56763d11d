"""Client side of map downloads and strictly local risk evaluation.

The client sends only a :class:`MapRequest`; the user's trajectory is read
after the tile has been downloaded and never reaches a transport.
"""

from __future__ import annotations

import socket

import numpy as np

from ..errors import ProtocolError, TransportError
from ..grid_map import RiskMap, evaluate_trajectory
from ..risk_model import Trajectory
from . import protocol as proto
from .tile import decode

DEFAULT_THRESHOLD = 0.01


class TcpTransport:
    """One connection per exchange over TCP."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host, self.port, self.timeout = host, port, timeout

    def exchange(self, data: bytes) -> bytes:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                sock.sendall(data)
                head = _recv_exact(sock, proto.RESPONSE_HEADER.size)
                _, _, length = proto.parse_response_header(head)
                return head + _recv_exact(sock, length)
        except OSError as exc:
            raise TransportError(f"cannot reach {self.host}:{self.port}: {exc}") from exc


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 16))
        if not chunk:
            raise TransportError("connection closed before the response was complete")
        buf += chunk
    return bytes(buf)


class LoopbackTransport:
    """Hands requests straight to an in-process store, no sockets involved."""

    def __init__(self, store):
        self.store = store

    def exchange(self, data: bytes) -> bytes:
        return self.store.handle(bytes(data))


class RecordingTransport:
    """Wraps another transport and keeps a copy of every byte sent and received."""

    def __init__(self, inner):
        self.inner = inner
        self.sent: list[bytes] = []
        self.received: list[bytes] = []

    def exchange(self, data: bytes) -> bytes:
        self.sent.append(bytes(data))
        reply = self.inner.exchange(data)
        self.received.append(reply)
        return reply

    @property
    def outbound(self) -> bytes:
        return b"".join(self.sent)


def _split(reply: bytes) -> tuple[int, int, bytes]:
    status, version, length = proto.parse_response_header(reply[:proto.RESPONSE_HEADER.size])
    body = reply[proto.RESPONSE_HEADER.size:]
    if len(body) != length:
        raise ProtocolError("response body length does not match header")
    return status, version, body


class MapClient:
    def __init__(self, transport):
        self.transport = transport

    def list_versions(self) -> list[int]:
        status, _, body = _split(self.transport.exchange(proto.list_request()))
        if status != proto.STATUS_OK:
            raise ProtocolError(body.decode(errors="replace"))
        return np.frombuffer(body, dtype="<u8").astype(int).tolist()

    def fetch(self, request: proto.MapRequest) -> tuple[int, RiskMap]:
        status, version, body = _split(self.transport.exchange(request.to_bytes()))
        if status != proto.STATUS_OK:
            raise ProtocolError(f"server returned status {status}: {body.decode(errors='replace')}")
        return version, decode(body)


def assess(risk_map: RiskMap, trajectory: Trajectory, threshold: float = DEFAULT_THRESHOLD) -> tuple[float, bool]:
    risk = evaluate_trajectory(risk_map, trajectory)
    return risk, risk >= threshold


def client_evaluate(transport, request: proto.MapRequest, local_trajectory: Trajectory,
                    threshold: float = DEFAULT_THRESHOLD) -> tuple[float, bool]:
    """Download the requested tile, then evaluate the trajectory locally.

    Returns ``(risk, advise_test)`` with ``advise_test = risk >= threshold``.
    """
    _, tile = MapClient(transport).fetch(request)
    return assess(tile, local_trajectory, threshold)

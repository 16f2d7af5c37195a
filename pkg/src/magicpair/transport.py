"""Simulated fixed-channel L2CAP link.

Two endpoints exchange raw frame bytes through FIFO queues.  The receiving
side tells the link whether each frame was acceptable; once an endpoint has
rejected ``disconnect_threshold`` frames the link drops, and both ends see a
single ``Disconnected`` event.  ``LoopbackCarrier`` moves the same frame
bytes over a local TCP socket.
"""

from __future__ import annotations

import enum
import random
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass

from magicpair.codec import FIXED_CID, L2capFrame, encode_frame


class Endpoint(enum.Enum):
    A = "a"
    B = "b"

    @property
    def other(self) -> "Endpoint":
        return Endpoint.B if self is Endpoint.A else Endpoint.A


class LinkState(enum.Enum):
    CONNECTED = "Connected"
    DISCONNECTED = "Disconnected"


class EventKind(enum.Enum):
    DELIVERED = "Delivered"
    DISCONNECTED = "Disconnected"
    RECONNECTED = "Reconnected"


@dataclass(frozen=True)
class LinkEvent:
    kind: EventKind
    detail: str = ""


class LinkDown(ConnectionError):
    """Send attempted on a disconnected link."""


@dataclass(frozen=True)
class LinkConfig:
    disconnect_threshold: int = 5
    channel_id: int = FIXED_CID
    # drop Disconnected notifications with this probability (fixed seed)
    drop_disconnect_probability: float = 0.0
    seed: int = 0


class Link:
    def __init__(self, config: LinkConfig | None = None):
        self.config = config or LinkConfig()
        self.state = LinkState.CONNECTED
        self._queues = {Endpoint.A: deque(), Endpoint.B: deque()}
        self._events = {Endpoint.A: deque(), Endpoint.B: deque()}
        self.invalid_count = {Endpoint.A: 0, Endpoint.B: 0}
        self.delivered = 0
        self.disconnects = 0
        self._lock = threading.Lock()
        self._rng = random.Random(self.config.seed)

    @property
    def connected(self) -> bool:
        return self.state is LinkState.CONNECTED

    def send(self, endpoint: Endpoint, frame: L2capFrame | bytes) -> LinkEvent:
        """Queue a frame for the opposite endpoint."""
        raw = encode_frame(frame) if isinstance(frame, L2capFrame) else bytes(frame)
        with self._lock:
            if self.state is not LinkState.CONNECTED:
                raise LinkDown("link is disconnected")
            self._queues[endpoint.other].append(raw)
            self.delivered += 1
        return LinkEvent(EventKind.DELIVERED)

    def recv(self, endpoint: Endpoint) -> bytes | None:
        """Next frame for ``endpoint`` or ``None``; never blocks."""
        with self._lock:
            queue = self._queues[endpoint]
            return queue.popleft() if queue else None

    def pending(self, endpoint: Endpoint) -> int:
        return len(self._queues[endpoint])

    def report(self, endpoint: Endpoint, valid: bool) -> LinkEvent | None:
        """Receiver verdict on the frame it just processed."""
        if valid or self.state is not LinkState.CONNECTED:
            return None
        self.invalid_count[endpoint] += 1
        if self.invalid_count[endpoint] >= self.config.disconnect_threshold:
            return self.disconnect(f"{self.invalid_count[endpoint]} invalid frames at {endpoint.value}")
        return None

    def disconnect(self, reason: str = "") -> LinkEvent:
        with self._lock:
            if self.state is LinkState.DISCONNECTED:
                return LinkEvent(EventKind.DISCONNECTED, reason)
            self.state = LinkState.DISCONNECTED
            self.disconnects += 1
            for q in self._queues.values():
                q.clear()
            event = LinkEvent(EventKind.DISCONNECTED, reason)
            for ep in Endpoint:
                if self._rng.random() >= self.config.drop_disconnect_probability:
                    self._events[ep].append(event)
        return event

    def reconnect(self) -> LinkEvent:
        with self._lock:
            if self.state is LinkState.CONNECTED:
                raise RuntimeError("link is already connected")
            self.state = LinkState.CONNECTED
            self.invalid_count = {Endpoint.A: 0, Endpoint.B: 0}
            event = LinkEvent(EventKind.RECONNECTED)
            for ep in Endpoint:
                self._events[ep].append(event)
        return event

    def events(self, endpoint: Endpoint) -> list[LinkEvent]:
        """Drain the notifications for ``endpoint``."""
        with self._lock:
            out = list(self._events[endpoint])
            self._events[endpoint].clear()
        return out


def connect(config: LinkConfig | None = None) -> Link:
    return Link(config)


def reconnect(link: Link) -> LinkEvent:
    return link.reconnect()


class LoopbackCarrier:
    """Frame stream over a TCP socket, same byte layout as the in-memory link."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = b""

    @classmethod
    def listen(cls, port: int, host: str = "127.0.0.1") -> socket.socket:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        return server

    @classmethod
    def accept(cls, server: socket.socket) -> "LoopbackCarrier":
        conn, _ = server.accept()
        return cls(conn)

    @classmethod
    def dial(cls, port: int, host: str = "127.0.0.1", timeout: float = 5.0) -> "LoopbackCarrier":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def send(self, frame: L2capFrame | bytes) -> None:
        raw = encode_frame(frame) if isinstance(frame, L2capFrame) else bytes(frame)
        self.sock.sendall(raw)

    def recv(self) -> bytes | None:
        """Read one whole frame (header + declared payload); ``None`` on EOF."""
        while True:
            if len(self._buf) >= 4:
                (length,) = struct.unpack_from("<H", self._buf)
                if len(self._buf) >= 4 + length:
                    raw, self._buf = self._buf[:4 + length], self._buf[4 + length:]
                    return raw
            chunk = self.sock.recv(4096)
            if not chunk:
                return None
            self._buf += chunk

    def close(self) -> None:
        self.sock.close()

"""Blocking request/response client with bounded reconnects."""

from __future__ import annotations

import socket
import time

from . import wire


class FabricError(RuntimeError):
    """A peer stayed unreachable past the retry budget or answered with an error."""


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


class Client:
    def __init__(self, address: tuple[str, int], retries: int = 50, backoff: float = 0.05, timeout: float = 30.0):
        self.address = address
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sock: socket.socket | None = None

    def _connect(self) -> socket.socket:
        last = None
        for attempt in range(self.retries + 1):
            try:
                s = socket.create_connection(self.address, timeout=self.timeout)
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return s
            except OSError as e:
                last = e
                time.sleep(min(self.backoff * (attempt + 1), 1.0))
        raise FabricError(f"cannot reach {self.address[0]}:{self.address[1]}: {last}")

    def request(self, msg):
        """Send ``msg`` and return the reply.

        A failed send reconnects once and resends; a reply lost after a
        successful send is not retried, so no request is applied twice.
        """
        frame = wire.encode(msg)
        for attempt in range(2):
            if self._sock is None:
                self._sock = self._connect()
            try:
                self._sock.sendall(frame)
                break
            except OSError:
                self.close()
                if attempt:
                    raise FabricError(f"connection to {self.address} lost") from None
        try:
            return wire.recv(self._sock)
        except (ConnectionError, OSError):
            self.close()
            raise FabricError(f"connection to {self.address} lost awaiting reply") from None

    def call(self, msg, expect):
        reply = self.request(msg)
        if isinstance(reply, wire.Error):
            raise FabricError(f"peer error {reply.code}: {reply.message}")
        if not isinstance(reply, expect):
            raise FabricError(f"expected {expect.__name__}, got {type(reply).__name__}")
        return reply

    def stats(self) -> dict:
        return self.call(wire.StatsRequest(), wire.Stats).values

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

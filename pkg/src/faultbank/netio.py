"""Newline-framed TCP helpers: one logical exchange per connection."""

from __future__ import annotations

import logging
import socket
import threading
from typing import Callable

from faultbank.wire import ControlMessage, encode_control, parse_control

log = logging.getLogger(__name__)

MAX_FRAME = 64 * 1024


class Connection:
    """A connected socket that speaks control frames."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._rfile = sock.makefile("rb")

    @classmethod
    def open(cls, host: str, port: int, timeout: float) -> Connection:
        sock = socket.create_connection((host, port), timeout=timeout)
        return cls(sock)

    def send(self, msg: ControlMessage) -> None:
        self.sock.sendall(encode_control(msg).encode("utf-8"))

    def recv_line(self, timeout: float | None) -> str | None:
        """Next raw frame without its newline, or None on EOF."""
        self.sock.settimeout(timeout)
        raw = self._rfile.readline(MAX_FRAME + 1)
        if not raw:
            return None
        if not raw.endswith(b"\n"):
            if len(raw) > MAX_FRAME:
                raise ValueError("frame too long")
            return None  # peer went away mid-frame
        return raw[:-1].decode("utf-8")

    def recv(self, timeout: float | None) -> ControlMessage | None:
        line = self.recv_line(timeout)
        return None if line is None else parse_control(line)

    def close(self) -> None:
        try:
            self._rfile.close()
        finally:
            self.sock.close()

    def __enter__(self) -> Connection:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def request(host: str, port: int, msg: ControlMessage, timeout: float) -> ControlMessage | None:
    with Connection.open(host, port, timeout) as conn:
        conn.send(msg)
        return conn.recv(timeout)


def notify(host: str, port: int, msg: ControlMessage, timeout: float) -> None:
    with Connection.open(host, port, timeout) as conn:
        conn.send(msg)


def bind(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError:
        sock.close()
        raise
    return sock


class Listener:
    """Accept loop on an already bound socket.

    ``handler`` gets each accepted :class:`Connection`; it runs on a fresh
    thread unless ``inline`` is set, in which case connections are handled
    one at a time in accept order.
    """

    def __init__(self, sock: socket.socket, handler: Callable[[Connection], None],
                 name: str, inline: bool = False, backlog: int = 64):
        self.sock = sock
        self.handler = handler
        self.inline = inline
        self.name = name
        self._stop = threading.Event()
        sock.listen(backlog)
        sock.settimeout(0.05)
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)

    @property
    def port(self) -> int:
        return self.sock.getsockname()[1]

    def start(self) -> Listener:
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                if not self._stop.is_set():
                    log.exception("%s: accept failed", self.name)
                break
            sock.settimeout(None)
            conn = Connection(sock)
            if self.inline:
                self._handle(conn)
            else:
                threading.Thread(target=self._handle, args=(conn,),
                                 name=f"{self.name}-conn", daemon=True).start()

    def _handle(self, conn: Connection) -> None:
        try:
            self.handler(conn)
        except Exception:
            log.exception("%s: handler failed", self.name)
        finally:
            conn.close()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self.sock.close()

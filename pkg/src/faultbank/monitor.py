"""Heartbeat watchdog for the bank servers."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
import time
from dataclasses import dataclass
from typing import Callable

from faultbank import netio
from faultbank.config import add_dataclass_flags, resolve
from faultbank.trace import EventLog
from faultbank.wire import Heartbeat, Register, Restart, WireError

log = logging.getLogger(__name__)


@dataclass
class Entry:
    host: str
    last_seen: float
    flagged: bool = False


class HeartbeatRegistry:
    """Last-seen table. ``send_restart`` returns False when the RM is unreachable."""

    def __init__(self, timeout: float, send_restart: Callable[[int], bool]):
        self.timeout = timeout
        self.send_restart = send_restart
        self.entries: dict[int, Entry] = {}
        self._lock = threading.Lock()

    def register(self, host: str, branch: int, now: float) -> None:
        with self._lock:
            self.entries[branch] = Entry(host, now)

    def heartbeat(self, branch: int, now: float) -> bool:
        with self._lock:
            entry = self.entries.get(branch)
            if entry is None:
                log.warning("heartbeat from unregistered branch %s ignored", branch)
                return False
            entry.last_seen = now
            return True

    def check(self, now: float) -> list[int]:
        with self._lock:
            stale = [b for b, e in sorted(self.entries.items())
                     if not e.flagged and now - e.last_seen > self.timeout]
            restarted = []
            for b in stale:
                if self.send_restart(b):
                    self.entries[b].flagged = True
                    restarted.append(b)
            return restarted


@dataclass
class MonitorConfig:
    host: str = "127.0.0.1"
    port: int = 3100
    rm_host: str = "127.0.0.1"
    rm_port: int = 3000
    timeout: float = 30.0
    check_interval: float | None = None  # default: timeout / 3
    events_file: str | None = None


class Monitor:
    def __init__(self, cfg: MonitorConfig, clock: Callable[[], float] = time.monotonic):
        self.cfg = cfg
        self.clock = clock
        self.events = EventLog(cfg.events_file)
        self.registry = HeartbeatRegistry(cfg.timeout, self._send_restart)
        self.listener: netio.Listener | None = None
        self._stop = threading.Event()
        self._checker: threading.Thread | None = None

    def _send_restart(self, branch: int) -> bool:
        try:
            netio.notify(self.cfg.rm_host, self.cfg.rm_port, Restart(branch), timeout=1.0)
        except OSError as exc:
            log.warning("restart of branch %s not delivered: %s", branch, exc)
            return False
        self.events.emit("restart_sent", branch=branch)
        log.warning("branch %s silent for more than %ss, restart requested",
                    branch, self.cfg.timeout)
        return True

    def start(self) -> Monitor:
        sock = netio.bind(self.cfg.host, self.cfg.port)
        self.listener = netio.Listener(sock, self._handle, name="monitor").start()
        self._checker = threading.Thread(target=self._time_checker, name="monitor-check",
                                         daemon=True)
        self._checker.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self.listener is not None:
            self.listener.stop()
        if self._checker is not None:
            self._checker.join(timeout=2)

    def _handle(self, conn: netio.Connection) -> None:
        try:
            msg = conn.recv(timeout=1.0)
        except (OSError, ValueError, WireError) as exc:
            log.warning("bad monitor frame: %s", exc)
            return
        now = self.clock()
        if isinstance(msg, Register):
            self.registry.register(msg.host, msg.branch, now)
            self.events.emit("register", branch=msg.branch, host=msg.host)
            log.info("registered branch %s at %s", msg.branch, msg.host)
        elif isinstance(msg, Heartbeat):
            if self.registry.heartbeat(msg.branch, now):
                self.events.emit("heartbeat", branch=msg.branch)
        elif msg is not None:
            log.warning("unexpected frame %s", msg)

    def _time_checker(self) -> None:
        period = self.cfg.check_interval or self.cfg.timeout / 3
        while not self._stop.wait(period):
            self.registry.check(self.clock())


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bankmonitor", description="Run the heartbeat monitor.")
    add_dataclass_flags(parser, MonitorConfig)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s monitor %(levelname)s %(message)s")
    try:
        mon = Monitor(resolve(MonitorConfig, args, prefix="BANKMON")).start()
    except (ValueError, OSError) as exc:
        print(f"bankmonitor: {exc}", file=sys.stderr)
        return 1
    done = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: done.set())
    signal.signal(signal.SIGINT, lambda *_: done.set())
    while not done.wait(0.5):
        pass
    mon.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

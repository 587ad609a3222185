"""The recovery module: dependency pool, checkpoint coordination, restarts."""

from __future__ import annotations

import argparse
import logging
import queue
import shlex
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from enum import Enum

from faultbank import netio
from faultbank.config import add_dataclass_flags, resolve
from faultbank.trace import EventLog
from faultbank.wire import (
    CancelCheckpoint,
    CheckpointDone,
    CheckpointRequest,
    Dependency,
    DoCheckpoint,
    ReadyForCheckpoint,
    Restart,
    WireError,
    parse_control,
)

log = logging.getLogger(__name__)


class DependencyPool:
    """Partition of branch ids into disjoint dependency groups."""

    def __init__(self):
        self._groups: list[set[int]] = []
        self._lock = threading.Lock()

    @property
    def groups(self) -> list[frozenset[int]]:
        with self._lock:
            return [frozenset(g) for g in self._groups]

    def record(self, a: int, b: int) -> None:
        if a == b:
            log.warning("ignoring self-dependency of branch %s", a)
            return
        with self._lock:
            ga = self._find(a)
            gb = self._find(b)
            if ga is None and gb is None:
                self._groups.append({a, b})
            elif gb is None:
                ga.add(b)
            elif ga is None:
                gb.add(a)
            elif ga is not gb:
                ga |= gb
                self._groups.remove(gb)

    def _find(self, b: int) -> set[int] | None:
        for g in self._groups:
            if b in g:
                return g
        return None

    def find(self, b: int) -> frozenset[int] | None:
        with self._lock:
            g = self._find(b)
            return None if g is None else frozenset(g)

    def remove(self, group: frozenset[int]) -> None:
        with self._lock:
            self._groups = [g for g in self._groups if g != group]

    def add_group(self, group: frozenset[int]) -> None:
        with self._lock:
            if any(self._find(b) is not None for b in group):
                raise ValueError(f"group {set(group)} overlaps the pool")
            self._groups.append(set(group))


class Outcome(str, Enum):
    COMMITTED = "committed"
    CANCELED = "canceled"
    PARTIAL = "partial"


@dataclass
class CoordinatorConfig:
    host: str = "127.0.0.1"
    port: int = 3000
    checkpoint_port: int = 3001  # reserved
    bank_host: str = "127.0.0.1"
    session_timeout: float = 5.0
    restart_cmd: str | None = None
    restart_grace: float = 10.0
    events_file: str | None = None


class RecoveryCoordinator:
    def __init__(self, cfg: CoordinatorConfig):
        self.cfg = cfg
        self.pool = DependencyPool()
        self.events = EventLog(cfg.events_file)
        self._queue: queue.Queue[int | None] = queue.Queue()
        self._restarts: dict[int, float] = {}
        self._restart_lock = threading.Lock()
        self._children: list[subprocess.Popen] = []
        self.listener: netio.Listener | None = None
        self._worker: threading.Thread | None = None

    def start(self) -> RecoveryCoordinator:
        sock = netio.bind(self.cfg.host, self.cfg.port)
        # frames are read in accept order so a DEPENDENCY sent before a
        # CHECKPOINT is always in the pool when that session starts
        self.listener = netio.Listener(sock, self._handle, name="rm", inline=True).start()
        self._worker = threading.Thread(target=self._run_sessions, name="rm-sessions",
                                        daemon=True)
        self._worker.start()
        self.events.emit("start", port=self.listener.port)
        return self

    def stop(self) -> None:
        self._queue.put(None)
        if self.listener is not None:
            self.listener.stop()
        if self._worker is not None:
            self._worker.join(timeout=2 * self.cfg.session_timeout + 1)
        for child in self._children:
            if child.poll() is None:
                child.terminate()
        for child in self._children:
            try:
                child.wait(timeout=5)
            except subprocess.TimeoutExpired:
                child.kill()

    # ------------------------------------------------------------ dispatch

    def _handle(self, conn: netio.Connection) -> None:
        try:
            line = conn.recv_line(timeout=1.0)
        except (OSError, ValueError) as exc:
            log.warning("dropped connection: %s", exc)
            return
        if line is None:
            return
        try:
            msg = parse_control(line)
        except WireError as exc:
            log.warning("dropped malformed frame %r: %s", line, exc)
            self.events.emit("dropped", frame=line)
            return
        if isinstance(msg, Dependency):
            self.events.emit("dependency", a=msg.a, b=msg.b)
            self.pool.record(msg.a, msg.b)
            log.info("dependency %s-%s; pool %s", msg.a, msg.b,
                     [sorted(g) for g in self.pool.groups])
        elif isinstance(msg, CheckpointRequest):
            self.events.emit("checkpoint_request", branch=msg.branch)
            self._queue.put(msg.branch)
        elif isinstance(msg, Restart):
            self.events.emit("restart_request", branch=msg.branch)
            self.restart_server(msg.branch)
        else:
            log.warning("dropped unexpected frame %r", line)
            self.events.emit("dropped", frame=line)

    def _run_sessions(self) -> None:
        while True:
            branch = self._queue.get()
            if branch is None:
                return
            try:
                self.coordinate_checkpoint(branch)
            except Exception:
                log.exception("checkpoint session for %s crashed", branch)

    # ------------------------------------------------------------ 2PC

    def coordinate_checkpoint(self, requester: int) -> Outcome:
        group = self.pool.find(requester)
        created = group is None
        if created:
            group = frozenset({requester})
            self.pool.add_group(group)
        # requester first, then the rest in id order
        members = [requester] + sorted(group - {requester})
        timeout = self.cfg.session_timeout
        conns: dict[int, netio.Connection] = {}
        self.events.emit("session_start", requester=requester, group=members)
        outcome = Outcome.COMMITTED
        try:
            for b in members:
                try:
                    conn = netio.Connection.open(self.cfg.bank_host, b, timeout)
                except OSError as exc:
                    log.warning("checkpoint: branch %s unreachable: %s", b, exc)
                    outcome = Outcome.CANCELED
                    break
                try:
                    conn.send(ReadyForCheckpoint())
                    reply = conn.recv(timeout)
                except (OSError, WireError) as exc:
                    log.warning("checkpoint: branch %s not ready: %s", b, exc)
                    reply = None
                if not isinstance(reply, ReadyForCheckpoint):
                    conn.close()
                    outcome = Outcome.CANCELED
                    break
                conns[b] = conn

            if outcome is Outcome.CANCELED:
                for b, conn in conns.items():
                    try:
                        conn.send(CancelCheckpoint())
                        self.events.emit("cancel_sent", branch=b)
                    except OSError:
                        pass
            else:
                done = []
                for b in members:
                    try:
                        conns[b].send(DoCheckpoint())
                        reply = conns[b].recv(timeout)
                    except (OSError, WireError):
                        reply = None
                    if isinstance(reply, CheckpointDone):
                        done.append(b)
                if len(done) == len(members):
                    self.pool.remove(group)
                else:
                    outcome = Outcome.PARTIAL
                    log.error("checkpoint can not be done for all Bank Servers: "
                              "%s of %s finished", done, members)
        finally:
            for conn in conns.values():
                conn.close()
            if created and outcome is not Outcome.COMMITTED:
                self.pool.remove(group)
        self.events.emit("session_end", requester=requester, group=members,
                         outcome=outcome.value)
        log.info("checkpoint for %s: %s", members, outcome.value)
        return outcome

    # ------------------------------------------------------------ restart

    def restart_server(self, branch: int) -> bool:
        now = time.monotonic()
        with self._restart_lock:
            last = self._restarts.get(branch)
            if last is not None and now - last < self.cfg.restart_grace:
                log.info("restart of %s already in flight", branch)
                self.events.emit("restart_suppressed", branch=branch)
                return False
            self._restarts[branch] = now
        if not self.cfg.restart_cmd:
            log.error("cannot restart branch %s: no restart command configured", branch)
            self.events.emit("restart_failed", branch=branch, error="unconfigured")
            return False
        argv = shlex.split(self.cfg.restart_cmd.format(branch=branch))
        try:
            child = subprocess.Popen(argv, stdin=subprocess.DEVNULL)
        except OSError as exc:
            log.error("restart of branch %s failed: %s", branch, exc)
            self.events.emit("restart_failed", branch=branch, error=str(exc))
            return False
        self._children.append(child)
        self.events.emit("restart_spawned", branch=branch, pid=child.pid)
        log.info("restarted branch %s as pid %s", branch, child.pid)
        return True


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bankrm", description="Run the recovery module.")
    add_dataclass_flags(parser, CoordinatorConfig)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s rm %(levelname)s %(message)s")
    try:
        rm = RecoveryCoordinator(resolve(CoordinatorConfig, args, prefix="BANKRM")).start()
    except (ValueError, OSError) as exc:
        print(f"bankrm: {exc}", file=sys.stderr)
        return 1
    done = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: done.set())
    signal.signal(signal.SIGINT, lambda *_: done.set())
    while not done.wait(0.5):
        pass
    rm.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

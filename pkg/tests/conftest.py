import socket
import threading
import time

import pytest

from faultbank import netio
from faultbank.server import BankServer, ServerConfig
from faultbank.wire import CheckpointDone, DoCheckpoint, ReadyForCheckpoint, WireError


class SimulatedCrash(Exception):
    """Raised by an in-process server where a real one would exit."""


def wait_until(predicate, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > deadline:
            return False
        time.sleep(interval)
    return True


class FrameSink:
    """Listener that records every control frame it is sent."""

    def __init__(self, port: int = 0):
        self.frames = []
        self._lock = threading.Lock()
        self.listener = netio.Listener(netio.bind("127.0.0.1", port), self._handle,
                                       name="sink", inline=True).start()

    @property
    def port(self) -> int:
        return self.listener.port

    def _handle(self, conn):
        try:
            msg = conn.recv(timeout=2.0)
        except (OSError, WireError):
            return
        if msg is not None:
            with self._lock:
                self.frames.append(msg)

    def of_type(self, cls):
        with self._lock:
            return [m for m in self.frames if isinstance(m, cls)]

    def wait_for(self, cls, count=1, timeout=5.0):
        return wait_until(lambda: len(self.of_type(cls)) >= count, timeout)

    def stop(self):
        self.listener.stop()


class FakeBank:
    """Scripted checkpoint participant listening on its branch port.

    mode: ok | no_done | silent
    """

    def __init__(self, branch, mode="ok", hold=0.0):
        self.branch = branch
        self.mode = mode
        self.hold = hold
        self.received = []
        self.intervals = []
        self.listener = netio.Listener(netio.bind("127.0.0.1", branch), self._handle,
                                       name=f"fake-{branch}").start()

    def _handle(self, conn):
        try:
            msg = conn.recv(2.0)
            if msg is None:
                return
            self.received.append(msg)
            if self.mode == "silent":
                time.sleep(2.0)
                return
            start = time.monotonic()
            time.sleep(self.hold)
            conn.send(ReadyForCheckpoint())
            second = conn.recv(5.0)
            if second is None:
                return
            self.received.append(second)
            if isinstance(second, DoCheckpoint) and self.mode == "ok":
                conn.send(CheckpointDone())
            self.intervals.append((start, time.monotonic()))
        except (OSError, WireError):
            pass

    def stop(self):
        self.listener.stop()


def unused_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def rm_sink():
    sink = FrameSink()
    yield sink
    sink.stop()


@pytest.fixture
def monitor_sink():
    sink = FrameSink()
    yield sink
    sink.stop()


def raise_crash(code):
    raise SimulatedCrash(code)


@pytest.fixture
def banks(tmp_path, rm_sink, monitor_sink):
    """Factory for in-process bank servers sharing one data directory."""
    started = []
    data_dir = tmp_path / "data"

    def make(branch=1111, boot=True, **overrides):
        cfg = dict(branch=branch, data_dir=str(data_dir), rm_port=rm_sink.port,
                   monitor_port=monitor_sink.port, heartbeat_interval=0.05,
                   peer_reply_timeout=0.5, checkpoint_msg_timeout=0.5)
        cfg.update(overrides)
        server = BankServer(ServerConfig(**cfg), crash=raise_crash)
        if boot:
            server.boot()
            started.append(server)
        return server

    make.data_dir = data_dir
    make.rm = rm_sink
    make.monitor = monitor_sink
    yield make
    for server in started:
        server.shutdown()


# ------------------------------------------------------------ acceptance report

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        _criteria.append((number, title, report.passed, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, seconds in sorted(_criteria):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title} ({seconds:.2f}s)")

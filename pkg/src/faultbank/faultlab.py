"""Scenario harness: launch a cluster on loopback, inject crashes, check outcomes.

A scenario is a plain text file with one step per line. Blank lines and lines
starting with ``#`` are ignored. A step ending in ``:`` takes the indented
lines that follow as its body (used for exact file contents)::

    config threshold 10
    seed checkpoint 1111:
        BANK #1111:1111000 100.0
    start rm
    start bank 1111
    start bank 1112 crash=before_ok_send
    client 1112 open => 1112000
    snapshot sum 1111 1112
    client 1111 transfer 1111000 1112000 10.0 => ERR
    wait exit 1112
    start bank 1112
    assert sum 1111 1112 unchanged
    assert log 1111:
        BANK #1111:TRANSFER START 1111000-1112000
        BANK #1111:WITHDRAW 1111000 10.0
        BANK #1111:DEPOSIT 1111000 10.0
        BANK #1111:TRANSFER CANCEL 1111000-1112000

Steps
    config KEY VALUE            cluster setting (threshold, rm_port, monitor_port,
                                heartbeat, monitor_timeout, peer_timeout,
                                checkpoint_timeout, session_timeout, restart_grace)
    seed checkpoint|log B:      write a branch file before it starts
    start rm [restart=no]       recovery module (restarts banks unless restart=no)
    start monitor
    start bank B [crash=POINT] [threshold=N] [expect=fail]
    crash B POINT               arm a one-shot crash point in a running bank
    kill B|rm|monitor           SIGKILL
    client B CMD ARGS... [=> EXPECTED]
                                EXPECTED is an exact payload, OK, ERR, ERR:text or *
    wait SECONDS
    wait exit B | wait up B
    wait rm|monitor KIND [N]    until at least N (default 1) events of KIND
    wait bank B KIND [N]
    snapshot sum B...           remember the global balance of the branches
    assert sum B... unchanged | delta AMOUNT | = AMOUNT
    assert log|checkpoint B:    exact file contents (body)
    assert log|checkpoint B absent
    assert balance B ACCT AMOUNT
    assert shape B              careful-logging shape (the last block may be open)
    assert closed B             careful-logging shape with every block closed
    assert recovered B          live state equals checkpoint + replay of the log
    assert rm|monitor count KIND N
    assert bank B count KIND N
    assert rm outcome OUTCOME   outcome of the latest checkpoint session
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import shutil
import signal
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import faultbank
from faultbank import durability
from faultbank.bankctl import ClientError, call
from faultbank.server import CRASH_POINTS, crashpoint_file, pid_file
from faultbank.trace import read_events
from faultbank.wire import (
    AccountsReq,
    BalanceReq,
    DepositReq,
    LogRecord,
    OpenReq,
    TransferCancel,
    TransferCommit,
    TransferReq,
    TransferStart,
    WithdrawReq,
    format_amount,
    parse_amount,
    parse_log_line,
)


class ScenarioError(Exception):
    """The environment broke (port in use, spawn failure, bad script)."""


class AssertionFailed(Exception):
    pass


@dataclass
class Timing:
    heartbeat: float = 0.1
    monitor_timeout: float = 0.35
    peer_timeout: float = 0.5
    checkpoint_timeout: float = 1.0
    session_timeout: float = 1.0
    restart_grace: float = 2.0


def careful_logging_violations(records: Iterable[LogRecord],
                               allow_open_tail: bool = True) -> list[str]:
    """Problems with START/COMMIT/CANCEL bracketing in a parsed log."""
    problems = []
    open_pair = None
    for n, rec in enumerate(records, 1):
        if isinstance(rec, TransferStart):
            if open_pair is not None:
                problems.append(f"record {n}: START while {open_pair} is open")
            open_pair = (rec.src, rec.dst)
        elif isinstance(rec, (TransferCommit, TransferCancel)):
            if open_pair != (rec.src, rec.dst):
                problems.append(f"record {n}: {rec} closes {open_pair}")
            open_pair = None
    if open_pair is not None and not allow_open_tail:
        problems.append(f"block {open_pair} never closed")
    return problems


def _pid_alive(pid: int) -> bool:
    try:
        with open(f"/proc/{pid}/stat") as fh:
            return fh.read().rsplit(")", 1)[1].split()[0] != "Z"
    except (FileNotFoundError, IndexError):
        pass
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return not Path("/proc").is_dir()


def wait_for(predicate: Callable[[], bool], timeout: float, interval: float = 0.02) -> bool:
    deadline = time.monotonic() + timeout
    while True:
        if predicate():
            return True
        if time.monotonic() >= deadline:
            return False
        time.sleep(interval)


class Cluster:
    """Bank servers, recovery module and monitor as real processes on loopback."""

    def __init__(self, workdir: str | os.PathLike, timing: Timing | None = None,
                 rm_port: int = 3000, monitor_port: int = 3100, threshold: int = 10,
                 host: str = "127.0.0.1"):
        self.workdir = Path(workdir)
        self.data_dir = self.workdir / "data"
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.timing = timing or Timing()
        self.rm_port = rm_port
        self.monitor_port = monitor_port
        self.threshold = threshold
        self.host = host
        self.procs: dict[str, subprocess.Popen] = {}
        self._outputs = []
        src = str(Path(faultbank.__file__).resolve().parents[1])
        self.env = dict(os.environ)
        self.env["PYTHONPATH"] = os.pathsep.join(
            p for p in (src, self.env.get("PYTHONPATH")) if p)
        for key in [k for k in self.env if k.startswith(("BANK_", "BANKRM_", "BANKMON_"))]:
            del self.env[key]

    # ------------------------------------------------------------ paths

    def log_path(self, branch: int) -> Path:
        return durability.log_path(self.data_dir, branch)

    def checkpoint_path(self, branch: int) -> Path:
        return durability.checkpoint_path(self.data_dir, branch)

    def events_path(self, name: str) -> Path:
        return self.workdir / f"events_{name}.jsonl"

    def rm_events(self) -> list[dict]:
        return read_events(self.events_path("rm"))

    def monitor_events(self) -> list[dict]:
        return read_events(self.events_path("monitor"))

    def bank_events(self, branch: int) -> list[dict]:
        return read_events(self.events_path(str(branch)))

    def read_file(self, path: Path) -> str | None:
        try:
            return path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None

    # ------------------------------------------------------------ processes

    def _spawn(self, name: str, argv: list[str]) -> subprocess.Popen:
        out = open(self.workdir / f"{name.replace(':', '_')}.out", "ab")
        self._outputs.append(out)
        try:
            proc = subprocess.Popen(argv, env=self.env, stdin=subprocess.DEVNULL,
                                    stdout=out, stderr=subprocess.STDOUT)
        except OSError as exc:
            raise ScenarioError(f"cannot start {name}: {exc}") from exc
        self.procs[name] = proc
        return proc

    def bank_argv(self, branch: int | str, crash_point: str | None = None,
                  threshold: int | None = None) -> list[str]:
        t = self.timing
        argv = [
            sys.executable, "-m", "faultbank.server",
            "--branch", str(branch),
            "--data-dir", str(self.data_dir),
            "--rm-port", str(self.rm_port),
            "--monitor-port", str(self.monitor_port),
            "--heartbeat-interval", str(t.heartbeat),
            "--peer-reply-timeout", str(t.peer_timeout),
            "--checkpoint-msg-timeout", str(t.checkpoint_timeout),
            "--checkpoint-threshold", str(threshold or self.threshold),
            "--events-file", str(self.events_path(str(branch))),
        ]
        if crash_point:
            argv += ["--crash-point", crash_point]
        return argv

    def _port_open(self, port: int) -> bool:
        try:
            with socket.create_connection((self.host, port), timeout=0.2):
                return True
        except OSError:
            return False

    def _wait_started(self, name: str, proc: subprocess.Popen, ready: Callable[[], bool],
                      timeout: float = 10.0) -> None:
        def check():
            return proc.poll() is not None or ready()
        if not wait_for(check, timeout) or proc.poll() is not None:
            raise ScenarioError(f"{name} failed to start (exit {proc.poll()}); "
                                f"see {self.workdir}")

    def start_rm(self, restart: bool = True) -> None:
        t = self.timing
        argv = [sys.executable, "-m", "faultbank.coordinator",
                "--port", str(self.rm_port),
                "--session-timeout", str(t.session_timeout),
                "--restart-grace", str(t.restart_grace),
                "--events-file", str(self.events_path("rm"))]
        if restart:
            argv += ["--restart-cmd", shlex.join(self.bank_argv("{branch}"))]
        proc = self._spawn("rm", argv)
        self._wait_started("rm", proc, lambda: any(
            e["kind"] == "start" for e in self.rm_events()))

    def start_monitor(self) -> None:
        t = self.timing
        argv = [sys.executable, "-m", "faultbank.monitor",
                "--port", str(self.monitor_port),
                "--rm-port", str(self.rm_port),
                "--timeout", str(t.monitor_timeout),
                "--events-file", str(self.events_path("monitor"))]
        proc = self._spawn("monitor", argv)
        self._wait_started("monitor", proc, lambda: self._port_open(self.monitor_port))

    def start_bank(self, branch: int, crash_point: str | None = None,
                   threshold: int | None = None, expect_fail: bool = False) -> None:
        pf = pid_file(self.data_dir, branch)
        if pf.exists():
            pf.unlink()
        proc = self._spawn(f"bank:{branch}", self.bank_argv(branch, crash_point, threshold))
        if expect_fail:
            try:
                code = proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                raise AssertionFailed(f"bank {branch} started but was expected to fail")
            if code == 0:
                raise AssertionFailed(f"bank {branch} exited cleanly, expected failure")
            return
        self._wait_started(f"bank {branch}", proc, lambda: self.bank_up(branch))

    def bank_pid(self, branch: int) -> int | None:
        try:
            return int(pid_file(self.data_dir, branch).read_text())
        except (FileNotFoundError, ValueError):
            return None

    def bank_up(self, branch: int) -> bool:
        pid = self.bank_pid(branch)
        return pid is not None and _pid_alive(pid) and self._port_open(branch)

    def bank_exited(self, branch: int) -> bool:
        proc = self.procs.get(f"bank:{branch}")
        pid = self.bank_pid(branch)
        if proc is not None and (pid is None or pid == proc.pid):
            return proc.poll() is not None
        return pid is None or not _pid_alive(pid)

    def kill(self, name: str, sig: int = signal.SIGKILL) -> None:
        if name in ("rm", "monitor"):
            proc = self.procs.get(name)
            if proc is None:
                raise ScenarioError(f"{name} was never started")
            proc.send_signal(sig)
            proc.wait(timeout=10)
            return
        branch = int(name)
        pid = self.bank_pid(branch)
        if pid is None or not _pid_alive(pid):
            raise ScenarioError(f"bank {branch} is not running")
        os.kill(pid, sig)
        if not wait_for(lambda: self.bank_exited(branch), 10):
            raise ScenarioError(f"bank {branch} survived signal {sig}")

    def arm_crash(self, branch: int, point: str) -> None:
        if point not in CRASH_POINTS:
            raise ScenarioError(f"unknown crash point {point!r}")
        crashpoint_file(self.data_dir, branch).write_text(point)

    def close(self) -> None:
        for name in ("monitor", "rm"):
            proc = self.procs.get(name)
            if proc is not None and proc.poll() is None:
                proc.terminate()
                try:
                    proc.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    proc.kill()
        for pf in self.data_dir.glob("bank_*.pid"):
            try:
                pid = int(pf.read_text())
            except ValueError:
                continue
            if _pid_alive(pid):
                try:
                    os.kill(pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
        for proc in self.procs.values():
            if proc.poll() is None:
                proc.kill()
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                pass
        for out in self._outputs:
            out.close()

    def __enter__(self) -> Cluster:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------ clients

    def client(self, branch: int, request) -> str:
        return call(self.host, branch, request, timeout=10.0)

    def live_state(self, branch: int) -> dict[int, int]:
        payload = self.client(branch, AccountsReq())
        accts = [int(a) for a in payload.split()]
        return {a: parse_amount(self.client(branch, BalanceReq(a))) for a in accts}

    def global_sum(self, branches: Iterable[int]) -> int:
        return sum(sum(self.live_state(b).values()) for b in branches)

    def file_state(self, branch: int) -> dict[int, int]:
        """Branch state as a restart would rebuild it from disk."""
        state = durability.load_checkpoint(self.checkpoint_path(branch), branch)
        store = durability.LogStore(self.log_path(branch), branch)
        return durability.replay_records(state, store.records())[0].accounts

    def log_records(self, branch: int) -> list[LogRecord]:
        text = self.read_file(self.log_path(branch)) or ""
        return [parse_log_line(line, n)[1] for n, line in enumerate(text.splitlines(), 1)]


def global_sum(cluster: Cluster, branches: Iterable[int]) -> int:
    return cluster.global_sum(branches)


# ---------------------------------------------------------------- scenarios

@dataclass
class Step:
    lineno: int
    words: list[str]
    body: list[str] | None = None

    def __str__(self) -> str:
        return " ".join(self.words) + (":" if self.body is not None else "")


@dataclass
class Verdict:
    status: str  # pass | fail | error
    steps_run: int
    total_steps: int
    seconds: float
    failed_step: str | None = None
    lineno: int | None = None
    message: str | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def parse_scenario(text: str) -> list[Step]:
    steps: list[Step] = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i]
        i += 1
        lineno = i
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if raw[0] in " \t":
            raise ScenarioError(f"line {i}: unexpected indented line")
        body = None
        if stripped.endswith(":"):
            stripped = stripped[:-1]
            body = []
            while i < len(lines) and lines[i][:1] in (" ", "\t"):
                body.append(lines[i].strip())
                i += 1
        steps.append(Step(lineno, stripped.split(), body))
    return steps


class ScenarioRunner:
    CLIENT_COMMANDS = {"open", "deposit", "withdraw", "balance", "transfer", "accounts"}

    def __init__(self, workdir: str | os.PathLike, wait_timeout: float = 5.0):
        self.workdir = Path(workdir)
        self.wait_timeout = wait_timeout
        self.settings: dict[str, str] = {}
        self.cluster: Cluster | None = None
        self.snapshots: dict[tuple[int, ...], int] = {}

    def _cluster(self) -> Cluster:
        if self.cluster is None:
            s = self.settings
            t = Timing()
            for key, attr in (("heartbeat", "heartbeat"), ("monitor_timeout", "monitor_timeout"),
                              ("peer_timeout", "peer_timeout"),
                              ("checkpoint_timeout", "checkpoint_timeout"),
                              ("session_timeout", "session_timeout"),
                              ("restart_grace", "restart_grace")):
                if key in s:
                    setattr(t, attr, float(s[key]))
            self.cluster = Cluster(self.workdir, t,
                                   rm_port=int(s.get("rm_port", 3000)),
                                   monitor_port=int(s.get("monitor_port", 3100)),
                                   threshold=int(s.get("threshold", 10)))
        return self.cluster

    def run(self, steps: list[Step]) -> Verdict:
        start = time.monotonic()
        done = 0
        try:
            for step in steps:
                try:
                    self.execute(step)
                except AssertionFailed as exc:
                    return Verdict("fail", done, len(steps), time.monotonic() - start,
                                   str(step), step.lineno, str(exc))
                except (ScenarioError, OSError, ValueError, KeyError, IndexError) as exc:
                    return Verdict("error", done, len(steps), time.monotonic() - start,
                                   str(step), step.lineno, f"{type(exc).__name__}: {exc}")
                done += 1
        finally:
            if self.cluster is not None:
                self.cluster.close()
        return Verdict("pass", done, len(steps), time.monotonic() - start)

    # ------------------------------------------------------------ steps

    def execute(self, step: Step) -> None:
        head, args = step.words[0], step.words[1:]
        handler = getattr(self, f"do_{head}", None)
        if handler is None:
            raise ScenarioError(f"unknown step {head!r}")
        handler(args, step.body)

    def do_config(self, args, body):
        if self.cluster is not None:
            raise ScenarioError("config must come before the first start")
        key, value = args
        self.settings[key] = value

    def do_seed(self, args, body):
        kind, branch = args[0], int(args[1])
        c = self._cluster()
        path = c.checkpoint_path(branch) if kind == "checkpoint" else c.log_path(branch)
        path.write_text("".join(line + "\n" for line in body or []), encoding="utf-8")

    def do_start(self, args, body):
        c = self._cluster()
        what, opts = args[0], dict(a.split("=", 1) for a in args[1:] if "=" in a)
        if what == "rm":
            c.start_rm(restart=opts.get("restart", "yes") != "no")
        elif what == "monitor":
            c.start_monitor()
        elif what == "bank":
            branch = int(args[1])
            c.start_bank(branch, crash_point=opts.get("crash"),
                         threshold=int(opts["threshold"]) if "threshold" in opts else None,
                         expect_fail=opts.get("expect") == "fail")
        else:
            raise ScenarioError(f"cannot start {what!r}")

    def do_crash(self, args, body):
        self._cluster().arm_crash(int(args[0]), args[1])

    def do_kill(self, args, body):
        self._cluster().kill(args[0])

    def do_client(self, args, body):
        expected = None
        if "=>" in args:
            idx = args.index("=>")
            args, expected = args[:idx], " ".join(args[idx + 1:])
        branch, cmd, rest = int(args[0]), args[1], args[2:]
        request = self._request(cmd, rest)
        try:
            payload, err = self._cluster().client(branch, request), None
        except ClientError as exc:
            payload, err = None, str(exc)
        if expected is None or expected == "*":
            return
        if expected.startswith("ERR"):
            if err is None:
                raise AssertionFailed(f"expected an error, got OK {payload!r}")
            want = expected[4:].strip() if expected.startswith("ERR:") else ""
            if want and want not in err:
                raise AssertionFailed(f"expected error containing {want!r}, got {err!r}")
            return
        if err is not None:
            raise AssertionFailed(err)
        if expected != "OK" and payload != expected:
            raise AssertionFailed(f"expected {expected!r}, got {payload!r}")

    def _request(self, cmd: str, rest: list[str]):
        if cmd == "open":
            return OpenReq()
        if cmd == "accounts":
            return AccountsReq()
        if cmd == "balance":
            return BalanceReq(int(rest[0]))
        if cmd == "deposit":
            return DepositReq(int(rest[0]), parse_amount(rest[1]))
        if cmd == "withdraw":
            return WithdrawReq(int(rest[0]), parse_amount(rest[1]))
        if cmd == "transfer":
            return TransferReq(int(rest[0]), int(rest[1]), parse_amount(rest[2]))
        raise ScenarioError(f"unknown client command {cmd!r}")

    def _events(self, args) -> tuple[list[dict], list[str]]:
        c = self._cluster()
        if args[0] == "rm":
            return c.rm_events(), args[1:]
        if args[0] == "monitor":
            return c.monitor_events(), args[1:]
        if args[0] == "bank":
            return c.bank_events(int(args[1])), args[2:]
        raise ScenarioError(f"no event source {args[0]!r}")

    def do_wait(self, args, body):
        c = self._cluster()
        if len(args) == 1:
            time.sleep(float(args[0]))
            return
        if args[0] == "exit":
            ok = wait_for(lambda: c.bank_exited(int(args[1])), self.wait_timeout)
        elif args[0] == "up":
            ok = wait_for(lambda: c.bank_up(int(args[1])), self.wait_timeout)
        else:
            def enough():
                events, rest = self._events(args)
                need = int(rest[1]) if len(rest) > 1 else 1
                return sum(e["kind"] == rest[0] for e in events) >= need
            ok = wait_for(enough, self.wait_timeout)
        if not ok:
            raise AssertionFailed(f"timed out after {self.wait_timeout}s")

    def do_snapshot(self, args, body):
        if args[0] != "sum":
            raise ScenarioError("only 'snapshot sum' is supported")
        branches = tuple(int(a) for a in args[1:])
        self.snapshots[branches] = self._cluster().global_sum(branches)

    def do_assert(self, args, body):
        c = self._cluster()
        what = args[0]
        if what == "sum":
            i = 1
            while i < len(args) and args[i].isdigit():
                i += 1
            branches = tuple(int(a) for a in args[1:i])
            now = c.global_sum(branches)
            mode = args[i]
            if mode == "=":
                want = parse_amount(args[i + 1])
            else:
                if branches not in self.snapshots:
                    raise ScenarioError(f"no snapshot for {branches}")
                want = self.snapshots[branches]
                if mode == "delta":
                    text = args[i + 1]
                    sign = -1 if text.startswith("-") else 1
                    want += sign * parse_amount(text.lstrip("+-"))
                elif mode != "unchanged":
                    raise ScenarioError(f"unknown sum check {mode!r}")
            if now != want:
                raise AssertionFailed(f"global sum {now} cents, expected {want}")
        elif what in ("log", "checkpoint"):
            branch = int(args[1])
            path = c.log_path(branch) if what == "log" else c.checkpoint_path(branch)
            actual = c.read_file(path)
            if len(args) > 2 and args[2] == "absent":
                if actual:
                    raise AssertionFailed(f"{path.name} present:\n{actual}")
                return
            want = "".join(line + "\n" for line in body or [])
            if actual != want:
                raise AssertionFailed(f"{path.name} differs.\nexpected:\n{want}\nactual:\n{actual}")
        elif what == "balance":
            branch, acct, amt = int(args[1]), int(args[2]), parse_amount(args[3])
            got = parse_amount(c.client(branch, BalanceReq(acct)))
            if got != amt:
                raise AssertionFailed(f"balance of {acct} is {format_amount(got)}")
        elif what in ("shape", "closed"):
            branch = int(args[1])
            problems = careful_logging_violations(c.log_records(branch),
                                                  allow_open_tail=what == "shape")
            if problems:
                raise AssertionFailed("; ".join(problems))
        elif what == "recovered":
            branch = int(args[1])
            live, disk = c.live_state(branch), c.file_state(branch)
            if live != disk:
                raise AssertionFailed(f"live {live} != recovered {disk}")
        elif what in ("rm", "monitor", "bank"):
            events, rest = self._events(args)
            if rest[0] == "count":
                n = sum(e["kind"] == rest[1] for e in events)
                if n != int(rest[2]):
                    raise AssertionFailed(f"{n} {rest[1]} events, expected {rest[2]}")
            elif rest[0] == "outcome":
                ends = [e for e in events if e["kind"] == "session_end"]
                if not ends or ends[-1]["outcome"] != rest[1]:
                    got = ends[-1]["outcome"] if ends else None
                    raise AssertionFailed(f"last session outcome {got}, expected {rest[1]}")
            else:
                raise ScenarioError(f"unknown event check {rest[0]!r}")
        else:
            raise ScenarioError(f"unknown assertion {what!r}")


def run_scenario(source: str | os.PathLike | list[Step], workdir: str | os.PathLike | None = None,
                 keep: bool = False) -> Verdict:
    if isinstance(source, list):
        steps = source
    else:
        steps = parse_scenario(Path(source).read_text(encoding="utf-8"))
    tmp = None
    if workdir is None:
        tmp = tempfile.mkdtemp(prefix="faultlab-")
        workdir = tmp
    try:
        return ScenarioRunner(workdir).run(steps)
    finally:
        if tmp is not None and not keep:
            shutil.rmtree(tmp, ignore_errors=True)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="faultlab", description="Run bank fault scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one or more scenario files")
    run.add_argument("scenarios", nargs="+")
    run.add_argument("--workdir", help="keep each scenario's files in WORKDIR/<name> "
                                       "instead of a temp dir")
    run.add_argument("--json", action="store_true", help="one JSON verdict per line")
    args = parser.parse_args(argv)

    worst = 0
    for path in args.scenarios:
        workdir = None
        if args.workdir:
            # each scenario gets a clean subdirectory; a previous run's files are dropped
            workdir = Path(args.workdir) / Path(path).stem
            shutil.rmtree(workdir, ignore_errors=True)
            workdir.mkdir(parents=True)
        try:
            verdict = run_scenario(path, workdir)
        except ScenarioError as exc:
            verdict = Verdict("error", 0, 0, 0.0, message=str(exc))
        if args.json:
            print(json.dumps({"scenario": path, **verdict.__dict__}))
        else:
            line = f"{verdict.status.upper():5} {path} ({verdict.steps_run}/{verdict.total_steps} " \
                   f"steps, {verdict.seconds:.2f}s)"
            if not verdict.passed:
                line += f"\n      line {verdict.lineno}: {verdict.failed_step}\n      {verdict.message}"
            print(line)
        worst = max(worst, {"pass": 0, "fail": 1, "error": 2}[verdict.status])
    return worst


if __name__ == "__main__":
    sys.exit(main())

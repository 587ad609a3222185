"""The branch server process.

Startup recovers the branch from its checkpoint and message log before any
socket is accepted. After that one listener on port = branch id serves client
requests, peer TRANSFER frames and checkpoint sessions from the recovery
coordinator, while a separate thread registers with the monitor and sends
heartbeats.

Transfers use careful logging: every step is written to the log, and a
transfer that cannot finish is compensated (the built-in rollback) rather
than undone during recovery.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import socket
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from faultbank import durability, ledger, netio
from faultbank.config import add_dataclass_flags, resolve
from faultbank.durability import DurabilityError, LogStore
from faultbank.ledger import BranchState, LedgerError
from faultbank.trace import EventLog
from faultbank.wire import (
    BRANCH_MAX,
    BRANCH_MIN,
    CLIENT_REQUESTS,
    AccountsReq,
    BalanceReq,
    CheckpointDone,
    CheckpointRequest,
    ControlMessage,
    Dependency,
    Deposit,
    DepositReq,
    DoCheckpoint,
    Err,
    ErrText,
    Heartbeat,
    Ok,
    OkValue,
    Open,
    OpenReq,
    ReadyForCheckpoint,
    Register,
    Transfer,
    TransferCancel,
    TransferCommit,
    TransferReq,
    TransferStart,
    Withdraw,
    WithdrawReq,
    WireError,
    branch_of,
    format_amount,
    parse_control,
)

log = logging.getLogger(__name__)

CRASH_POINTS = (
    "after_start_log",
    "after_withdraw_log",
    "before_peer_send",
    "after_peer_send",
    "after_deposit_log",
    "before_ok_send",
    "after_ok_send",
    "before_commit_log",
    "before_checkpoint_write",
    "after_checkpoint_write",
)
CRASH_EXIT_CODE = 70


class StartupError(RuntimeError):
    pass


@dataclass
class ServerConfig:
    branch: int | None = None
    data_dir: str = "."
    host: str = "127.0.0.1"
    advertise_host: str | None = None
    peer_host: str = "127.0.0.1"
    rm_host: str = "127.0.0.1"
    rm_port: int = 3000
    rm_checkpoint_port: int = 3001  # reserved; sessions ride the branch port
    monitor_host: str = "127.0.0.1"
    monitor_port: int = 3100
    heartbeat_interval: float = 30.0
    checkpoint_threshold: int = 10
    peer_reply_timeout: float = 5.0
    checkpoint_msg_timeout: float = 5.0
    port_min: int = BRANCH_MIN
    port_max: int = BRANCH_MAX
    crash_point: str | None = None
    events_file: str | None = None

    def __post_init__(self):
        for name in ("heartbeat_interval", "peer_reply_timeout", "checkpoint_msg_timeout"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.checkpoint_threshold < 1:
            raise ValueError("checkpoint_threshold must be at least 1")
        if self.crash_point is not None and self.crash_point not in CRASH_POINTS:
            raise ValueError(f"unknown crash point {self.crash_point!r}")
        if self.branch is not None and not self.port_min <= self.branch <= self.port_max:
            raise ValueError(f"branch {self.branch} outside {self.port_min}-{self.port_max}")


def crashpoint_file(data_dir: str | os.PathLike, branch: int) -> Path:
    return Path(data_dir) / f"crashpoint_{branch}"


def pid_file(data_dir: str | os.PathLike, branch: int) -> Path:
    return Path(data_dir) / f"bank_{branch}.pid"


def _inverse(rec):
    if isinstance(rec, Deposit):
        return Withdraw(rec.acct, rec.amt)
    return Deposit(rec.acct, rec.amt)


class BankServer:
    def __init__(self, cfg: ServerConfig, crash: Callable[[int], None] = os._exit):
        self.cfg = cfg
        self._crash = crash
        self.events = EventLog(cfg.events_file)
        self.branch: int | None = cfg.branch
        self.state: BranchState | None = None
        self.store: LogStore | None = None
        self.listener: netio.Listener | None = None
        # one mutation, transfer or checkpoint at a time
        self._op_lock = threading.RLock()
        self._state_lock = threading.Lock()
        self._stop = threading.Event()
        self._hb_thread: threading.Thread | None = None
        self.in_transfer = False
        self._checkpoint_requested_at: float | None = None

    # ------------------------------------------------------------ startup

    def _claim_port(self) -> socket.socket:
        if self.branch is not None:
            try:
                return netio.bind(self.cfg.host, self.branch)
            except OSError as exc:
                raise StartupError(f"cannot bind port {self.branch}: {exc}") from exc
        for port in range(self.cfg.port_min, self.cfg.port_max + 1):
            try:
                sock = netio.bind(self.cfg.host, port)
            except OSError:
                continue
            self.branch = port
            return sock
        raise StartupError(f"no free port in {self.cfg.port_min}-{self.cfg.port_max}")

    def boot(self) -> BankServer:
        sock = self._claim_port()
        try:
            self._recover()
        except Exception:
            sock.close()
            raise
        self.listener = netio.Listener(sock, self._handle, name=f"bank-{self.branch}").start()
        pid_file(self.cfg.data_dir, self.branch).write_text(f"{os.getpid()}\n")
        self.events.emit("boot", branch=self.branch, accounts=len(self.state.accounts),
                         total=self.state.total(), records=self.store.record_count)
        log.info("branch %s up: %d accounts, %d log records", self.branch,
                 len(self.state.accounts), self.store.record_count)
        self._hb_thread = threading.Thread(target=self.heartbeat_loop,
                                           name=f"heartbeat-{self.branch}", daemon=True)
        self._hb_thread.start()
        return self

    def _recover(self) -> None:
        data_dir = self.cfg.data_dir
        Path(data_dir).mkdir(parents=True, exist_ok=True)
        durability.recover_files(data_dir, self.branch)
        state = durability.load_checkpoint(durability.checkpoint_path(data_dir, self.branch),
                                           self.branch)
        self.store = LogStore(durability.log_path(data_dir, self.branch), self.branch)
        self.state, dangling = durability.replay_records(state, self.store.records())
        if dangling is not None:
            # finish the rollback the crash interrupted so later records stay outside the block
            for rec in reversed(dangling.buffered):
                self.store.append(_inverse(rec))
            self.store.append(TransferCancel(dangling.src, dangling.dst))
            self.events.emit("sealed", src=dangling.src, dst=dangling.dst,
                             buffered=len(dangling.buffered))
            log.warning("branch %s: rolled back transfer %s-%s left open by a crash",
                        self.branch, dangling.src, dangling.dst)

    def shutdown(self) -> None:
        self._stop.set()
        if self.listener is not None:
            self.listener.stop()
        if self._hb_thread is not None:
            self._hb_thread.join(timeout=2)
        if self.store is not None:
            self.store.close()

    # ------------------------------------------------------------ helpers

    def _crash_point(self, name: str) -> None:
        point = self.cfg.crash_point
        marker = crashpoint_file(self.cfg.data_dir, self.branch)
        if point is None and marker.exists():
            point = marker.read_text().strip()
            if point == name:
                marker.unlink()
        if point == name:
            log.error("branch %s: crash point %s reached", self.branch, name)
            self._crash(CRASH_EXIT_CODE)

    def _fatal(self, exc: Exception) -> None:
        # memory and log disagree mid-transfer; only a restart from disk is safe
        log.critical("branch %s: stable storage failed during a transfer: %s", self.branch, exc)
        self._crash(1)

    def _append(self, rec) -> int:
        return self.store.append(rec)

    def maybe_request_checkpoint(self) -> None:
        if self.in_transfer or self.store.record_count < self.cfg.checkpoint_threshold:
            return
        now = time.monotonic()
        pending = self._checkpoint_requested_at
        if pending is not None and now - pending < 4 * self.cfg.checkpoint_msg_timeout:
            return
        try:
            netio.notify(self.cfg.rm_host, self.cfg.rm_port, CheckpointRequest(self.branch),
                         timeout=min(1.0, self.cfg.checkpoint_msg_timeout))
        except OSError as exc:
            log.warning("branch %s: checkpoint request not delivered: %s", self.branch, exc)
            return
        self._checkpoint_requested_at = now
        self.events.emit("checkpoint_requested", records=self.store.record_count)

    # ------------------------------------------------------------ dispatch

    def _handle(self, conn: netio.Connection) -> None:
        try:
            line = conn.recv_line(timeout=self.cfg.peer_reply_timeout)
        except (OSError, ValueError):
            return
        if line is None:
            return
        try:
            msg = parse_control(line)
        except WireError as exc:
            self._reply(conn, ErrText(f"malformed request: {exc}"))
            return
        if isinstance(msg, CLIENT_REQUESTS):
            self._reply(conn, self.serve_client(msg))
        elif isinstance(msg, Transfer):
            self.transfer_receiving(conn, msg)
        elif isinstance(msg, ReadyForCheckpoint):
            self.checkpoint_follower(conn)
        else:
            self._reply(conn, ErrText(f"unexpected message {line.split(' ')[0]}"))

    def _reply(self, conn: netio.Connection, msg: ControlMessage) -> bool:
        try:
            conn.send(msg)
            return True
        except OSError:
            return False

    # ------------------------------------------------------------ clients

    def serve_client(self, req) -> OkValue | ErrText:
        try:
            if isinstance(req, BalanceReq):
                with self._state_lock:
                    return OkValue(format_amount(ledger.balance(self.state, req.acct)))
            if isinstance(req, AccountsReq):
                with self._state_lock:
                    accts = ledger.list_accounts(self.state)
                return OkValue(" ".join(map(str, accts)))
            if isinstance(req, TransferReq):
                return self.transfer_leading(req.src, req.dst, req.amt)
            with self._op_lock:
                if isinstance(req, OpenReq):
                    result = self._logged_open()
                elif isinstance(req, DepositReq):
                    result = self._logged(req.acct, req.amt, Deposit)
                elif isinstance(req, WithdrawReq):
                    result = self._logged(req.acct, req.amt, Withdraw)
                else:
                    return ErrText(f"unsupported request {type(req).__name__}")
                self.maybe_request_checkpoint()
                return OkValue(result)
        except LedgerError as exc:
            return ErrText(str(exc))
        except DurabilityError as exc:
            log.error("branch %s: %s", self.branch, exc)
            return ErrText(f"Operation not recorded: {exc}")

    def _logged_open(self) -> str:
        with self._state_lock:
            acct = ledger.open_account(self.state)
        try:
            self._append(Open(acct))
        except DurabilityError:
            with self._state_lock:
                del self.state.accounts[acct]
                self.state.next_seq -= 1
            raise
        return str(acct)

    def _logged(self, acct: int, amt: int, kind) -> str:
        op, undo = (ledger.deposit, ledger.withdraw) if kind is Deposit else \
                   (ledger.withdraw, ledger.deposit)
        with self._state_lock:
            bal = op(self.state, acct, amt)
        try:
            self._append(kind(acct, amt))
        except DurabilityError:
            with self._state_lock:
                undo(self.state, acct, amt)
            raise
        return format_amount(bal)

    # ------------------------------------------------------------ transfer

    def _apply(self, fn, acct: int, amt: int) -> int:
        with self._state_lock:
            return fn(self.state, acct, amt)

    def transfer_leading(self, src: int, dst: int, amt: int) -> OkValue | ErrText:
        with self._op_lock:
            with self._state_lock:
                if branch_of(src) != self.branch:
                    raise ledger.UnknownAccount(src)
                if amt <= 0:
                    raise LedgerError(f"Amount must be positive, got {amt} cents.")
                if ledger.balance(self.state, src) < amt:
                    raise ledger.InsufficientFunds(f"Insufficient funds in account #{src}.")
                local = branch_of(dst) == self.branch
                if local:
                    ledger.balance(self.state, dst)
            self.in_transfer = True
            try:
                outcome = self._transfer_steps(src, dst, amt, local)
            except DurabilityError as exc:
                self._fatal(exc)
                raise
            finally:
                self.in_transfer = False
            self.maybe_request_checkpoint()
            return outcome

    def _transfer_steps(self, src: int, dst: int, amt: int, local: bool) -> OkValue | ErrText:
        self._append(TransferStart(src, dst))
        self._crash_point("after_start_log")
        self._apply(ledger.withdraw, src, amt)
        self._append(Withdraw(src, amt))
        self._crash_point("after_withdraw_log")

        if local:
            self._apply(ledger.deposit, dst, amt)
            self._append(Deposit(dst, amt))
            self._append(TransferCommit(src, dst))
            self.events.emit("transfer", role="leader", src=src, dst=dst, amt=amt,
                             committed=True)
            return OkValue(format_amount(self.state.accounts[src]))

        peer = branch_of(dst)
        reply: ControlMessage | None = None
        conn: netio.Connection | None = None
        self._crash_point("before_peer_send")
        try:
            conn = netio.Connection.open(self.cfg.peer_host, peer, self.cfg.peer_reply_timeout)
            conn.send(Transfer(self.branch, src, dst, amt))
            self._crash_point("after_peer_send")
            reply = conn.recv(self.cfg.peer_reply_timeout)
        except (OSError, WireError) as exc:
            log.warning("branch %s: transfer to branch %s failed: %s", self.branch, peer, exc)

        try:
            if isinstance(reply, Ok):
                self._crash_point("before_commit_log")
                self._append(TransferCommit(src, dst))
                # tells the receiver our commit is durable
                self._reply(conn, Ok(self.branch))
                self.events.emit("transfer", role="leader", src=src, dst=dst, amt=amt,
                                 committed=True)
                try:
                    netio.notify(self.cfg.rm_host, self.cfg.rm_port,
                                 Dependency(self.branch, peer), timeout=1.0)
                except OSError as exc:
                    log.warning("branch %s: dependency not reported: %s", self.branch, exc)
                return OkValue(format_amount(self.state.accounts[src]))
        finally:
            if conn is not None:
                conn.close()

        self._apply(ledger.deposit, src, amt)
        self._append(Deposit(src, amt))
        self._append(TransferCancel(src, dst))
        self.events.emit("transfer", role="leader", src=src, dst=dst, amt=amt, committed=False)
        if isinstance(reply, Err):
            return ErrText(reply.msg)
        return ErrText(f"Bank Server #{peer} did not complete the transfer.")

    def transfer_receiving(self, conn: netio.Connection, msg: Transfer) -> None:
        with self._op_lock:
            with self._state_lock:
                problem = None
                if branch_of(msg.dst) != self.branch or msg.dst not in self.state.accounts:
                    problem = str(ledger.UnknownAccount(msg.dst))
                elif msg.amt <= 0:
                    problem = f"Amount must be positive, got {msg.amt} cents."
            if problem is not None:
                self._reply(conn, Err(self.branch, problem))
                return
            self.in_transfer = True
            try:
                self._receive_steps(conn, msg)
            except DurabilityError as exc:
                self._fatal(exc)
                raise
            finally:
                self.in_transfer = False
            self.maybe_request_checkpoint()

    def _receive_steps(self, conn: netio.Connection, msg: Transfer) -> None:
        self._append(TransferStart(msg.src, msg.dst))
        self._apply(ledger.deposit, msg.dst, msg.amt)
        self._append(Deposit(msg.dst, msg.amt))
        self._crash_point("after_deposit_log")
        self._crash_point("before_ok_send")
        ack = None
        try:
            conn.send(Ok(self.branch))
            self._crash_point("after_ok_send")
            ack = conn.recv(self.cfg.peer_reply_timeout)
        except (OSError, WireError) as exc:
            log.warning("branch %s: OK to branch %s not confirmed: %s",
                        self.branch, msg.from_branch, exc)
        if isinstance(ack, Ok):
            self._crash_point("before_commit_log")
            self._append(TransferCommit(msg.src, msg.dst))
            committed = True
        else:
            self._apply(ledger.withdraw, msg.dst, msg.amt)
            self._append(Withdraw(msg.dst, msg.amt))
            self._append(TransferCancel(msg.src, msg.dst))
            committed = False
        self.events.emit("transfer", role="receiver", src=msg.src, dst=msg.dst, amt=msg.amt,
                         committed=committed)

    # ------------------------------------------------------------ checkpoint

    def checkpoint_follower(self, conn: netio.Connection) -> None:
        with self._op_lock:
            self.events.emit("checkpoint_ready")
            outcome = "canceled"
            try:
                conn.send(ReadyForCheckpoint())
                msg = conn.recv(self.cfg.checkpoint_msg_timeout)
            except (OSError, WireError) as exc:
                log.warning("branch %s: checkpoint session broken: %s", self.branch, exc)
                msg = None
            if isinstance(msg, DoCheckpoint):
                self._crash_point("before_checkpoint_write")
                try:
                    with self._state_lock:
                        snapshot = self.state.copy()
                    durability.commit_checkpoint(
                        self.cfg.data_dir, self.store, snapshot,
                        after_write=lambda: self._crash_point("after_checkpoint_write"))
                    outcome = "done"
                except DurabilityError as exc:
                    log.error("branch %s: %s", self.branch, exc)
                    outcome = "failed"
                if outcome == "done":
                    self._reply(conn, CheckpointDone())
            elif msg is None:
                outcome = "timeout"
            self._checkpoint_requested_at = None
            self.events.emit("checkpoint_" + outcome, received=type(msg).__name__)
            log.info("branch %s: checkpoint session %s", self.branch, outcome)

    # ------------------------------------------------------------ heartbeat

    def heartbeat_loop(self) -> None:
        host = self.cfg.advertise_host or self.cfg.host
        registered = False
        quiet = False
        while True:
            msg = Heartbeat(self.branch) if registered else Register(host, self.branch)
            try:
                netio.notify(self.cfg.monitor_host, self.cfg.monitor_port, msg,
                             timeout=min(1.0, self.cfg.heartbeat_interval))
                registered = True
                quiet = False
            except OSError as exc:
                if not quiet:
                    log.warning("branch %s: monitor unreachable: %s", self.branch, exc)
                    quiet = True
            if self._stop.wait(self.cfg.heartbeat_interval):
                return


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bankserver", description="Run one bank branch server.")
    add_dataclass_flags(parser, ServerConfig)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s bank %(levelname)s %(message)s")
    try:
        cfg = resolve(ServerConfig, args, prefix="BANK")
        server = BankServer(cfg).boot()
    except (StartupError, ValueError, OSError) as exc:
        print(f"bankserver: {exc}", file=sys.stderr)
        return 1

    done = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: done.set())
    signal.signal(signal.SIGINT, lambda *_: done.set())
    while not done.wait(0.5):
        pass
    server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Stable storage for one branch: the message log and the checkpoint file.

Replacing the checkpoint and dropping the log must look atomic to a reader
that comes along after a crash, otherwise the old log would be replayed on top
of a checkpoint that already contains it. :func:`commit_checkpoint` therefore
retires the log by rename before swapping the checkpoint in, and
:func:`recover_files` finishes or undoes whichever step was interrupted.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from faultbank import ledger
from faultbank.ledger import BranchState
from faultbank.wire import (
    CheckpointEntry,
    CorruptionError,
    Deposit,
    LogRecord,
    Open,
    TransferCancel,
    TransferCommit,
    TransferStart,
    Withdraw,
    branch_of,
    encode_checkpoint_line,
    encode_log_line,
    parse_checkpoint_line,
    parse_log_line,
)

log = logging.getLogger(__name__)


class DurabilityError(OSError):
    """Stable storage refused a write."""


def log_path(data_dir: str | os.PathLike, branch: int) -> Path:
    return Path(data_dir) / f"msglog_{branch}.log"


def checkpoint_path(data_dir: str | os.PathLike, branch: int) -> Path:
    return Path(data_dir) / f"checkpoint_{branch}.log"


def _tmp(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


def _retired(path: Path) -> Path:
    return path.with_name(path.name + ".retired")


def _fsync_dir(path: Path) -> None:
    fd = os.open(path.parent, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class LogStore:
    """Append-only message log of one branch."""

    def __init__(self, path: str | os.PathLike, branch: int):
        self.path = Path(path)
        self.branch = branch
        self._lock = threading.Lock()
        self._fh = None
        self.record_count = self._count_lines()

    def _count_lines(self) -> int:
        try:
            with open(self.path, "rb") as fh:
                return sum(1 for _ in fh)
        except FileNotFoundError:
            return 0

    def read_lines(self) -> list[str]:
        try:
            with open(self.path, encoding="utf-8") as fh:
                return [line.rstrip("\n") for line in fh]
        except FileNotFoundError:
            return []

    def records(self) -> list[LogRecord]:
        out = []
        for lineno, line in enumerate(self.read_lines(), 1):
            branch, rec = parse_log_line(line, lineno)
            if branch != self.branch:
                raise CorruptionError(f"record tagged for branch {branch}, expected "
                                      f"{self.branch}", lineno)
            out.append(rec)
        return out

    def append(self, rec: LogRecord) -> int:
        line = (encode_log_line(self.branch, rec) + "\n").encode("utf-8")
        with self._lock:
            size = None
            try:
                if self._fh is None:
                    self._fh = open(self.path, "ab")
                size = self._fh.tell()
                self._fh.write(line)
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                self._close_quietly()
                if size is not None:
                    # a record the caller will report as failed must not be replayed later
                    try:
                        os.truncate(self.path, size)
                    except OSError:
                        log.error("cannot cut failed record from %s", self.path)
                raise DurabilityError(f"cannot append to {self.path}: {exc}") from exc
            self.record_count += 1
            return self.record_count

    def close(self) -> None:
        with self._lock:
            self._close_quietly()

    def _close_quietly(self) -> None:
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError:
                pass
            self._fh = None

    def retire(self) -> Path | None:
        """Move the log aside so the next append starts a fresh file."""
        with self._lock:
            self._close_quietly()
            if not self.path.exists():
                return None
            target = _retired(self.path)
            os.replace(self.path, target)
            _fsync_dir(self.path)
            self.record_count = 0
            return target


def delete_log(store: LogStore) -> None:
    with store._lock:
        store._close_quietly()
        try:
            store.path.unlink()
        except FileNotFoundError:
            pass
        except OSError as exc:
            raise DurabilityError(f"cannot delete {store.path}: {exc}") from exc
        store.record_count = 0


def encode_checkpoint(state: BranchState) -> str:
    return "".join(
        encode_checkpoint_line(state.branch, CheckpointEntry(acct, state.accounts[acct])) + "\n"
        for acct in ledger.list_accounts(state)
    )


def write_checkpoint(path: str | os.PathLike, state: BranchState,
                     before_rename: Callable[[], None] | None = None) -> None:
    path = Path(path)
    tmp = _tmp(path)
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(encode_checkpoint(state))
            fh.flush()
            os.fsync(fh.fileno())
        if before_rename is not None:
            before_rename()
        os.replace(tmp, path)
        _fsync_dir(path)
    except OSError as exc:
        try:
            tmp.unlink()
        except OSError:
            pass
        raise DurabilityError(f"checkpoint aborted: {exc}") from exc


def load_checkpoint(path: str | os.PathLike, branch: int) -> BranchState:
    state = BranchState(branch)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
    except FileNotFoundError:
        return state
    for lineno, line in enumerate(lines, 1):
        tag, entry = parse_checkpoint_line(line, lineno)
        if tag != branch:
            raise CorruptionError(f"entry tagged for branch {tag}, expected {branch}", lineno)
        if branch_of(entry.acct) != branch:
            raise CorruptionError(f"account {entry.acct} is not in branch {branch}", lineno)
        if entry.acct in state.accounts:
            raise CorruptionError(f"duplicate account {entry.acct}", lineno)
        state.accounts[entry.acct] = entry.balance
    return BranchState(branch, state.accounts)


@dataclass
class ReplayBlock:
    src: int
    dst: int
    buffered: list[LogRecord] = field(default_factory=list)


def replay_records(state: BranchState,
                   records: Iterable[LogRecord]) -> tuple[BranchState, ReplayBlock | None]:
    """Apply ``records`` to a copy of ``state``.

    Returns the new state and the transfer block left open at end of input,
    whose buffered records were not applied.
    """
    s = state.copy()
    block: ReplayBlock | None = None

    def apply(rec: LogRecord, n: int) -> None:
        try:
            if isinstance(rec, Deposit):
                ledger.deposit(s, rec.acct, rec.amt)
            else:
                ledger.withdraw(s, rec.acct, rec.amt)
        except ledger.LedgerError as exc:
            raise CorruptionError(f"replayed {rec} failed: {exc}", n) from None

    for n, rec in enumerate(records, 1):
        if isinstance(rec, Open):
            if block is not None:
                raise CorruptionError("OPEN inside a transfer block", n)
            try:
                ledger.restore_account(s, rec.acct)
            except ledger.LedgerError as exc:
                raise CorruptionError(str(exc), n) from None
        elif isinstance(rec, (Deposit, Withdraw)):
            if block is not None:
                block.buffered.append(rec)
            else:
                apply(rec, n)
        elif isinstance(rec, TransferStart):
            if block is not None:
                raise CorruptionError("TRANSFER START inside an open transfer block", n)
            block = ReplayBlock(rec.src, rec.dst)
        elif isinstance(rec, (TransferCommit, TransferCancel)):
            if block is None or (block.src, block.dst) != (rec.src, rec.dst):
                raise CorruptionError(f"{rec} does not close the open transfer block", n)
            for buffered in block.buffered:
                apply(buffered, n)
            block = None
        else:
            raise CorruptionError(f"not a log record: {rec!r}", n)
    return s, block


def replay(state: BranchState, store: LogStore) -> BranchState:
    return replay_records(state, store.records())[0]


def recover_files(data_dir: str | os.PathLike, branch: int) -> None:
    """Settle files left behind by a checkpoint that was cut short."""
    cp = checkpoint_path(data_dir, branch)
    lg = log_path(data_dir, branch)
    tmp, retired = _tmp(cp), _retired(lg)
    if retired.exists():
        if tmp.exists():
            # new checkpoint never landed: the retired log is still needed
            if lg.exists():
                raise CorruptionError(f"both {lg.name} and {retired.name} present")
            os.replace(retired, lg)
            log.warning("branch %s: restored message log from interrupted checkpoint", branch)
        else:
            retired.unlink()
            log.warning("branch %s: dropped log retired by a completed checkpoint", branch)
    if tmp.exists():
        tmp.unlink()
    _fsync_dir(cp)


def commit_checkpoint(data_dir: str | os.PathLike, store: LogStore, state: BranchState,
                      after_write: Callable[[], None] | None = None) -> None:
    """Write ``state`` as the new checkpoint and garbage-collect the log."""
    cp = checkpoint_path(data_dir, store.branch)
    tmp = _tmp(cp)
    retired = None
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(encode_checkpoint(state))
            fh.flush()
            os.fsync(fh.fileno())
        retired = store.retire()
        os.replace(tmp, cp)
        _fsync_dir(cp)
    except OSError as exc:
        if retired is not None and retired.exists():
            os.replace(retired, store.path)
            store.record_count = store._count_lines()
        try:
            tmp.unlink()
        except OSError:
            pass
        raise DurabilityError(f"checkpoint aborted: {exc}") from exc
    if after_write is not None:
        after_write()
    if retired is not None:
        retired.unlink()

"""Value types and the text encodings shared by every component.

Money is held as integer cents. Three grammars live here:

* message-log lines    ``BANK #1111:DEPOSIT 1111006 1000.0``
* checkpoint lines     ``BANK #1111:1111005 1030.0``
* control frames       one newline-terminated line per TCP message
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

BRANCH_MIN = 1111
BRANCH_MAX = 2111
ACCOUNTS_PER_BRANCH = 1000


class WireError(ValueError):
    """Text that does not follow one of the grammars."""


class CorruptionError(WireError):
    """A log or checkpoint line that cannot be trusted."""

    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


# ---------------------------------------------------------------- amounts

_AMOUNT_RE = re.compile(r"(\d+)(?:\.(\d{1,2}))?\Z")


def format_amount(cents: int) -> str:
    if cents < 0:
        raise ValueError(f"negative amount: {cents}")
    whole, frac = divmod(cents, 100)
    if frac % 10 == 0:
        return f"{whole}.{frac // 10}"
    return f"{whole}.{frac:02d}"


def parse_amount(text: str) -> int:
    m = _AMOUNT_RE.match(text)
    if m is None:
        raise WireError(f"malformed amount: {text!r}")
    whole, frac = m.group(1), m.group(2) or "0"
    return int(whole) * 100 + int(frac.ljust(2, "0"))


def branch_of(acct: int) -> int:
    return acct // ACCOUNTS_PER_BRANCH


def seq_of(acct: int) -> int:
    return acct % ACCOUNTS_PER_BRANCH


def _int(token: str, what: str) -> int:
    if not token.isdigit():
        raise WireError(f"malformed {what}: {token!r}")
    return int(token)


# ------------------------------------------------------------ log records

@dataclass(frozen=True)
class Open:
    acct: int


@dataclass(frozen=True)
class Deposit:
    acct: int
    amt: int


@dataclass(frozen=True)
class Withdraw:
    acct: int
    amt: int


@dataclass(frozen=True)
class TransferStart:
    src: int
    dst: int


@dataclass(frozen=True)
class TransferCommit:
    src: int
    dst: int


@dataclass(frozen=True)
class TransferCancel:
    src: int
    dst: int


LogRecord = Union[Open, Deposit, Withdraw, TransferStart, TransferCommit, TransferCancel]

_TRANSFER_WORDS = {TransferStart: "START", TransferCommit: "COMMIT", TransferCancel: "CANCEL"}
_TRANSFER_TYPES = {v: k for k, v in _TRANSFER_WORDS.items()}

_TAG_RE = re.compile(r"BANK #(\d+):(.*)\Z")


def encode_log_line(branch: int, rec: LogRecord) -> str:
    if isinstance(rec, Open):
        body = f"OPEN {rec.acct}"
    elif isinstance(rec, Deposit):
        body = f"DEPOSIT {rec.acct} {format_amount(rec.amt)}"
    elif isinstance(rec, Withdraw):
        body = f"WITHDRAW {rec.acct} {format_amount(rec.amt)}"
    elif type(rec) in _TRANSFER_WORDS:
        body = f"TRANSFER {_TRANSFER_WORDS[type(rec)]} {rec.src}-{rec.dst}"
    else:
        raise TypeError(f"not a log record: {rec!r}")
    return f"BANK #{branch}:{body}"


def _split_tag(line: str, lineno: int | None) -> tuple[int, str]:
    m = _TAG_RE.match(line.rstrip("\n"))
    if m is None:
        raise CorruptionError(f"missing 'BANK #<branch>:' tag in {line!r}", lineno)
    return int(m.group(1)), m.group(2)


def parse_log_line(line: str, lineno: int | None = None) -> tuple[int, LogRecord]:
    branch, body = _split_tag(line, lineno)
    tokens = body.split(" ")
    try:
        match tokens:
            case ["OPEN", acct]:
                return branch, Open(_int(acct, "account"))
            case ["DEPOSIT", acct, amt]:
                return branch, Deposit(_int(acct, "account"), parse_amount(amt))
            case ["WITHDRAW", acct, amt]:
                return branch, Withdraw(_int(acct, "account"), parse_amount(amt))
            case ["TRANSFER", word, pair] if word in _TRANSFER_TYPES:
                src, sep, dst = pair.partition("-")
                if not sep:
                    raise WireError(f"malformed account pair: {pair!r}")
                return branch, _TRANSFER_TYPES[word](_int(src, "account"), _int(dst, "account"))
    except WireError as exc:
        raise CorruptionError(str(exc), lineno) from None
    raise CorruptionError(f"unrecognised log record: {body!r}", lineno)


@dataclass(frozen=True)
class CheckpointEntry:
    acct: int
    balance: int


def encode_checkpoint_line(branch: int, entry: CheckpointEntry) -> str:
    return f"BANK #{branch}:{entry.acct} {format_amount(entry.balance)}"


def parse_checkpoint_line(line: str, lineno: int | None = None) -> tuple[int, CheckpointEntry]:
    branch, body = _split_tag(line, lineno)
    tokens = body.split(" ")
    if len(tokens) != 2:
        raise CorruptionError(f"unrecognised checkpoint entry: {body!r}", lineno)
    try:
        return branch, CheckpointEntry(_int(tokens[0], "account"), parse_amount(tokens[1]))
    except WireError as exc:
        raise CorruptionError(str(exc), lineno) from None


# --------------------------------------------------------- control frames
# Peer and coordinator frames use the upper-case keywords of the original
# protocol. Client frames (requests and OK/ERR replies) are our own.

@dataclass(frozen=True)
class Transfer:
    from_branch: int
    src: int
    dst: int
    amt: int


@dataclass(frozen=True)
class Ok:
    branch: int


@dataclass(frozen=True)
class Err:
    branch: int
    msg: str


@dataclass(frozen=True)
class Dependency:
    a: int
    b: int


@dataclass(frozen=True)
class CheckpointRequest:
    branch: int


@dataclass(frozen=True)
class ReadyForCheckpoint:
    pass


@dataclass(frozen=True)
class DoCheckpoint:
    pass


@dataclass(frozen=True)
class CancelCheckpoint:
    pass


@dataclass(frozen=True)
class CheckpointDone:
    pass


@dataclass(frozen=True)
class Register:
    host: str
    branch: int


@dataclass(frozen=True)
class Heartbeat:
    branch: int


@dataclass(frozen=True)
class Restart:
    branch: int


@dataclass(frozen=True)
class OpenReq:
    pass


@dataclass(frozen=True)
class DepositReq:
    acct: int
    amt: int


@dataclass(frozen=True)
class WithdrawReq:
    acct: int
    amt: int


@dataclass(frozen=True)
class BalanceReq:
    acct: int


@dataclass(frozen=True)
class TransferReq:
    src: int
    dst: int
    amt: int


@dataclass(frozen=True)
class AccountsReq:
    pass


@dataclass(frozen=True)
class OkValue:
    payload: str = ""


@dataclass(frozen=True)
class ErrText:
    msg: str


ControlMessage = Union[
    Transfer, Ok, Err, Dependency, CheckpointRequest, ReadyForCheckpoint, DoCheckpoint,
    CancelCheckpoint, CheckpointDone, Register, Heartbeat, Restart, OpenReq, DepositReq,
    WithdrawReq, BalanceReq, TransferReq, AccountsReq, OkValue, ErrText,
]

CLIENT_REQUESTS = (OpenReq, DepositReq, WithdrawReq, BalanceReq, TransferReq, AccountsReq)

_BARE = {
    ReadyForCheckpoint: "READY_FOR_CHECKPOINT",
    DoCheckpoint: "DO_CHECKPOINT",
    CancelCheckpoint: "CANCEL_CHECKPOINT",
    CheckpointDone: "CHECKPOINT_DONE",
    OpenReq: "OPEN",
    AccountsReq: "ACCOUNTS",
}
_BARE_BY_WORD = {v: k for k, v in _BARE.items()}


def _text_ok(text: str, what: str) -> str:
    if "\n" in text or "\r" in text:
        raise ValueError(f"{what} may not contain line breaks: {text!r}")
    return text


def encode_control(msg: ControlMessage) -> str:
    """Render ``msg`` as a single newline-terminated frame."""
    return _encode_body(msg) + "\n"


def _encode_body(msg: ControlMessage) -> str:
    t = type(msg)
    if t in _BARE:
        return _BARE[t]
    if t is Transfer:
        return f"{msg.from_branch} TRANSFER {msg.src} {msg.dst} {format_amount(msg.amt)}"
    if t is Ok:
        return f"{msg.branch} OK"
    if t is Err:
        text = _text_ok(msg.msg, "error text")
        if not text or text.split(" ", 1)[0] in ("OK", "TRANSFER"):
            raise ValueError(f"ambiguous peer error text: {text!r}")
        return f"{msg.branch} {text}"
    if t is Dependency:
        return f"DEPENDENCY {msg.a} {msg.b}"
    if t is CheckpointRequest:
        return f"CHECKPOINT {msg.branch}"
    if t is Register:
        host = _text_ok(msg.host, "host")
        if not host or " " in host:
            raise ValueError(f"bad host: {host!r}")
        return f"REGISTER_MSG {host} {msg.branch}"
    if t is Heartbeat:
        return f"HEARTBEAT_MSG {msg.branch}"
    if t is Restart:
        return f"RESTART {msg.branch}"
    if t is DepositReq:
        return f"DEPOSIT {msg.acct} {format_amount(msg.amt)}"
    if t is WithdrawReq:
        return f"WITHDRAW {msg.acct} {format_amount(msg.amt)}"
    if t is BalanceReq:
        return f"BALANCE {msg.acct}"
    if t is TransferReq:
        return f"TRANSFER {msg.src} {msg.dst} {format_amount(msg.amt)}"
    if t is OkValue:
        payload = _text_ok(msg.payload, "payload")
        return f"OK {payload}" if payload else "OK"
    if t is ErrText:
        return f"ERR {_text_ok(msg.msg, 'error text')}"
    raise TypeError(f"not a control message: {msg!r}")


def parse_control(frame: str) -> ControlMessage:
    line = frame[:-1] if frame.endswith("\n") else frame
    if not line or "\n" in line:
        raise WireError(f"bad frame: {frame!r}")
    head, _, rest = line.partition(" ")
    tokens = line.split(" ")
    n = len(tokens)

    if head.isdigit():
        branch = int(head)
        if rest == "OK":
            return Ok(branch)
        if tokens[1:2] == ["TRANSFER"]:
            if n != 5:
                raise WireError(f"TRANSFER expects 4 arguments: {line!r}")
            return Transfer(branch, _int(tokens[2], "account"), _int(tokens[3], "account"),
                            parse_amount(tokens[4]))
        if not rest:
            raise WireError(f"bare branch number: {line!r}")
        return Err(branch, rest)

    if head in _BARE_BY_WORD and n == 1:
        return _BARE_BY_WORD[head]()
    if head == "OK":
        return OkValue(rest)
    if head == "ERR" and rest:
        return ErrText(rest)

    arity = {
        "DEPENDENCY": 3, "CHECKPOINT": 2, "REGISTER_MSG": 3, "HEARTBEAT_MSG": 2, "RESTART": 2,
        "DEPOSIT": 3, "WITHDRAW": 3, "BALANCE": 2, "TRANSFER": 4,
    }
    if head not in arity:
        raise WireError(f"unknown keyword: {head!r}")
    if n != arity[head]:
        raise WireError(f"{head} expects {arity[head] - 1} arguments: {line!r}")
    args = tokens[1:]
    if head == "DEPENDENCY":
        return Dependency(_int(args[0], "branch"), _int(args[1], "branch"))
    if head == "CHECKPOINT":
        return CheckpointRequest(_int(args[0], "branch"))
    if head == "REGISTER_MSG":
        if not args[0]:
            raise WireError("empty host")
        return Register(args[0], _int(args[1], "branch"))
    if head == "HEARTBEAT_MSG":
        return Heartbeat(_int(args[0], "branch"))
    if head == "RESTART":
        return Restart(_int(args[0], "branch"))
    if head == "DEPOSIT":
        return DepositReq(_int(args[0], "account"), parse_amount(args[1]))
    if head == "WITHDRAW":
        return WithdrawReq(_int(args[0], "account"), parse_amount(args[1]))
    if head == "BALANCE":
        return BalanceReq(_int(args[0], "account"))
    return TransferReq(_int(args[0], "account"), _int(args[1], "account"), parse_amount(args[2]))

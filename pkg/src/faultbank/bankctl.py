"""Command-line client for a bank branch server.

    bankctl --server HOST:PORT open
    bankctl --server HOST:PORT deposit ACCOUNT AMOUNT
    bankctl --server HOST:PORT transfer SRC DST AMOUNT
"""

from __future__ import annotations

import argparse
import sys

from faultbank import netio
from faultbank.wire import (
    AccountsReq,
    BalanceReq,
    DepositReq,
    ErrText,
    OkValue,
    OpenReq,
    TransferReq,
    WireError,
    WithdrawReq,
    parse_amount,
)

EXIT_OK = 0
EXIT_BANK_ERROR = 1
EXIT_USAGE = 2
EXIT_UNREACHABLE = 3
EXIT_BAD_RESPONSE = 4


class ClientError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def parse_server(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _amount(text: str) -> int:
    try:
        amt = parse_amount(text)
    except WireError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if amt <= 0:
        raise argparse.ArgumentTypeError("amount must be positive")
    return amt


def _account(text: str) -> int:
    if not text.isdigit():
        raise argparse.ArgumentTypeError(f"not an account number: {text!r}")
    return int(text)


def build_request(args: argparse.Namespace):
    match args.command:
        case "open":
            return OpenReq()
        case "deposit":
            return DepositReq(args.account, args.amount)
        case "withdraw":
            return WithdrawReq(args.account, args.amount)
        case "balance":
            return BalanceReq(args.account)
        case "transfer":
            return TransferReq(args.src, args.dst, args.amount)
        case "accounts":
            return AccountsReq()
    raise ValueError(args.command)


def call(host: str, port: int, request, timeout: float = 10.0) -> str:
    """Send one request and return the OK payload; raise ClientError otherwise."""
    try:
        reply = netio.request(host, port, request, timeout)
    except OSError as exc:
        raise ClientError(f"cannot reach bank server {host}:{port}: {exc}",
                          EXIT_UNREACHABLE) from None
    except (WireError, ValueError) as exc:
        raise ClientError(f"malformed response: {exc}", EXIT_BAD_RESPONSE) from None
    if isinstance(reply, OkValue):
        return reply.payload
    if isinstance(reply, ErrText):
        raise ClientError(f"Bank Server error: {reply.msg}", EXIT_BANK_ERROR)
    raise ClientError(f"malformed response: {reply!r}", EXIT_BAD_RESPONSE)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bankctl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--server", type=parse_server, required=True, metavar="HOST:PORT")
    parser.add_argument("--timeout", type=float, default=10.0)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("open", help="open a new account")
    for name in ("deposit", "withdraw"):
        p = sub.add_parser(name)
        p.add_argument("account", type=_account)
        p.add_argument("amount", type=_amount)
    sub.add_parser("balance").add_argument("account", type=_account)
    p = sub.add_parser("transfer")
    p.add_argument("src", type=_account)
    p.add_argument("dst", type=_account)
    p.add_argument("amount", type=_amount)
    sub.add_parser("accounts", help="list account numbers")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    host, port = args.server
    try:
        payload = call(host, port, build_request(args), args.timeout)
    except ClientError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    print(payload)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

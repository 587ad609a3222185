"""Brute-force reference interpreter for branch files.

Written against the text format only, with Decimal money and regular
expressions, so it shares no code with the package it checks.
"""

import re
from decimal import Decimal

_CKPT = re.compile(r"^BANK #(\d+):(\d+) (\d+\.\d+)$")
_OPEN = re.compile(r"^BANK #(\d+):OPEN (\d+)$")
_MOVE = re.compile(r"^BANK #(\d+):(DEPOSIT|WITHDRAW) (\d+) (\d+\.\d+)$")
_XFER = re.compile(r"^BANK #(\d+):TRANSFER (START|COMMIT|CANCEL) (\d+)-(\d+)$")


class OracleError(Exception):
    pass


def interpret(checkpoint_text, log_text):
    """Return ({account: Decimal}, next_account_number or None)."""
    accounts = {}
    for line in (checkpoint_text or "").splitlines():
        m = _CKPT.match(line)
        if not m:
            raise OracleError(f"bad checkpoint line {line!r}")
        accounts[int(m.group(2))] = Decimal(m.group(3))

    lines = (log_text or "").splitlines()
    # mark each line with the index of the block it belongs to and whether
    # that block was closed; COMMIT and CANCEL both close it, and a cancelled
    # block carries its own compensating records
    block_of = [None] * len(lines)
    closed = {}
    current = None
    for i, line in enumerate(lines):
        m = _XFER.match(line)
        if m and m.group(2) == "START":
            current = i
            block_of[i] = i
        elif m:
            closed[current] = True
            block_of[i] = current
            current = None
        elif current is not None:
            block_of[i] = current

    for i, line in enumerate(lines):
        if _XFER.match(line):
            continue
        if block_of[i] is not None and not closed.get(block_of[i], False):
            continue
        m = _OPEN.match(line)
        if m:
            accounts[int(m.group(2))] = Decimal("0")
            continue
        m = _MOVE.match(line)
        if not m:
            raise OracleError(f"bad log line {line!r}")
        acct, amt = int(m.group(3)), Decimal(m.group(4))
        if m.group(2) == "DEPOSIT":
            accounts[acct] += amt
        else:
            accounts[acct] -= amt
            if accounts[acct] < 0:
                raise OracleError(f"overdraft replaying {line!r}")

    next_account = max(accounts) + 1 if accounts else None
    return accounts, next_account


def interpret_files(checkpoint_path, log_path):
    def text(p):
        try:
            with open(p, encoding="utf-8") as fh:
                return fh.read()
        except FileNotFoundError:
            return ""
    return interpret(text(checkpoint_path), text(log_path))


def cents(accounts):
    """Convert oracle Decimal balances to integer cents."""
    return {a: int(v * 100) for a, v in accounts.items()}

"""In-memory branch state and the account operations on it.

No locking and no I/O happen here; the server serialises mutations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from faultbank.wire import ACCOUNTS_PER_BRANCH, branch_of, seq_of


class LedgerError(Exception):
    """An account operation that cannot be carried out."""


class UnknownAccount(LedgerError):
    def __init__(self, acct: int):
        # wording kept verbatim from the original bank servers
        super().__init__(f"Account #{acct} does not exists.")
        self.acct = acct


class InsufficientFunds(LedgerError):
    pass


class CapacityExhausted(LedgerError):
    pass


@dataclass
class BranchState:
    branch: int
    accounts: dict[int, int] = field(default_factory=dict)
    next_seq: int = 0

    def __post_init__(self):
        for acct, bal in self.accounts.items():
            if branch_of(acct) != self.branch:
                raise ValueError(f"account {acct} does not belong to branch {self.branch}")
            if bal < 0:
                raise ValueError(f"negative balance on {acct}")
        if self.accounts:
            self.next_seq = max(self.next_seq, max(seq_of(a) for a in self.accounts) + 1)

    def copy(self) -> BranchState:
        return BranchState(self.branch, dict(self.accounts), self.next_seq)

    def total(self) -> int:
        return sum(self.accounts.values())


def _positive(amt: int) -> None:
    if amt <= 0:
        raise LedgerError(f"Amount must be positive, got {amt} cents.")


def _require(s: BranchState, acct: int) -> int:
    try:
        return s.accounts[acct]
    except KeyError:
        raise UnknownAccount(acct) from None


def open_account(s: BranchState) -> int:
    if s.next_seq >= ACCOUNTS_PER_BRANCH:
        raise CapacityExhausted(f"Branch #{s.branch} cannot open more than "
                                f"{ACCOUNTS_PER_BRANCH} accounts.")
    acct = s.branch * ACCOUNTS_PER_BRANCH + s.next_seq
    s.accounts[acct] = 0
    s.next_seq += 1
    return acct


def restore_account(s: BranchState, acct: int) -> None:
    """Re-create a specific account id (used when replaying an OPEN record)."""
    if branch_of(acct) != s.branch:
        raise LedgerError(f"Account #{acct} does not belong to branch #{s.branch}.")
    if acct in s.accounts:
        raise LedgerError(f"Account #{acct} already exists.")
    s.accounts[acct] = 0
    s.next_seq = max(s.next_seq, seq_of(acct) + 1)


def deposit(s: BranchState, acct: int, amt: int) -> int:
    _positive(amt)
    bal = _require(s, acct) + amt
    s.accounts[acct] = bal
    return bal


def withdraw(s: BranchState, acct: int, amt: int) -> int:
    _positive(amt)
    bal = _require(s, acct)
    if amt > bal:
        raise InsufficientFunds(f"Insufficient funds in account #{acct}.")
    s.accounts[acct] = bal - amt
    return bal - amt


def balance(s: BranchState, acct: int) -> int:
    return _require(s, acct)


def list_accounts(s: BranchState) -> list[int]:
    return sorted(s.accounts, reverse=True)

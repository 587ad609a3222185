import threading
import time

import pytest

from faultbank import netio
from faultbank.durability import DurabilityError, checkpoint_path, log_path
from faultbank.server import CRASH_POINTS, ServerConfig, StartupError
from faultbank.wire import (
    AccountsReq,
    BalanceReq,
    CancelCheckpoint,
    CheckpointDone,
    CheckpointRequest,
    Dependency,
    DepositReq,
    DoCheckpoint,
    Err,
    ErrText,
    Heartbeat,
    OkValue,
    OpenReq,
    ReadyForCheckpoint,
    Register,
    Transfer,
    TransferReq,
    WithdrawReq,
)
from conftest import SimulatedCrash, wait_until
from oracle import cents, interpret_files
from samples import (
    CHECKPOINT,
    LEADER_FAILED,
    LEADER_SUCCESS,
    MSGLOG,
    RECEIVER_CRASHED,
    RECEIVER_SUCCESS,
)


def ask(branch, req, timeout=5.0):
    return netio.request("127.0.0.1", branch, req, timeout)


def seed(data_dir, branch, checkpoint=None, log=None):
    data_dir.mkdir(parents=True, exist_ok=True)
    if checkpoint is not None:
        checkpoint_path(data_dir, branch).write_text(checkpoint)
    if log is not None:
        log_path(data_dir, branch).write_text(log)


def log_text(data_dir, branch):
    path = log_path(data_dir, branch)
    return path.read_text() if path.exists() else None


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(heartbeat_interval=0), dict(checkpoint_threshold=0),
        dict(crash_point="nowhere"), dict(branch=999),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ServerConfig(**kwargs)

    def test_ten_crash_points(self):
        assert len(CRASH_POINTS) == len(set(CRASH_POINTS)) == 10


class TestBoot:
    def test_fresh(self, banks):
        server = banks(1111)
        assert server.branch == 1111
        assert server.state.accounts == {}
        assert ask(1111, AccountsReq()) == OkValue("")

    def test_probes_for_free_port(self, banks):
        banks(1111)
        second = banks(None, port_min=1111, port_max=1112)
        assert second.branch == 1112

    def test_no_free_port(self, banks):
        banks(1111)
        late = banks(None, boot=False, port_min=1111, port_max=1111)
        with pytest.raises(StartupError):
            late.boot()

    def test_over_sample_files(self, banks):
        seed(banks.data_dir, 1111, CHECKPOINT, MSGLOG)
        server = banks(1111)
        expected, nxt = interpret_files(checkpoint_path(banks.data_dir, 1111),
                                        log_path(banks.data_dir, 1111))
        assert server.state.accounts == cents(expected)
        assert ask(1111, BalanceReq(1111006)) == OkValue("900.0")
        assert ask(1111, BalanceReq(1111000)) == OkValue("1364.0")
        assert ask(1111, OpenReq()) == OkValue(str(nxt))

    def test_corrupt_files_refuse_start(self, banks):
        seed(banks.data_dir, 1111, log="BANK #1111:DEPOSIT 1111000 1.0\n")
        server = banks(1111, boot=False)
        with pytest.raises(Exception):
            server.boot()
        # the port was released again
        banks(1111, boot=False, data_dir=str(banks.data_dir / "other")).boot().shutdown()

    def test_dangling_block_is_sealed(self, banks):
        seed(banks.data_dir, 1111, "BANK #1111:1111000 0.0\n", RECEIVER_CRASHED)
        server = banks(1111)
        assert server.state.accounts == {1111000: 0}
        assert log_text(banks.data_dir, 1111) == RECEIVER_CRASHED + (
            "BANK #1111:WITHDRAW 1111000 10.0\n"
            "BANK #1111:TRANSFER CANCEL 1112000-1111000\n")
        assert ask(1111, DepositReq(1111000, 500)) == OkValue("5.0")


class TestClientOps:
    def test_open(self, banks):
        banks(1111)
        assert ask(1111, OpenReq()) == OkValue("1111000")
        assert log_text(banks.data_dir, 1111) == "BANK #1111:OPEN 1111000\n"

    def test_reads_are_not_logged(self, banks):
        banks(1111)
        ask(1111, OpenReq())
        assert ask(1111, BalanceReq(1111000)) == OkValue("0.0")
        assert ask(1111, AccountsReq()) == OkValue("1111000")
        assert log_text(banks.data_dir, 1111) == "BANK #1111:OPEN 1111000\n"

    def test_failed_ops_are_not_logged(self, banks):
        banks(1111)
        ask(1111, OpenReq())
        reply = ask(1111, WithdrawReq(1111000, 500))
        assert isinstance(reply, ErrText)
        assert ask(1111, DepositReq(1111009, 500)) == \
            ErrText("Account #1111009 does not exists.")
        assert log_text(banks.data_dir, 1111) == "BANK #1111:OPEN 1111000\n"

    def test_deposit_withdraw(self, banks):
        banks(1111)
        ask(1111, OpenReq())
        assert ask(1111, DepositReq(1111000, 100000)) == OkValue("1000.0")
        assert ask(1111, WithdrawReq(1111000, 10000)) == OkValue("900.0")
        assert log_text(banks.data_dir, 1111) == (
            "BANK #1111:OPEN 1111000\n"
            "BANK #1111:DEPOSIT 1111000 1000.0\n"
            "BANK #1111:WITHDRAW 1111000 100.0\n")

    def test_storage_failure_reverts(self, banks, monkeypatch):
        server = banks(1111)
        ask(1111, OpenReq())

        def broken(rec):
            raise DurabilityError("disk on fire")

        monkeypatch.setattr(server.store, "append", broken)
        assert isinstance(ask(1111, DepositReq(1111000, 100)), ErrText)
        assert isinstance(ask(1111, OpenReq()), ErrText)
        monkeypatch.undo()
        assert server.state.accounts == {1111000: 0}
        assert ask(1111, OpenReq()) == OkValue("1111001")

    def test_garbage_request(self, banks):
        banks(1111)
        with netio.Connection.open("127.0.0.1", 1111, 2) as conn:
            conn.sock.sendall(b"FROB 1\n")
            assert conn.recv_line(2).startswith("ERR")


class TestTransfer:
    def two_branches(self, banks, **leader_cfg):
        seed(banks.data_dir, 1111, "BANK #1111:1111000 100.0\n")
        seed(banks.data_dir, 1112, "BANK #1112:1112000 0.0\n")
        return banks(1111, **leader_cfg), banks(1112)

    def test_remote_success(self, banks):
        self.two_branches(banks)
        assert ask(1111, TransferReq(1111000, 1112000, 1000)) == OkValue("90.0")
        assert log_text(banks.data_dir, 1111) == LEADER_SUCCESS
        assert wait_until(lambda: log_text(banks.data_dir, 1112) == RECEIVER_SUCCESS)
        assert banks.rm.wait_for(Dependency)
        assert banks.rm.of_type(Dependency) == [Dependency(1111, 1112)]
        assert ask(1112, BalanceReq(1112000)) == OkValue("10.0")

    def test_peer_down_rolls_back(self, banks):
        seed(banks.data_dir, 1112, "BANK #1112:1112000 100.0\n")
        banks(1112)
        reply = ask(1112, TransferReq(1112000, 1111000, 1000))
        assert reply == ErrText("Bank Server #1111 did not complete the transfer.")
        assert log_text(banks.data_dir, 1112) == LEADER_FAILED
        assert ask(1112, BalanceReq(1112000)) == OkValue("100.0")
        assert banks.rm.of_type(Dependency) == []

    def test_insufficient_funds_logs_nothing(self, banks):
        self.two_branches(banks)
        assert isinstance(ask(1111, TransferReq(1111000, 1112000, 10001)), ErrText)
        assert isinstance(ask(1111, TransferReq(1111005, 1112000, 1)), ErrText)
        assert log_text(banks.data_dir, 1111) is None

    def test_unknown_destination(self, banks):
        self.two_branches(banks)
        reply = ask(1111, TransferReq(1111000, 1112007, 1000))
        assert reply == ErrText("Account #1112007 does not exists.")
        assert log_text(banks.data_dir, 1112) is None
        assert log_text(banks.data_dir, 1111) == (
            "BANK #1111:TRANSFER START 1111000-1112007\n"
            "BANK #1111:WITHDRAW 1111000 10.0\n"
            "BANK #1111:DEPOSIT 1111000 10.0\n"
            "BANK #1111:TRANSFER CANCEL 1111000-1112007\n")

    def test_receiver_rejects_directly(self, banks):
        seed(banks.data_dir, 1112, "BANK #1112:1112000 0.0\n")
        banks(1112)
        reply = ask(1112, Transfer(1111, 1111000, 1112009, 100))
        assert reply == Err(1112, "Account #1112009 does not exists.")
        assert log_text(banks.data_dir, 1112) is None

    def test_local_transfer(self, banks):
        seed(banks.data_dir, 1111, "BANK #1111:1111001 0.0\nBANK #1111:1111000 100.0\n")
        banks(1111)
        assert ask(1111, TransferReq(1111000, 1111001, 2550)) == OkValue("74.5")
        assert log_text(banks.data_dir, 1111) == (
            "BANK #1111:TRANSFER START 1111000-1111001\n"
            "BANK #1111:WITHDRAW 1111000 25.5\n"
            "BANK #1111:DEPOSIT 1111001 25.5\n"
            "BANK #1111:TRANSFER COMMIT 1111000-1111001\n")
        time.sleep(0.1)
        assert banks.rm.of_type(Dependency) == []

    def test_receiver_crash_after_deposit(self, banks):
        seed(banks.data_dir, 1111, "BANK #1111:1111000 0.0\n")
        seed(banks.data_dir, 1112, "BANK #1112:1112000 100.0\n")
        receiver = banks(1111, crash_point="after_deposit_log")
        banks(1112)
        assert isinstance(ask(1112, TransferReq(1112000, 1111000, 1000)), ErrText)
        assert log_text(banks.data_dir, 1112) == LEADER_FAILED
        assert log_text(banks.data_dir, 1111) == RECEIVER_CRASHED
        receiver.shutdown()
        reborn = banks(1111)
        assert reborn.state.accounts == {1111000: 0}

    def test_silent_peer_times_out(self, banks):
        seed(banks.data_dir, 1111, "BANK #1111:1111000 100.0\n")
        banks(1111, peer_reply_timeout=0.3)
        # something listens on 1112 but never answers
        mute = netio.Listener(netio.bind("127.0.0.1", 1112), lambda c: time.sleep(1),
                              name="mute").start()
        try:
            start = time.monotonic()
            assert isinstance(ask(1111, TransferReq(1111000, 1112000, 1000)), ErrText)
            assert time.monotonic() - start < 1.0
        finally:
            mute.stop()
        assert ask(1111, BalanceReq(1111000)) == OkValue("100.0")


class TestCheckpointRequests:
    def test_threshold(self, banks):
        banks(1111, checkpoint_threshold=10)
        ask(1111, OpenReq())
        for _ in range(8):
            ask(1111, DepositReq(1111000, 100))
        time.sleep(0.1)
        assert banks.rm.of_type(CheckpointRequest) == []
        ask(1111, DepositReq(1111000, 100))
        assert banks.rm.wait_for(CheckpointRequest)
        assert banks.rm.of_type(CheckpointRequest) == [CheckpointRequest(1111)]

    def test_suppressed_during_transfer(self, banks):
        server = banks(1111, checkpoint_threshold=1)
        server.in_transfer = True
        ask_open = server.serve_client(OpenReq())
        assert ask_open == OkValue("1111000")
        time.sleep(0.1)
        assert banks.rm.of_type(CheckpointRequest) == []
        server.in_transfer = False
        server.maybe_request_checkpoint()
        assert banks.rm.wait_for(CheckpointRequest)

    def test_unreachable_rm_is_harmless(self, banks):
        from conftest import unused_port
        banks(1111, checkpoint_threshold=2, rm_port=unused_port())
        for _ in range(4):
            assert isinstance(ask(1111, OpenReq()), OkValue)


class TestCheckpointFollower:
    def prepared(self, banks):
        server = banks(1111)
        ask(1111, OpenReq())
        ask(1111, DepositReq(1111000, 4242))
        return server

    def test_do(self, banks):
        server = self.prepared(banks)
        with netio.Connection.open("127.0.0.1", 1111, 2) as conn:
            conn.send(ReadyForCheckpoint())
            assert conn.recv(2) == ReadyForCheckpoint()
            conn.send(DoCheckpoint())
            assert conn.recv(2) == CheckpointDone()
        assert checkpoint_path(banks.data_dir, 1111).read_text() == \
            "BANK #1111:1111000 42.42\n"
        assert log_text(banks.data_dir, 1111) is None
        assert server.store.record_count == 0
        expected, _ = interpret_files(checkpoint_path(banks.data_dir, 1111),
                                      log_path(banks.data_dir, 1111))
        assert cents(expected) == server.state.accounts

    @pytest.mark.parametrize("second", [CancelCheckpoint(), None])
    def test_cancel_or_silence_changes_nothing(self, banks, second):
        server = self.prepared(banks)
        before = log_text(banks.data_dir, 1111)
        with netio.Connection.open("127.0.0.1", 1111, 2) as conn:
            conn.send(ReadyForCheckpoint())
            assert conn.recv(2) == ReadyForCheckpoint()
            if second is not None:
                conn.send(second)
            assert conn.recv(2) is None
        assert wait_until(lambda: server.events.of_kind("checkpoint_canceled")
                          or server.events.of_kind("checkpoint_timeout"))
        assert log_text(banks.data_dir, 1111) == before
        assert not checkpoint_path(banks.data_dir, 1111).exists()

    def test_mutations_wait_for_session(self, banks):
        self.prepared(banks)
        replies = []
        with netio.Connection.open("127.0.0.1", 1111, 2) as conn:
            conn.send(ReadyForCheckpoint())
            assert conn.recv(2) == ReadyForCheckpoint()
            worker = threading.Thread(
                target=lambda: replies.append(ask(1111, DepositReq(1111000, 1))))
            worker.start()
            time.sleep(0.2)
            assert replies == []
            # reads still answer while the session holds the branch
            assert ask(1111, BalanceReq(1111000)) == OkValue("42.42")
            conn.send(DoCheckpoint())
            assert conn.recv(2) == CheckpointDone()
        worker.join(5)
        assert replies == [OkValue("42.43")]
        assert checkpoint_path(banks.data_dir, 1111).read_text() == \
            "BANK #1111:1111000 42.42\n"
        assert log_text(banks.data_dir, 1111) == "BANK #1111:DEPOSIT 1111000 0.01\n"

    def test_crash_after_write_recovers(self, banks):
        server = banks(1111, crash_point="after_checkpoint_write")
        ask(1111, OpenReq())
        ask(1111, DepositReq(1111000, 700))
        with netio.Connection.open("127.0.0.1", 1111, 2) as conn:
            conn.send(ReadyForCheckpoint())
            assert conn.recv(2) == ReadyForCheckpoint()
            conn.send(DoCheckpoint())
            assert conn.recv(2) is None
        server.shutdown()
        assert (banks.data_dir / "msglog_1111.log.retired").exists()
        reborn = banks(1111)
        assert reborn.state.accounts == {1111000: 700}
        assert not (banks.data_dir / "msglog_1111.log.retired").exists()


class TestHeartbeat:
    def test_register_then_beat(self, banks):
        banks(1111)
        assert banks.monitor.wait_for(Heartbeat, 2)
        first = banks.monitor.frames[0]
        assert first == Register("127.0.0.1", 1111)
        assert banks.monitor.of_type(Register) == [first]

    def test_serves_without_monitor(self, banks):
        from conftest import unused_port
        banks(1111, monitor_port=unused_port())
        time.sleep(0.2)
        assert ask(1111, OpenReq()) == OkValue("1111000")

    def test_shutdown_stops_loop(self, banks):
        server = banks(1111)
        server.shutdown()
        assert not server._hb_thread.is_alive()


def test_simulated_crash_is_raised(banks):
    server = banks(1111, crash_point="after_start_log", boot=False)
    server.branch = 1111
    with pytest.raises(SimulatedCrash):
        server._crash_point("after_start_log")

# State-machine tests for logging, checkpointing, handoff consolidation,
# disconnect/reconnect, and replay-based recovery.
#
# The replay oracle below recomputes the digest chain with hashlib alone,
# so a bug in AppState cannot hide behind itself.
import hashlib
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexlog import protocol
from hexlog.metrics import KIND_CONSOLIDATING, KIND_TRACE_ONLY
from hexlog.protocol import (
    CONNECTED,
    DISCONNECTED,
    FAILED,
    AppState,
    DestinationUnavailable,
    HostUnavailable,
    LogGap,
    MissingCheckpoint,
    MssState,
    NotDisconnected,
    buffer_message,
    deliver_and_log,
    disconnect,
    fail,
    handoff,
    recover_host,
    reconnect,
    register_host,
    take_checkpoint,
)
from hexlog.topology import build_distance_table, build_grid, neighbors


def chain_digest(payloads):
    d = hashlib.sha256(b"").digest()
    for p in payloads:
        d = hashlib.sha256(d + p).digest()
    return d.hex()


class Net:
    """A grid plus its stations, with small conveniences for tests."""

    def __init__(self, radius=2):
        self.grid = build_grid(radius)
        self.dt = build_distance_table(self.grid)
        self.mss = {mid: MssState(id=mid, cell=cell)
                    for mid, cell in self.grid.cell_of_mss.items()}

    def station_of(self, host):
        return self.mss[host.mss]

    def station_at(self, cell):
        return self.mss[self.grid.mss_of_cell[cell]]

    def spawn(self, hid, cell=None):
        cell = cell or self.grid.cells[0]
        return register_host(hid, cell, self.station_at(cell))

    def walk(self, host, steps, k):
        """Hand the host along a chain of neighboring cells."""
        reports = []
        for _ in range(steps):
            target = neighbors(host.cell, self.grid)[0]
            old, new = self.station_of(host), self.station_at(target)
            host.cell = target
            reports.append(handoff(host, old, new, k, self.dt, self.mss))
        return reports


@pytest.fixture
def net():
    return Net(radius=2)


def deliver_n(net, host, n, start=0):
    entries = []
    for i in range(start, start + n):
        entries.append(deliver_and_log(net.station_of(host), host,
                                       f"p{i}".encode(), sender=99))
    return entries


# -- app state fold -----------------------------------------------------

def test_app_state_matches_manual_chain():
    payloads = [b"alpha", b"beta", b"", b"\x00\xff", b"gamma"]
    state = AppState.initial()
    for p in payloads:
        state = state.apply(p)
    assert state.count == len(payloads)
    assert state.digest == chain_digest(payloads)


def test_app_state_is_order_sensitive():
    a = AppState.initial().apply(b"x").apply(b"y")
    b = AppState.initial().apply(b"y").apply(b"x")
    assert a != b


# -- delivery and logging ----------------------------------------------

def test_first_delivery(net):
    host = net.spawn(0)
    entry = deliver_and_log(net.station_of(host), host, b"hello", sender=7)
    station = net.station_of(host)
    assert entry.seq == 1
    assert host.rec_seq == 1
    assert station.num_msg[0] == 1
    assert station.app_log[0] == [entry]
    assert station.traces[0].log_set == {station.id}
    assert host.app_state.digest == chain_digest([b"hello"])


def test_delivery_refused_for_disconnected_host(net):
    host = net.spawn(0)
    disconnect(host, net.station_of(host))
    with pytest.raises(DestinationUnavailable):
        deliver_and_log(net.station_of(host), host, b"nope", sender=1)


def test_delivery_refused_at_wrong_station(net):
    host = net.spawn(0)
    other = net.station_at(net.grid.cells[3])
    with pytest.raises(DestinationUnavailable):
        deliver_and_log(other, host, b"nope", sender=1)


def test_log_precedes_host_state():
    # pessimistic logging: the entry is stable even if delivery explodes
    net = Net(1)
    host = net.spawn(0)
    station = net.station_of(host)
    host.app_state = None   # makes .apply blow up after the log append
    with pytest.raises(AttributeError):
        deliver_and_log(station, host, b"boom", sender=1)
    assert [e.seq for e in station.app_log[0]] == [1]


# -- checkpointing ------------------------------------------------------

def test_fresh_host_checkpoint(net):
    host = net.spawn(0)
    ckpt = take_checkpoint(host, net.station_of(host))
    assert (ckpt.cp_seq, ckpt.rec_seq) == (1, 0)
    trace = net.station_of(host).traces[0]
    assert (trace.cp_seq, trace.cp_loc, trace.log_set) == (1, host.mss, set())


def test_checkpoint_resets_log_set(net):
    host = net.spawn(0)
    deliver_n(net, host, 3)
    station = net.station_of(host)
    assert station.traces[0].log_set == {station.id}
    take_checkpoint(host, station)
    assert station.traces[0].log_set == set()
    assert station.traces[0].cp_seq == host.chknum == 1


def test_implicit_birth_checkpoint(net):
    host = net.spawn(0)
    station = net.station_of(host)
    assert station.checkpoints[0][0].cp_seq == 0
    assert station.traces[0] == protocol.TraceRecord(0, station.id, set())
    assert host.chknum == 0


# -- handoff ------------------------------------------------------------

def test_trace_only_handoff_moves_bookkeeping(net):
    host = net.spawn(0)
    deliver_n(net, host, 2)
    old = net.station_of(host)
    report = net.walk(host, 1, k=math.inf)[0]
    new = net.station_of(host)
    assert report.kind == KIND_TRACE_ONLY
    assert (report.checkpoint_units, report.log_entries_moved) == (0, 0)
    assert report.hop_distance == 1
    assert 0 not in old.traces and 0 in new.traces
    assert 0 not in old.active_hosts and 0 in new.active_hosts
    assert new.num_msg[0] == host.rec_seq == 2
    # log entries stayed put, the trace still points at them
    assert [e.seq for e in old.app_log[0]] == [1, 2]
    assert new.traces[0].log_set == {old.id}


def test_delivery_numbering_survives_handoff(net):
    host = net.spawn(0)
    deliver_n(net, host, 2)
    net.walk(host, 1, k=math.inf)
    entry = deliver_and_log(net.station_of(host), host, b"third", sender=1)
    assert entry.seq == 3


def test_consolidation_filters_on_checkpoint_seq(net):
    """Five deliveries, checkpoint after two: the handoff must move {3,4,5}."""
    host = net.spawn(0)
    deliver_n(net, host, 2)
    origin = net.station_of(host)
    take_checkpoint(host, origin)
    deliver_n(net, host, 3, start=2)
    report = net.walk(host, 1, k=0)[0]
    new = net.station_of(host)

    assert report.kind == KIND_CONSOLIDATING
    assert report.checkpoint_units == 1
    assert report.log_entries_moved == 3
    assert [e.seq for e in new.app_log[0]] == [3, 4, 5]
    assert [e.seq for e in origin.app_log[0]] == [1, 2]      # pre-checkpoint stay
    assert [e.seq for e in origin.superseded_log[0]] == [3, 4, 5]
    assert new.traces[0].log_set == {new.id}
    assert new.traces[0].cp_loc == new.id
    assert any(c.cp_seq == 1 for c in new.checkpoints[0])


def test_threshold_boundary_is_inclusive(net):
    host = net.spawn(0)
    take_checkpoint(host, net.station_of(host))
    cp_loc = net.station_of(host).id
    reports = net.walk(host, 2, k=2)
    # first hop: distance 1 < 2; second: distance 2 >= 2
    assert [r.kind for r in reports] == [KIND_TRACE_ONLY, KIND_CONSOLIDATING]
    assert reports[1].hop_distance == net.dt(net.station_of(host).id, cp_loc) == 2


def test_k_zero_consolidates_every_handoff(net):
    host = net.spawn(0)
    deliver_n(net, host, 1)
    for report in net.walk(host, 3, k=0):
        assert report.kind == KIND_CONSOLIDATING
    station = net.station_of(host)
    assert station.traces[0].log_set == {station.id}


def test_consolidation_gathers_scattered_entries(net):
    host = net.spawn(0)
    visited = []
    for i in range(3):
        deliver_n(net, host, 1, start=i)
        visited.append(net.station_of(host).id)
        net.walk(host, 1, k=math.inf)
    trace = net.station_of(host).traces[0]
    assert trace.log_set == set(visited)
    report = net.walk(host, 1, k=0)[0]
    assert report.log_entries_moved == 3
    here = net.station_of(host)
    assert [e.seq for e in here.app_log[0]] == [1, 2, 3]
    protocol.check_entry_uniqueness({0: host}, net.mss)


def test_handoff_requires_connected_host(net):
    host = net.spawn(0)
    target = neighbors(host.cell, net.grid)[0]
    disconnect(host, net.station_of(host))
    with pytest.raises(HostUnavailable):
        handoff(host, net.station_of(host), net.station_at(target), 0,
                net.dt, net.mss)


# -- disconnect / reconnect --------------------------------------------

def test_disconnect_blocks_then_reconnect_drains(net):
    host = net.spawn(0)
    deliver_n(net, host, 1)
    station = net.station_of(host)
    disconnect(host, station)
    assert host.status == DISCONNECTED
    assert station.disconnected_hosts[0] == 1

    buffer_message(station, 0, b"while-away-1", sender=5, tag="a")
    buffer_message(station, 0, b"while-away-2", sender=5, tag="b")
    drained, report = reconnect(host, station, station)
    assert report is None
    assert [tag for _, tag in drained] == ["a", "b"]
    assert [e.seq for e, _ in drained] == [2, 3]
    assert host.rec_seq == 3
    assert host.status == CONNECTED
    assert host.app_state.digest == chain_digest(
        [b"p0", b"while-away-1", b"while-away-2"])


def test_cross_cell_reconnect_is_reconnect_then_handoff(net):
    host = net.spawn(0)
    deliver_n(net, host, 2)
    prev = net.station_of(host)
    disconnect(host, prev)
    buffer_message(prev, 0, b"late", sender=5, tag=None)
    host.cell = neighbors(host.cell, net.grid)[0]   # drifted while asleep
    target = net.station_at(host.cell)

    drained, report = reconnect(host, target, prev, k=0, dt=net.dt,
                                all_mss=net.mss)
    assert [e.seq for e, _ in drained] == [3]
    assert report is not None and report.kind == KIND_CONSOLIDATING
    assert host.mss == target.id
    assert 0 in target.active_hosts and 0 not in prev.active_hosts
    # buffered traffic was sequenced at prev before the move
    assert any(e.seq == 3 for e in prev.superseded_log.get(0, [])) or \
        any(e.seq == 3 for e in target.app_log.get(0, []))
    protocol.check_recoverability({0: host}, net.mss)


def test_cross_cell_reconnect_needs_routing_args(net):
    host = net.spawn(0)
    prev = net.station_of(host)
    disconnect(host, prev)
    host.cell = neighbors(host.cell, net.grid)[0]
    with pytest.raises(ValueError):
        reconnect(host, net.station_at(host.cell), prev)


def test_reconnect_rejects_connected_host(net):
    host = net.spawn(0)
    with pytest.raises(NotDisconnected):
        reconnect(host, net.station_of(host), net.station_of(host))


# -- failure and recovery ----------------------------------------------

def test_recover_from_checkpoint_plus_tail(net):
    host = net.spawn(0)
    deliver_n(net, host, 3)
    take_checkpoint(host, net.station_of(host))
    deliver_n(net, host, 2, start=3)
    snapshot = (host.app_state, host.rec_seq)

    fail(host)
    assert host.status == FAILED and host.app_state is None
    _, report = recover_host(host, net.station_of(host), net.mss, net.dt)
    assert (host.app_state, host.rec_seq) == snapshot
    assert host.status == CONNECTED
    assert report.entries_replayed == 2
    assert host.chknum == 1


def test_recover_never_checkpointed_host(net):
    host = net.spawn(0)
    deliver_n(net, host, 2)
    snapshot = (host.app_state, host.rec_seq)
    fail(host)
    _, report = recover_host(host, net.station_of(host), net.mss, net.dt)
    assert (host.app_state, host.rec_seq) == snapshot
    assert report.entries_replayed == 2     # replayed from the birth checkpoint


def test_recover_after_scattering_handoffs(net):
    host = net.spawn(0)
    for i in range(4):
        deliver_n(net, host, 1, start=i)
        net.walk(host, 1, k=math.inf)
    snapshot = (host.app_state, host.rec_seq)
    fail(host)
    _, report = recover_host(host, net.station_of(host), net.mss, net.dt)
    assert (host.app_state, host.rec_seq) == snapshot
    assert report.entries_replayed == 4
    assert report.log_fetch_hops_total > 0


def test_recovery_detects_missing_tail(net):
    host = net.spawn(0)
    deliver_n(net, host, 3)
    station = net.station_of(host)
    station.app_log[0].pop()          # corrupt stable storage
    fail(host)
    with pytest.raises(LogGap):
        recover_host(host, station, net.mss, net.dt)


def test_recovery_detects_missing_checkpoint(net):
    host = net.spawn(0)
    take_checkpoint(host, net.station_of(host))
    station = net.station_of(host)
    station.checkpoints[0] = [c for c in station.checkpoints[0] if c.cp_seq != 1]
    fail(host)
    with pytest.raises(MissingCheckpoint):
        recover_host(host, station, net.mss, net.dt)


def test_fail_is_idempotent_and_guarded(net):
    host = net.spawn(0)
    fail(host)
    fail(host)                        # second crash while down: no-op
    assert host.status == FAILED
    _, _ = recover_host(host, net.station_of(host), net.mss, net.dt)
    disconnect(host, net.station_of(host))
    with pytest.raises(HostUnavailable):
        fail(host)                    # sleeping hosts cannot crash here
    with pytest.raises(HostUnavailable):
        recover_host(host, net.station_of(host), net.mss, net.dt)


# -- randomized walks ---------------------------------------------------

def random_walk(seed, k):
    """Drive one host through a seeded op mix; return (net, host, payloads)."""
    rng = random.Random(seed)
    net = Net(radius=2)
    host = net.spawn(0, cell=net.grid.cells[rng.randrange(len(net.grid))])
    payloads = []
    for step in range(rng.randrange(5, 40)):
        op = rng.random()
        if op < 0.55:
            p = f"w{step}".encode()
            deliver_and_log(net.station_of(host), host, p, sender=1)
            payloads.append(p)
        elif op < 0.75:
            take_checkpoint(host, net.station_of(host))
        else:
            nbrs = neighbors(host.cell, net.grid)
            target = nbrs[rng.randrange(len(nbrs))]
            old, new = net.station_of(host), net.station_at(target)
            host.cell = target
            handoff(host, old, new, k, net.dt, net.mss)
    return net, host, payloads


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0, 1, 2, math.inf]))
def test_walk_then_crash_recovers_exactly(seed, k):
    net, host, payloads = random_walk(seed, k)
    assert host.app_state.digest == chain_digest(payloads)
    snapshot = (host.app_state, host.rec_seq)
    protocol.check_recoverability({0: host}, net.mss)
    protocol.check_entry_uniqueness({0: host}, net.mss)
    fail(host)
    recover_host(host, net.station_of(host), net.mss, net.dt)
    assert (host.app_state, host.rec_seq) == snapshot


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_threshold_never_changes_host_state(seed):
    """k moves data around; the host's visible history must not notice."""
    results = {}
    for k in (0, 2, math.inf):
        net, host, payloads = random_walk(seed, k)
        results[k] = (host.app_state, host.rec_seq)
        for station in net.mss.values():
            protocol.check_station_local(station)
    assert results[0] == results[2] == results[math.inf]

# Per-host checkpointing, per-station pessimistic message logging with
# trace-record maintenance, distance-threshold handoff, disconnect and
# reconnect, and independent (asynchronous) recovery by log replay.
#
# Terminology: a "host" is the mobile, failure-prone unit of recovery; a
# "station" (MssState) is the reliable cell owner providing stable storage.
# The trace record at a host's current station locates its latest
# checkpoint (cp_seq, cp_loc) and every station holding post-checkpoint
# log entries (log_set).
from __future__ import annotations

import hashlib
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field

from .metrics import (
    DEFAULT_WEIGHTS,
    KIND_CONSOLIDATING,
    KIND_TRACE_ONLY,
    CostWeights,
    RecoveryReport,
    TransferReport,
)
from .topology import CellCoord, DistanceTable

# Host lifecycle states.
CONNECTED = "connected"
DISCONNECTED = "disconnected"
FAILED = "failed"

# Mobility control-message kinds.
LEAVE = "leave"
JOIN = "join"
DISCONNECT = "disconnect"
RECONNECT = "reconnect"


class ProtocolError(Exception):
    pass


class DestinationUnavailable(ProtocolError):
    """Delivery attempted to a disconnected or failed host."""


class HostUnavailable(ProtocolError):
    """Operation requires a connected host."""


class NotDisconnected(ProtocolError):
    pass


class UnknownTrace(ProtocolError):
    pass


class MissingCheckpoint(ProtocolError):
    pass


class MissingLogEntry(ProtocolError):
    pass


class LogGap(ProtocolError):
    pass


class InvariantViolation(ProtocolError):
    """A protocol invariant failed; the run must abort with diagnostics."""

    def __init__(self, message: str, event: object = None):
        super().__init__(message)
        self.event = event


_INITIAL_DIGEST = hashlib.sha256(b"").hexdigest()


@dataclass(frozen=True)
class AppState:
    """Order-sensitive digest of every payload delivered to a host.

    The host is assumed deterministic: its state is fully determined by
    the ordered payload sequence, which is what makes log replay a valid
    recovery mechanism. count is the number of payloads folded in.
    """

    count: int
    digest: str

    @staticmethod
    def initial() -> "AppState":
        return AppState(0, _INITIAL_DIGEST)

    def apply(self, payload: bytes) -> "AppState":
        h = hashlib.sha256(bytes.fromhex(self.digest) + payload).hexdigest()
        return AppState(self.count + 1, h)


@dataclass
class HostState:
    id: int
    cell: CellCoord
    mss: int                      # station of association (last one if failed)
    status: str = CONNECTED
    chknum: int = 0               # checkpoint counter, never decreases
    rec_seq: int = 0              # application messages received so far
    app_state: AppState | None = field(default_factory=AppState.initial)


@dataclass(frozen=True)
class ControlMessage:
    kind: str
    host: int
    r: int | None = None          # rec_seq at send time (leave/disconnect)
    prev_mss: int | None = None   # previous station (join/reconnect)


@dataclass(frozen=True)
class Checkpoint:
    host: int
    cp_seq: int
    rec_seq: int
    app_state: AppState


@dataclass(frozen=True)
class LogEntry:
    host: int
    seq: int                      # per-host delivery sequence, globally unique
    payload: bytes
    sender: int


@dataclass
class TraceRecord:
    cp_seq: int
    cp_loc: int
    log_set: set[int]


@dataclass
class MssState:
    """One station's stable storage.

    app_log holds the live log entries per host in strictly increasing seq
    order; copies superseded by a consolidating handoff move to
    superseded_log (kept for audit, excluded from liveness invariants).
    pending buffers messages that arrived while the host slept here; they
    are not yet sequenced or logged.
    """

    id: int
    cell: CellCoord
    active_hosts: set[int] = field(default_factory=set)
    disconnected_hosts: dict[int, int] = field(default_factory=dict)  # host -> r
    app_log: dict[int, list[LogEntry]] = field(default_factory=dict)
    superseded_log: dict[int, list[LogEntry]] = field(default_factory=dict)
    mobility_log: list[tuple[ControlMessage, int]] = field(default_factory=list)
    checkpoints: dict[int, list[Checkpoint]] = field(default_factory=dict)
    traces: dict[int, TraceRecord] = field(default_factory=dict)
    num_msg: dict[int, int] = field(default_factory=dict)
    pending: dict[int, deque] = field(default_factory=dict)

    def live_entries(self, host: int) -> list[LogEntry]:
        return self.app_log.get(host, [])

    def live_entries_after(self, host: int, seq: int) -> list[LogEntry]:
        log = self.app_log.get(host, [])
        i = bisect_right(log, seq, key=lambda e: e.seq)
        return log[i:]


def register_host(host_id: int, cell: CellCoord, mss: MssState) -> HostState:
    """Admit a new host at its birth station.

    Every host gets an implicit checkpoint 0 of the initial state here, so
    recovery is defined even before the first real checkpoint.
    """
    host = HostState(id=host_id, cell=cell, mss=mss.id)
    mss.active_hosts.add(host_id)
    mss.num_msg[host_id] = 0
    mss.checkpoints.setdefault(host_id, []).append(
        Checkpoint(host_id, 0, 0, AppState.initial()))
    mss.traces[host_id] = TraceRecord(cp_seq=0, cp_loc=mss.id, log_set=set())
    return host


def log_mobility(mss: MssState, msg: ControlMessage, rec_seq: int) -> None:
    mss.mobility_log.append((msg, rec_seq))


def deliver_and_log(mss: MssState, host: HostState, payload: bytes,
                    sender: int) -> LogEntry:
    """Log an application message at the host's station, then deliver it.

    Pessimistic: the entry reaches stable storage before the host sees the
    payload, so a crash at any point leaves the message recoverable.
    """
    if host.status != CONNECTED or host.mss != mss.id:
        raise DestinationUnavailable(
            f"host {host.id} is {host.status} (station {host.mss})")
    if host.id not in mss.active_hosts:
        raise DestinationUnavailable(
            f"host {host.id} not active at station {mss.id}")

    seq = mss.num_msg[host.id] + 1
    if seq != host.rec_seq + 1:
        raise InvariantViolation(
            f"delivery counter discontinuity for host {host.id}: "
            f"station expects seq {seq}, host rec_seq {host.rec_seq}")
    mss.num_msg[host.id] = seq
    entry = LogEntry(host.id, seq, payload, sender)
    log = mss.app_log.setdefault(host.id, [])
    if log and log[-1].seq >= seq:
        raise InvariantViolation(
            f"log order violated at station {mss.id} for host {host.id}")
    log.append(entry)
    mss.traces[host.id].log_set.add(mss.id)

    host.rec_seq = seq
    host.app_state = host.app_state.apply(payload)
    return entry


def buffer_message(mss: MssState, host_id: int, payload: bytes, sender: int,
                   tag: object = None) -> None:
    """Hold a message for a host sleeping in this cell; sequenced at reconnect."""
    mss.pending.setdefault(host_id, deque()).append((payload, sender, tag))


def take_checkpoint(host: HostState, mss: MssState) -> Checkpoint:
    if host.status != CONNECTED or host.mss != mss.id:
        raise HostUnavailable(f"host {host.id} is {host.status}")
    host.chknum += 1
    ckpt = Checkpoint(host.id, host.chknum, host.rec_seq, host.app_state)
    mss.checkpoints.setdefault(host.id, []).append(ckpt)
    mss.traces[host.id] = TraceRecord(cp_seq=host.chknum, cp_loc=mss.id,
                                      log_set=set())
    return ckpt


def _find_checkpoint(mss: MssState, host_id: int, cp_seq: int) -> Checkpoint:
    for ckpt in reversed(mss.checkpoints.get(host_id, [])):
        if ckpt.cp_seq == cp_seq:
            return ckpt
    raise MissingCheckpoint(
        f"station {mss.id} holds no checkpoint {cp_seq} for host {host_id}")


def handoff(host: HostState, old: MssState, new: MssState, k: float,
            dt: DistanceTable, all_mss: dict[int, MssState], *,
            weights: CostWeights = DEFAULT_WEIGHTS, now: int = 0) -> TransferReport:
    """Move a host's association from old to new, applying the distance rule.

    The trace record and rec_seq always move. Checkpoint and log entries
    move only when the new station's distance from the checkpoint holder
    reaches the threshold k (boundary included: distance >= k
    consolidates, so k=0 consolidates on every handoff and k=inf never
    does). k affects where recovery data sits, never what was delivered.
    """
    if host.status != CONNECTED or host.mss != old.id:
        raise HostUnavailable(f"host {host.id} is not connected to station {old.id}")
    trace = old.traces.get(host.id)
    if trace is None:
        raise UnknownTrace(f"station {old.id} holds no trace for host {host.id}")

    log_mobility(old, ControlMessage(LEAVE, host.id, r=host.rec_seq), host.rec_seq)
    log_mobility(new, ControlMessage(JOIN, host.id, prev_mss=old.id), host.rec_seq)

    old.active_hosts.discard(host.id)
    del old.traces[host.id]
    new.active_hosts.add(host.id)
    new.traces[host.id] = trace
    new.num_msg[host.id] = host.rec_seq   # delivery numbering stays contiguous
    host.mss = new.id

    dist_to_ckpt = dt(new.id, trace.cp_loc)
    if dist_to_ckpt >= k:
        ckpt = _find_checkpoint(all_mss[trace.cp_loc], host.id, trace.cp_seq)
        checkpoint_units = 0
        if trace.cp_loc != new.id:
            checkpoint_units = 1
            stored = new.checkpoints.setdefault(host.id, [])
            if not any(c.cp_seq == ckpt.cp_seq for c in stored):
                stored.append(ckpt)

        moved = 0
        incoming: list[LogEntry] = []
        for member in sorted(trace.log_set):
            if member == new.id:
                continue   # already local and live
            src = all_mss[member]
            copies = src.live_entries_after(host.id, ckpt.rec_seq)
            if copies:
                # entries with seq > ckpt.rec_seq are a contiguous tail
                keep = len(src.app_log[host.id]) - len(copies)
                src.app_log[host.id] = src.app_log[host.id][:keep]
                src.superseded_log.setdefault(host.id, []).extend(copies)
                incoming.extend(copies)
                moved += len(copies)
        if incoming:
            merged = new.app_log.setdefault(host.id, [])
            merged.extend(incoming)
            merged.sort(key=lambda e: e.seq)

        trace.cp_loc = new.id
        trace.log_set = {new.id}

        covered = {e.seq for e in new.live_entries_after(host.id, ckpt.rec_seq)}
        needed = set(range(ckpt.rec_seq + 1, host.rec_seq + 1))
        if not needed <= covered:
            raise MissingLogEntry(
                f"consolidation for host {host.id} at station {new.id} lost "
                f"sequences {sorted(needed - covered)}")

        return TransferReport.build(host.id, now, KIND_CONSOLIDATING,
                                    dist_to_ckpt, checkpoint_units, moved,
                                    weights)

    return TransferReport.build(host.id, now, KIND_TRACE_ONLY,
                                dt(old.id, new.id), 0, 0, weights)


def disconnect(host: HostState, mss: MssState) -> None:
    """Host enters sleep mode; the station flags it and stops deliveries."""
    if host.status != CONNECTED or host.mss != mss.id:
        raise HostUnavailable(f"host {host.id} is {host.status}")
    log_mobility(mss, ControlMessage(DISCONNECT, host.id, r=host.rec_seq),
                 host.rec_seq)
    mss.active_hosts.discard(host.id)
    mss.disconnected_hosts[host.id] = host.rec_seq
    host.status = DISCONNECTED


def reconnect(host: HostState, mss: MssState, prev: MssState, *,
              k: float = 0, dt: DistanceTable | None = None,
              all_mss: dict[int, MssState] | None = None,
              weights: CostWeights = DEFAULT_WEIGHTS, now: int = 0,
              ) -> tuple[list[tuple[LogEntry, object]], TransferReport | None]:
    """Wake a host sleeping at prev, draining messages buffered meanwhile.

    Waking in a different cell is the sleeping-host analogue of a move:
    reconnect at prev first (buffered traffic is sequenced there), then a
    regular handoff to mss applies the same distance rule. Returns the
    drained (entry, tag) pairs and the handoff report, if any.
    """
    if host.status != DISCONNECTED:
        raise NotDisconnected(f"host {host.id} is {host.status}")
    if host.mss != prev.id or host.id not in prev.disconnected_hosts:
        raise NotDisconnected(
            f"host {host.id} is not sleeping at station {prev.id}")

    log_mobility(prev, ControlMessage(RECONNECT, host.id, prev_mss=prev.id),
                 host.rec_seq)
    del prev.disconnected_hosts[host.id]
    prev.active_hosts.add(host.id)
    host.status = CONNECTED

    delivered = []
    buffered = prev.pending.pop(host.id, None)
    while buffered:
        payload, sender, tag = buffered.popleft()
        entry = deliver_and_log(prev, host, payload, sender)
        delivered.append((entry, tag))

    report = None
    if mss.id != prev.id:
        if dt is None or all_mss is None:
            raise ValueError("cross-cell reconnect needs dt and all_mss")
        report = handoff(host, prev, mss, k, dt, all_mss,
                         weights=weights, now=now)
    return delivered, report


def fail(host: HostState) -> None:
    """Crash a connected host; volatile state is gone, stable storage is not."""
    if host.status == FAILED:
        return
    if host.status != CONNECTED:
        raise HostUnavailable(f"host {host.id} is {host.status}")
    host.status = FAILED
    host.app_state = None


def recover_host(host: HostState, current_mss: MssState,
                 all_mss: dict[int, MssState], dt: DistanceTable, *,
                 weights: CostWeights = DEFAULT_WEIGHTS, fail_time: int = 0,
                 ) -> tuple[HostState, RecoveryReport]:
    """Roll a failed host back to its latest checkpoint and replay its log.

    Fully independent: only this host's state is touched. The checkpoint
    comes from the station named by the trace, the post-checkpoint entries
    from the stations in its log_set; the merged sequence must be gap-free
    up to the station-side delivery counter.
    """
    if host.status != FAILED:
        raise HostUnavailable(f"host {host.id} is {host.status}, not failed")
    trace = current_mss.traces.get(host.id)
    if trace is None:
        raise UnknownTrace(
            f"station {current_mss.id} holds no trace for host {host.id}")

    ckpt = _find_checkpoint(all_mss[trace.cp_loc], host.id, trace.cp_seq)

    entries: list[LogEntry] = []
    log_fetch_hops = 0
    entry_cost = 0
    for member in sorted(trace.log_set):
        hops = dt(current_mss.id, member)
        log_fetch_hops += hops
        fetched = all_mss[member].live_entries_after(host.id, ckpt.rec_seq)
        entries.extend(fetched)
        entry_cost += weights.entry * hops * len(fetched)
    entries.sort(key=lambda e: e.seq)

    expected_last = current_mss.num_msg[host.id]
    expected = list(range(ckpt.rec_seq + 1, expected_last + 1))
    if [e.seq for e in entries] != expected:
        raise LogGap(
            f"host {host.id} replay sequence {[e.seq for e in entries]} does "
            f"not cover ({ckpt.rec_seq}, {expected_last}] without gaps")

    state = ckpt.app_state
    for entry in entries:
        state = state.apply(entry.payload)

    host.rec_seq = entries[-1].seq if entries else ckpt.rec_seq
    host.app_state = state
    host.chknum = trace.cp_seq
    host.status = CONNECTED

    ckpt_hops = dt(current_mss.id, trace.cp_loc)
    report = RecoveryReport(
        host=host.id,
        fail_time=fail_time,
        checkpoint_fetch_hops=ckpt_hops,
        log_fetch_hops_total=log_fetch_hops,
        entries_replayed=len(entries),
        cost=weights.checkpoint * ckpt_hops + entry_cost,
    )
    return host, report


def effective_rec_seq(host: HostState, mss_by_id: dict[int, MssState]) -> int:
    """Received-message count as recovery would see it.

    For a failed host the live counter is gone; the station-side delivery
    counter is the stable equivalent.
    """
    if host.status == FAILED:
        return mss_by_id[host.mss].num_msg[host.id]
    return host.rec_seq


def check_recoverability(hosts: dict[int, HostState],
                         mss_by_id: dict[int, MssState]) -> None:
    """Assert every host's checkpoint-plus-logs cover its delivery history.

    The trace at the host's current station must point at an existing
    checkpoint, and the live entries held by log_set members must cover
    (checkpoint.rec_seq, rec_seq] with no gaps.
    """
    for host in hosts.values():
        mss = mss_by_id[host.mss]
        trace = mss.traces.get(host.id)
        if trace is None:
            raise InvariantViolation(
                f"no trace for host {host.id} at station {host.mss}")
        ckpt = _find_checkpoint(mss_by_id[trace.cp_loc], host.id, trace.cp_seq)
        if mss.num_msg.get(host.id, 0) < ckpt.rec_seq:
            raise InvariantViolation(
                f"station {mss.id} delivery counter {mss.num_msg.get(host.id)} "
                f"behind checkpoint rec_seq {ckpt.rec_seq} for host {host.id}")
        rec_seq = effective_rec_seq(host, mss_by_id)
        covered = set()
        for member in trace.log_set:
            covered.update(
                e.seq for e in mss_by_id[member].live_entries_after(host.id, ckpt.rec_seq))
        needed = set(range(ckpt.rec_seq + 1, rec_seq + 1))
        missing = needed - covered
        if missing:
            raise InvariantViolation(
                f"host {host.id}: log_set {sorted(trace.log_set)} misses "
                f"sequences {sorted(missing)} of ({ckpt.rec_seq}, {rec_seq}]")


def check_entry_uniqueness(hosts: dict[int, HostState],
                           mss_by_id: dict[int, MssState]) -> None:
    """Assert live entries per host are exactly {1..rec_seq}, no duplicates."""
    for host in hosts.values():
        rec_seq = effective_rec_seq(host, mss_by_id)
        seqs: list[int] = []
        for mss in mss_by_id.values():
            seqs.extend(e.seq for e in mss.live_entries(host.id))
        seqs.sort()
        if seqs != list(range(1, rec_seq + 1)):
            raise InvariantViolation(
                f"host {host.id}: live log sequences {seqs} are not "
                f"exactly 1..{rec_seq}")


def check_station_local(mss: MssState) -> None:
    """Station-local structural invariants."""
    overlap = mss.active_hosts & set(mss.disconnected_hosts)
    if overlap:
        raise InvariantViolation(
            f"station {mss.id}: hosts {sorted(overlap)} both active and "
            f"disconnected")
    for host_id, log in mss.app_log.items():
        for a, b in zip(log, log[1:]):
            if b.seq <= a.seq:
                raise InvariantViolation(
                    f"station {mss.id}: log for host {host_id} out of order")

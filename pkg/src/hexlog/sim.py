# Deterministic discrete-event engine: integer-tick event queue, seeded
# mobility and traffic generation, location directory, per-pair FIFO
# message routing, and failure/recovery injection.
#
# Determinism contract: all randomness flows through one splitmix64 stream
# consumed in a fixed order (per tick, per host id), so a (config, seed)
# pair fully determines the event trace. The threshold k steers only where
# recovery data is stored, never what is delivered or when, so traces are
# identical across k for a fixed seed.
from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass

from . import protocol
from .metrics import (
    DEFAULT_WEIGHTS,
    CostWeights,
    MetricsAccumulator,
    MetricsReport,
    storage_units,
)
from .protocol import (
    CONNECTED,
    DISCONNECTED,
    FAILED,
    AppState,
    HostState,
    InvariantViolation,
    MssState,
    ProtocolError,
)
from .topology import Grid, build_distance_table, build_grid, neighbors

log = logging.getLogger("hexlog.sim")

GENERATOR_NAME = "splitmix64"

K_INF = math.inf

# Event kinds.
SEND = "send"
DELIVER = "deliver"
MOVE = "move"
CHECKPOINT = "checkpoint"
FAIL = "fail"
RECOVER = "recover"
DISCONNECT = "disconnect"
RECONNECT = "reconnect"

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 PRNG: 64-bit state, trivially portable, fully documented.

    randrange uses modulo reduction; the bias is irrelevant at the tiny
    ranges drawn here and keeps the draw a single next() call.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def randrange(self, n: int) -> int:
        return self.next_u64() % n


@dataclass(frozen=True)
class ScenarioConfig:
    grid_radius: int = 2
    num_hosts: int = 2
    k: float = 2                       # hop threshold; math.inf disables moves
    checkpoint_interval_ticks: int = 50
    msg_rate: float = 0.1              # per host per tick send probability
    move_prob: float = 0.05
    disconnect_prob: float = 0.0
    reconnect_delay_ticks: int = 10
    failure_times: tuple[tuple[int, int], ...] = ()   # (tick, host)
    failure_rate: float = 0.0
    repair_delay_ticks: int = 5
    run_length_ticks: int = 200
    rng_seed: int = 0
    weights: CostWeights = DEFAULT_WEIGHTS

    def __post_init__(self):
        if self.grid_radius < 0:
            raise ValueError("grid_radius must be >= 0")
        if self.num_hosts < 1:
            raise ValueError("num_hosts must be >= 1")
        if not (self.k == K_INF or (self.k >= 0 and self.k == int(self.k))):
            raise ValueError("k must be a non-negative integer or INF")
        for name in ("msg_rate", "move_prob", "disconnect_prob", "failure_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.run_length_ticks <= 0:
            raise ValueError("run_length_ticks must be > 0")
        if self.checkpoint_interval_ticks < 1:
            raise ValueError("checkpoint_interval_ticks must be >= 1")
        if self.reconnect_delay_ticks < 1 or self.repair_delay_ticks < 1:
            raise ValueError("reconnect/repair delays must be >= 1")
        for t, h in self.failure_times:
            if not 0 <= t < self.run_length_ticks:
                raise ValueError(f"failure time {t} outside run")
            if not 0 <= h < self.num_hosts:
                raise ValueError(f"failure host {h} does not exist")


@dataclass
class SimEvent:
    time: int
    seqno: int
    kind: str
    host: int | None = None
    src: int | None = None
    dst: int | None = None
    target_cell: object = None
    payload: bytes | None = None
    stamp: int | None = None
    sender: int | None = None

    def __str__(self) -> str:
        parts = [f"t={self.time}", self.kind]
        for name in ("host", "src", "dst", "stamp"):
            v = getattr(self, name)
            if v is not None:
                parts.append(f"{name}={v}")
        return " ".join(parts)


@dataclass
class RecoveryOutcome:
    """One failure's oracle material: pre-failure snapshot vs restored state."""

    host: int
    fail_time: int
    recover_time: int
    snapshot_state: AppState
    snapshot_rec_seq: int
    restored_state: AppState
    restored_rec_seq: int
    report: object


class World:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.grid: Grid = build_grid(config.grid_radius)
        self.dt = build_distance_table(self.grid)
        self.rng = SplitMix64(config.rng_seed)
        self.now = 0

        self.mss: dict[int, MssState] = {
            mid: MssState(id=mid, cell=cell)
            for mid, cell in self.grid.cell_of_mss.items()
        }
        self.hosts: dict[int, HostState] = {}
        for hid in range(config.num_hosts):
            cell = self.grid.cells[self.rng.randrange(len(self.grid))]
            self.hosts[hid] = protocol.register_host(hid, cell, self.mss[self.grid.mss_of_cell[cell]])

        # one checkpoint phase draw per host, in id order
        self.ckpt_phase = {
            hid: self.rng.randrange(config.checkpoint_interval_ticks)
            for hid in range(config.num_hosts)
        }

        self._heap: list[tuple[int, int, SimEvent]] = []
        self._next_seqno = 0
        self._next_stamp = 0
        self.journal: list[dict] = [
            {"kind": "register", "t": 0, "host": hid, "mss": host.mss}
            for hid, host in self.hosts.items()
        ]
        self.deferred: dict[int, deque] = {}          # messages for failed hosts
        self._last_arrival: dict[tuple[int, int], int] = {}
        self._last_delivered: dict[tuple[int, int], int] = {}
        self.metrics = MetricsAccumulator()
        self.recovery_outcomes: list[RecoveryOutcome] = []
        self._prefail: dict[int, tuple[AppState, int]] = {}

    # -- scheduling ----------------------------------------------------

    def schedule(self, event: SimEvent) -> None:
        event.seqno = self._next_seqno
        self._next_seqno += 1
        heapq.heappush(self._heap, (event.time, event.seqno, event))

    def _generate_tick(self, t: int) -> None:
        cfg = self.config
        for hid in range(cfg.num_hosts):
            if t % cfg.checkpoint_interval_ticks == self.ckpt_phase[hid]:
                self.schedule(SimEvent(t, 0, CHECKPOINT, host=hid))
        for ft, fh in cfg.failure_times:
            if ft == t:
                self.schedule(SimEvent(t, 0, FAIL, host=fh))
        for hid in range(cfg.num_hosts):
            host = self.hosts[hid]
            move_u = self.rng.uniform()
            disc_u = self.rng.uniform()
            fail_u = self.rng.uniform()
            send_u = self.rng.uniform()
            if move_u < cfg.move_prob:
                nbrs = neighbors(host.cell, self.grid)
                if nbrs:
                    target = nbrs[self.rng.randrange(len(nbrs))]
                    self.schedule(SimEvent(t, 0, MOVE, host=hid, target_cell=target))
            if disc_u < cfg.disconnect_prob:
                self.schedule(SimEvent(t, 0, DISCONNECT, host=hid))
            if fail_u < cfg.failure_rate:
                self.schedule(SimEvent(t, 0, FAIL, host=hid))
            if send_u < cfg.msg_rate and cfg.num_hosts > 1:
                pick = self.rng.randrange(cfg.num_hosts - 1)
                dst = pick if pick < hid else pick + 1
                self.schedule(SimEvent(t, 0, SEND, src=hid, dst=dst))

    # -- delivery path -------------------------------------------------

    def _deliver_or_hold(self, t: int, dst: int, payload: bytes, sender: int,
                         stamp: int) -> None:
        """Route to the destination's current station; deliver, buffer, or defer."""
        host = self.hosts[dst]
        station = self.mss[host.mss]
        if host.status == CONNECTED:
            entry = protocol.deliver_and_log(station, host, payload, sender)
            self._note_delivered(t, host, entry, stamp, station.id)
        elif host.status == DISCONNECTED:
            protocol.buffer_message(station, dst, payload, sender, tag=stamp)
        else:
            self.deferred.setdefault(dst, deque()).append((payload, sender, stamp))

    def _note_delivered(self, t: int, host: HostState, entry, stamp: int,
                        station_id: int) -> None:
        pair = (entry.sender, host.id)
        last = self._last_delivered.get(pair, -1)
        if stamp <= last:
            raise InvariantViolation(
                f"FIFO violated for pair {pair}: stamp {stamp} after {last}")
        self._last_delivered[pair] = stamp
        self.journal.append({
            "kind": "deliver", "t": t, "host": host.id, "seq": entry.seq,
            "sender": entry.sender, "payload": entry.payload,
            "mss": station_id, "stamp": stamp,
        })

    # -- event handlers ------------------------------------------------

    def _step(self, ev: SimEvent) -> None:
        t = ev.time
        cfg = self.config
        if ev.kind == SEND:
            src = self.hosts[ev.src]
            if src.status != CONNECTED:
                return
            dst = self.hosts[ev.dst]
            stamp = self._next_stamp
            self._next_stamp += 1
            payload = f"m{stamp}:{ev.src}>{ev.dst}".encode()
            # wired hops at send-time positions, plus the wireless last hop
            arrival = t + self.dt(src.mss, dst.mss) + 1
            pair = (ev.src, ev.dst)
            arrival = max(arrival, self._last_arrival.get(pair, 0))
            self._last_arrival[pair] = arrival
            self.journal.append({"kind": "send", "t": t, "src": ev.src,
                                 "dst": ev.dst, "stamp": stamp,
                                 "arrival": arrival})
            self.schedule(SimEvent(arrival, 0, DELIVER, dst=ev.dst,
                                   payload=payload, stamp=stamp, sender=ev.src))
        elif ev.kind == DELIVER:
            self._deliver_or_hold(t, ev.dst, ev.payload, ev.sender, ev.stamp)
        elif ev.kind == MOVE:
            host = self.hosts[ev.host]
            if host.status == FAILED:
                return
            if host.status == DISCONNECTED:
                host.cell = ev.target_cell    # carried while asleep
                return
            old = self.mss[host.mss]
            new = self.mss[self.grid.mss_of_cell[ev.target_cell]]
            host.cell = ev.target_cell
            report = protocol.handoff(host, old, new, cfg.k, self.dt, self.mss,
                                      weights=cfg.weights, now=t)
            self.metrics.record_transfer(report)
            self.journal.append({"kind": "handoff", "t": t, "host": host.id,
                                 "old": old.id, "new": new.id,
                                 "transfer": report})
        elif ev.kind == CHECKPOINT:
            host = self.hosts[ev.host]
            if host.status != CONNECTED:
                return
            ckpt = protocol.take_checkpoint(host, self.mss[host.mss])
            self.metrics.record_checkpoint()
            self.journal.append({"kind": "checkpoint", "t": t, "host": host.id,
                                 "cp_seq": ckpt.cp_seq, "rec_seq": ckpt.rec_seq,
                                 "mss": host.mss})
        elif ev.kind == DISCONNECT:
            host = self.hosts[ev.host]
            if host.status != CONNECTED:
                return
            protocol.disconnect(host, self.mss[host.mss])
            self.journal.append({"kind": "disconnect", "t": t, "host": host.id,
                                 "mss": host.mss, "r": host.rec_seq})
            self.schedule(SimEvent(t + cfg.reconnect_delay_ticks, 0, RECONNECT,
                                   host=ev.host))
        elif ev.kind == RECONNECT:
            host = self.hosts[ev.host]
            if host.status != DISCONNECTED:
                raise InvariantViolation(
                    f"reconnect for host {host.id} in state {host.status}",
                    event=ev)
            prev = self.mss[host.mss]
            station = self.mss[self.grid.mss_of_cell[host.cell]]
            delivered, report = protocol.reconnect(
                host, station, prev, k=cfg.k, dt=self.dt, all_mss=self.mss,
                weights=cfg.weights, now=t)
            self.journal.append({"kind": "reconnect", "t": t, "host": host.id,
                                 "mss": prev.id, "drained": len(delivered)})
            for entry, stamp in delivered:
                self._note_delivered(t, host, entry, stamp, prev.id)
            if report is not None:
                self.metrics.record_transfer(report)
                self.journal.append({"kind": "handoff", "t": t, "host": host.id,
                                     "old": prev.id, "new": station.id,
                                     "transfer": report})
        elif ev.kind == FAIL:
            host = self.hosts[ev.host]
            if host.status == FAILED:
                return
            if host.status == DISCONNECTED:
                # a sleeping host cannot crash here; retry once it wakes
                if t + 1 < cfg.run_length_ticks:
                    self.schedule(SimEvent(t + 1, 0, FAIL, host=ev.host))
                return
            self._prefail[host.id] = (host.app_state, host.rec_seq)
            protocol.fail(host)
            self.journal.append({"kind": "fail", "t": t, "host": host.id,
                                 "mss": host.mss})
            self.schedule(SimEvent(t + cfg.repair_delay_ticks, 0, RECOVER,
                                   host=ev.host))
        elif ev.kind == RECOVER:
            host = self.hosts[ev.host]
            if host.status != FAILED:
                raise InvariantViolation(
                    f"recover for host {host.id} in state {host.status}",
                    event=ev)
            snap_state, snap_rec = self._prefail.pop(host.id)
            station = self.mss[host.mss]
            fail_time = t - cfg.repair_delay_ticks
            trace = station.traces[host.id]
            _, report = protocol.recover_host(host, station, self.mss, self.dt,
                                              weights=cfg.weights,
                                              fail_time=fail_time)
            self.metrics.record_recovery(report)
            self.recovery_outcomes.append(RecoveryOutcome(
                host=host.id, fail_time=fail_time, recover_time=t,
                snapshot_state=snap_state, snapshot_rec_seq=snap_rec,
                restored_state=host.app_state, restored_rec_seq=host.rec_seq,
                report=report))
            self.journal.append({"kind": "recover", "t": t, "host": host.id,
                                 "mss": station.id, "cp_seq": trace.cp_seq,
                                 "entries_replayed": report.entries_replayed,
                                 "replay_from": host.rec_seq - report.entries_replayed + 1,
                                 "replay_to": host.rec_seq,
                                 "recovery": report})
            held = self.deferred.pop(host.id, None)
            while held:
                payload, sender, stamp = held.popleft()
                self._deliver_or_hold(t, host.id, payload, sender, stamp)
        else:
            raise InvariantViolation(f"unknown event kind {ev.kind}", event=ev)

    # -- sampling and accounting ----------------------------------------

    def _sample_tick(self) -> None:
        for host in self.hosts.values():
            trace = self.mss[host.mss].traces[host.id]
            self.metrics.sample_logset_size(len(trace.log_set))
        for station in self.mss.values():
            units = storage_units(
                len(station.traces),
                sum(len(v) for v in station.checkpoints.values()),
                sum(len(v) for v in station.app_log.values()),
                self.config.weights)
            self.metrics.sample_storage_units(units)

    def check_invariants(self) -> None:
        protocol.check_recoverability(self.hosts, self.mss)
        for station in self.mss.values():
            protocol.check_station_local(station)

    def delivery_trace(self) -> list[tuple]:
        """The behavioral trace: every delivery with its time and place."""
        return [
            (r["t"], r["host"], r["seq"], r["sender"], r["payload"], r["mss"], r["stamp"])
            for r in self.journal if r["kind"] == "deliver"
        ]

    def message_accounting(self) -> dict[str, set[int]]:
        """Stamp sets for the conservation check: nothing is silently lost."""
        sent = {r["stamp"] for r in self.journal if r["kind"] == "send"}
        delivered = {r["stamp"] for r in self.journal if r["kind"] == "deliver"}
        buffered = {
            tag
            for station in self.mss.values()
            for q in station.pending.values()
            for (_, _, tag) in q
        }
        deferred = {stamp for q in self.deferred.values() for (_, _, stamp) in q}
        inflight = {ev.stamp for (_, _, ev) in self._heap if ev.kind == DELIVER}
        return {"sent": sent, "delivered": delivered, "buffered": buffered,
                "deferred": deferred, "inflight": inflight}


def snapshot_for_oracle(world: World, host_id: int) -> AppState:
    """Copy of a host's live state; AppState is immutable, so this is deep."""
    return world.hosts[host_id].app_state


def run(config: ScenarioConfig, *, check_invariants: bool = False,
        ) -> tuple[World, MetricsReport]:
    """Run a scenario to completion.

    Identical configs produce identical worlds and reports, bit for bit.
    With check_invariants the recoverability sweep runs after every event
    (slow; meant for verification runs).
    """
    world = World(config)
    try:
        for t in range(config.run_length_ticks):
            world.now = t
            world._generate_tick(t)
            heap = world._heap
            while heap and heap[0][0] == t:
                _, _, ev = heapq.heappop(heap)
                world._step(ev)
                if check_invariants:
                    world.check_invariants()
            world._sample_tick()
        # repairs scheduled past the horizon still complete; everything else
        # stays queued so the message accounting can see it
        leftovers = []
        while world._heap:
            item = heapq.heappop(world._heap)
            t, _, ev = item
            if ev.kind != RECOVER:
                leftovers.append(item)
                continue
            world.now = t
            world._step(ev)
            if check_invariants:
                world.check_invariants()
        for item in leftovers:
            heapq.heappush(world._heap, item)
    except InvariantViolation:
        raise
    except ProtocolError as exc:
        raise InvariantViolation(f"{exc} at tick {world.now}") from exc
    report = world.metrics.finalize(
        k=config.k, seed=config.rng_seed, ticks=config.run_length_ticks,
        hosts=config.num_hosts, grid_radius=config.grid_radius,
        generator=GENERATOR_NAME)
    log.info("run complete: %s", report)
    return world, report

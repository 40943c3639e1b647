# Cost accounting: per-handoff transfer reports, per-failure recovery
# reports, and per-run aggregates.
#
# Cost model: hop distance times payload weight. Weights are configurable;
# the protocol itself only argues costs qualitatively, so the concrete
# formula is an accounting convention, not a correctness claim.
from __future__ import annotations

from dataclasses import dataclass, field

KIND_TRACE_ONLY = "trace-only"
KIND_CONSOLIDATING = "consolidating"


@dataclass(frozen=True)
class CostWeights:
    """Relative size of the three kinds of recovery data moved over the wire."""

    trace: int = 1
    checkpoint: int = 50
    entry: int = 5


DEFAULT_WEIGHTS = CostWeights()


@dataclass(frozen=True)
class TransferReport:
    """One handoff's movement of recovery information.

    hop_distance is the distance the transferred data travelled: old-to-new
    station for a trace-only handoff, checkpoint-location-to-new station
    (the threshold-triggering distance) for a consolidating one.
    """

    host: int
    handoff_time: int
    kind: str
    hop_distance: int
    checkpoint_units: int
    log_entries_moved: int
    cost: int

    @staticmethod
    def build(host: int, handoff_time: int, kind: str, hop_distance: int,
              checkpoint_units: int, log_entries_moved: int,
              weights: CostWeights = DEFAULT_WEIGHTS) -> "TransferReport":
        cost = hop_distance * (
            weights.trace
            + weights.checkpoint * checkpoint_units
            + weights.entry * log_entries_moved
        )
        return TransferReport(host, handoff_time, kind, hop_distance,
                              checkpoint_units, log_entries_moved, cost)


@dataclass(frozen=True)
class RecoveryReport:
    """One failed host's fetch-and-replay accounting.

    cost = checkpoint weight * checkpoint_fetch_hops plus, per log-holding
    station, entry weight * hops * entries fetched from that station.
    """

    host: int
    fail_time: int
    checkpoint_fetch_hops: int
    log_fetch_hops_total: int
    entries_replayed: int
    cost: int


@dataclass(frozen=True)
class MetricsReport:
    """Per-run aggregates plus the scenario echo."""

    k: float
    seed: int
    ticks: int
    hosts: int
    grid_radius: int
    generator: str
    handoffs_total: int
    handoffs_consolidating: int
    transfer_cost: int
    checkpoints_total: int
    recoveries: int
    recovery_cost_total: int
    recovery_entries_replayed: int
    logset_size_mean: float
    logset_size_max: int
    storage_units_max: int


class MetricsAccumulator:
    """Pure sums and maxima over reports arriving in event order."""

    def __init__(self) -> None:
        self.handoffs_total = 0
        self.handoffs_consolidating = 0
        self.transfer_cost = 0
        self.checkpoints_total = 0
        self.recoveries = 0
        self.recovery_cost_total = 0
        self.recovery_entries_replayed = 0
        self._logset_sum = 0
        self._logset_samples = 0
        self.logset_size_max = 0
        self.storage_units_max = 0

    def record_transfer(self, report: TransferReport) -> None:
        self.handoffs_total += 1
        if report.kind == KIND_CONSOLIDATING:
            self.handoffs_consolidating += 1
        self.transfer_cost += report.cost

    def record_recovery(self, report: RecoveryReport) -> None:
        self.recoveries += 1
        self.recovery_cost_total += report.cost
        self.recovery_entries_replayed += report.entries_replayed

    def record_checkpoint(self) -> None:
        self.checkpoints_total += 1

    def sample_logset_size(self, size: int) -> None:
        self._logset_sum += size
        self._logset_samples += 1
        if size > self.logset_size_max:
            self.logset_size_max = size

    def sample_storage_units(self, units: int) -> None:
        if units > self.storage_units_max:
            self.storage_units_max = units

    def finalize(self, *, k: float, seed: int, ticks: int, hosts: int,
                 grid_radius: int, generator: str) -> MetricsReport:
        mean = self._logset_sum / self._logset_samples if self._logset_samples else 0.0
        return MetricsReport(
            k=k,
            seed=seed,
            ticks=ticks,
            hosts=hosts,
            grid_radius=grid_radius,
            generator=generator,
            handoffs_total=self.handoffs_total,
            handoffs_consolidating=self.handoffs_consolidating,
            transfer_cost=self.transfer_cost,
            checkpoints_total=self.checkpoints_total,
            recoveries=self.recoveries,
            recovery_cost_total=self.recovery_cost_total,
            recovery_entries_replayed=self.recovery_entries_replayed,
            logset_size_mean=mean,
            logset_size_max=self.logset_size_max,
            storage_units_max=self.storage_units_max,
        )


def storage_units(num_traces: int, num_checkpoints: int, num_live_entries: int,
                  weights: CostWeights = DEFAULT_WEIGHTS) -> int:
    """Stable-storage occupancy of one station, in cost-weight units."""
    return (weights.trace * num_traces
            + weights.checkpoint * num_checkpoints
            + weights.entry * num_live_entries)

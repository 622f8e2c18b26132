"""Shared run state: registries, metrics sink, event log, run knobs.

Entities reach each other's bookkeeping through this context; all access
happens inside event handlers on the single engine thread.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .engine import Engine
from .radio import RadioCalibration, TddConfig, DEFAULT_CALIBRATION, DL_CENTRIC
from .topology import Topology


def quantize_milli(value: float) -> float:
    """Fixed-point milliunit rounding, the wire resolution for KPIs."""
    return round(value * 1000) / 1000.0


class MetricsSink:
    """Append-only (time_us, entity, metric, value) records."""

    def __init__(self):
        self.rows: list[tuple[int, str, str, float]] = []

    def add(self, time_us: int, entity: str, metric: str, value: float) -> None:
        self.rows.append((time_us, entity, metric, value))


class EventLog:
    def __init__(self):
        self.lines: list[str] = []

    def log(self, time_us: int, entity: str, kind: str, detail: str = "") -> None:
        suffix = f" {detail}" if detail else ""
        self.lines.append(f"{time_us} {entity} {kind}{suffix}")


@dataclass
class RunConfig:
    """Scenario-level knobs with their documented defaults."""

    bandwidth_mhz: float = 40.0
    tdd: TddConfig = field(default_factory=lambda: DL_CENTRIC)
    calibration: RadioCalibration = DEFAULT_CALIBRATION
    report_period_us: int = 100_000
    e2_start_us: int = 100_000
    e2_retry_interval_us: int = 2_000_000
    e2_retries: int = 3
    control_timeout_us: int = 1_000_000
    deploy_delay_us: int = 50_000
    f1_timeout_us: int = 2_000_000
    f1_retry_interval_us: int = 2_000_000
    attach_signaling_messages: int = 6
    sliced_amf: bool = False
    twin_enabled: bool = False
    twin_transport_factor: float = 1.0
    twin_window: int = 50
    twin_optimize_interval_us: int = 0  # 0: share optimization loop disabled


@dataclass
class SliceRuntime:
    """Registry entry for one network slice and its dedicated functions."""

    name: str
    index: int
    sst: int
    sd: int
    share: float
    min_share: float = 0.0
    qos_label: str = ""
    state: str = "defined"  # defined | deploying | ready | failed
    cu_up: str | None = None
    smf: str | None = None
    upf: str | None = None
    amf: str | None = None  # set only when per-slice AMFs are enabled
    bytes_dl: float = 0.0
    bytes_ul: float = 0.0

    def functions_deployed(self) -> bool:
        return self.cu_up is not None and self.smf is not None and self.upf is not None


@dataclass
class UeRuntime:
    """Mirror of a UE's externally visible state for registries/KPIs."""

    name: str
    index: int
    serving_du: str
    allowed_slices: list[str] = field(default_factory=list)
    slice_name: str | None = None
    state: str = "Idle"  # Idle | RrcConnected | Registered | SessionActive
    connected: bool = False
    session_active: bool = False
    cu_up: str | None = None
    tunnel_id: int | None = None
    data_path: tuple[str, ...] = ()


@dataclass
class AttachRecord:
    ue: str
    slice_name: str
    outcome: str  # SessionActive | SliceUnavailable | RegistrationRejected
    requested_at: int
    completed_at: int
    signaling_path: tuple[str, ...] = ()
    data_path: tuple[str, ...] = ()


@dataclass
class FaultRecord:
    ue: str
    kind: str  # radio_drop | throughput_degradation
    at_us: int
    until_us: int
    factor: float
    expected_kinds: tuple[str, ...] = ()


@dataclass
class Anomaly:
    detected_at: int
    ue: str
    kind: str  # ConnectivityDrop | KpiOutlier | TwinDivergence
    score: float


@dataclass
class SimContext:
    engine: Engine
    topology: Topology
    metrics: MetricsSink = field(default_factory=MetricsSink)
    eventlog: EventLog = field(default_factory=EventLog)
    config: RunConfig = field(default_factory=RunConfig)
    slices: dict[str, SliceRuntime] = field(default_factory=dict)
    ues: dict[str, UeRuntime] = field(default_factory=dict)
    attach_records: list[AttachRecord] = field(default_factory=list)
    faults: list[FaultRecord] = field(default_factory=list)
    anomalies: list[Anomaly] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    notes: dict[str, Any] = field(default_factory=dict)

    def log(self, entity: str, kind: str, detail: str = "") -> None:
        self.eventlog.log(self.engine.clock, entity, kind, detail)

    def metric(self, time_us: int, entity: str, metric: str, value: float) -> None:
        self.metrics.add(time_us, entity, metric, value)

    def slice_by_index(self, index: int) -> SliceRuntime | None:
        for s in self.slices.values():
            if s.index == index:
                return s
        return None

    def ue_by_index(self, index: int) -> UeRuntime | None:
        for u in self.ues.values():
            if u.index == index:
                return u
        return None

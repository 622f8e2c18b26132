"""Digital-twin xApp: state mirroring, prediction, anomaly detection,
and radio-share optimization.

The twin mirrors cell/UE state from E2 indications and predicts the next
KPI report by running the same radio allocation model the DU uses. Three
statistical detectors (pluggable behind one interface) flag connectivity
drops, KPI outliers, and twin/plant divergence. Detector arithmetic is
plain sums over the sample window so that an offline re-scan of the
persisted KPI log reproduces every score bit-for-bit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from . import messages as m
from .context import Anomaly, quantize_milli
from .radio import SliceShare, allocate_prb_quotas, largest_remainder_round, water_fill
from .ric import KpiSample, Ric, XApp

WINDOW_SIZE = 50
CONSECUTIVE_HITS = 3
Z_THRESHOLD = 3.0
Z_STD_FLOOR = 1e-3
DIVERGENCE_THRESHOLD = 0.20
DIVERGENCE_EPS_MBPS = 1.0
ACTIVITY_FLOOR_MBPS = 1.0
SUPPRESS_US = 1_000_000


class StaleTwin(Exception):
    pass


def window_stats(values) -> tuple[float, float]:
    """Mean and population std with plain left-to-right summation."""
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def window_median(values) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


@dataclass
class TwinUe:
    name: str
    slice_name: str | None = None
    connected: bool = False
    session_active: bool = False
    demand_estimate: float = 0.0
    predicted_next: float | None = None
    window: deque = field(default_factory=lambda: deque(maxlen=WINDOW_SIZE))
    run_connectivity: int = 0
    run_outlier: int = 0
    run_divergence: int = 0
    last_fire: dict = field(default_factory=dict)


@dataclass
class TwinCell:
    """Mirrored cell configuration (pushed at twin bootstrap)."""

    dl_capacity_mbps: float
    total_prbs: int
    transport_factor: float = 1.0


@dataclass
class TwinState:
    cell: TwinCell
    shares: dict[str, float] = field(default_factory=dict)
    ues: dict[str, TwinUe] = field(default_factory=dict)
    last_sync: int = 0
    report_period_us: int = 100_000


def predict_ue_throughput(twin: TwinState) -> dict[str, float]:
    """Per-UE one-step-ahead DL prediction via the shared radio model.

    Slice demand is the sum of the connected UEs' window-max estimates;
    slice PRBs come from the same work-conserving allocator as the DU and
    are water-filled across a slice's UEs.
    """
    cell = twin.cell
    prb_value = cell.dl_capacity_mbps / cell.total_prbs
    eff = prb_value * cell.transport_factor
    out = {name: 0.0 for name in twin.ues}
    share_list = [SliceShare(name, s) for name, s in twin.shares.items() if s > 0]
    if not share_list:
        return out
    slice_demand: dict[str, float] = {}
    slice_ues: dict[str, list[TwinUe]] = {}
    for ue in twin.ues.values():
        if not ue.connected or not ue.session_active or ue.slice_name is None:
            continue
        slice_demand[ue.slice_name] = slice_demand.get(ue.slice_name, 0.0) + ue.demand_estimate / eff
        slice_ues.setdefault(ue.slice_name, []).append(ue)
    if not slice_demand:
        return out
    quotas = allocate_prb_quotas(share_list, slice_demand, cell.total_prbs)
    total_quota = sum(quotas.values())
    target = min(cell.total_prbs, int(math.ceil(total_quota - 1e-9)))
    prbs = largest_remainder_round(quotas, target)
    for name, ues in slice_ues.items():
        demands = {u.name: u.demand_estimate / eff for u in ues}
        weights = {u.name: 1.0 for u in ues}
        split = water_fill(float(prbs.get(name, 0)), demands, weights)
        for u in ues:
            out[u.name] = quantize_milli(split[u.name] * eff)
    return out


def twin_predict(twin: TwinState, horizon_us: int, now: int | None = None) -> dict[str, float]:
    """Public prediction op with the staleness guard."""
    if horizon_us < 0:
        raise ValueError("horizon must be non-negative")
    if now is not None and now - twin.last_sync > 5 * twin.report_period_us:
        raise StaleTwin(f"last sync {twin.last_sync}us, now {now}us")
    return predict_ue_throughput(twin)


@dataclass
class DetectorOutcome:
    anomalies: list[Anomaly] = field(default_factory=list)


class StatisticalDetectors:
    """Connectivity / z-score / divergence detectors over one UE sample.

    Pluggable: anything with the same check() contract can replace this
    (e.g. a learned model) without touching the twin workflow.
    """

    def check(self, ue: TwinUe, at: int, dl: float, connected: bool,
              session_active: bool) -> list[tuple[str, float]]:
        fired = []
        # (a) connectivity: radio gone while the session should be active
        if session_active and not connected:
            ue.run_connectivity += 1
        else:
            ue.run_connectivity = 0
        if ue.run_connectivity >= CONSECUTIVE_HITS:
            fired.append(("ConnectivityDrop", float(ue.run_connectivity)))
        # (b) KPI outlier vs the UE's own history (history excludes this sample;
        # the median gate keeps ramp-up from zero from arming the detector)
        window = list(ue.window)
        if window and window_median(window) > ACTIVITY_FLOOR_MBPS:
            mean, std = window_stats(window)
            z = abs(dl - mean) / max(std, Z_STD_FLOOR)
            if z > Z_THRESHOLD:
                ue.run_outlier += 1
            else:
                ue.run_outlier = 0
            if ue.run_outlier >= CONSECUTIVE_HITS:
                fired.append(("KpiOutlier", z))
        else:
            ue.run_outlier = 0
        # (c) divergence from the twin's one-step-ahead prediction
        if ue.predicted_next is not None and connected and session_active:
            rel = abs(dl - ue.predicted_next) / max(ue.predicted_next, DIVERGENCE_EPS_MBPS)
            if rel > DIVERGENCE_THRESHOLD:
                ue.run_divergence += 1
            else:
                ue.run_divergence = 0
            if ue.run_divergence >= CONSECUTIVE_HITS:
                fired.append(("TwinDivergence", rel))
        else:
            ue.run_divergence = 0
        return fired


class TwinXapp(XApp):
    """RIC-resident digital twin driving closed-loop anomaly detection."""

    xapp_id = "digital_twin"

    def __init__(self, ric: Ric, cell: TwinCell, report_period_us: int,
                 detectors: StatisticalDetectors | None = None):
        super().__init__(ric)
        self.twin = TwinState(cell=cell, report_period_us=report_period_us)
        self.detectors = detectors or StatisticalDetectors()
        self._pending: dict[str, dict] = {}

    # -- sync ---------------------------------------------------------------

    def on_indication(self, sample: KpiSample) -> None:
        if sample.scope_kind != "ue":
            return
        slot = self._pending.setdefault(sample.scope, {"at": sample.at})
        slot[sample.metric] = sample.value
        slot["at"] = sample.at

    def on_indication_batch_end(self, node: str, at: int) -> None:
        for ue_name, slot in self._pending.items():
            self._sync_ue(ue_name, slot)
        self._pending.clear()
        self.twin.last_sync = at
        predictions = predict_ue_throughput(self.twin)
        for ue_name, value in predictions.items():
            ue = self.twin.ues[ue_name]
            ue.predicted_next = value
            self.ctx.metric(at, ue_name, "predicted_dl_mbps", value)

    def _sync_ue(self, ue_name: str, slot: dict) -> None:
        at = slot["at"]
        dl = slot.get("dl_throughput_mbps", 0.0)
        connected = slot.get("connected", 0.0) >= 0.5
        session_active = slot.get("session_active", 0.0) >= 0.5
        ue = self.twin.ues.get(ue_name)
        if ue is None:
            ue = TwinUe(name=ue_name)
            rt = self.ctx.ues.get(ue_name)
            ue.slice_name = rt.slice_name if rt is not None else None
            self.twin.ues[ue_name] = ue
        for kind, score in self.detectors.check(ue, at, dl, connected, session_active):
            self._emit(ue, at, kind, score)
        # absorb the sample after detection so history stays one step behind
        ue.window.append(dl)
        ue.connected = connected
        ue.session_active = session_active
        ue.demand_estimate = max(ue.window) if ue.window else 0.0

    def _emit(self, ue: TwinUe, at: int, kind: str, score: float) -> None:
        last = ue.last_fire.get(kind)
        if last is not None and at - last < SUPPRESS_US:
            return
        ue.last_fire[kind] = at
        anomaly = Anomaly(detected_at=at, ue=ue.name, kind=kind, score=quantize_milli(score))
        self.ctx.anomalies.append(anomaly)
        self.ctx.log("ric", "anomaly", f"{ue.name} {kind} score={anomaly.score:g}")

    # -- bus ------------------------------------------------------------------

    def on_bus(self, msg: m.RicBusMessage) -> None:
        if msg.topic == "slice_shares":
            self.twin.shares = dict(msg.body.get("shares", {}))
            for ue in self.twin.ues.values():
                rt = self.ctx.ues.get(ue.name)
                if rt is not None and rt.slice_name:
                    ue.slice_name = rt.slice_name


# --- share optimization ----------------------------------------------------------


def _share_grid(n: int, units: int, min_units: list[int]):
    """All compositions of `units` into n positive parts >= per-slice minimum."""
    def rec(i: int, remaining: int, prefix: tuple[int, ...]):
        if i == n - 1:
            if remaining >= min_units[i]:
                yield prefix + (remaining,)
            return
        upper = remaining - sum(min_units[i + 1 :])
        for k in range(min_units[i], upper + 1):
            yield from rec(i + 1, remaining - k, prefix + (k,))
    yield from rec(0, units, ())


def optimize_shares(
    demands: dict[str, float],
    capacity_mbps: float,
    total_prbs: int,
    minimums: dict[str, float] | None = None,
    granularity: float = 0.05,
    transport_factor: float = 1.0,
) -> dict[str, float]:
    """Exhaustive grid search for the share vector maximizing satisfied demand.

    Objective: sum of min(demand, guaranteed slice throughput) where the
    guarantee is the hard largest-remainder PRB partition at that share
    vector. Ties prefer the most balanced vector (lexicographically
    smallest after sorting shares descending), then the smallest raw
    vector, so results are unique and deterministic.
    """
    if not demands:
        raise ValueError("at least one slice required")
    names = list(demands)
    units = round(1.0 / granularity)
    minimums = minimums or {}
    min_units = [max(1, math.ceil(minimums.get(n, 0.0) * units - 1e-9)) for n in names]
    if sum(min_units) > units:
        raise ValueError("minimum shares exceed the budget")
    if len(names) == 1:
        return {names[0]: 1.0}
    best_key = None
    best_vec = None
    best_obj = -1.0
    for vec in _share_grid(len(names), units, min_units):
        quotas = {n: (k / units) * total_prbs for n, k in zip(names, vec)}
        prbs = largest_remainder_round(quotas, total_prbs)
        obj = sum(
            min(demands[n], (prbs[n] / total_prbs) * capacity_mbps * transport_factor)
            for n in names
        )
        key = (tuple(sorted(vec, reverse=True)), vec)
        if obj > best_obj + 1e-9 or (abs(obj - best_obj) <= 1e-9 and (best_key is None or key < best_key)):
            best_obj = obj
            best_key = key
            best_vec = vec
    return {n: k / units for n, k in zip(names, best_vec)}

"""Scenario execution: build entities, drive the run, persist artifacts.

run() produces an output directory with metrics.csv, anomalies.csv,
events.log, and summary.json (plus trace.log when tracing is on). All
outputs are byte-deterministic for a fixed (scenario, seed).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from . import messages as m
from .context import (
    FaultRecord,
    RunConfig,
    SimContext,
    SliceRuntime,
    UeRuntime,
    quantize_milli,
)
from .core5g import Amf, ServerHost, SliceSpec
from .engine import Engine, Entity, SECOND
from .radio import Direction, RadioCalibration, TddConfig, calibrate
from .ran import Cell, CuCp, Du, FluidFlow, Ru, Ue
from .ric import Ric, SliceManagerXapp
from .scenario import Scenario, effective_nodes, parse_file, validate
from .topology import NodeKind, PROFILE_PRESETS, StackProfile, Topology
from .twin import TwinCell, TwinXapp

EXPECTED_KINDS = {
    "radio_drop": ("ConnectivityDrop", "KpiOutlier"),
    "throughput_degradation": ("KpiOutlier", "TwinDivergence"),
}
FAULT_MATCH_GRACE_US = 2_000_000


class MetricsSampler(Entity):
    """Periodic per-flow throughput rows from the DU's fluid counters."""

    def __init__(self, entity_id: str, ctx: SimContext, dus: list[Du], period_us: int):
        super().__init__(entity_id)
        self.ctx = ctx
        self.dus = dus
        self.period_us = period_us
        self._prev: dict[str, float] = {}

    def handle(self, msg) -> None:
        now = self.engine.clock
        for du in self.dus:
            du.cell.integrate(now)
            for flow in du.cell.flows.values():
                delta = flow.delivered_bits - self._prev.get(flow.flow_id, 0.0)
                self._prev[flow.flow_id] = flow.delivered_bits
                if flow.started_at is None:
                    continue
                mbps = quantize_milli(delta / self.period_us)
                self.ctx.metric(now, flow.flow_id, "flow_throughput_mbps", mbps)
        self.engine.schedule_in(self.period_us, self.entity_id, ("sample",))


class Sim:
    """A built simulation: engine, entities, context, scenario."""

    def __init__(self, scenario: Scenario):
        problems = validate(scenario)
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))
        self.scenario = scenario
        self.engine = Engine(seed=scenario.seed)
        role_overrides = {
            role: (
                spec.get("latency_us", 0),
                spec.get("jitter_us", 0),
            )
            for role, spec in scenario.link_roles.items()
        }
        topology = Topology(role_overrides=role_overrides or None)
        self.ctx = SimContext(engine=self.engine, topology=topology)
        self._build()

    # -- construction ---------------------------------------------------------

    def _profile(self, name: str) -> StackProfile:
        if name in self.scenario.profiles:
            p = self.scenario.profiles[name]
            from .topology import E2Quirk

            return StackProfile(
                name=name,
                dl_cap_mbps=p.dl_cap_mbps,
                ul_cap_mbps=p.ul_cap_mbps,
                proc_delay_us=p.proc_delay_us,
                e2_quirk=E2Quirk(p.e2_quirk),
            )
        return PROFILE_PRESETS[name]

    def _build(self) -> None:
        sc = self.scenario
        ctx = self.ctx
        cal_kwargs = dict(sc.calibration)
        base = calibrate()
        cal = RadioCalibration(
            dl_spectral_eff=cal_kwargs.get("dl_spectral_eff", base.dl_spectral_eff),
            ul_spectral_eff=cal_kwargs.get("ul_spectral_eff", base.ul_spectral_eff),
            udp_over_tcp_factor=cal_kwargs.get("udp_over_tcp_factor", base.udp_over_tcp_factor),
        )
        all_udp = bool(sc.traffic) and all(
            f.kind == "udp_cbr" for f in sc.traffic if f.kind != "ping"
        ) and any(f.kind == "udp_cbr" for f in sc.traffic)
        transport_factor = (
            sc.twin_transport_factor
            if sc.twin_transport_factor is not None
            else (cal.udp_over_tcp_factor if all_udp else 1.0)
        )
        ctx.config = RunConfig(
            bandwidth_mhz=sc.bandwidth_mhz,
            tdd=TddConfig(**sc.tdd),
            calibration=cal,
            report_period_us=sc.report_period_us,
            e2_start_us=round(sc.e2_start_s * SECOND),
            sliced_amf=sc.sliced_amf,
            twin_enabled="digital_twin" in sc.xapps,
            twin_transport_factor=transport_factor,
        )

        # static nodes
        nodes = effective_nodes(sc)
        kind_ids: dict[NodeKind, list[str]] = {}
        for n in nodes:
            kind = NodeKind(n.kind)
            ctx.topology.add_node(n.id, kind, self._profile(n.profile))
            kind_ids.setdefault(kind, []).append(n.id)
        self.du_ids = kind_ids.get(NodeKind.DU, [])
        self.cu_cp_id = (kind_ids.get(NodeKind.CU_CP) or [None])[0]
        self.amf_id = (kind_ids.get(NodeKind.AMF) or [None])[0]
        self.server_id = (kind_ids.get(NodeKind.SERVER) or [None])[0]
        ctx.notes["amf_id"] = self.amf_id
        ctx.notes["cu_cp_id"] = self.cu_cp_id

        # default links: chain RU-DU-CU_CP, CU_CP-AMF, RIC later
        explicit = {frozenset((l.a, l.b)) for l in sc.links}

        def ensure_link(a, b, latency=None, jitter=None):
            if a and b and frozenset((a, b)) not in explicit:
                ctx.topology.add_link(a, b, latency, jitter)

        ru_ids = kind_ids.get(NodeKind.RU, [])
        for i, du_id in enumerate(self.du_ids):
            ru = ru_ids[min(i, len(ru_ids) - 1)] if ru_ids else None
            if ru:
                ensure_link(ru, du_id)
            ensure_link(du_id, self.cu_cp_id)
        ensure_link(self.cu_cp_id, self.amf_id)

        # entities
        self.entities: dict[str, Entity] = {}
        for n in nodes:
            kind = NodeKind(n.kind)
            profile = self._profile(n.profile)
            if kind is NodeKind.RU:
                ent = Ru(n.id, ctx, profile)
            elif kind is NodeKind.DU:
                ent = Du(n.id, ctx, profile, cu_cp=self.cu_cp_id, index=self.du_ids.index(n.id))
            elif kind is NodeKind.CU_CP:
                ent = CuCp(n.id, ctx, profile, amf=self.amf_id)
            elif kind is NodeKind.AMF:
                ent = Amf(n.id, ctx, profile)
            elif kind is NodeKind.SERVER:
                ent = ServerHost(n.id, ctx, profile)
            else:
                continue
            self.engine.register(ent)
            self.entities[n.id] = ent

        # explicit links after nodes exist
        for l in sc.links:
            ctx.topology.add_link(l.a, l.b, l.latency_us, l.jitter_us)

        # slices
        for i, s in enumerate(sc.slices):
            spec = SliceSpec(s.name, s.sst, s.sd, s.radio_share, s.min_share, s.qos_label)
            spec.validate()
            ctx.slices[s.name] = SliceRuntime(
                name=s.name, index=i, sst=s.sst, sd=s.sd,
                share=s.radio_share, min_share=s.min_share, qos_label=s.qos_label,
            )

        # UEs
        amf_entity = self.entities.get(self.amf_id)
        for i, sub in enumerate(sc.subscribers):
            du_id = sub.du or (self.du_ids[0] if self.du_ids else None)
            ctx.ues[sub.ue] = UeRuntime(
                name=sub.ue, index=i, serving_du=du_id,
                allowed_slices=list(sub.allowed_slices),
            )
            ue = Ue(sub.ue, ctx)
            self.engine.register(ue)
            self.entities[sub.ue] = ue
            ctx.topology.add_node(sub.ue, NodeKind.UE)
            ru = None
            for node_id, info in ctx.topology.nodes.items():
                if info.kind is NodeKind.RU and ctx.topology.has_link(node_id, du_id):
                    ru = node_id
                    break
            if ru:
                ctx.topology.add_link(sub.ue, ru)
            if amf_entity is not None:
                amf_entity.subscribers[sub.ue] = list(sub.allowed_slices)

        # RIC and xApps
        self.ric = Ric("ric", ctx)
        self.engine.register(self.ric)
        ctx.topology.add_node("ric", NodeKind.RIC)
        for du_id in self.du_ids:
            ctx.topology.add_link("ric", du_id)
            self.ric.auto_subscribe_nodes.add(du_id)
        if self.amf_id:
            ctx.topology.add_link("ric", self.amf_id)
        if self.cu_cp_id:
            ctx.topology.add_link("ric", self.cu_cp_id)
        main_du = self.du_ids[0] if self.du_ids else None
        self.slice_manager = SliceManagerXapp(self.ric, self.cu_cp_id, self.amf_id, main_du)
        self.ric.add_xapp(self.slice_manager)
        self.twin = None
        if ctx.config.twin_enabled and main_du:
            du = self.entities[main_du]
            cell = TwinCell(
                dl_capacity_mbps=du.cell.capacity[Direction.DL],
                total_prbs=du.cell.total_prbs,
                transport_factor=ctx.config.twin_transport_factor,
            )
            self.twin = TwinXapp(self.ric, cell, ctx.config.report_period_us)
            self.ric.add_xapp(self.twin)

        # fluid flows registered at the DU; pings live on the UE
        self.ping_flows: list = []
        for f in sc.traffic:
            ue_name = f.src if f.src in ctx.ues else f.dst
            ue_rt = ctx.ues[ue_name]
            du = self.entities[ue_rt.serving_du]
            if f.kind == "ping":
                self.ping_flows.append(f)
                continue
            direction = Direction.DL if f.dst == ue_name else Direction.UL
            du.cell.flows[f.id] = FluidFlow(
                flow_id=f.id, ue=ue_name, slice_name="", direction=direction,
                kind=f.kind, rate_mbps=f.rate_mbps,
            )

        self._schedule_timeline()

    def _schedule_timeline(self) -> None:
        sc = self.scenario
        eng = self.engine
        ctx = self.ctx
        for n in effective_nodes(sc):
            if not n.start_offline:
                eng.schedule(0, n.id, m.NodeBoot())
        eng.schedule(ctx.config.e2_start_us, "ric", m.NodeBoot())

        sampler = MetricsSampler("metrics-sampler", ctx,
                                 [self.entities[d] for d in self.du_ids], ctx.config.report_period_us)
        eng.register(sampler)
        eng.schedule(ctx.config.report_period_us, "metrics-sampler", ("sample",))

        for f in sc.traffic:
            ue_name = f.src if f.src in ctx.ues else f.dst
            start_us = round(f.start_s * SECOND)
            stop_us = round(f.stop_s * SECOND) if f.stop_s is not None else sc.duration_us
            if f.kind == "ping":
                ue = self.entities[ue_name]
                eng.schedule(start_us, ue_name, ("start_ping", f.id,
                                                 round(f.interval_ms * 1000), f.count,
                                                 f.size_bytes, stop_us))
            else:
                du_id = ctx.ues[ue_name].serving_du
                eng.schedule(start_us, du_id, m.FlowStart(f.id))
                eng.schedule(stop_us, du_id, m.FlowStop(f.id))

        for e in sc.events:
            at = round(e.at_s * SECOND)
            if e.action == "create_slice":
                eng.schedule(at, "ric", m.RicBusMessage("cmd:create_slice", {"slice": e.slice}))
            elif e.action == "attach":
                eng.schedule(at, e.ue, m.AttachCommand(e.ue, e.slice))
            elif e.action == "detach":
                eng.schedule(at, e.ue, m.DetachCommand(e.ue))
            elif e.action == "set_shares":
                eng.schedule(at, "ric", m.RicBusMessage("cmd:set_shares", {"shares": dict(e.shares)}))
            elif e.action == "node_online":
                eng.schedule(at, e.node, m.NodeOnline())
            elif e.action == "node_offline":
                eng.schedule(at, e.node, m.NodeOffline())
            elif e.action == "inject_fault":
                if e.kind == "e2_control_blackhole":
                    eng.schedule(at, e.node, m.FaultStart("", e.kind, 0, 0.0))
                    continue
                until = at + round(e.duration_s * SECOND)
                du_id = ctx.ues[e.ue].serving_du
                eng.schedule(at, du_id, m.FaultStart(e.ue, e.kind, until, e.factor))
                eng.schedule(until, du_id, m.FaultEnd(e.ue, e.kind))
                ctx.faults.append(FaultRecord(
                    ue=e.ue, kind=e.kind, at_us=at, until_us=until, factor=e.factor,
                    expected_kinds=EXPECTED_KINDS.get(e.kind, ()),
                ))

    # -- run --------------------------------------------------------------------

    def run(self) -> dict:
        duration = self.scenario.duration_us
        summary = self.engine.run_until(duration)
        for du_id in self.du_ids:
            self.entities[du_id].cell.integrate(duration)
        return self._summarize(summary)

    # -- summary -------------------------------------------------------------------

    def _summarize(self, engine_summary) -> dict:
        sc = self.scenario
        ctx = self.ctx
        flows: dict[str, dict] = {}
        for du_id in self.du_ids:
            cell: Cell = self.entities[du_id].cell
            for flow in cell.flows.values():
                start = flow.started_at
                stop = flow.stopped_at if flow.stopped_at is not None else sc.duration_us
                span = (stop - start) if start is not None else 0
                flows[flow.flow_id] = {
                    "kind": flow.kind,
                    "ue": flow.ue,
                    "slice": flow.slice_name,
                    "direction": flow.direction.value,
                    "offered_mbit": quantize_milli(flow.offered_bits / 1e6),
                    "delivered_mbit": quantize_milli(flow.delivered_bits / 1e6),
                    "dropped_mbit": quantize_milli(flow.dropped_bits / 1e6),
                    "mean_mbps": quantize_milli(flow.delivered_bits / span) if span else 0.0,
                }
        for f in self.ping_flows:
            rtts = [v for (t, e, metric, v) in ctx.metrics.rows
                    if e == f.id and metric == "rtt_ms"]
            flows[f.id] = {
                "kind": "ping",
                "ue": f.src if f.src in ctx.ues else f.dst,
                "sent": ctx.counters.get(f"ping_sent:{f.id}", 0),
                "received": ctx.counters.get(f"ping_received:{f.id}", 0),
                "rtt_ms_mean": quantize_milli(sum(rtts) / len(rtts)) if rtts else None,
                "rtt_ms_p95": quantize_milli(_p95(rtts)) if rtts else None,
            }

        measurements = {}
        for w in sc.measure:
            measurements[w.name] = window_mean(
                ctx.metrics.rows, w.entity, w.metric,
                round(w.from_s * SECOND), round(w.to_s * SECOND),
            )

        slices = {}
        for s in ctx.slices.values():
            slices[s.name] = {
                "state": s.state,
                "share": s.share,
                "cu_up": s.cu_up,
                "smf": s.smf,
                "upf": s.upf,
                "amf": s.amf,
                "bytes_dl": quantize_milli(s.bytes_dl),
                "bytes_ul": quantize_milli(s.bytes_ul),
            }

        census = self._census()
        e2_state = {
            "associations": {
                node: assoc.state.value for node, assoc in sorted(self.ric.associations.items())
            },
            "ran_functions": {
                node: list(assoc.ran_functions) for node, assoc in sorted(self.ric.associations.items())
            },
            "setup_timeouts": ctx.counters.get("e2_setup_timeouts", 0),
            "setup_retries": {
                node: ctx.counters.get(f"e2_setup_retries:{node}", 0)
                for node in sorted(self.ric.associations)
            },
            "unmatched_responses": ctx.counters.get("e2_unmatched_responses", 0),
            "subscription_failures": sorted(self.ric.subscription_failures),
            "indications": {
                node: ctx.counters.get(f"indications:{node}", 0)
                for node in sorted(self.ric.associations)
            },
        }

        anomalies_by_kind: dict[str, int] = {}
        for a in ctx.anomalies:
            anomalies_by_kind[a.kind] = anomalies_by_kind.get(a.kind, 0) + 1
        anomaly_summary = {
            "count": len(ctx.anomalies),
            "by_kind": dict(sorted(anomalies_by_kind.items())),
        }
        if ctx.faults:
            anomaly_summary["scoring"] = score_anomalies(ctx.faults, ctx.anomalies)
            anomaly_summary["ground_truth"] = [
                {
                    "ue": f.ue, "kind": f.kind, "at_us": f.at_us,
                    "until_us": f.until_us, "expected_kinds": list(f.expected_kinds),
                }
                for f in ctx.faults
            ]

        return {
            "scenario": sc.name,
            "seed": sc.seed,
            "duration_us": sc.duration_us,
            "events_processed": engine_summary.total_processed,
            "flows": dict(sorted(flows.items())),
            "slices": dict(sorted(slices.items())),
            "measurements": dict(sorted(measurements.items())),
            "census": census,
            "e2": e2_state,
            "anomalies": anomaly_summary,
            "attach": [
                {
                    "ue": r.ue, "slice": r.slice_name, "outcome": r.outcome,
                    "latency_us": r.completed_at - r.requested_at,
                    "signaling_path": list(r.signaling_path),
                    "data_path": list(r.data_path),
                }
                for r in ctx.attach_records
            ],
        }

    def _census(self) -> dict:
        from .ran import RanNodeState

        counts: dict[str, int] = {}
        for node_id, info in self.ctx.topology.nodes.items():
            ent = self.engine.entities.get(node_id)
            if ent is None or info.kind is NodeKind.UE:
                continue
            state = getattr(ent, "state", RanNodeState.OPERATIONAL)
            if state == RanNodeState.OPERATIONAL:
                counts[info.kind.value] = counts.get(info.kind.value, 0) + 1
        sessions = {}
        for rt in self.ctx.ues.values():
            sessions[rt.name] = {
                "state": rt.state,
                "slice": rt.slice_name,
                "connected": rt.connected,
                "data_path": list(rt.data_path),
            }
        return {"operational_nodes": dict(sorted(counts.items())), "ue_sessions": sessions}


def _p95(values: list[float]) -> float:
    ordered = sorted(values)
    idx = max(0, math.ceil(0.95 * len(ordered)) - 1)
    return ordered[idx]


def window_mean(rows, entity: str, metric: str, from_us: int, to_us: int) -> float | None:
    values = [v for (t, e, mname, v) in rows
              if e == entity and mname == metric and from_us < t <= to_us]
    if not values:
        return None
    return quantize_milli(sum(values) / len(values))


def score_anomalies(faults, anomalies, grace_us: int = FAULT_MATCH_GRACE_US) -> dict:
    tp = 0
    fp = 0
    matched: set[int] = set()
    for a in anomalies:
        hit = False
        for i, f in enumerate(faults):
            if (
                a.ue == f.ue
                and a.kind in f.expected_kinds
                and f.at_us <= a.detected_at <= f.until_us + grace_us
            ):
                hit = True
                matched.add(i)
        if hit:
            tp += 1
        else:
            fp += 1
    fn = len(faults) - len(matched)
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = len(matched) / len(faults) if faults else 1.0
    return {
        "injected": len(faults),
        "detections": len(anomalies),
        "true_positives": tp,
        "false_positives": fp,
        "missed_faults": fn,
        "precision": round(precision, 6),
        "recall": round(recall, 6),
    }


def run(
    scenario: Scenario | str | Path,
    out_dir: str | Path,
    seed: int | None = None,
    trace: bool = False,
) -> dict:
    """Execute a scenario and write the artifact set into out_dir."""
    if not isinstance(scenario, Scenario):
        scenario = parse_file(scenario)
    if seed is not None:
        scenario.seed = seed
    sim = Sim(scenario)
    trace_lines: list[str] = []
    if trace:
        sim.engine.trace_hook = lambda t, target, kind: trace_lines.append(
            f"{t} {target} {kind}"
        )
    summary = sim.run()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write("time_us,entity,metric,value\n")
        for t, entity, metric, value in sim.ctx.metrics.rows:
            fh.write(f"{t},{entity},{metric},{_fmt(value)}\n")
    with open(out / "anomalies.csv", "w", newline="") as fh:
        fh.write("time_us,ue,kind,score\n")
        for a in sim.ctx.anomalies:
            fh.write(f"{a.detected_at},{a.ue},{a.kind},{_fmt(a.score)}\n")
    with open(out / "events.log", "w") as fh:
        for line in sim.ctx.eventlog.lines:
            fh.write(line + "\n")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if trace:
        with open(out / "trace.log", "w") as fh:
            for line in trace_lines:
                fh.write(line + "\n")
    return summary


def _fmt(value: float) -> str:
    if value == int(value):
        return str(int(value))
    return repr(value)

"""RAN node entities: RU, DU, CU-CP, CU-UP, and the UE.

The DU owns the cell: a fluid-flow model of the shared radio resource.
Bulk traffic is integrated piecewise-constant between state changes
(flow start/stop, share updates, faults) instead of per-packet, which
keeps desk-scale runs fast while staying exact for steady-state rates.
Signaling and pings are real per-hop messages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import e2 as wire
from . import messages as m
from .context import AttachRecord, SimContext, quantize_milli
from .engine import Entity
from .radio import (
    Direction,
    SliceShare,
    allocate_prb_quotas,
    largest_remainder_round,
    link_capacity,
    total_prb_count,
    water_fill,
    SLOT_US,
)
from .topology import E2Quirk, NodeKind, Packet, StackProfile


class RanNodeState:
    OFFLINE = "Offline"
    CONNECTING = "Connecting"
    OPERATIONAL = "Operational"


class F1SetupFailure(Exception):
    pass


class DuplicateUserPlane(Exception):
    pass


class RanNode(Entity):
    """Common state and packet forwarding for RAN boxes."""

    kind: NodeKind = NodeKind.RU

    def __init__(self, entity_id: str, ctx: SimContext, profile: StackProfile | None = None):
        super().__init__(entity_id)
        self.ctx = ctx
        self.profile = profile or StackProfile()
        self.state = RanNodeState.OFFLINE

    # -- packet walking -------------------------------------------------

    def forward_packet(self, pkt: Packet) -> None:
        nxt = pkt.next_hop()
        delay = self.ctx.topology.hop_delay_us(
            self.entity_id, nxt, self._link_rng(self.entity_id, nxt)
        )
        self.engine.send(
            nxt,
            Packet(
                pkt.flow_id, pkt.kind, pkt.seq, pkt.path, pkt.hop + 1,
                pkt.sent_at, pkt.size_bytes, pkt.ue, pkt.slice_name,
                pkt.tunnel_id, pkt.meta,
            ),
            delay=delay,
        )

    def _link_rng(self, a: str, b: str):
        link = self.ctx.topology.link(a, b)
        if link.jitter_us:
            return self.engine.rng(f"jitter:{min(a, b)}-{max(a, b)}")
        return None

    def handle(self, msg) -> None:
        if isinstance(msg, Packet):
            self.on_packet(msg)
        elif isinstance(msg, m.NodeBoot):
            self.on_boot()
        elif isinstance(msg, m.NodeOnline):
            self.on_boot()
        elif isinstance(msg, m.NodeOffline):
            self.state = RanNodeState.OFFLINE
            self.ctx.log(self.entity_id, "node_offline")
        else:
            self.on_message(msg)

    def on_packet(self, pkt: Packet) -> None:
        self.forward_packet(pkt)

    def on_boot(self) -> None:
        self.state = RanNodeState.OPERATIONAL
        self.ctx.log(self.entity_id, "node_operational")

    def on_message(self, msg) -> None:
        raise NotImplementedError(f"{self.entity_id}: unhandled {type(msg).__name__}")


class Ru(RanNode):
    """Pass-through latency element; the only proprietary box."""

    kind = NodeKind.RU


@dataclass
class FluidFlow:
    flow_id: str
    ue: str
    slice_name: str
    direction: Direction
    kind: str  # udp_cbr | tcp_fullbuffer
    rate_mbps: float = 0.0
    active: bool = False
    waiting: bool = False  # start reached but session not yet up
    started_at: int | None = None
    stopped_at: int | None = None
    delivered_bits: float = 0.0
    offered_bits: float = 0.0
    dropped_bits: float = 0.0


@dataclass
class ActiveFault:
    kind: str
    until_us: int
    factor: float


class Cell:
    """Fluid radio resource model for one DU."""

    def __init__(self, ctx: SimContext, du_id: str, profile: StackProfile):
        self.ctx = ctx
        self.du_id = du_id
        cfg = ctx.config
        self.total_prbs = total_prb_count(cfg.bandwidth_mhz)
        caps = {}
        for direction in (Direction.DL, Direction.UL):
            cap = link_capacity(cfg.bandwidth_mhz, direction, cfg.tdd, cfg.calibration)
            limit = profile.dl_cap_mbps if direction is Direction.DL else profile.ul_cap_mbps
            if limit is not None:
                cap = min(cap, limit)
            caps[direction] = cap
        self.capacity = caps
        self.udp_factor = cfg.calibration.udp_over_tcp_factor
        self.shares: dict[str, float] = {}
        self.flows: dict[str, FluidFlow] = {}
        self.faults: dict[str, ActiveFault] = {}
        self.last_t = 0
        self._rates: dict | None = None
        # cumulative delivered bits per aggregation level
        self.ue_bits = {Direction.DL: {}, Direction.UL: {}}
        self.slice_bits = {Direction.DL: {}, Direction.UL: {}}
        self.cell_bits = {Direction.DL: 0.0, Direction.UL: 0.0}

    # -- state changes ----------------------------------------------------

    def touch(self, now: int) -> None:
        self.integrate(now)
        self._rates = None

    def set_shares(self, shares: dict[str, float], now: int) -> None:
        self.touch(now)
        self.shares = dict(shares)

    def set_fault(self, ue: str, fault: ActiveFault | None, now: int) -> None:
        self.touch(now)
        if fault is None:
            self.faults.pop(ue, None)
        else:
            self.faults[ue] = fault

    # -- rate computation ---------------------------------------------------

    def rates(self) -> dict:
        if self._rates is None:
            self._rates = self._compute_rates()
        return self._rates

    def _compute_rates(self) -> dict:
        out = {"flow": {}, "prbs": {}}
        share_list = [SliceShare(name, s) for name, s in self.shares.items() if s > 0]
        for direction in (Direction.DL, Direction.UL):
            cap = self.capacity[direction]
            prb_value = cap / self.total_prbs
            slice_demand: dict[str, float] = {}
            slice_flows: dict[str, list[FluidFlow]] = {}
            for flow in self.flows.values():
                if not flow.active or flow.direction is not direction:
                    continue
                fault = self.faults.get(flow.ue)
                if fault is not None and fault.kind == "radio_drop":
                    out["flow"][flow.flow_id] = 0.0
                    continue
                eff = prb_value * (self.udp_factor if flow.kind == "udp_cbr" else 1.0)
                demand = math.inf if flow.kind == "tcp_fullbuffer" else flow.rate_mbps / eff
                slice_demand[flow.slice_name] = slice_demand.get(flow.slice_name, 0.0) + demand
                slice_flows.setdefault(flow.slice_name, []).append(flow)
            prbs: dict[str, int] = {name: 0 for name in self.shares}
            if share_list and slice_demand:
                quotas = allocate_prb_quotas(share_list, slice_demand, self.total_prbs)
                total_quota = sum(quotas.values())
                target = min(self.total_prbs, int(math.ceil(total_quota - 1e-9)))
                prbs.update(largest_remainder_round(quotas, target))
            out["prbs"][direction] = prbs
            for name, flows in slice_flows.items():
                effs, demands, weights = {}, {}, {}
                for flow in flows:
                    eff = prb_value * (self.udp_factor if flow.kind == "udp_cbr" else 1.0)
                    effs[flow.flow_id] = eff
                    demands[flow.flow_id] = (
                        math.inf if flow.kind == "tcp_fullbuffer" else flow.rate_mbps / eff
                    )
                    weights[flow.flow_id] = 1.0
                split = water_fill(float(prbs.get(name, 0)), demands, weights)
                for flow in flows:
                    fault = self.faults.get(flow.ue)
                    factor = (
                        fault.factor
                        if fault is not None and fault.kind == "throughput_degradation"
                        else 1.0
                    )
                    out["flow"][flow.flow_id] = split[flow.flow_id] * effs[flow.flow_id] * factor
        return out

    # -- integration ----------------------------------------------------------

    def integrate(self, now: int) -> None:
        dt = now - self.last_t
        if dt <= 0:
            return
        rates = self.rates()
        for flow in self.flows.values():
            if not flow.active:
                continue
            served = rates["flow"].get(flow.flow_id, 0.0)
            bits = served * dt  # Mbps x us == bits
            flow.delivered_bits += bits
            if flow.kind == "udp_cbr":
                offered = flow.rate_mbps * dt
                flow.offered_bits += offered
                flow.dropped_bits += max(0.0, offered - bits)
            else:
                flow.offered_bits += bits
            per_dir = self.ue_bits[flow.direction]
            per_dir[flow.ue] = per_dir.get(flow.ue, 0.0) + bits
            per_slice = self.slice_bits[flow.direction]
            per_slice[flow.slice_name] = per_slice.get(flow.slice_name, 0.0) + bits
            self.cell_bits[flow.direction] += bits
            slice_rt = self.ctx.slices.get(flow.slice_name)
            if slice_rt is not None:
                if flow.direction is Direction.DL:
                    slice_rt.bytes_dl += bits / 8.0
                else:
                    slice_rt.bytes_ul += bits / 8.0
                self._credit_path(slice_rt, bits)
        self.last_t = now

    def _credit_path(self, slice_rt, bits: float) -> None:
        for node_id in (slice_rt.cu_up, slice_rt.upf):
            if node_id is None:
                continue
            node = self.ctx.engine.entities.get(node_id)
            if node is not None and hasattr(node, "slice_bytes"):
                node.slice_bytes[slice_rt.name] = (
                    node.slice_bytes.get(slice_rt.name, 0.0) + bits / 8.0
                )


@dataclass
class Subscription:
    sub_id: int
    ric: str
    function_id: int
    period_us: int
    prev_ue_bits: dict = field(default_factory=dict)
    prev_slice_bits: dict = field(default_factory=dict)
    prev_cell_bits: dict = field(default_factory=dict)


class Du(RanNode):
    """Distributed unit: F1 client, E2 endpoint, cell scheduler, telemetry."""

    kind = NodeKind.DU

    def __init__(self, entity_id, ctx, profile=None, cu_cp: str | None = None, index: int = 0):
        super().__init__(entity_id, ctx, profile)
        self.cu_cp = cu_cp
        self.index = index
        self.cell = Cell(ctx, entity_id, self.profile)
        self.subscriptions: dict[int, Subscription] = {}
        self.control_blackhole = False
        self._sub_seq = 0
        self._txn = 0
        self._f1_txn = 0
        self._f1_pending: int | None = None

    # -- lifecycle / F1 -----------------------------------------------------

    def on_boot(self) -> None:
        if self.state == RanNodeState.OPERATIONAL:
            return
        self.state = RanNodeState.CONNECTING
        self._start_f1()

    def _start_f1(self) -> None:
        if self.cu_cp is None:
            self.state = RanNodeState.OPERATIONAL
            self.ctx.log(self.entity_id, "node_operational", "no CU-CP configured")
            return
        self._f1_txn += 1
        txn = self._f1_txn
        self._f1_pending = txn
        delay = self.ctx.topology.hop_delay_us(self.entity_id, self.cu_cp)
        self.engine.send(self.cu_cp, m.F1SetupRequest(du=self.entity_id, txn=txn), delay=delay)
        self.engine.schedule_in(self.ctx.config.f1_timeout_us, self.entity_id, m.F1Timeout(txn))
        self.ctx.log(self.entity_id, "f1_setup_request", f"txn={txn}")

    def on_message(self, msg) -> None:
        if isinstance(msg, m.F1SetupResponse):
            if msg.txn == self._f1_pending:
                self._f1_pending = None
                self.state = RanNodeState.OPERATIONAL
                self.ctx.log(self.entity_id, "f1_setup_complete", f"cu_cp={msg.cu_cp}")
        elif isinstance(msg, m.F1Timeout):
            if msg.txn == self._f1_pending:
                self._f1_pending = None
                self.state = RanNodeState.OFFLINE
                self.ctx.log(self.entity_id, "f1_setup_failure", "timeout")
                self.ctx.counters["f1_setup_failures"] += 1
                self.engine.schedule_in(
                    self.ctx.config.f1_retry_interval_us, self.entity_id, m.NodeBoot()
                )
        elif isinstance(msg, m.RrcSetup):
            self._on_rrc_setup(msg)
        elif isinstance(msg, m.SessionUp):
            self._activate_waiting_flows(msg.ue)
        elif isinstance(msg, m.UeDetached):
            self._quiesce_ue_flows(msg.ue)
        elif isinstance(msg, m.FlowStart):
            self._on_flow_start(msg.flow_id)
        elif isinstance(msg, m.FlowStop):
            self._on_flow_stop(msg.flow_id)
        elif isinstance(msg, m.FaultStart):
            self._on_fault_start(msg)
        elif isinstance(msg, m.FaultEnd):
            self._on_fault_end(msg)
        elif isinstance(msg, m.E2Bytes):
            self._on_e2(msg)
        elif isinstance(msg, m.ReportTick):
            self._on_report_tick(msg.sub_id)
        elif isinstance(msg, m.ApplyShares):
            self.cell.set_shares(dict(msg.shares), self.engine.clock)
            self.ctx.log(self.entity_id, "shares_applied",
                         " ".join(f"{k}={v:g}" for k, v in msg.shares))
        else:
            super().on_message(msg)

    # -- attach plumbing ------------------------------------------------------

    def _on_rrc_setup(self, msg: m.RrcSetup) -> None:
        ue = self.ctx.ues[msg.ue]
        ue.state = "RrcConnected"
        scale = self.ctx.config.attach_signaling_messages / 6.0
        delay = round(self.ctx.topology.hop_delay_us(self.entity_id, self.cu_cp) * scale)
        self.engine.send(
            self.cu_cp,
            m.InitialUeMessage(msg.ue, msg.slice_name, msg.requested_at),
            delay=delay,
        )

    def _activate_waiting_flows(self, ue: str) -> None:
        now = self.engine.clock
        slice_name = self.ctx.ues[ue].slice_name or ""
        for flow in self.cell.flows.values():
            if flow.ue == ue and flow.waiting:
                self.cell.touch(now)
                flow.waiting = False
                flow.active = True
                flow.slice_name = slice_name
                flow.started_at = now
                self.ctx.log(self.entity_id, "flow_started", flow.flow_id)

    def _quiesce_ue_flows(self, ue: str) -> None:
        now = self.engine.clock
        for flow in self.cell.flows.values():
            if flow.ue == ue and flow.active:
                self.cell.touch(now)
                flow.active = False
                flow.stopped_at = now

    def _on_flow_start(self, flow_id: str) -> None:
        flow = self.cell.flows[flow_id]
        ue = self.ctx.ues[flow.ue]
        if not ue.session_active:
            flow.waiting = True
            return
        self.cell.touch(self.engine.clock)
        flow.active = True
        flow.slice_name = ue.slice_name or ""
        flow.started_at = self.engine.clock
        self.ctx.log(self.entity_id, "flow_started", flow_id)

    def _on_flow_stop(self, flow_id: str) -> None:
        flow = self.cell.flows[flow_id]
        self.cell.touch(self.engine.clock)
        flow.active = False
        flow.waiting = False
        flow.stopped_at = self.engine.clock
        self.ctx.log(self.entity_id, "flow_stopped", flow_id)

    def _on_fault_start(self, msg: m.FaultStart) -> None:
        if msg.kind == "e2_control_blackhole":
            self.control_blackhole = True
            self.ctx.log(self.entity_id, "fault_start", msg.kind)
            return
        self.cell.set_fault(
            msg.ue, ActiveFault(msg.kind, msg.until_us, msg.factor), self.engine.clock
        )
        ue = self.ctx.ues[msg.ue]
        if msg.kind == "radio_drop":
            ue.connected = False
        self.ctx.log(self.entity_id, "fault_start", f"{msg.ue} {msg.kind}")

    def _on_fault_end(self, msg: m.FaultEnd) -> None:
        self.cell.set_fault(msg.ue, None, self.engine.clock)
        ue = self.ctx.ues[msg.ue]
        if msg.kind == "radio_drop" and ue.session_active:
            ue.connected = True
        self.ctx.log(self.entity_id, "fault_end", f"{msg.ue} {msg.kind}")

    # -- packets: enforce radio faults -----------------------------------------

    def on_packet(self, pkt: Packet) -> None:
        fault = self.cell.faults.get(pkt.ue)
        if fault is not None and fault.kind == "radio_drop":
            self.ctx.counters["packets_dropped_radio"] += 1
            return
        self.forward_packet(pkt)

    # -- E2 endpoint ------------------------------------------------------------

    def _send_e2(self, ric: str, msg: wire.E2Message) -> None:
        data = wire.encode(msg)
        delay = self.ctx.topology.hop_delay_us(self.entity_id, ric)
        self.engine.send(ric, m.E2Bytes(src=self.entity_id, data=data), delay=delay)

    def _on_e2(self, msg: m.E2Bytes) -> None:
        if self.profile.e2_quirk is E2Quirk.NO_DECODE:
            # models a stack that cannot parse the setup message: no reply, ever
            self.ctx.log(self.entity_id, "e2_decode_failure", "dropping message")
            self.ctx.counters["e2_decode_failures"] += 1
            return
        try:
            decoded = wire.decode(msg.data)
        except wire.DecodeError as exc:
            self.ctx.log(self.entity_id, "e2_decode_error", type(exc).__name__)
            self.ctx.counters["e2_decode_failures"] += 1
            return
        if decoded.msg_type == wire.MsgType.SETUP_REQUEST:
            self._on_e2_setup(msg.src, decoded)
        elif decoded.msg_type == wire.MsgType.SUBSCRIPTION_REQUEST:
            self._on_e2_subscribe(msg.src, decoded)
        elif decoded.msg_type == wire.MsgType.CONTROL_REQUEST:
            self._on_e2_control(msg.src, decoded)

    def _on_e2_setup(self, ric: str, req: wire.E2Message) -> None:
        if self.state != RanNodeState.OPERATIONAL:
            return  # not ready to associate; the RIC will retry
        if self.profile.e2_quirk is E2Quirk.EMPTY_IES:
            # handshake completes but every IE is left empty
            resp = wire.E2Message(wire.MsgType.SETUP_RESPONSE, req.txn_id, ies=())
        else:
            resp = wire.E2Message(
                wire.MsgType.SETUP_RESPONSE,
                req.txn_id,
                ies=(
                    wire.InformationElement(wire.IeTag.NODE_ID, self.entity_id.encode()),
                    wire.InformationElement(
                        wire.IeTag.RAN_FUNCTION_LIST,
                        wire.encode_ran_functions(wire.DEFAULT_RAN_FUNCTIONS),
                    ),
                ),
            )
        self._send_e2(ric, resp)

    def _on_e2_subscribe(self, ric: str, req: wire.E2Message) -> None:
        function_id = None
        raw = req.find(wire.IeTag.RAN_FUNCTION_LIST)
        if raw:
            functions = wire.decode_ran_functions(raw)
            function_id = functions[0] if functions else None
        period_raw = req.find(wire.IeTag.REPORT_PERIOD)
        period = wire.decode_u64(period_raw) if period_raw else 0
        if self.profile.e2_quirk is E2Quirk.EMPTY_IES or function_id not in wire.DEFAULT_RAN_FUNCTIONS:
            cause = "no-ran-function" if self.profile.e2_quirk is E2Quirk.EMPTY_IES else "unknown-function"
            self._send_e2(ric, wire.E2Message(
                wire.MsgType.FAILURE, req.txn_id,
                ies=(wire.InformationElement(wire.IeTag.CAUSE, wire.encode_cause(cause)),),
            ))
            return
        if period < wire.REPORT_PERIOD_FLOOR_US:
            self._send_e2(ric, wire.E2Message(
                wire.MsgType.FAILURE, req.txn_id,
                ies=(wire.InformationElement(wire.IeTag.CAUSE, wire.encode_cause("period-below-floor")),),
            ))
            return
        self._sub_seq += 1
        sub = Subscription(self._sub_seq, ric, function_id, period)
        self.subscriptions[sub.sub_id] = sub
        self._send_e2(ric, wire.E2Message(wire.MsgType.SUBSCRIPTION_RESPONSE, req.txn_id))
        self.engine.schedule_in(period, self.entity_id, m.ReportTick(sub.sub_id))
        self.ctx.log(self.entity_id, "subscription_active",
                     f"function={function_id} period_us={period}")

    def _on_e2_control(self, ric: str, req: wire.E2Message) -> None:
        if self.control_blackhole:
            self.ctx.log(self.entity_id, "e2_control_dropped", "blackhole fault active")
            return
        raw = req.find(wire.IeTag.CONTROL_ACTION)
        try:
            if raw is None:
                raise wire.DecodeError("missing control action IE")
            action = wire.decode_control_action(raw)
        except wire.DecodeError:
            self._send_e2(ric, wire.E2Message(
                wire.MsgType.FAILURE, req.txn_id,
                ies=(wire.InformationElement(wire.IeTag.CAUSE, wire.encode_cause("unsupported-action")),),
            ))
            return
        shares = []
        for idx, frac in action.as_fractions().items():
            slice_rt = self.ctx.slice_by_index(idx)
            if slice_rt is not None:
                shares.append((slice_rt.name, frac))
        now = self.engine.clock
        apply_at = ((now + SLOT_US - 1) // SLOT_US) * SLOT_US  # next slot boundary
        if apply_at == now:
            apply_at += SLOT_US
        self.engine.schedule(apply_at, self.entity_id, m.ApplyShares(tuple(shares)))
        self._send_e2(ric, wire.E2Message(
            wire.MsgType.CONTROL_ACK, req.txn_id,
            ies=(wire.InformationElement(wire.IeTag.APPLIED_AT, wire.encode_u64(apply_at)),),
        ))

    # -- telemetry ----------------------------------------------------------------

    def _on_report_tick(self, sub_id: int) -> None:
        sub = self.subscriptions.get(sub_id)
        if sub is None:
            return
        now = self.engine.clock
        self.cell.integrate(now)
        entries = self._collect_kpis(sub)
        self._txn += 1
        self._send_e2(sub.ric, wire.E2Message(
            wire.MsgType.INDICATION,
            self._txn,
            ies=(
                wire.InformationElement(wire.IeTag.NODE_ID, self.entity_id.encode()),
                wire.InformationElement(wire.IeTag.SAMPLE_TIME, wire.encode_u64(now)),
                wire.InformationElement(wire.IeTag.KPI_PAYLOAD, wire.encode_kpi_payload(entries)),
            ),
        ))
        self.engine.schedule_in(sub.period_us, self.entity_id, m.ReportTick(sub_id))

    def _collect_kpis(self, sub: Subscription) -> list[wire.KpiEntry]:
        period = sub.period_us
        entries: list[wire.KpiEntry] = []
        rates = self.cell.rates()

        def window_mbps(cum: dict, prev: dict, key) -> float:
            delta = cum.get(key, 0.0) - prev.get(key, 0.0)
            prev[key] = cum.get(key, 0.0)
            return delta / period  # bits over us == Mbps

        for ue in self.ctx.ues.values():
            if ue.serving_du != self.entity_id or ue.state == "Idle" and not ue.data_path:
                continue
            dl = window_mbps(self.cell.ue_bits[Direction.DL], sub.prev_ue_bits.setdefault("dl", {}), ue.name)
            ul = window_mbps(self.cell.ue_bits[Direction.UL], sub.prev_ue_bits.setdefault("ul", {}), ue.name)
            entries.append(wire.KpiEntry.of(wire.MetricId.DL_THROUGHPUT, wire.ScopeKind.UE, ue.index, dl))
            entries.append(wire.KpiEntry.of(wire.MetricId.UL_THROUGHPUT, wire.ScopeKind.UE, ue.index, ul))
            entries.append(wire.KpiEntry.of(wire.MetricId.CONNECTED, wire.ScopeKind.UE, ue.index, 1.0 if ue.connected else 0.0))
            entries.append(wire.KpiEntry.of(wire.MetricId.SESSION_ACTIVE, wire.ScopeKind.UE, ue.index, 1.0 if ue.session_active else 0.0))
        for name in self.cell.shares:
            slice_rt = self.ctx.slices.get(name)
            if slice_rt is None:
                continue
            dl = window_mbps(self.cell.slice_bits[Direction.DL], sub.prev_slice_bits.setdefault("dl", {}), name)
            ul = window_mbps(self.cell.slice_bits[Direction.UL], sub.prev_slice_bits.setdefault("ul", {}), name)
            prbs = rates["prbs"].get(Direction.DL, {}).get(name, 0)
            entries.append(wire.KpiEntry.of(wire.MetricId.DL_THROUGHPUT, wire.ScopeKind.SLICE, slice_rt.index, dl))
            entries.append(wire.KpiEntry.of(wire.MetricId.UL_THROUGHPUT, wire.ScopeKind.SLICE, slice_rt.index, ul))
            entries.append(wire.KpiEntry.of(wire.MetricId.PRB_USAGE, wire.ScopeKind.SLICE, slice_rt.index, float(prbs)))
        dl = window_mbps(self.cell.cell_bits, sub.prev_cell_bits, Direction.DL)
        ul = window_mbps(self.cell.cell_bits, sub.prev_cell_bits, Direction.UL)
        total_prbs_used = sum(rates["prbs"].get(Direction.DL, {}).values())
        entries.append(wire.KpiEntry.of(wire.MetricId.DL_THROUGHPUT, wire.ScopeKind.CELL, self.index, dl))
        entries.append(wire.KpiEntry.of(wire.MetricId.UL_THROUGHPUT, wire.ScopeKind.CELL, self.index, ul))
        entries.append(wire.KpiEntry.of(wire.MetricId.PRB_USAGE, wire.ScopeKind.CELL, self.index, float(total_prbs_used)))
        return entries


class CuCp(RanNode):
    """Central unit, control plane: F1 server, attach relay, CU-UP factory."""

    kind = NodeKind.CU_CP

    def __init__(self, entity_id, ctx, profile=None, amf: str = "amf1"):
        super().__init__(entity_id, ctx, profile)
        self.amf = amf
        self.cu_ups: dict[str, str] = {}  # slice -> cu_up id

    def on_message(self, msg) -> None:
        if isinstance(msg, m.F1SetupRequest):
            if self.state == RanNodeState.OPERATIONAL:
                delay = self.ctx.topology.hop_delay_us(self.entity_id, msg.du)
                self.engine.send(msg.du, m.F1SetupResponse(self.entity_id, msg.txn), delay=delay)
        elif isinstance(msg, m.InitialUeMessage):
            slice_rt = self.ctx.slices.get(msg.slice_name)
            amf = self.amf
            if slice_rt is not None and slice_rt.amf is not None:
                amf = slice_rt.amf
            scale = self.ctx.config.attach_signaling_messages / 6.0
            delay = round(self.ctx.topology.hop_delay_us(self.entity_id, amf) * scale)
            self.engine.send(
                amf, m.RegistrationRequest(msg.ue, msg.slice_name, msg.requested_at), delay=delay
            )
        elif isinstance(msg, m.DeployCuUp):
            self._deploy_cu_up(msg)
        elif isinstance(msg, m.TeardownFunction):
            self._teardown_cu_up(msg)
        else:
            super().on_message(msg)

    def deploy_cu_up(self, slice_name: str) -> str:
        """Create a dedicated CU-UP for a slice (E1-style association)."""
        if slice_name not in self.ctx.slices:
            raise KeyError(f"unknown slice {slice_name!r}")
        if slice_name in self.cu_ups:
            raise DuplicateUserPlane(f"slice {slice_name} already has a CU-UP")
        cu_up_id = f"cuup-{slice_name}"
        cu_up = CuUp(cu_up_id, self.ctx, slice_name=slice_name, cu_cp=self.entity_id)
        self.engine.register(cu_up)
        topo = self.ctx.topology
        topo.add_node(cu_up_id, NodeKind.CU_UP)
        for du_id, info in list(topo.nodes.items()):
            if info.kind is NodeKind.DU:
                topo.add_link(du_id, cu_up_id)
        cu_up.state = RanNodeState.OPERATIONAL
        self.cu_ups[slice_name] = cu_up_id
        self.ctx.slices[slice_name].cu_up = cu_up_id
        self.ctx.log(self.entity_id, "cu_up_deployed", f"{cu_up_id} slice={slice_name}")
        return cu_up_id

    def _deploy_cu_up(self, msg: m.DeployCuUp) -> None:
        try:
            node_id = self.deploy_cu_up(msg.slice_name)
            ack = m.DeployAck(msg.slice_name, "deploy_cu_up", node_id, True)
        except (KeyError, DuplicateUserPlane) as exc:
            ack = m.DeployAck(msg.slice_name, "deploy_cu_up", None, False, str(exc))
        delay = self.ctx.config.deploy_delay_us + self.ctx.topology.hop_delay_us(
            self.entity_id, msg.reply_to
        )
        self.engine.send(msg.reply_to, ack, delay=delay)

    def _teardown_cu_up(self, msg: m.TeardownFunction) -> None:
        slice_name = msg.slice_name
        node_id = self.cu_ups.pop(slice_name, None)
        if node_id:
            self.engine.unregister(node_id)
            self.ctx.topology.remove_node(node_id)
            if self.ctx.slices.get(slice_name):
                self.ctx.slices[slice_name].cu_up = None
            self.ctx.log(self.entity_id, "cu_up_removed", node_id)


class CuUp(RanNode):
    """Central unit, user plane: one instance per slice."""

    kind = NodeKind.CU_UP

    def __init__(self, entity_id, ctx, profile=None, slice_name: str = "", cu_cp: str = ""):
        super().__init__(entity_id, ctx, profile)
        self.slice_name = slice_name
        self.cu_cp = cu_cp
        self.slice_bytes: dict[str, float] = {}

    def on_packet(self, pkt: Packet) -> None:
        self.slice_bytes[pkt.slice_name] = (
            self.slice_bytes.get(pkt.slice_name, 0.0) + pkt.size_bytes
        )
        self.forward_packet(pkt)


class Ue(Entity):
    """User equipment: attach initiation, ping traffic, session state."""

    def __init__(self, entity_id: str, ctx: SimContext):
        super().__init__(entity_id)
        self.ctx = ctx
        self.ping_flows: dict[str, dict] = {}
        self.attach_requested_at: int | None = None

    @property
    def rt(self):
        return self.ctx.ues[self.entity_id]

    def handle(self, msg) -> None:
        if isinstance(msg, m.AttachCommand):
            self._start_attach(msg.slice_name)
        elif isinstance(msg, m.DetachCommand):
            self._detach()
        elif isinstance(msg, m.AttachAccept):
            self._on_accept(msg)
        elif isinstance(msg, m.AttachReject):
            self._on_reject(msg)
        elif isinstance(msg, m.PingTimer):
            self._on_ping_timer(msg.flow_id)
        elif isinstance(msg, Packet):
            self._on_packet(msg)
        elif isinstance(msg, tuple) and msg and msg[0] == "start_ping":
            _, flow_id, interval_us, count, size_bytes, stop_us = msg
            self.start_ping(flow_id, interval_us, count, size_bytes, stop_us)
        else:
            raise NotImplementedError(f"{self.entity_id}: unhandled {type(msg).__name__}")

    # -- attach ----------------------------------------------------------------

    def _start_attach(self, slice_name: str) -> None:
        rt = self.rt
        now = self.engine.clock
        self.attach_requested_at = now
        slice_rt = self.ctx.slices.get(slice_name)
        du = self.engine.entities.get(rt.serving_du)
        if (
            slice_rt is None
            or slice_rt.state != "ready"
            or not slice_rt.functions_deployed()
        ):
            self.ctx.attach_records.append(AttachRecord(
                self.entity_id, slice_name, "SliceUnavailable", now, now))
            self.ctx.log(self.entity_id, "attach_failed", f"{slice_name} SliceUnavailable")
            return
        if du is None or du.state != RanNodeState.OPERATIONAL:
            self.ctx.attach_records.append(AttachRecord(
                self.entity_id, slice_name, "SliceUnavailable", now, now))
            self.ctx.log(self.entity_id, "attach_failed", "DU not operational")
            return
        rt.slice_name = slice_name
        scale = self.ctx.config.attach_signaling_messages / 6.0
        path = [self.entity_id, self._ru_for(rt.serving_du), rt.serving_du]
        delay = round(self.ctx.topology.path_delay_us(path) * scale)
        self.engine.send(rt.serving_du, m.RrcSetup(self.entity_id, slice_name, now), delay=delay)
        self.ctx.log(self.entity_id, "attach_start", slice_name)

    def _ru_for(self, du_id: str) -> str:
        for node_id, info in self.ctx.topology.nodes.items():
            if info.kind is NodeKind.RU and self.ctx.topology.has_link(node_id, du_id):
                return node_id
        raise KeyError(f"no RU linked to {du_id}")

    def _on_accept(self, msg: m.AttachAccept) -> None:
        rt = self.rt
        slice_rt = self.ctx.slices[msg.slice_name]
        rt.state = "SessionActive"
        rt.session_active = True
        rt.connected = True
        rt.slice_name = msg.slice_name
        rt.cu_up = slice_rt.cu_up
        rt.tunnel_id = msg.tunnel_id
        ru = self._ru_for(rt.serving_du)
        rt.data_path = (
            self.entity_id, ru, rt.serving_du, slice_rt.cu_up, slice_rt.upf, "server"
        )
        amf = slice_rt.amf or "amf1"
        signaling = (self.entity_id, ru, rt.serving_du,
                     self._cu_cp_of(rt.serving_du), amf, slice_rt.smf, slice_rt.upf)
        now = self.engine.clock
        self.ctx.attach_records.append(AttachRecord(
            self.entity_id, msg.slice_name, "SessionActive", msg.requested_at, now,
            signaling_path=signaling, data_path=rt.data_path,
        ))
        self.ctx.log(self.entity_id, "session_active",
                     f"{msg.slice_name} latency_us={now - msg.requested_at}")
        self.engine.send(rt.serving_du, m.SessionUp(self.entity_id))

    def _cu_cp_of(self, du_id: str) -> str:
        du = self.engine.entities.get(du_id)
        return du.cu_cp if du is not None and du.cu_cp else "cucp1"

    def _on_reject(self, msg: m.AttachReject) -> None:
        now = self.engine.clock
        self.ctx.attach_records.append(AttachRecord(
            self.entity_id, msg.slice_name, msg.cause, msg.requested_at, now))
        self.ctx.log(self.entity_id, "attach_failed", f"{msg.slice_name} {msg.cause}")

    def _detach(self) -> None:
        rt = self.rt
        if not rt.session_active:
            return
        slice_rt = self.ctx.slices.get(rt.slice_name)
        if slice_rt is not None and slice_rt.upf is not None:
            self.engine.send(
                slice_rt.upf,
                m.SessionRelease(self.entity_id, rt.slice_name, rt.tunnel_id),
                delay=self.ctx.topology.path_delay_us(list(rt.data_path)[:-1]),
            )
        rt.session_active = False
        rt.connected = False
        rt.state = "Idle"
        rt.tunnel_id = None
        self.engine.send(rt.serving_du, m.UeDetached(self.entity_id))
        self.ctx.log(self.entity_id, "detached", rt.slice_name or "")

    # -- ping traffic -------------------------------------------------------------

    def start_ping(self, flow_id: str, interval_us: int, count: int, size_bytes: int, stop_us: int | None) -> None:
        self.ping_flows[flow_id] = {
            "interval": interval_us, "remaining": count, "size": size_bytes,
            "stop": stop_us, "seq": 0,
        }
        self.engine.send(self.entity_id, m.PingTimer(flow_id))

    def _on_ping_timer(self, flow_id: str) -> None:
        st = self.ping_flows.get(flow_id)
        if st is None:
            return
        now = self.engine.clock
        if st["stop"] is not None and now >= st["stop"]:
            return
        if st["remaining"] == 0:
            return
        rt = self.rt
        if rt.session_active and rt.data_path:
            st["seq"] += 1
            st["remaining"] -= 1
            pkt = Packet(
                flow_id, "ping_req", st["seq"], rt.data_path, 0, now,
                st["size"], self.entity_id, rt.slice_name or "", rt.tunnel_id or 0,
            )
            nxt = pkt.next_hop()
            delay = self.ctx.topology.proc_us(self.entity_id) + self.ctx.topology.hop_delay_us(
                self.entity_id, nxt, self._jitter_rng(nxt)
            )
            self.engine.send(nxt, Packet(
                pkt.flow_id, pkt.kind, pkt.seq, pkt.path, 1, pkt.sent_at,
                pkt.size_bytes, pkt.ue, pkt.slice_name, pkt.tunnel_id,
            ), delay=delay)
            self.ctx.counters[f"ping_sent:{flow_id}"] += 1
        self.engine.schedule_in(st["interval"], self.entity_id, m.PingTimer(flow_id))

    def _jitter_rng(self, peer: str):
        link = self.ctx.topology.link(self.entity_id, peer)
        if link.jitter_us:
            a, b = min(self.entity_id, peer), max(self.entity_id, peer)
            return self.engine.rng(f"jitter:{a}-{b}")
        return None

    def _on_packet(self, pkt: Packet) -> None:
        if pkt.kind != "ping_resp":
            return
        now = self.engine.clock
        rtt_ms = quantize_milli((now - pkt.sent_at) / 1000.0)
        self.ctx.metric(now, pkt.flow_id, "rtt_ms", rtt_ms)
        self.ctx.counters[f"ping_received:{pkt.flow_id}"] += 1


